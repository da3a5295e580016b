//! Finite-volume checks: norm inequalities, the Lieb-Robinson commutator
//! bound, energy-density convergence and the full-vs-effective dynamics
//! comparison.

use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{default_grid, evolve_block, propagate, TimeGrid};
use crate::error::{Error, Result};
use crate::fock::{FockOperator, LocalOperator, ModeSpace};
use crate::hamiltonians::{local_energy, local_energy_model, HamiltonianFamily, Schedule, TimeDependentModel};
use crate::interactions::{m_norm, Atom, Interaction, LongRangeModel};
use crate::lattice::{decay_constants, CubicBox, DecayFunction, PeriodVector};
use crate::linalg;
use crate::meanfield::{
    approximating_interaction, block_expectation, effective_matrix_element, solve_self_consistency, state_block,
    FlowTrajectory, SolverConfig,
};
use crate::states::{mix_values, product_state, CellState, LatticeState, Mixture};

/// Additive slack for the norm inequalities.
pub const NORM_SLACK: f64 = 1e-8;
/// Relative slack for the commutator bound.
pub const LR_SLACK: f64 = 1e-9;
/// Absolute round-off allowance for the commutator bound, which is zero for
/// operators with empty support.
pub const LR_ROUNDOFF: f64 = 1e-10;
const INTEGRAL_NODES: usize = 512;

/// One instance of a norm inequality `lhs ≤ rhs`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub passes: bool,
}

impl NormCheck {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        NormCheck {
            name: name.into(),
            lhs,
            rhs,
            passes: lhs <= rhs + NORM_SLACK,
        }
    }
}

/// `‖U_L^Φ‖ ≤ |Λ_L| ‖F‖₁ ‖Φ‖_W`.
pub fn check_local_energy_bound(phi: &Interaction, decay: &DecayFunction, space: &ModeSpace) -> Result<NormCheck> {
    let cube = space.cube();
    let lhs = local_energy(phi, space)?.norm();
    let rhs = cube.volume() as f64 * decay_constants(decay, cube).norm_f1 * phi.w_norm(decay, cube);
    Ok(NormCheck::new("local-energy", lhs, rhs))
}

/// `‖e_{Φ,ℓ}‖ ≤ ‖F‖₁ ‖Φ‖_W` with lattice norms.
pub fn check_energy_density_bound(
    phi: &Interaction,
    period: &PeriodVector,
    decay: &DecayFunction,
    cube: &CubicBox,
) -> Result<NormCheck> {
    let lhs = phi.energy_density(period)?.norm();
    let rhs = decay_constants(decay, cube).norm_f1 * phi.lattice_w_norm(decay)?;
    Ok(NormCheck::new("energy-density", lhs, rhs))
}

/// `‖U_L^m‖ ≤ |Λ_L| ‖F‖₁ ‖m‖_M`.
pub fn check_long_range_energy_bound(
    m: &LongRangeModel,
    decay: &DecayFunction,
    space: &ModeSpace,
) -> Result<NormCheck> {
    let cube = space.cube();
    let lhs = local_energy_model(m, space)?.op.norm();
    let rhs = cube.volume() as f64 * decay_constants(decay, cube).norm_f1 * m_norm(m, decay, cube);
    Ok(NormCheck::new("long-range-energy", lhs, rhs))
}

/// `‖Φ^(m,g)‖_W ≤ ‖m‖_M` for scalars `g` with `|g| ≤ 1`.
pub fn check_approximating_bound(
    m: &LongRangeModel,
    g: &[C64],
    decay: &DecayFunction,
    space: &ModeSpace,
) -> Result<NormCheck> {
    let eff = approximating_interaction(m, g, decay, space)?;
    Ok(NormCheck::new("approximating-interaction", eff.w_norm, eff.m_norm))
}

/// Inputs and outcome of one commutator-bound evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`; zero when the bound overflows.
    pub ratio: f64,
    pub passes: bool,
    pub support_sites: usize,
    pub a_norm: f64,
    pub phi_w_norm: f64,
    pub norm_f1: f64,
    pub const_d: f64,
    pub m_integral: f64,
    pub exponent: f64,
    pub s: f64,
    pub t: f64,
    pub steps: usize,
}

/// `‖[τ_{t,s}(A), U_L^Φ]‖ ≤ 2|Λ| ‖A‖ ‖Φ‖_W exp(16(D + 2‖F‖₁ + 1) ∫_s^t ‖m‖_M)`,
/// with `Λ` the support of `A`. Decay constants and W-norms are taken on
/// `constants_box`, normally the largest box of a sweep.
pub fn lr_bound_check(
    model: &TimeDependentModel,
    phi: &Interaction,
    a: &FockOperator,
    s: f64,
    t: f64,
    decay: &DecayFunction,
    constants_box: &CubicBox,
) -> Result<BoundReport> {
    let space = a.space();
    let fam = HamiltonianFamily::from_model(model, space)?;
    let grid = default_grid(&fam, s, t)?;
    let tau = propagate(&fam, &grid)?.heisenberg(a)?;
    let u = local_energy(phi, space)?;
    let lhs = tau.commutator(&u).norm();

    let consts = decay_constants(decay, constants_box);
    let phi_w_norm = phi.w_norm(decay, constants_box);
    let n = grid.steps.min(INTEGRAL_NODES);
    let h = (t - s) / n as f64;
    let mut m_integral = 0.0;
    for k in 0..=n {
        let x = if k == n { t } else { s + h * k as f64 };
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        m_integral += w * m_norm(&model.at(x)?, decay, constants_box);
    }
    m_integral = (m_integral * h).abs();
    let exponent = 16.0 * (consts.const_d + 2.0 * consts.norm_f1 + 1.0) * m_integral;
    let support_sites = a.support().len();
    let a_norm = a.norm();
    let rhs = 2.0 * support_sites as f64 * a_norm * phi_w_norm * exponent.exp();
    let passes = lhs <= rhs * (1.0 + LR_SLACK) + LR_ROUNDOFF;
    let ratio = if rhs.is_infinite() || rhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    };
    Ok(BoundReport {
        lhs,
        rhs,
        ratio,
        passes,
        support_sites,
        a_norm,
        phi_w_norm,
        norm_f1: consts.norm_f1,
        const_d: consts.const_d,
        m_integral,
        exponent,
        s,
        t,
        steps: grid.steps,
    })
}

/// One row of an energy-density sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityGap {
    pub l: usize,
    /// `ρ(B† U_L^Φ B) / |Λ_L|`.
    pub value: C64,
    /// `ρ(e_{Φ,ℓ}) ρ(B†B)`.
    pub reference: C64,
    pub gap: f64,
}

/// `|ρ(B† U_L^Φ B)/|Λ_L| − ρ(e_{Φ,ℓ}) ρ(B†B)|` over a sweep of boxes, for the
/// product state of `cell`.
pub fn energy_density_convergence(
    phi: &Interaction,
    cell: &CellState,
    b: &LocalOperator,
    ls: &[usize],
) -> Result<Vec<DensityGap>> {
    let e = phi.energy_density(cell.period())?;
    let reach = e
        .support()
        .sites()
        .iter()
        .flat_map(|x| x.0.iter().map(|c| c.unsigned_abs() as usize))
        .max()
        .unwrap_or(0);
    let ref_space = ModeSpace::new(CubicBox::new(phi.dim(), reach)?, phi.spins())?;
    let density = product_state(cell, &ref_space)?.expectation_local(&e.op)?;
    let mut out: Vec<DensityGap> = ls
        .par_iter()
        .map(|&l| {
            let space = ModeSpace::new(CubicBox::new(phi.dim(), l)?, phi.spins())?;
            if !space.cube().contains_set(b.sites()) {
                return Err(Error::Geometry(format!(
                    "probe support {} leaves the box L = {l}",
                    b.sites()
                )));
            }
            let rho = product_state(cell, &space)?;
            let u = local_energy(phi, &space)?;
            let bb = b.embed(&space)?;
            let value = rho.matrix_element(&u, &bb) / C64::new(space.cube().volume() as f64, 0.0);
            let reference = density * rho.matrix_element(&space.identity(), &bb);
            Ok(DensityGap {
                l,
                value,
                reference,
                gap: (value - reference).norm(),
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by_key(|g| g.l);
    Ok(out)
}

/// Monotonicity summary of a sequence of gaps.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Trend {
    pub strictly_decreasing: bool,
    pub last_below_first: bool,
}

impl Trend {
    pub fn of(values: &[f64]) -> Self {
        Trend {
            strictly_decreasing: values.windows(2).all(|w| w[1] < w[0]),
            last_below_first: values.len() >= 2 && values[values.len() - 1] < values[0],
        }
    }
}

/// Full and effective matrix elements at one box size.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceEntry {
    pub l: usize,
    pub modes: usize,
    /// `ρ(B† τ^{(L,m)}_{t,s}(A) B)`.
    pub full: C64,
    /// `ρ(B† τ^{eff}_{t,s}(A) B)`.
    pub effective: C64,
    pub gap: f64,
    pub steps: usize,
    pub seconds: f64,
}

/// Full-vs-effective comparison over a sweep of boxes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub s: f64,
    pub t: f64,
    pub box_eff: usize,
    pub flow_iterations: usize,
    pub flow_defect: f64,
    pub entries: Vec<ConvergenceEntry>,
    pub trend: Trend,
}

impl ConvergenceReport {
    pub fn gaps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.gap).collect()
    }
}

fn box_space(dim: usize, l: usize, spins: usize) -> Result<ModeSpace> {
    ModeSpace::new(CubicBox::new(dim, l)?, spins)
}

/// `ρ(B† τ_{t,s}(A) B)` under the full long-range dynamics on the state's box.
pub fn full_matrix_element(
    model: &TimeDependentModel,
    rho: &LatticeState,
    a: &FockOperator,
    b: &FockOperator,
    s: f64,
    t: f64,
) -> Result<(C64, usize)> {
    let fam = HamiltonianFamily::from_model(model, rho.space())?;
    let grid = if s == t {
        TimeGrid::new(s, t, 1)?
    } else {
        default_grid(&fam, s, t)?
    };
    let start = linalg::csr_mul_dense(&b.to_csr(), &state_block(rho.repr()));
    let end: DMatrix<C64> = evolve_block(&fam, &grid, start, |_, _, _| {});
    Ok((block_expectation(&a.to_csr(), &end), grid.steps))
}

/// Solves the flow once on `box_eff` (default: the largest box of the
/// sweep) and compares full and effective dynamics for every `L`.
#[allow(clippy::too_many_arguments)]
pub fn main_convergence(
    model: &TimeDependentModel,
    cell: &CellState,
    a: &LocalOperator,
    b: &LocalOperator,
    s: f64,
    t: f64,
    ls: &[usize],
    box_eff: Option<usize>,
    cfg: &SolverConfig,
) -> Result<ConvergenceReport> {
    let mut ls = ls.to_vec();
    ls.sort_unstable();
    ls.dedup();
    let largest = *ls.last().ok_or_else(|| Error::Invalid("empty L sweep".into()))?;
    let eff_l = box_eff.unwrap_or(largest);
    let (dim, spins) = (model.dim(), model.spins());
    let rho_eff = product_state(cell, &box_space(dim, eff_l, spins)?)?;
    let flow = solve_self_consistency(model, &rho_eff, s, t, cfg)?;
    let entries = ls
        .par_iter()
        .map(|&l| convergence_entry(model, &flow, cell, a, b, l))
        .collect::<Result<Vec<_>>>()?;
    let trend = Trend::of(&entries.iter().map(|e| e.gap).collect::<Vec<_>>());
    Ok(ConvergenceReport {
        s,
        t,
        box_eff: eff_l,
        flow_iterations: flow.iterations(),
        flow_defect: flow.final_defect,
        entries,
        trend,
    })
}

fn convergence_entry(
    model: &TimeDependentModel,
    flow: &FlowTrajectory,
    cell: &CellState,
    a: &LocalOperator,
    b: &LocalOperator,
    l: usize,
) -> Result<ConvergenceEntry> {
    let clock = Instant::now();
    let space = box_space(model.dim(), l, model.spins())?;
    for (name, op) in [("A", a), ("B", b)] {
        if !space.cube().contains_set(op.sites()) {
            return Err(Error::Geometry(format!(
                "probe {name} with support {} leaves the box L = {l}",
                op.sites()
            )));
        }
    }
    let rho = product_state(cell, &space)?;
    let (aa, bb) = (a.embed(&space)?, b.embed(&space)?);
    let (full, steps) = full_matrix_element(model, &rho, &aa, &bb, flow.s, flow.t)?;
    let effective = effective_matrix_element(flow, &rho, &aa, &bb, flow.s, flow.t)?;
    Ok(ConvergenceEntry {
        l,
        modes: space.modes(),
        full,
        effective,
        gap: (full - effective).norm(),
        steps,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

/// λ-weighted full and effective values at one box size.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixedEntry {
    pub l: usize,
    pub full: C64,
    pub effective: C64,
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixtureReport {
    pub weights: Vec<f64>,
    pub fibers: Vec<ConvergenceReport>,
    pub mixed: Vec<MixedEntry>,
    pub trend: Trend,
}

/// Per-fiber [`main_convergence`] runs combined with the mixture weights.
/// With `allow_duplicates` the components need not be distinct.
#[allow(clippy::too_many_arguments)]
pub fn mixture_convergence(
    components: &[(f64, CellState)],
    allow_duplicates: bool,
    model: &TimeDependentModel,
    a: &LocalOperator,
    b: &LocalOperator,
    s: f64,
    t: f64,
    ls: &[usize],
    box_eff: Option<usize>,
    cfg: &SolverConfig,
) -> Result<MixtureReport> {
    let largest = ls
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::Invalid("empty L sweep".into()))?;
    let check_space = box_space(model.dim(), box_eff.unwrap_or(largest), model.spins())?;
    let states = components
        .iter()
        .map(|(w, c)| Ok((*w, product_state(c, &check_space)?)))
        .collect::<Result<Vec<(f64, LatticeState)>>>()?;
    if allow_duplicates {
        Mixture::degenerate(states)?;
    } else {
        Mixture::new(states)?;
    }
    let fibers = components
        .iter()
        .map(|(_, c)| main_convergence(model, c, a, b, s, t, ls, box_eff, cfg))
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = components.iter().map(|c| c.0).collect();
    let mixed: Vec<MixedEntry> = (0..fibers[0].entries.len())
        .map(|i| {
            let full: Vec<C64> = fibers.iter().map(|f| f.entries[i].full).collect();
            let eff: Vec<C64> = fibers.iter().map(|f| f.entries[i].effective).collect();
            let (full, effective) = (mix_values(&weights, &full), mix_values(&weights, &eff));
            MixedEntry {
                l: fibers[0].entries[i].l,
                full,
                effective,
                gap: (full - effective).norm(),
            }
        })
        .collect();
    let trend = Trend::of(&mixed.iter().map(|e| e.gap).collect::<Vec<_>>());
    Ok(MixtureReport {
        weights,
        fibers,
        mixed,
        trend,
    })
}

/// Random coefficient schedule with values of modulus at most 1.5.
pub fn random_schedule<R: Rng>(rng: &mut R) -> Schedule {
    match rng.gen_range(0..3) {
        0 => Schedule::Constant {
            value: rng.gen_range(-1.0..1.0),
        },
        1 => Schedule::LinearRamp {
            from: rng.gen_range(-1.0..1.0),
            to: rng.gen_range(-1.0..1.0),
            t0: 0.0,
            t1: rng.gen_range(0.5..2.0),
        },
        _ => Schedule::Sinusoidal {
            offset: rng.gen_range(-1.0..1.0),
            amplitude: rng.gen_range(0.0..0.5),
            omega: rng.gen_range(0.0..4.0),
            phase: rng.gen_range(0.0..6.3),
        },
    }
}

/// Random self-adjoint long-range model: a random short-range part, one
/// order-1 atom with a self-adjoint factor and one order-2 atom `(Ψ, Ψ*)`.
pub fn random_long_range_model<R: Rng>(
    dim: usize,
    spins: usize,
    decay: &DecayFunction,
    rng: &mut R,
) -> Result<LongRangeModel> {
    let short = Interaction::random_ti(dim, spins, 1, rng)?;
    let single = Interaction::random_ti(dim, spins, 0, rng)?;
    let origin = crate::lattice::Site::origin(dim);
    let cell = crate::lattice::SiteSet::singleton(origin);
    let psi = Interaction::translation_invariant(dim, spins, vec![LocalOperator::random(cell, spins, true, rng)?])?;
    let atoms = vec![
        Atom::normalized(rng.gen_range(-1.0..1.0), vec![single], decay)?,
        Atom::normalized(rng.gen_range(-1.0..1.0), vec![psi.clone(), psi.involution()], decay)?,
    ];
    Ok(LongRangeModel { short, atoms })
}

/// `random_long_range_model` with random schedules on every component.
pub fn random_time_dependent_model<R: Rng>(
    dim: usize,
    spins: usize,
    decay: &DecayFunction,
    rng: &mut R,
) -> Result<TimeDependentModel> {
    let m = random_long_range_model(dim, spins, decay, rng)?;
    Ok(TimeDependentModel {
        short: vec![(m.short, random_schedule(rng))],
        atoms: m.atoms.into_iter().map(|a| (a, random_schedule(rng))).collect(),
    })
}
