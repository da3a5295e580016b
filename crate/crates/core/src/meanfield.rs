//! Mean-field self-consistency: approximating interactions, the flow of
//! energy-density expectations, and the effective short-range dynamics.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve_block, propagate, IntegratorInfo, Propagator, TimeGrid, DEFAULT_STEP_SCALE};
use crate::error::{Error, Result};
use crate::fock::{FockOperator, LocalOperator, ModeSpace};
use crate::hamiltonians::{local_energy, HamiltonianFamily, TimeDependentModel};
use crate::interactions::{m_norm, Interaction, LongRangeModel};
use crate::lattice::{DecayFunction, PeriodVector};
use crate::linalg::{self, Csr};
use crate::states::{LatticeState, StateRepr, StateTag};

const BOUND_SLACK: f64 = 1e-8;

/// `⌊g; Ψ_1,…,Ψ_n⌋ = Σ_k Ψ_k Π_{j≠k} g_j`; for `n = 1` this is `Ψ_1`.
pub fn sandwich(factors: &[Interaction], g: &[C64]) -> Result<Interaction> {
    if factors.len() != g.len() || factors.is_empty() {
        return Err(Error::Invalid("sandwich needs one scalar per factor".into()));
    }
    let mut out = Interaction::zero(factors[0].dim(), factors[0].spins());
    for (k, psi) in factors.iter().enumerate() {
        let coeff = leave_one_out(g, k);
        if coeff != C64::new(0.0, 0.0) {
            out = out.add(&psi.scale(coeff))?;
        }
    }
    Ok(out)
}

fn leave_one_out(g: &[C64], k: usize) -> C64 {
    g.iter()
        .enumerate()
        .filter(|(j, _)| *j != k)
        .fold(C64::new(1.0, 0.0), |acc, (_, v)| acc * v)
}

/// `Φ^(m,g)` at one time, with its W-norm and the bound `‖m‖_M`.
#[derive(Clone, Debug)]
pub struct EffectiveInteraction {
    pub interaction: Interaction,
    pub w_norm: f64,
    pub m_norm: f64,
}

impl EffectiveInteraction {
    pub fn within_bound(&self) -> bool {
        self.w_norm <= self.m_norm + BOUND_SLACK
    }
}

/// `Φ + Σ_atoms w ⌊g; Ψ_1,…,Ψ_n⌋` for a model evaluated at one time; `g` is
/// indexed like [`LongRangeModel::factor_slots`]. Norms are restricted to
/// `space`'s box.
pub fn approximating_interaction(
    m: &LongRangeModel,
    g: &[C64],
    decay: &DecayFunction,
    space: &ModeSpace,
) -> Result<EffectiveInteraction> {
    let slots = m.factor_slots();
    if g.len() != slots.len() {
        return Err(Error::Invalid(format!(
            "expected {} scalars, got {}",
            slots.len(),
            g.len()
        )));
    }
    let mut phi = m.short.clone();
    let mut offset = 0;
    for atom in &m.atoms {
        let n = atom.order();
        let term = sandwich(&atom.factors, &g[offset..offset + n])?;
        phi = phi.add(&term.scale(C64::new(atom.weight, 0.0)))?;
        offset += n;
    }
    let cube = space.cube();
    Ok(EffectiveInteraction {
        w_norm: phi.w_norm(decay, cube),
        m_norm: m_norm(m, decay, cube),
        interaction: phi,
    })
}

/// Scalars sampled on a uniform grid, interpolated by cubic Lagrange
/// polynomials on the four nearest nodes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalarPath {
    pub times: Vec<f64>,
    pub values: Vec<Vec<C64>>,
}

impl ScalarPath {
    pub fn constant(times: Vec<f64>, g: &[C64]) -> Self {
        let values = vec![g.to_vec(); times.len()];
        ScalarPath { times, values }
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("non-empty path")
    }

    pub fn eval(&self, t: f64) -> Vec<C64> {
        let n = self.times.len();
        if n == 1 {
            return self.values[0].clone();
        }
        let k = match self.times.iter().position(|&x| x > t) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => n - 2,
        };
        let width = n.min(4);
        let lo = k.saturating_sub(1).min(n - width);
        let nodes = lo..lo + width;
        let mut out = vec![C64::new(0.0, 0.0); self.values[0].len()];
        for i in nodes.clone() {
            let mut w = 1.0;
            for j in nodes.clone() {
                if j != i {
                    w *= (t - self.times[j]) / (self.times[i] - self.times[j]);
                }
            }
            for (o, v) in out.iter_mut().zip(&self.values[i]) {
                *o += v * w;
            }
        }
        out
    }

    fn sup_distance(&self, other: &ScalarPath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()))
            .fold(0.0, f64::max)
    }
}

/// Picard solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    /// Longest sub-interval solved as one fixed-point problem.
    pub max_subinterval: f64,
    pub step_scale: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-9,
            max_iter: 30,
            damping: 1.0,
            max_subinterval: 0.1,
            step_scale: DEFAULT_STEP_SCALE,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::config("solver.tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("solver.max_iter", "must be at least 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::config("solver.damping", "must lie in (0, 1]"));
        }
        if !(self.max_subinterval > 0.0) {
            return Err(Error::config("solver.max_subinterval", "must be positive"));
        }
        if !(self.step_scale > 0.0) {
            return Err(Error::config("solver.step_scale", "must be positive"));
        }
        Ok(())
    }
}

/// One sub-interval of a solved flow.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
    pub iterations: usize,
    pub defects: Vec<f64>,
    pub path: ScalarPath,
}

/// Components `U^{Φ_i}` and `U^{Ψ_{a,k}}` of the effective Hamiltonian on one
/// box, with coefficient functions attached from a flow.
#[derive(Clone)]
struct EffectiveParts {
    family: HamiltonianFamily,
    model: Arc<TimeDependentModel>,
}

impl EffectiveParts {
    fn new(model: &TimeDependentModel, space: &ModeSpace) -> Result<Self> {
        let mut comps: Vec<Csr> = Vec::new();
        for (phi, _) in &model.short {
            comps.push(local_energy(phi, space)?.to_csr());
        }
        for (atom, _) in &model.atoms {
            for psi in &atom.factors {
                comps.push(local_energy(psi, space)?.to_csr());
            }
        }
        let zero_coeffs = vec![C64::new(0.0, 0.0); comps.len()];
        let family = HamiltonianFamily::new(space, comps, Arc::new(move |_| zero_coeffs.clone()));
        Ok(EffectiveParts {
            family,
            model: Arc::new(model.clone()),
        })
    }

    fn with_scalars(&self, scalars: impl Fn(f64) -> Vec<C64> + Send + Sync + 'static) -> HamiltonianFamily {
        let model = self.model.clone();
        self.family
            .with_coefficients(Arc::new(move |t| effective_coefficients(&model, t, &scalars(t))))
    }
}

fn effective_coefficients(model: &TimeDependentModel, t: f64, g: &[C64]) -> Vec<C64> {
    let mut out: Vec<C64> = model.short.iter().map(|(_, s)| C64::new(s.eval(t), 0.0)).collect();
    let mut offset = 0;
    for (atom, sched) in &model.atoms {
        let w = atom.weight * sched.eval(t);
        let n = atom.order();
        for k in 0..n {
            out.push(leave_one_out(&g[offset..offset + n], k) * w);
        }
        offset += n;
    }
    out
}

fn has_long_range(model: &TimeDependentModel) -> bool {
    model.atoms.iter().any(|(a, s)| a.weight != 0.0 && s.sup_abs() != 0.0)
}

/// Columns `B` with `ρ = B B†`.
pub fn state_block(repr: &StateRepr) -> DMatrix<C64> {
    match repr {
        StateRepr::Pure(v) => DMatrix::from_column_slice(v.len(), 1, v.as_slice()),
        StateRepr::Mixed(m) => {
            let eig = m.clone().symmetric_eigen();
            let keep: Vec<usize> = (0..m.nrows()).filter(|&i| eig.eigenvalues[i] > 1e-14).collect();
            DMatrix::from_fn(m.nrows(), keep.len(), |r, c| {
                eig.eigenvectors[(r, keep[c])] * eig.eigenvalues[keep[c]].sqrt()
            })
        }
    }
}

/// `tr(B† A B)`.
pub fn block_expectation(a: &Csr, block: &DMatrix<C64>) -> C64 {
    let ab = linalg::csr_mul_dense(a, block);
    block.iter().zip(ab.iter()).map(|(b, x)| b.conj() * x).sum()
}

/// Solution of the self-consistency equation on `[s, t]`.
#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub s: f64,
    pub t: f64,
    /// `(atom, factor)` for each scalar.
    pub slots: Vec<(usize, usize)>,
    pub chunks: Vec<ChunkRecord>,
    /// State blocks `B` (with `ρ = BB†`) at the chunk boundaries.
    pub boundary_states: Vec<DMatrix<C64>>,
    pub final_defect: f64,
    model: TimeDependentModel,
    space: ModeSpace,
    period: PeriodVector,
    energy_densities: Vec<Csr>,
}

impl FlowTrajectory {
    pub fn model(&self) -> &TimeDependentModel {
        &self.model
    }

    pub fn space(&self) -> &ModeSpace {
        &self.space
    }

    pub fn period(&self) -> &PeriodVector {
        &self.period
    }

    pub fn iterations(&self) -> usize {
        self.chunks.iter().map(|c| c.iterations).max().unwrap_or(0)
    }

    pub fn has_long_range(&self) -> bool {
        has_long_range(&self.model)
    }

    /// All grid nodes, chunk boundaries counted once.
    pub fn times(&self) -> Vec<f64> {
        let mut out = vec![self.s];
        for c in &self.chunks {
            out.extend_from_slice(&c.path.times[1..]);
        }
        out
    }

    /// Scalars at every node of [`times`](Self::times).
    pub fn scalars(&self) -> Vec<Vec<C64>> {
        let mut out = vec![self.scalar_at(self.s)];
        for c in &self.chunks {
            out.extend(c.path.values[1..].iter().cloned());
        }
        out
    }

    pub fn scalar_at(&self, t: f64) -> Vec<C64> {
        match self.chunks.iter().find(|c| t <= c.end) {
            Some(c) => c.path.eval(t),
            None => match self.chunks.last() {
                Some(c) => c.path.eval(t),
                None => self
                    .energy_densities
                    .iter()
                    .map(|e| block_expectation(e, &self.boundary_states[0]))
                    .collect(),
            },
        }
    }

    pub fn slot_index(&self, atom: usize, factor: usize) -> Option<usize> {
        self.slots.iter().position(|&s| s == (atom, factor))
    }

    /// Largest `|g|` over all nodes.
    pub fn scalar_sup(&self) -> f64 {
        self.scalars().iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// The evolved state at the end point, on the working box.
    pub fn final_state(&self) -> Result<LatticeState> {
        let b = self.boundary_states.last().expect("initial state stored");
        let repr = if b.ncols() == 1 {
            StateRepr::Pure(DVector::from_column_slice(b.as_slice()))
        } else {
            StateRepr::Mixed(b * b.adjoint())
        };
        LatticeState::new(self.space.clone(), self.period.clone(), repr, StateTag::Custom)
    }

    /// Effective Hamiltonian `t ↦ U^{Φ^(m,g(t))}` on any box.
    pub fn effective_family(&self, space: &ModeSpace) -> Result<HamiltonianFamily> {
        let parts = EffectiveParts::new(&self.model, space)?;
        let chunks: Vec<ScalarPath> = self.chunks.iter().map(|c| c.path.clone()).collect();
        let fallback = self.scalar_at(self.s);
        Ok(parts.with_scalars(move |t| eval_chunks(&chunks, t, &fallback)))
    }

    /// Legs of `[s, t]` split at chunk boundaries when the long-range part
    /// is active.
    fn legs(&self, s: f64, t: f64) -> Result<Vec<(f64, f64)>> {
        const EDGE: f64 = 1e-12;
        if s > t || s < self.s - EDGE || t > self.t + EDGE {
            return Err(Error::Invalid(format!(
                "interval [{s}, {t}] outside the solved flow [{}, {}]",
                self.s, self.t
            )));
        }
        if !self.has_long_range() || s == t {
            return Ok(vec![(s, t)]);
        }
        let mut cuts = vec![s];
        for c in &self.chunks {
            if c.end > s + EDGE && c.end < t - EDGE {
                cuts.push(c.end);
            }
        }
        cuts.push(t);
        Ok(cuts.windows(2).map(|w| (w[0], w[1])).collect())
    }

    fn leg_grid(&self, h: &HamiltonianFamily, s: f64, t: f64) -> Result<TimeGrid> {
        let steps = ((t - s) * h.norm_estimate(s) / DEFAULT_STEP_SCALE).ceil().max(1.0) as usize;
        TimeGrid::new(s, t, steps)
    }

    /// `W(t, s)` of the effective dynamics on `space`.
    pub fn effective_propagator(&self, space: &ModeSpace, s: f64, t: f64) -> Result<Propagator> {
        let h = self.effective_family(space)?;
        let mut out: Option<Propagator> = None;
        for (a, b) in self.legs(s, t)? {
            let p = propagate(&h, &self.leg_grid(&h, a, b)?)?;
            out = Some(match out {
                None => p,
                Some(prev) => prev.then(&p),
            });
        }
        Ok(out.expect("at least one leg"))
    }

    /// `W(t, s) B` for a block of state columns.
    pub fn effective_evolve(&self, space: &ModeSpace, block: DMatrix<C64>, s: f64, t: f64) -> Result<DMatrix<C64>> {
        let h = self.effective_family(space)?;
        let mut block = block;
        for (a, b) in self.legs(s, t)? {
            block = evolve_block(&h, &self.leg_grid(&h, a, b)?, block, |_, _, _| {});
        }
        Ok(block)
    }

    /// Integrator data of the effective propagation on `space`.
    pub fn effective_info(&self, space: &ModeSpace, s: f64, t: f64) -> Result<IntegratorInfo> {
        Ok(self.effective_propagator(space, s, t)?.info)
    }

    /// CSV with columns `t`, real and imaginary parts of each scalar, and
    /// the Picard iteration count of the enclosing chunk.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for (a, k) in &self.slots {
            out.push_str(&format!(",re_g{a}_{k},im_g{a}_{k}"));
        }
        out.push_str(",iterations\n");
        let mut row = |t: f64, g: &[C64], it: usize| {
            out.push_str(&format!("{t:.16e}"));
            for z in g {
                out.push_str(&format!(",{:.16e},{:.16e}", z.re, z.im));
            }
            out.push_str(&format!(",{it}\n"));
        };
        if self.chunks.is_empty() {
            row(self.s, &self.scalar_at(self.s), 0);
        }
        for (ci, c) in self.chunks.iter().enumerate() {
            let skip = usize::from(ci > 0);
            for (t, g) in c.path.times.iter().zip(&c.path.values).skip(skip) {
                row(*t, g, c.iterations);
            }
        }
        out
    }

    pub fn record(&self) -> FlowRecord {
        FlowRecord {
            s: self.s,
            t: self.t,
            slots: self.slots.clone(),
            box_radius: self.space.cube().radius,
            dim: self.space.cube().dim,
            spins: self.space.spins(),
            period: self.period.clone(),
            final_defect: self.final_defect,
            chunks: self.chunks.clone(),
        }
    }
}

/// Serializable summary of a flow.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowRecord {
    pub s: f64,
    pub t: f64,
    pub slots: Vec<(usize, usize)>,
    pub dim: usize,
    pub box_radius: usize,
    pub spins: usize,
    pub period: PeriodVector,
    pub final_defect: f64,
    pub chunks: Vec<ChunkRecord>,
}

fn eval_chunks(chunks: &[ScalarPath], t: f64, fallback: &[C64]) -> Vec<C64> {
    match chunks.iter().find(|c| t <= c.end()).or(chunks.last()) {
        Some(c) => c.eval(t),
        None => fallback.to_vec(),
    }
}

/// Picard iteration for the flow of energy-density expectations, started
/// from `rho0` on its own box and solved on sub-intervals of length at most
/// `cfg.max_subinterval`.
pub fn solve_self_consistency(
    model: &TimeDependentModel,
    rho0: &LatticeState,
    s: f64,
    t: f64,
    cfg: &SolverConfig,
) -> Result<FlowTrajectory> {
    cfg.validate()?;
    if !(t >= s) || !s.is_finite() || !t.is_finite() {
        return Err(Error::Invalid(format!("flow needs finite s <= t, got [{s}, {t}]")));
    }
    let space = rho0.space().clone();
    let period = rho0.period().clone();
    if model.dim() != space.cube().dim || model.spins() != space.spins() {
        return Err(Error::Invalid("model does not match the working box".into()));
    }
    let slots: Vec<(usize, usize)> = model
        .atoms
        .iter()
        .enumerate()
        .flat_map(|(a, (atom, _))| (0..atom.order()).map(move |k| (a, k)))
        .collect();
    let mut densities = Vec::with_capacity(slots.len());
    for &(a, k) in &slots {
        let e = model.atoms[a].0.factors[k].energy_density(&period)?;
        if !space.cube().contains_set(e.support()) {
            return Err(Error::Geometry(format!(
                "energy density support {} does not fit in the working box",
                e.support()
            )));
        }
        densities.push(e.op.embed(&space)?.to_csr());
    }
    let parts = EffectiveParts::new(model, &space)?;
    let active = has_long_range(model);
    let mut block = state_block(rho0.repr());
    let mut boundary_states = vec![block.clone()];
    let mut chunks = Vec::new();
    let mut final_defect: f64 = 0.0;
    let read = |b: &DMatrix<C64>| -> Vec<C64> { densities.iter().map(|e| block_expectation(e, b)).collect() };
    let count = ((t - s) / cfg.max_subinterval).ceil() as usize;
    let mut g_start = read(&block);
    for c in 0..count {
        let c0 = s + (t - s) * c as f64 / count as f64;
        let c1 = if c + 1 == count {
            t
        } else {
            s + (t - s) * (c + 1) as f64 / count as f64
        };
        let frozen = g_start.clone();
        let norm = parts.with_scalars(move |_| frozen.clone()).norm_estimate(c0);
        let steps = ((c1 - c0) * norm / cfg.step_scale).ceil().max(1.0) as usize;
        let grid = TimeGrid::new(c0, c1, steps)?;
        let mut path = ScalarPath::constant(grid.nodes(), &g_start);
        let mut damping = cfg.damping;
        let mut defects = Vec::new();
        let mut converged = None;
        for it in 1..=cfg.max_iter {
            let current = Arc::new(path.clone());
            let h = parts.with_scalars(move |x| current.eval(x));
            let mut values = vec![Vec::new(); steps + 1];
            let end = evolve_block(&h, &grid, block.clone(), |k, _, b| values[k] = read(b));
            let next = ScalarPath {
                times: path.times.clone(),
                values,
            };
            let defect = next.sup_distance(&path);
            if let Some(&prev) = defects.last() {
                if defect > prev && damping > 0.5 {
                    damping = 0.5;
                }
            }
            defects.push(defect);
            if !active || defect <= cfg.tol {
                converged = Some((it, end, next));
                break;
            }
            path = blend(&path, &next, damping);
        }
        let (iterations, end, path) = match converged {
            Some(v) => v,
            None => {
                return Err(Error::NonConvergence {
                    iterations: cfg.max_iter,
                    defect: *defects.last().unwrap_or(&f64::NAN),
                    start: c0,
                    end: c1,
                })
            }
        };
        final_defect = final_defect.max(*defects.last().unwrap_or(&0.0));
        block = end;
        g_start = path.values.last().cloned().unwrap_or_default();
        boundary_states.push(block.clone());
        chunks.push(ChunkRecord {
            start: c0,
            end: c1,
            steps,
            iterations,
            defects,
            path,
        });
    }
    Ok(FlowTrajectory {
        s,
        t,
        slots,
        chunks,
        boundary_states,
        final_defect,
        model: model.clone(),
        space,
        period,
        energy_densities: densities,
    })
}

fn blend(old: &ScalarPath, new: &ScalarPath, damping: f64) -> ScalarPath {
    if damping == 1.0 {
        return new.clone();
    }
    let values = old
        .values
        .iter()
        .zip(&new.values)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + (y - x) * damping).collect())
        .collect();
    ScalarPath {
        times: old.times.clone(),
        values,
    }
}

/// `τ^{eff}_{t,s}(A)` on the box of `a`.
pub fn effective_dynamics(flow: &FlowTrajectory, a: &FockOperator, s: f64, t: f64) -> Result<FockOperator> {
    flow.effective_propagator(a.space(), s, t)?.heisenberg(a)
}

/// `ρ(B† τ^{eff}_{t,s}(A) B)` for a state on any box, evolving vectors only.
pub fn effective_matrix_element(
    flow: &FlowTrajectory,
    state: &LatticeState,
    a: &FockOperator,
    b: &FockOperator,
    s: f64,
    t: f64,
) -> Result<C64> {
    let block = state_block(state.repr());
    let bb = b.to_csr();
    let start = linalg::csr_mul_dense(&bb, &block);
    let end = flow.effective_evolve(state.space(), start, s, t)?;
    Ok(block_expectation(&a.to_csr(), &end))
}

/// Polynomial `Σ_i c_i Π_{j ∈ m_i} ρ(A_j)` in finitely many expectations.
#[derive(Clone, Debug)]
pub struct CylinderObservable {
    pub operators: Vec<LocalOperator>,
    pub monomials: Vec<(C64, Vec<usize>)>,
}

impl CylinderObservable {
    pub fn constant(c: C64) -> Self {
        CylinderObservable {
            operators: Vec::new(),
            monomials: vec![(c, Vec::new())],
        }
    }

    /// `ρ ↦ ρ(A)`.
    pub fn linear(a: LocalOperator) -> Self {
        CylinderObservable {
            operators: vec![a],
            monomials: vec![(C64::new(1.0, 0.0), vec![0])],
        }
    }

    pub fn eval(&self, expectations: &[C64]) -> C64 {
        self.monomials
            .iter()
            .map(|(c, idx)| idx.iter().fold(*c, |acc, &j| acc * expectations[j]))
            .sum()
    }
}

/// `t_k ↦ f(ϖ(s, t_k; ρ))` at every node of the flow.
pub fn classical_flow_eval(flow: &FlowTrajectory, f: &CylinderObservable) -> Result<Vec<(f64, C64)>> {
    let space = &flow.space;
    let mut ops = Vec::with_capacity(f.operators.len());
    for a in &f.operators {
        if !space.cube().contains_set(a.sites()) {
            return Err(Error::Geometry(format!(
                "observable support {} leaves the working box",
                a.sites()
            )));
        }
        ops.push(a.embed(space)?.to_csr());
    }
    if f.monomials.iter().flat_map(|(_, m)| m).any(|&j| j >= ops.len()) {
        return Err(Error::Invalid("monomial refers to a missing operator".into()));
    }
    let eval = |b: &DMatrix<C64>| -> C64 {
        let vals: Vec<C64> = ops.iter().map(|a| block_expectation(a, b)).collect();
        f.eval(&vals)
    };
    let mut out = vec![(flow.s, eval(&flow.boundary_states[0]))];
    let h = flow.effective_family(space)?;
    for (c, start) in flow.chunks.iter().zip(&flow.boundary_states) {
        let grid = TimeGrid::new(c.start, c.end, c.steps)?;
        evolve_block(&h, &grid, start.clone(), |k, t, b| {
            if k > 0 {
                out.push((t, eval(b)));
            }
        });
    }
    Ok(out)
}
