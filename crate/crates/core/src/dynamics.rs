//! Non-autonomous Heisenberg dynamics on a finite box.
//!
//! The propagator solves `∂_t W(t,s) = -i H(t) W(t,s)`, `W(s,s) = 1`, and
//! `τ_{t,s}(A) = W(t,s)† A W(t,s)`. Steps use the fourth-order
//! commutator-free scheme with two Gauss-Legendre nodes.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::FockOperator;
use crate::hamiltonians::HamiltonianFamily;
use crate::linalg;

/// Target accuracy of the default step rule.
pub const INTEGRATOR_TOL: f64 = 1e-8;
/// Bound on `‖W†W − 1‖` kept by the propagator.
pub const UNITARITY_TOL: f64 = 1e-9;
/// Default step size in units of `1/‖H(s)‖`.
pub const DEFAULT_STEP_SCALE: f64 = 0.01;

const REUNITARIZE_EVERY: usize = 32;

/// Uniform grid from `s` to `t` with `steps` intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub s: f64,
    pub t: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// `s == t` is allowed and yields a degenerate grid with no motion.
    pub fn new(s: f64, t: f64, steps: usize) -> Result<Self> {
        if !s.is_finite() || !t.is_finite() {
            return Err(Error::Invalid("grid end points must be finite".into()));
        }
        if steps == 0 {
            return Err(Error::Invalid("grid needs at least one step".into()));
        }
        Ok(TimeGrid { s, t, steps })
    }

    pub fn step(&self) -> f64 {
        (self.t - self.s) / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t
        } else {
            self.s + self.step() * k as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }
}

/// Step count of the default rule: `|t-s| / N ≤ 0.01 / ‖H(s)‖`.
pub fn default_steps(h: &HamiltonianFamily, s: f64, t: f64) -> usize {
    let norm = h.norm_estimate(s);
    ((t - s).abs() * norm / DEFAULT_STEP_SCALE).ceil().max(1.0) as usize
}

pub fn default_grid(h: &HamiltonianFamily, s: f64, t: f64) -> Result<TimeGrid> {
    TimeGrid::new(s, t, default_steps(h, s, t))
}

/// `δ(A) = i[H, A]`.
pub fn derivation(h: &FockOperator, a: &FockOperator) -> FockOperator {
    h.commutator(a).scale(C64::new(0.0, 1.0))
}

const SQRT3: f64 = 1.732_050_807_568_877_2;

fn cf4_nodes(t0: f64, h: f64) -> [[(f64, f64); 2]; 2] {
    let c1 = 0.5 - SQRT3 / 6.0;
    let c2 = 0.5 + SQRT3 / 6.0;
    let a1 = (3.0 - 2.0 * SQRT3) / 12.0;
    let a2 = (3.0 + 2.0 * SQRT3) / 12.0;
    let (t1, t2) = (t0 + c1 * h, t0 + c2 * h);
    // applied first, then second
    [[(t1, a2), (t2, a1)], [(t1, a1), (t2, a2)]]
}

/// One step of the scheme applied to a block of column vectors.
fn cf4_step(h: &HamiltonianFamily, t0: f64, dt: f64, block: &mut DMatrix<C64>) {
    for nodes in cf4_nodes(t0, dt) {
        let (m, bound) = h.combination(&nodes);
        linalg::expm_multiply(&m, C64::new(0.0, -dt), block, bound);
    }
}

/// Evolves a block of columns `V ↦ W(t_k, s) V`, calling `observe` at every
/// node including the initial one.
pub fn evolve_block(
    h: &HamiltonianFamily,
    grid: &TimeGrid,
    mut block: DMatrix<C64>,
    mut observe: impl FnMut(usize, f64, &DMatrix<C64>),
) -> DMatrix<C64> {
    observe(0, grid.s, &block);
    if grid.s == grid.t {
        return block;
    }
    let dt = grid.step();
    for k in 0..grid.steps {
        cf4_step(h, grid.node(k), dt, &mut block);
        observe(k + 1, grid.node(k + 1), &block);
    }
    block
}

/// Schrödinger-picture evolution of one vector.
pub fn evolve_vector(h: &HamiltonianFamily, grid: &TimeGrid, psi: &DVector<C64>) -> DVector<C64> {
    let block = DMatrix::from_column_slice(psi.len(), 1, psi.as_slice());
    let out = evolve_block(h, grid, block, |_, _, _| {});
    DVector::from_column_slice(out.as_slice())
}

/// Evolution of a density matrix, `ρ ↦ W ρ W†`.
pub fn evolve_density(h: &HamiltonianFamily, grid: &TimeGrid, rho: &DMatrix<C64>) -> DMatrix<C64> {
    let left = evolve_block(h, grid, rho.clone(), |_, _, _| {});
    // W (W ρ)† = W ρ W†, using that ρ is self-adjoint
    let right = evolve_block(h, grid, left.adjoint(), |_, _, _| {});
    right.adjoint()
}

/// Integrator metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntegratorInfo {
    pub method: String,
    pub steps: usize,
    pub step: f64,
    pub unitarity_defect: f64,
    pub reunitarizations: usize,
}

/// The unitary `W(t,s)` on the Fock space of a box.
#[derive(Clone, Debug)]
pub struct Propagator {
    pub s: f64,
    pub t: f64,
    w: DMatrix<C64>,
    pub info: IntegratorInfo,
    space: crate::fock::ModeSpace,
}

impl Propagator {
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.w
    }

    /// `τ_{t,s}(A) = W† A W`.
    pub fn heisenberg(&self, a: &FockOperator) -> Result<FockOperator> {
        let aw = a.apply_matrix(&self.w);
        let out = self.w.adjoint() * aw;
        FockOperator::from_dense(&self.space, self.space.cube().site_set(), out)
    }

    /// `W(t,s)†` as a propagator from `t` back to `s`.
    pub fn inverse(&self) -> Propagator {
        Propagator {
            s: self.t,
            t: self.s,
            w: self.w.adjoint(),
            info: self.info.clone(),
            space: self.space.clone(),
        }
    }

    /// `W(t,r) W(r,s)`.
    pub fn then(&self, later: &Propagator) -> Propagator {
        Propagator {
            s: self.s,
            t: later.t,
            w: &later.w * &self.w,
            info: IntegratorInfo {
                steps: self.info.steps + later.info.steps,
                unitarity_defect: self.info.unitarity_defect.max(later.info.unitarity_defect),
                reunitarizations: self.info.reunitarizations + later.info.reunitarizations,
                ..self.info.clone()
            },
            space: self.space.clone(),
        }
    }
}

/// `W(t,s)` on the grid, with periodic re-unitarization.
pub fn propagate(h: &HamiltonianFamily, grid: &TimeGrid) -> Result<Propagator> {
    let space = h.space().clone();
    space.check_dense()?;
    let dim = h.dim();
    let mut w = DMatrix::identity(dim, dim);
    let mut reunitarizations = 0;
    let mut defect: f64 = 0.0;
    if grid.s != grid.t {
        let dt = grid.step();
        for k in 0..grid.steps {
            cf4_step(h, grid.node(k), dt, &mut w);
            if (k + 1) % REUNITARIZE_EVERY == 0 || k + 1 == grid.steps {
                let d = linalg::unitarity_defect(&w);
                if d > 0.5 * UNITARITY_TOL {
                    linalg::reunitarize(&mut w);
                    reunitarizations += 1;
                    let after = linalg::unitarity_defect(&w);
                    if after > UNITARITY_TOL {
                        return Err(Error::Integrator(format!(
                            "unitarity defect {after:e} after repair at t = {}; reduce the step size",
                            grid.node(k + 1)
                        )));
                    }
                    defect = defect.max(after);
                } else {
                    defect = defect.max(d);
                }
            }
        }
    }
    Ok(Propagator {
        s: grid.s,
        t: grid.t,
        w,
        info: IntegratorInfo {
            method: "cf4".into(),
            steps: grid.steps,
            step: grid.step(),
            unitarity_defect: defect,
            reunitarizations,
        },
        space,
    })
}

/// `τ_{t,s}(A)` on the default grid.
pub fn heisenberg_default(h: &HamiltonianFamily, s: f64, t: f64, a: &FockOperator) -> Result<FockOperator> {
    propagate(h, &default_grid(h, s, t)?)?.heisenberg(a)
}

/// `‖τ_{t,s}(A) − τ_{r,s}(τ_{t,r}(A))‖` with default grids on each leg.
pub fn cocycle_defect(h: &HamiltonianFamily, s: f64, r: f64, t: f64, a: &FockOperator) -> Result<f64> {
    let direct = heisenberg_default(h, s, t, a)?;
    let inner = heisenberg_default(h, r, t, a)?;
    let composed = heisenberg_default(h, s, r, &inner)?;
    Ok(direct.sub(&composed).norm())
}

/// `ρ(B† τ_{t,s}(A) B) = ⟨W B ψ, A W B ψ⟩` for a pure state.
pub fn vector_matrix_element(
    h: &HamiltonianFamily,
    grid: &TimeGrid,
    psi: &DVector<C64>,
    a: &FockOperator,
    b: &FockOperator,
) -> C64 {
    let phi = evolve_vector(h, grid, &b.apply(psi));
    a.matrix_element(&phi, &phi)
}

/// `ρ(B† τ_{t,s}(A) B) = tr(A W B ρ B† W†)` for a density matrix.
pub fn density_matrix_element(
    h: &HamiltonianFamily,
    grid: &TimeGrid,
    rho: &DMatrix<C64>,
    a: &FockOperator,
    b: &FockOperator,
) -> C64 {
    let brb = b.apply_matrix(&b.apply_matrix(rho).adjoint()).adjoint();
    let evolved = evolve_density(h, grid, &brb);
    a.apply_matrix(&evolved).trace()
}
