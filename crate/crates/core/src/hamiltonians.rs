//! Local energies of interactions and long-range models, and time-dependent
//! Hamiltonian families built from coefficient schedules.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{embed_triplets, FockOperator, ModeSpace};
use crate::interactions::{m_norm, Atom, Interaction, LongRangeModel};
use crate::lattice::DecayFunction;
use crate::linalg::{self, Csr, LinearFamily};

/// A self-adjoint even operator on a box together with the time at which
/// its source model was evaluated.
#[derive(Clone, Debug)]
pub struct LocalHamiltonian {
    pub op: FockOperator,
    pub time: Option<f64>,
}

/// `U_L^Φ = Σ_{Z ⊆ Λ_L} Φ_Z`.
pub fn local_energy(phi: &Interaction, space: &ModeSpace) -> Result<FockOperator> {
    if phi.spins() != space.spins() || phi.dim() != space.cube().dim {
        return Err(Error::Invalid("interaction does not match the box".into()));
    }
    let terms = phi.terms_in_box(space.cube());
    let mut triplets = Vec::new();
    for term in &terms {
        let positions = space.set_modes(term.sites())?;
        triplets.extend(embed_triplets(term.matrix(), &positions, space.modes()));
    }
    let csr = linalg::csr_from_triplets(space.dim(), triplets);
    Ok(FockOperator::from_csr(space, space.cube().site_set(), csr))
}

/// `|Λ|^{-(n-1)} U^{Ψ_1} ⋯ U^{Ψ_n}` for one atom, without the weight.
fn atom_product(atom: &Atom, space: &ModeSpace) -> Result<FockOperator> {
    let volume = space.cube().volume() as f64;
    let mut prod = local_energy(&atom.factors[0], space)?;
    for f in &atom.factors[1..] {
        prod = prod.mul(&local_energy(f, space)?);
    }
    let n = atom.order() as i32;
    Ok(prod.scale(C64::new(volume.powi(1 - n), 0.0)))
}

/// `U_L^m = U_L^Φ + Σ_atoms w |Λ|^{-(n-1)} U^{Ψ_1} ⋯ U^{Ψ_n}`.
pub fn local_energy_model(m: &LongRangeModel, space: &ModeSpace) -> Result<LocalHamiltonian> {
    let mut op = local_energy(&m.short, space)?;
    let products: Vec<Result<FockOperator>> = m.atoms.par_iter().map(|a| atom_product(a, space)).collect();
    for (atom, prod) in m.atoms.iter().zip(products) {
        op = op.add_scaled(&prod?, C64::new(atom.weight, 0.0));
    }
    Ok(LocalHamiltonian { op, time: None })
}

/// Real coefficient schedule applied to a model component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Schedule {
    Constant {
        value: f64,
    },
    /// Linear interpolation from `from` at `t0` to `to` at `t1`, constant outside.
    LinearRamp {
        from: f64,
        to: f64,
        t0: f64,
        t1: f64,
    },
    /// `offset + amplitude · sin(omega t + phase)`.
    Sinusoidal {
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Constant { value: 1.0 }
    }
}

impl Schedule {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Schedule::Constant { value } => value,
            Schedule::LinearRamp { from, to, t0, t1 } => {
                if t <= t0 {
                    from
                } else if t >= t1 {
                    to
                } else {
                    from + (to - from) * (t - t0) / (t1 - t0)
                }
            }
            Schedule::Sinusoidal {
                offset,
                amplitude,
                omega,
                phase,
            } => offset + amplitude * (omega * t + phase).sin(),
        }
    }

    /// Upper bound of `|f|` over all times.
    pub fn sup_abs(&self) -> f64 {
        match *self {
            Schedule::Constant { value } => value.abs(),
            Schedule::LinearRamp { from, to, .. } => from.abs().max(to.abs()),
            Schedule::Sinusoidal { offset, amplitude, .. } => offset.abs() + amplitude.abs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = match *self {
            Schedule::Constant { value } => value.is_finite(),
            Schedule::LinearRamp { from, to, t0, t1 } => {
                if !(t1 > t0) {
                    return Err(Error::Invalid("linear ramp needs t1 > t0".into()));
                }
                [from, to, t0, t1].iter().all(|v| v.is_finite())
            }
            Schedule::Sinusoidal {
                offset,
                amplitude,
                omega,
                phase,
            } => [offset, amplitude, omega, phase].iter().all(|v| v.is_finite()),
        };
        if finite {
            Ok(())
        } else {
            Err(Error::Invalid("schedule parameters must be finite".into()))
        }
    }
}

/// `m(t)`: short-range components and atoms, each scaled by a schedule.
#[derive(Clone, Debug)]
pub struct TimeDependentModel {
    pub short: Vec<(Interaction, Schedule)>,
    pub atoms: Vec<(Atom, Schedule)>,
}

impl TimeDependentModel {
    pub fn autonomous(m: &LongRangeModel) -> Self {
        TimeDependentModel {
            short: vec![(m.short.clone(), Schedule::default())],
            atoms: m.atoms.iter().map(|a| (a.clone(), Schedule::default())).collect(),
        }
    }

    /// Same model with every atom removed.
    pub fn without_long_range(&self) -> Self {
        TimeDependentModel {
            short: self.short.clone(),
            atoms: Vec::new(),
        }
    }

    pub fn at(&self, t: f64) -> Result<LongRangeModel> {
        let first = &self
            .short
            .first()
            .ok_or_else(|| Error::Invalid("model needs a short-range part".into()))?
            .0;
        let mut short = Interaction::zero(first.dim(), first.spins());
        for (phi, sched) in &self.short {
            short = short.add(&phi.scale(C64::new(sched.eval(t), 0.0)))?;
        }
        let atoms = self
            .atoms
            .iter()
            .map(|(a, sched)| Atom {
                weight: a.weight * sched.eval(t),
                factors: a.factors.clone(),
            })
            .collect();
        Ok(LongRangeModel { short, atoms })
    }

    pub fn m_norm_at(&self, t: f64, decay: &DecayFunction, space: &ModeSpace) -> Result<f64> {
        Ok(m_norm(&self.at(t)?, decay, space.cube()))
    }

    pub fn spins(&self) -> usize {
        self.short.first().map(|s| s.0.spins()).unwrap_or(1)
    }

    pub fn dim(&self) -> usize {
        self.short.first().map(|s| s.0.dim()).unwrap_or(1)
    }
}

pub type CoeffFn = dyn Fn(f64) -> Vec<C64> + Send + Sync;

/// `H(t) = Σ_k c_k(t) M_k` with fixed sparse components sharing one pattern.
#[derive(Clone)]
pub struct HamiltonianFamily {
    space: ModeSpace,
    family: LinearFamily,
    coeffs: Arc<CoeffFn>,
}

impl std::fmt::Debug for HamiltonianFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HamiltonianFamily")
            .field("space", &self.space)
            .field("components", &self.family.len())
            .finish()
    }
}

impl HamiltonianFamily {
    pub fn new(space: &ModeSpace, components: Vec<Csr>, coeffs: Arc<CoeffFn>) -> Self {
        let components = if components.is_empty() {
            vec![linalg::csr_zero(space.dim())]
        } else {
            components
        };
        HamiltonianFamily {
            space: space.clone(),
            family: LinearFamily::new(&components),
            coeffs,
        }
    }

    /// Time-independent generator.
    pub fn constant(op: &FockOperator) -> Self {
        HamiltonianFamily::new(op.space(), vec![op.to_csr()], Arc::new(|_| vec![C64::new(1.0, 0.0)]))
    }

    pub fn from_model(m: &TimeDependentModel, space: &ModeSpace) -> Result<Self> {
        let mut components = Vec::new();
        for (phi, _) in &m.short {
            components.push(local_energy(phi, space)?.to_csr());
        }
        let products: Vec<Result<FockOperator>> = m.atoms.par_iter().map(|(a, _)| atom_product(a, space)).collect();
        for p in products {
            components.push(p?.to_csr());
        }
        let short: Vec<Schedule> = m.short.iter().map(|s| s.1.clone()).collect();
        let atoms: Vec<(f64, Schedule)> = m.atoms.iter().map(|(a, s)| (a.weight, s.clone())).collect();
        let coeffs = move |t: f64| {
            short
                .iter()
                .map(|s| C64::new(s.eval(t), 0.0))
                .chain(atoms.iter().map(|(w, s)| C64::new(w * s.eval(t), 0.0)))
                .collect()
        };
        Ok(HamiltonianFamily::new(space, components, Arc::new(coeffs)))
    }

    /// Same components with new coefficient functions.
    pub fn with_coefficients(&self, coeffs: Arc<CoeffFn>) -> Self {
        HamiltonianFamily {
            space: self.space.clone(),
            family: self.family.clone(),
            coeffs,
        }
    }

    pub fn components(&self) -> usize {
        self.family.len()
    }

    pub fn space(&self) -> &ModeSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn coefficients(&self, t: f64) -> Vec<C64> {
        (self.coeffs)(t)
    }

    pub fn at(&self, t: f64) -> Csr {
        self.family.combine(&self.coefficients(t))
    }

    pub fn operator_at(&self, t: f64) -> FockOperator {
        FockOperator::from_csr(&self.space, self.space.cube().site_set(), self.at(t))
    }

    /// `Σ_j w_j H(t_j)` and a bound on its infinity norm.
    pub fn combination(&self, nodes: &[(f64, f64)]) -> (Csr, f64) {
        let mut c = vec![C64::new(0.0, 0.0); self.family.len()];
        for &(t, w) in nodes {
            for (acc, v) in c.iter_mut().zip(self.coefficients(t)) {
                *acc += v * w;
            }
        }
        let bound = self.family.norm_inf_bound(&c);
        (self.family.combine(&c), bound)
    }

    /// Power-iteration estimate of `‖H(t)‖`.
    pub fn norm_estimate(&self, t: f64) -> f64 {
        linalg::hermitian_norm_estimate(&self.at(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::LocalOperator;
    use crate::interactions::build_bcs_model;
    use crate::lattice::{CubicBox, Site, SiteSet};
    use nalgebra::DMatrix;

    fn space(radius: usize, spins: usize) -> ModeSpace {
        ModeSpace::new(CubicBox::new(1, radius).unwrap(), spins).unwrap()
    }

    fn site(x: i64) -> Site {
        Site(vec![x])
    }

    #[test]
    fn number_operator_sum() {
        let sp = space(1, 1);
        let phi = Interaction::onsite_number(1, 1, 1.0).unwrap();
        let u = local_energy(&phi, &sp).unwrap();
        let mut want = sp.zero();
        for x in -1..=1 {
            want = want.add(&sp.number(&site(x), 0).unwrap());
        }
        assert_eq!(u.sub(&want).max_abs(), 0.0);
        assert!((u.norm() - 3.0).abs() < 1e-12);
        assert_eq!(local_energy(&Interaction::zero(1, 1), &sp).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn bcs_single_site() {
        let (gamma, mu) = (1.7, 0.4);
        let m = build_bcs_model(1, gamma, mu, None, &Default::default()).unwrap();
        let sp = space(0, 2);
        let u = local_energy_model(&m, &sp).unwrap().op.to_dense().unwrap();
        // basis: bit0 = up, bit1 = down
        let diag = [0.0, -mu, -mu, -2.0 * mu - gamma];
        let want = DMatrix::from_fn(4, 4, |r, c| {
            if r == c {
                C64::new(diag[r], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        assert!(linalg::max_abs_dense(&(u - want)) < 1e-14);
    }

    #[test]
    fn bcs_three_sites_double_sum() {
        let (gamma, mu) = (0.9, 0.3);
        let m = build_bcs_model(1, gamma, mu, None, &Default::default()).unwrap();
        let sp = space(1, 2);
        let u = local_energy_model(&m, &sp).unwrap().op;
        let mut want = sp.zero();
        for x in -1..=1 {
            for s in 0..2 {
                want = want.add_scaled(&sp.number(&site(x), s).unwrap(), C64::new(-mu, 0.0));
            }
        }
        for x in -1..=1 {
            for y in -1..=1 {
                let term = sp
                    .creator(&site(x), 0)
                    .unwrap()
                    .mul(&sp.creator(&site(x), 1).unwrap())
                    .mul(&sp.annihilator(&site(y), 1).unwrap())
                    .mul(&sp.annihilator(&site(y), 0).unwrap());
                want = want.add_scaled(&term, C64::new(-gamma / 3.0, 0.0));
            }
        }
        assert!(u.sub(&want).max_abs() < 1e-14);
        assert!(u.hermiticity_defect() < 1e-12);
    }

    #[test]
    fn short_range_model_equals_interaction_energy() {
        let phi = Interaction::hopping(1, 2, 0.8).unwrap();
        let sp = space(1, 2);
        let a = local_energy_model(&LongRangeModel::short_range(phi.clone()), &sp)
            .unwrap()
            .op;
        assert_eq!(a.sub(&local_energy(&phi, &sp).unwrap()).max_abs(), 0.0);
    }

    #[test]
    fn schedules() {
        let ramp = Schedule::LinearRamp {
            from: 1.0,
            to: 3.0,
            t0: 0.0,
            t1: 2.0,
        };
        assert_eq!(ramp.eval(-1.0), 1.0);
        assert_eq!(ramp.eval(1.0), 2.0);
        assert_eq!(ramp.eval(5.0), 3.0);
        let sine = Schedule::Sinusoidal {
            offset: 1.0,
            amplitude: 0.5,
            omega: 2.0,
            phase: 0.0,
        };
        assert!((sine.eval(std::f64::consts::FRAC_PI_4) - 1.5).abs() < 1e-15);
        assert_eq!(sine.sup_abs(), 1.5);
    }

    #[test]
    fn family_reproduces_model_energy() {
        let m = build_bcs_model(1, 1.0, 0.5, Some(0.3), &Default::default()).unwrap();
        let mut tdm = TimeDependentModel::autonomous(&m);
        tdm.atoms[0].1 = Schedule::LinearRamp {
            from: 0.0,
            to: 1.0,
            t0: 0.0,
            t1: 1.0,
        };
        let sp = space(1, 2);
        let fam = HamiltonianFamily::from_model(&tdm, &sp).unwrap();
        let direct = local_energy_model(&tdm.at(0.25).unwrap(), &sp).unwrap().op;
        let via = fam.operator_at(0.25);
        assert!(via.sub(&direct).max_abs() < 1e-14);
    }

    #[test]
    fn onsite_density_in_translation_invariant_product_state() {
        // a product of identical single-site states: ⟨U⟩/|Λ| = single-site value
        let sp = space(1, 1);
        let phi = Interaction::onsite_number(1, 1, 1.0).unwrap();
        let u = local_energy(&phi, &sp).unwrap();
        let (c, s) = (0.6f64, 0.8f64);
        let single = DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(c * c, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(s * s, 0.0),
            ],
        );
        let mut rho = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        for _ in 0..3 {
            rho = single.kronecker(&rho);
        }
        let value = (rho * u.to_dense().unwrap()).trace() / 3.0;
        let single_value = (single
            * LocalOperator::number(&SiteSet::singleton(site(0)), 1, &site(0), 0)
                .unwrap()
                .matrix())
        .trace();
        assert!((value - single_value).norm() < 1e-15);
    }
}
