//! Periodic product states, expectations, space averages, ergodicity
//! diagnostics, coarse-graining and finite mixtures.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{
    partial_trace, partial_trace_vector, translate_operator, FermionPermutation, FockOperator, LocalOperator, ModeSpace,
};
use crate::hamiltonians::TimeDependentModel;
use crate::interactions::{decode_matrix, DOWN, UP};
use crate::lattice::{CubicBox, PeriodVector, Site, SiteSet};
use crate::linalg;
use crate::meanfield::{effective_matrix_element, solve_self_consistency, FlowTrajectory, SolverConfig};
use rayon::prelude::*;

const TRACE_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Pure vector or density matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum StateRepr {
    Pure(DVector<C64>),
    Mixed(DMatrix<C64>),
}

impl StateRepr {
    pub fn dim(&self) -> usize {
        match self {
            StateRepr::Pure(v) => v.len(),
            StateRepr::Mixed(m) => m.nrows(),
        }
    }

    pub fn density(&self) -> DMatrix<C64> {
        match self {
            StateRepr::Pure(v) => v * v.adjoint(),
            StateRepr::Mixed(m) => m.clone(),
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            StateRepr::Pure(v) => {
                if (v.norm() - 1.0).abs() > TRACE_TOL {
                    return Err(Error::Invalid(format!("state vector has norm {}", v.norm())));
                }
            }
            StateRepr::Mixed(m) => {
                let tr = m.trace();
                if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
                    return Err(Error::Invalid(format!("density matrix has trace {tr}")));
                }
                if linalg::max_abs_dense(&(m - m.adjoint())) > PSD_TOL {
                    return Err(Error::Invalid("density matrix is not self-adjoint".into()));
                }
                let min = m
                    .clone()
                    .symmetric_eigenvalues()
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                if min < -PSD_TOL {
                    return Err(Error::Invalid(format!("density matrix has eigenvalue {min}")));
                }
            }
        }
        Ok(())
    }

    fn odd_weight(&self) -> f64 {
        let mut odd = 0.0;
        match self {
            StateRepr::Pure(v) => {
                let (mut even_w, mut odd_w) = (0.0, 0.0);
                for (n, a) in v.iter().enumerate() {
                    if n.count_ones() % 2 == 0 {
                        even_w += a.norm_sqr();
                    } else {
                        odd_w += a.norm_sqr();
                    }
                }
                odd += (even_w * odd_w).sqrt();
            }
            StateRepr::Mixed(m) => {
                let n = m.nrows();
                for c in 0..n {
                    for r in 0..n {
                        if (r ^ c).count_ones() % 2 == 1 {
                            odd += m[(r, c)].norm_sqr();
                        }
                    }
                }
                odd = odd.sqrt();
            }
        }
        odd
    }
}

/// Named single-cell states for configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CellSpec {
    Vacuum,
    MaximallyMixed,
    /// `(cos θ + e^{iφ} sin θ a†↑a†↓)|0⟩` on every cell site.
    BcsCoherent {
        theta: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Fock state with the listed `(cell site index, spin)` modes occupied.
    Occupation {
        occupied: Vec<(usize, usize)>,
    },
    /// Base64 density matrix on the cell modes.
    Custom {
        matrix: String,
    },
    /// State vector given as `[re, im]` amplitudes per basis index; normalized on load.
    Pure {
        amplitudes: Vec<[f64; 2]>,
    },
}

/// State on the modes of one period cell, sites in lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    period: PeriodVector,
    spins: usize,
    repr: StateRepr,
}

impl CellState {
    pub fn new(period: PeriodVector, spins: usize, repr: StateRepr) -> Result<Self> {
        let modes = period.volume() * spins;
        if repr.dim() != 1usize << modes {
            return Err(Error::Invalid(format!("cell state must have dimension 2^{modes}")));
        }
        repr.check()?;
        if repr.odd_weight() > PSD_TOL {
            return Err(Error::Invalid("cell state must be even".into()));
        }
        Ok(CellState { period, spins, repr })
    }

    pub fn from_spec(spec: &CellSpec, period: &PeriodVector, spins: usize) -> Result<Self> {
        let sites = period.volume();
        let modes = sites * spins;
        let dim = 1usize << modes;
        let repr = match spec {
            CellSpec::Vacuum => {
                let mut v = DVector::zeros(dim);
                v[0] = C64::new(1.0, 0.0);
                StateRepr::Pure(v)
            }
            CellSpec::MaximallyMixed => StateRepr::Mixed(DMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0)),
            CellSpec::BcsCoherent { theta, phase } => {
                if spins != 2 {
                    return Err(Error::config("state.cell.kind", "bcs-coherent needs spins = 2"));
                }
                let mut site = DVector::zeros(4);
                site[0] = C64::new(theta.cos(), 0.0);
                site[3] = C64::from_polar(theta.sin(), *phase);
                let mut v = DVector::from_element(1, C64::new(1.0, 0.0));
                for _ in 0..sites {
                    v = site.kronecker(&v);
                }
                StateRepr::Pure(v)
            }
            CellSpec::Occupation { occupied } => {
                let mut n = 0usize;
                for &(site, spin) in occupied {
                    if site >= sites || spin >= spins {
                        return Err(Error::config(
                            "state.cell.occupied",
                            format!("mode ({site}, {spin}) outside the cell"),
                        ));
                    }
                    n |= 1 << (site * spins + spin);
                }
                let mut v = DVector::zeros(dim);
                v[n] = C64::new(1.0, 0.0);
                StateRepr::Mixed(&v * v.adjoint())
            }
            CellSpec::Custom { matrix } => {
                let m = decode_matrix(matrix).map_err(|e| Error::config("state.cell.matrix", e.to_string()))?;
                StateRepr::Mixed(m)
            }
            CellSpec::Pure { amplitudes } => {
                if amplitudes.len() != dim {
                    return Err(Error::config(
                        "state.cell.amplitudes",
                        format!("expected {dim} entries, got {}", amplitudes.len()),
                    ));
                }
                let v = DVector::from_iterator(dim, amplitudes.iter().map(|[re, im]| C64::new(*re, *im)));
                let norm = v.norm();
                if !(norm > 0.0 && norm.is_finite()) {
                    return Err(Error::config("state.cell.amplitudes", "need a finite nonzero vector"));
                }
                StateRepr::Pure(v / C64::new(norm, 0.0))
            }
        };
        CellState::new(period.clone(), spins, repr).map_err(|e| match e {
            Error::Invalid(msg) => Error::config("state.cell", msg),
            other => other,
        })
    }

    pub fn period(&self) -> &PeriodVector {
        &self.period
    }

    pub fn spins(&self) -> usize {
        self.spins
    }

    pub fn repr(&self) -> &StateRepr {
        &self.repr
    }

    /// Cell-local expectation of a local operator on the cell sites.
    pub fn expectation(&self, a: &LocalOperator) -> Result<C64> {
        let cell = SiteSet::new(self.period.cell_sites());
        let a = a.extend_to(&cell)?;
        Ok(match &self.repr {
            StateRepr::Pure(v) => v.dotc(&(a.matrix() * v)),
            StateRepr::Mixed(m) => (m * a.matrix()).trace(),
        })
    }
}

/// How a lattice state was built.
#[derive(Clone, Debug, PartialEq)]
pub enum StateTag {
    /// Product over period cells; the only tag treated as ergodic.
    Product(CellState),
    Coarse,
    Custom,
}

/// A state on the Fock space of a box with a declared period vector.
#[derive(Clone, Debug)]
pub struct LatticeState {
    space: ModeSpace,
    period: PeriodVector,
    repr: StateRepr,
    tag: StateTag,
}

impl LatticeState {
    pub fn new(space: ModeSpace, period: PeriodVector, repr: StateRepr, tag: StateTag) -> Result<Self> {
        if repr.dim() != space.dim() {
            return Err(Error::Invalid("state dimension does not match the box".into()));
        }
        if let StateRepr::Mixed(_) = repr {
            space.check_dense()?;
        }
        repr.check()?;
        Ok(LatticeState {
            space,
            period,
            repr,
            tag,
        })
    }

    pub fn space(&self) -> &ModeSpace {
        &self.space
    }

    pub fn period(&self) -> &PeriodVector {
        &self.period
    }

    pub fn repr(&self) -> &StateRepr {
        &self.repr
    }

    pub fn tag(&self) -> &StateTag {
        &self.tag
    }

    pub fn is_ergodic_tagged(&self) -> bool {
        matches!(self.tag, StateTag::Product(_))
    }

    /// The same construction on another box, when the tag allows it.
    pub fn rebuild(&self, space: &ModeSpace) -> Result<LatticeState> {
        match &self.tag {
            StateTag::Product(cell) => product_state(cell, space),
            _ => Err(Error::Invalid(
                "only product states can be rebuilt on another box".into(),
            )),
        }
    }

    pub fn expectation(&self, a: &FockOperator) -> C64 {
        match &self.repr {
            StateRepr::Pure(v) => a.matrix_element(v, v),
            StateRepr::Mixed(m) => {
                let mut acc = C64::new(0.0, 0.0);
                a.for_each_entry(|r, c, v| acc += m[(c, r)] * v);
                acc
            }
        }
    }

    pub fn expectation_local(&self, a: &LocalOperator) -> Result<C64> {
        Ok(self.expectation(&a.embed(&self.space)?))
    }

    /// `ρ(B† A B)`.
    pub fn matrix_element(&self, a: &FockOperator, b: &FockOperator) -> C64 {
        match &self.repr {
            StateRepr::Pure(v) => {
                let bv = b.apply(v);
                a.matrix_element(&bv, &bv)
            }
            StateRepr::Mixed(_) => self.expectation(&b.adjoint().mul(a).mul(b)),
        }
    }

    /// Reduced density matrix on a site set.
    pub fn reduced(&self, sites: &SiteSet) -> Result<DMatrix<C64>> {
        let positions = self.space.set_modes(sites)?;
        Ok(match &self.repr {
            StateRepr::Pure(v) => partial_trace_vector(v.as_slice(), self.space.modes(), &positions),
            StateRepr::Mixed(m) => partial_trace(m, self.space.modes(), &positions),
        })
    }

    /// Largest deviation of translated probe expectations from their value
    /// at the origin cell, over in-box translates by the period lattice.
    pub fn periodicity_defect(&self) -> Result<f64> {
        periodicity_defect(self, &self.period)
    }
}

/// Probe operators anchored at the origin cell: mode occupations, hopping
/// to the next site along each axis, and on-site pairing.
pub fn probe_set(period: &PeriodVector, spins: usize) -> Result<Vec<LocalOperator>> {
    let dim = period.dim();
    let mut out = Vec::new();
    for x in period.cell_sites() {
        let single = SiteSet::singleton(x.clone());
        for s in 0..spins {
            out.push(LocalOperator::number(&single, spins, &x, s)?);
        }
        for axis in 0..dim {
            let mut e = vec![0; dim];
            e[axis] = 1;
            let y = x.shifted(&Site(e));
            let pair = SiteSet::new(vec![x.clone(), y.clone()]);
            for s in 0..spins {
                let hop =
                    LocalOperator::creator(&pair, spins, &x, s)?.mul(&LocalOperator::annihilator(&pair, spins, &y, s)?);
                out.push(hop.add(&hop.adjoint()));
            }
        }
        if spins == 2 {
            let pc = LocalOperator::creator(&single, 2, &x, UP)?.mul(&LocalOperator::creator(&single, 2, &x, DOWN)?);
            out.push(pc);
        }
    }
    Ok(out)
}

pub fn periodicity_defect(state: &LatticeState, period: &PeriodVector) -> Result<f64> {
    let cube = state.space.cube();
    let probes = probe_set(period, state.space.spins())?;
    let shifts = period.points_in(cube);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for p in &probes {
        if !cube.contains_set(p.sites()) {
            continue;
        }
        let reference = state.expectation_local(p)?;
        for x in &shifts {
            let t = p.translate(x);
            if cube.contains_set(t.sites()) {
                worst = worst.max((state.expectation_local(&t)? - reference).norm());
                checked += 1;
            }
        }
    }
    if checked == 0 {
        return Err(Error::Geometry("no probe fits in the box".into()));
    }
    Ok(worst)
}

/// Restriction to a box of the infinite product over period cells anchored
/// on the period lattice. Cells cut by the boundary contribute their
/// fermionic partial trace.
pub fn product_state(cell: &CellState, space: &ModeSpace) -> Result<LatticeState> {
    let cube = space.cube();
    let period = cell.period();
    if period.dim() != cube.dim || cell.spins() != space.spins() {
        return Err(Error::Invalid("cell does not match the box".into()));
    }
    let spins = space.spins();
    let cell_sites = period.cell_sites();
    let l = cube.radius as i64;
    // anchors a with (a + cell) ∩ box ≠ ∅, in lexicographic order
    let ranges: Vec<Vec<i64>> = period
        .as_slice()
        .iter()
        .map(|&p| {
            let p = p as i64;
            let lo = (-l - p + 1).div_euclid(p) * p;
            (lo..=l).filter(|a| a.rem_euclid(p) == 0 && a + p > -l).collect()
        })
        .collect();
    let mut anchors = vec![Vec::new()];
    for r in &ranges {
        anchors = anchors
            .into_iter()
            .flat_map(|prefix: Vec<i64>| {
                r.iter().map(move |a| {
                    let mut v = prefix.clone();
                    v.push(*a);
                    v
                })
            })
            .collect();
    }
    let mut order = Vec::with_capacity(space.modes());
    let mut pure = matches!(cell.repr(), StateRepr::Pure(_));
    let mut parts: Vec<StateRepr> = Vec::new();
    for a in anchors {
        let a = Site(a);
        let mut keep = Vec::new();
        for (k, x) in cell_sites.iter().enumerate() {
            let y = x.shifted(&a);
            if cube.contains(&y) {
                for s in 0..spins {
                    keep.push(k * spins + s);
                    order.push(space.mode_index(&y, s)?);
                }
            }
        }
        let total = cell_sites.len() * spins;
        if keep.len() == total {
            parts.push(cell.repr().clone());
        } else {
            pure = false;
            let rho = match cell.repr() {
                StateRepr::Pure(v) => partial_trace_vector(v.as_slice(), total, &keep),
                StateRepr::Mixed(m) => partial_trace(m, total, &keep),
            };
            parts.push(StateRepr::Mixed(rho));
        }
    }
    let perm = FermionPermutation::new(order)?;
    let repr = if pure {
        let mut v = DVector::from_element(1, C64::new(1.0, 0.0));
        for p in &parts {
            if let StateRepr::Pure(c) = p {
                v = c.kronecker(&v);
            }
        }
        StateRepr::Pure(perm.apply_vector(&v))
    } else {
        space.check_dense()?;
        let mut m = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        for p in &parts {
            m = p.density().kronecker(&m);
        }
        StateRepr::Mixed(perm.conjugate_dense(&m))
    };
    LatticeState::new(space.clone(), period.clone(), repr, StateTag::Product(cell.clone()))
}

/// `A_L = (1/n) Σ_x α_x(A)` over the `n` period-lattice points `x` of the box
/// whose translate of the support stays inside the box.
pub fn space_average(a: &FockOperator, period: &PeriodVector) -> Result<FockOperator> {
    let cube = a.space().cube();
    let mut acc: Option<FockOperator> = None;
    let mut count = 0usize;
    for x in period.points_in(cube) {
        if let Ok(t) = translate_operator(a, &x) {
            acc = Some(match acc {
                None => t,
                Some(s) => s.add(&t),
            });
            count += 1;
        }
    }
    match acc {
        Some(s) => Ok(s.scale(C64::new(1.0 / count as f64, 0.0))),
        None => Err(Error::Geometry(format!(
            "support {} has no in-box translate",
            a.support()
        ))),
    }
}

/// `ρ(A_L† A_L) − |ρ(A)|²`.
pub fn ergodicity_defect(state: &LatticeState, a: &FockOperator, period: &PeriodVector) -> Result<f64> {
    let avg = space_average(a, period)?;
    let second = match state.repr() {
        StateRepr::Pure(v) => avg.apply(v).norm_squared(),
        StateRepr::Mixed(_) => state.expectation(&avg.adjoint().mul(&avg)).re,
    };
    Ok(second - state.expectation(a).norm_sqr())
}

/// `𝔵(ρ) = (|ℓ₂|/|ℓ₁|) Σ_{x} ρ ∘ α_x` over `x_i ∈ {0, ℓ₂ᵢ, …, ℓ₁ᵢ − ℓ₂ᵢ}`,
/// realized on the largest centred sub-box on which every translate of the
/// state is known.
pub fn coarse_grain(state: &LatticeState, l1: &PeriodVector, l2: &PeriodVector) -> Result<LatticeState> {
    if !l1.is_sublattice_of(l2) {
        return Err(Error::Invalid(format!(
            "period {:?} must divide {:?} componentwise",
            l2.as_slice(),
            l1.as_slice()
        )));
    }
    if !l1.is_sublattice_of(state.period()) {
        return Err(Error::Invalid(
            "state is not periodic under the first period vector".into(),
        ));
    }
    let cube = state.space().cube();
    let max_shift = l1
        .as_slice()
        .iter()
        .zip(l2.as_slice())
        .map(|(a, b)| a - b)
        .max()
        .unwrap_or(0);
    if max_shift > cube.radius {
        return Err(Error::Geometry("box too small for the coarse-graining shifts".into()));
    }
    let sub = CubicBox::new(cube.dim, cube.radius - max_shift)?;
    let sub_space = ModeSpace::new(sub, state.space().spins())?;
    sub_space.check_dense()?;
    let shifts = shift_set(l1, l2);
    let sub_sites = sub.site_set();
    let mut acc = DMatrix::zeros(sub_space.dim(), sub_space.dim());
    for x in &shifts {
        let translated = crate::lattice::translate_set(&sub_sites, x);
        acc += state.reduced(&translated)?;
    }
    acc /= C64::new(shifts.len() as f64, 0.0);
    LatticeState::new(sub_space, l2.clone(), StateRepr::Mixed(acc), StateTag::Coarse)
}

fn shift_set(l1: &PeriodVector, l2: &PeriodVector) -> Vec<Site> {
    let mut out = vec![Vec::new()];
    for (a, b) in l1.as_slice().iter().zip(l2.as_slice()) {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<i64>| {
                (0..*a).step_by(*b).map(move |x| {
                    let mut v = prefix.clone();
                    v.push(x as i64);
                    v
                })
            })
            .collect();
    }
    out.into_iter().map(Site).collect()
}

/// Finite convex combination of lattice states on a common box.
#[derive(Clone, Debug)]
pub struct Mixture {
    components: Vec<(f64, LatticeState)>,
}

impl Mixture {
    /// Weights must be positive and sum to one; components must differ on
    /// some probe expectation by more than `1e-6`.
    pub fn new(components: Vec<(f64, LatticeState)>) -> Result<Self> {
        let mix = Mixture::degenerate(components)?;
        let probes: Vec<Vec<C64>> = mix
            .components
            .iter()
            .map(|(_, s)| {
                probe_set(s.period(), s.space().spins())?
                    .iter()
                    .filter(|p| s.space().cube().contains_set(p.sites()))
                    .map(|p| s.expectation_local(p))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        for i in 0..probes.len() {
            for j in 0..i {
                let differs = probes[i].iter().zip(&probes[j]).any(|(a, b)| (a - b).norm() > 1e-6);
                if !differs {
                    return Err(Error::Invalid(format!(
                        "mixture components {j} and {i} coincide on all probes"
                    )));
                }
            }
        }
        Ok(mix)
    }

    /// As `new` but without the distinctness check, for degenerate
    /// decompositions such as `λρ + (1−λ)ρ`.
    pub fn degenerate(components: Vec<(f64, LatticeState)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Invalid("mixture needs a component".into()));
        }
        if components.iter().any(|(w, _)| !(*w > 0.0)) {
            return Err(Error::Invalid("mixture weights must be positive".into()));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > TRACE_TOL {
            return Err(Error::Invalid(format!("mixture weights sum to {total}")));
        }
        let space = components[0].1.space().clone();
        if components.iter().any(|(_, s)| s.space() != &space) {
            return Err(Error::Invalid("mixture components live on different boxes".into()));
        }
        Ok(Mixture { components })
    }

    pub fn components(&self) -> &[(f64, LatticeState)] {
        &self.components
    }

    pub fn expectation(&self, a: &FockOperator) -> C64 {
        let values: Vec<C64> = self.components.iter().map(|(_, s)| s.expectation(a)).collect();
        let weights: Vec<f64> = self.components.iter().map(|(w, _)| *w).collect();
        mix_values(&weights, &values)
    }
}

/// Per-component flows of a mixture, each fiber with its own
/// self-consistent scalars.
#[derive(Clone, Debug)]
pub struct MixtureEvolution {
    pub weights: Vec<f64>,
    pub states: Vec<LatticeState>,
    pub flows: Vec<FlowTrajectory>,
}

/// Solves the self-consistency equation for every component of `mix`
/// independently.
pub fn evolve_mixture(
    mix: &Mixture,
    model: &TimeDependentModel,
    s: f64,
    t: f64,
    cfg: &SolverConfig,
) -> Result<MixtureEvolution> {
    if let Some(i) = mix.components.iter().position(|(_, st)| !st.is_ergodic_tagged()) {
        return Err(Error::Invalid(format!("mixture component {i} is not a product state")));
    }
    let flows = mix
        .components
        .par_iter()
        .map(|(_, st)| solve_self_consistency(model, st, s, t, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(MixtureEvolution {
        weights: mix.components.iter().map(|c| c.0).collect(),
        states: mix.components.iter().map(|c| c.1.clone()).collect(),
        flows,
    })
}

impl MixtureEvolution {
    /// `ρ_i(B† τ_i(A) B)` for every fiber, on the working box.
    pub fn fiber_elements(&self, a: &FockOperator, b: &FockOperator, t: f64) -> Result<Vec<C64>> {
        self.flows
            .iter()
            .zip(&self.states)
            .map(|(flow, st)| effective_matrix_element(flow, st, a, b, flow.s, t))
            .collect()
    }

    /// `Σ_i λ_i ρ_i(B† τ_i(A) B)`.
    pub fn matrix_element(&self, a: &FockOperator, b: &FockOperator, t: f64) -> Result<C64> {
        let parts = self.fiber_elements(a, b, t)?;
        Ok(mix_values(&self.weights, &parts))
    }
}

/// `Σ_i λ_i x_i`, accumulated in component order.
pub fn mix_values(weights: &[f64], values: &[C64]) -> C64 {
    weights
        .iter()
        .zip(values)
        .fold(C64::new(0.0, 0.0), |acc, (w, v)| acc + v * *w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::CubicBox;

    fn space(radius: usize, spins: usize) -> ModeSpace {
        ModeSpace::new(CubicBox::new(1, radius).unwrap(), spins).unwrap()
    }

    fn site(x: i64) -> Site {
        Site(vec![x])
    }

    fn ones() -> PeriodVector {
        PeriodVector::ones(1)
    }

    #[test]
    fn vacuum_product() {
        let sp = space(1, 2);
        let cell = CellState::from_spec(&CellSpec::Vacuum, &ones(), 2).unwrap();
        let st = product_state(&cell, &sp).unwrap();
        for x in -1..=1 {
            for s in 0..2 {
                assert_eq!(st.expectation(&sp.number(&site(x), s).unwrap()).norm(), 0.0);
            }
        }
        assert!((st.expectation(&sp.identity()) - C64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn maximally_mixed_kills_traceless_operators() {
        let sp = space(1, 1);
        let cell = CellState::from_spec(&CellSpec::MaximallyMixed, &ones(), 1).unwrap();
        let st = product_state(&cell, &sp).unwrap();
        let hop = sp
            .creator(&site(-1), 0)
            .unwrap()
            .mul(&sp.annihilator(&site(1), 0).unwrap());
        assert!(st.expectation(&hop).norm() < 1e-15);
        let n = sp
            .number(&site(0), 0)
            .unwrap()
            .sub(&sp.identity().scale(C64::new(0.5, 0.0)));
        assert!(st.expectation(&n).norm() < 1e-15);
    }

    #[test]
    fn coherent_pairing_per_site() {
        let theta = 0.7;
        let sp = space(1, 2);
        let cell = CellState::from_spec(&CellSpec::BcsCoherent { theta, phase: 0.0 }, &ones(), 2).unwrap();
        let st = product_state(&cell, &sp).unwrap();
        for x in -1..=1 {
            let p = sp
                .annihilator(&site(x), 1)
                .unwrap()
                .mul(&sp.annihilator(&site(x), 0).unwrap());
            let want = theta.sin() * theta.cos();
            assert!((st.expectation(&p) - C64::new(want, 0.0)).norm() < 1e-14);
        }
        assert!(st.periodicity_defect().unwrap() < 1e-12);
    }

    #[test]
    fn partial_cells_give_consistent_marginals() {
        // 2-periodic cell with one occupied site; box {-1,0,1} cuts the cell at -2
        let period = PeriodVector::new(vec![2]).unwrap();
        let cell = CellState::from_spec(&CellSpec::Occupation { occupied: vec![(0, 0)] }, &period, 1).unwrap();
        let sp = space(1, 1);
        let st = product_state(&cell, &sp).unwrap();
        let occ: Vec<f64> = (-1..=1)
            .map(|x| st.expectation(&sp.number(&site(x), 0).unwrap()).re)
            .collect();
        assert_eq!(occ, vec![0.0, 1.0, 0.0]);
        assert!(st.periodicity_defect().unwrap() < 1e-12);
    }

    #[test]
    fn coarse_graining_alternating_state() {
        let period = PeriodVector::new(vec![2]).unwrap();
        let cell = CellState::from_spec(&CellSpec::Occupation { occupied: vec![(0, 0)] }, &period, 1).unwrap();
        let st = product_state(&cell, &space(2, 1)).unwrap();
        let cg = coarse_grain(&st, &period, &ones()).unwrap();
        let sub = cg.space().clone();
        for x in sub.cube().sites() {
            let n = cg.expectation(&sub.number(&x, 0).unwrap()).re;
            assert!((n - 0.5).abs() < 1e-14);
        }
        assert!(cg.periodicity_defect().unwrap() < 1e-12);
        // identity when the periods agree
        let same = coarse_grain(&st, &period, &period).unwrap();
        assert!(linalg::max_abs_dense(&(same.repr().density() - st.repr().density())) < 1e-14);
    }

    #[test]
    fn space_average_of_unit_and_contraction() {
        let sp = space(2, 1);
        let avg = space_average(&sp.identity(), &ones()).unwrap();
        assert!(avg.sub(&sp.identity()).max_abs() < 1e-15);
        let hop = sp
            .creator(&site(0), 0)
            .unwrap()
            .mul(&sp.annihilator(&site(1), 0).unwrap());
        let hop = hop.add(&hop.adjoint());
        assert!(space_average(&hop, &ones()).unwrap().norm() <= hop.norm() + 1e-12);
    }

    #[test]
    fn odd_cells_are_rejected() {
        let v = DVector::from_vec(vec![C64::new(0.6, 0.0), C64::new(0.8, 0.0)]);
        assert!(CellState::new(ones(), 1, StateRepr::Pure(v)).is_err());
    }

    #[test]
    fn mixture_validation() {
        let sp = space(0, 2);
        let a = product_state(
            &CellState::from_spec(&CellSpec::BcsCoherent { theta: 0.5, phase: 0.0 }, &ones(), 2).unwrap(),
            &sp,
        )
        .unwrap();
        let b = product_state(
            &CellState::from_spec(&CellSpec::BcsCoherent { theta: 0.5, phase: 1.0 }, &ones(), 2).unwrap(),
            &sp,
        )
        .unwrap();
        assert!(Mixture::new(vec![(0.5, a.clone()), (0.5, b)]).is_ok());
        assert!(Mixture::new(vec![(0.5, a.clone()), (0.5, a.clone())]).is_err());
        assert!(Mixture::degenerate(vec![(0.5, a.clone()), (0.5, a.clone())]).is_ok());
        assert!(Mixture::degenerate(vec![(0.7, a.clone()), (0.5, a)]).is_err());
    }
}
