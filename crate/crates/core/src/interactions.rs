//! Interactions, their W-norm, energy densities and long-range models.

use std::collections::BTreeMap;

use base64::Engine;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::LocalOperator;
use crate::lattice::{decay_constants, CubicBox, DecayFunction, PeriodVector, Site, SiteSet};

const EVEN_TOL: f64 = 1e-10;
const UNIT_NORM_TOL: f64 = 1e-9;

/// Spin labels used by the spinful families.
pub const UP: usize = 0;
pub const DOWN: usize = 1;

/// A finitely supported interaction: translation-invariant templates plus
/// an optional list of non-invariant terms.
///
/// Templates are anchored so that their lexicographically smallest site is
/// the origin; `Φ_{T+x}` is the template translated by `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    dim: usize,
    spins: usize,
    templates: BTreeMap<SiteSet, DMatrix<C64>>,
    finite: BTreeMap<SiteSet, DMatrix<C64>>,
}

fn anchor(op: &LocalOperator) -> LocalOperator {
    let first = op.sites().first().expect("nonempty support").clone();
    op.translate(&first.neg())
}

fn accumulate(map: &mut BTreeMap<SiteSet, DMatrix<C64>>, op: LocalOperator) {
    let sites = op.sites().clone();
    match map.get_mut(&sites) {
        Some(m) => *m += op.matrix(),
        None => {
            map.insert(sites, op.matrix().clone());
        }
    }
}

fn check_term(op: &LocalOperator, dim: usize, spins: usize) -> Result<()> {
    if op.sites().is_empty() {
        return Err(Error::Invalid("interaction terms need a nonempty support".into()));
    }
    if op.spins() != spins || op.sites().sites().iter().any(|s| s.dim() != dim) {
        return Err(Error::Invalid(
            "term does not match the lattice dimension or spin set".into(),
        ));
    }
    let odd: f64 = op
        .matrix()
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let n = op.matrix().nrows();
            ((k % n) ^ (k / n)).count_ones() % 2 == 1
        })
        .map(|(_, v)| v.norm_sqr())
        .sum();
    if 2.0 * odd.sqrt() > EVEN_TOL {
        return Err(Error::Invalid(format!(
            "interaction term on {} is not even",
            op.sites()
        )));
    }
    Ok(())
}

impl Interaction {
    pub fn zero(dim: usize, spins: usize) -> Self {
        Interaction {
            dim,
            spins,
            templates: BTreeMap::new(),
            finite: BTreeMap::new(),
        }
    }

    /// Translation-invariant interaction generated by the given templates.
    pub fn translation_invariant(dim: usize, spins: usize, templates: Vec<LocalOperator>) -> Result<Self> {
        let mut out = Interaction::zero(dim, spins);
        for t in templates {
            check_term(&t, dim, spins)?;
            accumulate(&mut out.templates, anchor(&t));
        }
        Ok(out)
    }

    /// Interaction with finitely many terms at fixed positions.
    pub fn finite(dim: usize, spins: usize, terms: Vec<LocalOperator>) -> Result<Self> {
        let mut out = Interaction::zero(dim, spins);
        for t in terms {
            check_term(&t, dim, spins)?;
            accumulate(&mut out.finite, t);
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spins(&self) -> usize {
        self.spins
    }

    pub fn is_zero(&self) -> bool {
        self.templates
            .values()
            .chain(self.finite.values())
            .all(|m| m.iter().all(|v| v.norm() == 0.0))
    }

    pub fn is_translation_invariant(&self) -> bool {
        self.finite.is_empty()
    }

    /// Anchored templates.
    pub fn templates(&self) -> Vec<LocalOperator> {
        to_ops(&self.templates, self.spins)
    }

    pub fn finite_terms(&self) -> Vec<LocalOperator> {
        to_ops(&self.finite, self.spins)
    }

    /// Largest coordinate extent of any template.
    pub fn range(&self) -> usize {
        self.templates
            .keys()
            .filter_map(|s| s.bounds())
            .map(|(lo, hi)| lo.iter().zip(&hi).map(|(a, b)| (b - a) as usize).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// `{Φ_Z : Z ∋ 0}` for the invariant part.
    pub fn generating_family(&self) -> Vec<LocalOperator> {
        let mut out = Vec::new();
        for op in self.templates() {
            for p in op.sites().sites() {
                out.push(op.translate(&p.neg()));
            }
        }
        out
    }

    /// All terms `Φ_Z` with `Z ⊆ Λ`, merged by site set.
    pub fn terms_in_box(&self, cube: &CubicBox) -> Vec<LocalOperator> {
        let mut map: BTreeMap<SiteSet, DMatrix<C64>> = BTreeMap::new();
        let sites = cube.sites();
        for op in self.templates() {
            for x in &sites {
                let t = op.translate(x);
                if cube.contains_set(t.sites()) {
                    accumulate(&mut map, t);
                }
            }
        }
        for op in self.finite_terms() {
            if cube.contains_set(op.sites()) {
                accumulate(&mut map, op);
            }
        }
        to_ops(&map, self.spins)
    }

    /// Box-restricted W-norm: `max_{x,y∈Λ} Σ_{Z⊇{x,y}, Z⊆Λ} ‖Φ_Z‖ / F(x,y)`.
    pub fn w_norm(&self, decay: &DecayFunction, cube: &CubicBox) -> f64 {
        let n = cube.volume();
        let mut acc = vec![0.0; n * n];
        for term in self.terms_in_box(cube) {
            let norm = term.norm();
            if norm == 0.0 {
                continue;
            }
            let ranks: Vec<usize> = term
                .sites()
                .sites()
                .iter()
                .map(|s| cube.rank(s).expect("in box"))
                .collect();
            for &i in &ranks {
                for &j in &ranks {
                    acc[i * n + j] += norm;
                }
            }
        }
        let sites = cube.sites();
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if acc[i * n + j] > 0.0 {
                    best = best.max(acc[i * n + j] / decay.eval(&sites[i], &sites[j]));
                }
            }
        }
        best
    }

    /// W-norm on the whole lattice, exact for translation-invariant
    /// interactions: a maximum over difference vectors.
    pub fn lattice_w_norm(&self, decay: &DecayFunction) -> Result<f64> {
        if !self.is_translation_invariant() {
            return Err(Error::Invalid(
                "lattice W-norm needs a translation-invariant interaction".into(),
            ));
        }
        let mut acc: BTreeMap<Site, f64> = BTreeMap::new();
        for op in self.templates() {
            let norm = op.norm();
            for p in op.sites().sites() {
                for q in op.sites().sites() {
                    *acc.entry(q.minus(p)).or_insert(0.0) += norm;
                }
            }
        }
        let origin = Site::origin(self.dim);
        Ok(acc
            .into_iter()
            .map(|(v, s)| s / decay.eval(&origin, &v))
            .fold(0.0, f64::max))
    }

    /// `Φ* = (Φ_Z*)`.
    pub fn involution(&self) -> Self {
        let adj = |m: &BTreeMap<SiteSet, DMatrix<C64>>| m.iter().map(|(k, v)| (k.clone(), v.adjoint())).collect();
        Interaction {
            dim: self.dim,
            spins: self.spins,
            templates: adj(&self.templates),
            finite: adj(&self.finite),
        }
    }

    pub fn scale(&self, z: C64) -> Self {
        let sc = |m: &BTreeMap<SiteSet, DMatrix<C64>>| m.iter().map(|(k, v)| (k.clone(), v * z)).collect();
        Interaction {
            dim: self.dim,
            spins: self.spins,
            templates: sc(&self.templates),
            finite: sc(&self.finite),
        }
    }

    pub fn add(&self, other: &Interaction) -> Result<Self> {
        if self.dim != other.dim || self.spins != other.spins {
            return Err(Error::Invalid("interactions live on different lattices".into()));
        }
        let mut out = self.clone();
        for op in other.templates() {
            accumulate(&mut out.templates, op);
        }
        for op in other.finite_terms() {
            accumulate(&mut out.finite, op);
        }
        Ok(out)
    }

    /// Largest entry of `Φ_Z − Φ'_Z` over all site sets.
    pub fn distance(&self, other: &Interaction) -> f64 {
        let diff = |a: &BTreeMap<SiteSet, DMatrix<C64>>, b: &BTreeMap<SiteSet, DMatrix<C64>>| {
            let mut worst: f64 = 0.0;
            for (k, m) in a {
                let d = match b.get(k) {
                    Some(n) => crate::linalg::max_abs_dense(&(m - n)),
                    None => crate::linalg::max_abs_dense(m),
                };
                worst = worst.max(d);
            }
            for (k, n) in b {
                if !a.contains_key(k) {
                    worst = worst.max(crate::linalg::max_abs_dense(n));
                }
            }
            worst
        };
        diff(&self.templates, &other.templates).max(diff(&self.finite, &other.finite))
    }

    pub fn is_self_adjoint(&self, tol: f64) -> bool {
        self.distance(&self.involution()) <= tol
    }

    /// `e_{Φ,ℓ} = |ℓ|^{-1} Σ_{x ∈ cell} Σ_{Z ∋ x} Φ_Z / |Z|`.
    pub fn energy_density(&self, period: &PeriodVector) -> Result<EnergyDensity> {
        if !self.is_translation_invariant() {
            return Err(Error::Invalid(
                "energy density needs a translation-invariant interaction".into(),
            ));
        }
        if period.dim() != self.dim {
            return Err(Error::Invalid("period vector dimension mismatch".into()));
        }
        let family = self.generating_family();
        let cell = period.cell_sites();
        let mut parts = Vec::new();
        for x in &cell {
            for op in &family {
                let size = op.sites().len() as f64;
                parts.push(op.translate(x).scale(C64::new(1.0 / size, 0.0)));
            }
        }
        let cell_set = SiteSet::new(cell.iter().cloned());
        let support = parts.iter().fold(cell_set, |acc, p| acc.union(p.sites()));
        let mut total = DMatrix::zeros(1 << (support.len() * self.spins), 1 << (support.len() * self.spins));
        for p in parts {
            total += p.extend_to(&support)?.matrix();
        }
        total /= C64::new(period.volume() as f64, 0.0);
        Ok(EnergyDensity {
            op: LocalOperator::new(support, self.spins, total)?,
            period: period.clone(),
        })
    }

    pub fn to_spec(&self) -> InteractionSpec {
        let custom = |ops: Vec<LocalOperator>, ti: bool| {
            ops.into_iter().map(move |op| TermSpec::CustomDense {
                sites: op.sites().sites().iter().map(|s| s.0.clone()).collect(),
                translation_invariant: ti,
                matrix: encode_matrix(op.matrix()),
            })
        };
        InteractionSpec {
            dim: self.dim,
            spins: self.spins,
            terms: custom(self.templates(), true)
                .chain(custom(self.finite_terms(), false))
                .collect(),
        }
    }

    // ---- named families ----

    /// `c · Σ_s n_{0,s}` on every site.
    pub fn onsite_number(dim: usize, spins: usize, coeff: f64) -> Result<Self> {
        let site = SiteSet::singleton(Site::origin(dim));
        let mut m = LocalOperator::identity(site.clone(), spins)?.scale(C64::new(0.0, 0.0));
        for s in 0..spins {
            m = m.add(&LocalOperator::number(&site, spins, &Site::origin(dim), s)?);
        }
        Interaction::translation_invariant(dim, spins, vec![m.scale(C64::new(coeff, 0.0))])
    }

    /// `c · n_{0,↑} n_{0,↓}`.
    pub fn hubbard(dim: usize, coeff: f64) -> Result<Self> {
        let o = Site::origin(dim);
        let site = SiteSet::singleton(o.clone());
        let n_up = LocalOperator::number(&site, 2, &o, UP)?;
        let n_dn = LocalOperator::number(&site, 2, &o, DOWN)?;
        Interaction::translation_invariant(dim, 2, vec![n_up.mul(&n_dn).scale(C64::new(coeff, 0.0))])
    }

    /// `-t Σ_i Σ_s (a†_{0,s} a_{e_i,s} + h.c.)`, nearest neighbours.
    pub fn hopping(dim: usize, spins: usize, t: f64) -> Result<Self> {
        let o = Site::origin(dim);
        let mut templates = Vec::new();
        for axis in 0..dim {
            let mut e = vec![0; dim];
            e[axis] = 1;
            let e = Site(e);
            let pair = SiteSet::new(vec![o.clone(), e.clone()]);
            for s in 0..spins {
                let hop =
                    LocalOperator::creator(&pair, spins, &o, s)?.mul(&LocalOperator::annihilator(&pair, spins, &e, s)?);
                let herm = hop.add(&hop.adjoint());
                templates.push(herm.scale(C64::new(-t, 0.0)));
            }
        }
        Interaction::translation_invariant(dim, spins, templates)
    }

    /// `c · n_0 n_{e_i}` for spinless fermions along each axis.
    pub fn density_density(dim: usize, coeff: f64) -> Result<Self> {
        let o = Site::origin(dim);
        let mut templates = Vec::new();
        for axis in 0..dim {
            let mut e = vec![0; dim];
            e[axis] = 1;
            let e = Site(e);
            let pair = SiteSet::new(vec![o.clone(), e.clone()]);
            let n0 = LocalOperator::number(&pair, 1, &o, 0)?;
            let n1 = LocalOperator::number(&pair, 1, &e, 0)?;
            templates.push(n0.mul(&n1).scale(C64::new(coeff, 0.0)));
        }
        Interaction::translation_invariant(dim, 1, templates)
    }

    /// On-site pair creation `a†_{0,↑} a†_{0,↓}` (or its adjoint `a_{0,↓} a_{0,↑}`).
    pub fn pairing(dim: usize, adjoint: bool) -> Result<Self> {
        let op = pair_creator(dim)?;
        let op = if adjoint { op.adjoint() } else { op };
        Interaction::translation_invariant(dim, 2, vec![op])
    }

    /// Random self-adjoint translation-invariant interaction with templates
    /// on the origin and, for `range >= 1`, on pairs within that range.
    pub fn random_ti<R: Rng>(dim: usize, spins: usize, range: usize, rng: &mut R) -> Result<Self> {
        let o = Site::origin(dim);
        let mut templates = vec![LocalOperator::random_hermitian_even(
            SiteSet::singleton(o.clone()),
            spins,
            rng,
        )?];
        if range >= 1 {
            let mut e = vec![0; dim];
            e[rng.gen_range(0..dim)] = rng.gen_range(1..=range as i64);
            let pair = SiteSet::new(vec![o, Site(e)]);
            templates.push(LocalOperator::random_hermitian_even(pair, spins, rng)?);
        }
        let scale = rng.gen_range(0.1..2.0);
        Ok(Interaction::translation_invariant(dim, spins, templates)?.scale(C64::new(scale, 0.0)))
    }
}

fn to_ops(map: &BTreeMap<SiteSet, DMatrix<C64>>, spins: usize) -> Vec<LocalOperator> {
    map.iter()
        .map(|(k, m)| LocalOperator::new(k.clone(), spins, m.clone()).expect("validated at insertion"))
        .collect()
}

/// `a†_{0,↑} a†_{0,↓}` on the origin.
pub fn pair_creator(dim: usize) -> Result<LocalOperator> {
    let o = Site::origin(dim);
    let site = SiteSet::singleton(o.clone());
    Ok(LocalOperator::creator(&site, 2, &o, UP)?.mul(&LocalOperator::creator(&site, 2, &o, DOWN)?))
}

/// `e_{Φ,ℓ}` on its support `Λ^(ℓ)`.
#[derive(Clone, Debug)]
pub struct EnergyDensity {
    pub op: LocalOperator,
    pub period: PeriodVector,
}

impl EnergyDensity {
    pub fn support(&self) -> &SiteSet {
        self.op.sites()
    }

    pub fn norm(&self) -> f64 {
        self.op.norm()
    }
}

/// One atom of the discrete measure: weight and a tuple of unit-norm,
/// translation-invariant interactions.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub factors: Vec<Interaction>,
}

impl Atom {
    /// Normalizes each factor to unit lattice W-norm and absorbs the norms
    /// into the weight.
    pub fn normalized(weight: f64, factors: Vec<Interaction>, decay: &DecayFunction) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Invalid("atoms need at least one factor".into()));
        }
        let mut w = weight;
        let mut out = Vec::with_capacity(factors.len());
        for f in factors {
            let n = f.lattice_w_norm(decay)?;
            if n == 0.0 {
                return Err(Error::Invalid("atom factor has zero W-norm".into()));
            }
            w *= n;
            out.push(f.scale(C64::new(1.0 / n, 0.0)));
        }
        Ok(Atom {
            weight: w,
            factors: out,
        })
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    /// `(w, (Ψ_n*, …, Ψ_1*))`.
    pub fn reversed_adjoint(&self) -> Atom {
        Atom {
            weight: self.weight,
            factors: self.factors.iter().rev().map(Interaction::involution).collect(),
        }
    }

    fn distance(&self, other: &Atom) -> f64 {
        if self.order() != other.order() {
            return f64::INFINITY;
        }
        self.factors
            .iter()
            .zip(&other.factors)
            .map(|(a, b)| a.distance(b))
            .fold((self.weight - other.weight).abs(), f64::max)
    }
}

/// `m = (Φ, a)` with `a` a finite list of atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct LongRangeModel {
    pub short: Interaction,
    pub atoms: Vec<Atom>,
}

impl LongRangeModel {
    pub fn short_range(short: Interaction) -> Self {
        LongRangeModel {
            short,
            atoms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.short.dim()
    }

    pub fn spins(&self) -> usize {
        self.short.spins()
    }

    /// Same model with the long-range part removed.
    pub fn without_long_range(&self) -> Self {
        LongRangeModel::short_range(self.short.clone())
    }

    /// Checks unit factor norms and lattice/spin consistency.
    pub fn validate(&self, decay: &DecayFunction) -> Result<()> {
        for (i, atom) in self.atoms.iter().enumerate() {
            if !atom.weight.is_finite() {
                return Err(Error::Invalid(format!("atom {i} has a non-finite weight")));
            }
            for f in &atom.factors {
                if f.dim() != self.dim() || f.spins() != self.spins() {
                    return Err(Error::Invalid(format!("atom {i} lives on a different lattice")));
                }
                let n = f.lattice_w_norm(decay)?;
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::Invalid(format!("atom {i} factor has W-norm {n}, expected 1")));
                }
            }
        }
        Ok(())
    }

    /// Distinct factor interactions, in atom order, with `(atom, slot)` indices.
    pub fn factor_slots(&self) -> Vec<(usize, usize)> {
        self.atoms
            .iter()
            .enumerate()
            .flat_map(|(a, atom)| (0..atom.order()).map(move |k| (a, k)))
            .collect()
    }
}

/// `Σ_n n² normF1^{n-1} Σ_{atoms of order n} |w|`.
pub fn s_norm(atoms: &[Atom], norm_f1: f64) -> f64 {
    atoms
        .iter()
        .map(|a| {
            let n = a.order() as f64;
            n * n * norm_f1.powi(a.order() as i32 - 1) * a.weight.abs()
        })
        .sum()
}

/// `‖Φ‖_W + ‖a‖_S` with box-restricted constants.
pub fn m_norm(m: &LongRangeModel, decay: &DecayFunction, cube: &CubicBox) -> f64 {
    let consts = decay_constants(decay, cube);
    m.short.w_norm(decay, cube) + s_norm(&m.atoms, consts.norm_f1)
}

/// Self-adjointness of the model: `Φ = Φ*` and every atom has a partner
/// equal to its reversed adjoint.
pub fn model_selfadjoint_check(m: &LongRangeModel) -> bool {
    const TOL: f64 = 1e-10;
    if !m.short.is_self_adjoint(TOL) {
        return false;
    }
    let mut used = vec![false; m.atoms.len()];
    for atom in &m.atoms {
        let rev = atom.reversed_adjoint();
        let partner = m
            .atoms
            .iter()
            .enumerate()
            .position(|(j, b)| !used[j] && rev.distance(b) <= TOL);
        match partner {
            Some(j) => used[j] = true,
            None => return false,
        }
    }
    true
}

/// Reduced BCS model: short range `-μ(n↑+n↓)` plus optional hopping, and one
/// order-2 atom `(−γ, (a†↑a†↓, a↓a↑))`, whose local energy is
/// `−(γ/|Λ|) Σ_{x,y} a†_{x↑}a†_{x↓}a_{y↓}a_{y↑}`.
pub fn build_bcs_model(
    dim: usize,
    gamma: f64,
    mu: f64,
    hopping: Option<f64>,
    decay: &DecayFunction,
) -> Result<LongRangeModel> {
    let mut short = Interaction::onsite_number(dim, 2, -mu)?;
    if let Some(t) = hopping {
        if t != 0.0 {
            short = short.add(&Interaction::hopping(dim, 2, t)?)?;
        }
    }
    let mut atoms = Vec::new();
    if gamma != 0.0 {
        let p = Interaction::pairing(dim, false)?;
        let p_adj = p.involution();
        atoms.push(Atom::normalized(-gamma, vec![p, p_adj], decay)?);
    }
    Ok(LongRangeModel { short, atoms })
}

// ---- serialization ----

/// Little-endian `(re, im)` pairs in row-major order, base64 encoded.
pub fn encode_matrix(m: &DMatrix<C64>) -> String {
    let mut bytes = Vec::with_capacity(m.len() * 16);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            bytes.extend_from_slice(&m[(r, c)].re.to_le_bytes());
            bytes.extend_from_slice(&m[(r, c)].im.to_le_bytes());
        }
    }
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_matrix(s: &str) -> Result<DMatrix<C64>> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(s.trim())
        .map_err(|e| Error::Invalid(format!("matrix is not valid base64: {e}")))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Invalid("matrix byte length is not a multiple of 16".into()));
    }
    let n2 = bytes.len() / 16;
    let n = (n2 as f64).sqrt().round() as usize;
    if n * n != n2 {
        return Err(Error::Invalid("matrix is not square".into()));
    }
    let vals: Vec<C64> = bytes
        .chunks_exact(16)
        .map(|ch| {
            let re = f64::from_le_bytes(ch[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(ch[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        })
        .collect();
    Ok(DMatrix::from_row_slice(n, n, &vals))
}

/// One named family of terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TermSpec {
    /// `coeff · Σ_s n_s` on every site.
    Onsite {
        #[serde(default)]
        number: f64,
        /// `coeff · n↑n↓`, spinful only.
        #[serde(default)]
        hubbard: f64,
    },
    /// Nearest-neighbour hopping with amplitude `-t`.
    Hopping { t: f64 },
    /// Spinless nearest-neighbour density-density coupling.
    DensityDensity { v: f64 },
    /// On-site pair creation (or annihilation when `adjoint`).
    Pairing {
        #[serde(default = "one")]
        coeff: f64,
        #[serde(default)]
        adjoint: bool,
    },
    CustomDense {
        sites: Vec<Vec<i64>>,
        #[serde(default = "yes")]
        translation_invariant: bool,
        /// Base64 of little-endian `(re, im)` f64 pairs, row-major.
        matrix: String,
    },
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSpec {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_spins")]
    pub spins: usize,
    #[serde(default)]
    pub terms: Vec<TermSpec>,
}

fn default_dim() -> usize {
    1
}

fn default_spins() -> usize {
    2
}

impl InteractionSpec {
    pub fn build(&self) -> Result<Interaction> {
        let (dim, spins) = (self.dim, self.spins);
        if dim == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        if spins == 0 || spins > 2 {
            return Err(Error::config("spins", "must be 1 or 2"));
        }
        let mut out = Interaction::zero(dim, spins);
        for (i, term) in self.terms.iter().enumerate() {
            let field = |name: &str| format!("terms[{i}].{name}");
            let part = match term {
                TermSpec::Onsite { number, hubbard } => {
                    let mut p = Interaction::onsite_number(dim, spins, *number)?;
                    if *hubbard != 0.0 {
                        if spins != 2 {
                            return Err(Error::config(field("hubbard"), "needs spins = 2"));
                        }
                        p = p.add(&Interaction::hubbard(dim, *hubbard)?)?;
                    }
                    p
                }
                TermSpec::Hopping { t } => Interaction::hopping(dim, spins, *t)?,
                TermSpec::DensityDensity { v } => {
                    if spins != 1 {
                        return Err(Error::config(field("family"), "density-density needs spins = 1"));
                    }
                    Interaction::density_density(dim, *v)?
                }
                TermSpec::Pairing { coeff, adjoint } => {
                    if spins != 2 {
                        return Err(Error::config(field("family"), "pairing needs spins = 2"));
                    }
                    Interaction::pairing(dim, *adjoint)?.scale(C64::new(*coeff, 0.0))
                }
                TermSpec::CustomDense {
                    sites,
                    translation_invariant,
                    matrix,
                } => {
                    if sites.is_empty() || sites.iter().any(|s| s.len() != dim) {
                        return Err(Error::config(
                            field("sites"),
                            format!("need nonempty list of {dim}-dimensional sites"),
                        ));
                    }
                    let set = SiteSet::new(sites.iter().cloned().map(Site));
                    let m = decode_matrix(matrix).map_err(|e| Error::config(field("matrix"), e.to_string()))?;
                    let op =
                        LocalOperator::new(set, spins, m).map_err(|e| Error::config(field("matrix"), e.to_string()))?;
                    let built = if *translation_invariant {
                        Interaction::translation_invariant(dim, spins, vec![op])
                    } else {
                        Interaction::finite(dim, spins, vec![op])
                    };
                    built.map_err(|e| Error::config(field("matrix"), e.to_string()))?
                }
            };
            out = out.add(&part)?;
        }
        Ok(out)
    }
}
