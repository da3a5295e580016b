//! Jordan-Wigner realization of the CAR algebra on a finite box.
//!
//! Modes are ordered by `site_rank * spins + spin`, with sites in lexicographic
//! order. Bit `j` of a basis index is the occupation of mode `j` and the basis
//! vector is `(a†_0)^{n_0} ⋯ (a†_{M-1})^{n_{M-1}} |0⟩`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::{translate_set, CubicBox, Site, SiteSet};
use crate::linalg::{self, Csr};

/// Mode cap for operations on dense Fock-space matrices.
pub const MODE_CAP_DENSE: usize = 14;
/// Mode cap for state vectors and sparse Hamiltonians.
pub const MODE_CAP_VECTOR: usize = 20;

const PARITY_TOL: f64 = 1e-10;

/// Fraction of nonzeros above which sparse products are stored densely.
const DENSIFY_FILL: f64 = 0.25;

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

fn one() -> C64 {
    C64::new(1.0, 0.0)
}

fn parity_sign(n: usize) -> f64 {
    if n.count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// The modes of a box: sites times an internal spin label set of size `spins`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModeSpace {
    cube: CubicBox,
    spins: usize,
}

impl ModeSpace {
    pub fn new(cube: CubicBox, spins: usize) -> Result<Self> {
        if spins == 0 {
            return Err(Error::Invalid("spin label set must be nonempty".into()));
        }
        let modes = cube.volume() * spins;
        if modes > MODE_CAP_VECTOR {
            return Err(Error::ResourceLimit(format!(
                "{modes} modes exceed the cap of {MODE_CAP_VECTOR}"
            )));
        }
        Ok(ModeSpace { cube, spins })
    }

    pub fn cube(&self) -> &CubicBox {
        &self.cube
    }

    pub fn spins(&self) -> usize {
        self.spins
    }

    pub fn modes(&self) -> usize {
        self.cube.volume() * self.spins
    }

    pub fn dim(&self) -> usize {
        1usize << self.modes()
    }

    /// Errors unless dense matrices on this space are within the cap.
    pub fn check_dense(&self) -> Result<()> {
        if self.modes() > MODE_CAP_DENSE {
            return Err(Error::ResourceLimit(format!(
                "{} modes exceed the dense-matrix cap of {MODE_CAP_DENSE}",
                self.modes()
            )));
        }
        Ok(())
    }

    pub fn mode_index(&self, site: &Site, spin: usize) -> Result<usize> {
        if spin >= self.spins {
            return Err(Error::Invalid(format!("spin label {spin} out of range")));
        }
        let rank = self
            .cube
            .rank(site)
            .ok_or_else(|| Error::Geometry(format!("site {site} outside {}", self.cube)))?;
        Ok(rank * self.spins + spin)
    }

    /// Sorted mode indices of a site set.
    pub fn set_modes(&self, set: &SiteSet) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(set.len() * self.spins);
        for site in set.sites() {
            for s in 0..self.spins {
                out.push(self.mode_index(site, s)?);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn identity(&self) -> FockOperator {
        FockOperator::from_csr(self, SiteSet::default(), linalg::csr_identity(self.dim()))
    }

    pub fn zero(&self) -> FockOperator {
        FockOperator::from_csr(self, SiteSet::default(), linalg::csr_zero(self.dim()))
    }

    pub fn annihilator(&self, site: &Site, spin: usize) -> Result<FockOperator> {
        let j = self.mode_index(site, spin)?;
        let below = (1usize << j) - 1;
        let triplets = (0..self.dim()).filter(|n| n >> j & 1 == 1).map(|n| {
            let sign = parity_sign(n & below);
            (n ^ (1 << j), n, C64::new(sign, 0.0))
        });
        let csr = linalg::csr_from_triplets(self.dim(), triplets);
        Ok(FockOperator::from_csr(self, SiteSet::singleton(site.clone()), csr))
    }

    pub fn creator(&self, site: &Site, spin: usize) -> Result<FockOperator> {
        Ok(self.annihilator(site, spin)?.adjoint())
    }

    pub fn number(&self, site: &Site, spin: usize) -> Result<FockOperator> {
        let j = self.mode_index(site, spin)?;
        let triplets = (0..self.dim()).filter(|n| n >> j & 1 == 1).map(|n| (n, n, one()));
        let csr = linalg::csr_from_triplets(self.dim(), triplets);
        Ok(FockOperator::from_csr(self, SiteSet::singleton(site.clone()), csr))
    }

    /// Total particle number.
    pub fn total_number(&self) -> FockOperator {
        let csr = linalg::csr_from_triplets(
            self.dim(),
            (0..self.dim()).map(|n| (n, n, C64::new(n.count_ones() as f64, 0.0))),
        );
        FockOperator::from_csr(self, self.cube.site_set(), csr)
    }

    /// The global parity unitary `(-1)^N`.
    pub fn parity_unitary(&self) -> FockOperator {
        let csr = linalg::csr_from_triplets(
            self.dim(),
            (0..self.dim()).map(|n| (n, n, C64::new(parity_sign(n), 0.0))),
        );
        FockOperator::from_csr(self, SiteSet::default(), csr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
    Mixed,
}

#[derive(Clone, Debug)]
enum Repr {
    Sparse(Csr),
    Dense(DMatrix<C64>),
}

/// An element of the CAR algebra of a box, tagged with a declared support.
#[derive(Clone, Debug)]
pub struct FockOperator {
    space: ModeSpace,
    support: SiteSet,
    repr: Repr,
    parity: Parity,
}

impl FockOperator {
    pub fn from_csr(space: &ModeSpace, support: SiteSet, csr: Csr) -> Self {
        assert_eq!(csr.nrows(), space.dim(), "matrix does not match the box");
        let repr = Repr::Sparse(csr);
        let parity = classify(&repr);
        FockOperator {
            space: space.clone(),
            support,
            repr,
            parity,
        }
    }

    pub fn from_dense(space: &ModeSpace, support: SiteSet, m: DMatrix<C64>) -> Result<Self> {
        space.check_dense()?;
        if m.nrows() != space.dim() || m.ncols() != space.dim() {
            return Err(Error::Invalid(format!(
                "matrix is {}x{}, box needs {}",
                m.nrows(),
                m.ncols(),
                space.dim()
            )));
        }
        let repr = Repr::Dense(m);
        let parity = classify(&repr);
        Ok(FockOperator {
            space: space.clone(),
            support,
            repr,
            parity,
        })
    }

    fn with_repr(&self, support: SiteSet, repr: Repr) -> Self {
        let parity = classify(&repr);
        FockOperator {
            space: self.space.clone(),
            support,
            repr,
            parity,
        }
    }

    pub fn space(&self) -> &ModeSpace {
        &self.space
    }

    pub fn support(&self) -> &SiteSet {
        &self.support
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.repr, Repr::Sparse(_))
    }

    pub fn as_csr(&self) -> Option<&Csr> {
        match &self.repr {
            Repr::Sparse(c) => Some(c),
            Repr::Dense(_) => None,
        }
    }

    /// Sparse form, converting from dense if needed.
    pub fn to_csr(&self) -> Csr {
        match &self.repr {
            Repr::Sparse(c) => c.clone(),
            Repr::Dense(d) => linalg::csr_from_triplets(
                d.nrows(),
                d.iter().enumerate().map(|(k, v)| (k % d.nrows(), k / d.nrows(), *v)),
            ),
        }
    }

    pub fn to_dense(&self) -> Result<DMatrix<C64>> {
        self.space.check_dense()?;
        Ok(match &self.repr {
            Repr::Sparse(c) => DMatrix::from(c),
            Repr::Dense(d) => d.clone(),
        })
    }

    /// Replaces the declared support.
    pub fn with_support(mut self, support: SiteSet) -> Self {
        self.support = support;
        self
    }

    fn same_space(&self, other: &FockOperator) {
        assert_eq!(self.space, other.space, "operators live on different boxes");
    }

    pub fn adjoint(&self) -> FockOperator {
        let repr = match &self.repr {
            Repr::Sparse(c) => Repr::Sparse(linalg::csr_adjoint(c)),
            Repr::Dense(d) => Repr::Dense(d.adjoint()),
        };
        let mut out = self.with_repr(self.support.clone(), repr);
        out.parity = self.parity;
        out
    }

    pub fn scale(&self, z: C64) -> FockOperator {
        let repr = match &self.repr {
            Repr::Sparse(c) => Repr::Sparse(linalg::csr_scale(c, z)),
            Repr::Dense(d) => Repr::Dense(d * z),
        };
        let mut out = self.with_repr(self.support.clone(), repr);
        if z != zero() {
            out.parity = self.parity;
        }
        out
    }

    /// `self + z · other`.
    pub fn add_scaled(&self, other: &FockOperator, z: C64) -> FockOperator {
        self.same_space(other);
        let support = self.support.union(&other.support);
        let repr = match (&self.repr, &other.repr) {
            (Repr::Sparse(a), Repr::Sparse(b)) => Repr::Sparse(a + &linalg::csr_scale(b, z)),
            (Repr::Dense(a), Repr::Sparse(b)) => {
                let mut out = a.clone();
                for (r, c, v) in b.triplet_iter() {
                    out[(r, c)] += z * v;
                }
                Repr::Dense(out)
            }
            (Repr::Sparse(a), Repr::Dense(b)) => {
                let mut out = b * z;
                for (r, c, v) in a.triplet_iter() {
                    out[(r, c)] += v;
                }
                Repr::Dense(out)
            }
            (Repr::Dense(a), Repr::Dense(b)) => Repr::Dense(a + b * z),
        };
        self.with_repr(support, repr)
    }

    pub fn add(&self, other: &FockOperator) -> FockOperator {
        self.add_scaled(other, one())
    }

    pub fn sub(&self, other: &FockOperator) -> FockOperator {
        self.add_scaled(other, -one())
    }

    pub fn mul(&self, other: &FockOperator) -> FockOperator {
        self.same_space(other);
        let support = self.support.union(&other.support);
        let repr = match (&self.repr, &other.repr) {
            (Repr::Sparse(a), Repr::Sparse(b)) => {
                let p = a * b;
                let fill = p.nnz() as f64 / (p.nrows() as f64 * p.ncols() as f64);
                if fill > DENSIFY_FILL && self.space.modes() <= MODE_CAP_DENSE {
                    Repr::Dense(DMatrix::from(&p))
                } else {
                    Repr::Sparse(p)
                }
            }
            (Repr::Sparse(a), Repr::Dense(b)) => Repr::Dense(linalg::csr_mul_dense(a, b)),
            (Repr::Dense(a), Repr::Sparse(b)) => Repr::Dense(linalg::dense_mul_csr(a, b)),
            (Repr::Dense(a), Repr::Dense(b)) => Repr::Dense(a * b),
        };
        self.with_repr(support, repr)
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &FockOperator) -> FockOperator {
        self.mul(other).sub(&other.mul(self))
    }

    /// `{self, other}`.
    pub fn anticommutator(&self, other: &FockOperator) -> FockOperator {
        self.mul(other).add(&other.mul(self))
    }

    pub fn apply(&self, v: &DVector<C64>) -> DVector<C64> {
        match &self.repr {
            Repr::Sparse(c) => linalg::csr_matvec(c, v),
            Repr::Dense(d) => d * v,
        }
    }

    pub fn apply_matrix(&self, v: &DMatrix<C64>) -> DMatrix<C64> {
        match &self.repr {
            Repr::Sparse(c) => linalg::csr_mul_dense(c, v),
            Repr::Dense(d) => d * v,
        }
    }

    /// `⟨u, A v⟩`.
    pub fn matrix_element(&self, u: &DVector<C64>, v: &DVector<C64>) -> C64 {
        u.dotc(&self.apply(v))
    }

    pub fn trace(&self) -> C64 {
        match &self.repr {
            Repr::Sparse(c) => c
                .triplet_iter()
                .filter(|(r, col, _)| r == col)
                .map(|(_, _, v)| *v)
                .sum(),
            Repr::Dense(d) => d.trace(),
        }
    }

    /// Spectral norm (exact below a size threshold, power iteration above).
    pub fn norm(&self) -> f64 {
        match &self.repr {
            Repr::Sparse(c) => linalg::spectral_norm_csr(c),
            Repr::Dense(d) => linalg::spectral_norm_dense(d),
        }
    }

    /// Cheap upper bound `sqrt(‖A‖_1 ‖A‖_∞)` on the spectral norm.
    pub fn norm_upper_bound(&self) -> f64 {
        let n = self.dim();
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; n];
        self.for_each_entry(|r, c, v| {
            rows[r] += v.norm();
            cols[c] += v.norm();
        });
        let r = rows.into_iter().fold(0.0, f64::max);
        let c = cols.into_iter().fold(0.0, f64::max);
        (r * c).sqrt()
    }

    pub fn frobenius(&self) -> f64 {
        let mut acc = 0.0;
        self.for_each_entry(|_, _, v| acc += v.norm_sqr());
        acc.sqrt()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        let mut acc: f64 = 0.0;
        self.for_each_entry(|_, _, v| acc = acc.max(v.norm()));
        acc
    }

    pub fn for_each_entry(&self, mut f: impl FnMut(usize, usize, C64)) {
        match &self.repr {
            Repr::Sparse(c) => c.triplet_iter().for_each(|(r, col, v)| f(r, col, *v)),
            Repr::Dense(d) => {
                let n = d.nrows();
                d.iter().enumerate().for_each(|(k, v)| f(k % n, k / n, *v))
            }
        }
    }

    pub fn entry(&self, r: usize, c: usize) -> C64 {
        match &self.repr {
            Repr::Sparse(m) => m.get_entry(r, c).map(|e| e.into_value()).unwrap_or_else(zero),
            Repr::Dense(d) => d[(r, c)],
        }
    }

    /// `‖A − A†‖` measured by the norm upper bound.
    pub fn hermiticity_defect(&self) -> f64 {
        self.sub(&self.adjoint()).norm_upper_bound()
    }

    /// Splits into even and odd parts.
    pub fn parity_parts(&self) -> (FockOperator, FockOperator) {
        let sigma = parity_map(self);
        let even = self.add(&sigma).scale(C64::new(0.5, 0.0));
        let odd = self.sub(&sigma).scale(C64::new(0.5, 0.0));
        (even, odd)
    }

    /// Checks that the operator commutes with the number operators of every
    /// mode outside the declared support.
    pub fn respects_support(&self, tol: f64) -> bool {
        let inside = match self.space.set_modes(&self.support) {
            Ok(m) => m.into_iter().fold(0usize, |acc, j| acc | 1 << j),
            Err(_) => return false,
        };
        let outside = (self.dim() - 1) & !inside;
        let mut ok = true;
        // [n_j, A]_{r,c} = (n_j(r) - n_j(c)) A_{r,c}
        self.for_each_entry(|r, c, v| {
            if (r ^ c) & outside != 0 && v.norm() > tol {
                ok = false;
            }
        });
        ok
    }
}

fn classify(repr: &Repr) -> Parity {
    let mut even = 0.0;
    let mut odd = 0.0;
    let mut visit = |r: usize, c: usize, v: &C64| {
        if (r ^ c).count_ones().is_multiple_of(2) {
            even += v.norm_sqr();
        } else {
            odd += v.norm_sqr();
        }
    };
    match repr {
        Repr::Sparse(m) => m.triplet_iter().for_each(|(r, c, v)| visit(r, c, v)),
        Repr::Dense(d) => {
            let n = d.nrows();
            d.iter().enumerate().for_each(|(k, v)| visit(k % n, k / n, v))
        }
    }
    // the odd part's Frobenius norm bounds ‖σ(A) − A‖ / 2 from above
    if 2.0 * odd.sqrt() <= PARITY_TOL {
        Parity::Even
    } else if 2.0 * even.sqrt() <= PARITY_TOL {
        Parity::Odd
    } else {
        Parity::Mixed
    }
}

/// `σ(A) = P A P` with `P = (-1)^N`.
pub fn parity_map(a: &FockOperator) -> FockOperator {
    let repr = match &a.repr {
        Repr::Sparse(c) => {
            let mut out = c.clone();
            let offsets = out.row_offsets().to_vec();
            let cols = out.col_indices().to_vec();
            let vals = out.values_mut();
            for r in 0..offsets.len() - 1 {
                for k in offsets[r]..offsets[r + 1] {
                    vals[k] *= parity_sign(r ^ cols[k]);
                }
            }
            Repr::Sparse(out)
        }
        Repr::Dense(d) => {
            let mut out = d.clone();
            let n = d.nrows();
            for c in 0..n {
                for r in 0..n {
                    out[(r, c)] *= parity_sign(r ^ c);
                }
            }
            Repr::Dense(out)
        }
    };
    a.with_repr(a.support.clone(), repr)
}

/// `‖σ(A) − A‖ ≤ tol`, tested through the Frobenius norm of the difference.
pub fn is_even(a: &FockOperator, tol: f64) -> bool {
    parity_map(a).sub(a).frobenius() <= tol
}

/// The unitary `V` with `V a_j V† = a_{π(j)}` for a mode bijection `π`.
#[derive(Clone, Debug)]
pub struct FermionPermutation {
    map: Vec<usize>,
}

impl FermionPermutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || seen[m] {
                return Err(Error::Invalid("mode map is not a bijection".into()));
            }
            seen[m] = true;
        }
        Ok(FermionPermutation { map })
    }

    pub fn modes(&self) -> usize {
        self.map.len()
    }

    /// Image basis index and sign: `V|n⟩ = sign |n'⟩`.
    pub fn apply_index(&self, n: usize) -> (usize, f64) {
        let mut placed = 0usize;
        let mut inversions = 0u32;
        for (j, &target) in self.map.iter().enumerate() {
            if n >> j & 1 == 1 {
                inversions += (placed >> (target + 1)).count_ones();
                placed |= 1 << target;
            }
        }
        let sign = if inversions.is_multiple_of(2) { 1.0 } else { -1.0 };
        (placed, sign)
    }

    fn table(&self) -> Vec<(usize, f64)> {
        (0..1usize << self.map.len()).map(|n| self.apply_index(n)).collect()
    }

    pub fn inverse(&self) -> FermionPermutation {
        let mut inv = vec![0; self.map.len()];
        for (j, &t) in self.map.iter().enumerate() {
            inv[t] = j;
        }
        FermionPermutation { map: inv }
    }

    pub fn apply_vector(&self, v: &DVector<C64>) -> DVector<C64> {
        let mut out = DVector::zeros(v.len());
        for (n, (m, s)) in self.table().into_iter().enumerate() {
            out[m] = v[n] * s;
        }
        out
    }

    /// `V A V†` on a raw matrix.
    pub fn conjugate_dense(&self, a: &DMatrix<C64>) -> DMatrix<C64> {
        let table = self.table();
        let mut out = DMatrix::zeros(a.nrows(), a.ncols());
        for c in 0..a.ncols() {
            let (mc, sc) = table[c];
            for r in 0..a.nrows() {
                let (mr, sr) = table[r];
                out[(mr, mc)] = a[(r, c)] * (sr * sc);
            }
        }
        out
    }

    pub fn conjugate(&self, a: &FockOperator, support: SiteSet) -> FockOperator {
        let table = self.table();
        let repr = match &a.repr {
            Repr::Sparse(c) => Repr::Sparse(linalg::csr_from_triplets(
                c.nrows(),
                c.triplet_iter().map(|(r, col, v)| {
                    let (mr, sr) = table[r];
                    let (mc, sc) = table[col];
                    (mr, mc, *v * (sr * sc))
                }),
            )),
            Repr::Dense(d) => Repr::Dense(self.conjugate_dense(d)),
        };
        a.with_repr(support, repr)
    }
}

/// `α_x(A)`: relabels every mode `(y, s)` of the support to `(y + x, s)`.
/// Only defined when the shifted support stays inside the box.
pub fn translate_operator(a: &FockOperator, x: &Site) -> Result<FockOperator> {
    let space = a.space();
    let shifted = translate_set(a.support(), x);
    if !space.cube().contains_set(&shifted) {
        return Err(Error::Geometry(format!(
            "support {} shifted by {x} leaves {}",
            a.support(),
            space.cube()
        )));
    }
    if x.is_origin() {
        return Ok(a.clone());
    }
    let perm = support_shift_permutation(space, a.support(), x)?;
    Ok(perm.conjugate(a, shifted))
}

/// A mode bijection sending the support modes to their translates and the
/// remaining modes, in increasing order, onto the remaining targets.
fn support_shift_permutation(space: &ModeSpace, support: &SiteSet, x: &Site) -> Result<FermionPermutation> {
    let m = space.modes();
    let mut map = vec![usize::MAX; m];
    let mut taken = vec![false; m];
    for site in support.sites() {
        for s in 0..space.spins() {
            let from = space.mode_index(site, s)?;
            let to = space.mode_index(&site.shifted(x), s)?;
            map[from] = to;
            taken[to] = true;
        }
    }
    let mut free = (0..m).filter(|t| !taken[*t]);
    for slot in map.iter_mut() {
        if *slot == usize::MAX {
            *slot = free.next().expect("counts match");
        }
    }
    FermionPermutation::new(map)
}

/// Positions (as bit masks) of local modes inside a larger ordered mode list.
fn scatter(local: usize, positions: &[usize]) -> usize {
    positions
        .iter()
        .enumerate()
        .filter(|(r, _)| local >> r & 1 == 1)
        .fold(0, |acc, (_, p)| acc | 1 << p)
}

/// Sign of reordering `|n⟩` so that the modes at `positions` come first.
fn reorder_sign(n: usize, positions: &[usize], inside_mask: usize) -> f64 {
    let outside = n & !inside_mask;
    let mut count = 0u32;
    for &q in positions {
        if n >> q & 1 == 1 {
            count += (outside & ((1usize << q) - 1)).count_ones();
        }
    }
    if count.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Entries of `ι(A)` for a local matrix on the modes at `positions` (sorted)
/// inside a space of `total` modes.
pub fn embed_triplets(local: &DMatrix<C64>, positions: &[usize], total: usize) -> Vec<(usize, usize, C64)> {
    let k = positions.len();
    assert_eq!(local.nrows(), 1 << k);
    let inside_mask = positions.iter().fold(0usize, |acc, p| acc | 1 << p);
    let outside_modes: Vec<usize> = (0..total).filter(|j| inside_mask >> j & 1 == 0).collect();
    let nonzeros: Vec<(usize, usize, C64)> = (0..1usize << k)
        .flat_map(|c| (0..1usize << k).map(move |r| (r, c)))
        .filter_map(|(r, c)| {
            let v = local[(r, c)];
            (v != zero()).then_some((r, c, v))
        })
        .collect();
    let mut out = Vec::with_capacity(nonzeros.len() << outside_modes.len());
    for o_local in 0..1usize << outside_modes.len() {
        let o = scatter(o_local, &outside_modes);
        for &(r, c, v) in &nonzeros {
            let nr = o | scatter(r, positions);
            let nc = o | scatter(c, positions);
            let s = reorder_sign(nr, positions, inside_mask) * reorder_sign(nc, positions, inside_mask);
            out.push((nr, nc, v * s));
        }
    }
    out
}

/// Operator on the modes of a site set, stored on its own Fock space of
/// dimension `2^{|Z| · spins}` with modes in global order.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOperator {
    sites: SiteSet,
    spins: usize,
    matrix: DMatrix<C64>,
}

impl LocalOperator {
    pub fn new(sites: SiteSet, spins: usize, matrix: DMatrix<C64>) -> Result<Self> {
        let modes = sites.len() * spins;
        if modes > MODE_CAP_DENSE {
            return Err(Error::ResourceLimit(format!(
                "local operator on {modes} modes exceeds the cap"
            )));
        }
        let dim = 1usize << modes;
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::Invalid(format!(
                "local matrix must be {dim}x{dim}, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(LocalOperator { sites, spins, matrix })
    }

    pub fn identity(sites: SiteSet, spins: usize) -> Result<Self> {
        let dim = 1usize << (sites.len() * spins);
        LocalOperator::new(sites, spins, DMatrix::identity(dim, dim))
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    pub fn spins(&self) -> usize {
        self.spins
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn modes(&self) -> usize {
        self.sites.len() * self.spins
    }

    fn local_mode(&self, site: &Site, spin: usize) -> Result<usize> {
        let pos = self
            .sites
            .sites()
            .iter()
            .position(|s| s == site)
            .ok_or_else(|| Error::Geometry(format!("site {site} not in {}", self.sites)))?;
        if spin >= self.spins {
            return Err(Error::Invalid(format!("spin label {spin} out of range")));
        }
        Ok(pos * self.spins + spin)
    }

    /// `a_{site,spin}` on the local space of `sites`.
    pub fn annihilator(sites: &SiteSet, spins: usize, site: &Site, spin: usize) -> Result<Self> {
        let base = LocalOperator::identity(sites.clone(), spins)?;
        let j = base.local_mode(site, spin)?;
        let dim = 1usize << base.modes();
        let mut m = DMatrix::zeros(dim, dim);
        for n in (0..dim).filter(|n| n >> j & 1 == 1) {
            m[(n ^ (1 << j), n)] = C64::new(parity_sign(n & ((1 << j) - 1)), 0.0);
        }
        LocalOperator::new(sites.clone(), spins, m)
    }

    pub fn creator(sites: &SiteSet, spins: usize, site: &Site, spin: usize) -> Result<Self> {
        Ok(LocalOperator::annihilator(sites, spins, site, spin)?.adjoint())
    }

    pub fn number(sites: &SiteSet, spins: usize, site: &Site, spin: usize) -> Result<Self> {
        let a = LocalOperator::annihilator(sites, spins, site, spin)?;
        Ok(a.adjoint().mul(&a))
    }

    pub fn adjoint(&self) -> Self {
        LocalOperator {
            sites: self.sites.clone(),
            spins: self.spins,
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn scale(&self, z: C64) -> Self {
        LocalOperator {
            sites: self.sites.clone(),
            spins: self.spins,
            matrix: &self.matrix * z,
        }
    }

    /// Product on the union of both site sets.
    pub fn mul(&self, other: &LocalOperator) -> Self {
        let union = self.sites.union(&other.sites);
        let a = self.extend_to(&union).expect("union contains sites");
        let b = other.extend_to(&union).expect("union contains sites");
        LocalOperator {
            sites: union,
            spins: self.spins,
            matrix: a.matrix * b.matrix,
        }
    }

    pub fn add(&self, other: &LocalOperator) -> Self {
        let union = self.sites.union(&other.sites);
        let a = self.extend_to(&union).expect("union contains sites");
        let b = other.extend_to(&union).expect("union contains sites");
        LocalOperator {
            sites: union,
            spins: self.spins,
            matrix: a.matrix + b.matrix,
        }
    }

    /// The same element viewed on a larger site set.
    pub fn extend_to(&self, sites: &SiteSet) -> Result<Self> {
        if !self.sites.is_subset(sites) {
            return Err(Error::Geometry(format!("{} is not inside {sites}", self.sites)));
        }
        if sites == &self.sites {
            return Ok(self.clone());
        }
        let positions = self.positions_in(sites);
        let total = sites.len() * self.spins;
        let dim = 1usize << total;
        let mut m = DMatrix::zeros(dim, dim);
        for (r, c, v) in embed_triplets(&self.matrix, &positions, total) {
            m[(r, c)] += v;
        }
        LocalOperator::new(sites.clone(), self.spins, m)
    }

    fn positions_in(&self, sites: &SiteSet) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.modes());
        for site in self.sites.sites() {
            let rank = sites.sites().iter().position(|s| s == site).expect("subset");
            for s in 0..self.spins {
                out.push(rank * self.spins + s);
            }
        }
        out
    }

    /// `α_x` on a local template only relabels the sites; the relative mode
    /// order, and thus the matrix, is unchanged.
    pub fn translate(&self, x: &Site) -> Self {
        LocalOperator {
            sites: translate_set(&self.sites, x),
            spins: self.spins,
            matrix: self.matrix.clone(),
        }
    }

    pub fn norm(&self) -> f64 {
        linalg::spectral_norm_dense(&self.matrix)
    }

    pub fn parity(&self) -> Parity {
        classify(&Repr::Dense(self.matrix.clone()))
    }

    pub fn is_even(&self) -> bool {
        self.parity() == Parity::Even || self.matrix.iter().all(|v| *v == zero())
    }

    /// `ι(A)` in the Fock space of a box.
    pub fn embed(&self, space: &ModeSpace) -> Result<FockOperator> {
        if space.spins() != self.spins {
            return Err(Error::Invalid("spin label sets differ".into()));
        }
        let positions = space.set_modes(&self.sites)?;
        let csr = linalg::csr_from_triplets(space.dim(), embed_triplets(&self.matrix, &positions, space.modes()));
        Ok(FockOperator::from_csr(space, self.sites.clone(), csr))
    }

    /// Recovers the local matrix of a box operator supported in `sites`.
    pub fn restrict(a: &FockOperator, sites: &SiteSet) -> Result<Self> {
        let space = a.space();
        let positions = space.set_modes(sites)?;
        let k = positions.len();
        let dim = 1usize << k;
        let mut m = DMatrix::zeros(dim, dim);
        for c in 0..dim {
            for r in 0..dim {
                // with nothing occupied outside the sign strings are trivial
                m[(r, c)] = a.entry(scatter(r, &positions), scatter(c, &positions));
            }
        }
        LocalOperator::new(sites.clone(), space.spins(), m)
    }

    /// Random operator with entries of modulus at most one, optionally
    /// projected onto its even part.
    pub fn random<R: Rng>(sites: SiteSet, spins: usize, even: bool, rng: &mut R) -> Result<Self> {
        let dim = 1usize << (sites.len() * spins);
        let m = DMatrix::from_fn(dim, dim, |r, c| {
            if even && (r ^ c).count_ones() % 2 == 1 {
                zero()
            } else {
                C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * std::f64::consts::FRAC_1_SQRT_2
            }
        });
        LocalOperator::new(sites, spins, m)
    }

    /// Random self-adjoint even operator.
    pub fn random_hermitian_even<R: Rng>(sites: SiteSet, spins: usize, rng: &mut R) -> Result<Self> {
        let a = LocalOperator::random(sites, spins, true, rng)?;
        let m = (&a.matrix + a.matrix.adjoint()) * C64::new(0.5, 0.0);
        LocalOperator::new(a.sites, spins, m)
    }
}

/// Reduced density matrix of a pure state on the modes of `sites`,
/// defined by `tr(ρ_Z A) = ⟨ψ, ι(A) ψ⟩`.
pub fn reduce_vector(space: &ModeSpace, psi: &DVector<C64>, sites: &SiteSet) -> Result<DMatrix<C64>> {
    let positions = space.set_modes(sites)?;
    Ok(partial_trace_vector(psi.as_slice(), space.modes(), &positions))
}

/// Reduced density matrix of a density matrix on the modes of `sites`.
pub fn reduce_density(space: &ModeSpace, rho: &DMatrix<C64>, sites: &SiteSet) -> Result<DMatrix<C64>> {
    let positions = space.set_modes(sites)?;
    Ok(partial_trace(rho, space.modes(), &positions))
}

/// Fermionic partial trace of a pure state onto the modes at `positions`
/// (sorted) of a `total`-mode space.
pub fn partial_trace_vector(psi: &[C64], total: usize, positions: &[usize]) -> DMatrix<C64> {
    let (inside_mask, outside_modes) = split_modes(total, positions);
    let dim = 1usize << positions.len();
    let mut rho = DMatrix::zeros(dim, dim);
    let mut amps = vec![zero(); dim];
    for o_local in 0..1usize << outside_modes.len() {
        let o = scatter(o_local, &outside_modes);
        for (m, amp) in amps.iter_mut().enumerate() {
            let n = o | scatter(m, positions);
            *amp = psi[n] * reorder_sign(n, positions, inside_mask);
        }
        for c in 0..dim {
            let ac = amps[c].conj();
            if ac == zero() {
                continue;
            }
            for r in 0..dim {
                rho[(r, c)] += amps[r] * ac;
            }
        }
    }
    rho
}

/// Fermionic partial trace of a density matrix onto the modes at `positions`.
pub fn partial_trace(rho: &DMatrix<C64>, total: usize, positions: &[usize]) -> DMatrix<C64> {
    let (inside_mask, outside_modes) = split_modes(total, positions);
    let dim = 1usize << positions.len();
    let mut out = DMatrix::zeros(dim, dim);
    for o_local in 0..1usize << outside_modes.len() {
        let o = scatter(o_local, &outside_modes);
        let idx: Vec<(usize, f64)> = (0..dim)
            .map(|m| {
                let n = o | scatter(m, positions);
                (n, reorder_sign(n, positions, inside_mask))
            })
            .collect();
        for (c, &(nc, sc)) in idx.iter().enumerate() {
            for (r, &(nr, sr)) in idx.iter().enumerate() {
                out[(r, c)] += rho[(nr, nc)] * (sr * sc);
            }
        }
    }
    out
}

fn split_modes(total: usize, positions: &[usize]) -> (usize, Vec<usize>) {
    let inside_mask = positions.iter().fold(0usize, |acc, p| acc | 1 << p);
    let outside = (0..total).filter(|j| inside_mask >> j & 1 == 0).collect();
    (inside_mask, outside)
}
