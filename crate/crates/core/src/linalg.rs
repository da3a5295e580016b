//! Sparse and dense complex linear algebra used by the Fock-space code.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::pattern::SparsityPattern;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use num_complex::Complex64 as C64;

pub type Csr = CsrMatrix<C64>;

/// Largest dimension for which exact (SVD / eigen) norms are computed.
pub const EXACT_NORM_DIM: usize = 512;

pub fn csr_from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, C64)>) -> Csr {
    let mut coo = CooMatrix::new(n, n);
    for (r, c, v) in triplets {
        if v != C64::new(0.0, 0.0) {
            coo.push(r, c, v);
        }
    }
    CsrMatrix::from(&coo)
}

pub fn csr_identity(n: usize) -> Csr {
    CsrMatrix::identity(n)
}

pub fn csr_zero(n: usize) -> Csr {
    CsrMatrix::zeros(n, n)
}

pub fn csr_scale(a: &Csr, z: C64) -> Csr {
    let mut out = a.clone();
    out.values_mut().iter_mut().for_each(|v| *v *= z);
    out
}

pub fn csr_adjoint(a: &Csr) -> Csr {
    let mut t = a.transpose();
    t.values_mut().iter_mut().for_each(|v| *v = v.conj());
    t
}

/// Drops entries with modulus below `tol`.
pub fn csr_prune(a: &Csr, tol: f64) -> Csr {
    csr_from_triplets(
        a.nrows(),
        a.triplet_iter()
            .filter(|(_, _, v)| v.norm() > tol)
            .map(|(r, c, v)| (r, c, *v)),
    )
}

pub fn csr_matvec_into(a: &Csr, x: &[C64], y: &mut [C64]) {
    let offsets = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    for (i, yi) in y.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for k in offsets[i]..offsets[i + 1] {
            acc += vals[k] * x[cols[k]];
        }
        *yi = acc;
    }
}

pub fn csr_matvec(a: &Csr, x: &DVector<C64>) -> DVector<C64> {
    let mut y = DVector::zeros(a.nrows());
    csr_matvec_into(a, x.as_slice(), y.as_mut_slice());
    y
}

/// `A · B` with `A` sparse and `B` dense, column by column.
pub fn csr_mul_dense(a: &Csr, b: &DMatrix<C64>) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(a.nrows(), b.ncols());
    for j in 0..b.ncols() {
        let src = b.column(j);
        let mut dst = out.column_mut(j);
        csr_matvec_into(a, src.as_slice(), dst.as_mut_slice());
    }
    out
}

/// `B · A` with `B` dense and `A` sparse.
pub fn dense_mul_csr(b: &DMatrix<C64>, a: &Csr) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(b.nrows(), a.ncols());
    for (r, c, v) in a.triplet_iter() {
        // out[:, c] += B[:, r] * v
        let src = b.column(r);
        let mut dst = out.column_mut(c);
        dst.axpy(*v, &src, C64::new(1.0, 0.0));
    }
    out
}

/// Induced infinity norm (max absolute row sum); bounds the spectral norm of
/// Hermitian matrices from above.
pub fn csr_norm_inf(a: &Csr) -> f64 {
    let offsets = a.row_offsets();
    let vals = a.values();
    (0..a.nrows())
        .map(|i| vals[offsets[i]..offsets[i + 1]].iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn frobenius_dense(a: &DMatrix<C64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs_dense(a: &DMatrix<C64>) -> f64 {
    a.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Spectral norm of a dense matrix: exact for small sizes, power iteration above.
pub fn spectral_norm_dense(a: &DMatrix<C64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    if a.nrows().max(a.ncols()) <= EXACT_NORM_DIM {
        let scale = max_abs_dense(a);
        if is_hermitian_dense(a, 1e-13 * scale) {
            let sym = (a + a.adjoint()) * C64::new(0.5, 0.0);
            return sym.symmetric_eigenvalues().iter().map(|v| v.abs()).fold(0.0, f64::max);
        }
        // A†A is Hermitian; its eigensolver is more robust than the SVD on
        // highly degenerate spectra
        let gram = a.adjoint() * a;
        let gram = (&gram + gram.adjoint()) * C64::new(0.5, 0.0);
        return gram
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(0.0, f64::max)
            .max(0.0)
            .sqrt();
    }
    power_norm(a.ncols(), |x| a * x, |y| a.adjoint() * y)
}

pub fn spectral_norm_csr(a: &Csr) -> f64 {
    if a.nnz() == 0 {
        return 0.0;
    }
    if a.nrows() <= EXACT_NORM_DIM {
        return spectral_norm_dense(&DMatrix::from(a));
    }
    let adj = csr_adjoint(a);
    power_norm(a.ncols(), |x| csr_matvec(a, x), |y| csr_matvec(&adj, y))
}

fn is_hermitian_dense(a: &DMatrix<C64>, tol: f64) -> bool {
    if a.nrows() != a.ncols() {
        return false;
    }
    let n = a.nrows();
    for j in 0..n {
        for i in 0..=j {
            if (a[(i, j)] - a[(j, i)].conj()).norm() > tol {
                return false;
            }
        }
    }
    true
}

/// Power iteration on `A†A` from a fixed deterministic start vector.
fn power_norm(
    n: usize,
    apply: impl Fn(&DVector<C64>) -> DVector<C64>,
    apply_adj: impl Fn(&DVector<C64>) -> DVector<C64>,
) -> f64 {
    let mut x = DVector::from_fn(n, |i, _| C64::new(1.0 + (i % 7) as f64 * 0.1, (i % 3) as f64 * 0.05));
    let mut est = 0.0;
    for _ in 0..300 {
        let nx = x.norm();
        if nx == 0.0 {
            return 0.0;
        }
        x /= C64::new(nx, 0.0);
        let y = apply(&x);
        let new_est = y.norm();
        x = apply_adj(&y);
        if (new_est - est).abs() <= 1e-14 * new_est.max(1.0) {
            return new_est;
        }
        est = new_est;
    }
    est
}

/// Largest eigenvalue modulus of a Hermitian sparse matrix (power iteration).
pub fn hermitian_norm_estimate(a: &Csr) -> f64 {
    if a.nnz() == 0 {
        return 0.0;
    }
    let n = a.nrows();
    let mut x = DVector::from_fn(n, |i, _| C64::new(1.0 + (i % 5) as f64 * 0.2, (i % 2) as f64 * 0.1));
    let mut est = 0.0;
    for _ in 0..200 {
        let nx = x.norm();
        if nx == 0.0 {
            return 0.0;
        }
        x /= C64::new(nx, 0.0);
        let y = csr_matvec(a, &x);
        let new_est = y.norm();
        x = y;
        if (new_est - est).abs() <= 1e-10 * new_est.max(1.0) {
            return new_est;
        }
        est = new_est;
    }
    est
}

/// Overwrites `v` with `exp(z · H) v` using a truncated Taylor series with
/// enough substeps that each has `|z| ‖H‖_∞ <= 1/2`.
pub fn expm_multiply(h: &Csr, z: C64, v: &mut DMatrix<C64>, h_norm_inf: f64) {
    let scaled = z.norm() * h_norm_inf;
    if scaled == 0.0 {
        return;
    }
    let substeps = (scaled / 0.5).ceil().max(1.0) as usize;
    let zs = z / substeps as f64;
    for _ in 0..substeps {
        let mut term = v.clone();
        let mut k = 1usize;
        loop {
            term = csr_mul_dense(h, &term);
            term *= zs / k as f64;
            *v += &term;
            let tn = max_abs_dense(&term);
            let vn = max_abs_dense(v).max(1e-300);
            if tn <= 1e-17 * vn || k >= 60 {
                break;
            }
            k += 1;
        }
    }
}

/// `‖W†W − 1‖_max`.
pub fn unitarity_defect(w: &DMatrix<C64>) -> f64 {
    let g = w.adjoint() * w;
    let n = g.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

/// Newton-Schulz iterations towards the unitary polar factor of a nearly
/// unitary matrix.
pub fn reunitarize(w: &mut DMatrix<C64>) {
    let n = w.nrows();
    for _ in 0..6 {
        let g = w.adjoint() * &*w;
        let mut corr = -g;
        for i in 0..n {
            corr[(i, i)] += C64::new(3.0, 0.0);
        }
        *w = &*w * corr * C64::new(0.5, 0.0);
        if unitarity_defect(w) < 1e-14 {
            break;
        }
    }
}

/// A family of sparse matrices sharing one union sparsity pattern, so that
/// linear combinations are a single pass over the value arrays.
#[derive(Clone, Debug)]
pub struct LinearFamily {
    pattern: Arc<SparsityPattern>,
    values: Vec<Vec<C64>>,
    norms_inf: Vec<f64>,
}

impl LinearFamily {
    pub fn new(components: &[Csr]) -> Self {
        assert!(!components.is_empty(), "linear family needs a component");
        let n = components[0].nrows();
        let mut coo = CooMatrix::new(n, n);
        for c in components {
            for (r, col, _) in c.triplet_iter() {
                coo.push(r, col, C64::new(1.0, 0.0));
            }
        }
        let union = CsrMatrix::from(&coo);
        let pattern = Arc::new(union.pattern().clone());
        let values = components
            .iter()
            .map(|c| {
                let mut vals = vec![C64::new(0.0, 0.0); pattern.nnz()];
                let offsets = pattern.major_offsets();
                let cols = pattern.minor_indices();
                for (r, col, v) in c.triplet_iter() {
                    let row = &cols[offsets[r]..offsets[r + 1]];
                    let pos = row.binary_search(&col).expect("pattern contains entry");
                    vals[offsets[r] + pos] = *v;
                }
                vals
            })
            .collect();
        let norms_inf = components.iter().map(csr_norm_inf).collect();
        LinearFamily {
            pattern,
            values,
            norms_inf,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.pattern.major_dim()
    }

    /// `Σ_k c_k M_k`.
    pub fn combine(&self, coeffs: &[C64]) -> Csr {
        assert_eq!(coeffs.len(), self.values.len());
        let mut vals = vec![C64::new(0.0, 0.0); self.pattern.nnz()];
        for (c, comp) in coeffs.iter().zip(&self.values) {
            if *c == C64::new(0.0, 0.0) {
                continue;
            }
            for (dst, src) in vals.iter_mut().zip(comp) {
                *dst += c * src;
            }
        }
        CsrMatrix::try_from_pattern_and_values((*self.pattern).clone(), vals).expect("values match pattern")
    }

    /// Triangle-inequality bound on `‖Σ c_k M_k‖_∞`.
    pub fn norm_inf_bound(&self, coeffs: &[C64]) -> f64 {
        coeffs.iter().zip(&self.norms_inf).map(|(c, n)| c.norm() * n).sum()
    }
}
