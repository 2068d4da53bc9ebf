//! Dense complex Hermitian matrices: eigendecomposition, square roots and
//! the real trace inner product used by the rate expressions.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on `|A_ij - conj(A_ji)|`.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Relative tolerance on negative eigenvalues accepted as round-off.
pub const PSD_TOL: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 64;

/// Complex Hermitian matrix. The stored entries are always exactly Hermitian:
/// constructors symmetrize their input as `(A + A^H) / 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HermitianRepr", into = "HermitianRepr")]
pub struct HermitianMatrix(DMatrix<Complex64>);

impl HermitianMatrix {
    /// Validates and symmetrizes a square matrix.
    pub fn new(m: DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::validation(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let d = (m[(i, j)] - m[(j, i)].conj()).norm();
                worst = worst.max(d);
            }
        }
        if !worst.is_finite() || worst > HERMITIAN_TOL {
            return Err(Error::validation(format!(
                "matrix is not Hermitian (max asymmetry {worst:e})"
            )));
        }
        Ok(Self::symmetrized(m))
    }

    fn symmetrized(m: DMatrix<Complex64>) -> Self {
        let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        HermitianMatrix(h)
    }

    /// Symmetrizes without checking; for matrices Hermitian by construction.
    pub(crate) fn from_raw(m: DMatrix<Complex64>) -> Self {
        Self::symmetrized(m)
    }

    pub fn identity(dim: usize) -> Self {
        HermitianMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        HermitianMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(*d, 0.0);
        }
        HermitianMatrix(m)
    }

    /// `h h^H`.
    pub fn outer(h: &DVector<Complex64>) -> Self {
        HermitianMatrix::from_raw(h * h.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    pub fn scale(&self, a: f64) -> Self {
        HermitianMatrix(&self.0 * Complex64::new(a, 0.0))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `x^H A x`, real for Hermitian `A`.
    pub fn quadratic_form(&self, x: &DVector<Complex64>) -> f64 {
        let ax = &self.0 * x;
        x.dotc(&ax).re
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let eig = hermitian_eig(self)?;
        Ok(*eig.values.last().expect("non-empty matrix"))
    }
}

#[derive(Serialize, Deserialize)]
struct HermitianRepr {
    dim: usize,
    /// Row-major `(re, im)` pairs.
    entries: Vec<f64>,
}

impl From<HermitianMatrix> for HermitianRepr {
    fn from(h: HermitianMatrix) -> Self {
        let n = h.dim();
        let mut entries = Vec::with_capacity(2 * n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(h.0[(i, j)].re);
                entries.push(h.0[(i, j)].im);
            }
        }
        HermitianRepr { dim: n, entries }
    }
}

impl TryFrom<HermitianRepr> for HermitianMatrix {
    type Error = Error;

    fn try_from(r: HermitianRepr) -> Result<Self> {
        if r.entries.len() != 2 * r.dim * r.dim {
            return Err(Error::validation("hermitian matrix entry count mismatch"));
        }
        let m = DMatrix::from_fn(r.dim, r.dim, |i, j| {
            let k = 2 * (i * r.dim + j);
            Complex64::new(r.entries[k], r.entries[k + 1])
        });
        HermitianMatrix::new(m)
    }
}

/// Eigenvalues in descending order with the matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

impl Eigen {
    pub fn vector(&self, k: usize) -> DVector<Complex64> {
        self.vectors.column(k).into_owned()
    }
}

/// Cyclic complex Jacobi eigendecomposition.
pub fn hermitian_eig(a: &HermitianMatrix) -> Result<Eigen> {
    let n = a.dim();
    let mut m = a.0.clone();
    let mut v = DMatrix::<Complex64>::identity(n, n);
    let norm = a.frobenius_norm();
    if !norm.is_finite() {
        return Err(Error::validation("matrix has non-finite entries"));
    }

    let mut converged = false;
    let mut last_off = 0.0;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = off_diagonal_norm(&m);
        last_off = off;
        if off <= 1e-15 * norm || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                jacobi_rotate(&mut m, &mut v, p, q);
            }
        }
    }
    if !converged {
        // Rounding can stall the last digits; accept a tiny residual.
        let off = off_diagonal_norm(&m);
        if off > 1e-12 * norm {
            return Err(Error::Numerical(format!(
                "Jacobi eigensolver did not converge after {JACOBI_MAX_SWEEPS} sweeps \
                 (off-diagonal norm {last_off:e}, matrix norm {norm:e})"
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].re.total_cmp(&m[(i, i)].re));
    let values = order.iter().map(|&i| m[(i, i)].re).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(Eigen { values, vectors })
}

fn off_diagonal_norm(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Zeroes `m[(p, q)]` with a unitary rotation `G` acting on columns p and q:
/// `m <- G^H m G`, `v <- v G`.
fn jacobi_rotate(m: &mut DMatrix<Complex64>, v: &mut DMatrix<Complex64>, p: usize, q: usize) {
    let apq = m[(p, q)];
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    let app = m[(p, p)].re;
    let aqq = m[(q, q)].re;
    if mag < 1e-18 * (app.abs() + aqq.abs()) {
        m[(p, q)] = Complex64::new(0.0, 0.0);
        m[(q, p)] = Complex64::new(0.0, 0.0);
        return;
    }
    let e = apq / mag;
    let theta = (aqq - app) / (2.0 * mag);
    let t = if theta == 0.0 {
        1.0
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let ec = e.conj();
    let n = m.nrows();

    for k in 0..n {
        let akp = m[(k, p)];
        let akq = m[(k, q)];
        m[(k, p)] = akp * c - ec * akq * s;
        m[(k, q)] = akp * s + ec * akq * c;
    }
    for k in 0..n {
        let apk = m[(p, k)];
        let aqk = m[(q, k)];
        m[(p, k)] = apk * c - e * aqk * s;
        m[(q, k)] = apk * s + e * aqk * c;
    }
    m[(p, q)] = Complex64::new(0.0, 0.0);
    m[(q, p)] = Complex64::new(0.0, 0.0);
    m[(p, p)] = Complex64::new(m[(p, p)].re, 0.0);
    m[(q, q)] = Complex64::new(m[(q, q)].re, 0.0);

    for k in 0..v.nrows() {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * c - ec * vkq * s;
        v[(k, q)] = vkp * s + ec * vkq * c;
    }
}

/// Principal square root of a positive semidefinite matrix. Eigenvalues down
/// to `-PSD_TOL * max(1, spectral radius)` are clamped to zero.
pub fn matrix_sqrt(k: &HermitianMatrix) -> Result<HermitianMatrix> {
    let eig = hermitian_eig(k)?;
    let radius = eig.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let floor = -PSD_TOL * radius.max(f64::MIN_POSITIVE);
    let min = *eig.values.last().expect("non-empty");
    if min < floor {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let n = k.dim();
    let mut s = DMatrix::<Complex64>::zeros(n, n);
    for (idx, lam) in eig.values.iter().enumerate() {
        let root = lam.max(0.0).sqrt();
        if root == 0.0 {
            continue;
        }
        let u = eig.vectors.column(idx);
        s += (u * u.adjoint()) * Complex64::new(root, 0.0);
    }
    Ok(HermitianMatrix::from_raw(s))
}

/// `Re sum_ij H_ij conj(W_ij)`, which equals `Tr(H W)` for Hermitian inputs.
pub fn trace_inner(h: &HermitianMatrix, w: &HermitianMatrix) -> Result<f64> {
    if h.dim() != w.dim() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            h.dim(),
            w.dim()
        )));
    }
    Ok(h
        .0
        .iter()
        .zip(w.0.iter())
        .map(|(a, b)| (a * b.conj()).re)
        .sum())
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn random_complex_matrix(rng: &mut impl Rng, n: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    /// Modified Gram-Schmidt on a random complex matrix.
    pub fn random_unitary(rng: &mut impl Rng, n: usize) -> DMatrix<Complex64> {
        let mut q = random_complex_matrix(rng, n);
        for j in 0..n {
            for i in 0..j {
                let qi = q.column(i).into_owned();
                let proj = qi.dotc(&q.column(j));
                let mut col = q.column_mut(j);
                col -= qi * proj;
            }
            let norm = q.column(j).norm();
            let mut col = q.column_mut(j);
            col /= Complex64::new(norm, 0.0);
        }
        q
    }

    pub fn random_hermitian(rng: &mut impl Rng, n: usize) -> HermitianMatrix {
        let a = random_complex_matrix(rng, n);
        HermitianMatrix::from_raw(&a + a.adjoint())
    }

    pub fn random_psd(rng: &mut impl Rng, n: usize) -> HermitianMatrix {
        let a = random_complex_matrix(rng, n);
        HermitianMatrix::from_raw(&a * a.adjoint())
    }

    pub fn rel_frobenius(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
        let diff: f64 = (a - b).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let scale: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn reconstruct(e: &Eigen) -> DMatrix<Complex64> {
        let n = e.values.len();
        let d = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                c(e.values[i], 0.0)
            } else {
                c(0.0, 0.0)
            }
        });
        &e.vectors * d * e.vectors.adjoint()
    }

    #[test]
    fn eig_identity() {
        let e = hermitian_eig(&HermitianMatrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        let vhv = e.vectors.adjoint() * &e.vectors;
        assert!(rel_frobenius(&vhv, &DMatrix::identity(3, 3)) < 1e-12);
    }

    #[test]
    fn eig_diagonal_sorted_descending() {
        let e = hermitian_eig(&HermitianMatrix::from_real_diagonal(&[-1.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![2.0, -1.0]);
        assert!((e.vectors[(1, 0)].norm() - 1.0).abs() < 1e-15);
        assert!((e.vectors[(0, 1)].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eig_recovers_planted_spectrum() {
        let mut r = rng(7);
        let u = random_unitary(&mut r, 4);
        let lambda = [3.5, 1.25, -0.5, -2.0];
        let d = DMatrix::from_fn(4, 4, |i, j| if i == j { c(lambda[i], 0.0) } else { c(0.0, 0.0) });
        let a = HermitianMatrix::from_raw(&u * d * u.adjoint());
        let e = hermitian_eig(&a).unwrap();
        for (got, want) in e.values.iter().zip(lambda) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!(rel_frobenius(&reconstruct(&e), a.as_matrix()) < 1e-9);
        let vhv = e.vectors.adjoint() * &e.vectors;
        assert!(rel_frobenius(&vhv, &DMatrix::identity(4, 4)) < 1e-10);
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 1.0), c(1.0, 1.0), c(2.0, 0.0)]);
        assert!(matches!(HermitianMatrix::new(m), Err(Error::Validation(_))));
    }

    #[test]
    fn sqrt_examples() {
        let s = matrix_sqrt(&HermitianMatrix::identity(3)).unwrap();
        assert!(rel_frobenius(s.as_matrix(), &DMatrix::identity(3, 3)) < 1e-14);
        let s = matrix_sqrt(&HermitianMatrix::from_real_diagonal(&[4.0, 9.0])).unwrap();
        assert!((s.as_matrix()[(0, 0)].re - 2.0).abs() < 1e-14);
        assert!((s.as_matrix()[(1, 1)].re - 3.0).abs() < 1e-14);
        assert!(s.as_matrix()[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn sqrt_squares_back_and_commutes() {
        let mut r = rng(11);
        let k = random_psd(&mut r, 5);
        let s = matrix_sqrt(&k).unwrap();
        let ss = s.as_matrix() * s.as_matrix();
        assert!(rel_frobenius(&ss, k.as_matrix()) < 1e-9);
        let sk = s.as_matrix() * k.as_matrix();
        let ks = k.as_matrix() * s.as_matrix();
        assert!(rel_frobenius(&sk, &ks) < 1e-9);
        assert!(s.min_eigenvalue().unwrap() >= -1e-8 * s.trace());
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let k = HermitianMatrix::from_real_diagonal(&[1.0, -0.5]);
        assert!(matches!(matrix_sqrt(&k), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn trace_inner_examples() {
        let w = HermitianMatrix::from_real_diagonal(&[1.0, 2.0, 3.0]);
        assert_eq!(trace_inner(&HermitianMatrix::identity(3), &w).unwrap(), 6.0);
        let h = DVector::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        let hh = HermitianMatrix::outer(&h);
        assert!((trace_inner(&hh, &HermitianMatrix::identity(2)).unwrap() - 2.0).abs() < 1e-15);
        assert!(trace_inner(&hh, &HermitianMatrix::identity(3)).is_err());
    }

    #[test]
    fn trace_inner_matches_double_loop() {
        let mut r = rng(3);
        for _ in 0..20 {
            let h = random_hermitian(&mut r, 4);
            let w = random_hermitian(&mut r, 4);
            // Tr(HW) = sum_i sum_j H_ij W_ji
            let mut naive = c(0.0, 0.0);
            for i in 0..4 {
                for j in 0..4 {
                    naive += h.as_matrix()[(i, j)] * w.as_matrix()[(j, i)];
                }
            }
            let got = trace_inner(&h, &w).unwrap();
            assert!((got - naive.re).abs() < 1e-12 * (1.0 + naive.re.abs()));
            assert!(naive.im.abs() < 1e-12);
        }
    }

    #[test]
    fn trace_inner_nonnegative_for_rank_one_and_psd() {
        let mut r = rng(5);
        for _ in 0..50 {
            let h = DVector::from_fn(3, |_, _| c(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
            let w = random_psd(&mut r, 3);
            assert!(trace_inner(&HermitianMatrix::outer(&h), &w).unwrap() >= -1e-12);
        }
    }

    proptest! {
        #[test]
        fn trace_inner_is_bilinear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut r = rng(seed);
            let h1 = random_hermitian(&mut r, 4);
            let h2 = random_hermitian(&mut r, 4);
            let w = random_hermitian(&mut r, 4);
            let combo = HermitianMatrix::from_raw(
                h1.as_matrix() * c(a, 0.0) + h2.as_matrix() * c(b, 0.0));
            let lhs = trace_inner(&combo, &w).unwrap();
            let rhs = a * trace_inner(&h1, &w).unwrap() + b * trace_inner(&h2, &w).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs().max(rhs.abs())));
        }

        #[test]
        fn eig_reconstructs_random_hermitian(seed in 0u64..10_000, n in 1usize..7) {
            let mut r = rng(seed);
            let a = random_hermitian(&mut r, n);
            let e = hermitian_eig(&a).unwrap();
            prop_assert!(rel_frobenius(&reconstruct(&e), a.as_matrix()) < 1e-9);
            prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
