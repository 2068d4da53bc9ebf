//! Real coordinates for `r x r` Hermitian matrices and the `-log det`
//! barrier of the positive definite cone.
//!
//! Coordinates are ordered as the `r` diagonal entries, then for each pair
//! `i < j` the real and imaginary parts of `W_ij`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

#[derive(Clone, Debug)]
pub(crate) struct HermitianBlock {
    r: usize,
    /// Per coordinate, the `(coefficient, row, col)` entries of its basis
    /// matrix.
    basis: Vec<Vec<(Complex64, usize, usize)>>,
}

impl HermitianBlock {
    pub fn new(r: usize) -> Self {
        let mut basis: Vec<Vec<(Complex64, usize, usize)>> = (0..r).map(|i| vec![(ONE, i, i)]).collect();
        for i in 0..r {
            for j in i + 1..r {
                basis.push(vec![(ONE, i, j), (ONE, j, i)]);
                basis.push(vec![(I, i, j), (-I, j, i)]);
            }
        }
        HermitianBlock { r, basis }
    }

    pub fn order(&self) -> usize {
        self.r
    }

    /// Number of real coordinates, `r^2`.
    pub fn len(&self) -> usize {
        self.r * self.r
    }

    pub fn to_matrix(&self, w: &[f64]) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.r, self.r);
        for (x, entries) in w.iter().zip(&self.basis) {
            for &(a, p, q) in entries {
                m[(p, q)] += a * x;
            }
        }
        m
    }

    pub fn from_matrix(&self, m: &DMatrix<Complex64>) -> Vec<f64> {
        let mut w: Vec<f64> = (0..self.r).map(|i| m[(i, i)].re).collect();
        for i in 0..self.r {
            for j in i + 1..self.r {
                w.push(m[(i, j)].re);
                w.push(m[(i, j)].im);
            }
        }
        w
    }

    /// Coordinates of `scale * I`.
    pub fn scaled_identity(&self, scale: f64) -> Vec<f64> {
        let mut w = vec![0.0; self.len()];
        w[..self.r].fill(scale);
        w
    }

    pub fn trace(&self, w: &[f64]) -> f64 {
        w[..self.r].iter().sum()
    }

    /// `c` such that `g^H W g = c . w`.
    pub fn quadratic_coeffs(&self, g: &DVector<Complex64>) -> Vec<f64> {
        self.basis
            .iter()
            .map(|entries| {
                entries
                    .iter()
                    .map(|&(a, p, q)| (a * g[p].conj() * g[q]).re)
                    .sum()
            })
            .collect()
    }

    /// `-log det W`, or `None` unless `W` is positive definite.
    pub fn neg_logdet(&self, w: &[f64]) -> Option<f64> {
        if self.r == 0 {
            return Some(0.0);
        }
        let l = cholesky(&self.to_matrix(w))?;
        Some(-2.0 * (0..self.r).map(|i| l[(i, i)].re.ln()).sum::<f64>())
    }

    /// Adds `weight * (-log det W)` derivatives into `grad` and `hess` at
    /// coordinate offset `at`.
    pub fn add_neg_logdet_derivs(
        &self,
        w: &[f64],
        weight: f64,
        at: usize,
        grad: &mut DVector<f64>,
        hess: &mut DMatrix<f64>,
    ) {
        if self.r == 0 {
            return;
        }
        let Some(l) = cholesky(&self.to_matrix(w)) else {
            return;
        };
        let g = inverse_from_cholesky(&l);
        for (a, ea) in self.basis.iter().enumerate() {
            let mut d = 0.0;
            for &(al, p, q) in ea {
                d -= (al * g[(q, p)]).re;
            }
            grad[at + a] += weight * d;
            for (b, eb) in self.basis.iter().enumerate().skip(a) {
                let mut h = Complex64::new(0.0, 0.0);
                for &(al, p, q) in ea {
                    for &(be, s, t) in eb {
                        h += al * be * g[(q, s)] * g[(t, p)];
                    }
                }
                hess[(at + a, at + b)] += weight * h.re;
                if b != a {
                    hess[(at + b, at + a)] += weight * h.re;
                }
            }
        }
    }
}

/// Lower Cholesky factor with a real positive diagonal, or `None` unless
/// the Hermitian input is numerically positive definite.
pub(crate) fn cholesky(a: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    let n = a.nrows();
    let mut l = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = Complex64::from(d);
        for i in j + 1..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = v / d;
        }
    }
    Some(l)
}

/// `(L L^H)^{-1}` from the factor `L`.
fn inverse_from_cholesky(l: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = l.nrows();
    // Invert the triangular factor column by column.
    let mut li = DMatrix::<Complex64>::zeros(n, n);
    for c in 0..n {
        for i in c..n {
            let mut v = if i == c { Complex64::from(1.0) } else { Complex64::from(0.0) };
            for k in c..i {
                v -= l[(i, k)] * li[(k, c)];
            }
            li[(i, c)] = v / l[(i, i)];
        }
    }
    li.adjoint() * li
}

/// Channels of one realization expressed in an orthonormal basis of their
/// span. Any beamforming covariance can be projected onto that span without
/// changing received powers or increasing its trace, so all solvers work in
/// the reduced `r x r` space with `r <= min(M, L)`.
#[derive(Clone, Debug)]
pub(crate) struct ReducedChannels {
    /// `M x r` with orthonormal columns.
    pub basis: DMatrix<Complex64>,
    pub block: HermitianBlock,
    /// Per BS, coefficients giving the SNR `q_l = coeffs[l] . w` of a
    /// trace-normalized covariance.
    pub coeffs: Vec<Vec<f64>>,
    /// Per BS, the best single-user SNR `||g_l||^2`.
    pub peak_snr: Vec<f64>,
}

impl ReducedChannels {
    /// `snr_scale = P / sigma^2` so that trace-one covariances use full power.
    pub fn new(channels: &[DVector<Complex64>], snr_scale: f64) -> Self {
        let m = channels.first().map_or(0, |h| h.len());
        let largest = channels.iter().map(|h| h.norm()).fold(0.0, f64::max);
        let mut cols: Vec<DVector<Complex64>> = Vec::new();
        for h in channels {
            let mut v = h.clone();
            // Two passes of modified Gram-Schmidt keep the basis orthonormal
            // to rounding for nearly dependent channels.
            for _ in 0..2 {
                for u in &cols {
                    let proj = u.dotc(&v);
                    v -= u * proj;
                }
            }
            let norm = v.norm();
            if norm > 1e-10 * largest && cols.len() < m {
                cols.push(v / Complex64::from(norm));
            }
        }
        let r = cols.len();
        let basis = if r == 0 {
            DMatrix::zeros(m, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        let block = HermitianBlock::new(r);
        let root = snr_scale.sqrt();
        let reduced: Vec<DVector<Complex64>> = channels
            .iter()
            .map(|h| basis.adjoint() * h * Complex64::from(root))
            .collect();
        let coeffs = reduced.iter().map(|g| block.quadratic_coeffs(g)).collect();
        let peak_snr = reduced.iter().map(|g| g.norm_squared()).collect();
        ReducedChannels {
            basis,
            block,
            coeffs,
            peak_snr,
        }
    }

    pub fn num_bs(&self) -> usize {
        self.coeffs.len()
    }

    pub fn order(&self) -> usize {
        self.block.order()
    }

    pub fn snr(&self, bs: usize, w: &[f64]) -> f64 {
        dot(&self.coeffs[bs], w)
    }

    /// Full-size covariance `power * U W U^H`.
    pub fn lift(&self, w: &[f64], power: f64) -> DMatrix<Complex64> {
        let m = self.basis.nrows();
        if self.order() == 0 {
            return DMatrix::zeros(m, m);
        }
        let inner = self.block.to_matrix(w) * Complex64::from(power);
        &self.basis * inner * self.basis.adjoint()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log2(1 + q)` and its first two derivatives in `q`.
pub(crate) fn log2_1p(q: f64) -> (f64, f64, f64) {
    let ln2 = std::f64::consts::LN_2;
    let d = 1.0 + q;
    (q.ln_1p() / ln2, 1.0 / (d * ln2), -1.0 / (d * d * ln2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testutil::{random_psd, rng};
    use rand::Rng;

    fn numeric_grad(block: &HermitianBlock, w: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..w.len())
            .map(|i| {
                let mut p = w.to_vec();
                let mut m = w.to_vec();
                p[i] += h;
                m[i] -= h;
                (block.neg_logdet(&p).unwrap() - block.neg_logdet(&m).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn coordinates_round_trip() {
        let mut r = rng(1);
        let block = HermitianBlock::new(3);
        let w = random_psd(&mut r, 3);
        let x = block.from_matrix(w.as_matrix());
        assert!((block.to_matrix(&x) - w.as_matrix()).norm() < 1e-14);
        assert!((block.trace(&x) - w.trace()).abs() < 1e-14);
    }

    #[test]
    fn quadratic_coeffs_match_direct_form() {
        let mut r = rng(2);
        let block = HermitianBlock::new(3);
        let w = random_psd(&mut r, 3);
        let g = DVector::from_fn(3, |_, _| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
        let x = block.from_matrix(w.as_matrix());
        let direct = w.quadratic_form(&g);
        assert!((dot(&block.quadratic_coeffs(&g), &x) - direct).abs() < 1e-12 * (1.0 + direct));
    }

    #[test]
    fn logdet_derivatives_match_finite_differences() {
        let mut r = rng(3);
        let block = HermitianBlock::new(3);
        let mut w = random_psd(&mut r, 3).into_matrix();
        for i in 0..3 {
            w[(i, i)] += Complex64::from(0.5);
        }
        let x = block.from_matrix(&w);
        let n = block.len();
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        block.add_neg_logdet_derivs(&x, 1.0, 0, &mut grad, &mut hess);
        let fd = numeric_grad(&block, &x);
        for i in 0..n {
            assert!((grad[i] - fd[i]).abs() < 1e-6 * (1.0 + fd[i].abs()), "grad {i}");
        }
        let h = 1e-5;
        for j in 0..n {
            let mut p = x.clone();
            let mut m = x.clone();
            p[j] += h;
            m[j] -= h;
            let gp = numeric_grad(&block, &p);
            let gm = numeric_grad(&block, &m);
            for i in 0..n {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                assert!((hess[(i, j)] - fd).abs() < 1e-4 * (1.0 + fd.abs()), "hess {i} {j}");
            }
        }
        assert!(block.neg_logdet(&block.scaled_identity(-1.0)).is_none());
        let g = inverse_from_cholesky(&cholesky(&w).unwrap());
        assert!((g * &w - DMatrix::<Complex64>::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn reduction_preserves_received_power() {
        let mut r = rng(4);
        let m = 5;
        let channels: Vec<DVector<Complex64>> = (0..3)
            .map(|_| DVector::from_fn(m, |_, _| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))))
            .collect();
        let red = ReducedChannels::new(&channels, 4.0);
        assert_eq!(red.order(), 3);
        let w = red.block.scaled_identity(1.0 / 3.0);
        let full = red.lift(&w, 1.0);
        assert!((full.trace().re - 1.0).abs() < 1e-12);
        for (l, h) in channels.iter().enumerate() {
            let direct = 4.0 * (h.adjoint() * &full * h)[(0, 0)].re;
            assert!((red.snr(l, &w) - direct).abs() < 1e-10 * direct);
            assert!((red.peak_snr[l] - 4.0 * h.norm_squared()).abs() < 1e-10 * red.peak_snr[l]);
        }
        let dependent = vec![channels[0].clone(), channels[0].clone() * Complex64::new(0.0, 2.0)];
        assert_eq!(ReducedChannels::new(&dependent, 1.0).order(), 1);
    }
}
