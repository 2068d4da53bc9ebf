use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::barrier::{minimize, BarrierOptions, BarrierProblem, Monitor};
use super::psd::{dot, log2_1p, ReducedChannels};
use super::{BeamformerCovariance, SolveReport, SolveStatus};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eig, HermitianMatrix};
use crate::system::SystemConfig;

/// max tau  s.t.  log2(1 + q_l(W)) >= d_l tau,  tr W <= 1,  W > 0.
///
/// Variables are the covariance coordinates followed by `tau / tau_ref`.
struct MaxMinRate<'a> {
    red: &'a ReducedChannels,
    rows: Vec<(usize, f64)>,
    n_w: usize,
    tau_ref: f64,
}

impl BarrierProblem for MaxMinRate<'_> {
    fn dim(&self) -> usize {
        self.n_w + 1
    }

    fn barrier_weight(&self) -> f64 {
        (self.rows.len() + 1 + self.red.order()) as f64
    }

    fn objective(&self, x: &[f64]) -> f64 {
        -x[self.n_w]
    }

    fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        let (w, tau) = (&x[..self.n_w], x[self.n_w] * self.tau_ref);
        let slack = 1.0 - self.red.block.trace(w);
        if !(slack > 0.0) {
            return None;
        }
        let mut v = -t * x[self.n_w] - slack.ln() + self.red.block.neg_logdet(w)?;
        for &(l, d) in &self.rows {
            let q = self.red.snr(l, w);
            if !(q > -1.0) {
                return None;
            }
            let g = log2_1p(q).0 - d * tau;
            if !(g > 0.0) {
                return None;
            }
            v -= g.ln();
        }
        Some(v)
    }

    fn derivatives(&self, x: &[f64], t: f64, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
        let n = self.n_w;
        let w = &x[..n];
        let tau = x[n] * self.tau_ref;
        grad.fill(0.0);
        hess.fill(0.0);
        grad[n] = -t;
        let slack = 1.0 - self.red.block.trace(w);
        let r = self.red.order();
        for i in 0..r {
            grad[i] += 1.0 / slack;
            for j in 0..r {
                hess[(i, j)] += 1.0 / (slack * slack);
            }
        }
        self.red.block.add_neg_logdet_derivs(w, 1.0, 0, grad, hess);
        let mut a = vec![0.0; n + 1];
        for &(l, d) in &self.rows {
            let c = &self.red.coeffs[l];
            let (s, s1, s2) = log2_1p(dot(c, w));
            let g = s - d * tau;
            for k in 0..n {
                a[k] = s1 * c[k];
            }
            a[n] = -d * self.tau_ref;
            // -log g: grad -a/g, hess a a^T / g^2 - (s2 c c^T) / g
            for i in 0..=n {
                grad[i] -= a[i] / g;
            }
            for i in 0..=n {
                for j in 0..=n {
                    hess[(i, j)] += a[i] * a[j] / (g * g);
                }
            }
            for i in 0..n {
                for j in 0..n {
                    hess[(i, j)] -= s2 * c[i] * c[j] / g;
                }
            }
        }
    }
}

/// Optimal max-min beam in reduced coordinates.
#[derive(Clone, Debug)]
pub(crate) struct ReducedBeam {
    /// Unit-trace covariance coordinates.
    pub w: Vec<f64>,
    pub xi: f64,
    pub report: SolveReport,
}

/// Solves the fixed-cache problem for missing amounts `demand[l] = F - C_l`.
/// BSs with nothing missing are dropped; if none remain `xi` is infinite.
pub(crate) fn max_min_rate(red: &ReducedChannels, demand: &[f64]) -> Result<ReducedBeam> {
    let r = red.order();
    let rows: Vec<(usize, f64)> = demand
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > 0.0)
        .map(|(l, d)| (l, *d))
        .collect();
    let isotropic = red.block.scaled_identity(if r == 0 { 0.0 } else { 1.0 / r as f64 });
    if rows.is_empty() {
        return Ok(ReducedBeam {
            w: isotropic,
            xi: f64::INFINITY,
            report: SolveReport::trivial(f64::INFINITY),
        });
    }
    let start_w = red.block.scaled_identity(1.0 / (r as f64 + 1.0));
    let start_tau = rows
        .iter()
        .map(|&(l, d)| log2_1p(red.snr(l, &start_w)).0 / d)
        .fold(f64::INFINITY, f64::min);
    if r == 0 || !(start_tau > 0.0) {
        return Ok(ReducedBeam {
            w: isotropic,
            xi: 0.0,
            report: SolveReport {
                objective: 0.0,
                iterations: 0,
                kkt_residual: 0.0,
                status: SolveStatus::Infeasible,
            },
        });
    }
    let tau_ref = rows
        .iter()
        .map(|&(l, d)| log2_1p(red.peak_snr[l]).0 / d)
        .fold(f64::INFINITY, f64::min);
    let problem = MaxMinRate {
        red,
        rows,
        n_w: red.block.len(),
        tau_ref,
    };
    let mut x0 = start_w;
    x0.push(0.5 * start_tau / tau_ref);
    let out = minimize(&problem, x0, None, &BarrierOptions::default(), |_, _, _| {
        Monitor::Continue
    })?;
    let mut w = out.x[..problem.n_w].to_vec();
    let tr = red.block.trace(&w);
    w.iter_mut().for_each(|v| *v /= tr);
    let xi = evaluate_xi(red, &w, demand);
    Ok(ReducedBeam {
        w,
        xi,
        report: SolveReport::from_gap(xi, out.newton_iterations, out.rel_gap),
    })
}

/// `min_l log2(1 + q_l) / d_l` over BSs with `d_l > 0`.
pub(crate) fn evaluate_xi(red: &ReducedChannels, w: &[f64], demand: &[f64]) -> f64 {
    demand
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > 0.0)
        .map(|(l, d)| log2_1p(red.snr(l, w).max(0.0)).0 / d)
        .fold(f64::INFINITY, f64::min)
}

/// Per-BS rates (bits per channel use) of the principal-eigenvector beam of
/// a reduced covariance, at full power.
pub(crate) fn rank_one_rates(red: &ReducedChannels, w: &[f64]) -> Result<Vec<f64>> {
    let r = red.order();
    if r == 0 {
        return Ok(vec![0.0; red.num_bs()]);
    }
    let eig = hermitian_eig(&HermitianMatrix::from_raw(red.block.to_matrix(w)))?;
    let v = eig.vector(0);
    let vv = red.block.from_matrix(&(&v * v.adjoint()));
    Ok((0..red.num_bs())
        .map(|l| log2_1p(red.snr(l, &vv).max(0.0)).0)
        .collect())
}

#[derive(Clone, Debug)]
pub struct BeamformingSolution {
    pub covariance: BeamformerCovariance,
    /// Optimal `min_l log2(1 + SNR_l) / (F - C_l)`; infinite when every BS
    /// holds the whole file.
    pub xi: f64,
    pub report: SolveReport,
}

fn check_channels(channels: &[DVector<Complex64>], config: &SystemConfig) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::validation("need at least one channel"));
    }
    if channels.iter().any(|h| h.len() != config.antennas) {
        return Err(Error::validation("channel length differs from antenna count"));
    }
    Ok(())
}

/// Max-min multicast beamforming at fixed cache sizes, one per channel.
pub fn solve_beamforming_fixed_cache(
    channels: &[DVector<Complex64>],
    cache: &[f64],
    config: &SystemConfig,
) -> Result<BeamformingSolution> {
    check_channels(channels, config)?;
    if cache.len() != channels.len() {
        return Err(Error::validation("need one cache size per channel"));
    }
    let red = ReducedChannels::new(channels, config.snr_scale());
    let demand: Vec<f64> = cache.iter().map(|c| config.file_size - c).collect();
    let beam = max_min_rate(&red, &demand)?;
    let covariance = if red.order() == 0 {
        BeamformerCovariance::isotropic(config.antennas, config.power_w)
    } else {
        BeamformerCovariance {
            w: HermitianMatrix::from_raw(red.lift(&beam.w, config.power_w)),
            trace_budget: config.power_w,
        }
    };
    Ok(BeamformingSolution {
        covariance,
        xi: beam.xi,
        report: beam.report,
    })
}

/// min tr W  s.t.  q_l(W) >= gamma_l,  W > 0.
struct MinTrace<'a> {
    red: &'a ReducedChannels,
    rows: Vec<(usize, f64)>,
    scale: f64,
}

impl BarrierProblem for MinTrace<'_> {
    fn dim(&self) -> usize {
        self.red.block.len()
    }

    fn barrier_weight(&self) -> f64 {
        (self.rows.len() + self.red.order()) as f64
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.red.block.trace(x) / self.scale
    }

    fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        let mut v = t * self.objective(x) + self.red.block.neg_logdet(x)?;
        for &(l, gamma) in &self.rows {
            let g = self.red.snr(l, x) / gamma - 1.0;
            if !(g > 0.0) {
                return None;
            }
            v -= g.ln();
        }
        Some(v)
    }

    fn derivatives(&self, x: &[f64], t: f64, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
        grad.fill(0.0);
        hess.fill(0.0);
        for i in 0..self.red.order() {
            grad[i] = t / self.scale;
        }
        self.red.block.add_neg_logdet_derivs(x, 1.0, 0, grad, hess);
        let n = x.len();
        for &(l, gamma) in &self.rows {
            let c = &self.red.coeffs[l];
            let g = dot(c, x) / gamma - 1.0;
            for i in 0..n {
                grad[i] -= c[i] / (gamma * g);
                for j in 0..n {
                    hess[(i, j)] += c[i] * c[j] / (gamma * gamma * g * g);
                }
            }
        }
    }
}

/// Smallest fraction of the power budget that supports rate
/// `xi * (F - C_l)` at every BS; infinite if some required BS is unreachable.
pub fn min_power_fraction(
    channels: &[DVector<Complex64>],
    cache: &[f64],
    xi: f64,
    config: &SystemConfig,
) -> Result<f64> {
    check_channels(channels, config)?;
    let red = ReducedChannels::new(channels, config.snr_scale());
    let rows: Vec<(usize, f64)> = cache
        .iter()
        .enumerate()
        .map(|(l, c)| (l, (xi * (config.file_size - c)).exp2() - 1.0))
        .filter(|(_, g)| *g > 0.0)
        .collect();
    if rows.is_empty() {
        return Ok(0.0);
    }
    if rows.iter().any(|&(l, _)| red.peak_snr[l] <= 0.0) {
        return Ok(f64::INFINITY);
    }
    let alpha = rows
        .iter()
        .map(|&(l, g)| g / red.peak_snr[l])
        .fold(0.0, f64::max);
    let x0 = red.block.scaled_identity(2.0 * alpha + 1e-300);
    let problem = MinTrace {
        scale: 2.0 * alpha * red.order() as f64,
        red: &red,
        rows,
    };
    let out = minimize(&problem, x0, None, &BarrierOptions::default(), |_, _, _| {
        Monitor::Continue
    })?;
    Ok(out.objective * problem.scale)
}

/// True when `xi` is achievable within the power budget, up to `tol`
/// relative slack on the trace.
pub fn feasibility_certificate(
    channels: &[DVector<Complex64>],
    cache: &[f64],
    xi: f64,
    config: &SystemConfig,
    tol: f64,
) -> Result<bool> {
    Ok(min_power_fraction(channels, cache, xi, config)? <= 1.0 + tol)
}

/// Principal-eigenvector beam `sqrt(P) v_1` of a covariance.
#[derive(Clone, Debug, PartialEq)]
pub enum RankOneBeam {
    Beam(DVector<Complex64>),
    /// The covariance was zero; the beam is the zero vector.
    ZeroCovariance(DVector<Complex64>),
}

impl RankOneBeam {
    pub fn vector(&self) -> &DVector<Complex64> {
        match self {
            RankOneBeam::Beam(v) | RankOneBeam::ZeroCovariance(v) => v,
        }
    }
}

pub fn extract_rank_one(w: &HermitianMatrix, power: f64) -> Result<RankOneBeam> {
    let m = w.dim();
    if w.frobenius_norm() <= f64::MIN_POSITIVE {
        return Ok(RankOneBeam::ZeroCovariance(DVector::zeros(m)));
    }
    let eig = hermitian_eig(w)?;
    Ok(RankOneBeam::Beam(eig.vector(0) * Complex64::from(power.sqrt())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testutil::rng;
    use crate::rate::mutual_info;
    use rand::Rng;

    fn random_channels(r: &mut impl Rng, l: usize, m: usize, scale: f64) -> Vec<DVector<Complex64>> {
        (0..l)
            .map(|_| {
                DVector::from_fn(m, |_, _| {
                    Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)) * scale
                })
            })
            .collect()
    }

    fn config(m: usize, l: usize) -> SystemConfig {
        SystemConfig {
            antennas: m,
            num_bs: l,
            power_w: 1.0,
            sigma2: 1.0,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn single_receiver_matches_matched_filter() {
        let mut r = rng(10);
        let cfg = config(4, 1);
        for _ in 0..20 {
            let h = random_channels(&mut r, 1, 4, 3.0);
            let sol = solve_beamforming_fixed_cache(&h, &[30.0], &cfg).unwrap();
            let expect = (1.0 + h[0].norm_squared()).log2() / 70.0;
            assert!((sol.xi / expect - 1.0).abs() < 1e-6, "{} vs {expect}", sol.xi);
            assert_eq!(sol.report.status, SolveStatus::Optimal);
            let mf = HermitianMatrix::outer(&h[0]).scale(1.0 / h[0].norm_squared());
            assert!((sol.covariance.w.as_matrix() - mf.as_matrix()).norm() < 1e-3);
        }
    }

    #[test]
    fn single_antenna_forces_full_power() {
        let mut r = rng(11);
        let cfg = SystemConfig {
            power_w: 2.0,
            ..config(1, 3)
        };
        let h = random_channels(&mut r, 3, 1, 2.0);
        let cache = [10.0, 40.0, 0.0];
        let sol = solve_beamforming_fixed_cache(&h, &cache, &cfg).unwrap();
        let expect = (0..3)
            .map(|l| (1.0 + 2.0 * h[l].norm_squared()).log2() / (100.0 - cache[l]))
            .fold(f64::INFINITY, f64::min);
        assert!((sol.xi / expect - 1.0).abs() < 1e-8);
        assert!((sol.covariance.trace() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn fully_cached_and_dead_channels() {
        let cfg = config(2, 2);
        let h = vec![DVector::from_element(2, Complex64::from(1.0)); 2];
        let sol = solve_beamforming_fixed_cache(&h, &[100.0, 100.0], &cfg).unwrap();
        assert_eq!(sol.xi, f64::INFINITY);
        let zero = vec![DVector::zeros(2); 2];
        let sol = solve_beamforming_fixed_cache(&zero, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(sol.xi, 0.0);
        assert_eq!(sol.report.status, SolveStatus::Infeasible);
    }

    #[test]
    fn optimum_is_tight_certified_and_consistent() {
        let mut r = rng(12);
        let cfg = config(4, 3);
        for _ in 0..10 {
            let h = random_channels(&mut r, 3, 4, 5.0);
            let cache = [r.random_range(0.0..90.0), r.random_range(0.0..90.0), 0.0];
            let sol = solve_beamforming_fixed_cache(&h, &cache, &cfg).unwrap();
            let w = &sol.covariance.w;
            assert!(w.min_eigenvalue().unwrap() >= -1e-8 * w.trace());
            assert!(w.trace() <= cfg.power_w * (1.0 + 1e-8));
            let rates: Vec<f64> = h.iter().map(|h| mutual_info(h, w, cfg.sigma2).unwrap()).collect();
            let ratios: Vec<f64> = (0..3).map(|l| rates[l] / (100.0 - cache[l])).collect();
            let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            assert!((min / sol.xi - 1.0).abs() < 1e-9);
            assert!(feasibility_certificate(&h, &cache, sol.xi, &cfg, 1e-7).unwrap());
            assert!(!feasibility_certificate(&h, &cache, sol.xi * (1.0 + 1e-4), &cfg, 1e-7).unwrap());
        }
    }

    #[test]
    fn more_cache_never_hurts() {
        let mut r = rng(13);
        let cfg = config(3, 3);
        let h = random_channels(&mut r, 3, 3, 4.0);
        let base = solve_beamforming_fixed_cache(&h, &[10.0, 10.0, 10.0], &cfg).unwrap().xi;
        for l in 0..3 {
            let mut c = [10.0; 3];
            c[l] = 50.0;
            let more = solve_beamforming_fixed_cache(&h, &c, &cfg).unwrap().xi;
            assert!(more >= base * (1.0 - 1e-9));
        }
    }

    #[test]
    fn two_by_two_matches_grid_search() {
        // For L = M = 2 the optimum lies in the span of both channels, which
        // is all of C^2; parameterize W = [[a, z], [z*, 1 - a]] on a grid.
        let mut r = rng(14);
        let cfg = config(2, 2);
        let h = random_channels(&mut r, 2, 2, 3.0);
        let cache = [20.0, 50.0];
        let sol = solve_beamforming_fixed_cache(&h, &cache, &cfg).unwrap();
        let mut best = 0.0f64;
        let steps = 120;
        for ia in 0..=steps {
            let a = ia as f64 / steps as f64;
            let rad = (a * (1.0 - a)).sqrt();
            for ir in 0..=steps / 2 {
                let mag = rad * ir as f64 / (steps / 2) as f64;
                for ip in 0..steps {
                    let z = Complex64::from_polar(mag, std::f64::consts::TAU * ip as f64 / steps as f64);
                    let w = HermitianMatrix::new(DMatrix::from_row_slice(
                        2,
                        2,
                        &[Complex64::from(a), z, z.conj(), Complex64::from(1.0 - a)],
                    ))
                    .unwrap();
                    let xi = (0..2)
                        .map(|l| mutual_info(&h[l], &w, 1.0).unwrap() / (100.0 - cache[l]))
                        .fold(f64::INFINITY, f64::min);
                    best = best.max(xi);
                }
            }
        }
        assert!(sol.xi >= best * (1.0 - 1e-9));
        assert!((sol.xi - best) / sol.xi < 1e-3, "{} vs grid {best}", sol.xi);
    }

    #[test]
    fn rank_one_extraction() {
        let u = DVector::from_vec(vec![Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)]);
        let w = HermitianMatrix::outer(&u).scale(3.0);
        let RankOneBeam::Beam(v) = extract_rank_one(&w, 3.0).unwrap() else {
            panic!("expected a beam");
        };
        assert!((v.norm_squared() - 3.0).abs() < 1e-9);
        let phase = u.dotc(&v) / Complex64::from(3f64.sqrt());
        assert!((phase.norm() - 1.0).abs() < 1e-9);
        let iso = HermitianMatrix::identity(3).scale(5.0 / 3.0);
        assert!((extract_rank_one(&iso, 5.0).unwrap().vector().norm_squared() - 5.0).abs() < 1e-9);
        assert!(matches!(
            extract_rank_one(&HermitianMatrix::zeros(2), 1.0).unwrap(),
            RankOneBeam::ZeroCovariance(_)
        ));
    }
}
