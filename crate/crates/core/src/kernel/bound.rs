//! Per-channel dynamic cache allocation: caches and beamformer chosen
//! jointly for each realization. Not implementable in practice, it bounds
//! any fixed allocation from the optimistic side.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::barrier::{minimize, BarrierOptions, BarrierProblem, Monitor};
use super::beamforming::max_min_rate;
use super::psd::{log2_1p, ReducedChannels};
use super::{BeamformerCovariance, SolveReport};
use crate::error::{Error, Result};
use crate::linalg::HermitianMatrix;
use crate::system::SystemConfig;

/// Largest `xi` with `sum_l max(0, F - rates_l / xi) <= budget`: the best
/// normalized rate when caches may be placed freely for fixed link rates.
pub fn max_rate_for_budget(rates: &[f64], file_size: f64, budget: f64) -> f64 {
    let mut s: Vec<f64> = rates.iter().map(|r| r.max(0.0)).collect();
    s.sort_by(f64::total_cmp);
    let mut prefix = 0.0;
    for k in 1..=s.len() {
        prefix += s[k - 1];
        let need = k as f64 * file_size - budget;
        if need <= 0.0 {
            continue;
        }
        let xi = prefix / need;
        if k == s.len() || xi <= s[k] / file_size {
            return xi;
        }
    }
    f64::INFINITY
}

/// min sum z  s.t.  z_l > 0,  z_l > F - log2(1 + q_l(W)) / xi,  tr W < 1.
struct CacheNeed<'a> {
    red: &'a ReducedChannels,
    file_size: f64,
    xi: f64,
    n_w: usize,
}

impl CacheNeed<'_> {
    fn slack(&self, w: &[f64], z: f64, l: usize) -> (f64, f64, f64) {
        let (s, s1, s2) = log2_1p(self.red.snr(l, w));
        (z - self.file_size + s / self.xi, s1 / self.xi, s2 / self.xi)
    }
}

impl BarrierProblem for CacheNeed<'_> {
    fn dim(&self) -> usize {
        self.n_w + self.red.num_bs()
    }

    fn barrier_weight(&self) -> f64 {
        (2 * self.red.num_bs() + 1 + self.red.order()) as f64
    }

    fn objective(&self, x: &[f64]) -> f64 {
        x[self.n_w..].iter().sum::<f64>() / self.file_size
    }

    fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        let w = &x[..self.n_w];
        let tr = 1.0 - self.red.block.trace(w);
        if !(tr > 0.0) {
            return None;
        }
        let mut v = t * self.objective(x) - tr.ln() + self.red.block.neg_logdet(w)?;
        for (l, &z) in x[self.n_w..].iter().enumerate() {
            if !(z > 0.0) || !(self.red.snr(l, w) > -1.0) {
                return None;
            }
            let h = self.slack(w, z, l).0;
            if !(h > 0.0) {
                return None;
            }
            v -= z.ln() + h.ln();
        }
        Some(v)
    }

    fn derivatives(&self, x: &[f64], t: f64, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
        let n = self.n_w;
        let w = &x[..n];
        grad.fill(0.0);
        hess.fill(0.0);
        let tr = 1.0 - self.red.block.trace(w);
        for i in 0..self.red.order() {
            grad[i] += 1.0 / tr;
            for j in 0..self.red.order() {
                hess[(i, j)] += 1.0 / (tr * tr);
            }
        }
        self.red.block.add_neg_logdet_derivs(w, 1.0, 0, grad, hess);
        for (l, &z) in x[n..].iter().enumerate() {
            let zi = n + l;
            grad[zi] += t / self.file_size - 1.0 / z;
            hess[(zi, zi)] += 1.0 / (z * z);
            let c = &self.red.coeffs[l];
            let (h, s1, s2) = self.slack(w, z, l);
            // h = z + s(q)/xi + const; grad_w h = s1 c, grad_z h = 1.
            let idx = (0..n).chain(std::iter::once(zi));
            let a = |i: usize| if i == zi { 1.0 } else { s1 * c[i] };
            for i in idx.clone() {
                grad[i] -= a(i) / h;
                for j in idx.clone() {
                    hess[(i, j)] += a(i) * a(j) / (h * h);
                }
            }
            for i in 0..n {
                for j in 0..n {
                    hess[(i, j)] -= s2 * c[i] * c[j] / h;
                }
            }
        }
    }
}

/// Outcome of one bisection probe.
enum Probe {
    /// Budget suffices; carries a certifying covariance.
    Feasible(Vec<f64>),
    Infeasible,
}

fn probe(red: &ReducedChannels, file_size: f64, budget: f64, xi: f64, warm: &[f64]) -> Result<(Probe, usize)> {
    let n_w = red.block.len();
    let problem = CacheNeed {
        red,
        file_size,
        xi,
        n_w,
    };
    let mut x0 = warm.to_vec();
    for l in 0..red.num_bs() {
        let need = file_size - log2_1p(red.snr(l, warm)).0 / xi;
        x0.push(need.max(0.0) + 0.05 * file_size);
    }
    let target = budget / file_size;
    let mut verdict = None;
    let out = minimize(&problem, x0, None, &BarrierOptions::default(), |_, f0, gap| {
        if f0 <= target {
            verdict = Some(true);
            Monitor::Stop
        } else if f0 - gap > target {
            verdict = Some(false);
            Monitor::Stop
        } else {
            Monitor::Continue
        }
    })?;
    let feasible = verdict.unwrap_or(out.objective <= target * (1.0 + 1e-12));
    let probe = if feasible {
        Probe::Feasible(out.x[..n_w].to_vec())
    } else {
        Probe::Infeasible
    };
    Ok((probe, out.newton_iterations))
}

/// Bisection tolerance on `xi`, relative.
const BISECTION_TOL: f64 = 1e-7;

#[derive(Clone, Debug)]
pub(crate) struct ReducedBound {
    pub w: Vec<f64>,
    pub xi: f64,
    pub cache: Vec<f64>,
    pub report: SolveReport,
}

pub(crate) fn dynamic_bound_reduced(red: &ReducedChannels, file_size: f64, budget: f64) -> Result<ReducedBound> {
    let l = red.num_bs();
    let r = red.order();
    let caches_for = |w: &[f64], xi: f64| -> Vec<f64> {
        (0..l)
            .map(|k| {
                if xi == f64::INFINITY {
                    file_size
                } else {
                    (file_size - log2_1p(red.snr(k, w)).0 / xi).clamp(0.0, file_size)
                }
            })
            .collect()
    };
    if budget >= l as f64 * file_size {
        let w = red.block.scaled_identity(if r == 0 { 0.0 } else { 1.0 / r as f64 });
        return Ok(ReducedBound {
            cache: vec![file_size; l],
            w,
            xi: f64::INFINITY,
            report: SolveReport::trivial(f64::INFINITY),
        });
    }
    if budget <= 0.0 || r == 0 {
        let beam = max_min_rate(red, &vec![file_size; l])?;
        let cache = vec![0.0; l];
        return Ok(ReducedBound {
            w: beam.w,
            xi: beam.xi,
            cache,
            report: beam.report,
        });
    }
    let rates_of = |w: &[f64]| -> Vec<f64> { (0..l).map(|k| log2_1p(red.snr(k, w)).0).collect() };
    let mut best_w = red.block.scaled_identity(1.0 / r as f64);
    let mut lo = max_rate_for_budget(&rates_of(&best_w), file_size, budget);
    let peak: Vec<f64> = red.peak_snr.iter().map(|&q| log2_1p(q).0).collect();
    let mut hi = max_rate_for_budget(&peak, file_size, budget);
    let mut iterations = 0;
    let interior = red.block.scaled_identity(1.0 / (r as f64 + 1.0));
    while hi - lo > BISECTION_TOL * lo {
        let mid = 0.5 * (lo + hi);
        // Warm start from the incumbent, pulled into the interior.
        let warm: Vec<f64> = best_w
            .iter()
            .zip(&interior)
            .map(|(a, b)| 0.9 * a * (r as f64) / (r as f64 + 1.0) + 0.1 * b)
            .collect();
        let (outcome, its) = probe(red, file_size, budget, mid, &warm)?;
        iterations += its;
        match outcome {
            Probe::Feasible(w) => {
                let tr = red.block.trace(&w);
                let w: Vec<f64> = w.iter().map(|v| v / tr).collect();
                let xi = max_rate_for_budget(&rates_of(&w), file_size, budget);
                if xi > lo {
                    lo = xi;
                    best_w = w;
                } else {
                    lo = mid.min(hi);
                }
            }
            Probe::Infeasible => hi = mid,
        }
    }
    let xi = max_rate_for_budget(&rates_of(&best_w), file_size, budget);
    let cache = caches_for(&best_w, xi);
    Ok(ReducedBound {
        cache,
        w: best_w,
        xi,
        report: SolveReport::from_gap(xi, iterations, ((hi - xi) / xi).max(0.0)),
    })
}

#[derive(Clone, Debug)]
pub struct DynamicBound {
    pub covariance: BeamformerCovariance,
    pub cache: Vec<f64>,
    pub xi: f64,
    pub report: SolveReport,
}

/// Jointly optimal caches and covariance for a single channel realization.
pub fn solve_dynamic_bound(channels: &[DVector<Complex64>], config: &SystemConfig) -> Result<DynamicBound> {
    if channels.len() != config.num_bs || channels.iter().any(|h| h.len() != config.antennas) {
        return Err(Error::validation("channel shape differs from configuration"));
    }
    let red = ReducedChannels::new(channels, config.snr_scale());
    let b = dynamic_bound_reduced(&red, config.file_size, config.total_cache)?;
    let covariance = if red.order() == 0 {
        BeamformerCovariance::isotropic(config.antennas, config.power_w)
    } else {
        BeamformerCovariance {
            w: HermitianMatrix::from_raw(red.lift(&b.w, config.power_w)),
            trace_budget: config.power_w,
        }
    };
    Ok(DynamicBound {
        covariance,
        cache: b.cache,
        xi: b.xi,
        report: b.report,
    })
}
