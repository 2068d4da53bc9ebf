//! The trust-region model problem: per-realization beamformers and rates
//! tied to cache sizes through rate constraints linearized at
//! `(xi_t, C_t)`:
//!
//! `log2(1 + q_l(W)) >= xi_t (F - c_l) + (F - C_l(t)) (xi - xi_t)`.
//!
//! Two couplings of the cache variables are supported: a local copy with an
//! augmented-Lagrangian penalty (one realization, used by the consensus
//! method) and shared variables under box and budget constraints (all
//! realizations at once, used as a reference solver on small instances).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::barrier::{minimize, BarrierOptions, BarrierProblem, Monitor};
use super::beamforming::max_min_rate;
use super::psd::{dot, log2_1p, ReducedChannels};
use super::{BeamformerCovariance, SolveReport};
use crate::error::{Error, Result};
use crate::linalg::HermitianMatrix;
use crate::system::{ObjectiveSense, SystemConfig};

/// One realization (and file) of the model problem.
#[derive(Clone, Debug)]
pub(crate) struct LinearizedBlock<'a> {
    pub red: &'a ReducedChannels,
    pub file: usize,
    pub weight: f64,
    pub xi_t: f64,
    /// `F - C_l(t)` for this block's file.
    pub demand_t: Vec<f64>,
    pub radius: f64,
}

impl LinearizedBlock<'_> {
    fn xi_bounds(&self) -> (f64, f64) {
        ((self.xi_t - self.radius).max(0.0), self.xi_t + self.radius)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum CacheCoupling<'a> {
    /// Free local caches with `sum_l lambda_l (c_l - a_l) + rho/2 (c_l - a_l)^2`.
    Penalty {
        anchor: &'a [f64],
        multiplier: &'a [f64],
        rho: f64,
    },
    /// Shared caches `c[l * K + k]` with `lower < c < upper`, `sum c < budget`.
    Constrained {
        lower: &'a [f64],
        upper: &'a [f64],
        budget: f64,
        num_files: usize,
    },
}

struct ModelProblem<'a> {
    blocks: &'a [LinearizedBlock<'a>],
    coupling: CacheCoupling<'a>,
    sense: ObjectiveSense,
    file_size: f64,
    offsets: Vec<usize>,
    cache_at: usize,
    n_cache: usize,
}

impl<'a> ModelProblem<'a> {
    fn new(
        blocks: &'a [LinearizedBlock<'a>],
        coupling: CacheCoupling<'a>,
        sense: ObjectiveSense,
        file_size: f64,
    ) -> Self {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut at = 0;
        for b in blocks {
            offsets.push(at);
            at += b.red.block.len() + 1;
        }
        let n_bs = blocks[0].red.num_bs();
        let n_cache = match coupling {
            CacheCoupling::Penalty { .. } => n_bs,
            CacheCoupling::Constrained { num_files, .. } => n_bs * num_files,
        };
        ModelProblem {
            blocks,
            coupling,
            sense,
            file_size,
            offsets,
            cache_at: at,
            n_cache,
        }
    }

    fn cache_index(&self, block: &LinearizedBlock, l: usize) -> usize {
        match self.coupling {
            CacheCoupling::Penalty { .. } => self.cache_at + l,
            CacheCoupling::Constrained { num_files, .. } => self.cache_at + l * num_files + block.file,
        }
    }

    fn xi_index(&self, b: usize) -> usize {
        self.offsets[b] + self.blocks[b].red.block.len()
    }

    /// Row slack `s_l(W) + xi_t c_l - d_l xi - xi_t F + d_l xi_t`.
    fn row(&self, block: &LinearizedBlock, s: f64, xi: f64, c: f64, l: usize) -> f64 {
        let d = block.demand_t[l];
        s + block.xi_t * c - d * xi - block.xi_t * self.file_size + d * block.xi_t
    }

    fn rate_term(&self, weight: f64, xi: f64) -> (f64, f64, f64) {
        match self.sense {
            ObjectiveSense::Time => (weight / xi, -weight / (xi * xi), 2.0 * weight / (xi * xi * xi)),
            ObjectiveSense::Rate => (-weight * xi, -weight, 0.0),
        }
    }
}

impl BarrierProblem for ModelProblem<'_> {
    fn dim(&self) -> usize {
        self.cache_at + self.n_cache
    }

    fn barrier_weight(&self) -> f64 {
        let mut m = 0.0;
        for b in self.blocks {
            let boxes = if b.xi_bounds().0 > 0.0 { 2 } else { 1 };
            m += (b.red.num_bs() + 1 + b.red.order() + boxes) as f64;
        }
        if let CacheCoupling::Constrained { .. } = self.coupling {
            m += (2 * self.n_cache + 1) as f64;
        }
        m
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let mut f = 0.0;
        for (b, block) in self.blocks.iter().enumerate() {
            f += self.rate_term(block.weight, x[self.xi_index(b)]).0;
        }
        if let CacheCoupling::Penalty { anchor, multiplier, rho } = self.coupling {
            for l in 0..self.n_cache {
                let e = x[self.cache_at + l] - anchor[l];
                f += multiplier[l] * e + 0.5 * rho * e * e;
            }
        }
        f
    }

    fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        let mut v = 0.0;
        for (b, block) in self.blocks.iter().enumerate() {
            let red = block.red;
            let w = &x[self.offsets[b]..self.offsets[b] + red.block.len()];
            let xi = x[self.xi_index(b)];
            let (lo, hi) = block.xi_bounds();
            let slack = 1.0 - red.block.trace(w);
            if !(xi > lo && xi < hi && slack > 0.0) {
                return None;
            }
            v -= slack.ln() + (xi - lo).ln() + (hi - xi).ln();
            if lo == 0.0 {
                v += (xi - lo).ln() - xi.ln();
            }
            v += red.block.neg_logdet(w)?;
            for l in 0..red.num_bs() {
                let q = red.snr(l, w);
                if !(q > -1.0) {
                    return None;
                }
                let g = self.row(block, log2_1p(q).0, xi, x[self.cache_index(block, l)], l);
                if !(g > 0.0) {
                    return None;
                }
                v -= g.ln();
            }
        }
        if let CacheCoupling::Constrained { lower, upper, budget, .. } = self.coupling {
            let c = &x[self.cache_at..];
            let room = budget - c.iter().sum::<f64>();
            if !(room > 0.0) {
                return None;
            }
            v -= room.ln();
            for i in 0..self.n_cache {
                let (a, b) = (c[i] - lower[i], upper[i] - c[i]);
                if !(a > 0.0 && b > 0.0) {
                    return None;
                }
                v -= a.ln() + b.ln();
            }
        }
        Some(v + t * self.objective(x))
    }

    fn derivatives(&self, x: &[f64], t: f64, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
        grad.fill(0.0);
        hess.fill(0.0);
        let mut nz: Vec<(usize, f64)> = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            let red = block.red;
            let at = self.offsets[b];
            let n = red.block.len();
            let w = &x[at..at + n];
            let xi_i = self.xi_index(b);
            let xi = x[xi_i];
            let (lo, hi) = block.xi_bounds();

            let (_, f1, f2) = self.rate_term(block.weight, xi);
            grad[xi_i] += t * f1 - 1.0 / (xi - lo) + 1.0 / (hi - xi);
            hess[(xi_i, xi_i)] += t * f2 + 1.0 / ((xi - lo) * (xi - lo)) + 1.0 / ((hi - xi) * (hi - xi));

            let slack = 1.0 - red.block.trace(w);
            for i in 0..red.order() {
                grad[at + i] += 1.0 / slack;
                for j in 0..red.order() {
                    hess[(at + i, at + j)] += 1.0 / (slack * slack);
                }
            }
            red.block.add_neg_logdet_derivs(w, 1.0, at, grad, hess);

            for l in 0..red.num_bs() {
                let coeff = &red.coeffs[l];
                let ci = self.cache_index(block, l);
                let (s, s1, s2) = log2_1p(dot(coeff, w));
                let g = self.row(block, s, xi, x[ci], l);
                nz.clear();
                nz.extend((0..n).map(|k| (at + k, s1 * coeff[k])));
                nz.push((xi_i, -block.demand_t[l]));
                nz.push((ci, block.xi_t));
                for &(i, ai) in &nz {
                    grad[i] -= ai / g;
                    for &(j, aj) in &nz {
                        hess[(i, j)] += ai * aj / (g * g);
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        hess[(at + i, at + j)] -= s2 * coeff[i] * coeff[j] / g;
                    }
                }
            }
        }
        let c0 = self.cache_at;
        match self.coupling {
            CacheCoupling::Penalty { anchor, multiplier, rho } => {
                for l in 0..self.n_cache {
                    grad[c0 + l] += t * (multiplier[l] + rho * (x[c0 + l] - anchor[l]));
                    hess[(c0 + l, c0 + l)] += t * rho;
                }
            }
            CacheCoupling::Constrained { lower, upper, budget, .. } => {
                let c = &x[c0..];
                let room = budget - c.iter().sum::<f64>();
                for i in 0..self.n_cache {
                    let (a, b) = (c[i] - lower[i], upper[i] - c[i]);
                    grad[c0 + i] += 1.0 / room - 1.0 / a + 1.0 / b;
                    hess[(c0 + i, c0 + i)] += 1.0 / (a * a) + 1.0 / (b * b);
                    for j in 0..self.n_cache {
                        hess[(c0 + i, c0 + j)] += 1.0 / (room * room);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ReducedSubproblem {
    pub w: Vec<f64>,
    pub xi: f64,
    pub cache: Vec<f64>,
    pub report: SolveReport,
}

/// Solves the penalized single-realization model problem.
pub(crate) fn solve_subproblem_reduced(
    block: &LinearizedBlock,
    anchor: &[f64],
    multiplier: &[f64],
    rho: f64,
    sense: ObjectiveSense,
    file_size: f64,
) -> Result<ReducedSubproblem> {
    if !(block.xi_t > 0.0 && block.radius > 0.0 && rho > 0.0) {
        return Err(Error::validation(
            "model problem needs positive rate, radius and penalty",
        ));
    }
    let blocks = std::slice::from_ref(block);
    let problem = ModelProblem::new(
        blocks,
        CacheCoupling::Penalty {
            anchor,
            multiplier,
            rho,
        },
        sense,
        file_size,
    );
    let red = block.red;
    let n_w = red.block.len();
    // Warm starts from the previous anchor's solution cost more Newton steps
    // than this point, whose cache floor keeps every row strictly feasible.
    let x0 = {
        let w = red.block.scaled_identity(1.0 / (red.order() as f64 + 1.0));
        let mut x = w.clone();
        x.push(block.xi_t);
        for l in 0..red.num_bs() {
            let floor = file_size - log2_1p(red.snr(l, &w)).0 / block.xi_t;
            x.push((floor + 1.0).max(anchor[l] - multiplier[l] / rho));
        }
        x
    };
    let out = minimize(&problem, x0, None, &BarrierOptions::default(), |_, _, _| {
        Monitor::Continue
    })?;
    let sol = ReducedSubproblem {
        w: out.x[..n_w].to_vec(),
        xi: out.x[n_w],
        cache: out.x[n_w + 1..].to_vec(),
        report: SolveReport::from_gap(out.objective, out.newton_iterations, out.rel_gap),
    };
    Ok(sol)
}

/// Strictly feasible start for the constrained coupling, built from each
/// block's fixed-cache optimum at the linearization point.
fn constrained_start(
    problem: &ModelProblem,
    blocks: &[LinearizedBlock],
    cache_t: &[f64],
    lower: &[f64],
    upper: &[f64],
    budget: f64,
) -> Result<Vec<f64>> {
    let n_cache = cache_t.len();
    let sum_lower: f64 = lower.iter().sum();
    let sum_upper: f64 = upper.iter().sum();
    let target = sum_lower + 0.5 * (budget.min(sum_upper) - sum_lower);
    let theta = if sum_upper > sum_lower {
        ((target - sum_lower) / (sum_upper - sum_lower)).min(0.5)
    } else {
        0.5
    };
    let center: Vec<f64> = (0..n_cache)
        .map(|i| lower[i] + theta * (upper[i] - lower[i]))
        .collect();
    let beams = blocks
        .iter()
        .map(|b| max_min_rate(b.red, &b.demand_t))
        .collect::<Result<Vec<_>>>()?;
    let mut eta = 1e-2;
    for _ in 0..30 {
        let c: Vec<f64> = (0..n_cache)
            .map(|i| (1.0 - eta) * cache_t[i] + eta * center[i])
            .collect();
        let mut x = Vec::with_capacity(problem.dim());
        for (block, beam) in blocks.iter().zip(&beams) {
            let r = block.red.order().max(1) as f64;
            let iso = block.red.block.scaled_identity(1.0 / r);
            let w: Vec<f64> = beam
                .w
                .iter()
                .zip(&iso)
                .map(|(a, b)| (1.0 - 2.0 * eta) * a + eta * b)
                .collect();
            let (lo, hi) = block.xi_bounds();
            let mut ub = hi;
            for l in 0..block.red.num_bs() {
                let s = log2_1p(block.red.snr(l, &w)).0;
                let cl = c[problem.cache_index(block, l) - problem.cache_at];
                let rest = problem.row(block, s, 0.0, cl, l);
                let d = block.demand_t[l];
                if d > 0.0 {
                    ub = ub.min(rest / d);
                } else if rest <= 0.0 {
                    ub = f64::NEG_INFINITY;
                }
            }
            x.extend_from_slice(&w);
            x.push(lo + 0.5 * (ub - lo));
        }
        x.extend_from_slice(&c);
        if problem.value(&x, 1.0).is_some() {
            return Ok(x);
        }
        eta *= 0.5;
    }
    Err(Error::Infeasible(
        "could not find a strictly feasible point of the model problem".into(),
    ))
}

/// Linearization point and trust-region radius for one realization.
#[derive(Clone, Debug, PartialEq)]
pub struct Linearization {
    pub xi: f64,
    pub cache: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug)]
pub struct SubproblemSolution {
    pub covariance: BeamformerCovariance,
    pub xi: f64,
    pub cache: Vec<f64>,
    pub report: SolveReport,
}

fn lift(red: &ReducedChannels, w: &[f64], config: &SystemConfig) -> BeamformerCovariance {
    if red.order() == 0 {
        return BeamformerCovariance::isotropic(config.antennas, config.power_w);
    }
    BeamformerCovariance {
        w: HermitianMatrix::from_raw(red.lift(w, config.power_w)),
        trace_budget: config.power_w,
    }
}

/// One local step of the consensus method for a single realization:
/// minimizes `weight / xi` (or `-weight * xi`) plus the augmented-Lagrangian
/// penalty on local caches subject to the linearized rate constraints.
#[allow(clippy::too_many_arguments)]
pub fn solve_admm_subproblem(
    channels: &[DVector<Complex64>],
    lin: &Linearization,
    anchor: &[f64],
    multiplier: &[f64],
    rho: f64,
    sense: ObjectiveSense,
    weight: f64,
    config: &SystemConfig,
) -> Result<SubproblemSolution> {
    let l = channels.len();
    if lin.cache.len() != l || anchor.len() != l || multiplier.len() != l {
        return Err(Error::validation("need one cache, anchor and multiplier per BS"));
    }
    let red = ReducedChannels::new(channels, config.snr_scale());
    let block = LinearizedBlock {
        red: &red,
        file: 0,
        weight,
        xi_t: lin.xi,
        demand_t: lin.cache.iter().map(|c| config.file_size - c).collect(),
        radius: lin.radius,
    };
    let sol = solve_subproblem_reduced(&block, anchor, multiplier, rho, sense, config.file_size)?;
    Ok(SubproblemSolution {
        covariance: lift(&red, &sol.w, config),
        xi: sol.xi,
        cache: sol.cache,
        report: sol.report,
    })
}

/// Reference solution of the whole model problem.
#[derive(Clone, Debug)]
pub struct DirectSolution {
    pub xi: Vec<f64>,
    pub covariances: Vec<BeamformerCovariance>,
    /// Row-major `L x K`.
    pub cache: Vec<f64>,
    pub objective: f64,
    pub report: SolveReport,
}

/// Solves the trust-region model problem for all realizations jointly with
/// a single dense interior-point method. Intended for small instances.
///
/// `samples[i]` holds the channels of block `i`, which serves file
/// `files[i]` with objective weight `weights[i]` and linearization
/// `xi_t[i]`; `cache_t` is the row-major `L x K` linearization point.
#[allow(clippy::too_many_arguments)]
pub fn solve_linearized_direct(
    samples: &[&[DVector<Complex64>]],
    files: &[usize],
    weights: &[f64],
    xi_t: &[f64],
    cache_t: &[f64],
    radius: f64,
    sense: ObjectiveSense,
    config: &SystemConfig,
) -> Result<DirectSolution> {
    let nb = samples.len();
    let (l, k) = (config.num_bs, config.num_files);
    if nb == 0 || files.len() != nb || weights.len() != nb || xi_t.len() != nb || cache_t.len() != l * k {
        return Err(Error::validation("inconsistent model problem dimensions"));
    }
    if !(radius > 0.0) || xi_t.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::validation("radius and linearization rates must be positive"));
    }
    let f = config.file_size;
    let reds: Vec<ReducedChannels> = samples
        .iter()
        .map(|h| ReducedChannels::new(h, config.snr_scale()))
        .collect();
    let blocks: Vec<LinearizedBlock> = (0..nb)
        .map(|i| LinearizedBlock {
            red: &reds[i],
            file: files[i],
            weight: weights[i],
            xi_t: xi_t[i],
            demand_t: (0..l).map(|b| f - cache_t[b * k + files[i]]).collect(),
            radius,
        })
        .collect();
    let lower: Vec<f64> = cache_t.iter().map(|c| (c - radius).max(0.0)).collect();
    let upper: Vec<f64> = cache_t.iter().map(|c| (c + radius).min(f)).collect();
    let budget = config.total_cache;
    let problem = ModelProblem::new(
        &blocks,
        CacheCoupling::Constrained {
            lower: &lower,
            upper: &upper,
            budget,
            num_files: k,
        },
        sense,
        f,
    );
    let x0 = constrained_start(&problem, &blocks, cache_t, &lower, &upper, budget)?;
    let out = minimize(&problem, x0, None, &BarrierOptions::default(), |_, _, _| {
        Monitor::Continue
    })?;
    let mut xi = Vec::with_capacity(nb);
    let mut covariances = Vec::with_capacity(nb);
    for (b, block) in blocks.iter().enumerate() {
        let at = problem.offsets[b];
        covariances.push(lift(block.red, &out.x[at..at + block.red.block.len()], config));
        xi.push(out.x[problem.xi_index(b)]);
    }
    Ok(DirectSolution {
        xi,
        covariances,
        cache: out.x[problem.cache_at..].to_vec(),
        objective: out.objective,
        report: SolveReport::from_gap(out.objective, out.newton_iterations, out.rel_gap),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::solve_beamforming_fixed_cache;
    use crate::linalg::testutil::rng;
    use crate::rate::mutual_info;
    use rand::Rng;

    fn config(m: usize, l: usize) -> SystemConfig {
        SystemConfig {
            antennas: m,
            num_bs: l,
            power_w: 1.0,
            sigma2: 1.0,
            total_cache: 60.0,
            ..SystemConfig::default()
        }
    }

    fn channels(r: &mut impl Rng, l: usize, m: usize) -> Vec<DVector<Complex64>> {
        (0..l)
            .map(|k| {
                DVector::from_fn(m, |_, _| {
                    Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)) * (2.0 + 4.0 * k as f64)
                })
            })
            .collect()
    }

    /// Linearized model value at `(xi, c)` for `M = 1` (full power forced).
    fn scalar_objective(h: &[DVector<Complex64>], lin: &Linearization, xi: f64, c: &[f64], anchor: &[f64], lam: &[f64], rho: f64) -> Option<f64> {
        let (lo, hi) = ((lin.xi - lin.radius).max(0.0), lin.xi + lin.radius);
        if xi <= lo || xi >= hi {
            return None;
        }
        for l in 0..h.len() {
            let s = (1.0 + h[l].norm_squared()).log2();
            let d = 100.0 - lin.cache[l];
            if s + lin.xi * c[l] - d * xi - lin.xi * 100.0 + d * lin.xi < 0.0 {
                return None;
            }
        }
        let pen: f64 = (0..h.len())
            .map(|l| lam[l] * (c[l] - anchor[l]) + 0.5 * rho * (c[l] - anchor[l]).powi(2))
            .sum();
        Some(1.0 / xi + pen)
    }

    #[test]
    fn single_antenna_subproblem_matches_grid() {
        let mut r = rng(30);
        let cfg = config(1, 2);
        let h = channels(&mut r, 2, 1);
        let cache = vec![25.0, 35.0];
        let xi0 = solve_beamforming_fixed_cache(&h, &cache, &cfg).unwrap().xi;
        let lin = Linearization {
            xi: xi0,
            cache: cache.clone(),
            radius: 1.0,
        };
        let (anchor, lam, rho) = ([25.0, 35.0], [0.3, -0.2], 1.0);
        let sol = solve_admm_subproblem(&h, &lin, &anchor, &lam, rho, ObjectiveSense::Time, 1.0, &cfg).unwrap();
        let got = scalar_objective(&h, &lin, sol.xi, &sol.cache, &anchor, &lam, rho).unwrap_or(f64::INFINITY);
        // With xi fixed the best caches are the larger of the penalty minimizer
        // and the row constraint, so only xi needs a grid.
        let mut best = f64::INFINITY;
        let steps = 400_000;
        let (lo, hi) = ((xi0 - 1.0).max(0.0), xi0 + 1.0);
        for i in 1..steps {
            let xi = lo + (hi - lo) * i as f64 / steps as f64;
            let c: Vec<f64> = (0..2)
                .map(|l| {
                    let s = (1.0 + h[l].norm_squared()).log2();
                    let d = 100.0 - cache[l];
                    let floor = (d * xi + xi0 * 100.0 - d * xi0 - s) / xi0;
                    (anchor[l] - lam[l] / rho).max(floor)
                })
                .collect();
            if let Some(v) = scalar_objective(&h, &lin, xi, &c, &anchor, &lam, rho) {
                best = best.min(v);
            }
        }
        assert!((got - best).abs() <= 1e-4 * best.abs().max(1.0), "{got} vs {best}");
        assert!(sol.report.kkt_residual <= 1e-7);
    }

    #[test]
    fn stiff_penalty_pins_caches() {
        let mut r = rng(31);
        let cfg = config(3, 3);
        let h = channels(&mut r, 3, 3);
        let cache = vec![20.0, 20.0, 20.0];
        let fixed = solve_beamforming_fixed_cache(&h, &cache, &cfg).unwrap().xi;
        let lin = Linearization {
            xi: fixed,
            cache: cache.clone(),
            radius: 10.0,
        };
        let sol = solve_admm_subproblem(&h, &lin, &cache, &[0.0; 3], 1e6, ObjectiveSense::Time, 1.0, &cfg).unwrap();
        for c in &sol.cache {
            assert!((c - 20.0).abs() < 1e-3);
        }
        assert!((sol.xi / fixed - 1.0).abs() < 1e-4, "{} vs {fixed}", sol.xi);
        assert!(sol.covariance.trace() <= 1.0 + 1e-8);
    }

    #[test]
    fn weak_penalty_approaches_fixed_cache_optimum() {
        // With a tiny penalty caches are nearly free, so xi rises to the top
        // of the trust region; with a tight radius that is xi_t + r.
        let mut r = rng(32);
        let cfg = config(2, 2);
        let h = channels(&mut r, 2, 2);
        let cache = vec![30.0, 30.0];
        let fixed = solve_beamforming_fixed_cache(&h, &cache, &cfg).unwrap().xi;
        let lin = Linearization {
            xi: fixed,
            cache: cache.clone(),
            radius: 1e-3 * fixed,
        };
        let sol = solve_admm_subproblem(&h, &lin, &cache, &[0.0; 2], 1e-9, ObjectiveSense::Time, 1.0, &cfg).unwrap();
        assert!((sol.xi - (fixed + lin.radius)).abs() < 1e-6 * fixed);
    }

    #[test]
    fn direct_single_block_agrees_with_rates() {
        let mut r = rng(33);
        let cfg = config(2, 2);
        let h = channels(&mut r, 2, 2);
        let cache = vec![30.0, 30.0];
        let xi0 = solve_beamforming_fixed_cache(&h, &cache, &cfg).unwrap().xi;
        let sol = solve_linearized_direct(&[&h], &[0], &[1.0], &[xi0], &cache, 1.0, ObjectiveSense::Time, &cfg).unwrap();
        assert!(sol.cache.iter().sum::<f64>() <= 60.0 + 1e-9);
        assert!(sol.cache.iter().all(|c| (29.0 - 1e-9..=31.0 + 1e-9).contains(c)));
        // The model is optimistic only through the linearization; at the
        // returned point the linearized rows hold.
        for l in 0..2 {
            let s = mutual_info(&h[l], &sol.covariances[0].w, 1.0).unwrap();
            let d = 100.0 - cache[l];
            let rhs = xi0 * (100.0 - sol.cache[l]) + d * (sol.xi[0] - xi0);
            assert!(s >= rhs - 1e-7);
        }
        assert!(sol.xi[0] >= xi0 * (1.0 - 1e-9));
    }
}
