//! Consensus ADMM for the trust-region model problem.
//!
//! Every realization (and file) keeps a local copy of its cache column; a
//! shared consensus allocation is the Euclidean projection of the averaged
//! local copies onto the budget-and-box set, and multipliers enforce
//! agreement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    solve_subproblem_reduced, LinearizedBlock, PreparedSample, SolveStatus,
};
use crate::parallel;
use crate::system::{ObjectiveSense, SystemConfig};

/// Minimizer of `0.5 * ||c - a||^2` over `sum c <= budget`,
/// `lower <= c <= upper`, with the budget multiplier `mu`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxProjection {
    pub values: Vec<f64>,
    pub mu: f64,
}

/// Projects `a` onto the capped simplex-box set. The solution is
/// `clip(a - mu, lower, upper)`, with `mu = 0` when the clipped point fits
/// the budget and otherwise found among the sorted breakpoints in
/// `O(m log m)`.
pub fn project_cache_simplex_box(
    a: &[f64],
    budget: f64,
    lower: &[f64],
    upper: &[f64],
) -> Result<BoxProjection> {
    let m = a.len();
    if lower.len() != m || upper.len() != m {
        return Err(Error::validation("projection bounds must match the point"));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::validation("projection needs lower <= upper"));
    }
    let floor: f64 = lower.iter().sum();
    if floor > budget + 1e-9 * (1.0 + budget.abs()) {
        return Err(Error::Infeasible(format!(
            "lower bounds sum to {floor}, above the budget {budget}"
        )));
    }
    let clip = |mu: f64| -> Vec<f64> {
        (0..m).map(|i| (a[i] - mu).clamp(lower[i], upper[i])).collect()
    };
    let at_zero = clip(0.0);
    if at_zero.iter().sum::<f64>() <= budget {
        return Ok(BoxProjection {
            values: at_zero,
            mu: 0.0,
        });
    }
    // S(mu) = sum clip(a - mu) is piecewise linear and nonincreasing. Entry
    // i is free (slope -1) for a_i - u_i < mu < a_i - l_i.
    let mut events: Vec<(f64, i32)> = Vec::with_capacity(2 * m);
    let mut slope = 0i32;
    for i in 0..m {
        let (enter, leave) = (a[i] - upper[i], a[i] - lower[i]);
        if enter > 0.0 {
            events.push((enter, -1));
        } else if leave > 0.0 {
            slope -= 1;
        }
        if leave > 0.0 {
            events.push((leave, 1));
        }
    }
    events.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut mu = 0.0;
    let mut sum: f64 = at_zero.iter().sum();
    for (at, delta) in events {
        let next = sum + slope as f64 * (at - mu);
        if next <= budget && slope < 0 {
            mu += (sum - budget) / (-slope as f64);
            break;
        }
        mu = at;
        sum = next;
        slope += delta;
    }
    let mut values = clip(mu);
    // Rounding can leave the sum a hair above the budget; trim free entries.
    let excess = values.iter().sum::<f64>() - budget;
    if excess > 0.0 {
        let free: Vec<usize> = (0..m).filter(|&i| values[i] > lower[i]).collect();
        for &i in &free {
            values[i] = (values[i] - excess / free.len() as f64).max(lower[i]);
        }
    }
    Ok(BoxProjection { values, mu })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmParams {
    pub rho: f64,
    /// Relative and absolute residual tolerance.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Residual balancing: scale `rho` by 2 when one residual, relative to
    /// its stopping threshold, exceeds the other tenfold.
    pub adaptive_rho: bool,
}

impl Default for AdmmParams {
    fn default() -> Self {
        AdmmParams {
            rho: 1.0,
            tolerance: 1e-5,
            max_iterations: 500,
            adaptive_rho: true,
        }
    }
}

/// Iterate of the consensus method. Blocks are (realization, file) pairs;
/// block `i` serves file `files[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    /// Row-major `L x K`.
    pub consensus: Vec<f64>,
    pub previous_consensus: Vec<f64>,
    /// Per block, the local copy of its file's cache column.
    pub local: Vec<Vec<f64>>,
    pub multipliers: Vec<Vec<f64>>,
    pub files: Vec<usize>,
    pub num_files: usize,
    pub rho: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iteration: usize,
    pub status: SolveStatus,
}

impl AdmmState {
    fn column(&self, l: usize, k: usize) -> f64 {
        self.consensus[l * self.num_files + k]
    }

    /// Realizations per file.
    fn samples_per_file(&self) -> f64 {
        (self.local.len() / self.num_files.max(1)).max(1) as f64
    }
}

/// `(||c_i - C||_2, rho ||C - C_prev||_2 sqrt(N))` over all blocks.
pub fn admm_residuals(state: &AdmmState) -> (f64, f64) {
    let mut primal = 0.0;
    for (c, &k) in state.local.iter().zip(&state.files) {
        for (l, v) in c.iter().enumerate() {
            primal += (v - state.column(l, k)).powi(2);
        }
    }
    let change: f64 = state
        .consensus
        .iter()
        .zip(&state.previous_consensus)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    (
        primal.sqrt(),
        state.rho * change.sqrt() * state.samples_per_file().sqrt(),
    )
}

/// The model problem around the current trust-region iterate.
#[derive(Clone, Copy, Debug)]
pub struct LinearizedInstance<'a> {
    /// Per block.
    pub samples: &'a [&'a PreparedSample],
    pub files: &'a [usize],
    pub weights: &'a [f64],
    pub xi: &'a [f64],
    /// Row-major `L x K` linearization point.
    pub cache: &'a [f64],
    pub radius: f64,
}

impl LinearizedInstance<'_> {
    fn validate(&self, config: &SystemConfig) -> Result<()> {
        let n = self.samples.len();
        if n == 0 || self.files.len() != n || self.weights.len() != n || self.xi.len() != n {
            return Err(Error::validation("inconsistent block counts"));
        }
        if self.cache.len() != config.num_bs * config.num_files {
            return Err(Error::validation("linearization cache has the wrong shape"));
        }
        if self.files.iter().any(|&k| k >= config.num_files) {
            return Err(Error::validation("block refers to an unknown file"));
        }
        if self.samples.iter().any(|s| s.num_bs() != config.num_bs) {
            return Err(Error::validation("sample has the wrong number of BSs"));
        }
        if !(self.radius > 0.0) || self.xi.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::validation("radius and linearization rates must be positive"));
        }
        Ok(())
    }

    pub(crate) fn bounds(&self, config: &SystemConfig) -> (Vec<f64>, Vec<f64>) {
        let f = config.file_size;
        (
            self.cache.iter().map(|c| (c - self.radius).max(0.0)).collect(),
            self.cache.iter().map(|c| (c + self.radius).min(f)).collect(),
        )
    }
}

#[derive(Clone, Debug)]
pub struct AdmmOutcome {
    /// Consensus caches, row-major `L x K`.
    pub cache: Vec<f64>,
    /// Per block, the best rate variable consistent with the consensus
    /// caches and the block's covariance.
    pub xi: Vec<f64>,
    /// Per block, unit-trace covariance coordinates in the block's reduced
    /// basis.
    pub(crate) beams: Vec<Vec<f64>>,
    pub state: AdmmState,
}

impl AdmmOutcome {
    pub fn covariance(
        &self,
        block: usize,
        sample: &PreparedSample,
        config: &SystemConfig,
    ) -> crate::kernel::BeamformerCovariance {
        sample.covariance(&self.beams[block], config)
    }
}

/// Runs consensus ADMM on the model problem. `multipliers` optionally warm
/// starts the dual variables (one vector of length `L` per block).
pub fn admm_solve_linearized(
    inst: &LinearizedInstance,
    config: &SystemConfig,
    sense: ObjectiveSense,
    params: &AdmmParams,
    multipliers: Option<&[Vec<f64>]>,
) -> Result<AdmmOutcome> {
    inst.validate(config)?;
    let (l_count, k_count) = (config.num_bs, config.num_files);
    let f = config.file_size;
    let (lower, upper) = inst.bounds(config);
    let blocks: Vec<LinearizedBlock> = (0..inst.samples.len())
        .map(|i| LinearizedBlock {
            red: &inst.samples[i].red,
            file: inst.files[i],
            weight: inst.weights[i],
            xi_t: inst.xi[i],
            demand_t: (0..l_count)
                .map(|l| f - inst.cache[l * k_count + inst.files[i]])
                .collect(),
            radius: inst.radius,
        })
        .collect();
    let n_blocks = blocks.len();
    let mut per_file = vec![0usize; k_count];
    for &k in inst.files {
        per_file[k] += 1;
    }
    let mut state = AdmmState {
        consensus: inst.cache.to_vec(),
        previous_consensus: inst.cache.to_vec(),
        local: vec![vec![0.0; l_count]; n_blocks],
        multipliers: match multipliers {
            Some(m) if m.len() == n_blocks && m.iter().all(|v| v.len() == l_count) => m.to_vec(),
            _ => vec![vec![0.0; l_count]; n_blocks],
        },
        files: inst.files.to_vec(),
        num_files: k_count,
        rho: params.rho,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        iteration: 0,
        status: SolveStatus::MaxIter,
    };
    let mut beams: Vec<Vec<f64>> = vec![Vec::new(); n_blocks];
    let n_vars = (n_blocks * l_count) as f64;
    let tol = params.tolerance;

    for it in 1..=params.max_iterations {
        let anchors: Vec<Vec<f64>> = (0..n_blocks)
            .map(|i| (0..l_count).map(|l| state.column(l, inst.files[i])).collect())
            .collect();
        let rho = state.rho;
        let solved = parallel::map(&blocks, |i, block| {
            solve_subproblem_reduced(block, &anchors[i], &state.multipliers[i], rho, sense, f)
                .map_err(|e| e.at_sample(i))
        });
        for (i, res) in solved.into_iter().enumerate() {
            let sol = res?;
            state.local[i] = sol.cache;
            beams[i] = sol.w;
        }

        let mut a = vec![0.0; l_count * k_count];
        for (i, c) in state.local.iter().enumerate() {
            let k = inst.files[i];
            for l in 0..l_count {
                a[l * k_count + k] += (rho * c[l] + state.multipliers[i][l]) / (rho * per_file[k].max(1) as f64);
            }
        }
        let proj = project_cache_simplex_box(&a, config.total_cache, &lower, &upper)?;
        state.previous_consensus = std::mem::replace(&mut state.consensus, proj.values);
        for i in 0..n_blocks {
            let k = inst.files[i];
            for l in 0..l_count {
                state.multipliers[i][l] += rho * (state.local[i][l] - state.column(l, k));
            }
        }
        let (primal, dual) = admm_residuals(&state);
        state.primal_residual = primal;
        state.dual_residual = dual;
        state.iteration = it;

        let local_norm = state.local.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let consensus_norm = state.consensus.iter().map(|v| v * v).sum::<f64>().sqrt()
            * state.samples_per_file().sqrt();
        let dual_norm = state.multipliers.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let eps_primal = tol * (n_vars.sqrt() + local_norm.max(consensus_norm));
        let eps_dual = tol * (n_vars.sqrt() + dual_norm);
        if primal <= eps_primal && dual <= eps_dual {
            state.status = SolveStatus::Optimal;
            break;
        }
        // Balance residuals relative to their thresholds: multipliers and
        // caches live on very different scales.
        if params.adaptive_rho {
            let (p, d) = (primal / eps_primal, dual / eps_dual);
            if p > 10.0 * d {
                state.rho *= 2.0;
            } else if d > 10.0 * p {
                state.rho /= 2.0;
            }
        }
    }

    let xi = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| polish_xi(b, &beams[i], &state.consensus, k_count, f))
        .collect();
    Ok(AdmmOutcome {
        cache: state.consensus.clone(),
        xi,
        beams,
        state,
    })
}

/// Largest `xi` inside the trust region satisfying every linearized row
/// at the consensus caches with the block's covariance.
fn polish_xi(block: &LinearizedBlock, w: &[f64], consensus: &[f64], k_count: usize, f: f64) -> f64 {
    let lo = (block.xi_t - block.radius).max(0.0);
    let mut xi = block.xi_t + block.radius;
    for l in 0..block.red.num_bs() {
        let d = block.demand_t[l];
        if d > 0.0 {
            let s = crate::kernel::psd::log2_1p(block.red.snr(l, w).max(0.0)).0;
            let c = consensus[l * k_count + block.file];
            xi = xi.min((s + block.xi_t * (c - f) + d * block.xi_t) / d);
        }
    }
    xi.max(lo)
}
