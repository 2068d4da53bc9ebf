//! Held-out evaluation of cache allocations.
//!
//! Every test realization is served with its own optimal covariance for
//! the given caches. Times are normalized (`1 / xi`, channel uses per bit
//! of a unit file) and converted to ms/Mb; rates are `F xi` in bps/Hz.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::kernel::{dynamic_bound_reduced, max_min_rate, rank_one_rates, PreparedSample};
use crate::parallel;
use crate::rate::CacheAllocation;
use crate::system::SystemConfig;
use crate::trust_region::PopularityProfile;

/// Zipf popularity with exponent `alpha` over `num_files` files.
pub fn zipf(num_files: usize, alpha: f64) -> Result<PopularityProfile> {
    PopularityProfile::zipf(num_files, alpha)
}

/// How each test channel is served.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Delivery {
    /// Optimal transmit covariance for the fixed caches.
    #[default]
    Covariance,
    /// Principal eigenvector of that covariance at full power.
    RankOne,
    /// Caches re-optimized per channel under the total budget: a lower
    /// bound for every fixed allocation.
    DynamicBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Percentiles reported for both metrics, in percent.
    pub percentiles: Vec<f64>,
    pub delivery: Delivery,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            percentiles: vec![10.0, 50.0, 90.0],
            delivery: Delivery::Covariance,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentile {
    pub percentile: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub delivery: Delivery,
    /// Normalized time per test channel (popularity-weighted over files).
    pub per_sample_time: Vec<f64>,
    /// bps/Hz per test channel (popularity-weighted over files).
    pub per_sample_rate: Vec<f64>,
    pub mean_time: f64,
    pub mean_rate: f64,
    pub time_percentiles: Vec<Percentile>,
    pub rate_percentiles: Vec<Percentile>,
    /// Multiplies a normalized time into ms/Mb.
    pub ms_per_mb_factor: f64,
    pub mean_time_ms_per_mb: f64,
    /// Mean normalized time per file.
    pub per_file_mean_time: Vec<f64>,
    /// Empirical CDF of the per-channel time in ms/Mb.
    pub cdf_points: Vec<(f64, f64)>,
}

impl EvalReport {
    fn build(
        delivery: Delivery,
        per_sample_time: Vec<f64>,
        per_sample_rate: Vec<f64>,
        per_file_mean_time: Vec<f64>,
        config: &SystemConfig,
        percentiles: &[f64],
    ) -> Result<Self> {
        if percentiles.iter().any(|p| !(0.0..=100.0).contains(p)) {
            return Err(Error::validation("percentiles must lie in [0, 100]"));
        }
        let factor = 1000.0 / (config.file_size * config.bandwidth_mhz());
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mut sorted_time = per_sample_time.clone();
        sorted_time.sort_by(f64::total_cmp);
        let mut sorted_rate = per_sample_rate.clone();
        sorted_rate.sort_by(f64::total_cmp);
        let n = sorted_time.len() as f64;
        let mean_time = mean(&per_sample_time);
        Ok(EvalReport {
            delivery,
            mean_rate: mean(&per_sample_rate),
            time_percentiles: percentiles
                .iter()
                .map(|&p| Percentile { percentile: p, value: nearest_rank(&sorted_time, p) })
                .collect(),
            rate_percentiles: percentiles
                .iter()
                .map(|&p| Percentile { percentile: p, value: nearest_rank(&sorted_rate, p) })
                .collect(),
            ms_per_mb_factor: factor,
            mean_time_ms_per_mb: mean_time * factor,
            cdf_points: sorted_time
                .iter()
                .enumerate()
                .map(|(i, t)| (t * factor, (i + 1) as f64 / n))
                .collect(),
            mean_time,
            per_sample_time,
            per_sample_rate,
            per_file_mean_time,
        })
    }

    pub fn time_percentile(&self, percentile: f64) -> Option<f64> {
        find(&self.time_percentiles, percentile)
    }

    pub fn rate_percentile(&self, percentile: f64) -> Option<f64> {
        find(&self.rate_percentiles, percentile)
    }

    pub fn time_percentile_ms_per_mb(&self, percentile: f64) -> Option<f64> {
        self.time_percentile(percentile).map(|t| t * self.ms_per_mb_factor)
    }

    /// Two-column CSV `value,cumulative_fraction` with six significant
    /// digits.
    pub fn cdf_csv(&self) -> String {
        let mut out = String::from("value,cumulative_fraction\n");
        for (v, p) in &self.cdf_points {
            out.push_str(&format!("{},{}\n", format_significant(*v, 6), format_significant(*p, 6)));
        }
        out
    }
}

fn find(points: &[Percentile], percentile: f64) -> Option<f64> {
    points
        .iter()
        .find(|p| (p.percentile - percentile).abs() < 1e-12)
        .map(|p| p.value)
}

/// Smallest sorted value with at least `p` percent of samples at or below.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// `x` with `digits` significant digits, without trailing zeros.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&magnitude) {
        return format!("{:.*e}", digits.saturating_sub(1), x);
    }
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn check_sets(sets: &[ChannelSet], num_files: usize, config: &SystemConfig) -> Result<()> {
    if sets.is_empty() || (sets.len() != 1 && sets.len() != num_files) {
        return Err(Error::validation("expected one shared test set or one per file"));
    }
    for s in sets {
        if s.is_empty() || s.len() != sets[0].len() {
            return Err(Error::validation("test sets must be nonempty and equally sized"));
        }
        if s.num_bs() != config.num_bs || s.antennas() != config.antennas {
            return Err(Error::validation("test set does not match the configuration"));
        }
    }
    Ok(())
}

/// Optimal rate variable of one channel and cache column.
fn channel_xi(sample: &PreparedSample, column: &[f64], config: &SystemConfig, delivery: Delivery) -> Result<f64> {
    let demand: Vec<f64> = column.iter().map(|c| config.file_size - c).collect();
    match delivery {
        Delivery::Covariance => Ok(max_min_rate(&sample.red, &demand)?.xi),
        Delivery::RankOne => {
            let beam = max_min_rate(&sample.red, &demand)?;
            let rates = rank_one_rates(&sample.red, &beam.w)?;
            Ok(demand
                .iter()
                .zip(&rates)
                .filter(|(d, _)| **d > 0.0)
                .map(|(d, r)| r / d)
                .fold(f64::INFINITY, f64::min))
        }
        Delivery::DynamicBound => {
            Ok(dynamic_bound_reduced(&sample.red, config.file_size, config.total_cache)?.xi)
        }
    }
}

fn time_of(xi: f64) -> f64 {
    if xi.is_infinite() {
        0.0
    } else {
        1.0 / xi
    }
}

/// Evaluates a single-file allocation on held-out channels.
pub fn evaluate_single(
    test: &ChannelSet,
    allocation: &CacheAllocation,
    config: &SystemConfig,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if config.num_files != 1 {
        return Err(Error::validation("single-file evaluation needs num_files = 1"));
    }
    evaluate_multi(std::slice::from_ref(test), allocation, &PopularityProfile::single(), config, options)
}

/// Evaluates an `L x K` allocation. Channel `n` of file `k` is served with
/// column `k`; per-channel figures are popularity-weighted over files, so
/// their mean is the expected time `sum_k p_k mean_n T_kn`.
pub fn evaluate_multi(
    test: &[ChannelSet],
    allocation: &CacheAllocation,
    popularity: &PopularityProfile,
    config: &SystemConfig,
    options: &EvalOptions,
) -> Result<EvalReport> {
    config.validate()?;
    let k_count = popularity.num_files();
    if k_count != config.num_files {
        return Err(Error::validation("popularity does not match the number of files"));
    }
    allocation.validate(config)?;
    check_sets(test, k_count, config)?;
    let n = test[0].len();
    let shared = test.len() == 1;
    let p = popularity.probabilities();
    let columns = allocation.columns();
    let prepared: Vec<Vec<PreparedSample>> = test
        .iter()
        .map(|s| s.samples().iter().map(|h| PreparedSample::new(h, config)).collect())
        .collect();
    let indices: Vec<usize> = (0..n).collect();
    let per_channel: Vec<Vec<f64>> = parallel::try_map(&indices, |_, &i| {
        let mut xis = Vec::with_capacity(k_count);
        let mut cache: Option<f64> = None;
        for k in 0..k_count {
            let sample = &prepared[if shared { 0 } else { k }][i];
            // The dynamic bound does not depend on the file's column.
            let xi = match (options.delivery, shared, cache) {
                (Delivery::DynamicBound, true, Some(x)) => x,
                _ => channel_xi(sample, &columns[k], config, options.delivery).map_err(|e| e.at_sample(i))?,
            };
            cache = Some(xi);
            xis.push(xi);
        }
        Ok::<_, Error>(xis)
    })?;
    let mut per_sample_time = Vec::with_capacity(n);
    let mut per_sample_rate = Vec::with_capacity(n);
    let mut per_file = vec![0.0; k_count];
    for (i, xis) in per_channel.iter().enumerate() {
        if let Some(k) = xis.iter().position(|x| *x <= 0.0 || x.is_nan()) {
            return Err(Error::Infeasible(format!("file {k} cannot be delivered over this channel")).at_sample(i));
        }
        per_sample_time.push(xis.iter().zip(p).map(|(x, pk)| pk * time_of(*x)).sum());
        per_sample_rate.push(xis.iter().zip(p).map(|(x, pk)| pk * config.file_size * x).sum());
        for (k, x) in xis.iter().enumerate() {
            per_file[k] += time_of(*x) / n as f64;
        }
    }
    EvalReport::build(options.delivery, per_sample_time, per_sample_rate, per_file, config, &options.percentiles)
}
