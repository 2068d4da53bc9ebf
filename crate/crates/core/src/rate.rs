//! Delivery rates and downloading times of a multicast file when base
//! stations hold part of it in cache.
//!
//! With separate cache-channel coding the transmitter must send the largest
//! missing portion at the weakest link's rate. With joint cache-channel
//! coding each base station only needs `(F - C_l) / I_l` channel uses, so the
//! downloading time is the worst of those ratios.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::HermitianMatrix;
use crate::system::SystemConfig;

/// Cache sizes `C_lk` for `L` base stations and `K` files, row-major in `l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AllocationRepr")]
pub struct CacheAllocation {
    num_bs: usize,
    num_files: usize,
    sizes: Vec<f64>,
}

/// Unchecked wire form; deserialization goes through [`CacheAllocation::from_rows`].
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AllocationRepr {
    num_bs: usize,
    num_files: usize,
    sizes: Vec<f64>,
}

impl TryFrom<AllocationRepr> for CacheAllocation {
    type Error = Error;

    fn try_from(r: AllocationRepr) -> Result<Self> {
        CacheAllocation::from_rows(r.num_bs, r.num_files, r.sizes)
    }
}

/// Slack allowed on budget and box constraints.
pub const FEASIBILITY_TOL: f64 = 1e-9;

impl CacheAllocation {
    /// Builds an allocation from row-major sizes (`sizes[l * K + k]`) without
    /// checking it against a configuration.
    pub fn from_rows(num_bs: usize, num_files: usize, sizes: Vec<f64>) -> Result<Self> {
        if num_bs == 0 || num_files == 0 {
            return Err(Error::validation("allocation needs at least one BS and one file"));
        }
        if sizes.len() != num_bs * num_files {
            return Err(Error::validation(format!(
                "expected {} cache sizes, got {}",
                num_bs * num_files,
                sizes.len()
            )));
        }
        if sizes.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation("cache sizes must be finite"));
        }
        Ok(CacheAllocation {
            num_bs,
            num_files,
            sizes,
        })
    }

    /// Single-file allocation from per-BS sizes.
    pub fn single(sizes: Vec<f64>) -> Result<Self> {
        let n = sizes.len();
        Self::from_rows(n, 1, sizes)
    }

    /// Builds from per-file columns (`columns[k][l]`).
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let num_files = columns.len();
        let num_bs = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != num_bs) {
            return Err(Error::validation("ragged cache columns"));
        }
        let mut sizes = vec![0.0; num_bs * num_files];
        for (k, col) in columns.iter().enumerate() {
            for (l, c) in col.iter().enumerate() {
                sizes[l * num_files + k] = *c;
            }
        }
        Self::from_rows(num_bs, num_files, sizes)
    }

    pub fn zeros(num_bs: usize, num_files: usize) -> Self {
        CacheAllocation {
            num_bs,
            num_files,
            sizes: vec![0.0; num_bs * num_files],
        }
    }

    pub fn filled(num_bs: usize, num_files: usize, value: f64) -> Self {
        CacheAllocation {
            num_bs,
            num_files,
            sizes: vec![value; num_bs * num_files],
        }
    }

    pub fn num_bs(&self) -> usize {
        self.num_bs
    }

    pub fn num_files(&self) -> usize {
        self.num_files
    }

    pub fn get(&self, bs: usize, file: usize) -> f64 {
        self.sizes[bs * self.num_files + file]
    }

    pub fn set(&mut self, bs: usize, file: usize, value: f64) {
        self.sizes[bs * self.num_files + file] = value;
    }

    /// Row-major sizes.
    pub fn as_slice(&self) -> &[f64] {
        &self.sizes
    }

    pub fn column(&self, file: usize) -> Vec<f64> {
        (0..self.num_bs).map(|l| self.get(l, file)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.num_files).map(|k| self.column(k)).collect()
    }

    pub fn total(&self) -> f64 {
        self.sizes.iter().sum()
    }

    pub fn file_totals(&self) -> Vec<f64> {
        (0..self.num_files)
            .map(|k| self.column(k).iter().sum())
            .collect()
    }

    pub fn bs_totals(&self) -> Vec<f64> {
        (0..self.num_bs)
            .map(|l| (0..self.num_files).map(|k| self.get(l, k)).sum())
            .collect()
    }

    /// Cached fractions `alpha_lk = C_lk / F`.
    pub fn fractions(&self, file_size: f64) -> Vec<f64> {
        self.sizes.iter().map(|c| c / file_size).collect()
    }

    /// Checks shape, `0 <= C_lk <= F` and the total budget.
    pub fn validate(&self, config: &SystemConfig) -> Result<()> {
        if self.num_bs != config.num_bs || self.num_files != config.num_files {
            return Err(Error::validation(format!(
                "allocation is {}x{}, configuration expects {}x{}",
                self.num_bs, self.num_files, config.num_bs, config.num_files
            )));
        }
        let f = config.file_size;
        if let Some(c) = self
            .sizes
            .iter()
            .find(|&&c| c < -FEASIBILITY_TOL || c > f + FEASIBILITY_TOL)
        {
            return Err(Error::validation(format!(
                "cache size {c} outside [0, {f}]"
            )));
        }
        let total = self.total();
        if total > config.total_cache + FEASIBILITY_TOL * (1.0 + config.total_cache) {
            return Err(Error::validation(format!(
                "allocation uses {total}, budget is {}",
                config.total_cache
            )));
        }
        Ok(())
    }
}

/// Rates (bits per channel use) and times (channel uses) for one channel
/// realization and one file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub per_bs_mutual_info: Vec<f64>,
    pub joint_rate: f64,
    pub joint_time: f64,
    pub separate_rate: f64,
    pub separate_time: f64,
}

impl RateReport {
    pub fn new(info: &[f64], cache: &[f64], file_size: f64) -> Result<Self> {
        Ok(RateReport {
            per_bs_mutual_info: info.to_vec(),
            joint_rate: joint_rate(info, cache, file_size)?,
            joint_time: joint_time(info, cache, file_size)?,
            separate_rate: separate_rate(info, cache, file_size)?,
            separate_time: separate_time(info, cache, file_size)?,
        })
    }
}

/// `log2(1 + h^H W h / sigma^2)` in bits per channel use.
pub fn mutual_info(h: &DVector<Complex64>, w: &HermitianMatrix, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::validation("noise power must be positive"));
    }
    if h.len() != w.dim() {
        return Err(Error::validation("channel and covariance dimensions differ"));
    }
    let snr = w.quadratic_form(h).max(0.0) / sigma2;
    Ok(snr.ln_1p() / std::f64::consts::LN_2)
}

fn check_inputs(info: &[f64], cache: &[f64], file_size: f64) -> Result<()> {
    if info.len() != cache.len() || info.is_empty() {
        return Err(Error::validation("need one mutual information per cache size"));
    }
    if !(file_size > 0.0) {
        return Err(Error::validation("file size must be positive"));
    }
    if info.iter().any(|i| !(*i >= 0.0)) {
        return Err(Error::validation("mutual information must be nonnegative"));
    }
    Ok(())
}

/// Missing portion `F - C_l`, clamped at zero.
fn missing(file_size: f64, c: f64) -> f64 {
    (file_size - c).max(0.0)
}

/// Downloading time with separate coding: `max_l (F - C_l) / min_l I_l`.
/// Returns `f64::INFINITY` when some content is missing but a link is dead.
pub fn separate_time(info: &[f64], cache: &[f64], file_size: f64) -> Result<f64> {
    check_inputs(info, cache, file_size)?;
    let need = cache
        .iter()
        .map(|c| missing(file_size, *c))
        .fold(0.0, f64::max);
    if need == 0.0 {
        return Ok(0.0);
    }
    let worst = info.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if worst == 0.0 { f64::INFINITY } else { need / worst })
}

/// `F / T_0`.
pub fn separate_rate(info: &[f64], cache: &[f64], file_size: f64) -> Result<f64> {
    let t = separate_time(info, cache, file_size)?;
    Ok(file_size / t)
}

/// Downloading time with joint coding: `max_l (F - C_l) / I_l`, where a fully
/// cached BS contributes zero even over a dead link.
pub fn joint_time(info: &[f64], cache: &[f64], file_size: f64) -> Result<f64> {
    check_inputs(info, cache, file_size)?;
    Ok(info
        .iter()
        .zip(cache)
        .map(|(i, c)| {
            let need = missing(file_size, *c);
            if need == 0.0 {
                0.0
            } else if *i == 0.0 {
                f64::INFINITY
            } else {
                need / i
            }
        })
        .fold(0.0, f64::max))
}

/// `min_l I_l / (1 - C_l / F)`, equal to `F / T_c`.
pub fn joint_rate(info: &[f64], cache: &[f64], file_size: f64) -> Result<f64> {
    let t = joint_time(info, cache, file_size)?;
    Ok(file_size / t)
}
