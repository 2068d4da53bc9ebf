use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cran_cache::channel::{BsGeometry, ChannelParams};
use cran_cache::system::{noise_power_w, ObjectiveSense, SystemConfig, DEFAULT_NOISE_PSD_DBM_HZ};
use cran_cache::trust_region::{PopularityProfile, TrustRegionOptions};

/// Allocation schemes `compare` and `zipf-sweep` can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    NoCache,
    Uniform,
    Proportional,
    MostPopular,
    Optimized,
    RankOne,
    Bound,
}

impl Scheme {
    pub const ALL: [Scheme; 7] = [
        Scheme::NoCache,
        Scheme::Uniform,
        Scheme::Proportional,
        Scheme::MostPopular,
        Scheme::Optimized,
        Scheme::RankOne,
        Scheme::Bound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::NoCache => "no-cache",
            Scheme::Uniform => "uniform",
            Scheme::Proportional => "proportional",
            Scheme::MostPopular => "most-popular",
            Scheme::Optimized => "optimized",
            Scheme::RankOne => "rank-one",
            Scheme::Bound => "bound",
        }
    }

    /// Row label in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Scheme::NoCache => "NoCache",
            Scheme::Uniform => "Uniform",
            Scheme::Proportional => "Proportional",
            Scheme::MostPopular => "MostPopular",
            Scheme::Optimized => "Optimized",
            Scheme::RankOne => "Rank-One",
            Scheme::Bound => "LowerBound",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .with_context(|| {
                let names: Vec<_> = Scheme::ALL.iter().map(|x| x.name()).collect();
                format!("unknown scheme '{s}' (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum PopularitySpec {
    Zipf { alpha: f64 },
    Explicit { probabilities: Vec<f64> },
}

impl Default for PopularitySpec {
    fn default() -> Self {
        PopularitySpec::Zipf { alpha: 0.0 }
    }
}

/// Everything an experiment needs. Every field has a default, so `{}` is a
/// valid configuration describing the reference five-BS setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub distances_m: Vec<f64>,
    pub angles_deg: Option<Vec<f64>>,
    pub file_size: f64,
    pub total_cache: f64,
    pub power_w: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    pub antennas: usize,
    pub num_files: usize,
    pub channel: ChannelParams,
    pub seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub schemes: Vec<Scheme>,
    pub objective: ObjectiveSense,
    pub popularity: PopularitySpec,
    /// Draw separate channel realizations per file instead of sharing one
    /// set across files.
    pub per_file_samples: bool,
    pub trust_region: TrustRegionOptions,
    pub percentiles: Vec<f64>,
    pub zipf_alphas: Vec<f64>,
    /// Random probe directions for the stationarity estimate; 0 skips it.
    pub stationarity_probes: usize,
    /// Where artifacts go unless `--out` overrides it. Not part of the hash.
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let system = SystemConfig::default();
        ExperimentConfig {
            distances_m: BsGeometry::reference_topology().distances_m,
            angles_deg: None,
            file_size: system.file_size,
            total_cache: system.total_cache,
            power_w: system.power_w,
            noise_psd_dbm_hz: DEFAULT_NOISE_PSD_DBM_HZ,
            bandwidth_hz: system.bandwidth_hz,
            antennas: system.antennas,
            num_files: 1,
            channel: ChannelParams::default(),
            seed: 1,
            train_samples: 100,
            test_samples: 900,
            schemes: vec![
                Scheme::NoCache,
                Scheme::Uniform,
                Scheme::Proportional,
                Scheme::Optimized,
                Scheme::RankOne,
                Scheme::Bound,
            ],
            objective: ObjectiveSense::Time,
            popularity: PopularitySpec::default(),
            per_file_samples: false,
            trust_region: TrustRegionOptions::default(),
            percentiles: vec![10.0, 50.0, 90.0],
            zipf_alphas: vec![0.0, 0.5, 1.0, 1.5],
            stationarity_probes: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn geometry(&self) -> BsGeometry {
        BsGeometry {
            distances_m: self.distances_m.clone(),
            angles_deg: self.angles_deg.clone(),
        }
    }

    pub fn system(&self) -> SystemConfig {
        SystemConfig {
            file_size: self.file_size,
            total_cache: self.total_cache,
            power_w: self.power_w,
            sigma2: noise_power_w(self.noise_psd_dbm_hz, self.bandwidth_hz),
            antennas: self.antennas,
            num_bs: self.distances_m.len(),
            num_files: self.num_files,
            bandwidth_hz: self.bandwidth_hz,
        }
    }

    pub fn popularity_profile(&self) -> Result<PopularityProfile> {
        let p = match &self.popularity {
            PopularitySpec::Zipf { alpha } => PopularityProfile::zipf(self.num_files, *alpha)?,
            PopularitySpec::Explicit { probabilities } => {
                if probabilities.len() != self.num_files {
                    bail!(
                        "popularity lists {} files, num_files is {}",
                        probabilities.len(),
                        self.num_files
                    );
                }
                PopularityProfile::new(probabilities.clone())?
            }
        };
        Ok(p)
    }

    /// Full schema check; run before any work.
    pub fn validate(&self) -> Result<()> {
        self.geometry().validate()?;
        self.system().validate()?;
        self.channel.validate()?;
        self.trust_region.validate()?;
        self.popularity_profile()?;
        if self.objective == ObjectiveSense::Rate && self.num_files > 1 {
            bail!("the rate objective is defined for a single file; set num_files = 1");
        }
        if self.train_samples == 0 || self.test_samples == 0 {
            bail!("train_samples and test_samples must be positive");
        }
        if self.percentiles.iter().any(|p| !(0.0..=100.0).contains(p)) {
            bail!("percentiles must lie in [0, 100]");
        }
        if self.zipf_alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            bail!("zipf_alphas must be finite and nonnegative");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, in hex. Ignores the output
    /// directory so relocated runs stay comparable.
    pub fn hash(&self) -> String {
        let mut canonical_config = self.clone();
        canonical_config.output_dir = PathBuf::new();
        let canonical = serde_json::to_string(&canonical_config).expect("config always serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
