use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether cache allocation minimizes expected downloading time or
/// maximizes expected downloading rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveSense {
    #[default]
    Time,
    Rate,
}

impl std::str::FromStr for ObjectiveSense {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(ObjectiveSense::Time),
            "rate" => Ok(ObjectiveSense::Rate),
            other => Err(Error::validation(format!(
                "unknown objective '{other}' (expected 'time' or 'rate')"
            ))),
        }
    }
}

impl std::fmt::Display for ObjectiveSense {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ObjectiveSense::Time => "time",
            ObjectiveSense::Rate => "rate",
        })
    }
}

/// Global problem constants. File size and cache sizes share one
/// normalized unit; powers are in watts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub file_size: f64,
    pub total_cache: f64,
    pub power_w: f64,
    pub sigma2: f64,
    pub antennas: usize,
    pub num_bs: usize,
    pub num_files: usize,
    pub bandwidth_hz: f64,
}

pub const DEFAULT_NOISE_PSD_DBM_HZ: f64 = -150.0;

impl Default for SystemConfig {
    fn default() -> Self {
        let bandwidth_hz = 20e6;
        SystemConfig {
            file_size: 100.0,
            total_cache: 100.0,
            power_w: 40.0,
            sigma2: noise_power_w(DEFAULT_NOISE_PSD_DBM_HZ, bandwidth_hz),
            antennas: 10,
            num_bs: 5,
            num_files: 1,
            bandwidth_hz,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::validation(msg.to_string()));
        if !(self.file_size > 0.0 && self.file_size.is_finite()) {
            return bad("file size must be positive");
        }
        if !(self.power_w > 0.0 && self.power_w.is_finite()) {
            return bad("transmit power must be positive");
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return bad("noise power must be positive");
        }
        if self.antennas == 0 || self.num_bs == 0 || self.num_files == 0 {
            return bad("antenna, base-station and file counts must be at least 1");
        }
        if !(self.bandwidth_hz > 0.0) {
            return bad("bandwidth must be positive");
        }
        let max_cache = (self.num_bs * self.num_files) as f64 * self.file_size;
        if !(self.total_cache >= 0.0 && self.total_cache <= max_cache * (1.0 + 1e-12)) {
            return Err(Error::validation(format!(
                "total cache {} outside [0, L*K*F = {max_cache}]",
                self.total_cache
            )));
        }
        Ok(())
    }

    /// `P / sigma^2`: multiplies `|h^H w|^2` for unit-trace beamformers.
    pub fn snr_scale(&self) -> f64 {
        self.power_w / self.sigma2
    }

    pub fn bandwidth_mhz(&self) -> f64 {
        self.bandwidth_hz / 1e6
    }

    /// Milliseconds per megabit at a spectral efficiency of `rate_bps_hz`.
    pub fn ms_per_mb(&self, rate_bps_hz: f64) -> f64 {
        1000.0 / (rate_bps_hz * self.bandwidth_mhz())
    }
}

/// Noise power in watts for a power spectral density in dBm/Hz.
pub fn noise_power_w(psd_dbm_hz: f64, bandwidth_hz: f64) -> f64 {
    let dbm = psd_dbm_hz + 10.0 * bandwidth_hz.log10();
    10f64.powf((dbm - 30.0) / 10.0)
}
