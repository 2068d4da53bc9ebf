//! Correlated Rayleigh channels from the central processor to each base
//! station: `h_l = K_l^{1/2} v_l` with `v_l ~ CN(0, I)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matrix_sqrt, HermitianMatrix};
use crate::system::SystemConfig;

/// Distances (and optionally nominal angles) from the transmitter to each BS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsGeometry {
    pub distances_m: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles_deg: Option<Vec<f64>>,
}

impl BsGeometry {
    pub fn new(distances_m: Vec<f64>) -> Result<Self> {
        let g = BsGeometry {
            distances_m,
            angles_deg: None,
        };
        g.validate()?;
        Ok(g)
    }

    /// Five BSs at 398, 278, 473, 286 and 267 m.
    pub fn reference_topology() -> Self {
        BsGeometry {
            distances_m: vec![398.0, 278.0, 473.0, 286.0, 267.0],
            angles_deg: None,
        }
    }

    pub fn num_bs(&self) -> usize {
        self.distances_m.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.distances_m.is_empty() {
            return Err(Error::validation("geometry needs at least one BS"));
        }
        if self.distances_m.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::validation("BS distances must be positive"));
        }
        if let Some(a) = &self.angles_deg {
            if a.len() != self.distances_m.len() {
                return Err(Error::validation("need one angle per BS"));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation("angles must be finite"));
            }
        }
        Ok(())
    }
}

/// Large-scale and correlation parameters shared by all links.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub antenna_gain_dbi: f64,
    pub small_scale_gain_db: f64,
    /// Adjacent-antenna correlation magnitude, in `[0, 1)`.
    pub correlation: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            antenna_gain_dbi: 17.0,
            small_scale_gain_db: 0.0,
            correlation: 0.5,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.correlation) {
            return Err(Error::validation("antenna correlation must lie in [0, 1)"));
        }
        if !self.antenna_gain_dbi.is_finite() || !self.small_scale_gain_db.is_finite() {
            return Err(Error::validation("gains must be finite"));
        }
        Ok(())
    }

    /// Linear power gain `g` of a link at `distance_m`.
    pub fn link_gain(&self, distance_m: f64) -> Result<f64> {
        let db = self.antenna_gain_dbi - path_loss_db(distance_m / 1000.0)? + self.small_scale_gain_db;
        Ok(10f64.powf(db / 10.0))
    }
}

/// `128.1 + 37.6 log10(d)` with `d` in kilometers.
pub fn path_loss_db(distance_km: f64) -> Result<f64> {
    if !(distance_km > 0.0 && distance_km.is_finite()) {
        return Err(Error::validation("distance must be positive"));
    }
    Ok(128.1 + 37.6 * distance_km.log10())
}

/// `g * R` with `R_ij = rho^|i-j| exp(i (i-j) pi sin(theta))`.
pub fn correlation_matrix(antennas: usize, gain: f64, rho: f64, angle_deg: f64) -> HermitianMatrix {
    let phase = std::f64::consts::PI * angle_deg.to_radians().sin();
    let m = DMatrix::from_fn(antennas, antennas, |i, j| {
        let d = i as f64 - j as f64;
        let mag = if i == j { 1.0 } else { rho.powi(i.abs_diff(j) as i32) };
        Complex64::from_polar(gain * mag, d * phase)
    });
    HermitianMatrix::from_raw(m)
}

/// Draws one angle per BS uniformly in (-90, 90) degrees unless the
/// geometry fixes them.
pub fn bs_angles(geometry: &BsGeometry, seed: u64) -> Vec<f64> {
    match &geometry.angles_deg {
        Some(a) => a.clone(),
        None => {
            let mut rng = stream_rng(seed, 0);
            (0..geometry.num_bs())
                .map(|_| rng.random_range(-90.0..90.0))
                .collect()
        }
    }
}

/// Covariance `K_l` of BS `bs_index`; trace equals `M g_l`.
pub fn build_correlation(
    geometry: &BsGeometry,
    bs_index: usize,
    config: &SystemConfig,
    params: &ChannelParams,
    angle_deg: f64,
) -> Result<HermitianMatrix> {
    geometry.validate()?;
    params.validate()?;
    let d = *geometry
        .distances_m
        .get(bs_index)
        .ok_or_else(|| Error::validation(format!("BS index {bs_index} out of range")))?;
    let g = params.link_gain(d)?;
    Ok(correlation_matrix(config.antennas, g, params.correlation, angle_deg))
}

/// Which generator stream a channel set comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleRole {
    #[default]
    Train,
    Test,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream 0 carries the angles; each (file, role) pair gets its own stream.
fn sample_stream(role: SampleRole, file: usize) -> u64 {
    1 + 2 * file as u64
        + match role {
            SampleRole::Train => 0,
            SampleRole::Test => 1,
        }
}

/// Precomputed covariance square roots for a geometry.
#[derive(Clone, Debug)]
pub struct ChannelModel {
    seed: u64,
    antennas: usize,
    covariances: Vec<HermitianMatrix>,
    sqrt_covariances: Vec<DMatrix<Complex64>>,
}

impl ChannelModel {
    pub fn new(
        geometry: &BsGeometry,
        config: &SystemConfig,
        params: &ChannelParams,
        seed: u64,
    ) -> Result<Self> {
        geometry.validate()?;
        if geometry.num_bs() != config.num_bs {
            return Err(Error::validation(format!(
                "geometry has {} BSs, configuration expects {}",
                geometry.num_bs(),
                config.num_bs
            )));
        }
        let angles = bs_angles(geometry, seed);
        let covariances = (0..geometry.num_bs())
            .map(|l| build_correlation(geometry, l, config, params, angles[l]))
            .collect::<Result<Vec<_>>>()?;
        let sqrt_covariances = covariances
            .iter()
            .map(|k| matrix_sqrt(k).map(HermitianMatrix::into_matrix))
            .collect::<Result<Vec<_>>>()?;
        Ok(ChannelModel {
            seed,
            antennas: config.antennas,
            covariances,
            sqrt_covariances,
        })
    }

    pub fn covariances(&self) -> &[HermitianMatrix] {
        &self.covariances
    }

    /// `Tr(K_l)` per BS.
    pub fn average_gains(&self) -> Vec<f64> {
        self.covariances.iter().map(HermitianMatrix::trace).collect()
    }

    /// Draws `n_samples` realizations for one file and role. Bit-identical
    /// for equal inputs.
    pub fn sample(&self, role: SampleRole, file: usize, n_samples: usize) -> Result<ChannelSet> {
        if n_samples == 0 {
            return Err(Error::validation("need at least one channel sample"));
        }
        let mut rng = stream_rng(self.seed, sample_stream(role, file));
        let m = self.antennas;
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let samples = (0..n_samples)
            .map(|_| {
                self.sqrt_covariances
                    .iter()
                    .map(|s| {
                        let v = DVector::from_fn(m, |_, _| {
                            let x: f64 = rng.sample(StandardNormal);
                            let y: f64 = rng.sample(StandardNormal);
                            Complex64::new(x * scale, y * scale)
                        });
                        s * v
                    })
                    .collect()
            })
            .collect();
        Ok(ChannelSet {
            seed: self.seed,
            role,
            file,
            antennas: m,
            samples,
        })
    }
}

/// Convenience wrapper drawing a single-file set with default parameters.
pub fn sample_channels(
    geometry: &BsGeometry,
    config: &SystemConfig,
    seed: u64,
    n_samples: usize,
    role: SampleRole,
) -> Result<ChannelSet> {
    ChannelModel::new(geometry, config, &ChannelParams::default(), seed)?.sample(role, 0, n_samples)
}

/// `N` realizations of `L` channel vectors of length `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub seed: u64,
    pub role: SampleRole,
    pub file: usize,
    antennas: usize,
    samples: Vec<Vec<DVector<Complex64>>>,
}

impl ChannelSet {
    /// Builds a set from explicit vectors, checking shapes and finiteness.
    pub fn from_samples(samples: Vec<Vec<DVector<Complex64>>>) -> Result<Self> {
        let num_bs = samples.first().map_or(0, Vec::len);
        let antennas = samples
            .first()
            .and_then(|s| s.first())
            .map_or(0, |h| h.len());
        if num_bs == 0 || antennas == 0 {
            return Err(Error::validation("channel set must be nonempty"));
        }
        for s in &samples {
            if s.len() != num_bs || s.iter().any(|h| h.len() != antennas) {
                return Err(Error::validation("ragged channel set"));
            }
            if s.iter().flat_map(|h| h.iter()).any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(Error::validation("channel entries must be finite"));
            }
        }
        Ok(ChannelSet {
            seed: 0,
            role: SampleRole::Train,
            file: 0,
            antennas,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_bs(&self) -> usize {
        self.samples[0].len()
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    /// The `L` channel vectors of sample `n`.
    pub fn sample(&self, n: usize) -> &[DVector<Complex64>] {
        &self.samples[n]
    }

    pub fn samples(&self) -> &[Vec<DVector<Complex64>>] {
        &self.samples
    }

    /// First `n` samples as a new set.
    pub fn truncated(&self, n: usize) -> ChannelSet {
        ChannelSet {
            samples: self.samples[..n.min(self.len())].to_vec(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ChannelSetRepr::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<ChannelSetRepr>(s)?.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk layout: metadata plus `(re, im)` pairs in (sample, BS, antenna)
/// row-major order.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSetRepr {
    num_bs: usize,
    antennas: usize,
    num_samples: usize,
    seed: u64,
    role: SampleRole,
    #[serde(default)]
    file: usize,
    entries: Vec<f64>,
}

impl From<&ChannelSet> for ChannelSetRepr {
    fn from(c: &ChannelSet) -> Self {
        let entries = c
            .samples
            .iter()
            .flatten()
            .flat_map(|h| h.iter())
            .flat_map(|z| [z.re, z.im])
            .collect();
        ChannelSetRepr {
            num_bs: c.num_bs(),
            antennas: c.antennas,
            num_samples: c.len(),
            seed: c.seed,
            role: c.role,
            file: c.file,
            entries,
        }
    }
}

impl TryFrom<ChannelSetRepr> for ChannelSet {
    type Error = Error;

    fn try_from(r: ChannelSetRepr) -> Result<Self> {
        let expected = 2 * r.num_bs * r.antennas * r.num_samples;
        if r.entries.len() != expected {
            return Err(Error::validation(format!(
                "channel file holds {} numbers, metadata implies {expected}",
                r.entries.len()
            )));
        }
        let per_vec = 2 * r.antennas;
        let vecs: Vec<DVector<Complex64>> = r
            .entries
            .chunks_exact(per_vec.max(1))
            .map(|c| DVector::from_fn(r.antennas, |i, _| Complex64::new(c[2 * i], c[2 * i + 1])))
            .collect();
        let samples = vecs
            .chunks(r.num_bs.max(1))
            .map(<[_]>::to_vec)
            .collect();
        let mut set = ChannelSet::from_samples(samples)?;
        set.seed = r.seed;
        set.role = r.role;
        set.file = r.file;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_eig;
    use crate::linalg::testutil::rel_frobenius;

    fn small_config(m: usize, l: usize) -> SystemConfig {
        SystemConfig {
            antennas: m,
            num_bs: l,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn path_loss_examples() {
        assert!((path_loss_db(1.0).unwrap() - 128.1).abs() < 1e-12);
        assert!((path_loss_db(0.398).unwrap() - 113.06).abs() < 0.01);
        assert!((path_loss_db(0.1).unwrap() - 90.5).abs() < 1e-9);
        assert!(path_loss_db(0.0).is_err());
        assert!(path_loss_db(-1.0).is_err());
    }

    #[test]
    fn correlation_examples() {
        let geo = BsGeometry::new(vec![300.0]).unwrap();
        let cfg = small_config(4, 1);
        let g = ChannelParams::default().link_gain(300.0).unwrap();

        let white = ChannelParams {
            correlation: 0.0,
            ..ChannelParams::default()
        };
        let k = build_correlation(&geo, 0, &cfg, &white, 30.0).unwrap();
        assert!(rel_frobenius(k.as_matrix(), HermitianMatrix::identity(4).scale(g).as_matrix()) < 1e-14);

        let k1 = build_correlation(&geo, 0, &small_config(1, 1), &ChannelParams::default(), 30.0).unwrap();
        assert!((k1.as_matrix()[(0, 0)].re - g).abs() < 1e-15 * g);

        let k = build_correlation(&geo, 0, &cfg, &ChannelParams::default(), 30.0).unwrap();
        assert!((k.trace() - 4.0 * g).abs() < 1e-12 * g);
        let eig = hermitian_eig(&k).unwrap();
        assert!(eig.values.iter().all(|&v| v > 0.0));
        // sin 30 = 1/2, so the (1, 0) entry is g * 0.5 * e^{i pi/2}.
        let z = k.as_matrix()[(1, 0)] / g;
        assert!((z - Complex64::new(0.0, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn farther_bs_is_weaker() {
        let geo = BsGeometry::reference_topology();
        let cfg = SystemConfig::default();
        let model = ChannelModel::new(&geo, &cfg, &ChannelParams::default(), 1).unwrap();
        let gains = model.average_gains();
        for i in 0..5 {
            for j in 0..5 {
                if geo.distances_m[i] < geo.distances_m[j] {
                    assert!(gains[i] > gains[j]);
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_streams_differ() {
        let geo = BsGeometry::reference_topology();
        let cfg = SystemConfig::default();
        let a = sample_channels(&geo, &cfg, 7, 5, SampleRole::Train).unwrap();
        let b = sample_channels(&geo, &cfg, 7, 5, SampleRole::Train).unwrap();
        let c = sample_channels(&geo, &cfg, 7, 5, SampleRole::Test).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.sample(0)[0], c.sample(0)[0]);
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let geo = BsGeometry::new(vec![300.0, 400.0]).unwrap();
        let set = sample_channels(&geo, &small_config(3, 2), 11, 4, SampleRole::Test).unwrap();
        let back = ChannelSet::from_json(&set.to_json().unwrap()).unwrap();
        assert_eq!(set, back);
        assert!(ChannelSet::from_json(r#"{"num_bs":1,"antennas":1,"num_samples":1,"seed":0,"role":"train","entries":[1.0]}"#).is_err());
    }

    #[test]
    fn empirical_covariance_matches() {
        let geo = BsGeometry {
            distances_m: vec![350.0],
            angles_deg: Some(vec![20.0]),
        };
        let cfg = small_config(4, 1);
        let model = ChannelModel::new(&geo, &cfg, &ChannelParams::default(), 3).unwrap();
        let n = 100_000;
        let set = model.sample(SampleRole::Train, 0, n).unwrap();
        let mut acc = DMatrix::<Complex64>::zeros(4, 4);
        let mut energy = 0.0;
        for s in set.samples() {
            acc += &s[0] * s[0].adjoint();
            energy += s[0].norm_squared();
        }
        acc /= Complex64::from(n as f64);
        let k = &model.covariances()[0];
        assert!(rel_frobenius(&acc, k.as_matrix()) < 0.03);
        assert!((energy / n as f64 / k.trace() - 1.0).abs() < 0.03);
    }
}
