//! Interior-point solvers for the convex problems behind cache allocation:
//! max-min multicast beamforming at fixed caches, the per-sample
//! subproblems of the consensus method, and the per-channel dynamic bound.
//!
//! All solvers normalize the covariance to unit trace and work in the span
//! of the channel vectors (see [`psd::ReducedChannels`]).

pub(crate) mod barrier;
mod beamforming;
mod bound;
mod linearized;
pub(crate) mod psd;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::HermitianMatrix;
use crate::system::SystemConfig;

pub use beamforming::{
    extract_rank_one, feasibility_certificate, min_power_fraction, solve_beamforming_fixed_cache,
    BeamformingSolution, RankOneBeam,
};
pub(crate) use beamforming::{evaluate_xi, max_min_rate, rank_one_rates};
pub use bound::{max_rate_for_budget, solve_dynamic_bound, DynamicBound};
pub(crate) use bound::dynamic_bound_reduced;
pub use linearized::{
    solve_admm_subproblem, solve_linearized_direct, DirectSolution, Linearization,
    SubproblemSolution,
};
pub(crate) use linearized::{
    solve_subproblem_reduced, LinearizedBlock,
};

/// Relative duality gap below which a solve counts as optimal.
pub const SOLVER_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub objective: f64,
    pub iterations: usize,
    /// Relative duality gap certified by the barrier parameter.
    pub kkt_residual: f64,
    pub status: SolveStatus,
}

impl SolveReport {
    pub(crate) fn trivial(objective: f64) -> Self {
        SolveReport {
            objective,
            iterations: 0,
            kkt_residual: 0.0,
            status: SolveStatus::Optimal,
        }
    }

    pub(crate) fn from_gap(objective: f64, iterations: usize, gap: f64) -> Self {
        SolveReport {
            objective,
            iterations,
            kkt_residual: gap,
            status: if gap <= SOLVER_TOL {
                SolveStatus::Optimal
            } else {
                SolveStatus::MaxIter
            },
        }
    }
}

/// Transmit covariance with its power budget in watts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamformerCovariance {
    pub w: HermitianMatrix,
    pub trace_budget: f64,
}

impl BeamformerCovariance {
    pub fn isotropic(antennas: usize, power: f64) -> Self {
        BeamformerCovariance {
            w: HermitianMatrix::identity(antennas).scale(power / antennas as f64),
            trace_budget: power,
        }
    }

    pub fn trace(&self) -> f64 {
        self.w.trace()
    }
}

/// One channel realization preprocessed for repeated solves.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub(crate) red: psd::ReducedChannels,
}

impl PreparedSample {
    pub fn new(channels: &[DVector<Complex64>], config: &SystemConfig) -> Self {
        PreparedSample {
            red: psd::ReducedChannels::new(channels, config.snr_scale()),
        }
    }

    pub fn num_bs(&self) -> usize {
        self.red.num_bs()
    }

    /// Full-size covariance for a reduced one.
    pub(crate) fn covariance(&self, w: &[f64], config: &SystemConfig) -> BeamformerCovariance {
        if self.red.order() == 0 {
            return BeamformerCovariance::isotropic(config.antennas, config.power_w);
        }
        BeamformerCovariance {
            w: HermitianMatrix::from_raw(self.red.lift(w, config.power_w)),
            trace_budget: config.power_w,
        }
    }
}
