use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VOXEL_SIZE: f64 = 0.004;

/// Knobs for the registration pipeline. Lengths are meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationParams {
    pub voxel_size: f64,
    pub ransac_max_iterations: usize,
    pub ransac_confidence: f64,
    /// Inlier distance for RANSAC and correspondence gate for ICP.
    pub distance_threshold: f64,
    /// Inlier radius used for the reported fitness score.
    pub fitness_radius: f64,
    pub icp_max_iterations: usize,
    /// Weight of the point-to-plane term; `1 - lambda` goes to color.
    pub lambda_geometric: f64,
    pub n_runs: usize,
    pub rng_seed: u64,
    pub mutual_filter: bool,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self::with_voxel_size(DEFAULT_VOXEL_SIZE)
    }
}

impl RegistrationParams {
    /// Defaults with every length derived from `voxel_size`.
    pub fn with_voxel_size(voxel_size: f64) -> Self {
        RegistrationParams {
            voxel_size,
            ransac_max_iterations: 100_000,
            ransac_confidence: 0.999,
            distance_threshold: 1.5 * voxel_size,
            fitness_radius: voxel_size,
            icp_max_iterations: 50,
            lambda_geometric: 0.968,
            n_runs: 8,
            rng_seed: 0,
            mutual_filter: true,
        }
    }

    pub fn normal_radius(&self) -> f64 {
        2.0 * self.voxel_size
    }

    pub fn feature_radius(&self) -> f64 {
        5.0 * self.voxel_size
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive, got {v}")))
            }
        };
        positive("voxel_size", self.voxel_size)?;
        positive("distance_threshold", self.distance_threshold)?;
        positive("fitness_radius", self.fitness_radius)?;
        for (name, v) in [
            ("ransac_max_iterations", self.ransac_max_iterations),
            ("icp_max_iterations", self.icp_max_iterations),
            ("n_runs", self.n_runs),
        ] {
            if v == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        if !(self.ransac_confidence > 0.0 && self.ransac_confidence < 1.0) {
            return Err(Error::param("ransac_confidence", format!("must be in (0, 1), got {}", self.ransac_confidence)));
        }
        if !(self.lambda_geometric > 0.0 && self.lambda_geometric <= 1.0) {
            return Err(Error::param("lambda_geometric", format!("must be in (0, 1], got {}", self.lambda_geometric)));
        }
        Ok(())
    }
}
