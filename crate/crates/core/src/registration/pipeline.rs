use std::sync::OnceLock;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::fitness::{fitness_against, RegistrationResult};
use super::icp::{color_gradients, icp_core, IcpTarget};
use super::ransac::{correspondences, ransac_correspondences};
use super::RegistrationParams;
use crate::error::{Error, Result};
use crate::features::{compute_fpfh, FeatureSet};
use crate::geometry::{estimate_normals_oriented, voxel_downsample, NormalOrientation, PointCloud, SpatialIndex};
use crate::par;

const MIN_FEATURE_POINTS: usize = 5;

/// A cloud downsampled, given normals and described by FPFH features,
/// ready to act as either side of a registration. Preparation does not
/// depend on the RNG seed, so one prepared cloud serves every run.
#[derive(Debug)]
pub struct PreparedCloud {
    cloud: PointCloud,
    features: Option<FeatureSet>,
    index: SpatialIndex,
    intensity: Option<Vec<f64>>,
    gradients: OnceLock<Option<Vec<Vector3<f64>>>>,
    normal_radius: f64,
    full: PointCloud,
    full_target: OnceLock<(Vec<Vector3<f64>>, SpatialIndex)>,
}

impl PreparedCloud {
    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn features(&self) -> Option<&FeatureSet> {
        self.features.as_ref()
    }

    fn normals(&self) -> &[Vector3<f64>] {
        self.cloud.normals().expect("prepared clouds carry normals")
    }

    fn gradients(&self) -> Option<&[Vector3<f64>]> {
        self.gradients
            .get_or_init(|| {
                self.intensity.as_ref().map(|c| {
                    color_gradients(self.cloud.points(), self.normals(), c, &self.index, self.normal_radius)
                })
            })
            .as_deref()
    }

    /// Normals and index of the cloud before downsampling.
    fn full_target(&self) -> Result<IcpTarget<'_>> {
        if self.full_target.get().is_none() {
            let normals = match self.full.normals() {
                Some(n) => n.to_vec(),
                None if self.full.len() >= 3 => {
                    let est = estimate_normals_oriented(&self.full, self.normal_radius, NormalOrientation::AwayFromCentroid)?;
                    est.normals().expect("normals were just estimated").to_vec()
                }
                None => vec![Vector3::z(); self.full.len()],
            };
            let _ = self.full_target.set((normals, SpatialIndex::new(self.full.points())));
        }
        let (normals, index) = self.full_target.get().expect("initialized above");
        Ok(IcpTarget { points: self.full.points(), normals, color: None, index })
    }

    fn icp_target(&self) -> IcpTarget<'_> {
        IcpTarget {
            points: self.cloud.points(),
            normals: self.normals(),
            color: self.intensity.as_deref().zip(self.gradients()),
            index: &self.index,
        }
    }
}

/// Downsamples to `params.voxel_size`, estimates normals (signed by the
/// input normals, or away from the centroid without them) and computes
/// FPFH features.
pub fn prepare(cloud: &PointCloud, params: &RegistrationParams) -> Result<PreparedCloud> {
    params.validate()?;
    if cloud.is_empty() {
        return Err(Error::InsufficientPoints { required: 1, actual: 0 });
    }
    let down = voxel_downsample(cloud, params.voxel_size)?;
    // Normals are always re-estimated so both sides of a registration are
    // described the same way; normals already present only fix the sign.
    let down = if down.len() >= 3 {
        estimate_normals_oriented(&down, params.normal_radius(), NormalOrientation::AlongExisting)?
    } else {
        let n = down.len();
        down.with_normals(vec![Vector3::z(); n])?
    };
    let features = if down.len() >= MIN_FEATURE_POINTS {
        Some(compute_fpfh(&down, params.feature_radius())?)
    } else {
        None
    };
    Ok(PreparedCloud {
        index: SpatialIndex::new(down.points()),
        intensity: down.intensities(),
        cloud: down,
        features,
        gradients: OnceLock::new(),
        normal_radius: params.normal_radius(),
        full: cloud.clone(),
        full_target: OnceLock::new(),
    })
}

/// One seeded pipeline pass, as reported in the diagnostics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub seed: u64,
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub ransac_iterations: usize,
    pub icp_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationReport {
    pub best: RegistrationResult,
    pub best_seed: u64,
    pub runs: Vec<RunDiagnostics>,
}

fn single_run(
    src: &PreparedCloud,
    dst: &PreparedCloud,
    corr: &[(usize, usize)],
    params: &RegistrationParams,
    seed: u64,
) -> Result<(RegistrationResult, RunDiagnostics)> {
    let src_pts = src.cloud.points();
    let Some(h) = ransac_correspondences(src_pts, dst.cloud.points(), &dst.index, corr, params, seed) else {
        let diag = RunDiagnostics { seed, fitness: 0.0, inlier_rmse: 0.0, ransac_iterations: 0, icp_iterations: 0 };
        return Ok((RegistrationResult::failed(0), diag));
    };
    let target = dst.icp_target();
    let src_intensity = if target.color.is_some() { src.intensity.as_deref() } else { None };
    let (icp, _) = icp_core(src_pts, src_intensity, &target, &h.transform, params);
    let transform = if icp.fitness > 0.0 { icp.transform } else { h.transform };
    let f = fitness_against(src_pts, &dst.index, &transform, params.fitness_radius)?;
    let result = RegistrationResult {
        transform,
        fitness: f.fitness,
        inlier_rmse: f.inlier_rmse,
        iterations_used: h.iterations + icp.iterations_used,
    };
    let diag = RunDiagnostics {
        seed,
        fitness: f.fitness,
        inlier_rmse: f.inlier_rmse,
        ransac_iterations: h.iterations,
        icp_iterations: icp.iterations_used,
    };
    Ok((result, diag))
}

/// Runs RANSAC + colored ICP `n_runs` times with seeds
/// `rng_seed..rng_seed + n_runs` and keeps the best run: highest fitness,
/// then lowest inlier RMSE, then lowest seed.
pub fn register_prepared(
    source: &PreparedCloud,
    target: &PreparedCloud,
    params: &RegistrationParams,
) -> Result<RegistrationReport> {
    params.validate()?;
    let corr = match (&source.features, &target.features) {
        (Some(s), Some(d)) => correspondences(s, d, params.mutual_filter),
        _ => Vec::new(),
    };
    let runs = par::map_range(params.n_runs, |k| {
        single_run(source, target, &corr, params, params.rng_seed.wrapping_add(k as u64))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let (best_idx, _) = runs
        .iter()
        .enumerate()
        .reduce(|best, cand| {
            let (b, c) = (&best.1 .0, &cand.1 .0);
            if c.fitness > b.fitness || (c.fitness == b.fitness && c.inlier_rmse < b.inlier_rmse) {
                cand
            } else {
                best
            }
        })
        .expect("n_runs >= 1");
    let best = refine_full_resolution(source, target, &runs[best_idx].0, params)?;
    Ok(RegistrationReport {
        best,
        best_seed: runs[best_idx].1.seed,
        runs: runs.iter().map(|r| r.1).collect(),
    })
}

const REFINE_MAX_ITERATIONS: usize = 30;

/// Point-to-plane ICP between the clouds as given, before downsampling,
/// starting from the best run. Voxel centroids shift with the grid anchor,
/// which caps the accuracy reachable on downsampled clouds alone. Fitness
/// and RMSE are still reported on the downsampled clouds.
fn refine_full_resolution(
    source: &PreparedCloud,
    target: &PreparedCloud,
    coarse: &RegistrationResult,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    if coarse.fitness == 0.0 {
        return Ok(*coarse);
    }
    let fine = RegistrationParams {
        distance_threshold: params.voxel_size,
        icp_max_iterations: REFINE_MAX_ITERATIONS,
        ..params.clone()
    };
    let (icp, _) = icp_core(source.full.points(), None, &target.full_target()?, &coarse.transform, &fine);
    if icp.fitness == 0.0 {
        return Ok(*coarse);
    }
    let f = fitness_against(source.cloud.points(), &target.index, &icp.transform, params.fitness_radius)?;
    Ok(RegistrationResult {
        transform: icp.transform,
        fitness: f.fitness,
        inlier_rmse: f.inlier_rmse,
        iterations_used: coarse.iterations_used + icp.iterations_used,
    })
}

/// Full registration of `source` into the frame of `target`.
pub fn register(source: &PointCloud, target: &PointCloud, params: &RegistrationParams) -> Result<RegistrationResult> {
    register_with_diagnostics(source, target, params).map(|r| r.best)
}

pub fn register_with_diagnostics(
    source: &PointCloud,
    target: &PointCloud,
    params: &RegistrationParams,
) -> Result<RegistrationReport> {
    let src = prepare(source, params)?;
    let dst = prepare(target, params)?;
    register_prepared(&src, &dst, params)
}
