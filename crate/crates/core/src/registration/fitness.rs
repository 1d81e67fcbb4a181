use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform, SpatialIndex};

/// Outcome of aligning a source cloud into a target frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    /// Fraction of source points with a target neighbor inside the inlier radius.
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub iterations_used: usize,
}

impl RegistrationResult {
    pub fn failed(iterations_used: usize) -> Self {
        RegistrationResult {
            transform: RigidTransform::identity(),
            fitness: 0.0,
            inlier_rmse: 0.0,
            iterations_used,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fitness {
    pub fitness: f64,
    pub inlier_rmse: f64,
}

/// Fraction of `source` points whose nearest `target` neighbor lies within
/// `max_dist` after applying `t`, with the RMS distance of those inliers.
pub fn fitness_score(source: &PointCloud, target: &PointCloud, t: &RigidTransform, max_dist: f64) -> Result<Fitness> {
    if source.is_empty() {
        return Err(Error::EmptySource);
    }
    let index = SpatialIndex::new(target.points());
    fitness_against(source.points(), &index, t, max_dist)
}

pub(crate) fn fitness_against(
    source: &[Vector3<f64>],
    target: &SpatialIndex,
    t: &RigidTransform,
    max_dist: f64,
) -> Result<Fitness> {
    if !(max_dist > 0.0) {
        return Err(Error::param("max_dist", format!("must be positive, got {max_dist}")));
    }
    if source.is_empty() {
        return Err(Error::EmptySource);
    }
    let max2 = max_dist * max_dist;
    let mut inliers = 0usize;
    let mut sq_sum = 0.0;
    for p in source {
        if let Some((_, d2)) = target.nearest_one(&t.apply_point(p)) {
            if d2 <= max2 {
                inliers += 1;
                sq_sum += d2;
            }
        }
    }
    Ok(Fitness {
        fitness: inliers as f64 / source.len() as f64,
        inlier_rmse: if inliers > 0 { (sq_sum / inliers as f64).sqrt() } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: Vec<Vector3<f64>>) -> PointCloud {
        PointCloud::new(pts).unwrap()
    }

    /// Independent count: scan every target point for every source point.
    fn brute_fitness(src: &[Vector3<f64>], dst: &[Vector3<f64>], max_dist: f64) -> f64 {
        let hits = src
            .iter()
            .filter(|s| dst.iter().any(|d| (*s - d).norm() <= max_dist))
            .count();
        hits as f64 / src.len() as f64
    }

    #[test]
    fn identical_clouds_score_one() {
        let p = cloud((0..50).map(|i| Vector3::new(i as f64 * 0.01, (i % 7) as f64 * 0.02, 0.0)).collect());
        for d in [1e-9, 0.004, 10.0] {
            let f = fitness_score(&p, &p, &RigidTransform::identity(), d).unwrap();
            assert_eq!(f.fitness, 1.0);
            assert_eq!(f.inlier_rmse, 0.0);
        }
    }

    #[test]
    fn far_source_scores_zero() {
        let p = cloud(vec![Vector3::zeros(), Vector3::x()]);
        let t = RigidTransform::from_translation(0.0, 0.0, 5.0);
        assert_eq!(fitness_score(&p, &p, &t, 0.5).unwrap().fitness, 0.0);
    }

    #[test]
    fn half_overlap() {
        let target: Vec<_> = (0..5).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let mut source = target.clone();
        source.extend((0..5).map(|i| Vector3::new(i as f64 * 0.1, 1.0, 0.0)));
        let f = fitness_score(&cloud(source.clone()), &cloud(target.clone()), &RigidTransform::identity(), 0.004).unwrap();
        assert_eq!(f.fitness, brute_fitness(&source, &target, 0.004));
        assert_eq!(f.fitness, 0.5);
    }

    #[test]
    fn errors() {
        let p = cloud(vec![Vector3::zeros()]);
        assert!(matches!(
            fitness_score(&PointCloud::default(), &p, &RigidTransform::identity(), 1.0),
            Err(Error::EmptySource)
        ));
        assert!(fitness_score(&p, &p, &RigidTransform::identity(), 0.0).is_err());
    }
}
