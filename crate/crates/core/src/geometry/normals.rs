use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{PointCloud, SpatialIndex};
use crate::error::{Error, Result};
use crate::par;

/// Neighbors used when a radius query finds fewer than three points.
const FALLBACK_KNN: usize = 10;

/// How the sign of each estimated normal is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormalOrientation {
    /// Normal points toward this location.
    TowardViewpoint(Vector3<f64>),
    /// Normal points away from the cloud centroid. Unlike a fixed
    /// viewpoint this moves with the cloud, so it commutes with rigid
    /// motions.
    AwayFromCentroid,
    /// Normal agrees in sign with the normal the cloud already carries at
    /// that point, so only the direction is re-estimated. Clouds without
    /// normals fall back to [`NormalOrientation::AwayFromCentroid`].
    AlongExisting,
}

impl Default for NormalOrientation {
    fn default() -> Self {
        NormalOrientation::TowardViewpoint(Vector3::new(0.0, 0.0, 1.0e3))
    }
}

/// Normals from the smallest-eigenvalue eigenvector of each point's
/// radius-neighborhood covariance, signed to face `viewpoint`.
pub fn estimate_normals(cloud: &PointCloud, radius: f64, viewpoint: Vector3<f64>) -> Result<PointCloud> {
    estimate_normals_oriented(cloud, radius, NormalOrientation::TowardViewpoint(viewpoint))
}

pub fn estimate_normals_oriented(
    cloud: &PointCloud,
    radius: f64,
    orientation: NormalOrientation,
) -> Result<PointCloud> {
    if !(radius > 0.0) {
        return Err(Error::param("radius", format!("must be positive, got {radius}")));
    }
    if cloud.len() < 3 {
        return Err(Error::InsufficientPoints { required: 3, actual: cloud.len() });
    }
    let index = SpatialIndex::new(cloud.points());
    let points = cloud.points();
    let centroid = cloud.centroid().unwrap_or_else(Vector3::zeros);
    let existing = cloud.normals();

    let normals = par::map_range(points.len(), |i| {
        let p = &points[i];
        let mut hits = index.within_radius(p, radius);
        if hits.len() < 3 {
            hits = index.nearest(p, FALLBACK_KNN);
        }
        let n = smallest_eigenvector(hits.iter().map(|h| &points[h.id]));
        let reference = match orientation {
            NormalOrientation::TowardViewpoint(v) => v - p,
            NormalOrientation::AlongExisting => match existing {
                Some(e) => e[i],
                None => p - centroid,
            },
            NormalOrientation::AwayFromCentroid => p - centroid,
        };
        if n.dot(&reference) < 0.0 { -n } else { n }
    });
    cloud.clone().with_normals(normals)
}

fn smallest_eigenvector<'a>(pts: impl Iterator<Item = &'a Vector3<f64>> + Clone) -> Vector3<f64> {
    let mut count = 0usize;
    let mut mean = Vector3::zeros();
    for p in pts.clone() {
        mean += p;
        count += 1;
    }
    mean /= count as f64;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let i = eig.eigenvalues.imin();
    let n = eig.eigenvectors.column(i).into_owned();
    let len = n.norm();
    if len > 0.0 && len.is_finite() { n / len } else { Vector3::z() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Vector3::new(i as f64 * 0.01, j as f64 * 0.01, 0.0));
            }
        }
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn planar_grid_faces_viewpoint() {
        let up = estimate_normals(&grid(), 0.025, Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert!(up.normals().unwrap().iter().all(|n| (n - Vector3::z()).norm() < 1e-9));
        let down = estimate_normals(&grid(), 0.025, Vector3::new(0.0, 0.0, -1.0)).unwrap();
        assert!(down.normals().unwrap().iter().all(|n| (n + Vector3::z()).norm() < 1e-9));
    }

    #[test]
    fn sphere_pole_normal() {
        // Fibonacci sphere, analytic normal at the north pole is +z.
        let n = 2000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts: Vec<_> = (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * i as f64;
                Vector3::new(r * th.cos(), r * th.sin(), z)
            })
            .collect();
        let cloud = estimate_normals(&PointCloud::new(pts).unwrap(), 0.15, Vector3::new(0.0, 0.0, 10.0)).unwrap();
        let normal = cloud.normals().unwrap()[0];
        let angle = normal.dot(&Vector3::z()).clamp(-1.0, 1.0).acos();
        assert!(angle < 5f64.to_radians(), "pole normal off by {angle} rad");
    }

    #[test]
    fn sparse_points_fall_back_to_knn() {
        let pts: Vec<_> = (0..6).map(|i| Vector3::new(i as f64, (i * i) as f64 * 0.1, 0.0)).collect();
        let out = estimate_normals(&PointCloud::new(pts).unwrap(), 1e-3, Vector3::new(0.0, 0.0, 5.0)).unwrap();
        assert!(out.normals().unwrap().iter().all(|n| (n - Vector3::z()).norm() < 1e-9));
    }

    #[test]
    fn too_few_points() {
        let c = PointCloud::new(vec![Vector3::zeros(), Vector3::x()]).unwrap();
        assert!(matches!(
            estimate_normals(&c, 1.0, Vector3::z()),
            Err(Error::InsufficientPoints { required: 3, actual: 2 })
        ));
    }
}
