use nalgebra::Vector3;

use super::RigidTransform;
use crate::error::{Error, Result};

pub type Point = Vector3<f64>;
pub type Color = Vector3<f64>;

/// Positions in meters with optional per-point RGB colors in `[0, 1]` and
/// optional unit normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point>,
    colors: Option<Vec<Color>>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidCloud(format!("point {i} is not finite")));
        }
        Ok(Self {
            points,
            colors: None,
            normals: None,
        })
    }

    pub fn from_parts(
        points: Vec<Point>,
        colors: Option<Vec<Color>>,
        normals: Option<Vec<Vector3<f64>>>,
    ) -> Result<Self> {
        let mut cloud = Self::new(points)?;
        if let Some(c) = colors {
            cloud = cloud.with_colors(c)?;
        }
        if let Some(n) = normals {
            cloud = cloud.with_normals(n)?;
        }
        Ok(cloud)
    }

    pub fn with_colors(mut self, colors: Vec<Color>) -> Result<Self> {
        if colors.len() != self.points.len() {
            return Err(Error::InvalidCloud(format!(
                "{} colors for {} points",
                colors.len(),
                self.points.len()
            )));
        }
        if let Some(i) = colors
            .iter()
            .position(|c| !c.iter().all(|v| (0.0..=1.0).contains(v)))
        {
            return Err(Error::InvalidCloud(format!("color {i} outside [0, 1]")));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != self.points.len() {
            return Err(Error::InvalidCloud(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::InvalidCloud(format!("normal {i} is not unit length")));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    pub fn without_colors(mut self) -> Self {
        self.colors = None;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[Color]> {
        self.colors.as_deref()
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn has_colors(&self) -> bool {
        self.colors.is_some()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn centroid(&self) -> Option<Point> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Point = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }

    /// Axis-aligned `(min, max)` corners.
    pub fn bounds(&self) -> Option<(Point, Point)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    /// Subset in the order given by `indices`.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let pick = |v: &Vec<Vector3<f64>>| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        PointCloud {
            points: pick(&self.points),
            colors: self.colors.as_ref().map(pick),
            normals: self.normals.as_ref().map(pick),
        }
    }

    /// Applies `t` to positions and rotates normals; colors are copied.
    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply_point(p)).collect(),
            colors: self.colors.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.apply_vector(n).normalize()).collect()),
        }
    }

    /// Concatenation, `self` first. An attribute survives only when both
    /// sides carry it; merging with an empty cloud returns the other side.
    pub fn merged(&self, other: &PointCloud) -> PointCloud {
        if self.is_empty() {
            return other.clone();
        }
        if other.is_empty() {
            return self.clone();
        }
        let cat = |a: &Vec<Vector3<f64>>, b: &Vec<Vector3<f64>>| {
            a.iter().chain(b.iter()).copied().collect::<Vec<_>>()
        };
        PointCloud {
            points: cat(&self.points, &other.points),
            colors: match (&self.colors, &other.colors) {
                (Some(a), Some(b)) => Some(cat(a, b)),
                _ => None,
            },
            normals: match (&self.normals, &other.normals) {
                (Some(a), Some(b)) => Some(cat(a, b)),
                _ => None,
            },
        }
    }

    /// Scalar intensity per point (mean of RGB), if colored.
    pub fn intensities(&self) -> Option<Vec<f64>> {
        self.colors
            .as_ref()
            .map(|cs| cs.iter().map(|c| (c.x + c.y + c.z) / 3.0).collect())
    }

    pub(crate) fn from_raw(
        points: Vec<Point>,
        colors: Option<Vec<Color>>,
        normals: Option<Vec<Vector3<f64>>>,
    ) -> Self {
        debug_assert!(colors.as_ref().is_none_or(|c| c.len() == points.len()));
        debug_assert!(normals.as_ref().is_none_or(|n| n.len() == points.len()));
        PointCloud {
            points,
            colors,
            normals,
        }
    }
}

pub fn transform_cloud(t: &RigidTransform, p: &PointCloud) -> PointCloud {
    p.transformed(t)
}

pub fn merge_clouds(p1: &PointCloud, p2: &PointCloud) -> PointCloud {
    p1.merged(p2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Vector3::from(*p)).collect()).unwrap()
    }

    #[test]
    fn validation() {
        assert!(PointCloud::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)]).is_err());
        let c = cloud(&[[0.0, 0.0, 0.0]]);
        assert!(c.clone().with_colors(vec![Vector3::new(1.5, 0.0, 0.0)]).is_err());
        assert!(c.clone().with_colors(vec![]).is_err());
        assert!(c.clone().with_normals(vec![Vector3::new(0.0, 0.0, 2.0)]).is_err());
        assert!(c.with_normals(vec![Vector3::z()]).is_ok());
    }

    #[test]
    fn transform_examples() {
        let p = cloud(&[[0.3, -1.0, 2.0], [0.0, 0.0, 0.0]]);
        assert_eq!(transform_cloud(&RigidTransform::identity(), &p), p);
        let moved = transform_cloud(&RigidTransform::from_translation(0.0, 0.0, 1.0), &cloud(&[[0.0; 3]]));
        assert_eq!(moved.points()[0], Vector3::new(0.0, 0.0, 1.0));

        let p = cloud(&[[1.0, 0.0, 0.0]]).with_normals(vec![Vector3::x()]).unwrap();
        let r = transform_cloud(&RigidTransform::rot_z(FRAC_PI_2), &p);
        assert!((r.points()[0] - Vector3::y()).norm() < 1e-15);
        assert!((r.normals().unwrap()[0] - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn merge_examples() {
        let a = cloud(&[[1.0, 0.0, 0.0]]);
        let b = cloud(&[[2.0, 0.0, 0.0]]);
        assert_eq!(merge_clouds(&PointCloud::default(), &b), b);
        let ab = merge_clouds(&a, &b);
        assert_eq!(ab.points(), &[a.points()[0], b.points()[0]]);

        let colored = a.clone().with_colors(vec![Vector3::new(0.1, 0.2, 0.3)]).unwrap();
        let m = merge_clouds(&colored, &b);
        assert_eq!(m.len(), 2);
        assert!(!m.has_colors());
    }
}
