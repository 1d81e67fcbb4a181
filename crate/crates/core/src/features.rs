//! Fast Point Feature Histograms and descriptor matching.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud, SpatialIndex};
use crate::par;

pub const BINS_PER_FEATURE: usize = 11;
pub const DESCRIPTOR_LEN: usize = 3 * BINS_PER_FEATURE;

pub type Descriptor = [f64; DESCRIPTOR_LEN];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    descriptors: Vec<Descriptor>,
    radius: f64,
}

impl FeatureSet {
    pub fn descriptors(&self) -> &[Descriptor] {
        &self.descriptors
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

const SOURCE_TIE_TOLERANCE: f64 = 1e-12;
const BRANCH_CUT_TOLERANCE: f64 = 1e-9;

/// Angular pair features `(alpha, phi, theta)` between two oriented points,
/// following the Darboux-frame construction. The point whose normal is
/// more aligned with the connecting line becomes the source.
fn pair_features(p1: &Vector3<f64>, n1: &Vector3<f64>, p2: &Vector3<f64>, n2: &Vector3<f64>) -> Option<[f64; 3]> {
    let mut dp = p2 - p1;
    let dist = dp.norm();
    if dist == 0.0 {
        return None;
    }
    let a1 = n1.dot(&dp) / dist;
    let a2 = n2.dot(&dp) / dist;
    // Near-ties keep p1 as the source so rounding cannot flip theta's sign.
    let (u, n_other, theta) = if a2.abs() - a1.abs() > SOURCE_TIE_TOLERANCE {
        dp = -dp;
        (n2, n1, -a2)
    } else {
        (n1, n2, a1)
    };
    let v = dp.cross(u);
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return None;
    }
    let v = v / v_norm;
    let w = u.cross(&v);
    let phi = v.dot(n_other);
    let mut alpha = w.dot(n_other).atan2(u.dot(n_other));
    // atan2 is discontinuous at +-pi; fold the cut to one side.
    if alpha > PI - BRANCH_CUT_TOLERANCE {
        alpha = -PI;
    }
    Some([alpha, phi, theta])
}

fn bin(value: f64, lo: f64, hi: f64) -> usize {
    let b = (BINS_PER_FEATURE as f64 * (value - lo) / (hi - lo)).floor();
    (b.max(0.0) as usize).min(BINS_PER_FEATURE - 1)
}

/// 33-bin FPFH per point over `radius` neighborhoods.
pub fn compute_fpfh(cloud: &PointCloud, radius: f64) -> Result<FeatureSet> {
    let normals = cloud.normals().ok_or(Error::MissingAttribute("normals"))?;
    if !(radius > 0.0) {
        return Err(Error::param("radius", format!("must be positive, got {radius}")));
    }
    if cloud.len() < 5 {
        return Err(Error::InsufficientPoints { required: 5, actual: cloud.len() });
    }
    let points = cloud.points();
    let index = SpatialIndex::new(points);

    // Neighbors exclude the point itself and exact duplicates.
    let neighborhoods: Vec<Vec<(usize, f64)>> = par::map_range(points.len(), |i| {
        index
            .within_radius(&points[i], radius)
            .into_iter()
            .filter(|n| n.id != i && n.distance > 0.0)
            .map(|n| (n.id, n.distance))
            .collect()
    });

    let spfh: Vec<Descriptor> = par::map_range(points.len(), |i| {
        let mut h = [0.0; DESCRIPTOR_LEN];
        let nbrs = &neighborhoods[i];
        if nbrs.is_empty() {
            return h;
        }
        let incr = 100.0 / nbrs.len() as f64;
        for &(j, _) in nbrs {
            if let Some([alpha, phi, theta]) = pair_features(&points[i], &normals[i], &points[j], &normals[j]) {
                h[bin(alpha, -PI, PI)] += incr;
                h[BINS_PER_FEATURE + bin(phi, -1.0, 1.0)] += incr;
                h[2 * BINS_PER_FEATURE + bin(theta, -1.0, 1.0)] += incr;
            }
        }
        h
    });

    let descriptors = par::map_range(points.len(), |i| {
        let mut h = [0.0; DESCRIPTOR_LEN];
        let mut sums = [0.0; 3];
        for &(j, d) in &neighborhoods[i] {
            let w = 1.0 / d;
            for (f, v) in spfh[j].iter().enumerate() {
                let val = v * w;
                sums[f / BINS_PER_FEATURE] += val;
                h[f] += val;
            }
        }
        for (f, v) in h.iter_mut().enumerate() {
            let s = sums[f / BINS_PER_FEATURE];
            if s > 0.0 {
                *v *= 100.0 / s;
            }
            *v += spfh[i][f];
        }
        h
    });

    Ok(FeatureSet { descriptors, radius })
}

/// Nearest destination descriptor (L2) for every source descriptor. With
/// `mutual`, only pairs that are each other's nearest neighbor survive.
/// Pairs come back ordered by source id.
pub fn match_features(src: &FeatureSet, dst: &FeatureSet, mutual: bool) -> Vec<(usize, usize)> {
    if src.is_empty() || dst.is_empty() {
        return Vec::new();
    }
    let dst_tree = KdTree::new(dst.descriptors.clone());
    let forward: Vec<usize> = par::map(&src.descriptors, |d| {
        dst_tree.nearest_one(d).map(|(id, _)| id).unwrap_or(0)
    });
    if !mutual {
        return forward.into_iter().enumerate().collect();
    }
    let src_tree = KdTree::new(src.descriptors.clone());
    let backward: Vec<usize> = par::map(&dst.descriptors, |d| {
        src_tree.nearest_one(d).map(|(id, _)| id).unwrap_or(0)
    });
    forward
        .into_iter()
        .enumerate()
        .filter(|&(i, j)| backward[j] == i)
        .collect()
}
