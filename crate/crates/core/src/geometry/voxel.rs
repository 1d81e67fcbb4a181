use std::collections::BTreeMap;

use nalgebra::Vector3;

use super::PointCloud;
use crate::error::{Error, Result};

/// Voxel-grid downsampling with the grid anchored at the cloud's
/// bounding-box minimum. Each occupied voxel yields the centroid of its
/// members (colors averaged, normals averaged and re-normalized), emitted
/// in ascending lexicographic voxel order.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::param("voxel_size", format!("must be positive, got {voxel_size}")));
    }
    let Some((min, _)) = cloud.bounds() else {
        return Err(Error::InsufficientPoints { required: 1, actual: 0 });
    };

    #[derive(Default)]
    struct Acc {
        count: usize,
        point: Vector3<f64>,
        color: Vector3<f64>,
        normal: Vector3<f64>,
    }

    let mut voxels: BTreeMap<[i64; 3], Acc> = BTreeMap::new();
    let colors = cloud.colors();
    let normals = cloud.normals();
    for (i, p) in cloud.points().iter().enumerate() {
        let rel = (p - min) / voxel_size;
        let key = [rel.x.floor() as i64, rel.y.floor() as i64, rel.z.floor() as i64];
        let acc = voxels.entry(key).or_default();
        acc.count += 1;
        acc.point += p;
        if let Some(c) = colors {
            acc.color += c[i];
        }
        if let Some(n) = normals {
            acc.normal += n[i];
        }
    }

    let n = voxels.len();
    let mut points = Vec::with_capacity(n);
    let mut out_colors = colors.map(|_| Vec::with_capacity(n));
    let mut out_normals = normals.map(|_| Vec::with_capacity(n));
    for acc in voxels.values() {
        let w = acc.count as f64;
        points.push(acc.point / w);
        if let Some(c) = out_colors.as_mut() {
            c.push((acc.color / w).map(|v| v.clamp(0.0, 1.0)));
        }
        if let Some(ns) = out_normals.as_mut() {
            // Opposing normals in one voxel cancel; keep a valid unit vector.
            let len = acc.normal.norm();
            ns.push(if len > 1e-12 { acc.normal / len } else { Vector3::z() });
        }
    }
    Ok(PointCloud::from_raw(points, out_colors, out_normals))
}
