use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// Least-squares rigid transform mapping each source point onto its
/// target (Kabsch). Reflections are corrected by flipping the weakest
/// singular direction.
pub fn estimate_transform_svd(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<RigidTransform> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateCorrespondences(format!(
            "need at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let (sum_s, sum_d) = pairs
        .iter()
        .fold((Vector3::zeros(), Vector3::zeros()), |(a, b), (s, d)| (a + s, b + d));
    let cs = sum_s / n;
    let cd = sum_d / n;

    let mut h = Matrix3::zeros();
    let mut scale = 0.0f64;
    for (s, d) in pairs {
        let ds = s - cs;
        h += ds * (d - cd).transpose();
        scale = scale.max(ds.norm());
    }

    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut sv = svd.singular_values;
    // Singular values are not guaranteed sorted.
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if scale == 0.0 || sv[1] <= 1e-12 * sv[0].max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateCorrespondences(
            "points are coincident or collinear".into(),
        ));
    }

    let v = v_t.transpose();
    let mut rotation = v * u.transpose();
    if rotation.determinant() < 0.0 {
        let weakest = svd.singular_values.imin();
        let mut d = Matrix3::identity();
        d[(weakest, weakest)] = -1.0;
        rotation = v * d * u.transpose();
    }
    let translation = cd - rotation * cs;
    Ok(RigidTransform::from_parts_normalized(rotation, translation))
}
