//! Colored ICP: joint point-to-plane and photometric refinement.
//!
//! The photometric residual compares a source point's intensity with the
//! target's intensity field, linearized around each target point in its
//! tangent plane. With either cloud uncolored, only the geometric term
//! remains (plain point-to-plane ICP).

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::fitness::RegistrationResult;
use super::RegistrationParams;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform, SpatialIndex};
use crate::par;

const CONVERGENCE_TOL: f64 = 1e-6;
const STEP_HALVINGS: usize = 4;
const GRADIENT_FALLBACK_KNN: usize = 10;

/// Per-iteration state of an ICP run. Entry 0 is the initial guess.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpIterate {
    pub objective: f64,
    pub fitness: f64,
    pub inlier_rmse: f64,
}

pub(crate) struct IcpTarget<'a> {
    pub points: &'a [Vector3<f64>],
    pub normals: &'a [Vector3<f64>],
    /// Intensity and its tangent-plane gradient per point, if colored.
    pub color: Option<(&'a [f64], &'a [Vector3<f64>])>,
    pub index: &'a SpatialIndex,
}

/// Tangent-plane intensity gradient per point: least squares over the
/// neighborhood, with a soft constraint keeping the gradient orthogonal
/// to the normal.
pub(crate) fn color_gradients(
    points: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    intensity: &[f64],
    index: &SpatialIndex,
    radius: f64,
) -> Vec<Vector3<f64>> {
    par::map_range(points.len(), |i| {
        let p = points[i];
        let n = normals[i];
        let mut hits = index.within_radius(&p, radius);
        if hits.len() < 4 {
            hits = index.nearest(&p, GRADIENT_FALLBACK_KNN);
        }
        let mut ata = Matrix3::zeros();
        let mut atb = Vector3::zeros();
        let mut rows = 0usize;
        for h in hits.iter().filter(|h| h.id != i) {
            let q = points[h.id];
            let proj = q - n * (q - p).dot(&n);
            let a = proj - p;
            ata += a * a.transpose();
            atb += a * (intensity[h.id] - intensity[i]);
            rows += 1;
        }
        if rows < 2 {
            return Vector3::zeros();
        }
        let wn = n * rows as f64;
        ata += wn * wn.transpose();
        ata.cholesky().map(|c| c.solve(&atb)).unwrap_or_else(Vector3::zeros)
    })
}

struct Evaluation {
    objective: f64,
    pairs: Vec<(usize, usize)>,
    sq_dist: f64,
}

struct Problem<'a> {
    src: &'a [Vector3<f64>],
    src_intensity: Option<&'a [f64]>,
    target: &'a IcpTarget<'a>,
    lambda: f64,
    use_color: bool,
    thr2: f64,
    outlier_cost: f64,
}

impl Problem<'_> {
    fn residuals(&self, s: &Vector3<f64>, i: usize, j: usize) -> (f64, f64) {
        let q = self.target.points[j];
        let rg = (s - q).dot(&self.target.normals[j]);
        let rc = match (self.use_color, self.src_intensity, self.target.color) {
            (true, Some(src_c), Some((dst_c, grad))) => dst_c[j] + grad[j].dot(&(s - q)) - src_c[i],
            _ => 0.0,
        };
        (rg, rc)
    }

    /// Truncated objective over all source points: inliers contribute
    /// their weighted residuals, the rest a constant outlier cost.
    fn evaluate(&self, t: &RigidTransform) -> Evaluation {
        let per_point: Vec<Option<(usize, f64, f64)>> = par::map_range(self.src.len(), |i| {
            let s = t.apply_point(&self.src[i]);
            let (j, d2) = self.target.index.nearest_one(&s)?;
            if d2 > self.thr2 {
                return None;
            }
            let (rg, rc) = self.residuals(&s, i, j);
            Some((j, d2, self.lambda * rg * rg + (1.0 - self.lambda) * rc * rc))
        });
        let mut eval = Evaluation { objective: 0.0, pairs: Vec::new(), sq_dist: 0.0 };
        for (i, hit) in per_point.into_iter().enumerate() {
            match hit {
                Some((j, d2, e)) => {
                    eval.objective += e;
                    eval.sq_dist += d2;
                    eval.pairs.push((i, j));
                }
                None => eval.objective += self.outlier_cost,
            }
        }
        eval
    }

    /// Gauss-Newton step as a twist `(omega, v)` under left perturbation.
    fn step(&self, t: &RigidTransform, pairs: &[(usize, usize)]) -> Option<Vector6<f64>> {
        let mut h = Matrix6::zeros();
        let mut b = Vector6::zeros();
        let wg = self.lambda.sqrt();
        let wc = (1.0 - self.lambda).sqrt();
        for &(i, j) in pairs {
            let s = t.apply_point(&self.src[i]);
            let (rg, rc) = self.residuals(&s, i, j);
            let n = self.target.normals[j];
            let jg = stack(&s.cross(&n), &n) * wg;
            h += jg * jg.transpose();
            b += jg * (wg * rg);
            if self.use_color {
                if let Some((_, grad)) = self.target.color {
                    let g = grad[j];
                    let jc = stack(&s.cross(&g), &g) * wc;
                    h += jc * jc.transpose();
                    b += jc * (wc * rc);
                }
            }
        }
        let x = h.cholesky()?.solve(&(-b));
        x.iter().all(|v| v.is_finite()).then_some(x)
    }

    fn stats(&self, e: &Evaluation) -> (f64, f64) {
        let n = e.pairs.len();
        let fitness = n as f64 / self.src.len() as f64;
        let rmse = if n > 0 { (e.sq_dist / n as f64).sqrt() } else { 0.0 };
        (fitness, rmse)
    }
}

fn stack(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

fn relative_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(1e-12)
}

pub(crate) fn icp_core(
    src: &[Vector3<f64>],
    src_intensity: Option<&[f64]>,
    target: &IcpTarget<'_>,
    init: &RigidTransform,
    params: &RegistrationParams,
) -> (RegistrationResult, Vec<IcpIterate>) {
    let use_color = src_intensity.is_some() && target.color.is_some();
    let lambda = if use_color { params.lambda_geometric } else { 1.0 };
    let thr2 = params.distance_threshold * params.distance_threshold;
    let problem = Problem {
        src,
        src_intensity,
        target,
        lambda,
        use_color,
        thr2,
        outlier_cost: lambda * thr2 + (1.0 - lambda),
    };

    let mut t = *init;
    let mut current = problem.evaluate(&t);
    if current.pairs.is_empty() {
        return (RegistrationResult { transform: t, ..RegistrationResult::failed(0) }, Vec::new());
    }
    let (mut fitness, mut rmse) = problem.stats(&current);
    let mut trace = vec![IcpIterate { objective: current.objective, fitness, inlier_rmse: rmse }];
    let mut iterations = 0;

    'outer: for it in 1..=params.icp_max_iterations {
        let Some(xi) = problem.step(&t, &current.pairs) else {
            break;
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=STEP_HALVINGS {
            let x = xi * scale;
            let delta = RigidTransform::from_twist(&Vector3::new(x[0], x[1], x[2]), &Vector3::new(x[3], x[4], x[5]));
            let cand_t = delta.compose(&t);
            let cand = problem.evaluate(&cand_t);
            if cand.objective <= current.objective && !cand.pairs.is_empty() {
                accepted = Some((cand_t, cand));
                break;
            }
            scale *= 0.5;
        }
        let Some((next_t, next)) = accepted else {
            break 'outer;
        };
        iterations = it;
        let (f, r) = problem.stats(&next);
        let converged = relative_change(f, fitness) < CONVERGENCE_TOL && relative_change(r, rmse) < CONVERGENCE_TOL;
        t = next_t;
        current = next;
        fitness = f;
        rmse = r;
        trace.push(IcpIterate { objective: current.objective, fitness, inlier_rmse: rmse });
        if converged {
            break;
        }
    }

    (
        RegistrationResult { transform: t, fitness, inlier_rmse: rmse, iterations_used: iterations },
        trace,
    )
}

/// Refines `init` so that `source` aligns with `target`. The target needs
/// normals; the color term is active only when both clouds are colored.
/// Fitness and RMSE are reported at `params.distance_threshold`.
pub fn colored_icp(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    colored_icp_traced(source, target, init, params).map(|(r, _)| r)
}

/// [`colored_icp`] plus the per-iteration objective history.
pub fn colored_icp_traced(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    params: &RegistrationParams,
) -> Result<(RegistrationResult, Vec<IcpIterate>)> {
    params.validate()?;
    if source.is_empty() {
        return Err(Error::EmptySource);
    }
    let normals = target.normals().ok_or(Error::MissingAttribute("target normals"))?;
    let index = SpatialIndex::new(target.points());
    let src_intensity = source.intensities();
    let dst_intensity = target.intensities();
    let gradients = match (&src_intensity, &dst_intensity) {
        (Some(_), Some(c)) => Some(color_gradients(target.points(), normals, c, &index, params.normal_radius())),
        _ => None,
    };
    let color = match (&dst_intensity, &gradients) {
        (Some(c), Some(g)) => Some((c.as_slice(), g.as_slice())),
        _ => None,
    };
    let icp_target = IcpTarget { points: target.points(), normals, color, index: &index };
    Ok(icp_core(source.points(), src_intensity.as_deref(), &icp_target, init, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Colored noise-free 3-D corner: three orthogonal patches with
    /// intensity varying across each patch.
    fn corner() -> PointCloud {
        let s = 0.004;
        let mut pts = Vec::new();
        let mut normals = Vec::new();
        let mut colors = Vec::new();
        for i in 0..15 {
            for j in 0..15 {
                let (a, b) = (i as f64 * s + 0.002, j as f64 * s + 0.002);
                for (p, n) in [
                    (Vector3::new(a, b, 0.0), Vector3::z()),
                    (Vector3::new(0.0, a, b), Vector3::x()),
                    (Vector3::new(b, 0.0, a), Vector3::y()),
                ] {
                    pts.push(p);
                    normals.push(n);
                    let c = (p.x * 8.0 + p.y * 4.0 + p.z * 2.0).min(1.0);
                    colors.push(Vector3::new(c, 0.5 * c, 1.0 - c));
                }
            }
        }
        PointCloud::from_parts(pts, Some(colors), Some(normals)).unwrap()
    }

    #[test]
    fn fixed_point_at_ground_truth() {
        let c = corner();
        let r = colored_icp(&c, &c, &RigidTransform::identity(), &RegistrationParams::default()).unwrap();
        assert_eq!(r.fitness, 1.0);
        assert!(r.transform.max_abs_diff(&RigidTransform::identity()) < 1e-12);
    }

    #[test]
    fn no_correspondences_returns_init() {
        let c = corner();
        let init = RigidTransform::from_translation(1.0, 0.0, 0.0);
        let r = colored_icp(&c, &c, &init, &RegistrationParams::default()).unwrap();
        assert_eq!(r.fitness, 0.0);
        assert_eq!(r.transform, init);
    }

    #[test]
    fn colorless_equals_point_to_plane() {
        let c = corner().without_colors();
        let init = RigidTransform::rot_x(0.02) * RigidTransform::from_translation(0.002, -0.001, 0.001);
        let p = RegistrationParams::default();
        let plane_only = RegistrationParams { lambda_geometric: 1.0, ..p.clone() };
        let a = colored_icp_traced(&c, &c, &init, &p).unwrap();
        let b = colored_icp_traced(&c, &c, &init, &plane_only).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn objective_never_increases() {
        let c = corner();
        let init = RigidTransform::from_axis_angle(&Vector3::new(1.0, 1.0, 0.0), 0.05)
            * RigidTransform::from_translation(0.003, 0.002, -0.002);
        let (r, trace) = colored_icp_traced(&c, &c, &init, &RegistrationParams::default()).unwrap();
        assert!(trace.windows(2).all(|w| w[1].objective <= w[0].objective));
        assert!(r.transform.rotation_angle() < 1e-3);
    }

    #[test]
    fn requires_target_normals() {
        let c = corner();
        let bare = c.clone().without_normals();
        assert!(matches!(
            colored_icp(&c, &bare, &RigidTransform::identity(), &RegistrationParams::default()),
            Err(Error::MissingAttribute(_))
        ));
    }
}
