//! Synthetic scenes with known ground truth: procedurally sampled
//! objects, a canonical gripper, partial views, sensor noise, scripted
//! pick-and-place episodes and pose-error metrics.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::demo_store::KeyframeDemo;
use crate::error::{Error, Result};
use crate::geometry::ply::{read_ply, write_ply, PlyFormat};
use crate::geometry::{estimate_normals_oriented, NormalOrientation, PointCloud, RigidTransform};

/// Offset of the preplace pose above the place pose, along the
/// placement's +z axis.
pub const PREPLACE_OFFSET: f64 = 0.08;
/// Edge of the cube test translations are drawn from.
pub const WORKSPACE_SIZE: f64 = 0.48;
/// Distance between the inner faces of the gripper fingers.
pub const GRIPPER_FINGER_GAP: f64 = 0.04;
pub const SUCCESS_MAX_TRANSLATION: f64 = 0.01;
pub const SUCCESS_MAX_ROTATION_DEG: f64 = 5.0;

const MIN_POINTS: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    /// Axis-aligned box centered at the part origin.
    Box { size: [f64; 3] },
    /// Cylinder along z with its base at the part origin.
    Cylinder {
        radius: f64,
        height: f64,
        #[serde(default)]
        open_top: bool,
    },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub primitive: Primitive,
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArticulatedPart {
    /// Cabinet body, with a foot on one corner.
    Frame,
    /// Sliding drawer with an off-center handle on its +x face.
    Drawer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    Box { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    /// Two bars meeting at a right angle, extruded along z.
    LShape { long_arm: f64, short_arm: f64, width: f64, thickness: f64 },
    /// Cylinder with a handle on its +x side.
    Mug { radius: f64, height: f64 },
    Sphere { radius: f64 },
    /// One part of a two-part articulated object.
    Articulated { part: ArticulatedPart },
    /// Union of parts; surface inside another part is dropped.
    Compound { parts: Vec<Part> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case")]
pub enum ColorPattern {
    Uniform { rgb: [f64; 3] },
    /// Linear blend along a local axis across the shape's extent.
    AxisGradient { axis: usize, from: [f64; 3], to: [f64; 3] },
    Checker { cell: f64, a: [f64; 3], b: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: ShapeKind,
    pub color: ColorPattern,
    /// Surface samples per square meter.
    pub density: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(shape: ShapeKind, color: ColorPattern, density: f64, seed: u64) -> Self {
        SceneSpec { shape, color, density, seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SceneSpec { seed, ..self.clone() }
    }

    pub fn parts(&self) -> Vec<Part> {
        parts_of(&self.shape)
    }

    pub fn surface_area(&self) -> f64 {
        self.parts().iter().map(|p| primitive_area(&p.primitive)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let parts = self.parts();
        for p in &parts {
            let ok = match p.primitive {
                Primitive::Box { size } => size.iter().all(|v| *v > 0.0),
                Primitive::Cylinder { radius, height, .. } => radius > 0.0 && height > 0.0,
                Primitive::Sphere { radius } => radius > 0.0,
            };
            if !ok {
                return Err(Error::param("shape", "dimensions must be positive"));
            }
        }
        if parts.is_empty() {
            return Err(Error::param("shape", "compound has no parts"));
        }
        if !(self.density * self.surface_area() >= MIN_POINTS) {
            return Err(Error::param(
                "density",
                format!("yields fewer than {MIN_POINTS} points over {:.5} m^2", self.surface_area()),
            ));
        }
        Ok(())
    }

    /// Box with a cylinder standing off-center on its top face.
    pub fn box_cylinder(points: usize, seed: u64) -> Self {
        let parts = vec![
            Part { primitive: Primitive::Box { size: [0.08, 0.06, 0.04] }, pose: RigidTransform::identity() },
            Part {
                primitive: Primitive::Cylinder { radius: 0.018, height: 0.055, open_top: false },
                pose: RigidTransform::from_translation(0.018, 0.01, 0.015),
            },
        ];
        let shape = ShapeKind::Compound { parts };
        let color = ColorPattern::AxisGradient { axis: 0, from: [0.9, 0.2, 0.1], to: [0.1, 0.3, 0.9] };
        let mut spec = SceneSpec::new(shape, color, 1.0, seed);
        // The cylinder sinks 5 mm into the box; both caps of overlap are hidden.
        let (r, sunk) = (0.018, 0.005);
        let hidden = 2.0 * PI * r * r + 2.0 * PI * r * sunk;
        spec.density = points as f64 / (spec.surface_area() - hidden);
        spec
    }
}

fn parts_of(shape: &ShapeKind) -> Vec<Part> {
    let at = |primitive, x: f64, y: f64, z: f64| Part { primitive, pose: RigidTransform::from_translation(x, y, z) };
    match shape {
        ShapeKind::Box { size } => vec![at(Primitive::Box { size: *size }, 0.0, 0.0, 0.0)],
        ShapeKind::Cylinder { radius, height } => {
            vec![at(Primitive::Cylinder { radius: *radius, height: *height, open_top: false }, 0.0, 0.0, -height / 2.0)]
        }
        ShapeKind::Sphere { radius } => vec![at(Primitive::Sphere { radius: *radius }, 0.0, 0.0, 0.0)],
        ShapeKind::LShape { long_arm, short_arm, width, thickness } => vec![
            at(Primitive::Box { size: [*long_arm, *width, *thickness] }, long_arm / 2.0, width / 2.0, 0.0),
            at(
                Primitive::Box { size: [*width, *short_arm, *thickness] },
                width / 2.0,
                short_arm / 2.0,
                0.0,
            ),
        ],
        ShapeKind::Mug { radius, height } => vec![
            at(Primitive::Cylinder { radius: *radius, height: *height, open_top: true }, 0.0, 0.0, 0.0),
            at(
                Primitive::Box { size: [0.6 * radius, 0.3 * radius, 0.4 * height] },
                1.3 * radius - 0.003,
                0.0,
                0.6 * height,
            ),
        ],
        ShapeKind::Articulated { part: ArticulatedPart::Frame } => vec![
            at(Primitive::Box { size: [0.12, 0.14, 0.09] }, -0.06, 0.0, 0.045),
            at(Primitive::Box { size: [0.03, 0.03, 0.03] }, -0.1, 0.055, 0.1),
        ],
        ShapeKind::Articulated { part: ArticulatedPart::Drawer } => vec![
            at(Primitive::Box { size: [0.1, 0.12, 0.05] }, 0.05, 0.0, 0.045),
            at(Primitive::Box { size: [0.02, 0.04, 0.012] }, 0.108, 0.025, 0.055),
        ],
        ShapeKind::Compound { parts } => parts.clone(),
    }
}

fn primitive_area(p: &Primitive) -> f64 {
    match *p {
        Primitive::Box { size: [x, y, z] } => 2.0 * (x * y + y * z + x * z),
        Primitive::Cylinder { radius, height, open_top } => {
            let caps = if open_top { 1.0 } else { 2.0 };
            2.0 * PI * radius * height + caps * PI * radius * radius
        }
        Primitive::Sphere { radius } => 4.0 * PI * radius * radius,
    }
}

/// Surface patches of a primitive in its own frame: `(area, sampler)`
/// where the sampler maps `(u, v)` in the unit square to point and normal.
type Sampler = Box<dyn Fn(f64, f64) -> (Vector3<f64>, Vector3<f64>)>;

fn patches(p: &Primitive) -> Vec<(f64, Sampler)> {
    match *p {
        Primitive::Box { size } => {
            let h = Vector3::from(size) / 2.0;
            let mut out: Vec<(f64, Sampler)> = Vec::new();
            for axis in 0..3 {
                let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                for sign in [1.0, -1.0] {
                    let area = size[a] * size[b];
                    out.push((
                        area,
                        Box::new(move |u, v| {
                            let mut pt = Vector3::zeros();
                            pt[axis] = sign * h[axis];
                            pt[a] = (2.0 * u - 1.0) * h[a];
                            pt[b] = (2.0 * v - 1.0) * h[b];
                            let mut n = Vector3::zeros();
                            n[axis] = sign;
                            (pt, n)
                        }),
                    ));
                }
            }
            out
        }
        Primitive::Cylinder { radius: r, height: h, open_top } => {
            let mut out: Vec<(f64, Sampler)> = vec![(
                2.0 * PI * r * h,
                Box::new(move |u, v| {
                    let th = 2.0 * PI * u;
                    let n = Vector3::new(th.cos(), th.sin(), 0.0);
                    (Vector3::new(r * n.x, r * n.y, v * h), n)
                }),
            )];
            let caps: &[(f64, f64)] = if open_top { &[(0.0, -1.0)] } else { &[(0.0, -1.0), (h, 1.0)] };
            for &(z, nz) in caps {
                out.push((
                    PI * r * r,
                    Box::new(move |u, v| {
                        let rr = r * u.sqrt();
                        let th = 2.0 * PI * v;
                        (Vector3::new(rr * th.cos(), rr * th.sin(), z), Vector3::new(0.0, 0.0, nz))
                    }),
                ));
            }
            out
        }
        Primitive::Sphere { radius: r } => vec![(
            4.0 * PI * r * r,
            Box::new(move |u, v| {
                let z = 1.0 - 2.0 * u;
                let s = (1.0 - z * z).max(0.0).sqrt();
                let th = 2.0 * PI * v;
                let n = Vector3::new(s * th.cos(), s * th.sin(), z);
                (n * r, n)
            }),
        )],
    }
}

fn strictly_inside(p: &Primitive, x: &Vector3<f64>) -> bool {
    const EPS: f64 = 1e-9;
    match *p {
        Primitive::Box { size } => (0..3).all(|i| x[i].abs() < size[i] / 2.0 - EPS),
        Primitive::Cylinder { radius, height, .. } => {
            x.xy().norm() < radius - EPS && x.z > EPS && x.z < height - EPS
        }
        Primitive::Sphere { radius } => x.norm() < radius - EPS,
    }
}

fn pattern_color(pattern: &ColorPattern, p: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Vector3<f64> {
    match pattern {
        ColorPattern::Uniform { rgb } => Vector3::from(*rgb),
        ColorPattern::AxisGradient { axis, from, to } => {
            let a = (*axis).min(2);
            let span = hi[a] - lo[a];
            let t = if span > 0.0 { ((p[a] - lo[a]) / span).clamp(0.0, 1.0) } else { 0.0 };
            Vector3::from(*from) * (1.0 - t) + Vector3::from(*to) * t
        }
        ColorPattern::Checker { cell, a, b } => {
            let k: i64 = p.iter().map(|v| (v / cell).floor() as i64).sum();
            Vector3::from(if k.rem_euclid(2) == 0 { *a } else { *b })
        }
    }
}

/// Uniform surface sampling with analytic outward normals and pattern
/// colors. Deterministic for a given spec.
pub fn make_cloud(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let parts = spec.parts();
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (k, part) in parts.iter().enumerate() {
        for (area, sample) in patches(&part.primitive) {
            let count = (area * spec.density).round() as usize;
            for _ in 0..count {
                let (u, v): (f64, f64) = (rng.random(), rng.random());
                let (lp, ln) = sample(u, v);
                let p = part.pose.apply_point(&lp);
                let hidden = parts.iter().enumerate().any(|(j, other)| {
                    j != k && strictly_inside(&other.primitive, &other.pose.inverse().apply_point(&p))
                });
                if !hidden {
                    points.push(p);
                    normals.push(part.pose.apply_vector(&ln));
                }
            }
        }
    }
    let cloud = PointCloud::new(points)?;
    let (lo, hi) = cloud.bounds().ok_or(Error::InsufficientPoints { required: 1, actual: 0 })?;
    let colors = cloud.points().iter().map(|p| pattern_color(&spec.color, p, &lo, &hi)).collect();
    cloud.with_colors(colors)?.with_normals(normals)
}

/// Canonical two-finger gripper: palm and fingers sit at negative z, the
/// fingertips reach just past the grasp point at the origin, and the
/// fingers are separated along x. A wrist mount on the +x/+y side breaks
/// the 180-degree symmetry about the approach axis.
pub fn make_gripper_cloud() -> PointCloud {
    let gap = GRIPPER_FINGER_GAP;
    let parts = vec![
        Part {
            primitive: Primitive::Box { size: [0.09, 0.022, 0.02] },
            pose: RigidTransform::from_translation(0.0, 0.0, -0.055),
        },
        Part {
            primitive: Primitive::Box { size: [0.01, 0.02, 0.05] },
            pose: RigidTransform::from_translation(gap / 2.0 + 0.005, 0.0, -0.02),
        },
        Part {
            primitive: Primitive::Box { size: [0.01, 0.02, 0.05] },
            pose: RigidTransform::from_translation(-gap / 2.0 - 0.005, 0.0, -0.02),
        },
        Part {
            primitive: Primitive::Box { size: [0.035, 0.025, 0.02] },
            pose: RigidTransform::from_translation(0.02, 0.02, -0.07),
        },
    ];
    let spec = SceneSpec::new(
        ShapeKind::Compound { parts },
        ColorPattern::AxisGradient { axis: 2, from: [0.15, 0.15, 0.2], to: [0.85, 0.8, 0.7] },
        90_000.0,
        0x6772_6970,
    );
    make_cloud(&spec).expect("gripper spec is valid")
}

/// Keeps points whose normal faces `camera`.
pub fn partial_view(cloud: &PointCloud, camera: &Vector3<f64>) -> Result<PointCloud> {
    let normals = cloud.normals().ok_or(Error::MissingAttribute("normals"))?;
    let keep: Vec<usize> = cloud
        .points()
        .iter()
        .zip(normals)
        .enumerate()
        .filter(|(_, (p, n))| n.dot(&(camera - *p)) > 0.0)
        .map(|(i, _)| i)
        .collect();
    Ok(cloud.select(&keep))
}

/// I.i.d. Gaussian perturbation of every coordinate. Colors are kept;
/// normals are dropped since they no longer match the surface.
pub fn add_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma", format!("must be non-negative, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::param("sigma", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = cloud
        .points()
        .iter()
        .map(|p| p + Vector3::from_fn(|_, _| normal.sample(&mut rng)))
        .collect();
    let out = PointCloud::new(points)?;
    match cloud.colors() {
        Some(c) => out.with_colors(c.to_vec()),
        None => Ok(out),
    }
}

/// `(rotation error in radians, translation error in meters)`.
pub fn pose_error(estimate: &RigidTransform, truth: &RigidTransform) -> (f64, f64) {
    let rot = estimate.compose(&truth.inverse()).rotation_angle();
    let trans = (estimate.translation() - truth.translation()).norm();
    (rot, trans)
}

pub fn is_success(estimate: &RigidTransform, truth: &RigidTransform) -> bool {
    let (r, t) = pose_error(estimate, truth);
    r < SUCCESS_MAX_ROTATION_DEG.to_radians() && t < SUCCESS_MAX_TRANSLATION
}

/// Haar-uniform rotation.
pub fn random_rotation<R: Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if quat.norm() > 1e-9 {
            return UnitQuaternion::from_quaternion(quat);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationMode {
    /// Haar-uniform over SO(3).
    Full,
    /// Uniform rotation about the world z axis only, keeping objects
    /// upright on the table.
    #[default]
    Yaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraMode {
    /// Complete object surfaces, as fused from several cameras.
    #[default]
    Multi,
    /// Only surfaces facing [`FRONT_CAMERA`].
    Single,
}

/// Position of the single front camera, world frame.
pub const FRONT_CAMERA: [f64; 3] = [0.9, 0.0, 0.5];

/// Random rigid motion that spins a cloud about `center` and shifts it by
/// up to half the workspace along each axis.
pub fn random_motion<R: Rng>(rng: &mut R, center: &Vector3<f64>, mode: RotationMode) -> RigidTransform {
    let rotation = match mode {
        RotationMode::Full => RigidTransform::from_quaternion(&random_rotation(rng), Vector3::zeros()),
        RotationMode::Yaw => RigidTransform::rot_z(rng.random_range(-PI..PI)),
    };
    let shift = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5) * WORKSPACE_SIZE);
    let c = center;
    RigidTransform::from_translation(c.x + shift.x, c.y + shift.y, c.z + shift.z)
        * rotation
        * RigidTransform::from_translation(-c.x, -c.y, -c.z)
}

/// A scripted pick-and-place task in its demonstration frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub task: String,
    pub object: SceneSpec,
    pub placement: SceneSpec,
    /// World pose of the placement in the demonstration.
    pub placement_pose: RigidTransform,
    /// Gripper pose grasping the object at its demonstration pose (identity).
    pub pick_pose: RigidTransform,
    /// Object motion from its demonstration pose to its placed pose.
    pub object_motion: RigidTransform,
}

impl Scenario {
    /// Mug grasped at the rim from above and set down on a base plate
    /// next to a post.
    pub fn mug_on_base() -> Self {
        let (radius, height) = (0.035, 0.09);
        let object = SceneSpec::new(
            ShapeKind::Mug { radius, height },
            ColorPattern::AxisGradient { axis: 2, from: [0.9, 0.1, 0.1], to: [0.95, 0.9, 0.2] },
            80_000.0,
            1,
        );
        let part = |size, x, y, z| Part { primitive: Primitive::Box { size }, pose: RigidTransform::from_translation(x, y, z) };
        let placement = SceneSpec::new(
            ShapeKind::Compound {
                parts: vec![
                    part([0.16, 0.16, 0.025], 0.0, 0.0, -0.0125),
                    part([0.04, 0.04, 0.07], -0.05, 0.05, 0.035),
                    part([0.14, 0.015, 0.015], 0.0, -0.065, 0.0075),
                ],
            },
            ColorPattern::AxisGradient { axis: 0, from: [0.2, 0.7, 0.3], to: [0.2, 0.3, 0.8] },
            60_000.0,
            2,
        );
        let placement_pose = RigidTransform::from_translation(0.3, 0.0, 0.0);
        // Top-down grasp on the handle, fingers closing along y.
        let handle = Vector3::new(1.3 * radius - 0.003, 0.0, 0.6 * height);
        let pick_pose = RigidTransform::from_translation(handle.x, handle.y, handle.z)
            * RigidTransform::rot_x(PI)
            * RigidTransform::rot_z(PI / 2.0);
        let object_motion = RigidTransform::from_translation(0.32, 0.0, 0.0) * RigidTransform::rot_z(0.6);
        Scenario {
            task: "mug-on-base".into(),
            object,
            placement,
            placement_pose,
            pick_pose,
            object_motion,
        }
    }

    /// Block with an off-center peg, grasped by the peg from above and
    /// set down on a base plate between a post and a rail.
    pub fn block_on_base() -> Self {
        let (peg_r, peg_h, peg_x, peg_y) = (0.015, 0.05, 0.02, 0.012);
        let block_h = 0.035;
        let object = SceneSpec::new(
            ShapeKind::Compound {
                parts: vec![
                    Part {
                        primitive: Primitive::Box { size: [0.08, 0.06, block_h] },
                        pose: RigidTransform::from_translation(0.0, 0.0, block_h / 2.0),
                    },
                    Part {
                        primitive: Primitive::Cylinder { radius: peg_r, height: peg_h, open_top: false },
                        pose: RigidTransform::from_translation(peg_x, peg_y, block_h - 0.003),
                    },
                ],
            },
            ColorPattern::AxisGradient { axis: 0, from: [0.9, 0.3, 0.1], to: [0.95, 0.85, 0.2] },
            90_000.0,
            1,
        );
        let part = |size, x, y, z| Part { primitive: Primitive::Box { size }, pose: RigidTransform::from_translation(x, y, z) };
        let placement = SceneSpec::new(
            ShapeKind::Compound {
                parts: vec![
                    part([0.12, 0.12, 0.02], 0.0, 0.0, -0.01),
                    Part {
                        primitive: Primitive::Cylinder { radius: 0.016, height: 0.065, open_top: false },
                        pose: RigidTransform::from_translation(-0.038, 0.038, -0.003),
                    },
                    part([0.1, 0.012, 0.012], 0.0, -0.05, 0.006),
                    part([0.012, 0.05, 0.025], 0.054, 0.025, 0.0125),
                ],
            },
            ColorPattern::AxisGradient { axis: 1, from: [0.2, 0.7, 0.3], to: [0.2, 0.3, 0.8] },
            70_000.0,
            2,
        );
        let placement_pose = RigidTransform::from_translation(0.3, 0.0, 0.0);
        let peg_top = block_h - 0.003 + peg_h;
        let pick_pose = RigidTransform::from_translation(peg_x, peg_y, peg_top - 0.012) * RigidTransform::rot_x(PI);
        let object_motion = RigidTransform::from_translation(0.315, 0.0, 0.0) * RigidTransform::rot_z(0.3);
        Scenario {
            task: "block-on-base".into(),
            object,
            placement,
            placement_pose,
            pick_pose,
            object_motion,
        }
    }

    pub fn place_pose(&self) -> RigidTransform {
        self.object_motion * self.pick_pose
    }

    pub fn preplace_pose(&self) -> RigidTransform {
        let up = self.placement_pose.apply_vector(&Vector3::z()) * PREPLACE_OFFSET;
        RigidTransform::from_translation(up.x, up.y, up.z) * self.place_pose()
    }
}

/// Test-time options for synthetic episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub rotation: RotationMode,
    pub camera: CameraMode,
    pub noise_sigma: f64,
    pub n_demos: usize,
    /// Sample test clouds afresh instead of reusing the demo samples.
    pub resample: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            rotation: RotationMode::Yaw,
            camera: CameraMode::Multi,
            noise_sigma: 0.0,
            n_demos: 1,
            resample: true,
        }
    }
}

/// Ground-truth actions: the pick as a gripper pose, preplace and place
/// as motions of the object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pick: RigidTransform,
    pub preplace: RigidTransform,
    pub place: RigidTransform,
}

impl GroundTruth {
    /// Actions an ideal policy derives from demo `demo` (the first demo
    /// frame has the object and placement at identity).
    pub fn of_demo(demo: &KeyframeDemo) -> Self {
        let pick_inv = demo.pick_pose.inverse();
        GroundTruth {
            pick: demo.pick_pose,
            preplace: demo.preplace_pose * pick_inv,
            place: demo.place_pose * pick_inv,
        }
    }

    /// Truth after moving the placement by `g_a` and the object by `g_b`.
    pub fn moved(&self, g_a: &RigidTransform, g_b: &RigidTransform) -> Self {
        let g_b_inv = g_b.inverse();
        GroundTruth {
            pick: *g_b * self.pick,
            preplace: *g_a * self.preplace * g_b_inv,
            place: *g_a * self.place * g_b_inv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub scenario: Scenario,
    pub seed: u64,
    pub config: EpisodeConfig,
    pub demos: Vec<KeyframeDemo>,
    pub g_a: RigidTransform,
    pub g_b: RigidTransform,
    pub observed_object: PointCloud,
    pub observed_placement: PointCloud,
    pub truth: GroundTruth,
}

fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.random()
}

/// Applies the configured camera and noise model to a world-frame cloud.
/// Noisy observations carry re-estimated normals.
pub fn observe(cloud: &PointCloud, config: &EpisodeConfig, noise_seed: u64) -> Result<PointCloud> {
    let seen = match config.camera {
        CameraMode::Multi => cloud.clone(),
        CameraMode::Single => partial_view(cloud, &Vector3::from(FRONT_CAMERA))?,
    };
    if config.noise_sigma == 0.0 {
        return Ok(seen);
    }
    let noisy = add_noise(&seen, config.noise_sigma, noise_seed)?;
    if noisy.len() < 3 {
        return Ok(noisy);
    }
    // A depth sensor signs its normals toward the camera; a fused multi-view
    // cloud of a single object is signed outward.
    let orientation = match config.camera {
        CameraMode::Multi => NormalOrientation::AwayFromCentroid,
        CameraMode::Single => NormalOrientation::TowardViewpoint(Vector3::from(FRONT_CAMERA)),
    };
    estimate_normals_oriented(&noisy, SENSOR_NORMAL_RADIUS, orientation)
}

/// Neighborhood radius for normals of noisy observations.
pub const SENSOR_NORMAL_RADIUS: f64 = 0.01;

/// Builds the demonstrations and a test scene with fresh random poses.
/// Demo 0 is recorded in the scenario frame; later demos see the whole
/// scene under a random rigid offset and their own surface samples.
pub fn make_episode(scenario: &Scenario, seed: u64, config: &EpisodeConfig) -> Result<Episode> {
    if config.n_demos == 0 {
        return Err(Error::param("n_demos", "must be at least 1"));
    }
    if !(config.noise_sigma >= 0.0) {
        return Err(Error::param("noise_sigma", "must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gripper = make_gripper_cloud();
    let object_local = make_cloud(&scenario.object.with_seed(derive_seed(seed, 1)))?;
    let placement_local = make_cloud(&scenario.placement.with_seed(derive_seed(seed, 2)))?;
    let placement_demo = placement_local.transformed(&scenario.placement_pose);

    // Demo offsets use their own stream so the test scene does not depend
    // on how many demos are recorded.
    let mut demo_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 7));
    let mut demos = Vec::with_capacity(config.n_demos);
    for k in 0..config.n_demos {
        let (object, placement, h_o, h_a) = if k == 0 {
            (object_local.clone(), placement_demo.clone(), RigidTransform::identity(), RigidTransform::identity())
        } else {
            let o = make_cloud(&scenario.object.with_seed(derive_seed(seed, 100 + k as u64)))?;
            let a = make_cloud(&scenario.placement.with_seed(derive_seed(seed, 200 + k as u64)))?
                .transformed(&scenario.placement_pose);
            let h = random_motion(&mut demo_rng, &Vector3::zeros(), RotationMode::Yaw);
            (o.transformed(&h), a.transformed(&h), h, h)
        };
        demos.push(KeyframeDemo {
            pick_pose: h_o * scenario.pick_pose,
            preplace_pose: h_a * scenario.preplace_pose(),
            place_pose: h_a * scenario.place_pose(),
            gripper_cloud: gripper.clone(),
            object_cloud: object,
            placement_cloud: placement,
            task: scenario.task.clone(),
        });
    }

    let object_center = object_local.centroid().unwrap_or_else(Vector3::zeros);
    let placement_center = placement_demo.centroid().unwrap_or_else(Vector3::zeros);
    let g_a = random_motion(&mut rng, &placement_center, config.rotation);
    let g_b = random_motion(&mut rng, &object_center, config.rotation);

    let (object_test, placement_test) = if config.resample {
        (
            make_cloud(&scenario.object.with_seed(derive_seed(seed, 3)))?,
            make_cloud(&scenario.placement.with_seed(derive_seed(seed, 4)))?.transformed(&scenario.placement_pose),
        )
    } else {
        (object_local, placement_demo)
    };
    let observed_object = observe(&object_test.transformed(&g_b), config, derive_seed(seed, 5))?;
    let observed_placement = observe(&placement_test.transformed(&g_a), config, derive_seed(seed, 6))?;
    let truth = GroundTruth::of_demo(&demos[0]).moved(&g_a, &g_b);
    Ok(Episode {
        scenario: scenario.clone(),
        seed,
        config: config.clone(),
        demos,
        g_a,
        g_b,
        observed_object,
        observed_placement,
        truth,
    })
}

/// Two-round articulated task: open a drawer, then put an item on it.
/// Every stage is described by its store key, role and observed clouds.
#[derive(Debug, Clone)]
pub struct DrawerEpisode {
    pub demos: Vec<KeyframeDemo>,
    /// `(key, is_pick, cloud_a, cloud_b, truth)` per stage, in order.
    pub stages: Vec<(String, bool, PointCloud, PointCloud, RigidTransform)>,
}

pub const DRAWER_OPENING: f64 = 0.07;

pub fn make_drawer_episode(seed: u64, config: &EpisodeConfig) -> Result<DrawerEpisode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gripper = make_gripper_cloud();
    let wood = ColorPattern::AxisGradient { axis: 0, from: [0.55, 0.35, 0.2], to: [0.9, 0.75, 0.5] };
    let spec = |part, s| SceneSpec::new(ShapeKind::Articulated { part }, wood.clone(), 70_000.0, s);
    let frame_spec = spec(ArticulatedPart::Frame, derive_seed(seed, 11));
    let drawer_spec = spec(ArticulatedPart::Drawer, derive_seed(seed, 12));
    let item_spec = SceneSpec::new(
        ShapeKind::LShape { long_arm: 0.07, short_arm: 0.045, width: 0.02, thickness: 0.02 },
        ColorPattern::AxisGradient { axis: 1, from: [0.1, 0.6, 0.9], to: [0.9, 0.2, 0.6] },
        110_000.0,
        derive_seed(seed, 13),
    );
    let item_home = RigidTransform::from_translation(0.0, -0.2, 0.01);

    let frame = make_cloud(&frame_spec)?;
    let drawer = make_cloud(&drawer_spec)?;
    let item = make_cloud(&item_spec)?.transformed(&item_home);

    // Round 1: grasp the handle from the front and pull.
    let handle = Vector3::new(0.118, 0.025, 0.055);
    let pick_handle = RigidTransform::from_translation(handle.x, handle.y, handle.z)
        * RigidTransform::rot_y(-PI / 2.0);
    let open = RigidTransform::from_translation(DRAWER_OPENING, 0.0, 0.0);
    // Round 2: grasp the item's long arm from above and set it on the drawer.
    let pick_item = item_home
        * RigidTransform::from_translation(0.05, 0.01, 0.01)
        * RigidTransform::rot_x(PI)
        * RigidTransform::rot_z(PI / 2.0);
    let item_motion = RigidTransform::from_translation(0.04 + DRAWER_OPENING, -0.01, 0.08)
        * RigidTransform::rot_z(0.4)
        * item_home.inverse();

    let opened_drawer = drawer.transformed(&open);
    let up = RigidTransform::from_translation(0.0, 0.0, PREPLACE_OFFSET);
    let demos = vec![
        KeyframeDemo {
            pick_pose: pick_handle,
            preplace_pose: open * pick_handle,
            place_pose: open * pick_handle,
            gripper_cloud: gripper.clone(),
            object_cloud: drawer.clone(),
            placement_cloud: frame.clone(),
            task: "open-drawer".into(),
        },
        KeyframeDemo {
            pick_pose: pick_item,
            preplace_pose: up * item_motion * pick_item,
            place_pose: item_motion * pick_item,
            gripper_cloud: gripper.clone(),
            object_cloud: item.clone(),
            placement_cloud: opened_drawer.clone(),
            task: "item-in-drawer".into(),
        },
    ];

    let cabinet_center = Vector3::new(0.0, 0.0, 0.045);
    let g_cab = random_motion(&mut rng, &cabinet_center, config.rotation);
    let g_item = random_motion(&mut rng, &item.centroid().unwrap_or_else(Vector3::zeros), config.rotation);
    let resampled = |s: &SceneSpec, salt| -> Result<PointCloud> {
        if config.resample { make_cloud(&s.with_seed(derive_seed(seed, salt))) } else { make_cloud(s) }
    };
    let frame_obs = observe(&resampled(&frame_spec, 21)?.transformed(&g_cab), config, derive_seed(seed, 31))?;
    let drawer_obs = observe(&resampled(&drawer_spec, 22)?.transformed(&g_cab), config, derive_seed(seed, 32))?;
    let item_obs = observe(
        &resampled(&item_spec, 23)?.transformed(&item_home).transformed(&g_item),
        config,
        derive_seed(seed, 33),
    )?;
    let opened_obs = observe(
        &resampled(&drawer_spec, 24)?.transformed(&open).transformed(&g_cab),
        config,
        derive_seed(seed, 34),
    )?;

    let t1 = GroundTruth::of_demo(&demos[0]).moved(&g_cab, &g_cab);
    let t2 = GroundTruth::of_demo(&demos[1]).moved(&g_cab, &g_item);
    let stages = vec![
        ("open-drawer:pick".into(), true, gripper.clone(), drawer_obs.clone(), t1.pick),
        ("open-drawer:place".into(), false, frame_obs, drawer_obs, t1.place),
        ("item-in-drawer:pick".into(), true, gripper, item_obs.clone(), t2.pick),
        ("item-in-drawer:place".into(), false, opened_obs, item_obs, t2.place),
    ];
    Ok(DrawerEpisode { demos, stages })
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeFile {
    format_version: u32,
    task: String,
    seed: u64,
    config: EpisodeConfig,
    object_spec: SceneSpec,
    placement_spec: SceneSpec,
    demos: Vec<DemoFile>,
    test: TestFile,
}

#[derive(Debug, Serialize, Deserialize)]
struct DemoFile {
    gripper: String,
    object: String,
    placement: String,
    pick: RigidTransform,
    preplace: RigidTransform,
    place: RigidTransform,
}

#[derive(Debug, Serialize, Deserialize)]
struct TestFile {
    object: String,
    placement: String,
    g_a: RigidTransform,
    g_b: RigidTransform,
    truth: GroundTruth,
}

pub const EPISODE_FILE: &str = "episode.json";

/// Writes `episode.json` and binary PLYs for every cloud into `dir`.
pub fn write_episode(dir: impl AsRef<Path>, episode: &Episode) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: String, cloud: &PointCloud| -> Result<String> {
        write_ply(dir.join(&name), cloud, PlyFormat::BinaryLittleEndian)?;
        Ok(name)
    };
    let mut demos = Vec::new();
    for (k, d) in episode.demos.iter().enumerate() {
        demos.push(DemoFile {
            gripper: put(format!("demo{k}_gripper.ply"), &d.gripper_cloud)?,
            object: put(format!("demo{k}_object.ply"), &d.object_cloud)?,
            placement: put(format!("demo{k}_placement.ply"), &d.placement_cloud)?,
            pick: d.pick_pose,
            preplace: d.preplace_pose,
            place: d.place_pose,
        });
    }
    let file = EpisodeFile {
        format_version: 1,
        task: episode.scenario.task.clone(),
        seed: episode.seed,
        config: episode.config.clone(),
        object_spec: episode.scenario.object.clone(),
        placement_spec: episode.scenario.placement.clone(),
        demos,
        test: TestFile {
            object: put("test_object.ply".into(), &episode.observed_object)?,
            placement: put("test_placement.ply".into(), &episode.observed_placement)?,
            g_a: episode.g_a,
            g_b: episode.g_b,
            truth: episode.truth,
        },
    };
    let path = dir.join(EPISODE_FILE);
    let json = serde_json::to_string_pretty(&file).expect("episode serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

/// Episode as read back from disk: the demonstrations plus test inputs.
#[derive(Debug, Clone)]
pub struct LoadedEpisode {
    pub task: String,
    pub seed: u64,
    pub demos: Vec<KeyframeDemo>,
    pub observed_object: PointCloud,
    pub observed_placement: PointCloud,
    pub truth: GroundTruth,
}

pub fn read_episode(dir: impl AsRef<Path>) -> Result<LoadedEpisode> {
    let dir = dir.as_ref();
    let path = dir.join(EPISODE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: EpisodeFile = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
    if file.format_version != 1 {
        return Err(Error::parse(&path, format!("unsupported format_version {}", file.format_version)));
    }
    let demos = file
        .demos
        .iter()
        .map(|d| {
            Ok(KeyframeDemo {
                pick_pose: d.pick,
                preplace_pose: d.preplace,
                place_pose: d.place,
                gripper_cloud: read_ply(dir.join(&d.gripper))?,
                object_cloud: read_ply(dir.join(&d.object))?,
                placement_cloud: read_ply(dir.join(&d.placement))?,
                task: file.task.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedEpisode {
        task: file.task,
        seed: file.seed,
        demos,
        observed_object: read_ply(dir.join(&file.test.object))?,
        observed_placement: read_ply(dir.join(&file.test.placement))?,
        truth: file.test.truth,
    })
}
