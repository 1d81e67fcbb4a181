use matchpose::features::compute_fpfh;
use matchpose::geometry::{
    estimate_normals_oriented, voxel_downsample, NormalOrientation, PointCloud, RigidTransform, SpatialIndex,
};
use matchpose::registration::{colored_icp_traced, RegistrationParams};
use matchpose::synth::{make_cloud, SceneSpec};
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;

const GROUP_TOL: f64 = 1e-9;
const FPFH_TOL: f64 = 1e-6;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 100, ..ProptestConfig::default() }
}

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    let quat = (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate quaternion", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3);
    (quat, vec3(0.5)).prop_map(|((w, x, y, z), t)| {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        RigidTransform::from_quaternion(&q, t)
    })
}

fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(vec3(0.2), 1..max).prop_map(|pts| PointCloud::new(pts).unwrap())
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn group_laws(a in transform(), b in transform(), c in transform()) {
        let left = (a * b) * c;
        let right = a * (b * c);
        prop_assert!(left.max_abs_diff(&right) < GROUP_TOL);
        let id = RigidTransform::identity();
        prop_assert!((a * id).max_abs_diff(&a) < GROUP_TOL);
        prop_assert!((id * a).max_abs_diff(&a) < GROUP_TOL);
        prop_assert!((a * a.inverse()).max_abs_diff(&id) < GROUP_TOL);
        prop_assert!((a * b).inverse().max_abs_diff(&(b.inverse() * a.inverse())) < GROUP_TOL);
    }

    #[test]
    fn cloud_transform_composes(g in transform(), h in transform(), p in cloud(50)) {
        let once = p.transformed(&(g * h));
        let twice = p.transformed(&h).transformed(&g);
        for (x, y) in once.points().iter().zip(twice.points()) {
            prop_assert!((x - y).abs().max() < GROUP_TOL);
        }
    }

    #[test]
    fn voxel_postconditions(p in cloud(400), voxel in 0.005..0.1f64) {
        let a = voxel_downsample(&p, voxel).unwrap();
        let b = voxel_downsample(&p, voxel).unwrap();
        prop_assert_eq!(a.points(), b.points());
        prop_assert!(a.len() <= p.len() && !a.is_empty());
        let reach = 3f64.sqrt() / 2.0 * voxel + 1e-12;
        let index = SpatialIndex::new(p.points());
        for q in a.points() {
            let (_, d2) = index.nearest_one(q).unwrap();
            prop_assert!(d2.sqrt() <= reach);
        }
        // At most one output point per occupied voxel.
        let (lo, _) = p.bounds().unwrap();
        let mut cells: Vec<[i64; 3]> = a
            .points()
            .iter()
            .map(|q| {
                let c = (q - lo) / voxel;
                [c.x.floor() as i64, c.y.floor() as i64, c.z.floor() as i64]
            })
            .collect();
        cells.sort_unstable();
        cells.dedup();
        prop_assert_eq!(cells.len(), a.len());
    }

    #[test]
    fn knn_matches_brute_force(p in cloud(2000), q in vec3(0.3), k in 1usize..12) {
        let index = SpatialIndex::new(p.points());
        let got = index.nearest(&q, k);
        let mut brute: Vec<(f64, usize)> =
            p.points().iter().enumerate().map(|(i, x)| ((x - q).norm_squared(), i)).collect();
        brute.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert_eq!(got.len(), k.min(p.len()));
        for (n, (d2, i)) in got.iter().zip(&brute) {
            prop_assert_eq!(n.id, *i);
            prop_assert!((n.distance * n.distance - d2).abs() < 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn fpfh_rigid_invariance(g in transform(), seed in 0u64..1_000_000) {
        let spec = SceneSpec::box_cylinder(500, seed);
        let base = make_cloud(&spec).unwrap().without_normals();
        let radius = 0.02;
        let describe = |c: &PointCloud| {
            let n = estimate_normals_oriented(c, 0.008, NormalOrientation::AwayFromCentroid).unwrap();
            compute_fpfh(&n, radius).unwrap()
        };
        let a = describe(&base);
        let b = describe(&base.transformed(&g));
        for (x, y) in a.descriptors().iter().zip(b.descriptors()) {
            for (u, v) in x.iter().zip(y) {
                prop_assert!((u - v).abs() < FPFH_TOL, "bin {u} vs {v}");
            }
        }
    }

    #[test]
    fn icp_objective_never_increases(
        axis in vec3(1.0).prop_filter("axis", |a| a.norm() > 1e-3),
        angle in 0.0..0.15f64,
        shift in vec3(0.006),
        seed in 0u64..1_000_000,
    ) {
        let target = make_cloud(&SceneSpec::box_cylinder(800, seed)).unwrap();
        let source = make_cloud(&SceneSpec::box_cylinder(800, seed + 1)).unwrap();
        let init = RigidTransform::from_translation(shift.x, shift.y, shift.z)
            * RigidTransform::from_axis_angle(&axis, angle);
        let params = RegistrationParams::default();
        let (_, trace) = colored_icp_traced(&source, &target, &init, &params).unwrap();
        for w in trace.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective, "{} -> {}", w[0].objective, w[1].objective);
        }
    }
}
