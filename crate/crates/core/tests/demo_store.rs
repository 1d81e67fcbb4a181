use matchpose::demo_store::*;
use matchpose::geometry::{PointCloud, RigidTransform, SpatialIndex};
use matchpose::synth::{make_cloud, make_gripper_cloud, Scenario, SceneSpec};
use nalgebra::Vector3;

const VOXEL: f64 = 0.004;

fn sample(t_a: RigidTransform, t_b: RigidTransform) -> DemoSample {
    let a = make_cloud(&SceneSpec::box_cylinder(1500, 1)).unwrap();
    let b = make_cloud(&SceneSpec::box_cylinder(800, 2)).unwrap();
    DemoSample::new(a, b, t_a, t_b, "k").unwrap()
}

#[test]
fn combining_commutes_with_a_common_motion() {
    let t_a = RigidTransform::rot_x(0.3) * RigidTransform::from_translation(0.1, 0.0, 0.0);
    let t_b = RigidTransform::rot_z(-1.2);
    let g = RigidTransform::from_axis_angle(&Vector3::new(1.0, 2.0, -0.5), 2.2)
        * RigidTransform::from_translation(0.3, -0.1, 0.2);
    let lhs = combine(&sample(g * t_a, g * t_b));
    let rhs = combine(&sample(t_a, t_b)).transformed(&g);
    assert_eq!(lhs.len(), rhs.len());
    for (p, q) in lhs.points().iter().zip(rhs.points()) {
        assert!((p - q).norm() < 1e-12);
    }
    for (p, q) in lhs.normals().unwrap().iter().zip(rhs.normals().unwrap()) {
        assert!((p - q).norm() < 1e-12);
    }

    // With voxelization both clouds are centroids of voxel cells, so they
    // agree up to one cell diagonal.
    let a = build_combined(&sample(g * t_a, g * t_b), VOXEL).unwrap();
    let b = build_combined(&sample(t_a, t_b), VOXEL).unwrap().transformed(&g);
    let reach = 3f64.sqrt() * VOXEL;
    for (x, y) in [(&a, &b), (&b, &a)] {
        let index = SpatialIndex::new(y.points());
        for p in x.points() {
            assert!(index.nearest_one(p).unwrap().1.sqrt() <= reach);
        }
    }
}

#[test]
fn pick_sample_puts_the_fingers_around_the_grasp() {
    let scenario = Scenario::block_on_base();
    let object = make_cloud(&scenario.object).unwrap();
    let demo = KeyframeDemo {
        pick_pose: scenario.pick_pose,
        preplace_pose: scenario.preplace_pose(),
        place_pose: scenario.place_pose(),
        gripper_cloud: make_gripper_cloud(),
        object_cloud: object.clone(),
        placement_cloud: make_cloud(&scenario.placement).unwrap(),
        task: scenario.task.clone(),
    };
    let [pick, _, _] = samples_from_keyframes(&demo).unwrap();
    let combined = build_combined(&pick, VOXEL).unwrap();
    let gripper = pick.cloud_a.transformed(&pick.t_a);
    let index = SpatialIndex::new(object.points());
    let closest = gripper.points().iter().map(|p| index.nearest_one(p).unwrap().1.sqrt()).fold(f64::INFINITY, f64::min);
    assert!(closest < 0.02, "{closest}");
    // Both parts survive downsampling.
    let (lo, hi) = combined.bounds().unwrap();
    let (olo, ohi) = object.bounds().unwrap();
    assert!(hi.z > ohi.z + 0.03 && lo.z <= olo.z + VOXEL);
}

#[test]
fn store_is_append_only() {
    let mut ds = DemoStore::new(VOXEL);
    let a = make_cloud(&SceneSpec::box_cylinder(300, 1)).unwrap();
    let b = make_cloud(&SceneSpec::box_cylinder(300, 2)).unwrap();
    ds.store("x:pick", a.clone()).unwrap();
    let before = ds.lookup("x:pick").to_vec();
    ds.store("x:pick", b.clone()).unwrap();
    ds.store("y:pick", b.clone()).unwrap();
    assert_eq!(&ds.lookup("x:pick")[..1], &before[..]);
    assert_eq!(ds.lookup("x:pick"), &[a, b.clone()]);
    assert_eq!(ds.lookup("y:pick"), &[b]);
    assert_eq!(ds.keys().collect::<Vec<_>>(), ["x:pick", "y:pick"]);
}

fn f32_cloud() -> PointCloud {
    let c = make_cloud(&SceneSpec::box_cylinder(500, 4)).unwrap();
    let pts = c.points().iter().map(|p| p.map(|v| v as f32 as f64)).collect();
    let colors = c.colors().unwrap().iter().map(|p| p.map(|v| (v * 255.0).round() / 255.0)).collect();
    let normals = c.normals().unwrap().iter().map(|n| n.map(|v| v as f32 as f64)).collect();
    PointCloud::from_parts(pts, Some(colors), Some(normals)).unwrap()
}

#[test]
fn binary_store_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store");
    let mut ds = DemoStore::new(VOXEL);
    let scenario = Scenario::block_on_base();
    let demo = KeyframeDemo {
        pick_pose: scenario.pick_pose,
        preplace_pose: scenario.preplace_pose(),
        place_pose: scenario.place_pose(),
        gripper_cloud: make_gripper_cloud(),
        object_cloud: make_cloud(&scenario.object).unwrap(),
        placement_cloud: make_cloud(&scenario.placement).unwrap(),
        task: scenario.task.clone(),
    };
    ds.add_demo(&demo, "demo-7").unwrap();
    ds.store("exact", f32_cloud()).unwrap();
    ds.save(&path).unwrap();
    let back = DemoStore::load(&path).unwrap();
    // Coordinates and 8-bit colors come back bit-exact; normals are
    // renormalized after float32 storage.
    let (want, got) = (f32_cloud(), &back.lookup("exact")[0]);
    assert_eq!(got.points(), want.points());
    assert_eq!(got.colors(), want.colors());
    for (a, b) in got.normals().unwrap().iter().zip(want.normals().unwrap()) {
        assert!((a - b).norm() < 1e-7);
    }
    assert_eq!(back.counts(), ds.counts());
    assert_eq!(back.demo_ids(&Stage::Place.key(&scenario.task)), ["demo-7"]);
    for key in ds.keys() {
        for (x, y) in ds.lookup(key).iter().zip(back.lookup(key)) {
            assert!(x.points().iter().zip(y.points()).all(|(p, q)| p.map(|v| v as f32 as f64) == *q));
        }
    }
    // Saving the same store again writes identical bytes.
    let again = dir.path().join("again");
    ds.save(&again).unwrap();
    for entry in std::fs::read_dir(path.join("clouds")).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(path.join("clouds").join(&name)).unwrap();
        let b = std::fs::read(again.join("clouds").join(&name)).unwrap();
        assert_eq!(a, b);
    }
    let manifest = |p: &std::path::Path| std::fs::read(p.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest(&path), manifest(&again));
}

#[test]
fn failed_save_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let target = blocker.join("store");
    let mut ds = DemoStore::new(VOXEL);
    ds.store("k", f32_cloud()).unwrap();
    assert!(ds.save(&target).is_err());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}
