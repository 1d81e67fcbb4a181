//! Demonstration storage: combined clouds keyed by task description.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ply::{read_ply, write_ply, PlyFormat};
use crate::geometry::{estimate_normals_oriented, voxel_downsample, NormalOrientation, PointCloud, RigidTransform};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

/// Keyframe stage of a pick-and-place step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pick,
    Preplace,
    Place,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Pick, Stage::Preplace, Stage::Place];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pick => "pick",
            Stage::Preplace => "preplace",
            Stage::Place => "place",
        }
    }

    /// Store key for this stage of `task`, e.g. `"mug-on-base:place"`.
    pub fn key(self, task: &str) -> String {
        format!("{task}:{}", self.as_str())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pick" => Ok(Stage::Pick),
            "preplace" => Ok(Stage::Preplace),
            "place" => Ok(Stage::Place),
            other => Err(Error::InvalidKey(format!("unknown stage {other:?}"))),
        }
    }
}

/// Two object clouds with the transforms that put them into the
/// demonstrated relative configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSample {
    pub cloud_a: PointCloud,
    pub cloud_b: PointCloud,
    pub t_a: RigidTransform,
    pub t_b: RigidTransform,
    pub key: String,
}

impl DemoSample {
    pub fn new(
        cloud_a: PointCloud,
        cloud_b: PointCloud,
        t_a: RigidTransform,
        t_b: RigidTransform,
        key: impl Into<String>,
    ) -> Result<Self> {
        let key = key.into();
        if key.is_empty() {
            return Err(Error::InvalidKey(key));
        }
        if cloud_a.is_empty() || cloud_b.is_empty() {
            return Err(Error::InsufficientPoints { required: 1, actual: 0 });
        }
        Ok(DemoSample { cloud_a, cloud_b, t_a, t_b, key })
    }
}

/// One demonstrated pick-and-place step. Poses are gripper poses in the
/// world frame; clouds are observed before the pick.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeDemo {
    pub pick_pose: RigidTransform,
    pub preplace_pose: RigidTransform,
    pub place_pose: RigidTransform,
    pub gripper_cloud: PointCloud,
    pub object_cloud: PointCloud,
    pub placement_cloud: PointCloud,
    pub task: String,
}

/// Pick: gripper at the pick pose next to the untouched object.
/// Preplace and place: placement untouched, object moved by the gripper's
/// motion from the pick pose to the respective pose.
pub fn samples_from_keyframes(demo: &KeyframeDemo) -> Result<[DemoSample; 3]> {
    let pick_inv = demo.pick_pose.inverse();
    let id = RigidTransform::identity();
    Ok([
        DemoSample::new(
            demo.gripper_cloud.clone(),
            demo.object_cloud.clone(),
            demo.pick_pose,
            id,
            Stage::Pick.key(&demo.task),
        )?,
        DemoSample::new(
            demo.placement_cloud.clone(),
            demo.object_cloud.clone(),
            id,
            demo.preplace_pose * pick_inv,
            Stage::Preplace.key(&demo.task),
        )?,
        DemoSample::new(
            demo.placement_cloud.clone(),
            demo.object_cloud.clone(),
            id,
            demo.place_pose * pick_inv,
            Stage::Place.key(&demo.task),
        )?,
    ])
}

/// `t_a * cloud_a` followed by `t_b * cloud_b`, without downsampling.
pub fn combine(sample: &DemoSample) -> PointCloud {
    sample.cloud_a.transformed(&sample.t_a).merged(&sample.cloud_b.transformed(&sample.t_b))
}

/// Combined cloud voxelized at `voxel_size`. Inputs without normals get
/// per-object normals first, so each part keeps outward-facing normals in
/// the combined cloud.
pub fn build_combined(sample: &DemoSample, voxel_size: f64) -> Result<PointCloud> {
    let with_normals = |c: &PointCloud| -> Result<PointCloud> {
        if c.has_normals() || c.len() < 3 {
            Ok(c.clone())
        } else {
            estimate_normals_oriented(c, 2.0 * voxel_size, NormalOrientation::AwayFromCentroid)
        }
    };
    let sample = DemoSample {
        cloud_a: with_normals(&sample.cloud_a)?,
        cloud_b: with_normals(&sample.cloud_b)?,
        ..sample.clone()
    };
    voxel_downsample(&combine(&sample), voxel_size)
}

/// Append-only map from task key to the combined clouds stored under it.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoStore {
    voxel_size: f64,
    created_unix: u64,
    entries: BTreeMap<String, Vec<PointCloud>>,
    demo_ids: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    voxel_size: f64,
    created_unix: u64,
    entries: BTreeMap<String, Vec<ManifestEntry>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    path: String,
    demo_id: String,
}

impl DemoStore {
    pub fn new(voxel_size: f64) -> Self {
        DemoStore { voxel_size, created_unix: 0, entries: BTreeMap::new(), demo_ids: BTreeMap::new() }
    }

    pub fn with_created_unix(mut self, created_unix: u64) -> Self {
        self.created_unix = created_unix;
        self
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn store(&mut self, key: &str, combined: PointCloud) -> Result<()> {
        let n = self.entries.get(key).map_or(0, Vec::len);
        self.store_with_id(key, combined, &n.to_string())
    }

    pub fn store_with_id(&mut self, key: &str, combined: PointCloud, demo_id: &str) -> Result<()> {
        if key.is_empty() {
            return Err(Error::InvalidKey(key.to_string()));
        }
        self.entries.entry(key.to_string()).or_default().push(combined);
        self.demo_ids.entry(key.to_string()).or_default().push(demo_id.to_string());
        Ok(())
    }

    /// Builds and stores the three combined clouds of a keyframe demo.
    pub fn add_demo(&mut self, demo: &KeyframeDemo, demo_id: &str) -> Result<()> {
        let samples = samples_from_keyframes(demo)?;
        let combined = samples
            .iter()
            .map(|s| build_combined(s, self.voxel_size))
            .collect::<Result<Vec<_>>>()?;
        for (s, c) in samples.iter().zip(combined) {
            self.store_with_id(&s.key, c, demo_id)?;
        }
        Ok(())
    }

    /// Every cloud stored under `key` in insertion order; empty if unseen.
    pub fn lookup(&self, key: &str) -> &[PointCloud] {
        self.entries.get(key).map_or(&[], Vec::as_slice)
    }

    pub fn demo_ids(&self, key: &str) -> &[String] {
        self.demo_ids.get(key).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn counts(&self) -> Vec<(&str, usize)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.len())).collect()
    }

    /// Writes the store to `dir` as `manifest.json` plus binary PLYs.
    /// The directory is assembled next to `dir` and moved into place, so
    /// a failed save leaves no partial store behind.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let staging = staging_path(dir);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        let result = self.write_into(&staging).and_then(|_| {
            if dir.exists() {
                fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))
        });
        if result.is_err() {
            let _ = fs::remove_dir_all(&staging);
        }
        result
    }

    fn write_into(&self, dir: &Path) -> Result<()> {
        let clouds = dir.join("clouds");
        fs::create_dir_all(&clouds).map_err(|e| Error::io(&clouds, e))?;
        let mut entries = BTreeMap::new();
        for (k, (key, list)) in self.entries.iter().enumerate() {
            let ids = &self.demo_ids[key];
            let mut items = Vec::with_capacity(list.len());
            for (i, (cloud, demo_id)) in list.iter().zip(ids).enumerate() {
                let rel = format!("clouds/{k:04}_{i:04}.ply");
                write_ply(dir.join(&rel), cloud, PlyFormat::BinaryLittleEndian)?;
                items.push(ManifestEntry { path: rel, demo_id: demo_id.clone() });
            }
            entries.insert(key.clone(), items);
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            voxel_size: self.voxel_size,
            created_unix: self.created_unix,
            entries,
        };
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::parse(
                &path,
                format!("unsupported format_version {}", manifest.format_version),
            ));
        }
        let mut store = DemoStore::new(manifest.voxel_size).with_created_unix(manifest.created_unix);
        for (key, items) in manifest.entries {
            for item in items {
                let cloud = read_ply(dir.join(&item.path))?;
                store.store_with_id(&key, cloud, &item.demo_id)?;
            }
        }
        Ok(store)
    }
}

fn staging_path(dir: &Path) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "store".into());
    name.push(".partial");
    dir.with_file_name(name)
}
