//! Rigid transforms, point clouds and the spatial primitives the
//! registration pipeline is built on.

mod cloud;
mod kdtree;
mod normals;
pub mod ply;
mod transform;
mod voxel;

pub use cloud::{merge_clouds, transform_cloud, Color, Point, PointCloud};
pub use kdtree::{nearest_neighbors, KdTree, Neighbor, SpatialIndex};
pub use normals::{estimate_normals, estimate_normals_oriented, NormalOrientation};
pub use transform::{compose, inverse, RigidTransform};
pub use voxel::voxel_downsample;
