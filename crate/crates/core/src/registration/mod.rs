//! Point cloud registration: RANSAC over FPFH correspondences for the
//! coarse pose, colored ICP for refinement, and a multi-seed wrapper that
//! keeps the best-scoring run.

mod fitness;
mod icp;
mod params;
mod pipeline;
mod ransac;
mod svd;

pub use fitness::{fitness_score, Fitness, RegistrationResult};
pub use icp::{colored_icp, colored_icp_traced, IcpIterate};
pub use params::{RegistrationParams, DEFAULT_VOXEL_SIZE};
pub use pipeline::{prepare, register, register_prepared, register_with_diagnostics, PreparedCloud, RegistrationReport, RunDiagnostics};
pub use ransac::ransac_register;
pub use svd::estimate_transform_svd;
