use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use matchpose::registration::RegistrationParams;
use matchpose::synth::{CameraMode, EpisodeConfig, RotationMode, Scenario};

#[derive(Debug, Parser)]
#[command(name = "matchpose", version, about = "Keyframe pick-and-place by demonstration matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a demo store from episode directories.
    Store(StoreArgs),
    /// Infer keyframe actions for observed clouds.
    Infer(InferArgs),
    /// Run a synthetic evaluation sweep and write per-stage metrics.
    Eval(EvalArgs),
    /// Generate synthetic episodes.
    Synth(SynthArgs),
}

/// Every registration parameter as an optional override. Lengths left
/// unset scale with the voxel size.
#[derive(Debug, Clone, Default, Args)]
pub struct RegistrationFlags {
    #[arg(long)]
    pub voxel_size: Option<f64>,
    #[arg(long)]
    pub ransac_max_iterations: Option<usize>,
    #[arg(long)]
    pub ransac_confidence: Option<f64>,
    #[arg(long)]
    pub distance_threshold: Option<f64>,
    #[arg(long)]
    pub fitness_radius: Option<f64>,
    #[arg(long)]
    pub icp_max_iterations: Option<usize>,
    #[arg(long)]
    pub lambda_geometric: Option<f64>,
    #[arg(long)]
    pub n_runs: Option<usize>,
    /// Base seed for the registration runs.
    #[arg(long, default_value_t = 0)]
    pub rng_seed: u64,
    #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
    pub mutual_filter: Option<bool>,
}

impl RegistrationFlags {
    pub fn resolve(&self, default_voxel: f64) -> RegistrationParams {
        let base = RegistrationParams::with_voxel_size(self.voxel_size.unwrap_or(default_voxel));
        RegistrationParams {
            ransac_max_iterations: self.ransac_max_iterations.unwrap_or(base.ransac_max_iterations),
            ransac_confidence: self.ransac_confidence.unwrap_or(base.ransac_confidence),
            distance_threshold: self.distance_threshold.unwrap_or(base.distance_threshold),
            fitness_radius: self.fitness_radius.unwrap_or(base.fitness_radius),
            icp_max_iterations: self.icp_max_iterations.unwrap_or(base.icp_max_iterations),
            lambda_geometric: self.lambda_geometric.unwrap_or(base.lambda_geometric),
            n_runs: self.n_runs.unwrap_or(base.n_runs),
            rng_seed: self.rng_seed,
            mutual_filter: self.mutual_filter.unwrap_or(base.mutual_filter),
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioName {
    BlockOnBase,
    MugOnBase,
}

impl ScenarioName {
    pub fn scenario(self) -> Scenario {
        match self {
            ScenarioName::BlockOnBase => Scenario::block_on_base(),
            ScenarioName::MugOnBase => Scenario::mug_on_base(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Camera {
    Multi,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Rotation {
    Yaw,
    Full,
}

/// Synthetic episode settings shared by `synth` and `eval`.
#[derive(Debug, Clone, Args)]
pub struct SweepFlags {
    #[arg(long, value_enum, default_value_t = ScenarioName::BlockOnBase)]
    pub scenario: ScenarioName,
    /// Evaluation seeds; repeat the flag or separate with commas.
    #[arg(long = "seed", required = true, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Episodes per seed.
    #[arg(long, default_value_t = 25)]
    pub n_episodes: usize,
    #[arg(long, value_enum, default_value_t = Camera::Multi)]
    pub camera: Camera,
    /// Standard deviation of the Gaussian sensor noise, meters.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value_t = Rotation::Yaw)]
    pub rotation: Rotation,
    /// Stored demonstrations per episode.
    #[arg(long, default_value_t = 1)]
    pub n_demos: usize,
}

impl SweepFlags {
    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            rotation: match self.rotation {
                Rotation::Yaw => RotationMode::Yaw,
                Rotation::Full => RotationMode::Full,
            },
            camera: match self.camera {
                Camera::Multi => CameraMode::Multi,
                Camera::Single => CameraMode::Single,
            },
            noise_sigma: self.sigma,
            n_demos: self.n_demos,
            resample: true,
        }
    }
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    /// Store directory to write; an existing store there is replaced.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = matchpose::registration::DEFAULT_VOXEL_SIZE)]
    pub voxel_size: f64,
    /// Creation time recorded in the manifest.
    #[arg(long, default_value_t = 0)]
    pub created_unix: u64,
    /// Episode directories, each holding an `episode.json`.
    #[arg(required = true)]
    pub episodes: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Take the task and test clouds from an episode directory.
    #[arg(long, conflicts_with_all = ["object", "placement"])]
    pub episode: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, requires = "placement")]
    pub object: Option<PathBuf>,
    #[arg(long, requires = "object")]
    pub placement: Option<PathBuf>,
    /// Gripper cloud; the canonical synthetic gripper when omitted.
    #[arg(long)]
    pub gripper: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    pub threshold: f64,
    #[command(flatten)]
    pub registration: RegistrationFlags,
    /// Action record (JSON) to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub sweep: SweepFlags,
    #[arg(long, default_value_t = 0.7)]
    pub threshold: f64,
    #[command(flatten)]
    pub registration: RegistrationFlags,
    /// Metrics CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub sweep: SweepFlags,
    /// Directory receiving one subdirectory per episode.
    #[arg(long)]
    pub out: PathBuf,
}
