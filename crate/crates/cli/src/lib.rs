//! Command implementations behind the `matchpose` binary.

pub mod args;
pub mod eval;

use std::fmt;
use std::fs;
use std::path::Path;

use matchpose::geometry::ply::read_ply;
use matchpose::policy::{infer_keyframe_outcome, ActionRecord};
use matchpose::synth::{make_episode, read_episode, write_episode};
use matchpose::{DemoStore, Error, Stage};

use args::{Command, EvalArgs, InferArgs, StoreArgs, SynthArgs};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const INPUT: i32 = 3;
    pub const UNKNOWN_KEY: i32 = 4;
    pub const REJECTED: i32 = 5;
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: exit::USAGE, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidParameter { .. } | Error::InvalidKey(_) => exit::USAGE,
            Error::UnknownKey(_) => exit::UNKNOWN_KEY,
            Error::LowConfidence { .. } => exit::REJECTED,
            Error::Parse { .. }
            | Error::Io { .. }
            | Error::InvalidCloud(_)
            | Error::MissingAttribute(_)
            | Error::InsufficientPoints { .. } => exit::INPUT,
            Error::DegenerateCorrespondences(_) | Error::EmptySource | Error::NoCandidates => exit::FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

pub type Outcome = std::result::Result<(), Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Store(a) => cmd_store(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| Error::Io { path: path.to_path_buf(), source: e }.into())
}

fn check_threshold(threshold: f64) -> Outcome {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(Failure::usage(format!("--threshold must lie in [0, 1], got {threshold}")))
    }
}

/// Reads every episode before writing anything, so a bad input leaves no
/// store behind.
pub fn cmd_store(a: StoreArgs) -> Outcome {
    if !(a.voxel_size > 0.0 && a.voxel_size.is_finite()) {
        return Err(Failure::usage(format!("--voxel-size must be positive, got {}", a.voxel_size)));
    }
    let mut store = DemoStore::new(a.voxel_size).with_created_unix(a.created_unix);
    for dir in &a.episodes {
        let episode = read_episode(dir)?;
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        for (k, demo) in episode.demos.iter().enumerate() {
            store.add_demo(demo, &format!("{name}/demo{k}"))?;
        }
    }
    store.save(&a.out)?;
    for (key, n) in store.counts() {
        println!("{key}\t{n}");
    }
    Ok(())
}

pub fn cmd_infer(a: InferArgs) -> Outcome {
    check_threshold(a.threshold)?;
    if !a.store.join(matchpose::demo_store::MANIFEST_FILE).is_file() {
        return Err(Failure::usage(format!("no demo store at {}", a.store.display())));
    }
    let (task, object, placement) = match (&a.episode, &a.object, &a.placement) {
        (Some(dir), _, _) => {
            let e = read_episode(dir)?;
            (a.task.clone().unwrap_or(e.task), e.observed_object, e.observed_placement)
        }
        (None, Some(o), Some(p)) => {
            let task = a.task.clone().ok_or_else(|| Failure::usage("--task is required with --object"))?;
            (task, read_ply(o)?, read_ply(p)?)
        }
        _ => return Err(Failure::usage("give either --episode or both --object and --placement")),
    };
    let gripper = a.gripper.as_deref().map(read_ply).transpose()?;
    let store = DemoStore::load(&a.store)?;
    let params = a.registration.resolve(store.voxel_size());
    params.validate()?;
    let outcome = infer_keyframe_outcome(&store, &task, gripper.as_ref(), &object, &placement, &params, a.threshold)?;
    let record = ActionRecord::from_outcome(&task, &outcome, a.threshold);
    let json = serde_json::to_string_pretty(&record).expect("action record serializes") + "\n";
    write_file(&a.out, json.as_bytes())?;
    for s in &record.stages {
        println!(
            "{}\t{}\ts_a {:.4}\ts_b {:.4}\tdemo {}",
            s.key,
            if s.accepted { "accepted" } else { "rejected" },
            s.s_a,
            s.s_b,
            s.demo_index
        );
    }
    outcome.into_result()?;
    Ok(())
}

pub fn cmd_eval(a: EvalArgs) -> Outcome {
    check_threshold(a.threshold)?;
    let params = a.registration.resolve(matchpose::registration::DEFAULT_VOXEL_SIZE);
    let rows = eval::run_sweep(
        &a.sweep.scenario.scenario(),
        &a.sweep.seeds,
        a.sweep.n_episodes,
        &a.sweep.episode_config(),
        &params,
        a.threshold,
    )?;
    eval::write_csv(&a.out, &rows)?;
    for stage in Stage::ALL {
        println!("{}", eval::summarize(&rows, stage));
    }
    Ok(())
}

pub fn cmd_synth(a: SynthArgs) -> Outcome {
    let scenario = a.sweep.scenario.scenario();
    let config = a.sweep.episode_config();
    for &seed in &a.sweep.seeds {
        for i in 0..a.sweep.n_episodes {
            let episode = make_episode(&scenario, eval::episode_seed(seed, i), &config)?;
            let dir = a.out.join(format!("seed{seed}_ep{i:03}"));
            write_episode(&dir, &episode)?;
            println!("{}", dir.display());
        }
    }
    Ok(())
}
