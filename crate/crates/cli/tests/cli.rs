use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use matchpose::geometry::ply::{write_ply, PlyFormat};
use matchpose::policy::ActionRecord;
use matchpose::synth::{pose_error, read_episode, GroundTruth};
use matchpose::DemoStore;
use matchpose_cli::eval::{read_csv, summarize};
use matchpose_cli::exit;

fn matchpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matchpose")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str, n: &str, extra: &[&str]) -> Vec<PathBuf> {
    let mut args = vec!["synth", "--seed", seed, "--n-episodes", n, "--out", s(dir)];
    args.extend_from_slice(extra);
    let out = matchpose(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap().lines().map(PathBuf::from).collect()
}

fn store(out: &Path, episodes: &[PathBuf]) -> Output {
    let mut args = vec!["store", "--out", s(out)];
    args.extend(episodes.iter().map(|p| s(p)));
    matchpose(&args)
}

#[test]
fn store_counts_one_cloud_per_stage_per_demo() {
    let dir = tempfile::tempdir().unwrap();
    let one = synth(&dir.path().join("eps"), "1", "1", &[]);
    let out = store(&dir.path().join("one"), &one);
    assert_eq!(code(&out), 0);
    let counts = DemoStore::load(dir.path().join("one")).unwrap().counts().iter().map(|(_, n)| *n).collect::<Vec<_>>();
    assert_eq!(counts, [1, 1, 1]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);

    let ten = synth(&dir.path().join("ten"), "2", "10", &[]);
    assert_eq!(code(&store(&dir.path().join("st10"), &ten)), 0);
    let st = DemoStore::load(dir.path().join("st10")).unwrap();
    assert_eq!(st.counts().iter().map(|(_, n)| *n).collect::<Vec<_>>(), [10, 10, 10]);
}

#[test]
fn corrupt_input_writes_no_store() {
    let dir = tempfile::tempdir().unwrap();
    let eps = synth(&dir.path().join("eps"), "3", "2", &[]);
    std::fs::write(eps[1].join("demo0_object.ply"), b"ply\nformat garbage\n").unwrap();
    let target = dir.path().join("store");
    let out = store(&target, &eps);
    assert_eq!(code(&out), exit::INPUT);
    assert!(String::from_utf8_lossy(&out.stderr).contains("demo0_object.ply"));
    assert!(!target.exists());
    assert!(!dir.path().join("store.partial").exists());

    let out = store(&target, &[dir.path().join("nowhere")]);
    assert_eq!(code(&out), exit::INPUT);
    assert!(!target.exists());
}

#[test]
fn infer_exit_codes_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let eps = synth(&dir.path().join("eps"), "4", "1", &[]);
    let st = dir.path().join("store");
    assert_eq!(code(&store(&st, &eps)), 0);

    // Observing the stored demo itself reproduces its actions.
    let ep = read_episode(&eps[0]).unwrap();
    let demo = &ep.demos[0];
    let (obj, plc) = (dir.path().join("obj.ply"), dir.path().join("plc.ply"));
    write_ply(&obj, &demo.object_cloud, PlyFormat::BinaryLittleEndian).unwrap();
    write_ply(&plc, &demo.placement_cloud, PlyFormat::BinaryLittleEndian).unwrap();
    let rec = dir.path().join("rec.json");
    let args = ["infer", "--store", s(&st), "--task", &ep.task, "--object", s(&obj), "--placement", s(&plc), "--out", s(&rec)];
    let out = matchpose(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let record: ActionRecord = serde_json::from_slice(&std::fs::read(&rec).unwrap()).unwrap();
    assert!(record.accepted);
    let truth = GroundTruth::of_demo(demo);
    for (stage, want) in record.stages.iter().zip([truth.pick, truth.preplace, truth.place]) {
        let (rot, trans) = pose_error(&stage.transform, &want);
        assert!(rot < 1e-2 && trans < 1e-3, "{} {rot} {trans}", stage.key);
    }

    let out = matchpose(&["infer", "--store", s(&st), "--episode", s(&eps[0]), "--task", "absent", "--out", s(&rec)]);
    assert_eq!(code(&out), exit::UNKNOWN_KEY);
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent:pick"));

    let out = matchpose(&["infer", "--store", s(&dir.path().join("none")), "--episode", s(&eps[0]), "--out", s(&rec)]);
    assert_eq!(code(&out), exit::USAGE);
    let out = matchpose(&["infer", "--episode", s(&eps[0]), "--out", s(&rec)]);
    assert_eq!(code(&out), exit::USAGE);
    let out = matchpose(&["infer", "--store", s(&st), "--episode", s(&eps[0]), "--n-runs", "0", "--out", s(&rec)]);
    assert_eq!(code(&out), exit::USAGE);

    // Heavy sensor noise drags the fitness under the default 0.7.
    let noisy = synth(&dir.path().join("noisy"), "4", "1", &["--sigma", "0.01"]);
    let out = matchpose(&["infer", "--store", s(&st), "--episode", s(&noisy[0]), "--out", s(&rec)]);
    assert_eq!(code(&out), exit::REJECTED);
    let record: ActionRecord = serde_json::from_slice(&std::fs::read(&rec).unwrap()).unwrap();
    assert!(!record.accepted && !record.stages.last().unwrap().accepted);
    let out = matchpose(&["infer", "--store", s(&st), "--episode", s(&noisy[0]), "--threshold", "0", "--out", s(&rec)]);
    assert_eq!(code(&out), 0);
}

#[test]
fn eval_summary_matches_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let out = matchpose(&["eval", "--seed", "7,8", "--n-episodes", "1", "--threshold", "0", "--out", s(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&csv).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.windows(2).all(|w| (w[0].seed, w[0].episode) <= (w[1].seed, w[1].episode)));
    let stdout = String::from_utf8(out.stdout).unwrap();
    for stage in matchpose::Stage::ALL {
        let line = summarize(&rows, stage).to_string();
        assert!(stdout.lines().any(|l| l == line), "{line}");
    }
    assert!(rows.iter().all(|r| r.accepted && r.error.is_empty()));

    let out = matchpose(&["eval", "--n-episodes", "1", "--out", s(&csv)]);
    assert_eq!(code(&out), exit::USAGE);
    let out = matchpose(&["eval", "--seed", "1", "--sigma=-1", "--out", s(&csv)]);
    assert_eq!(code(&out), exit::USAGE);
}
