use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TOY: &str = "\
corpus.train_clips = 4
corpus.valid_clips = 1
corpus.test_clips = 2
corpus.clip_seconds = 0.5
net.hidden = 4
net.dilations = 1,2,4
net.embed_dim = 4
train.batch = 2
train.crop_frames = 16
train.pretrain_epochs = 2
train.max_epochs = 2
train.patience = 5
";

fn storm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_storm"))
        .current_dir(dir)
        .env_remove("STORM_DATA_ROOT")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = storm(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn toy_corpus() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.cfg"), TOY).unwrap();
    ok(dir.path(), &["--seed", "3", "synthesize", "--config", "toy.cfg", "--out", "data"]);
    dir
}

#[test]
fn synthesize_writes_layout_and_manifest() {
    let dir = toy_corpus();
    let d = dir.path().join("data");
    assert!(d.join("manifest.txt").exists());
    for split in ["train", "valid", "test"] {
        for kind in ["clean", "noisy"] {
            assert!(fs::read_dir(d.join(split).join(kind)).unwrap().count() > 0);
        }
    }
    let manifest = fs::read_to_string(d.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).count(), 7);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&storm(dir.path(), &["no-such-command"])), 1);
    assert_eq!(code(&storm(dir.path(), &["enhance", "--in", "x"])), 1);
    assert_eq!(code(&storm(dir.path(), &["--jobs", "0", "verify-sde"])), 1);
    assert_eq!(code(&storm(dir.path(), &["--help"])), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let missing = storm(p, &["enhance", "--checkpoint", "none.ckpt", "--in", ".", "--out", "o"]);
    assert_eq!(code(&missing), 2);
    fs::write(p.join("bad.cfg"), "sde.gamma = fast\n").unwrap();
    let bad = storm(p, &["synthesize", "--config", "bad.cfg", "--out", "d"]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 1"));
    fs::write(p.join("junk.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(code(&storm(p, &["enhance", "--checkpoint", "junk.ckpt", "--in", ".", "--out", "o"])), 2);
    assert_eq!(code(&storm(p, &["train", "--data", "nowhere", "--checkpoint", "m.ckpt"])), 2);
}

#[test]
fn numerical_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let failed = storm(dir.path(), &["verify-sde", "--quick", "--tolerance-scale", "0"]);
    assert_eq!(code(&failed), 3);
    assert!(String::from_utf8_lossy(&failed.stdout).contains("status=fail"));

    let dir = toy_corpus();
    fs::write(dir.path().join("hot.cfg"), format!("{TOY}train.learning_rate = 1e300\n")).unwrap();
    let diverged = storm(dir.path(), &["train", "--config", "hot.cfg", "--data", "data", "--checkpoint", "m.ckpt"]);
    assert_eq!(code(&diverged), 3, "{}", String::from_utf8_lossy(&diverged.stderr));
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let dir = toy_corpus();
    let p = dir.path();
    let train = ["train", "--config", "toy.cfg", "--data", "data"];
    let full = ok(p, &[&train[..], &["--checkpoint", "full.ckpt"]].concat());
    assert!(full.contains("status=completed"));
    let first = ok(p, &[&train[..], &["--checkpoint", "part.ckpt", "--epochs", "3"]].concat());
    assert!(first.contains("status=paused epochs=3"));
    let rest = ok(p, &[&train[..], &["--checkpoint", "part.ckpt", "--resume"]].concat());
    assert!(rest.contains("status=completed"));
    assert_eq!(fs::read(p.join("full.ckpt")).unwrap(), fs::read(p.join("part.ckpt")).unwrap());
    let epochs = |s: &str| s.lines().filter(|l| l.starts_with("phase=")).map(str::to_owned).collect::<Vec<_>>();
    assert_eq!(epochs(&full), [epochs(&first), epochs(&rest)].concat());
}

#[test]
fn enhance_and_evaluate_report_per_file_and_aggregate() {
    let dir = toy_corpus();
    let p = dir.path();
    ok(p, &["train", "--config", "toy.cfg", "--data", "data", "--checkpoint", "m.ckpt"]);
    let enhanced = ok(p, &["enhance", "--checkpoint", "m.ckpt", "--in", "data/test/noisy", "--out", "out"]);
    assert_eq!(enhanced.lines().filter(|l| l.contains("predictor_calls=1 score_calls=20")).count(), 2);
    let wrong = storm(p, &["enhance", "--mode", "generative", "--checkpoint", "m.ckpt", "--in", "data/test/noisy", "--out", "g"]);
    assert_eq!(code(&wrong), 2);
    let report = ok(p, &["evaluate", "--reference", "data/test/clean", "--estimate", "out"]);
    assert_eq!(report.lines().filter(|l| l.starts_with("file=")).count(), 2);
    for metric in ["si_sdr", "snr", "lsd"] {
        assert!(report.contains(&format!("aggregate metric={metric} ")), "{report}");
    }
    assert!(report.lines().any(|l| l.starts_with('#')));
}

#[test]
fn fixed_seed_reproduces_outputs_across_jobs_settings() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, jobs) in [(a.path(), "1"), (b.path(), "4")] {
        fs::write(dir.join("toy.cfg"), TOY).unwrap();
        ok(dir, &["--seed", "5", "--jobs", jobs, "synthesize", "--config", "toy.cfg", "--out", "data"]);
    }
    let read = |d: &Path| fs::read(d.join("data/test/noisy").read_dir().unwrap().next().unwrap().unwrap().path()).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(
        fs::read(a.path().join("data/manifest.txt")).unwrap(),
        fs::read(b.path().join("data/manifest.txt")).unwrap()
    );
}
