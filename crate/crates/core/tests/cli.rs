use std::path::Path;
use std::process::{Command, Output};

use ivgan::eval::{read_clip, Checkpoint, RunConfig};

fn ivgan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivgan"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const TINY: &str = r#"{"scale": "desk", "total_steps": 3, "clips": 8, "batch_size": 4, "critic_ratio": 2, "checkpoint_every": 2}"#;

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ivgan(&["gradcheck"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradient checks passed"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ivgan(&[], dir.path())), 2);
    assert_eq!(code(&ivgan(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&ivgan(&["generate", "--n", "2"], dir.path())), 2);
    assert_eq!(code(&ivgan(&["data-synth", "--preset", "nope", "--n", "1", "--out", "x"], dir.path())), 2);
    assert_eq!(code(&ivgan(&["task-train", "--task", "deblur", "--config", "c", "--out", "o"], dir.path())), 2);
    assert_eq!(code(&ivgan(&["--help"], dir.path())), 0);
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ivgan(&["generate", "--ckpt", "missing.ivgc", "--out", "g"], dir.path())), 1);
    std::fs::write(dir.path().join("bad.json"), r#"{"lambda": -1}"#).unwrap();
    let out = ivgan(&["train", "--config", "bad.json", "--out", "run"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
}

#[test]
fn synth_and_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let out = ivgan(
        &["data-synth", "--preset", "moving_squares_static_bg", "--n", "3", "--seed", "4", "--out", "d", "--frames"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    for i in 0..3 {
        let clip = read_clip(&dir.path().join(format!("d/clip_{i:04}.ivc"))).unwrap();
        assert_eq!(clip.extents(), [8, 16, 16, 3]);
        assert_eq!(std::fs::read_dir(dir.path().join(format!("d/clip_{i:04}"))).unwrap().count(), 8);
    }
    let same = ivgan(&["eval", "psnr", "--a", "d/clip_0000.ivc", "--b", "d/clip_0000.ivc"], dir.path());
    assert_eq!(String::from_utf8_lossy(&same.stdout).trim(), "99.0000");
    let other = ivgan(
        &["eval", "psnr", "--a", "d/clip_0000.ivc", "--b", "d/clip_0001.ivc", "--space", "rgb"],
        dir.path(),
    );
    let db: f64 = String::from_utf8_lossy(&other.stdout).trim().parse().unwrap();
    assert!(db > 0.0 && db < 99.0);
}

#[test]
fn train_generate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), TINY).unwrap();
    assert_eq!(code(&ivgan(&["train", "--config", "c.json", "--out", "run"], dir.path())), 0);
    let run = dir.path().join("run");
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(run.join("checkpoint_000002.ivgc").exists());
    let ck = Checkpoint::load(&run.join("final.ivgc")).unwrap();
    assert_eq!(ck.step(), Some(3));

    // the echoed config resolves to itself
    let resolved = std::fs::read_to_string(run.join("resolved_config.json")).unwrap();
    assert_eq!(RunConfig::from_json(&resolved).unwrap().to_json(), resolved);

    for d in ["g1", "g2"] {
        let out = ivgan(&["generate", "--ckpt", "run/final.ivgc", "--n", "2", "--seed", "9", "--out", d], dir.path());
        assert_eq!(code(&out), 0);
    }
    for f in ["sample_0000.ivc", "sample_0001.ivc"] {
        let a = std::fs::read(dir.path().join("g1").join(f)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("g2").join(f)).unwrap());
    }
}

#[test]
fn task_train_and_apply() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), TINY).unwrap();
    let out = ivgan(&["task-train", "--task", "colorize-unsup", "--config", "c.json", "--out", "run"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    ivgan(&["data-synth", "--preset", "moving_squares_panning_bg", "--n", "1", "--out", "d"], dir.path());
    let out = ivgan(
        &["apply", "--task", "colorize-unsup", "--ckpt", "run/final.ivgc", "--input", "d/clip_0000.ivc", "--out", "a"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_clip(&dir.path().join("a/condition.ivc")).unwrap().extents(), [8, 16, 16, 1]);
    assert_eq!(read_clip(&dir.path().join("a/output.ivc")).unwrap().extents(), [8, 16, 16, 3]);
    // the encoder was trained on one channel; inpainting needs three
    let out = ivgan(
        &["apply", "--task", "inpaint", "--ckpt", "run/final.ivgc", "--input", "d/clip_0000.ivc", "--out", "b"],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
}
