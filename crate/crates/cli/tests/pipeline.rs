use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3

[trajectory]
duration = 1.5
landmark_count = 40
seed = 10

[trajectory.camera]
width = 8
height = 8
focal = 4.0

[dataset]
sequences = 3

[model]
image_width = 8
image_height = 8
conv_channels = [2, 3]
conv_kernels = [3, 2]
conv_strides = [2, 1]
imu_hidden = 4
core_hidden = 5

[train]
epochs = 2
window = 5
batch = 2

[eval]
segment_lengths = [0.05, 0.1]
"#;

fn vinet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vinet")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "status {:?}\nstderr:\n{}", out.status, String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_train_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    fs::write(&cfg, TINY).unwrap();
    let data = d.join("data");

    ok(&vinet(&["generate", "--config", p(&cfg), "--out", p(&data)]));
    for split in ["train/000", "val/000", "test/000"] {
        assert!(data.join(split).join("imu.csv").is_file(), "{split}");
    }

    let ckpt = d.join("model.ckpt");
    let curve = d.join("curve.csv");
    ok(&vinet(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&ckpt), "--curve", p(&curve)]));
    let curve_text = fs::read_to_string(&curve).unwrap();
    assert_eq!(curve_text.lines().next(), Some("epoch,mode,train_loss,val_loss"));
    assert_eq!(curve_text.lines().count(), 1 + 3);

    let metrics = d.join("metrics.csv");
    let traj = d.join("pred.txt");
    let test_seq = data.join("test/000");
    ok(&vinet(&[
        "eval", "--config", p(&cfg), "--checkpoint", p(&ckpt), "--sequence", p(&test_seq), "--out", p(&metrics),
        "--trajectory", p(&traj),
    ]));
    let m = fs::read_to_string(&metrics).unwrap();
    assert!(m.starts_with("metric,length_m,value\nate_m,,"), "{m}");
    assert_eq!(fs::read_to_string(&traj).unwrap().lines().count(), 15);

    let rob = d.join("rob.csv");
    ok(&vinet(&[
        "robustness", "--config", p(&cfg), "--checkpoints", &format!("{},{}", p(&ckpt), p(&ckpt)), "--sequence",
        p(&test_seq), "--magnitudes", "0,10", "--out", p(&rob),
    ]));
    let r = fs::read_to_string(&rob).unwrap();
    assert_eq!(r.lines().count(), 3);
    assert!(r.starts_with("miscalibration_deg,model,model\n0,"), "{r}");

    let modes = d.join("modes.csv");
    ok(&vinet(&["modes", "--config", p(&cfg), "--data", p(&data), "--out", p(&modes), "--set", "train.epochs=1"]));
    assert_eq!(fs::read_to_string(&modes).unwrap().lines().count(), 1 + 3 * 2);

    // Same inputs and seed, same bytes.
    let again = d.join("again.ckpt");
    let curve2 = d.join("curve2.csv");
    ok(&vinet(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&again), "--curve", p(&curve2)]));
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&again).unwrap());
    assert_eq!(fs::read(&curve).unwrap(), fs::read(&curve2).unwrap());
}

#[test]
fn gradcheck_passes_on_fresh_init() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.csv");
    ok(&vinet(&["gradcheck", "--seed", "4", "--out", p(&out)]));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")), "{text}");
    assert!(text.contains("end_to_end"));
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-dataset");
    let out = vinet(&["train", "--data", p(&missing), "--out", "x.ckpt", "--curve", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-dataset"));

    let out = vinet(&["gradcheck", "--set", "train.no_such_key=1"]);
    assert_eq!(out.status.code(), Some(3));

    let out = vinet(&["gradcheck", "--config", p(&dir.path().join("absent.toml"))]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let out = vinet(&["eval", "--checkpoint", p(&bad), "--sequence", p(dir.path()), "--out", "m.csv"]);
    assert_eq!(out.status.code(), Some(4));

    assert_eq!(vinet(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(vinet(&["--help"]).status.code(), Some(0));
}

#[test]
fn defaults_parse_back() {
    let out = vinet(&["defaults"]);
    ok(&out);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("d.toml");
    fs::write(&cfg, &out.stdout).unwrap();
    ok(&vinet(&["gradcheck", "--config", p(&cfg), "--seed", "1"]));
}
