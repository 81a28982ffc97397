use vinet::eval::{evaluate, mode_comparison, robustness_sweep, write_curve_csv, write_robustness_csv, DESK_SEGMENT_LENGTHS};
use vinet::model::{ModelConfig, Vinet};
use vinet::simulator::{generate_trajectory, CameraSpec, SyncedSequence, TrajectorySpec};
use vinet::training::{TrainConfig, TrainMode};

fn tiny_seq(seed: u64) -> SyncedSequence {
    generate_trajectory(&TrajectorySpec {
        duration: 1.5,
        camera: CameraSpec { width: 8, height: 8, focal: 4.0, ..CameraSpec::default() },
        landmark_count: 40,
        seed,
        ..TrajectorySpec::default()
    })
    .unwrap()
}

#[test]
fn sweep_at_zero_matches_plain_evaluation() {
    let seq = tiny_seq(1);
    let a = Vinet::new(ModelConfig::tiny(), 1).unwrap();
    let b = Vinet::new(ModelConfig::tiny(), 2).unwrap();
    let rows = robustness_sweep(&[&a, &b], &seq, &[0.0, 5.0], 50.0, 3).unwrap();
    assert_eq!(rows.len(), 2);
    for (model, got) in [&a, &b].into_iter().zip(&rows[0].ate) {
        let plain = evaluate(model, &seq, &DESK_SEGMENT_LENGTHS).unwrap().ate;
        assert_eq!(got.unwrap().to_bits(), plain.to_bits());
    }
    // A perturbed rendering changes what the model sees.
    assert_ne!(rows[1].ate[0], rows[0].ate[0]);

    let mut csv = Vec::new();
    write_robustness_csv(&mut csv, &["a".into(), "b".into()], &rows).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("miscalibration_deg,a,b\n0,"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn mode_runs_share_their_start() {
    let train = [tiny_seq(1), tiny_seq(2)];
    let val = [tiny_seq(3)];
    let cfg = TrainConfig { epochs: 2, window: 5, batch: 2, seed: 4, ..TrainConfig::default() };
    let curves = mode_comparison(&train, &val, &ModelConfig::tiny(), 4, &cfg).unwrap();
    assert_eq!(curves.len(), 3 * (cfg.epochs + 1));
    let starts: Vec<_> = curves.chunks(cfg.epochs + 1).map(|c| (c[0].mode, c[0].train_loss, c[0].val_loss)).collect();
    assert_eq!(starts.iter().map(|s| s.0).collect::<Vec<_>>(), TrainMode::ALL);
    assert!(starts.iter().all(|s| s.1 == starts[0].1 && s.2 == starts[0].2));
    // Different update rules part ways after the first epoch.
    let after: Vec<f64> = curves.chunks(cfg.epochs + 1).map(|c| c[1].val_loss).collect();
    assert!(after[0] != after[1] && after[1] != after[2]);

    let mut csv = Vec::new();
    write_curve_csv(&mut csv, &curves).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + curves.len());
}
