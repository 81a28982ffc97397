use crate::config::RunConfig;
use crate::{CliError, Command, ConfigArgs};
use log::{info, warn};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use vinet::eval::{
    ate, kitti_segment_errors, mode_comparison, predict_trajectory, robustness_sweep, write_curve_csv, write_eval_csv,
    write_robustness_csv, EvalReport,
};
use vinet::formats::{load_checkpoint, read_sequence, save_checkpoint, write_sequence, write_trajectory, Checkpoint};
use vinet::gradcheck::run_suite;
use vinet::model::Vinet;
use vinet::simulator::{make_dataset, SyncedSequence};
use vinet::training::{train_with, TrainError};

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Defaults => {
            print!("{}", toml::to_string(&RunConfig::default()).expect("defaults serialize"));
            Ok(())
        }
        Command::Generate { cfg, out } => generate(&load(&cfg)?, &out),
        Command::Train { cfg, data, out, curve } => train(&load(&cfg)?, &data, &out, &curve),
        Command::Eval { cfg, checkpoint, sequence, out, trajectory } => {
            eval(&load(&cfg)?, &checkpoint, &sequence, &out, trajectory.as_deref())
        }
        Command::Gradcheck { cfg, seed, out } => {
            let c = load(&cfg)?;
            gradcheck(seed.unwrap_or(c.seed), out.as_deref())
        }
        Command::Robustness { cfg, checkpoints, sequence, magnitudes, out } => {
            let c = load(&cfg)?;
            let mags = magnitudes.unwrap_or_else(|| c.robustness.magnitudes_deg.clone());
            robustness(&c, &checkpoints, &sequence, &mags, &out)
        }
        Command::Modes { cfg, data, out } => modes(&load(&cfg)?, &data, &out),
    }
}

fn load(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    RunConfig::load(args.config.as_deref(), &args.set)
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

fn generate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = make_dataset(&cfg.sequence_specs(), &cfg.dataset.augmentation).map_err(runtime)?;
    for (split, seqs) in SPLITS.iter().zip([&data.train, &data.val, &data.test]) {
        for (i, seq) in seqs.iter().enumerate() {
            write_sequence(&out.join(split).join(format!("{i:03}")), seq)?;
        }
        info!("{split}: {} sequence(s)", seqs.len());
    }
    Ok(())
}

/// Sequences stored under `data/split`, in name order.
fn read_split(data: &Path, split: &str) -> Result<Vec<SyncedSequence>, CliError> {
    if !data.is_dir() {
        return Err(CliError::Missing(data.to_path_buf()));
    }
    let dir = data.join(split);
    let entries = fs::read_dir(&dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Missing(dir.clone()),
        _ => CliError::Io(dir.clone(), e),
    })?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    paths.sort();
    let seqs = paths.iter().map(|p| read_sequence(p)).collect::<Result<Vec<_>, _>>()?;
    info!("{}: {} sequence(s)", dir.display(), seqs.len());
    Ok(seqs)
}

fn train(cfg: &RunConfig, data: &Path, out: &Path, curve_path: &Path) -> Result<(), CliError> {
    let train_seqs = read_split(data, "train")?;
    let val = read_split(data, "val")?;
    let model = Vinet::new(cfg.model.clone(), cfg.seed).map_err(runtime)?;
    let checkpoint = |o: &vinet::training::TrainOutcome| Checkpoint {
        config: o.model.config.clone(),
        params: o.model.params.clone(),
        optimizer: Some(o.optimizer.clone()),
        epoch: o.curve.last().map_or(0, |p| p.epoch as u64),
        seed: cfg.seed,
    };
    match train_with(model, &train_seqs, &val, &cfg.train, |_| {}) {
        Ok(o) => {
            save_checkpoint(out, &checkpoint(&o))?;
            write_with(curve_path, |w| write_curve_csv(w, &o.curve))
        }
        Err(TrainError::Diverged { epoch, reason, last_good }) => {
            save_checkpoint(out, &checkpoint(&last_good))?;
            write_with(curve_path, |w| write_curve_csv(w, &last_good.curve))?;
            Err(CliError::Diverged(format!(
                "training diverged in epoch {epoch} ({reason}); saved the last good state to {}",
                out.display()
            )))
        }
        Err(TrainError::InvalidConfig(m)) => Err(CliError::Config(m)),
        Err(e) => Err(runtime(e)),
    }
}

fn load_model(path: &Path) -> Result<Vinet, CliError> {
    let ckpt = load_checkpoint(path)?;
    Vinet::from_params(ckpt.config, ckpt.params).map_err(runtime)
}

fn eval(cfg: &RunConfig, ckpt: &Path, seq_dir: &Path, out: &Path, traj: Option<&Path>) -> Result<(), CliError> {
    let model = load_model(ckpt)?;
    let seq = read_sequence(seq_dir)?;
    let pred = predict_trajectory(&model, &seq).map_err(runtime)?;
    let report = EvalReport {
        ate: ate(&pred, &seq.gt_poses, cfg.eval.alignment).map_err(runtime)?,
        path_length: seq.path_length(),
        segments: kitti_segment_errors(&pred, &seq.gt_poses, &cfg.eval.segment_lengths).map_err(runtime)?,
    };
    info!("ATE {:.4} m over a {:.2} m path", report.ate, report.path_length);
    write_with(out, |w| write_eval_csv(w, &report))?;
    if let Some(p) = traj {
        let timed: Vec<_> = seq.frames.iter().map(|f| f.t).zip(pred).collect();
        write_trajectory(p, &timed)?;
    }
    Ok(())
}

fn gradcheck(seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let checks = run_suite(seed).map_err(runtime)?;
    let mut failed = 0;
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        eprintln!("{:<16} rel_error {:.3e}  tol {:.0e}  n={:<5} {verdict}", c.name, c.rel_error, c.tolerance, c.compared);
        failed += usize::from(!c.passed());
    }
    if let Some(p) = out {
        write_with(p, |w| {
            writeln!(w, "check,rel_error,tolerance,compared,passed")?;
            for c in &checks {
                writeln!(w, "{},{},{},{},{}", c.name, c.rel_error, c.tolerance, c.compared, c.passed())?;
            }
            Ok(())
        })?;
    }
    if failed > 0 {
        Err(CliError::GradCheck(failed))
    } else {
        Ok(())
    }
}

fn robustness(cfg: &RunConfig, ckpts: &[PathBuf], seq_dir: &Path, mags: &[f64], out: &Path) -> Result<(), CliError> {
    let models = ckpts.iter().map(|p| load_model(p)).collect::<Result<Vec<_>, _>>()?;
    let names: Vec<String> =
        ckpts.iter().map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())).collect();
    let seq = read_sequence(seq_dir)?;
    let refs: Vec<&Vinet> = models.iter().collect();
    let rows = robustness_sweep(&refs, &seq, mags, cfg.robustness.kappa, cfg.robustness.seed).map_err(runtime)?;
    for row in &rows {
        if row.ate.iter().any(Option::is_none) {
            warn!("{} deg: at least one variant failed", row.miscalibration_deg);
        }
    }
    write_with(out, |w| write_robustness_csv(w, &names, &rows))
}

fn modes(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let train_seqs = read_split(data, "train")?;
    let val = read_split(data, "val")?;
    let curves = mode_comparison(&train_seqs, &val, &cfg.model, cfg.seed, &cfg.train).map_err(runtime)?;
    write_with(out, |w| write_curve_csv(w, &curves))
}
