use serde::{Deserialize, Serialize};
use std::path::Path;
use toml::{Table, Value};
use vinet::eval::{AteAlignment, DESK_SEGMENT_LENGTHS};
use vinet::model::ModelConfig;
use vinet::simulator::{AugmentationPlan, TrajectorySpec};
use vinet::training::TrainConfig;

use crate::CliError;

/// Everything a run can be configured with. Unknown keys anywhere are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Model initialization seed.
    pub seed: u64,
    /// Base spec; sequence `i` of a dataset uses `trajectory.seed + i`.
    pub trajectory: TrajectorySpec,
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub robustness: RobustnessSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            trajectory: TrajectorySpec::default(),
            dataset: DatasetSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            robustness: RobustnessSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Sequences generated; the last is test, the one before validation.
    pub sequences: usize,
    pub augmentation: AugmentationPlan,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { sequences: 4, augmentation: AugmentationPlan::none() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub segment_lengths: Vec<f64>,
    pub alignment: AteAlignment,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { segment_lengths: DESK_SEGMENT_LENGTHS.to_vec(), alignment: AteAlignment::FirstPose }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessSection {
    pub magnitudes_deg: Vec<f64>,
    pub kappa: f64,
    pub seed: u64,
}

impl Default for RobustnessSection {
    fn default() -> Self {
        RobustnessSection { magnitudes_deg: vec![0.0, 5.0, 10.0, 15.0], kappa: 50.0, seed: 0 }
    }
}

impl RunConfig {
    /// Reads `path` (if given), applies `key=value` overrides in order, and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            None => Table::new(),
            Some(p) => {
                if !p.exists() {
                    return Err(CliError::Missing(p.to_path_buf()));
                }
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(p.to_path_buf(), e))?;
                text.parse::<Table>().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: String| Err(CliError::Config(e));
        if let Err(e) = self.trajectory.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.model.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.train.validate() {
            return bad(e.to_string());
        }
        let cam = &self.trajectory.camera;
        if (cam.width, cam.height) != (self.model.image_width, self.model.image_height) {
            return bad(format!(
                "trajectory camera is {}x{} but the model expects {}x{}",
                cam.width, cam.height, self.model.image_width, self.model.image_height
            ));
        }
        let ratio = self.trajectory.imu_rate / self.trajectory.camera_rate;
        if (ratio - self.model.imu_rate_ratio as f64).abs() > 1e-9 {
            return bad(format!(
                "trajectory rates give {ratio} IMU samples per frame but model.imu_rate_ratio is {}",
                self.model.imu_rate_ratio
            ));
        }
        if self.dataset.sequences < 3 {
            return bad(format!("dataset.sequences must be >= 3, got {}", self.dataset.sequences));
        }
        if self.eval.segment_lengths.iter().any(|l| !(*l > 0.0)) {
            return bad("eval.segment_lengths must be positive".into());
        }
        if !(self.robustness.kappa > 0.0) {
            return bad(format!("robustness.kappa must be positive, got {}", self.robustness.kappa));
        }
        Ok(())
    }

    /// Per-sequence specs for a generated dataset.
    pub fn sequence_specs(&self) -> Vec<TrajectorySpec> {
        (0..self.dataset.sequences)
            .map(|i| TrajectorySpec { seed: self.trajectory.seed.wrapping_add(i as u64), ..self.trajectory.clone() })
            .collect()
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML value, falling back to
/// a bare string.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key {key:?} is malformed")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().expect("non-empty");
    let mut node = table;
    for p in parents {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {p} is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
