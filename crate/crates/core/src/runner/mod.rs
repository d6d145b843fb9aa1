//! Trainer protocol: hand a trial configuration plus data to a trainer and
//! collect its detections on the evaluation split.

mod command;
mod synthetic;

pub use command::{load_trainer, TrainerCommand, TrainerFile, PLACEHOLDERS};
pub use synthetic::{synthetic_trainer, SyntheticObjective, SyntheticTrainer, Target};

use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::dataset::DetDataset;
use crate::error::{Error, Result};
use crate::eval::Detection;
use crate::search::TrialConfig;

/// File names inside a run directory.
pub const CONFIG_FILE: &str = "config.txt";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const LOG_FILE: &str = "trial.log";

/// Data handed to a trainer. Paths are absolute.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialInputs {
    pub train_ann: PathBuf,
    pub val_ann: PathBuf,
    pub images_dir: PathBuf,
    pub workdir: PathBuf,
}

impl TrialInputs {
    /// Write the episode and evaluation split under `workdir/inputs` and
    /// return the resulting paths.
    pub fn materialize(
        workdir: &Path,
        episode: &DetDataset<f64>,
        eval_split: &DetDataset<f64>,
        eval_name: &str,
        images_dir: &Path,
    ) -> Result<Self> {
        let workdir = absolute(workdir)?;
        let dir = workdir.join("inputs");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let train_ann = dir.join("train.json");
        let val_ann = dir.join(format!("{eval_name}.json"));
        write_if_changed(&train_ann, &episode.to_json_bytes())?;
        write_if_changed(&val_ann, &eval_split.to_json_bytes())?;
        Ok(Self {
            train_ann,
            val_ann,
            images_dir: absolute(images_dir)?,
            workdir,
        })
    }
}

fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<()> {
    if std::fs::read(path).ok().as_deref() == Some(bytes) {
        return Ok(());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn absolute(p: &Path) -> Result<PathBuf> {
    if p.as_os_str().is_empty() {
        return std::env::current_dir().map_err(|e| Error::io(p, e));
    }
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunFailure {
    Exit(Option<i32>),
    Timeout(Duration),
    Spawn(String),
    BadOutput(String),
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Exit(Some(c)) => write!(f, "trainer exited with status {c}"),
            Self::Exit(None) => write!(f, "trainer killed by signal"),
            Self::Timeout(d) => write!(f, "trainer timed out after {}s", d.as_secs_f64()),
            Self::Spawn(m) => write!(f, "could not start trainer: {m}"),
            Self::BadOutput(m) => write!(f, "unusable detections: {m}"),
        }
    }
}

/// Outcome of one trainer invocation.
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub run_dir: PathBuf,
    pub outcome: std::result::Result<Vec<Detection<f64>>, RunFailure>,
    pub wall_time: Duration,
}

impl TrialRun {
    pub fn detections_path(&self) -> PathBuf {
        self.run_dir.join(DETECTIONS_FILE)
    }

    pub fn log_path(&self) -> PathBuf {
        self.run_dir.join(LOG_FILE)
    }

    /// Last lines of the trial log, for diagnostics.
    pub fn log_tail(&self, lines: usize) -> String {
        let text = std::fs::read_to_string(self.log_path()).unwrap_or_default();
        let all: Vec<&str> = text.lines().collect();
        all[all.len().saturating_sub(lines)..].join("\n")
    }
}

/// Something that trains on `inputs.train_ann` with a trial configuration and
/// writes detections for `inputs.val_ann` into `run_dir/detections.json`.
pub trait Trainer: Sync {
    fn run(&self, trial: &TrialConfig, inputs: &TrialInputs, run_dir: &Path) -> TrialRun;

    /// Identical inputs and seed give identical detections.
    fn is_deterministic(&self) -> bool;

    fn describe(&self) -> String;
}

/// Prepare `run_dir` and write the trial config file into it.
pub(crate) fn prepare_run_dir(trial: &TrialConfig, run_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let out = run_dir.join(DETECTIONS_FILE);
    if out.exists() {
        std::fs::remove_file(&out).map_err(|e| Error::io(&out, e))?;
    }
    let cfg = run_dir.join(CONFIG_FILE);
    std::fs::write(&cfg, trial.to_config_text()).map_err(|e| Error::io(&cfg, e))?;
    Ok(cfg)
}

/// Read and validate a trainer's detection file.
pub(crate) fn collect_detections(path: &Path) -> std::result::Result<Vec<Detection<f64>>, RunFailure> {
    if !path.exists() {
        return Err(RunFailure::BadOutput(format!("{} was not written", path.display())));
    }
    crate::eval::load_detections(path).map_err(|e| RunFailure::BadOutput(e.to_string()))
}

/// Run one trial: write the episode and validation split under `workdir`,
/// then invoke the trainer in `workdir/trials/<id>`.
pub fn run_trial(
    trainer: &dyn Trainer,
    trial: &TrialConfig,
    episode: &DetDataset<f64>,
    valset: &DetDataset<f64>,
    images_dir: &Path,
    workdir: &Path,
) -> Result<TrialRun> {
    let inputs = TrialInputs::materialize(workdir, episode, valset, "val", images_dir)?;
    let run_dir = trial_dir(&inputs.workdir, trial.trial_id);
    Ok(trainer.run(trial, &inputs, &run_dir))
}

pub fn trial_dir(workdir: &Path, trial_id: usize) -> PathBuf {
    workdir.join("trials").join(format!("{trial_id:05}"))
}
