use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grid::{ParamGrid, TrialConfig};
use crate::error::{Error, Result};

pub const LEDGER_FORMAT: u32 = 1;

/// Input locations recorded for `search final`; excluded from the canonical form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LedgerInputs {
    pub episode: Option<PathBuf>,
    pub valset: Option<PathBuf>,
    pub images_dir: Option<PathBuf>,
    pub trainer: Option<PathBuf>,
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerHeader {
    pub format: u32,
    pub grid_digest: String,
    pub episode_digest: String,
    pub valset_digest: String,
    pub master_seed: u64,
    pub trial_count: usize,
    pub grid: ParamGrid,
    pub trainer: String,
    pub created_unix: u64,
    #[serde(default)]
    pub inputs: LedgerInputs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Succeeded,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: usize,
    pub config: TrialConfig,
    pub status: TrialStatus,
    pub val_map: Option<f64>,
    pub val_map_50: Option<f64>,
    /// Relative to the work directory.
    pub predictions_path: Option<String>,
    /// Failure reason or skip reason; empty on success.
    #[serde(default)]
    pub message: String,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub trial_id: usize,
    pub config: TrialConfig,
    pub testset_digest: String,
    pub test_map: Option<f64>,
    pub test_map_50: Option<f64>,
    pub per_threshold_map: Vec<Option<f64>>,
    pub predictions_path: String,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(LedgerHeader),
    Trial(TrialResult),
    Final(FinalRecord),
}

/// Search record: header, one result per grid point, optional final evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    pub header: LedgerHeader,
    pub trials: Vec<TrialResult>,
    pub final_eval: Option<FinalRecord>,
}

#[derive(Serialize)]
struct CanonicalTrial<'a> {
    trial_id: usize,
    config: &'a TrialConfig,
    status: TrialStatus,
    val_map: Option<f64>,
    val_map_50: Option<f64>,
    predictions_path: &'a Option<String>,
    message: &'a str,
}

#[derive(Serialize)]
struct CanonicalFinal<'a> {
    trial_id: usize,
    config: &'a TrialConfig,
    testset_digest: &'a str,
    test_map: Option<f64>,
    test_map_50: Option<f64>,
    per_threshold_map: &'a [Option<f64>],
    predictions_path: &'a str,
}

#[derive(Serialize)]
struct Canonical<'a> {
    format: u32,
    grid_digest: &'a str,
    episode_digest: &'a str,
    valset_digest: &'a str,
    master_seed: u64,
    trial_count: usize,
    trials: Vec<CanonicalTrial<'a>>,
    final_eval: Option<CanonicalFinal<'a>>,
}

impl Ledger {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut header = None;
        let mut trials = Vec::new();
        let mut final_eval = None;
        let mut offset = 0usize;
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                let rec: Line = serde_json::from_str(&line).map_err(|e| match Error::json(line.as_bytes(), e) {
                    Error::Parse { offset: o, message } => Error::Parse {
                        offset: offset + o,
                        message,
                    },
                    other => other,
                })?;
                match rec {
                    Line::Header(h) if header.is_none() => header = Some(h),
                    Line::Header(_) => return Err(Error::Validation("ledger has two headers".into())),
                    Line::Trial(t) => trials.push(t),
                    Line::Final(f) => final_eval = Some(f),
                }
            }
            offset += line.len() + 1;
        }
        let header = header.ok_or_else(|| Error::Validation("ledger has no header".into()))?;
        let ledger = Self {
            header,
            trials,
            final_eval,
        };
        ledger.check_unique()?;
        Ok(ledger)
    }

    fn check_unique(&self) -> Result<()> {
        let mut ids: Vec<usize> = self.trials.iter().map(|t| t.trial_id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("trial {} recorded twice", w[0])));
        }
        Ok(())
    }

    /// True when every grid point has exactly one record.
    pub fn is_complete(&self) -> bool {
        let mut ids: Vec<usize> = self.trials.iter().map(|t| t.trial_id).collect();
        ids.sort_unstable();
        ids.len() == self.header.trial_count && ids.iter().enumerate().all(|(i, &t)| i == t)
    }

    pub fn trial(&self, id: usize) -> Option<&TrialResult> {
        self.trials.iter().find(|t| t.trial_id == id)
    }

    pub fn count(&self, status: TrialStatus) -> usize {
        self.trials.iter().filter(|t| t.status == status).count()
    }

    /// Serialization without timestamps, wall times, absolute paths or
    /// completion order. Equal across reruns of the same search.
    pub fn canonical_json(&self) -> String {
        let mut trials: Vec<&TrialResult> = self.trials.iter().collect();
        trials.sort_by_key(|t| t.trial_id);
        let h = &self.header;
        let c = Canonical {
            format: h.format,
            grid_digest: &h.grid_digest,
            episode_digest: &h.episode_digest,
            valset_digest: &h.valset_digest,
            master_seed: h.master_seed,
            trial_count: h.trial_count,
            trials: trials
                .into_iter()
                .map(|t| CanonicalTrial {
                    trial_id: t.trial_id,
                    config: &t.config,
                    status: t.status,
                    val_map: t.val_map,
                    val_map_50: t.val_map_50,
                    predictions_path: &t.predictions_path,
                    message: &t.message,
                })
                .collect(),
            final_eval: self.final_eval.as_ref().map(|f| CanonicalFinal {
                trial_id: f.trial_id,
                config: &f.config,
                testset_digest: &f.testset_digest,
                test_map: f.test_map,
                test_map_50: f.test_map_50,
                per_threshold_map: &f.per_threshold_map,
                predictions_path: &f.predictions_path,
            }),
        };
        serde_json::to_string_pretty(&c).expect("ledger serializes")
    }

    pub fn canonical_digest(&self) -> String {
        crate::digest::sha256_hex(self.canonical_json().as_bytes())
    }
}

/// Append-only JSONL writer; each record is flushed as written.
#[derive(Debug)]
pub struct LedgerWriter {
    path: PathBuf,
    file: File,
}

impl LedgerWriter {
    /// Truncates `path` and writes the header.
    pub fn create(path: impl AsRef<Path>, header: &LedgerHeader) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = Self { path, file };
        w.write(&Line::Header(header.clone()))?;
        Ok(w)
    }

    pub fn append_to(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, file })
    }

    fn write(&mut self, line: &Line) -> Result<()> {
        let mut s = serde_json::to_string(line).expect("ledger record serializes");
        s.push('\n');
        self.file
            .write_all(s.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn trial(&mut self, t: &TrialResult) -> Result<()> {
        self.write(&Line::Trial(t.clone()))
    }

    pub fn final_eval(&mut self, f: &FinalRecord) -> Result<()> {
        self.write(&Line::Final(f.clone()))
    }
}
