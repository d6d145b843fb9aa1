//! Grid search over training configurations, selection on the validation
//! split, and the single final evaluation on the held-out split.

mod grid;
mod ledger;

pub use grid::{enumerate_grid, Assignment, Axis, ParamGrid, ParamValue, TrialConfig, SEED_AXIS};
pub use ledger::{FinalRecord, Ledger, LedgerHeader, LedgerInputs, LedgerWriter, TrialResult, TrialStatus, LEDGER_FORMAT};

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::dataset::DetDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalParams, EvalResult};
use crate::runner::{trial_dir, Trainer, TrialInputs, TrialRun, DETECTIONS_FILE};

pub const LEDGER_FILE: &str = "ledger.jsonl";

#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub workdir: PathBuf,
    /// Defaults to `workdir/ledger.jsonl`.
    pub ledger_path: Option<PathBuf>,
    pub images_dir: PathBuf,
    pub master_seed: u64,
    /// Trials run concurrently; 1 runs them in grid order.
    pub parallelism: usize,
    /// Stop dispatching after this many consecutive completed trials fail to
    /// raise the best validation mAP.
    pub patience: Option<usize>,
    pub eval: EvalParams,
    pub inputs: LedgerInputs,
}

impl SearchOptions {
    pub fn new(workdir: impl Into<PathBuf>, images_dir: impl Into<PathBuf>) -> Self {
        Self {
            workdir: workdir.into(),
            ledger_path: None,
            images_dir: images_dir.into(),
            master_seed: 0,
            parallelism: 1,
            patience: None,
            eval: EvalParams::default(),
            inputs: LedgerInputs::default(),
        }
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.ledger_path
            .clone()
            .unwrap_or_else(|| self.workdir.join(LEDGER_FILE))
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: TrialResult,
    pub ledger: Ledger,
    pub ledger_path: PathBuf,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn relative(workdir: &Path, p: &Path) -> String {
    p.strip_prefix(workdir)
        .unwrap_or(p)
        .to_string_lossy()
        .replace('\\', "/")
}

fn has_scored_gt(ds: &DetDataset<f64>) -> bool {
    ds.annotations.iter().any(|a| !a.iscrowd)
}

fn score_trial(
    trial: &crate::search::TrialConfig,
    run: TrialRun,
    gt: &DetDataset<f64>,
    params: &EvalParams,
    workdir: &Path,
) -> TrialResult {
    let mut r = TrialResult {
        trial_id: trial.trial_id,
        config: trial.clone(),
        status: TrialStatus::Failed,
        val_map: None,
        val_map_50: None,
        predictions_path: None,
        message: String::new(),
        wall_time: run.wall_time.as_secs_f64(),
    };
    match &run.outcome {
        Err(f) => r.message = f.to_string(),
        Ok(dets) => match evaluate(dets, gt, params) {
            Err(e) => r.message = format!("unusable detections: {e}"),
            Ok(res) => {
                r.status = TrialStatus::Succeeded;
                r.val_map = res.map;
                r.val_map_50 = res.map_at(0.5);
                r.predictions_path = Some(relative(workdir, &run.detections_path()));
            }
        },
    }
    if r.status == TrialStatus::Failed {
        log::warn!("{} failed: {}", trial.describe(), r.message);
    } else {
        log::info!("{}: val mAP {:.4}", trial.describe(), r.val_map.unwrap_or(0.0));
    }
    r
}

/// Run every grid point (unless early stopping halts dispatch), record each
/// outcome in the ledger, and return the trial with the highest validation mAP.
///
/// Failed trials are recorded and the search continues. If none succeeds the
/// error carries the ledger.
pub fn run_search(
    grid: &ParamGrid,
    trainer: &dyn Trainer,
    episode: &DetDataset<f64>,
    valset: &DetDataset<f64>,
    opts: &SearchOptions,
) -> Result<SearchOutcome> {
    if opts.parallelism == 0 {
        return Err(Error::Argument("parallelism must be at least 1".into()));
    }
    if opts.patience == Some(0) {
        return Err(Error::Argument("early-stop patience must be at least 1".into()));
    }
    if !has_scored_gt(valset) {
        return Err(Error::Argument("validation set has no non-crowd annotations".into()));
    }
    if opts.parallelism > 1 && !trainer.is_deterministic() {
        log::warn!("trainer is not declared deterministic; parallel results may not be reproducible");
    }
    let trials = enumerate_grid(grid, opts.master_seed)?;
    let n = trials.len();
    let inputs = TrialInputs::materialize(&opts.workdir, episode, valset, "val", &opts.images_dir)?;
    let workdir = inputs.workdir.clone();
    let ledger_path = opts.ledger_path();
    let header = LedgerHeader {
        format: LEDGER_FORMAT,
        grid_digest: grid.digest(),
        episode_digest: episode.digest(),
        valset_digest: valset.digest(),
        master_seed: opts.master_seed,
        trial_count: n,
        grid: grid.clone(),
        trainer: trainer.describe(),
        created_unix: now_unix(),
        inputs: opts.inputs.clone(),
    };
    let mut writer = LedgerWriter::create(&ledger_path, &header)?;
    let mut results: Vec<TrialResult> = Vec::with_capacity(n);
    let mut write_err: Option<Error> = None;
    let mut dispatched = 0usize;
    let mut stopped_early = false;

    let (job_tx, job_rx) = mpsc::channel::<usize>();
    let (res_tx, res_rx) = mpsc::channel::<TrialResult>();
    let job_rx = Mutex::new(job_rx);
    std::thread::scope(|scope| {
        let workers = opts.parallelism.min(n.max(1));
        for _ in 0..workers {
            let res_tx = res_tx.clone();
            let (job_rx, trials, inputs, workdir) = (&job_rx, &trials, &inputs, &workdir);
            scope.spawn(move || loop {
                let job = job_rx.lock().expect("job queue").recv();
                let Ok(i) = job else { break };
                let t = &trials[i];
                let run = trainer.run(t, inputs, &trial_dir(workdir, t.trial_id));
                if res_tx.send(score_trial(t, run, valset, &opts.eval, workdir)).is_err() {
                    break;
                }
            });
        }
        drop(res_tx);

        let mut in_flight = 0;
        while dispatched < n && in_flight < workers {
            job_tx.send(dispatched).expect("workers alive");
            dispatched += 1;
            in_flight += 1;
        }
        let mut best = f64::NEG_INFINITY;
        let mut since_best = 0usize;
        while in_flight > 0 {
            let Ok(r) = res_rx.recv() else { break };
            in_flight -= 1;
            if write_err.is_none() {
                if let Err(e) = writer.trial(&r) {
                    write_err = Some(e);
                }
            }
            match r.val_map {
                Some(m) if r.status == TrialStatus::Succeeded && m > best => {
                    best = m;
                    since_best = 0;
                }
                _ => since_best += 1,
            }
            results.push(r);
            if let Some(p) = opts.patience {
                if since_best >= p && dispatched < n && !stopped_early {
                    log::info!("early stop: {p} trials without improvement");
                    stopped_early = true;
                }
            }
            if !stopped_early && write_err.is_none() && dispatched < n {
                job_tx.send(dispatched).expect("workers alive");
                dispatched += 1;
                in_flight += 1;
            }
        }
        drop(job_tx);
    });

    if let Some(e) = write_err {
        return Err(e);
    }
    for t in &trials[dispatched..] {
        let r = TrialResult {
            trial_id: t.trial_id,
            config: t.clone(),
            status: TrialStatus::Skipped,
            val_map: None,
            val_map_50: None,
            predictions_path: None,
            message: "early stop".into(),
            wall_time: 0.0,
        };
        writer.trial(&r)?;
        results.push(r);
    }

    let ledger = Ledger {
        header,
        trials: results,
        final_eval: None,
    };
    match select_best(&ledger) {
        Some(best) => Ok(SearchOutcome {
            best: best.clone(),
            ledger,
            ledger_path,
        }),
        None => Err(Error::SearchFailed {
            total: n,
            ledger: Box::new(ledger),
        }),
    }
}

/// Highest validation mAP among succeeded trials; ties go to the smallest id.
pub fn select_best(ledger: &Ledger) -> Option<&TrialResult> {
    let mut best: Option<&TrialResult> = None;
    for t in &ledger.trials {
        let (TrialStatus::Succeeded, Some(m)) = (t.status, t.val_map) else {
            continue;
        };
        let better = match best {
            None => true,
            Some(b) => {
                let bm = b.val_map.unwrap_or(f64::NEG_INFINITY);
                m > bm || (m == bm && t.trial_id < b.trial_id)
            }
        };
        if better {
            best = Some(t);
        }
    }
    best
}

/// Run the selected configuration once and score it on the held-out split.
/// The result is appended to the ledger at `ledger_path` when given.
#[allow(clippy::too_many_arguments)]
pub fn final_eval(
    best: &TrialConfig,
    trainer: &dyn Trainer,
    episode: &DetDataset<f64>,
    testset: &DetDataset<f64>,
    images_dir: &Path,
    workdir: &Path,
    params: &EvalParams,
    ledger_path: Option<&Path>,
) -> Result<(EvalResult<f64>, FinalRecord)> {
    let inputs = TrialInputs::materialize(workdir, episode, testset, "test", images_dir)?;
    let run_dir = inputs.workdir.join("final");
    let run = trainer.run(best, &inputs, &run_dir);
    let dets = match &run.outcome {
        Ok(d) => d,
        Err(f) => {
            return Err(Error::Trainer(format!(
                "final run of {} failed: {f}\n{}",
                best.describe(),
                run.log_tail(20)
            )))
        }
    };
    let res = evaluate(dets, testset, params)?;
    let rec = FinalRecord {
        trial_id: best.trial_id,
        config: best.clone(),
        testset_digest: testset.digest(),
        test_map: res.map,
        test_map_50: res.map_at(0.5),
        per_threshold_map: res.per_threshold_map.clone(),
        predictions_path: relative(&inputs.workdir, &run_dir.join(DETECTIONS_FILE)),
        wall_time: run.wall_time.as_secs_f64(),
    };
    if let Some(p) = ledger_path {
        LedgerWriter::append_to(p)?.final_eval(&rec)?;
    }
    Ok((res, rec))
}
