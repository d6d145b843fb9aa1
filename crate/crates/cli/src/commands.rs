use std::path::{Path, PathBuf};

use ets_core::augment::{apply_pipeline, AugPipelineSpec, Sample, SampleCache};
use ets_core::dataset::{
    build_validation_set, distribution_report, parse_coco_with, sample_kshot, CoarseLabelMap, DetDataset,
    ParseOptions,
};
use ets_core::eval::{default_iou_thresholds, detections_to_json, evaluate, load_detections, EvalParams};
use ets_core::rng::SeedStream;
use ets_core::runner::{load_trainer, SyntheticObjective};
use ets_core::search::{
    final_eval, run_search, select_best, Ledger, LedgerInputs, ParamGrid, SearchOptions, TrialConfig,
    TrialResult, TrialStatus,
};
use ets_core::{Dataset, Error, Result};
use serde_json::{json, Value};

use crate::args::{AugmentCmd, DatasetCmd, EvalArgs, FinalArgs, RunArgs, RunnerCmd, SearchArgs, SearchCmd};
use crate::config::GlobalConfig;

/// Where command results go: human text or one JSON document on stdout.
pub struct Ctx {
    pub cfg: GlobalConfig,
    pub workdir_flag: Option<PathBuf>,
    pub json: bool,
}

impl Ctx {
    fn emit(&self, human: String, machine: Value) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(&machine).expect("json output"));
        } else {
            print!("{human}");
        }
    }

    fn workdir(&self) -> PathBuf {
        self.workdir_flag
            .clone()
            .unwrap_or_else(|| self.cfg.workdir(None))
    }

    fn eval_params(&self, flag: Option<Vec<f64>>, max_dets: usize) -> EvalParams {
        EvalParams {
            iou_thresholds: flag
                .or_else(|| self.cfg.iou_thresholds.clone())
                .unwrap_or_else(default_iou_thresholds),
            max_dets,
        }
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    DetDataset::load(path)
}

fn counts_json(counts: &std::collections::BTreeMap<u64, usize>) -> Value {
    counts.iter().map(|(k, v)| (k.to_string(), json!(v))).collect::<serde_json::Map<_, _>>().into()
}

fn counts_text(counts: &std::collections::BTreeMap<u64, usize>) -> String {
    counts.iter().map(|(k, v)| format!("  category {k}: {v}\n")).collect()
}

pub fn dataset(ctx: &Ctx, cmd: DatasetCmd) -> Result<()> {
    match cmd {
        DatasetCmd::Ingest { ann, lenient, out } => {
            let raw = std::fs::read(&ann).map_err(|e| Error::io(&ann, e))?;
            let ds: Dataset = parse_coco_with(&raw, ParseOptions { lenient })?;
            if let Some(out) = &out {
                ds.save(out)?;
            }
            let counts = ds.instance_counts();
            ctx.emit(
                format!(
                    "{}: {} images, {} annotations, {} categories (split {})\n{}",
                    ann.display(),
                    ds.images.len(),
                    ds.annotations.len(),
                    ds.categories.len(),
                    ds.split_tag,
                    counts_text(&counts)
                ),
                json!({
                    "images": ds.images.len(),
                    "annotations": ds.annotations.len(),
                    "categories": ds.categories.len(),
                    "split": ds.split_tag,
                    "instances_per_category": counts_json(&counts),
                    "digest": ds.digest(),
                }),
            );
        }
        DatasetCmd::Episode { ann, k, seed, out } => {
            let ds = load_dataset(&ann)?;
            let seed = ctx.cfg.seed(seed);
            let ep = sample_kshot(&ds, k as usize, seed)?;
            ep.dataset.save(&out)?;
            let counts = ep.dataset.instance_counts();
            ctx.emit(
                format!(
                    "{k}-shot episode (seed {seed}): {} images, {} annotations -> {}\n{}",
                    ep.dataset.images.len(),
                    ep.dataset.annotations.len(),
                    out.display(),
                    counts_text(&counts)
                ),
                json!({
                    "k": k,
                    "seed": seed,
                    "images": ep.dataset.images.len(),
                    "annotations": ep.dataset.annotations.len(),
                    "instances_per_category": counts_json(&counts),
                    "digest": ep.dataset.digest(),
                }),
            );
        }
        DatasetCmd::Valset {
            ann,
            rate,
            seed,
            disjoint,
            coarse_map,
            out,
            remainder_out,
        } => {
            let test = load_dataset(&ann)?;
            let coarse = match &coarse_map {
                Some(p) => CoarseLabelMap::load(p)?,
                None => CoarseLabelMap::identity(&test.categories),
            };
            let seed = ctx.cfg.seed(seed);
            let split = build_validation_set(&test, rate, &coarse, seed, disjoint)?;
            split.val.save(&out)?;
            let mut rest_path = None;
            if let Some(rest) = &split.remainder {
                let p = remainder_out.unwrap_or_else(|| out.with_extension("remainder.json"));
                rest.save(&p)?;
                rest_path = Some(p);
            }
            let report = distribution_report(&split.val, &coarse.relabel(&test)?)?;
            let mut human = format!(
                "validation set (rate {rate}, seed {seed}): {} of {} images, {} annotations -> {}\n",
                split.val.images.len(),
                test.images.len(),
                split.val.annotations.len(),
                out.display()
            );
            if let Some(p) = &rest_path {
                human += &format!("remainder: {}\n", p.display());
            }
            human += "drawn instances per fine category:\n";
            human += &counts_text(&split.selected);
            if !split.forced.is_empty() {
                human += &format!("raised to one instance: {:?}\n", split.forced);
            }
            human += &format!("max proportion deviation: {:.4}\n", report.max_abs_deviation);
            ctx.emit(
                human,
                json!({
                    "rate": rate,
                    "seed": seed,
                    "disjoint": disjoint,
                    "images": split.val.images.len(),
                    "annotations": split.val.annotations.len(),
                    "selected_per_category": counts_json(&split.selected),
                    "forced_categories": split.forced,
                    "max_abs_deviation": report.max_abs_deviation,
                    "digest": split.val.digest(),
                    "remainder_digest": split.remainder.as_ref().map(|r| r.digest()),
                }),
            );
        }
        DatasetCmd::Report {
            val,
            reference,
            coarse_map,
        } => {
            let val = load_dataset(&val)?;
            let mut reference = load_dataset(&reference)?;
            if let Some(p) = coarse_map {
                reference = CoarseLabelMap::load(p)?.relabel(&reference)?;
            }
            let rep = distribution_report(&val, &reference)?;
            let mut human = String::from("category   p_val    p_ref\n");
            for r in &rep.rows {
                human += &format!("{:<9} {:.4}   {:.4}\n", r.category_id, r.p_val, r.p_ref);
            }
            human += &format!("max abs deviation: {:.4}\n", rep.max_abs_deviation);
            ctx.emit(human, serde_json::to_value(&rep).expect("report serializes"));
        }
    }
    Ok(())
}

pub fn augment(ctx: &Ctx, cmd: AugmentCmd) -> Result<()> {
    let AugmentCmd::Preview {
        spec,
        seed,
        out,
        ann,
        images,
        limit,
    } = cmd;
    let spec = match spec.or_else(|| ctx.cfg.aug_spec.clone()) {
        Some(p) => AugPipelineSpec::load(p)?,
        None => AugPipelineSpec::detection_default(),
    };
    let seed = ctx.cfg.seed(seed);
    let ds = load_dataset(&ann)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut records: Vec<_> = ds.images.iter().collect();
    records.sort_by_key(|r| r.id);
    let stream = SeedStream::new(seed);
    let mut cache = SampleCache::new(spec.cache_capacity);
    let mut written = Vec::new();
    for (i, rec) in records.into_iter().take(limit).enumerate() {
        let sample: Sample<f64> = Sample::load(images.join(&rec.file_name), rec, &ds)?;
        let res = apply_pipeline(&sample, &spec, &mut cache, &stream.child(i as u64))?;
        let stem = format!("{:04}_{}", i, rec.id);
        let png = out.join(format!("{stem}.png"));
        res.sample.save_png(&png)?;
        let sidecar = json!({
            "source": rec.file_name,
            "image_id": rec.id,
            "index": i,
            "seed": seed,
            "width": res.sample.width(),
            "height": res.sample.height(),
            "boxes": res.sample.boxes,
            "trace": res.trace,
        });
        let side = out.join(format!("{stem}.json"));
        std::fs::write(&side, serde_json::to_string_pretty(&sidecar).expect("sidecar") + "\n")
            .map_err(|e| Error::io(&side, e))?;
        written.push(json!({"image": png.file_name().unwrap().to_string_lossy(), "boxes": res.sample.boxes.len(), "trace": res.trace}));
    }
    ctx.emit(
        format!("wrote {} previews to {}\n", written.len(), out.display()),
        json!({"seed": seed, "previews": written}),
    );
    Ok(())
}

pub fn eval(ctx: &Ctx, args: EvalArgs) -> Result<()> {
    let gt = load_dataset(&args.gt)?;
    let dets = load_detections(&args.dets)?;
    let res = evaluate(&dets, &gt, &ctx.eval_params(args.iou_thrs, args.max_dets as usize))?;
    ctx.emit(res.report_text(), serde_json::to_value(res.summary()).expect("summary serializes"));
    Ok(())
}

fn trial_json(t: &TrialResult) -> Value {
    json!({
        "trial_id": t.trial_id,
        "assignment": t.config.assignment,
        "seed": t.config.seed,
        "status": t.status,
        "val_map": t.val_map,
        "val_map_50": t.val_map_50,
    })
}

fn trial_text(t: &TrialResult) -> String {
    format!(
        "{}\n  val mAP {:.4}, mAP@0.50 {:.4}\n",
        t.config.describe(),
        t.val_map.unwrap_or(f64::NAN),
        t.val_map_50.unwrap_or(f64::NAN)
    )
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Directory holding `file`; "." for a bare file name.
fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn search(ctx: &Ctx, args: SearchArgs) -> Result<()> {
    match (args.cmd, args.run) {
        (Some(SearchCmd::Run(run)), _) | (None, Some(run)) => search_run(ctx, run),
        (Some(SearchCmd::Best { ledger }), _) => {
            let ledger = Ledger::load(&ledger)?;
            let best = select_best(&ledger)
                .ok_or_else(|| Error::Validation("ledger has no succeeded trial".into()))?;
            ctx.emit(trial_text(best), trial_json(best));
            Ok(())
        }
        (Some(SearchCmd::Final(f)), _) => search_final(ctx, f),
        (Some(SearchCmd::Canonical { ledger }), _) => {
            let ledger = Ledger::load(&ledger)?;
            println!("{}", ledger.canonical_json());
            Ok(())
        }
        (None, None) => unreachable!("clap requires a subcommand or run arguments"),
    }
}

fn search_run(ctx: &Ctx, a: RunArgs) -> Result<()> {
    let grid = ParamGrid::load(&a.grid)?;
    let trainer = load_trainer(&a.trainer)?;
    let episode = load_dataset(&a.episode)?;
    let valset = load_dataset(&a.valset)?;
    let images = a
        .images
        .clone()
        .unwrap_or_else(|| parent_dir(&a.episode));
    let workdir = ctx.workdir();
    let mut opts = SearchOptions::new(&workdir, &images);
    opts.ledger_path = a.ledger.clone();
    opts.master_seed = ctx.cfg.seed(a.seed);
    opts.parallelism = a.parallelism as usize;
    opts.patience = a.patience.map(|p| p as usize);
    opts.eval = ctx.eval_params(a.iou_thrs, 100);
    opts.inputs = LedgerInputs {
        episode: Some(absolute(&a.episode)),
        valset: Some(absolute(&a.valset)),
        images_dir: Some(absolute(&images)),
        trainer: Some(absolute(&a.trainer)),
        workdir: Some(absolute(&workdir)),
    };
    match run_search(&grid, trainer.as_ref(), &episode, &valset, &opts) {
        Ok(out) => {
            let l = &out.ledger;
            let counts = format!(
                "{} trials: {} succeeded, {} failed, {} skipped",
                l.trials.len(),
                l.count(TrialStatus::Succeeded),
                l.count(TrialStatus::Failed),
                l.count(TrialStatus::Skipped)
            );
            ctx.emit(
                format!("{counts}\nledger: {}\nbest: {}", out.ledger_path.display(), trial_text(&out.best)),
                json!({
                    "best": trial_json(&out.best),
                    "trials": l.trials.len(),
                    "succeeded": l.count(TrialStatus::Succeeded),
                    "failed": l.count(TrialStatus::Failed),
                    "skipped": l.count(TrialStatus::Skipped),
                    "ledger": out.ledger_path,
                    "canonical_digest": l.canonical_digest(),
                }),
            );
            Ok(())
        }
        Err(Error::SearchFailed { total, ledger }) => {
            for t in &ledger.trials {
                eprintln!("trial {}: {}", t.trial_id, t.message);
            }
            Err(Error::SearchFailed { total, ledger })
        }
        Err(e) => Err(e),
    }
}

fn search_final(ctx: &Ctx, f: FinalArgs) -> Result<()> {
    let ledger = Ledger::load(&f.ledger)?;
    let best: TrialConfig = select_best(&ledger)
        .ok_or_else(|| Error::Validation("ledger has no succeeded trial".into()))?
        .config
        .clone();
    let inputs = &ledger.header.inputs;
    let need = |flag: Option<PathBuf>, recorded: &Option<PathBuf>, what: &str| {
        flag.or_else(|| recorded.clone())
            .ok_or_else(|| Error::Argument(format!("ledger records no {what}; pass --{what}")))
    };
    let trainer = load_trainer(need(f.trainer, &inputs.trainer, "trainer")?)?;
    let episode = load_dataset(&need(f.episode, &inputs.episode, "episode")?)?;
    let images = need(f.images, &inputs.images_dir, "images")?;
    let testset = load_dataset(&f.testset)?;
    let workdir = match &ctx.workdir_flag {
        Some(w) => w.clone(),
        None => inputs
            .workdir
            .clone()
            .unwrap_or_else(|| parent_dir(&f.ledger)),
    };
    let params = ctx.eval_params(f.iou_thrs, 100);
    let (res, rec) = final_eval(
        &best,
        trainer.as_ref(),
        &episode,
        &testset,
        &images,
        &workdir,
        &params,
        Some(&f.ledger),
    )?;
    ctx.emit(
        format!("final evaluation of {}\n{}", best.describe(), res.report_text()),
        json!({
            "trial_id": rec.trial_id,
            "assignment": best.assignment,
            "seed": best.seed,
            "test": res.summary(),
        }),
    );
    Ok(())
}

pub fn runner(ctx: &Ctx, cmd: RunnerCmd) -> Result<()> {
    let RunnerCmd::Synthetic {
        trial: config,
        val,
        out,
        targets,
    } = cmd;
    let text = std::fs::read_to_string(&config).map_err(|e| Error::io(&config, e))?;
    let trial = TrialConfig::from_config_text(&text)?;
    let targets = targets
        .iter()
        .map(|t| SyntheticObjective::parse_target(t))
        .collect::<Result<Vec<_>>>()?;
    let objective = SyntheticObjective::new(targets)?;
    let gt = load_dataset(&val)?;
    let dets = ets_core::runner::synthetic_trainer(&objective, &trial, &gt)?;
    std::fs::write(&out, detections_to_json(&dets)).map_err(|e| Error::io(&out, e))?;
    let q = objective.quality(&trial.assignment)?;
    ctx.emit(
        format!("trial {}: quality {q:.6}, {} detections\n", trial.trial_id, dets.len()),
        json!({"trial_id": trial.trial_id, "quality": q, "detections": dets.len()}),
    );
    Ok(())
}
