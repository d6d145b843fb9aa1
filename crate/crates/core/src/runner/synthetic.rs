use std::path::Path;
use std::time::Instant;

use rand::Rng;

use super::{collect_detections, prepare_run_dir, RunFailure, TrialInputs, TrialRun, Trainer, DETECTIONS_FILE, LOG_FILE};
use crate::dataset::DetDataset;
use crate::error::{Error, Result};
use crate::eval::{detections_to_json, Detection};
use crate::geom::BBox;
use crate::rng::SeedStream;
use crate::search::{Assignment, TrialConfig};

/// Peak location and width of one objective factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub optimum: f64,
    pub width: f64,
}

/// Known response surface over numeric axes:
/// `q = prod exp(-((v - optimum) / width)^2)`, so `q = 1` only at the optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticObjective {
    pub targets: Vec<(String, Target)>,
    /// Box jitter scale at `q = 0`, as a fraction of box size.
    pub noise: f64,
}

impl SyntheticObjective {
    pub fn new(targets: Vec<(String, Target)>) -> Result<Self> {
        for (name, t) in &targets {
            if !(t.width > 0.0 && t.width.is_finite() && t.optimum.is_finite()) {
                return Err(Error::Argument(format!("target {name}: width must be positive")));
            }
        }
        Ok(Self { targets, noise: 0.5 })
    }

    /// Parse `name=optimum:width`.
    pub fn parse_target(spec: &str) -> Result<(String, Target)> {
        let bad = || Error::Argument(format!("target {spec:?}: expected name=optimum:width"));
        let (name, rest) = spec.split_once('=').ok_or_else(bad)?;
        let (opt, width) = rest.split_once(':').ok_or_else(bad)?;
        let t = Target {
            optimum: opt.trim().parse().map_err(|_| bad())?,
            width: width.trim().parse().map_err(|_| bad())?,
        };
        if name.trim().is_empty() || !(t.width > 0.0) {
            return Err(bad());
        }
        Ok((name.trim().to_string(), t))
    }

    /// Quality in `[0, 1]`. Every targeted axis must be present and numeric.
    pub fn quality(&self, assignment: &Assignment) -> Result<f64> {
        let mut q = 1.0;
        for (name, t) in &self.targets {
            let v = assignment
                .get(name)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| Error::Argument(format!("config has no numeric value for {name}")))?;
            q *= (-((v - t.optimum) / t.width).powi(2)).exp();
        }
        Ok(q)
    }

    /// Detections whose accuracy follows `quality`. Randomness depends only on
    /// `seed` and annotation ids, so trials sharing a seed see the same draws.
    pub fn synthesize(&self, gt: &DetDataset<f64>, quality: f64, seed: u64) -> Vec<Detection<f64>> {
        let q = quality.clamp(0.0, 1.0);
        let m = (1.0 - q) * self.noise;
        let stream = SeedStream::new(seed);
        let index = gt.image_index();
        let mut anns: Vec<_> = gt.annotations.iter().filter(|a| !a.iscrowd).collect();
        anns.sort_by_key(|a| a.id);
        let mut out = Vec::with_capacity(anns.len());
        for a in anns {
            let mut rng = stream.path(&[a.id]).rng();
            let mut u = || rng.random_range(-1.0..=1.0);
            let b = a.bbox;
            let (ux, uy, uw, uh) = (u(), u(), u(), u());
            let w = b.w * (m * uw).exp();
            let h = b.h * (m * uh).exp();
            let x = b.x + m * ux * b.w + (b.w - w) / 2.0;
            let y = b.y + m * uy * b.h + (b.h - h) / 2.0;
            let score = q + (1.0 - q) * rng.random::<f64>();
            out.push(Detection {
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: BBox::new(x, y, w, h),
                score,
            });
            if rng.random::<f64>() < 1.0 - q {
                let im = &gt.images[index[&a.image_id]];
                let (iw, ih) = (im.width as f64, im.height as f64);
                let (fw, fh) = (b.w.min(iw), b.h.min(ih));
                out.push(Detection {
                    image_id: a.image_id,
                    category_id: a.category_id,
                    bbox: BBox::new(rng.random::<f64>() * (iw - fw), rng.random::<f64>() * (ih - fh), fw, fh),
                    score: rng.random::<f64>(),
                });
            }
        }
        out
    }
}

/// Detections the synthetic trainer produces for `trial` on `valset`.
pub fn synthetic_trainer(
    objective: &SyntheticObjective,
    trial: &TrialConfig,
    valset: &DetDataset<f64>,
) -> Result<Vec<Detection<f64>>> {
    let q = objective.quality(&trial.assignment)?;
    Ok(objective.synthesize(valset, q, trial.seed))
}

/// In-process trainer backed by a [`SyntheticObjective`].
#[derive(Debug, Clone)]
pub struct SyntheticTrainer {
    pub objective: SyntheticObjective,
}

impl SyntheticTrainer {
    fn produce(&self, trial: &TrialConfig, inputs: &TrialInputs, run_dir: &Path) -> Result<()> {
        prepare_run_dir(trial, run_dir)?;
        let gt = DetDataset::<f64>::load(&inputs.val_ann)?;
        let dets = synthetic_trainer(&self.objective, trial, &gt)?;
        let log = run_dir.join(LOG_FILE);
        std::fs::write(&log, format!("{}\n{} detections\n", trial.describe(), dets.len()))
            .map_err(|e| Error::io(&log, e))?;
        let out = run_dir.join(DETECTIONS_FILE);
        std::fs::write(&out, detections_to_json(&dets)).map_err(|e| Error::io(&out, e))
    }
}

impl Trainer for SyntheticTrainer {
    fn run(&self, trial: &TrialConfig, inputs: &TrialInputs, run_dir: &Path) -> TrialRun {
        let start = Instant::now();
        let outcome = match self.produce(trial, inputs, run_dir) {
            Ok(()) => collect_detections(&run_dir.join(DETECTIONS_FILE)),
            Err(e) => Err(RunFailure::BadOutput(e.to_string())),
        };
        TrialRun {
            run_dir: run_dir.to_path_buf(),
            outcome,
            wall_time: start.elapsed(),
        }
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        let t: Vec<String> = self
            .objective
            .targets
            .iter()
            .map(|(n, t)| format!("{n}={}:{}", t.optimum, t.width))
            .collect();
        format!("synthetic [{}]", t.join(", "))
    }
}
