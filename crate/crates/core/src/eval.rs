//! COCO-protocol box evaluation.
//!
//! Matching and accumulation follow the reference COCO evaluator with the
//! area range fixed to "all": per image and category, detections are ranked by
//! score and greedily matched to the best unmatched ground truth at or above
//! the IoU threshold; crowd regions absorb any number of detections, which are
//! then ignored. Detections are pooled per category across images, ranked
//! globally, and the precision envelope is sampled at 101 recall points.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DetDataset;
use crate::error::{Error, Result};
use crate::geom::{crowd_overlap, iou, BBox};
use crate::scalar::{linspace, Scalar};

/// Upper cap applied to IoU thresholds so a threshold of 1.0 stays reachable.
const MAX_IOU_THRESHOLD: f64 = 1.0 - 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Detection<T> {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox<T>,
    pub score: T,
}

/// Parse a COCO results file (`[{image_id, category_id, bbox, score}, ...]`),
/// rejecting degenerate boxes and scores outside `[0, 1]`.
pub fn parse_detections<T: Scalar>(raw: &[u8]) -> Result<Vec<Detection<T>>> {
    let dets: Vec<Detection<T>> = serde_json::from_slice(raw).map_err(|e| Error::json(raw, e))?;
    for (i, d) in dets.iter().enumerate() {
        if !d.bbox.is_valid() {
            return Err(Error::Validation(format!(
                "detection #{i}: box {:?} has non-positive size",
                d.bbox.to_array()
            )));
        }
        if !(d.score >= T::zero() && d.score <= T::one()) {
            return Err(Error::Validation(format!(
                "detection #{i}: score {} outside [0, 1]",
                d.score
            )));
        }
    }
    Ok(dets)
}

pub fn load_detections<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<Detection<T>>> {
    let path = path.as_ref();
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&raw)
}

pub fn detections_to_json<T: Scalar>(dets: &[Detection<T>]) -> Vec<u8> {
    let mut out = serde_json::to_vec(dets).expect("detections serialize");
    out.push(b'\n');
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchFlag {
    Tp,
    Fp,
    /// Matched a crowd region: neither true nor false positive.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox<T> {
    pub bbox: BBox<T>,
    pub iscrowd: bool,
}

/// Indices of `scores` ordered by descending score; ties keep input order.
fn rank_by_score<T: Scalar>(scores: impl Iterator<Item = T>) -> Vec<usize> {
    let scores: Vec<T> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

/// Greedy matching of one image's detections of one category against its
/// ground truth. Returns one flag per detection, in input order.
pub fn match_detections<T: Scalar>(
    dets: &[Detection<T>],
    gts: &[GtBox<T>],
    iou_threshold: f64,
) -> Vec<MatchFlag> {
    let order = rank_by_score(dets.iter().map(|d| d.score));
    let gt_order = crowd_last(gts);
    let crowd: Vec<bool> = gt_order.iter().map(|&g| gts[g].iscrowd).collect();
    let ious: Vec<Vec<T>> = order
        .iter()
        .map(|&d| {
            gt_order
                .iter()
                .map(|&g| overlap_with(&dets[d].bbox, &gts[g]))
                .collect()
        })
        .collect();
    let ranked = greedy_match(&ious, &crowd, T::lit(iou_threshold.min(MAX_IOU_THRESHOLD)));
    let mut flags = vec![MatchFlag::Fp; dets.len()];
    for (rank, &d) in order.iter().enumerate() {
        flags[d] = ranked[rank];
    }
    flags
}

/// Ground-truth indices with non-crowd boxes first, stable.
fn crowd_last<T>(gts: &[GtBox<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..gts.len()).collect();
    order.sort_by_key(|&g| gts[g].iscrowd);
    order
}

fn overlap_with<T: Scalar>(det: &BBox<T>, gt: &GtBox<T>) -> T {
    if gt.iscrowd {
        crowd_overlap(det, &gt.bbox)
    } else {
        iou(det, &gt.bbox)
    }
}

/// Core matcher. `ious[d][g]` with detections ranked by score and ground truth
/// ordered non-crowd first.
fn greedy_match<T: Scalar>(ious: &[Vec<T>], crowd: &[bool], threshold: T) -> Vec<MatchFlag> {
    let mut taken = vec![false; crowd.len()];
    ious.iter()
        .map(|row| {
            let mut best = threshold;
            let mut hit: Option<usize> = None;
            for (g, &v) in row.iter().enumerate() {
                if taken[g] && !crowd[g] {
                    continue;
                }
                // a real match is never traded for a crowd region
                if matches!(hit, Some(m) if !crowd[m]) && crowd[g] {
                    break;
                }
                if v < best {
                    continue;
                }
                best = v;
                hit = Some(g);
            }
            match hit {
                Some(g) => {
                    taken[g] = true;
                    if crowd[g] {
                        MatchFlag::Ignored
                    } else {
                        MatchFlag::Tp
                    }
                }
                None => MatchFlag::Fp,
            }
        })
        .collect()
}

/// Number of recall sampling points.
pub const RECALL_POINTS: usize = 101;

/// Interpolated average precision of score-ordered match flags.
///
/// The precision curve is replaced by its running maximum from the right, then
/// read at recall 0.00, 0.01, ..., 1.00 (the first rank reaching each recall;
/// zero when never reached) and averaged. `None` when there is no ground truth.
pub fn average_precision<T: Scalar>(flags: &[MatchFlag], n_gt: usize) -> Option<T> {
    if n_gt == 0 {
        return None;
    }
    let n = T::lit(n_gt as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    for f in flags {
        match f {
            MatchFlag::Tp => tp += 1,
            MatchFlag::Fp => fp += 1,
            MatchFlag::Ignored => continue,
        }
        recall.push(T::lit(tp as f64) / n);
        precision.push(T::lit(tp as f64) / T::lit((tp + fp) as f64));
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = T::zero();
    let mut idx = 0;
    for r in linspace(0.0, 1.0, RECALL_POINTS) {
        let r = T::lit(r);
        while idx < recall.len() && recall[idx] < r {
            idx += 1;
        }
        match precision.get(idx) {
            Some(&p) => sum = sum + p,
            None => break,
        }
    }
    Some(sum / T::lit(RECALL_POINTS as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub iou_thresholds: Vec<f64>,
    /// Detections kept per image and category, best scores first.
    pub max_dets: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            iou_thresholds: default_iou_thresholds(),
            max_dets: 100,
        }
    }
}

/// 0.50, 0.55, ..., 0.95.
pub fn default_iou_thresholds() -> Vec<f64> {
    linspace(0.5, 0.95, 10)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct CategoryAp<T> {
    pub category_id: u64,
    pub n_gt: usize,
    /// One entry per IoU threshold; `None` when the category has no ground truth.
    pub ap: Vec<Option<T>>,
}

impl<T: Scalar> CategoryAp<T> {
    pub fn mean(&self) -> Option<T> {
        mean(self.ap.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult<T> {
    pub iou_thresholds: Vec<f64>,
    pub categories: Vec<CategoryAp<T>>,
    /// Mean AP per threshold over categories with ground truth.
    pub per_threshold_map: Vec<Option<T>>,
    /// Mean over every defined (category, threshold) cell.
    pub map: Option<T>,
}

fn mean<T: Scalar>(values: impl Iterator<Item = Option<T>>) -> Option<T> {
    let (sum, n) = values
        .flatten()
        .fold((T::zero(), 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / T::lit(n as f64))
}

/// Machine-readable summary of an [`EvalResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub map: Option<f64>,
    pub map_50: Option<f64>,
    pub iou_thresholds: Vec<f64>,
    pub per_threshold_map: Vec<Option<f64>>,
    pub per_category_ap: BTreeMap<String, Option<f64>>,
}

impl<T: Scalar> EvalResult<T> {
    /// AP for one cell.
    pub fn ap(&self, category_id: u64, threshold_index: usize) -> Option<T> {
        self.categories
            .iter()
            .find(|c| c.category_id == category_id)
            .and_then(|c| c.ap.get(threshold_index).copied().flatten())
    }

    /// mAP at a single IoU threshold, if that threshold was evaluated.
    pub fn map_at(&self, threshold: f64) -> Option<T> {
        self.iou_thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-9)
            .and_then(|i| self.per_threshold_map[i])
    }

    pub fn summary(&self) -> EvalSummary {
        let f = |v: Option<T>| v.map(Scalar::to_f64_lossy);
        EvalSummary {
            map: f(self.map),
            map_50: f(self.map_at(0.5)),
            iou_thresholds: self.iou_thresholds.clone(),
            per_threshold_map: self.per_threshold_map.iter().map(|&v| f(v)).collect(),
            per_category_ap: self
                .categories
                .iter()
                .map(|c| (c.category_id.to_string(), f(c.mean())))
                .collect(),
        }
    }

    pub fn report_text(&self) -> String {
        let fmt = |v: Option<T>| match v {
            Some(v) => format!("{:.4}", v.to_f64_lossy()),
            None => "n/a".to_string(),
        };
        let mut s = String::new();
        let _ = writeln!(s, "mAP@[{}]     {}", threshold_label(&self.iou_thresholds), fmt(self.map));
        if let Some(v) = self.map_at(0.5) {
            let _ = writeln!(s, "mAP@0.50        {}", fmt(Some(v)));
        }
        if self.map_at(0.75).is_some() {
            let _ = writeln!(s, "mAP@0.75        {}", fmt(self.map_at(0.75)));
        }
        let _ = writeln!(s, "category      n_gt  AP");
        for c in &self.categories {
            let _ = writeln!(s, "{:<12} {:>5}  {}", c.category_id, c.n_gt, fmt(c.mean()));
        }
        s
    }
}

fn threshold_label(t: &[f64]) -> String {
    match t {
        [] => String::new(),
        [one] => format!("{one:.2}"),
        [first, .., last] => format!("{first:.2}:{last:.2}"),
    }
}

/// Evaluate detections against a labeled dataset.
pub fn evaluate<T: Scalar>(
    dets: &[Detection<T>],
    gt: &DetDataset<T>,
    params: &EvalParams,
) -> Result<EvalResult<T>> {
    if params.iou_thresholds.is_empty() {
        return Err(Error::Argument("at least one IoU threshold is required".into()));
    }
    if let Some(t) = params.iou_thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Argument(format!("IoU threshold {t} outside [0, 1]")));
    }
    check_ids(dets, gt)?;

    let mut image_ids: Vec<u64> = gt.images.iter().map(|im| im.id).collect();
    image_ids.sort_unstable();
    let mut category_ids = gt.category_ids();
    category_ids.sort_unstable();

    let mut gt_cells: HashMap<(u64, u64), Vec<GtBox<T>>> = HashMap::new();
    for a in &gt.annotations {
        gt_cells
            .entry((a.category_id, a.image_id))
            .or_default()
            .push(GtBox {
                bbox: a.bbox,
                iscrowd: a.iscrowd,
            });
    }
    let mut det_cells: HashMap<(u64, u64), Vec<&Detection<T>>> = HashMap::new();
    for d in dets {
        det_cells.entry((d.category_id, d.image_id)).or_default().push(d);
    }

    let thresholds: Vec<T> = params
        .iou_thresholds
        .iter()
        .map(|&t| T::lit(t.min(MAX_IOU_THRESHOLD)))
        .collect();
    let no_gt: Vec<GtBox<T>> = Vec::new();
    let mut categories = Vec::with_capacity(category_ids.len());
    for &cat in &category_ids {
        let mut n_gt = 0;
        // pooled (score, flag per threshold), images in ascending id order
        let mut scores: Vec<T> = Vec::new();
        let mut flags: Vec<Vec<MatchFlag>> = vec![Vec::new(); thresholds.len()];
        for &img in &image_ids {
            let gts = gt_cells.get(&(cat, img)).unwrap_or(&no_gt);
            n_gt += gts.iter().filter(|g| !g.iscrowd).count();
            let Some(cell) = det_cells.get(&(cat, img)) else {
                continue;
            };
            let mut order = rank_by_score(cell.iter().map(|d| d.score));
            order.truncate(params.max_dets);
            let gt_order = crowd_last(gts);
            let crowd: Vec<bool> = gt_order.iter().map(|&g| gts[g].iscrowd).collect();
            let ious: Vec<Vec<T>> = order
                .iter()
                .map(|&d| {
                    gt_order
                        .iter()
                        .map(|&g| overlap_with(&cell[d].bbox, &gts[g]))
                        .collect()
                })
                .collect();
            scores.extend(order.iter().map(|&d| cell[d].score));
            for (t, &thr) in thresholds.iter().enumerate() {
                flags[t].extend(greedy_match(&ious, &crowd, thr));
            }
        }
        let ranked = rank_by_score(scores.iter().copied());
        let ap = flags
            .iter()
            .map(|f| {
                let ordered: Vec<MatchFlag> = ranked.iter().map(|&i| f[i]).collect();
                average_precision(&ordered, n_gt)
            })
            .collect();
        categories.push(CategoryAp {
            category_id: cat,
            n_gt,
            ap,
        });
    }

    let per_threshold_map = (0..thresholds.len())
        .map(|t| mean(categories.iter().map(|c| c.ap[t])))
        .collect();
    let map = mean(categories.iter().flat_map(|c| c.ap.iter().copied()));
    Ok(EvalResult {
        iou_thresholds: params.iou_thresholds.clone(),
        categories,
        per_threshold_map,
        map,
    })
}

fn check_ids<T: Scalar>(dets: &[Detection<T>], gt: &DetDataset<T>) -> Result<()> {
    let images: HashSet<u64> = gt.images.iter().map(|im| im.id).collect();
    let cats: HashSet<u64> = gt.categories.iter().map(|c| c.id).collect();
    let offenders: Vec<String> = dets
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let mut why = Vec::new();
            if !images.contains(&d.image_id) {
                why.push(format!("image_id {}", d.image_id));
            }
            if !cats.contains(&d.category_id) {
                why.push(format!("category_id {}", d.category_id));
            }
            (!why.is_empty()).then(|| format!("#{i} ({})", why.join(", ")))
        })
        .collect();
    if offenders.is_empty() {
        return Ok(());
    }
    let shown = offenders.len().min(10);
    Err(Error::Validation(format!(
        "{} detections reference unknown ids: {}{}",
        offenders.len(),
        offenders[..shown].join("; "),
        if offenders.len() > shown { "; ..." } else { "" }
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use MatchFlag::*;

    fn det(x: f64, y: f64, w: f64, h: f64, score: f64) -> Detection<f64> {
        Detection {
            image_id: 1,
            category_id: 1,
            bbox: BBox::new(x, y, w, h),
            score,
        }
    }

    fn gt(x: f64, y: f64, w: f64, h: f64) -> GtBox<f64> {
        GtBox {
            bbox: BBox::new(x, y, w, h),
            iscrowd: false,
        }
    }

    #[test]
    fn single_exact_match() {
        let flags = match_detections(&[det(0.0, 0.0, 10.0, 10.0, 0.9)], &[gt(0.0, 0.0, 10.0, 10.0)], 0.5);
        assert_eq!(flags, vec![Tp]);
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let d = [det(0.0, 0.0, 10.0, 10.0, 0.8), det(0.0, 0.0, 10.0, 10.0, 0.9)];
        // input order differs from score order; flags come back in input order
        assert_eq!(match_detections(&d, &[gt(0.0, 0.0, 10.0, 10.0)], 0.5), vec![Fp, Tp]);
    }

    #[test]
    fn equal_scores_keep_input_order() {
        let d = [det(0.0, 0.0, 10.0, 10.0, 0.5), det(0.0, 0.0, 10.0, 10.0, 0.5)];
        assert_eq!(match_detections(&d, &[gt(0.0, 0.0, 10.0, 10.0)], 0.5), vec![Tp, Fp]);
    }

    #[test]
    fn crowd_absorbs_many_detections() {
        let crowd = GtBox {
            bbox: BBox::new(0.0, 0.0, 100.0, 100.0),
            iscrowd: true,
        };
        let d = [det(10.0, 10.0, 5.0, 5.0, 0.9), det(40.0, 40.0, 5.0, 5.0, 0.8)];
        assert_eq!(match_detections(&d, &[crowd], 0.5), vec![Ignored, Ignored]);
        // a real ground truth is preferred over the crowd region
        let d = [det(0.0, 0.0, 10.0, 10.0, 0.9)];
        assert_eq!(match_detections(&d, &[crowd, gt(0.0, 0.0, 10.0, 10.0)], 0.5), vec![Tp]);
    }

    #[test]
    fn ap_perfect_and_empty() {
        assert_eq!(average_precision::<f64>(&[Tp, Tp, Tp], 3), Some(1.0));
        assert_eq!(average_precision::<f64>(&[Fp, Fp], 3), Some(0.0));
        assert_eq!(average_precision::<f64>(&[], 3), Some(0.0));
        assert_eq!(average_precision::<f64>(&[Tp], 0), None);
    }

    #[test]
    fn ap_hand_case() {
        let ap: f64 = average_precision(&[Tp, Fp, Tp], 2).unwrap();
        let expected = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((ap - expected).abs() < 1e-12, "{ap} vs {expected}");
    }

    #[test]
    fn ap_ignores_crowd_matches() {
        let a: f64 = average_precision(&[Ignored, Tp, Ignored, Fp, Tp], 2).unwrap();
        let b: f64 = average_precision(&[Tp, Fp, Tp], 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ap_partial_recall() {
        // one of two objects found at rank one: precision 1 up to recall 0.5
        let ap: f64 = average_precision(&[Tp], 2).unwrap();
        assert!((ap - 51.0 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn parse_detections_schema_gate() {
        let ok = br#"[{"image_id":1,"category_id":2,"bbox":[0,0,3,4],"score":0.5}]"#;
        assert_eq!(parse_detections::<f64>(ok).unwrap().len(), 1);
        assert!(parse_detections::<f64>(b"[]").unwrap().is_empty());
        let bad_score = br#"[{"image_id":1,"category_id":2,"bbox":[0,0,3,4],"score":1.5}]"#;
        assert!(parse_detections::<f64>(bad_score).is_err());
        let bad_box = br#"[{"image_id":1,"category_id":2,"bbox":[0,0,0,4],"score":0.5}]"#;
        assert!(parse_detections::<f64>(bad_box).is_err());
        assert!(matches!(parse_detections::<f64>(b"{"), Err(Error::Parse { .. })));
    }
}
