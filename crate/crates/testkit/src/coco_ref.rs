//! Reference COCO bbox evaluator, a line-by-line port of the pycocotools
//! `evaluateImg` / `accumulate` / `summarize` path (area range "all", one
//! maxDets setting).

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct RefGt {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub iscrowd: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefDet {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefResult {
    pub cat_ids: Vec<u64>,
    /// `ap[k][t]`, `None` where the category has no non-ignored ground truth.
    pub ap: Vec<Vec<Option<f64>>>,
    pub map: Option<f64>,
}

/// `np.linspace(start, stop, num)`.
pub fn np_linspace(start: f64, stop: f64, num: usize) -> Vec<f64> {
    let div = (num - 1) as f64;
    let step = (stop - start) / div;
    let mut y: Vec<f64> = (0..num).map(|i| i as f64 * step + start).collect();
    y[num - 1] = stop;
    y
}

/// `maskUtils.iou` for boxes.
fn iou(d: &[f64; 4], g: &[f64; 4], crowd: bool) -> f64 {
    let w = (d[0] + d[2]).min(g[0] + g[2]) - d[0].max(g[0]);
    if w <= 0.0 {
        return 0.0;
    }
    let h = (d[1] + d[3]).min(g[1] + g[3]) - d[1].max(g[1]);
    if h <= 0.0 {
        return 0.0;
    }
    let i = w * h;
    let da = d[2] * d[3];
    let u = if crowd { da } else { da + g[2] * g[3] - i };
    i / u
}

/// Stable argsort, like `np.argsort(kind="mergesort")`.
fn argsort_by<F: Fn(usize, usize) -> std::cmp::Ordering>(n: usize, cmp: F) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| cmp(a, b));
    idx
}

struct EvalImg {
    dt_matches: Vec<Vec<u64>>, // [t][d] matched gt id, 0 = none
    dt_scores: Vec<f64>,
    dt_ignore: Vec<Vec<bool>>,
    gt_ignore: Vec<bool>,
}

fn evaluate_img(gt: &[&RefGt], dt: &[(u64, &RefDet)], thrs: &[f64], max_det: usize) -> Option<EvalImg> {
    if gt.is_empty() && dt.is_empty() {
        return None;
    }
    let gt_ignore_raw: Vec<bool> = gt.iter().map(|g| g.iscrowd).collect();
    let gtind = argsort_by(gt.len(), |a, b| gt_ignore_raw[a].cmp(&gt_ignore_raw[b]));
    let gt_s: Vec<&RefGt> = gtind.iter().map(|&i| gt[i]).collect();
    let dtind = argsort_by(dt.len(), |a, b| dt[b].1.score.partial_cmp(&dt[a].1.score).unwrap());
    let dt_s: Vec<(u64, &RefDet)> = dtind.iter().take(max_det).map(|&i| dt[i]).collect();
    let iscrowd: Vec<bool> = gt_s.iter().map(|g| g.iscrowd).collect();
    // computeIoU: dets sorted and truncated, gts in original order, then columns reordered
    let ious: Vec<Vec<f64>> = dt_s
        .iter()
        .map(|(_, d)| gtind.iter().map(|&gi| iou(&d.bbox, &gt[gi].bbox, gt[gi].iscrowd)).collect())
        .collect();
    let gt_ig: Vec<bool> = gt_s.iter().map(|g| g.iscrowd).collect();
    let (t_n, g_n, d_n) = (thrs.len(), gt_s.len(), dt_s.len());
    let mut gtm = vec![vec![0u64; g_n]; t_n];
    let mut dtm = vec![vec![0u64; d_n]; t_n];
    let mut dt_ig = vec![vec![false; d_n]; t_n];
    for (tind, &t) in thrs.iter().enumerate() {
        for (dind, (did, _)) in dt_s.iter().enumerate() {
            let mut best = t.min(1.0 - 1e-10);
            let mut m: isize = -1;
            for gind in 0..g_n {
                if gtm[tind][gind] > 0 && !iscrowd[gind] {
                    continue;
                }
                if m > -1 && !gt_ig[m as usize] && gt_ig[gind] {
                    break;
                }
                if ious[dind][gind] < best {
                    continue;
                }
                best = ious[dind][gind];
                m = gind as isize;
            }
            if m == -1 {
                continue;
            }
            let m = m as usize;
            dt_ig[tind][dind] = gt_ig[m];
            dtm[tind][dind] = gt_s[m].id;
            gtm[tind][m] = *did;
        }
    }
    Some(EvalImg {
        dt_matches: dtm,
        dt_scores: dt_s.iter().map(|(_, d)| d.score).collect(),
        dt_ignore: dt_ig,
        gt_ignore: gt_ig,
    })
}

/// Evaluate with the given IoU thresholds and per-image maxDets.
/// Ground-truth ids must be nonzero (pycocotools treats id 0 as "unmatched").
pub fn evaluate(
    img_ids: &[u64],
    cat_ids: &[u64],
    gts: &[RefGt],
    dets: &[RefDet],
    thrs: &[f64],
    max_det: usize,
) -> RefResult {
    assert!(gts.iter().all(|g| g.id != 0), "reference needs nonzero gt ids");
    let mut img_ids = img_ids.to_vec();
    img_ids.sort_unstable();
    img_ids.dedup();
    let mut cat_ids = cat_ids.to_vec();
    cat_ids.sort_unstable();
    cat_ids.dedup();
    // loadRes numbers detections from 1
    let dets: Vec<(u64, &RefDet)> = dets.iter().enumerate().map(|(i, d)| (i as u64 + 1, d)).collect();
    let mut gt_cells: BTreeMap<(u64, u64), Vec<&RefGt>> = BTreeMap::new();
    for g in gts {
        gt_cells.entry((g.image_id, g.category_id)).or_default().push(g);
    }
    let mut dt_cells: BTreeMap<(u64, u64), Vec<(u64, &RefDet)>> = BTreeMap::new();
    for &(id, d) in &dets {
        dt_cells.entry((d.image_id, d.category_id)).or_default().push((id, d));
    }
    let rec_thrs = np_linspace(0.0, 1.0, 101);
    let mut ap = Vec::new();
    for &c in &cat_ids {
        let e: Vec<EvalImg> = img_ids
            .iter()
            .filter_map(|&i| {
                let g = gt_cells.get(&(i, c)).map(Vec::as_slice).unwrap_or(&[]);
                let d = dt_cells.get(&(i, c)).map(Vec::as_slice).unwrap_or(&[]);
                evaluate_img(g, d, thrs, max_det)
            })
            .collect();
        let mut scores = Vec::new();
        let mut dtm_cat: Vec<Vec<u64>> = vec![Vec::new(); thrs.len()];
        let mut dtig_cat: Vec<Vec<bool>> = vec![Vec::new(); thrs.len()];
        let mut npig = 0usize;
        for ev in &e {
            let n = ev.dt_scores.len().min(max_det);
            scores.extend_from_slice(&ev.dt_scores[..n]);
            for t in 0..thrs.len() {
                dtm_cat[t].extend_from_slice(&ev.dt_matches[t][..n]);
                dtig_cat[t].extend_from_slice(&ev.dt_ignore[t][..n]);
            }
            npig += ev.gt_ignore.iter().filter(|&&g| !g).count();
        }
        if npig == 0 {
            ap.push(vec![None; thrs.len()]);
            continue;
        }
        let inds = argsort_by(scores.len(), |a, b| scores[b].partial_cmp(&scores[a]).unwrap());
        let mut row = Vec::new();
        for t in 0..thrs.len() {
            let (mut tp, mut fp) = (0.0f64, 0.0f64);
            let mut rc = Vec::new();
            let mut pr = Vec::new();
            for &i in &inds {
                let matched = dtm_cat[t][i] != 0;
                let ig = dtig_cat[t][i];
                if matched && !ig {
                    tp += 1.0;
                }
                if !matched && !ig {
                    fp += 1.0;
                }
                rc.push(tp / npig as f64);
                pr.push(tp / (fp + tp + f64::EPSILON));
            }
            for i in (1..pr.len()).rev() {
                if pr[i] > pr[i - 1] {
                    pr[i - 1] = pr[i];
                }
            }
            let mut q = vec![0.0; rec_thrs.len()];
            for (ri, &r) in rec_thrs.iter().enumerate() {
                let pi = rc.partition_point(|&x| x < r);
                if pi < pr.len() {
                    q[ri] = pr[pi];
                } else {
                    break;
                }
            }
            row.push(Some(q.iter().sum::<f64>() / q.len() as f64));
        }
        ap.push(row);
    }
    let defined: Vec<f64> = ap.iter().flatten().flatten().copied().collect();
    let map = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    RefResult { cat_ids, ap, map }
}
