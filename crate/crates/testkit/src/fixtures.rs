//! Deterministic fixture generators. Every fixture is a pure function of its
//! seed so tests can regenerate it instead of storing files.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::coco_ref::{RefDet, RefGt};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone)]
pub struct EvalCase {
    /// (id, width, height)
    pub images: Vec<(u64, u32, u32)>,
    pub cat_ids: Vec<u64>,
    pub gts: Vec<RefGt>,
    pub dets: Vec<RefDet>,
    pub max_det: usize,
}

impl EvalCase {
    pub fn gt_json(&self) -> Value {
        coco_json(&self.images, &self.cat_ids, &self.gts)
    }

    pub fn dets_json(&self) -> Value {
        Value::Array(
            self.dets
                .iter()
                .map(|d| json!({"image_id": d.image_id, "category_id": d.category_id, "bbox": d.bbox, "score": d.score}))
                .collect(),
        )
    }
}

pub fn coco_json(images: &[(u64, u32, u32)], cat_ids: &[u64], gts: &[RefGt]) -> Value {
    json!({
        "images": images.iter().map(|&(id, w, h)| json!({"id": id, "file_name": format!("img_{id}.png"), "width": w, "height": h})).collect::<Vec<_>>(),
        "annotations": gts.iter().map(|g| json!({"id": g.id, "image_id": g.image_id, "category_id": g.category_id, "bbox": g.bbox, "iscrowd": g.iscrowd as u8})).collect::<Vec<_>>(),
        "categories": cat_ids.iter().map(|&c| json!({"id": c, "name": format!("cat{c}")})).collect::<Vec<_>>(),
    })
}

fn clip_box(b: [f64; 4], w: f64, h: f64) -> Option<[f64; 4]> {
    let x0 = b[0].max(0.0);
    let y0 = b[1].max(0.0);
    let x1 = (b[0] + b[2]).min(w);
    let y1 = (b[1] + b[3]).min(h);
    (x1 - x0 > 0.0 && y1 - y0 > 0.0).then_some([x0, y0, x1 - x0, y1 - y0])
}

/// Small random evaluation instance: at most 10 images, 20 ground-truth
/// boxes, 20 detections and 3 categories. Integer-grid boxes and quantized
/// scores are mixed in so IoU threshold ties and score ties occur.
pub fn random_eval_case(seed: u64) -> EvalCase {
    let mut r = rng(seed);
    let n_img = r.random_range(1..=10);
    let mut pool: Vec<u64> = (1..=40).collect();
    pool.shuffle(&mut r);
    let images: Vec<(u64, u32, u32)> = pool[..n_img]
        .iter()
        .map(|&id| (id, r.random_range(40..=96), r.random_range(40..=96)))
        .collect();
    let n_cat = r.random_range(1..=3);
    let mut cpool: Vec<u64> = (1..=6).collect();
    cpool.shuffle(&mut r);
    let cat_ids = cpool[..n_cat].to_vec();
    let integer = r.random_bool(0.5);
    let tie_scores = r.random_bool(0.5);
    let crowd_rate = if r.random_bool(0.3) { 0.15 } else { 0.0 };
    let coord = |r: &mut ChaCha8Rng, lo: f64, hi: f64| {
        let v = r.random_range(lo..hi);
        if integer { v.round() } else { v }
    };

    let n_gt = r.random_range(0..=20);
    let mut gts = Vec::new();
    let mut id = r.random_range(1..=5u64);
    for _ in 0..n_gt {
        let &(image_id, w, h) = &images[r.random_range(0..images.len())];
        let (w, h) = (w as f64, h as f64);
        let bw = coord(&mut r, 4.0, w / 2.0);
        let bh = coord(&mut r, 4.0, h / 2.0);
        let x = coord(&mut r, 0.0, w - bw);
        let y = coord(&mut r, 0.0, h - bh);
        let Some(bbox) = clip_box([x, y, bw, bh], w, h) else { continue };
        gts.push(RefGt {
            id,
            image_id,
            category_id: cat_ids[r.random_range(0..cat_ids.len())],
            bbox,
            iscrowd: r.random_bool(crowd_rate),
        });
        id += r.random_range(1..=3);
    }

    let score = |r: &mut ChaCha8Rng| {
        if tie_scores {
            r.random_range(0..=10) as f64 / 10.0
        } else {
            r.random::<f64>()
        }
    };
    let mut dets = Vec::new();
    for g in &gts {
        if dets.len() >= 20 {
            break;
        }
        let copies = match r.random_range(0..10) {
            0..=1 => 0,
            2..=7 => 1,
            _ => 2,
        };
        for _ in 0..copies {
            let [x, y, w, h] = g.bbox;
            let j = |r: &mut ChaCha8Rng, s: f64| coord(r, -s, s);
            let bw = (w + j(&mut r, w * 0.3)).max(1.0);
            let bh = (h + j(&mut r, h * 0.3)).max(1.0);
            let cat = if r.random_bool(0.1) {
                cat_ids[r.random_range(0..cat_ids.len())]
            } else {
                g.category_id
            };
            dets.push(RefDet {
                image_id: g.image_id,
                category_id: cat,
                bbox: [x + j(&mut r, w * 0.3), y + j(&mut r, h * 0.3), bw, bh],
                score: score(&mut r),
            });
        }
    }
    let extra = r.random_range(0..=6);
    for _ in 0..extra {
        let &(image_id, w, h) = &images[r.random_range(0..images.len())];
        let (w, h) = (w as f64, h as f64);
        let bw = coord(&mut r, 2.0, w / 2.0).max(1.0);
        let bh = coord(&mut r, 2.0, h / 2.0).max(1.0);
        dets.push(RefDet {
            image_id,
            category_id: cat_ids[r.random_range(0..cat_ids.len())],
            bbox: [coord(&mut r, 0.0, w - bw), coord(&mut r, 0.0, h - bh), bw, bh],
            score: score(&mut r),
        });
    }
    dets.truncate(20);
    dets.shuffle(&mut r);
    let max_det = if r.random_bool(0.15) { r.random_range(1..=3) } else { 100 };
    EvalCase {
        images,
        cat_ids,
        gts,
        dets,
        max_det,
    }
}

/// Five categories with 23, 17, 11, 7 and 3 instances, one instance per
/// image, plus four images without annotations.
pub fn five_category_fixture() -> Value {
    let counts = [23usize, 17, 11, 7, 3];
    let mut images = Vec::new();
    let mut gts = Vec::new();
    let mut next = 1u64;
    for (c, &n) in counts.iter().enumerate() {
        for i in 0..n {
            images.push((next, 64, 48));
            gts.push(RefGt {
                id: 1000 + next,
                image_id: next,
                category_id: c as u64 + 1,
                bbox: [(i % 5) as f64 * 8.0, 4.0, 20.0, 16.0],
                iscrowd: false,
            });
            next += 1;
        }
    }
    for _ in 0..4 {
        images.push((next, 64, 48));
        next += 1;
    }
    coco_json(&images, &[1, 2, 3, 4, 5], &gts)
}

/// Dataset of `n_images` images with 1..=4 boxes each over `n_cats`
/// categories; a few crowd regions when `crowd` is set.
pub fn random_dataset(seed: u64, n_images: usize, n_cats: u64, crowd: bool) -> Value {
    let mut r = rng(seed);
    let mut images = Vec::new();
    let mut gts = Vec::new();
    let mut ann = 1u64;
    for i in 0..n_images {
        let (w, h) = (r.random_range(64..=160u32), r.random_range(64..=160u32));
        let id = 10 + i as u64 * 3;
        images.push((id, w, h));
        for _ in 0..r.random_range(1..=4) {
            let bw = r.random_range(8.0..w as f64 / 2.0);
            let bh = r.random_range(8.0..h as f64 / 2.0);
            gts.push(RefGt {
                id: ann,
                image_id: id,
                category_id: r.random_range(1..=n_cats),
                bbox: [
                    r.random_range(0.0..w as f64 - bw),
                    r.random_range(0.0..h as f64 - bh),
                    bw,
                    bh,
                ],
                iscrowd: crowd && r.random_bool(0.05),
            });
            ann += 1;
        }
    }
    let cats: Vec<u64> = (1..=n_cats).collect();
    coco_json(&images, &cats, &gts)
}

/// The standard fixture for the synthetic trainer: 40 images, 5 categories.
pub fn standard_fixture() -> Value {
    random_dataset(20_251, 40, 5, false)
}

/// Grid file text for a `lr` × `aug_p` grid.
pub fn grid_toml(lrs: &[f64], ps: &[f64]) -> String {
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
    format!(
        "[[axis]]\nname = \"lr\"\nvalues = [{}]\n\n[[axis]]\nname = \"aug_p\"\nvalues = [{}]\n",
        list(lrs),
        list(ps)
    )
}

/// 3 x 4 grid whose unique synthetic maximizer is `lr = 2e-4, aug_p = 0.6`
/// under the targets from [`grid_targets`].
pub const GRID_LRS: [f64; 3] = [1e-4, 2e-4, 4e-4];
pub const GRID_PS: [f64; 4] = [0.3, 0.45, 0.6, 0.75];
pub const GRID_BEST: (f64, f64) = (2e-4, 0.6);

pub fn grid_targets() -> Vec<String> {
    vec!["lr=0.0002:0.0002".into(), "aug_p=0.6:0.3".into()]
}
