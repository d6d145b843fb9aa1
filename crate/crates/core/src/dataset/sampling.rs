use std::collections::{BTreeMap, HashSet};

use log::warn;
use rand::seq::SliceRandom;

use super::{Annotation, CoarseLabelMap, DetDataset};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::scalar::Scalar;

const PPB: u128 = 1_000_000_000;

/// K-shot training subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<T> {
    pub dataset: DetDataset<T>,
    pub k: usize,
    pub seed: u64,
}

/// Draw `k` instances per category uniformly without replacement.
///
/// The unit is the annotation instance; an image enters the episode when at
/// least one of its annotations is selected, and only selected annotations are
/// kept. Crowd regions are never selected. For a fixed seed the selection for a
/// smaller `k` is a prefix of the selection for a larger one.
pub fn sample_kshot<T: Scalar>(ds: &DetDataset<T>, k: usize, seed: u64) -> Result<Episode<T>> {
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if ds.images.is_empty() || ds.annotations.is_empty() {
        return Err(Error::Argument("cannot sample from an empty dataset".into()));
    }
    let by_category = candidates_by_category(ds);
    let stream = SeedStream::new(seed);
    let mut selected = HashSet::new();
    for cat in &ds.categories {
        let Some(pool) = by_category.get(&cat.id) else {
            warn!("category {} ({}) has no instances, skipped", cat.id, cat.name);
            continue;
        };
        let mut pool = pool.clone();
        pool.shuffle(&mut stream.child(cat.id).rng());
        selected.extend(pool.into_iter().take(k));
    }
    let annotations: Vec<Annotation<T>> = ds
        .annotations
        .iter()
        .enumerate()
        .filter(|(i, _)| selected.contains(i))
        .map(|(_, a)| a.clone())
        .collect();
    let image_ids: HashSet<u64> = annotations.iter().map(|a| a.image_id).collect();
    Ok(Episode {
        dataset: DetDataset {
            images: ds
                .images
                .iter()
                .filter(|im| image_ids.contains(&im.id))
                .cloned()
                .collect(),
            annotations,
            categories: ds.categories.clone(),
            split_tag: "train".into(),
        },
        k,
        seed,
    })
}

/// Non-crowd annotation indices per category, in dataset order.
fn candidates_by_category<T: Scalar>(ds: &DetDataset<T>) -> BTreeMap<u64, Vec<usize>> {
    let mut out: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, a) in ds.annotations.iter().enumerate().filter(|(_, a)| !a.iscrowd) {
        out.entry(a.category_id).or_default().push(i);
    }
    out
}

/// Output of [`build_validation_set`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSplit<T> {
    /// Sampled images with coarse-relabeled annotations, tagged `val`.
    pub val: DetDataset<T>,
    /// Images not drawn into `val`, fine labels kept, tagged `test`. Only
    /// produced in disjoint mode.
    pub remainder: Option<DetDataset<T>>,
    /// Number of instances drawn per fine category.
    pub selected: BTreeMap<u64, usize>,
    /// Categories whose quota rounded to zero and got one instance anyway.
    pub forced: Vec<u64>,
}

/// Per-category quotas: floor of `rate * n_c`, with the remaining
/// `round(rate * N) - sum(floor)` slots going to the largest fractional parts
/// (ties by ascending category id). Rates are quantized to 1e-9 so the
/// arithmetic is exact.
pub(crate) fn stratified_quotas(counts: &BTreeMap<u64, usize>, rate: f64) -> BTreeMap<u64, usize> {
    let ppb = (rate * PPB as f64).round() as u128;
    let total_n: u128 = counts.values().map(|&n| n as u128).sum();
    let total = (total_n * ppb + PPB / 2) / PPB;
    let mut quotas = BTreeMap::new();
    let mut remainders = Vec::new();
    let mut assigned = 0u128;
    for (&cat, &n) in counts {
        let num = n as u128 * ppb;
        quotas.insert(cat, (num / PPB) as usize);
        assigned += num / PPB;
        if !num.is_multiple_of(PPB) {
            remainders.push((num % PPB, cat));
        }
    }
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let leftover = total.saturating_sub(assigned) as usize;
    for &(_, cat) in remainders.iter().take(leftover) {
        *quotas.get_mut(&cat).unwrap() += 1;
    }
    quotas
}

fn round_share(n: usize, rate: f64) -> usize {
    let ppb = (rate * PPB as f64).round() as u128;
    ((n as u128 * ppb + PPB / 2) / PPB) as usize
}

/// Sample a validation set from a labeled test set, stratified by category,
/// and relabel it with coarse categories.
///
/// Instances are drawn per category; every annotation on a drawn image is kept
/// so images stay fully labeled. Images without any instance form their own
/// stratum sampled at the same rate. In disjoint mode the complement is
/// returned as well.
pub fn build_validation_set<T: Scalar>(
    test: &DetDataset<T>,
    rate: f64,
    coarse: &CoarseLabelMap,
    seed: u64,
    disjoint: bool,
) -> Result<ValidationSplit<T>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Argument(format!(
            "sampling rate must lie in (0, 1], got {rate}"
        )));
    }
    coarse.check_total(&test.categories)?;

    let pools = candidates_by_category(test);
    let counts: BTreeMap<u64, usize> = pools.iter().map(|(&c, p)| (c, p.len())).collect();
    let mut quotas = stratified_quotas(&counts, rate);
    let mut forced = Vec::new();
    for (&cat, q) in quotas.iter_mut() {
        if *q == 0 {
            warn!("rate {rate} leaves category {cat} empty; keeping one instance");
            *q = 1;
            forced.push(cat);
        }
    }

    let stream = SeedStream::new(seed);
    let mut keep_images = HashSet::new();
    let mut selected = BTreeMap::new();
    for (&cat, &quota) in &quotas {
        let mut pool = pools[&cat].clone();
        pool.shuffle(&mut stream.path(&[1, cat]).rng());
        pool.truncate(quota);
        selected.insert(cat, pool.len());
        keep_images.extend(pool.iter().map(|&i| test.annotations[i].image_id));
    }

    let with_instances: HashSet<u64> = test
        .annotations
        .iter()
        .filter(|a| !a.iscrowd)
        .map(|a| a.image_id)
        .collect();
    let mut background: Vec<u64> = test
        .images
        .iter()
        .map(|im| im.id)
        .filter(|id| !with_instances.contains(id))
        .collect();
    let bg_quota = round_share(background.len(), rate);
    background.shuffle(&mut stream.child(2).rng());
    keep_images.extend(background.into_iter().take(bg_quota));

    let val = coarse.relabel(&test.restrict_to_images(&keep_images, "val"))?;

    let remainder = disjoint.then(|| {
        let rest: HashSet<u64> = test
            .images
            .iter()
            .map(|im| im.id)
            .filter(|id| !keep_images.contains(id))
            .collect();
        test.restrict_to_images(&rest, "test")
    });

    Ok(ValidationSplit {
        val,
        remainder,
        selected,
        forced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Category, ImageRecord};
    use crate::geom::BBox;

    /// One image per annotation; `counts[i]` instances of category `i + 1`.
    fn fixture(counts: &[usize]) -> DetDataset<f64> {
        let mut ds = DetDataset {
            images: vec![],
            annotations: vec![],
            categories: (0..counts.len())
                .map(|i| Category {
                    id: i as u64 + 1,
                    name: format!("c{}", i + 1),
                })
                .collect(),
            split_tag: "test".into(),
        };
        let mut id = 0;
        for (ci, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                id += 1;
                ds.images.push(ImageRecord {
                    id,
                    file_name: format!("{id}.png"),
                    width: 32,
                    height: 32,
                });
                ds.annotations.push(Annotation {
                    id,
                    image_id: id,
                    category_id: ci as u64 + 1,
                    bbox: BBox::new(1.0, 1.0, 8.0, 8.0),
                    iscrowd: false,
                });
            }
        }
        ds
    }

    #[test]
    fn kshot_one_per_category() {
        let ep = sample_kshot(&fixture(&[10, 10]), 1, 3).unwrap();
        assert_eq!(ep.dataset.annotations.len(), 2);
        let counts = ep.dataset.instance_counts();
        assert_eq!(counts[&1], 1);
        assert_eq!(counts[&2], 1);
        assert_eq!(ep.dataset.images.len(), 2);
    }

    #[test]
    fn kshot_clamps_to_available() {
        let ep = sample_kshot(&fixture(&[4, 12]), 10, 3).unwrap();
        let counts = ep.dataset.instance_counts();
        assert_eq!(counts[&1], 4);
        assert_eq!(counts[&2], 10);
    }

    #[test]
    fn kshot_rejects_zero_k_and_skips_empty_category() {
        assert!(matches!(sample_kshot(&fixture(&[3]), 0, 1), Err(Error::Argument(_))));
        let ep = sample_kshot(&fixture(&[3, 0]), 2, 1).unwrap();
        assert_eq!(ep.dataset.annotations.len(), 2);
        assert_eq!(ep.dataset.categories.len(), 2);
    }

    #[test]
    fn kshot_deterministic_and_nested() {
        let ds = fixture(&[7, 9, 5]);
        let a = sample_kshot(&ds, 5, 7).unwrap();
        let b = sample_kshot(&ds, 5, 7).unwrap();
        assert_eq!(a.dataset.to_json_bytes(), b.dataset.to_json_bytes());
        let small = sample_kshot(&ds, 2, 7).unwrap();
        let big_ids: HashSet<u64> = a.dataset.annotations.iter().map(|a| a.id).collect();
        assert!(small.dataset.annotations.iter().all(|x| big_ids.contains(&x.id)));
    }

    #[test]
    fn quotas_exact_for_representable_rates() {
        let counts: BTreeMap<u64, usize> = [(1, 10)].into_iter().collect();
        assert_eq!(stratified_quotas(&counts, 0.3)[&1], 3);
        let counts: BTreeMap<u64, usize> = [(1, 20), (2, 10), (3, 5)].into_iter().collect();
        let q = stratified_quotas(&counts, 0.5);
        assert_eq!(q[&1], 10);
        assert_eq!(q[&2], 5);
        // 2.5 -> total round(17.5) = 18 leaves one slot for the only fractional category
        assert_eq!(q[&3], 3);
    }

    #[test]
    fn quota_ties_go_to_smaller_id() {
        let counts: BTreeMap<u64, usize> = [(4, 1), (2, 1), (9, 1)].into_iter().collect();
        // 3 * 0.5 = 1.5 -> 2 slots among equal remainders
        let q = stratified_quotas(&counts, 0.5);
        assert_eq!((q[&2], q[&4], q[&9]), (1, 1, 0));
    }

    #[test]
    fn valset_full_rate_identity() {
        let ds = fixture(&[3, 2]);
        let split = build_validation_set(&ds, 1.0, &CoarseLabelMap::identity(&ds.categories), 5, false)
            .unwrap();
        assert_eq!(split.val.images, ds.images);
        assert_eq!(split.val.annotations, ds.annotations);
        assert_eq!(split.val.categories, ds.categories);
        assert_eq!(split.val.split_tag, "val");
        assert!(split.remainder.is_none());
    }

    #[test]
    fn valset_rejects_bad_rate() {
        let ds = fixture(&[3]);
        let m = CoarseLabelMap::identity(&ds.categories);
        for rate in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                build_validation_set(&ds, rate, &m, 1, false),
                Err(Error::Argument(_))
            ));
        }
    }

    #[test]
    fn valset_forces_one_instance_at_tiny_rate() {
        let ds = fixture(&[100, 2]);
        let split =
            build_validation_set(&ds, 0.1, &CoarseLabelMap::identity(&ds.categories), 1, false)
                .unwrap();
        assert_eq!(split.selected[&1], 10);
        assert_eq!(split.selected[&2], 1);
        assert_eq!(split.forced, vec![2]);
    }

    #[test]
    fn valset_coarse_relabel_and_disjoint_partition() {
        let ds = fixture(&[6, 4, 5]);
        let coarse = CoarseLabelMap::parse("1 100 animal\n2 100 animal\n3 200 plant\n").unwrap();
        let split = build_validation_set(&ds, 0.5, &coarse, 11, true).unwrap();
        assert!(split.val.annotations.iter().all(|a| a.category_id == 100 || a.category_id == 200));
        assert_eq!(split.val.categories.len(), 2);
        let rest = split.remainder.unwrap();
        let v: HashSet<u64> = split.val.images.iter().map(|i| i.id).collect();
        let r: HashSet<u64> = rest.images.iter().map(|i| i.id).collect();
        assert!(v.is_disjoint(&r));
        assert_eq!(v.len() + r.len(), ds.images.len());
        assert_eq!(rest.categories, ds.categories);
    }

    #[test]
    fn valset_keeps_residual_annotations_and_background_images() {
        let mut ds = fixture(&[2, 2]);
        // put a category-2 instance on image 1 and add two empty images
        ds.annotations.push(Annotation {
            id: 50,
            image_id: 1,
            category_id: 2,
            bbox: BBox::new(10.0, 10.0, 4.0, 4.0),
            iscrowd: false,
        });
        for id in [90, 91] {
            ds.images.push(ImageRecord {
                id,
                file_name: format!("{id}.png"),
                width: 32,
                height: 32,
            });
        }
        let m = CoarseLabelMap::identity(&ds.categories);
        let full = build_validation_set(&ds, 1.0, &m, 3, false).unwrap();
        assert_eq!(full.val.images.len(), ds.images.len());
        for seed in 0..20 {
            let split = build_validation_set(&ds, 0.5, &m, seed, false).unwrap();
            if split.val.images.iter().any(|im| im.id == 1) {
                assert!(split.val.annotations.iter().any(|a| a.id == 50));
            }
            let bg = split.val.images.iter().filter(|im| im.id >= 90).count();
            assert_eq!(bg, 1);
        }
    }

    proptest::proptest! {
        #[test]
        fn quotas_stay_within_one_and_sum_to_rounded_total(
            counts in proptest::collection::btree_map(1u64..50, 1usize..200, 1..8),
            rate in 0.001f64..=1.0,
        ) {
            let q = stratified_quotas(&counts, rate);
            let n: usize = counts.values().sum();
            let total: usize = q.values().sum();
            proptest::prop_assert!((total as f64 - rate * n as f64).abs() <= 0.5 + 1e-6);
            for (c, &nc) in &counts {
                proptest::prop_assert!((q[c] as f64 - rate * nc as f64).abs() < 1.0);
                proptest::prop_assert!(q[c] <= nc);
            }
        }
    }
}
