use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::DetDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionRow {
    pub category_id: u64,
    pub p_val: f64,
    pub p_ref: f64,
}

/// Per-category instance proportions of two datasets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub rows: Vec<DistributionRow>,
    pub max_abs_deviation: f64,
}

/// Compare the category proportions of `val` with those of `reference`.
/// Both must share at least one category id.
pub fn distribution_report<T: Scalar>(
    val: &DetDataset<T>,
    reference: &DetDataset<T>,
) -> Result<DistributionReport> {
    let ids_val: BTreeSet<u64> = val.categories.iter().map(|c| c.id).collect();
    let ids_ref: BTreeSet<u64> = reference.categories.iter().map(|c| c.id).collect();
    if ids_val.is_disjoint(&ids_ref) {
        return Err(Error::Argument(
            "datasets share no category ids; relabel the reference first".into(),
        ));
    }
    let (cv, cr) = (val.instance_counts(), reference.instance_counts());
    fn proportion(counts: &BTreeMap<u64, usize>, id: u64) -> f64 {
        match counts.values().sum::<usize>() {
            0 => 0.0,
            t => counts.get(&id).copied().unwrap_or(0) as f64 / t as f64,
        }
    }
    let rows: Vec<DistributionRow> = ids_val
        .union(&ids_ref)
        .map(|&id| DistributionRow {
            category_id: id,
            p_val: proportion(&cv, id),
            p_ref: proportion(&cr, id),
        })
        .collect();
    let max_abs_deviation = rows
        .iter()
        .map(|r| (r.p_val - r.p_ref).abs())
        .fold(0.0, f64::max);
    Ok(DistributionReport {
        rows,
        max_abs_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Annotation, Category, ImageRecord};
    use crate::geom::BBox;

    fn ds(counts: &[(u64, usize)]) -> DetDataset<f64> {
        let mut annotations = vec![];
        for &(cat, n) in counts {
            for _ in 0..n {
                annotations.push(Annotation {
                    id: annotations.len() as u64 + 1,
                    image_id: 1,
                    category_id: cat,
                    bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
                    iscrowd: false,
                });
            }
        }
        DetDataset {
            images: vec![ImageRecord {
                id: 1,
                file_name: "x".into(),
                width: 10,
                height: 10,
            }],
            annotations,
            categories: counts
                .iter()
                .map(|&(id, _)| Category {
                    id,
                    name: id.to_string(),
                })
                .collect(),
            split_tag: "val".into(),
        }
    }

    #[test]
    fn identical_datasets_zero_deviation() {
        let a = ds(&[(1, 3), (2, 7)]);
        assert_eq!(distribution_report(&a, &a).unwrap().max_abs_deviation, 0.0);
    }

    #[test]
    fn proportional_scaling_zero_deviation() {
        let r = distribution_report(&ds(&[(1, 1), (2, 1)]), &ds(&[(1, 2), (2, 2)])).unwrap();
        assert_eq!(r.max_abs_deviation, 0.0);
    }

    #[test]
    fn hand_computed_deviation() {
        let r = distribution_report(&ds(&[(1, 3), (2, 1)]), &ds(&[(1, 5), (2, 5)])).unwrap();
        assert_eq!(r.max_abs_deviation, 0.25);
        assert_eq!(r.rows[0].p_val, 0.75);
        assert_eq!(r.rows[0].p_ref, 0.5);
    }

    #[test]
    fn disjoint_tables_rejected() {
        assert!(matches!(
            distribution_report(&ds(&[(1, 1)]), &ds(&[(2, 1)])),
            Err(Error::Argument(_))
        ));
    }
}
