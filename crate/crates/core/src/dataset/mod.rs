//! COCO-style detection datasets: ingestion, K-shot episodes, and
//! stratified validation sets carrying coarse labels.

mod coarse;
mod coco;
mod report;
mod sampling;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::BBox;
use crate::scalar::Scalar;

pub use coarse::CoarseLabelMap;
pub use coco::{parse_coco, parse_coco_with, ParseOptions};
pub use report::{distribution_report, DistributionReport, DistributionRow};
pub use sampling::{build_validation_set, sample_kshot, Episode, ValidationSplit};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation<T> {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox<T>,
    pub iscrowd: bool,
}

/// Images, box annotations and a category table, tagged with its split.
#[derive(Debug, Clone, PartialEq)]
pub struct DetDataset<T> {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation<T>>,
    pub categories: Vec<Category>,
    pub split_tag: String,
}

impl<T: Scalar> DetDataset<T> {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_coco(&raw)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Deterministic COCO JSON encoding. Identical datasets give identical bytes.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(&coco::CocoOut::from(self))
            .expect("dataset serialization is infallible");
        out.push(b'\n');
        out
    }

    /// SHA-256 of the canonical encoding.
    pub fn digest(&self) -> String {
        crate::digest::sha256_hex(&self.to_json_bytes())
    }

    pub fn image_index(&self) -> HashMap<u64, usize> {
        self.images
            .iter()
            .enumerate()
            .map(|(i, im)| (im.id, i))
            .collect()
    }

    pub fn category_ids(&self) -> Vec<u64> {
        self.categories.iter().map(|c| c.id).collect()
    }

    /// Annotation counts per category id, crowd regions included. Every
    /// category of the table appears, possibly with a zero count.
    pub fn category_counts(&self) -> BTreeMap<u64, usize> {
        self.counts(|_| true)
    }

    /// Like [`category_counts`](Self::category_counts) but counting only
    /// non-crowd instances.
    pub fn instance_counts(&self) -> BTreeMap<u64, usize> {
        self.counts(|a| !a.iscrowd)
    }

    fn counts(&self, keep: impl Fn(&Annotation<T>) -> bool) -> BTreeMap<u64, usize> {
        let mut out: BTreeMap<u64, usize> = self.categories.iter().map(|c| (c.id, 0)).collect();
        for a in self.annotations.iter().filter(|a| keep(a)) {
            *out.entry(a.category_id).or_default() += 1;
        }
        out
    }

    /// Subset holding the given images (in original order) and every annotation
    /// that lives on them.
    pub(crate) fn restrict_to_images(
        &self,
        keep: &std::collections::HashSet<u64>,
        split_tag: &str,
    ) -> Self {
        Self {
            images: self
                .images
                .iter()
                .filter(|im| keep.contains(&im.id))
                .cloned()
                .collect(),
            annotations: self
                .annotations
                .iter()
                .filter(|a| keep.contains(&a.image_id))
                .cloned()
                .collect(),
            categories: self.categories.clone(),
            split_tag: split_tag.to_string(),
        }
    }
}
