use std::collections::{HashMap, HashSet};

use log::warn;
use serde::{Deserialize, Deserializer, Serialize};

use super::{Annotation, Category, DetDataset, ImageRecord};
use crate::error::{Error, Result};
use crate::geom::{BBox, CONTAINMENT_SLACK};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Drop (with a warning) boxes with non-positive size instead of failing,
    /// and clip boxes that overflow their image.
    pub lenient: bool,
}

#[derive(Deserialize)]
#[serde(bound = "T: Scalar")]
struct RawDataset<T> {
    images: Vec<ImageRecord>,
    annotations: Vec<RawAnnotation<T>>,
    categories: Vec<Category>,
    #[serde(default)]
    split: Option<String>,
}

#[derive(Deserialize)]
#[serde(bound = "T: Scalar")]
struct RawAnnotation<T> {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [T; 4],
    #[serde(default, deserialize_with = "crowd_flag")]
    iscrowd: bool,
}

/// COCO writes `iscrowd` as 0/1; accept booleans too.
fn crowd_flag<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Flag {
        Bool(bool),
        Int(i64),
    }
    Ok(match Flag::deserialize(d)? {
        Flag::Bool(b) => b,
        Flag::Int(i) => i != 0,
    })
}

pub fn parse_coco<T: Scalar>(raw: &[u8]) -> Result<DetDataset<T>> {
    parse_coco_with(raw, ParseOptions::default())
}

/// Parse COCO annotation JSON and check referential integrity. Annotation
/// order is preserved.
pub fn parse_coco_with<T: Scalar>(raw: &[u8], opts: ParseOptions) -> Result<DetDataset<T>> {
    let parsed: RawDataset<T> = serde_json::from_slice(raw).map_err(|e| Error::json(raw, e))?;

    let mut image_sizes = HashMap::with_capacity(parsed.images.len());
    for im in &parsed.images {
        if im.width == 0 || im.height == 0 {
            return Err(Error::Validation(format!(
                "image {} has non-positive size {}x{}",
                im.id, im.width, im.height
            )));
        }
        if image_sizes.insert(im.id, (im.width, im.height)).is_some() {
            return Err(Error::Validation(format!("duplicate image id {}", im.id)));
        }
    }
    let mut category_ids = HashSet::with_capacity(parsed.categories.len());
    for c in &parsed.categories {
        if !category_ids.insert(c.id) {
            return Err(Error::Validation(format!("duplicate category id {}", c.id)));
        }
    }

    let slack = T::lit(CONTAINMENT_SLACK);
    let mut seen = HashSet::with_capacity(parsed.annotations.len());
    let mut annotations = Vec::with_capacity(parsed.annotations.len());
    for a in parsed.annotations {
        let fail = |message: String| Error::Integrity {
            annotation_id: a.id,
            message,
        };
        if !seen.insert(a.id) {
            return Err(fail("duplicate annotation id".into()));
        }
        let &(width, height) = image_sizes
            .get(&a.image_id)
            .ok_or_else(|| fail(format!("image_id {} does not exist", a.image_id)))?;
        if !category_ids.contains(&a.category_id) {
            return Err(fail(format!("category_id {} does not exist", a.category_id)));
        }
        let mut bbox = BBox::new(a.bbox[0], a.bbox[1], a.bbox[2], a.bbox[3]);
        if !bbox.is_valid() {
            if opts.lenient {
                warn!("dropping annotation {}: degenerate box {:?}", a.id, a.bbox);
                continue;
            }
            return Err(fail(format!("box {:?} has non-positive size", a.bbox)));
        }
        let (w, h) = (T::lit(width as f64), T::lit(height as f64));
        if !bbox.fits_within(w, h, slack) {
            if !opts.lenient {
                return Err(fail(format!(
                    "box {:?} exceeds image {} ({width}x{height})",
                    a.bbox, a.image_id
                )));
            }
            match bbox.clip(w, h) {
                Some(c) => {
                    warn!("clipping annotation {} to image bounds", a.id);
                    bbox = c;
                }
                None => {
                    warn!("dropping annotation {}: outside its image", a.id);
                    continue;
                }
            }
        }
        annotations.push(Annotation {
            id: a.id,
            image_id: a.image_id,
            category_id: a.category_id,
            bbox,
            iscrowd: a.iscrowd,
        });
    }

    Ok(DetDataset {
        images: parsed.images,
        annotations,
        categories: parsed.categories,
        split_tag: parsed.split.unwrap_or_else(|| "unspecified".to_string()),
    })
}

#[derive(Serialize)]
pub(super) struct CocoOut<'a, T: Scalar> {
    split: &'a str,
    images: &'a [ImageRecord],
    annotations: Vec<AnnotationOut<T>>,
    categories: &'a [Category],
}

#[derive(Serialize)]
struct AnnotationOut<T: Scalar> {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: BBox<T>,
    area: T,
    iscrowd: u8,
}

impl<'a, T: Scalar> From<&'a DetDataset<T>> for CocoOut<'a, T> {
    fn from(ds: &'a DetDataset<T>) -> Self {
        Self {
            split: &ds.split_tag,
            images: &ds.images,
            annotations: ds
                .annotations
                .iter()
                .map(|a| AnnotationOut {
                    id: a.id,
                    image_id: a.image_id,
                    category_id: a.category_id,
                    bbox: a.bbox,
                    area: a.bbox.area(),
                    iscrowd: a.iscrowd as u8,
                })
                .collect(),
            categories: &ds.categories,
        }
    }
}
