//! Few-shot detection toolkit: bounding-box-aware augmentation, K-shot
//! episodes and stratified validation sets, COCO-protocol mAP, and grid
//! search over training configurations with an external trainer.
//!
//! Geometry, datasets, augmentation and evaluation are generic over the
//! scalar type (`f32` or `f64`); the search and runner layers work in `f64`.

pub mod augment;
pub mod dataset;
pub mod digest;
pub mod error;
pub mod eval;
pub mod geom;
pub mod rng;
pub mod runner;
pub mod scalar;
pub mod search;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type BBoxF64 = geom::BBox<f64>;
pub type BBoxF32 = geom::BBox<f32>;
pub type Dataset = dataset::DetDataset<f64>;
pub type DatasetF32 = dataset::DetDataset<f32>;
pub type Annotation = dataset::Annotation<f64>;
pub type Detection = eval::Detection<f64>;
pub type DetectionF32 = eval::Detection<f32>;
pub type EvalResult = eval::EvalResult<f64>;
pub type EvalResultF32 = eval::EvalResult<f32>;
pub type Sample = augment::Sample<f64>;
pub type SampleF32 = augment::Sample<f32>;
pub type Episode = dataset::Episode<f64>;
pub type ValidationSplit = dataset::ValidationSplit<f64>;
