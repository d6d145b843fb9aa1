use std::collections::VecDeque;
use std::path::Path;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, ResizeTarget};
use super::{BoxFilter, Sample, PAD_VALUE};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Mosaic,
    HsvJitter,
    Flip,
    MixUp,
    Resize,
    Crop,
}

fn default_pad() -> u8 {
    PAD_VALUE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MosaicParams {
    /// Quadrant size; the target's own size when absent.
    #[serde(default)]
    pub img_scale: Option<[u32; 2]>,
    #[serde(default = "MosaicParams::default_center")]
    pub center_ratio_range: [f64; 2],
    #[serde(default = "default_pad")]
    pub pad_value: u8,
}

impl MosaicParams {
    fn default_center() -> [f64; 2] {
        [0.5, 1.5]
    }
}

impl Default for MosaicParams {
    fn default() -> Self {
        Self {
            img_scale: None,
            center_ratio_range: Self::default_center(),
            pad_value: PAD_VALUE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HsvParams {
    pub hue_delta: u32,
    pub sat_delta: u32,
    pub val_delta: u32,
}

impl Default for HsvParams {
    fn default() -> Self {
        Self {
            hue_delta: 5,
            sat_delta: 30,
            val_delta: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlipParams {
    pub horizontal: bool,
    pub vertical: bool,
}

impl Default for FlipParams {
    fn default() -> Self {
        Self {
            horizontal: true,
            vertical: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixUpParams {
    pub ratio: f64,
    pub pad_value: u8,
}

impl Default for MixUpParams {
    fn default() -> Self {
        Self {
            ratio: 0.5,
            pad_value: PAD_VALUE,
        }
    }
}

/// Exactly one of `size` and `scale_range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResizeParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<[u32; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale_range: Option<[f64; 2]>,
    pub keep_ratio: bool,
    pub pad_value: u8,
}

impl Default for ResizeParams {
    fn default() -> Self {
        Self {
            size: None,
            scale_range: Some([0.8, 1.2]),
            keep_ratio: true,
            pad_value: PAD_VALUE,
        }
    }
}

impl ResizeParams {
    fn target(&self) -> Result<ResizeTarget> {
        match (self.size, self.scale_range) {
            (Some([width, height]), None) => Ok(ResizeTarget::Size { width, height }),
            (None, Some([lo, hi])) => Ok(ResizeTarget::ScaleRange { lo, hi }),
            _ => Err(Error::Config(
                "resize needs exactly one of `size` and `scale_range`".into(),
            )),
        }
    }
}

/// Exactly one of `size` (pixels) and `relative_size` (fraction of the input).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<[u32; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_size: Option<[f64; 2]>,
    pub pad_value: u8,
}

impl Default for CropParams {
    fn default() -> Self {
        Self {
            size: None,
            relative_size: Some([0.8, 0.8]),
            pad_value: PAD_VALUE,
        }
    }
}

impl CropParams {
    fn size_for(&self, width: u32, height: u32) -> Result<(u32, u32)> {
        match (self.size, self.relative_size) {
            (Some([w, h]), None) => Ok((w, h)),
            (None, Some([fw, fh])) => Ok((
                ((width as f64 * fw).round() as u32).max(1),
                ((height as f64 * fh).round() as u32).max(1),
            )),
            _ => Err(Error::Config(
                "crop needs exactly one of `size` and `relative_size`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugOp {
    Mosaic(MosaicParams),
    HsvJitter(HsvParams),
    Flip(FlipParams),
    MixUp(MixUpParams),
    Resize(ResizeParams),
    Crop(CropParams),
}

impl AugOp {
    pub fn kind(&self) -> OpKind {
        match self {
            Self::Mosaic(_) => OpKind::Mosaic,
            Self::HsvJitter(_) => OpKind::HsvJitter,
            Self::Flip(_) => OpKind::Flip,
            Self::MixUp(_) => OpKind::MixUp,
            Self::Resize(_) => OpKind::Resize,
            Self::Crop(_) => OpKind::Crop,
        }
    }

    /// Cached samples an operator draws its partners from.
    fn partners_needed(&self) -> usize {
        match self {
            Self::Mosaic(_) => 3,
            Self::MixUp(_) => 1,
            _ => 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self {
            Self::Mosaic(m) => {
                let [lo, hi] = m.center_ratio_range;
                if !(0.0..=2.0).contains(&lo) || !(lo..=2.0).contains(&hi) {
                    return bad(format!("mosaic center_ratio_range [{lo}, {hi}] outside [0, 2]"));
                }
                if matches!(m.img_scale, Some([w, h]) if w == 0 || h == 0) {
                    return bad("mosaic img_scale must be positive".into());
                }
            }
            Self::MixUp(m) if !(m.ratio > 0.0 && m.ratio < 1.0) => {
                return bad(format!("mixup ratio {} outside (0, 1)", m.ratio));
            }
            Self::Resize(r) => {
                match r.target()? {
                    ResizeTarget::Size { width, height } if width == 0 || height == 0 => {
                        return bad("resize size must be positive".into())
                    }
                    ResizeTarget::ScaleRange { lo, hi } if !(lo > 0.0 && hi >= lo) => {
                        return bad(format!("resize scale_range [{lo}, {hi}] invalid"))
                    }
                    _ => {}
                }
            }
            Self::Crop(c) => {
                c.size_for(1, 1)?;
                if matches!(c.size, Some([w, h]) if w == 0 || h == 0) {
                    return bad("crop size must be positive".into());
                }
                if matches!(c.relative_size, Some([fw, fh]) if !(fw > 0.0 && fw <= 1.0 && fh > 0.0 && fh <= 1.0))
                {
                    return bad("crop relative_size must lie in (0, 1]".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugOpSpec {
    /// Probability that the operator fires on a given sample.
    pub p: f64,
    #[serde(flatten)]
    pub op: AugOp,
}

impl AugOpSpec {
    pub fn new(op: AugOp, p: f64) -> Self {
        Self { p, op }
    }
}

/// Ordered operators plus the shared cache and box-filter settings.
///
/// File form (TOML):
///
/// ```toml
/// cache_capacity = 10
/// min_box_area = 1.0
/// min_visibility = 0.1
///
/// [[ops]]
/// kind = "mosaic"
/// p = 0.6
///
/// [[ops]]
/// kind = "flip"
/// p = 0.5
/// horizontal = true
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugPipelineSpec {
    #[serde(default = "AugPipelineSpec::default_capacity")]
    pub cache_capacity: usize,
    #[serde(default = "AugPipelineSpec::default_min_area")]
    pub min_box_area: f64,
    #[serde(default = "AugPipelineSpec::default_min_visibility")]
    pub min_visibility: f64,
    #[serde(default)]
    pub ops: Vec<AugOpSpec>,
}

impl AugPipelineSpec {
    fn default_capacity() -> usize {
        10
    }
    fn default_min_area() -> f64 {
        BoxFilter::default().min_box_area
    }
    fn default_min_visibility() -> f64 {
        BoxFilter::default().min_visibility
    }

    pub fn empty() -> Self {
        Self {
            cache_capacity: Self::default_capacity(),
            min_box_area: Self::default_min_area(),
            min_visibility: Self::default_min_visibility(),
            ops: Vec::new(),
        }
    }

    /// Mosaic 0.6, Flip 0.5 and MixUp 0.3 as used for fine-tuning; HSV 0.5,
    /// Resize 1.0 and Crop 0.5 are local defaults.
    pub fn detection_default() -> Self {
        Self {
            ops: vec![
                AugOpSpec::new(AugOp::Mosaic(MosaicParams::default()), 0.6),
                AugOpSpec::new(AugOp::HsvJitter(HsvParams::default()), 0.5),
                AugOpSpec::new(AugOp::Flip(FlipParams::default()), 0.5),
                AugOpSpec::new(AugOp::MixUp(MixUpParams::default()), 0.3),
                AugOpSpec::new(AugOp::Resize(ResizeParams::default()), 1.0),
                AugOpSpec::new(AugOp::Crop(CropParams::default()), 0.5),
            ],
            ..Self::empty()
        }
    }

    pub fn filter(&self) -> BoxFilter {
        BoxFilter {
            min_box_area: self.min_box_area,
            min_visibility: self.min_visibility,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, spec) in self.ops.iter().enumerate() {
            if !(0.0..=1.0).contains(&spec.p) {
                return Err(Error::Config(format!("op #{i}: probability {} outside [0, 1]", spec.p)));
            }
            spec.op.validate()?;
        }
        let min_cache = self
            .ops
            .iter()
            .map(|s| match s.op.kind() {
                OpKind::Mosaic => 4,
                OpKind::MixUp => 2,
                _ => 0,
            })
            .max()
            .unwrap_or(0);
        if self.cache_capacity < min_cache {
            return Err(Error::Config(format!(
                "cache_capacity {} too small, need at least {min_cache}",
                self.cache_capacity
            )));
        }
        if !(self.min_box_area >= 0.0) || !(0.0..=1.0).contains(&self.min_visibility) {
            return Err(Error::Config("box filter thresholds out of range".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline spec serializes")
    }
}

/// FIFO pool of recent samples that multi-image operators draw partners from.
#[derive(Debug, Clone)]
pub struct SampleCache<T> {
    buf: VecDeque<Sample<T>>,
    capacity: usize,
}

impl<T: Scalar> SampleCache<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            buf: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, s: Sample<T>) {
        if self.capacity == 0 {
            return;
        }
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(s);
    }

    /// Uniform pick, with replacement.
    fn pick<R: Rng>(&self, rng: &mut R) -> &Sample<T> {
        &self.buf[rng.random_range(0..self.buf.len())]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OpTrace {
    pub kind: OpKind,
    /// The probability gate opened.
    pub fired: bool,
    /// The operator actually ran (false when the cache was too cold).
    pub applied: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub sample: Sample<T>,
    pub trace: Vec<OpTrace>,
}

/// Run every operator of `spec` in order, each gated by its own probability.
///
/// `stream` is the seed stream of this sample (typically
/// `SeedStream::new(master).child(image_index)`); operator `i` draws its gate
/// from `stream.path([i, 0])` and its parameters from `stream.path([i, 1])`.
/// The input sample is pushed into `cache` afterwards.
pub fn apply_pipeline<T: Scalar>(
    s: &Sample<T>,
    spec: &AugPipelineSpec,
    cache: &mut SampleCache<T>,
    stream: &SeedStream,
) -> Result<PipelineOutput<T>> {
    let filter = spec.filter();
    let mut cur = s.clone();
    let mut trace = Vec::with_capacity(spec.ops.len());
    for (i, op_spec) in spec.ops.iter().enumerate() {
        let op = &op_spec.op;
        let fired = stream.path(&[i as u64, 0]).rng().random::<f64>() < op_spec.p;
        let mut applied = false;
        if fired {
            let needed = op.partners_needed();
            if cache.len() < needed {
                warn!(
                    "skipping {:?}: cache holds {} samples, needs {needed}",
                    op.kind(),
                    cache.len()
                );
            } else {
                let mut rng = stream.path(&[i as u64, 1]).rng();
                cur = apply_op(&cur, op, cache, &filter, &mut rng)?;
                applied = true;
                debug_assert!(cur.boxes_contained(), "{:?} broke containment", op.kind());
            }
        }
        trace.push(OpTrace {
            kind: op.kind(),
            fired,
            applied,
        });
    }
    cache.push(s.clone());
    Ok(PipelineOutput { sample: cur, trace })
}

fn apply_op<T: Scalar, R: Rng>(
    s: &Sample<T>,
    op: &AugOp,
    cache: &SampleCache<T>,
    filter: &BoxFilter,
    rng: &mut R,
) -> Result<Sample<T>> {
    match op {
        AugOp::Mosaic(p) => {
            let partners = [cache.pick(rng), cache.pick(rng), cache.pick(rng)];
            ops::mosaic(
                s,
                partners,
                p.img_scale.map(|[w, h]| (w, h)),
                p.center_ratio_range,
                p.pad_value,
                filter,
                rng,
            )
        }
        AugOp::HsvJitter(p) => Ok(ops::hsv_jitter(s, (p.hue_delta, p.sat_delta, p.val_delta), rng)),
        AugOp::Flip(p) => Ok(ops::flip(s, p.horizontal, p.vertical)),
        AugOp::MixUp(p) => {
            let partner = cache.pick(rng);
            ops::mixup(s, partner, p.ratio, p.pad_value)
        }
        AugOp::Resize(p) => ops::resize(s, p.target()?, p.keep_ratio, p.pad_value, rng),
        AugOp::Crop(p) => {
            let size = p.size_for(s.width(), s.height())?;
            ops::crop(s, size, p.pad_value, filter, rng)
        }
    }
}
