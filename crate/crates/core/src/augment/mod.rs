//! Box-aware image augmentation: the six operators and the probabilistic
//! pipeline that chains them.
//!
//! Box coordinates inside a [`Sample`] always sit on a 1/256-pixel grid. Every
//! operator snaps its output boxes back onto the grid, which keeps the
//! geometric operators exact (a double flip returns the original bytes) for
//! both `f32` and `f64` coordinates.

mod ops;
mod pipeline;

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::dataset::{DetDataset, ImageRecord};
use crate::error::{Error, Result};
use crate::geom::BBox;
use crate::scalar::Scalar;

pub use ops::{
    crop, crop_at, draw_hsv_offsets, flip, hsv_jitter, hsv_shift_pixel, mixup, mosaic,
    mosaic_layout, resize, HsvOffsets, MosaicPlacement, ResizeTarget,
};
pub use pipeline::{
    apply_pipeline, AugOp, AugOpSpec, AugPipelineSpec, CropParams, FlipParams, HsvParams,
    MixUpParams, MosaicParams, OpKind, OpTrace, PipelineOutput, ResizeParams, SampleCache,
};

/// Sub-pixel grid for box coordinates, in cells per pixel.
pub const BOX_GRID: f64 = 256.0;

/// Default fill for padded canvas regions.
pub const PAD_VALUE: u8 = 114;

pub(crate) fn snap<T: Scalar>(v: T) -> T {
    let g = T::lit(BOX_GRID);
    (v * g).round() / g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LabeledBox<T> {
    pub bbox: BBox<T>,
    pub category_id: u64,
}

impl<T: Scalar> LabeledBox<T> {
    pub fn new(bbox: BBox<T>, category_id: u64) -> Self {
        Self { bbox, category_id }
    }
}

/// An RGB image with its labeled boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub image: RgbImage,
    pub boxes: Vec<LabeledBox<T>>,
}

impl<T: Scalar> Sample<T> {
    /// Boxes are snapped to the grid and clipped to the image; boxes left
    /// empty are discarded.
    pub fn new(image: RgbImage, boxes: Vec<LabeledBox<T>>) -> Self {
        let (w, h) = dims::<T>(&image);
        let boxes = boxes
            .into_iter()
            .filter_map(|b| snap_clip(&b.bbox, w, h).map(|bbox| LabeledBox { bbox, ..b }))
            .collect();
        Self { image, boxes }
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    /// Every box has positive size and lies inside the image.
    pub fn boxes_contained(&self) -> bool {
        let (w, h) = dims::<T>(&self.image);
        self.boxes
            .iter()
            .all(|b| b.bbox.is_valid() && b.bbox.fits_within(w, h, T::zero()))
    }

    /// Load an image from disk together with its non-crowd annotations.
    pub fn load(path: impl AsRef<Path>, record: &ImageRecord, ds: &DetDataset<T>) -> Result<Self> {
        let path = path.as_ref();
        let image = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let boxes = ds
            .annotations
            .iter()
            .filter(|a| a.image_id == record.id && !a.iscrowd)
            .map(|a| LabeledBox::new(a.bbox, a.category_id))
            .collect();
        Ok(Self::new(image, boxes))
    }

    /// Lossless PNG output.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.image
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

pub(crate) fn dims<T: Scalar>(img: &RgbImage) -> (T, T) {
    (T::lit(img.width() as f64), T::lit(img.height() as f64))
}

/// Snap corners onto the grid, then clip to `[0, w] x [0, h]`.
pub(crate) fn snap_clip<T: Scalar>(b: &BBox<T>, w: T, h: T) -> Option<BBox<T>> {
    BBox::from_corners(snap(b.x), snap(b.y), snap(b.right()), snap(b.bottom()))?.clip(w, h)
}

/// Rule for discarding boxes that geometric operators cut down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxFilter {
    /// Minimum remaining area, in square pixels.
    pub min_box_area: f64,
    /// Minimum fraction of the (transformed, unclipped) area that must remain.
    pub min_visibility: f64,
}

impl Default for BoxFilter {
    fn default() -> Self {
        Self {
            min_box_area: 1.0,
            min_visibility: 0.1,
        }
    }
}

impl BoxFilter {
    /// Clip `b` to the window, snap it, and keep it only if enough survives.
    pub(crate) fn keep<T: Scalar>(&self, b: &BBox<T>, w: T, h: T) -> Option<BBox<T>> {
        let clipped = snap_clip(b, w, h)?;
        let area = clipped.area().to_f64_lossy();
        let full = b.area().to_f64_lossy();
        (area >= self.min_box_area && area >= self.min_visibility * full).then_some(clipped)
    }
}

/// Bilinear resampling with half-pixel centers; rounds half up.
pub(crate) fn resize_bilinear(src: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (sw, sh) = src.dimensions();
    if (sw, sh) == (width, height) {
        return src.clone();
    }
    let axis = |dst: u32, n_src: u32, n_dst: u32| {
        let scale = n_src as f64 / n_dst as f64;
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_src - 1) as f64);
        let i0 = pos.floor() as u32;
        (i0, (i0 + 1).min(n_src - 1), pos - i0 as f64)
    };
    let xs: Vec<_> = (0..width).map(|x| axis(x, sw, width)).collect();
    let ys: Vec<_> = (0..height).map(|y| axis(y, sh, height)).collect();
    RgbImage::from_fn(width, height, |x, y| {
        let (x0, x1, fx) = xs[x as usize];
        let (y0, y1, fy) = ys[y as usize];
        let (p00, p10) = (src.get_pixel(x0, y0), src.get_pixel(x1, y0));
        let (p01, p11) = (src.get_pixel(x0, y1), src.get_pixel(x1, y1));
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
            let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
            out[c] = round_u8(top * (1.0 - fy) + bottom * fy);
        }
        Rgb(out)
    })
}

pub(crate) fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Copy `src` onto `canvas` with its top-left corner at `(ox, oy)`, dropping
/// whatever falls outside.
pub(crate) fn paste(canvas: &mut RgbImage, src: &RgbImage, ox: i64, oy: i64) {
    let (cw, ch) = (canvas.width() as i64, canvas.height() as i64);
    for (x, y, p) in src.enumerate_pixels() {
        let (tx, ty) = (ox + x as i64, oy + y as i64);
        if (0..cw).contains(&tx) && (0..ch).contains(&ty) {
            canvas.put_pixel(tx as u32, ty as u32, *p);
        }
    }
}

pub(crate) fn filled(width: u32, height: u32, value: u8) -> RgbImage {
    RgbImage::from_pixel(width, height, Rgb([value; 3]))
}
