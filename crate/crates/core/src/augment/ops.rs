use image::{imageops, Rgb};
use rand::Rng;

use super::{
    dims, filled, paste, resize_bilinear, round_u8, snap_clip, BoxFilter, LabeledBox, Sample,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Where one mosaic source lands on the canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosaicPlacement {
    /// Top-left corner of the scaled source; may be negative (partly off canvas).
    pub origin: (i64, i64),
    /// Size of the scaled source in pixels.
    pub size: (u32, u32),
    /// Scale factors applied to source coordinates.
    pub scale: (f64, f64),
}

/// Canvas size, mosaic center and per-source placement for four sources of
/// the given sizes. Sources go top-left, top-right, bottom-left, bottom-right
/// around the center, each scaled to fit a `base` sized quadrant.
pub fn mosaic_layout(
    base: (u32, u32),
    center: (i64, i64),
    sources: [(u32, u32); 4],
) -> [MosaicPlacement; 4] {
    let (bw, bh) = base;
    let (cx, cy) = center;
    sources
        .iter()
        .enumerate()
        .map(|(q, &(w, h))| {
            let s = (bw as f64 / w as f64).min(bh as f64 / h as f64);
            let nw = ((w as f64 * s).round() as u32).max(1);
            let nh = ((h as f64 * s).round() as u32).max(1);
            let origin = match q {
                0 => (cx - nw as i64, cy - nh as i64),
                1 => (cx, cy - nh as i64),
                2 => (cx - nw as i64, cy),
                _ => (cx, cy),
            };
            MosaicPlacement {
                origin,
                size: (nw, nh),
                scale: (nw as f64 / w as f64, nh as f64 / h as f64),
            }
        })
        .collect::<Vec<_>>()
        .try_into()
        .expect("four placements")
}

/// Merge four samples into one `2 * base` canvas.
///
/// The center is drawn uniformly from `center_ratio` (a fraction of the base
/// size per axis, `[1.0, 1.0]` pins it to the canvas middle). `base` defaults
/// to the target's size. Boxes are remapped, clipped to the visible part of
/// their source, and filtered.
pub fn mosaic<T: Scalar, R: Rng>(
    target: &Sample<T>,
    partners: [&Sample<T>; 3],
    base: Option<(u32, u32)>,
    center_ratio: [f64; 2],
    pad_value: u8,
    filter: &BoxFilter,
    rng: &mut R,
) -> Result<Sample<T>> {
    let (bw, bh) = base.unwrap_or((target.width(), target.height()));
    if bw == 0 || bh == 0 {
        return Err(Error::Argument("mosaic base size must be positive".into()));
    }
    let [lo, hi] = center_ratio;
    let mut ratio = || lo + (hi - lo) * rng.random::<f64>();
    let cx = (ratio() * bw as f64).floor() as i64;
    let cy = (ratio() * bh as f64).floor() as i64;
    let (cw, ch) = (2 * bw, 2 * bh);

    let sources = [target, partners[0], partners[1], partners[2]];
    let layout = mosaic_layout((bw, bh), (cx, cy), sources.map(|s| (s.width(), s.height())));
    let mut canvas = filled(cw, ch, pad_value);
    let mut boxes = Vec::new();
    let (cw_t, ch_t) = (T::lit(cw as f64), T::lit(ch as f64));
    for (src, place) in sources.iter().zip(layout.iter()) {
        let scaled = resize_bilinear(&src.image, place.size.0, place.size.1);
        paste(&mut canvas, &scaled, place.origin.0, place.origin.1);
        // visible part of this source on the canvas
        let x0 = place.origin.0.max(0);
        let y0 = place.origin.1.max(0);
        let x1 = (place.origin.0 + place.size.0 as i64).min(cw as i64);
        let y1 = (place.origin.1 + place.size.1 as i64).min(ch as i64);
        if x1 <= x0 || y1 <= y0 {
            continue;
        }
        let (sx, sy) = (T::lit(place.scale.0), T::lit(place.scale.1));
        let (tx, ty) = (T::lit(place.origin.0 as f64), T::lit(place.origin.1 as f64));
        let (vx, vy) = (T::lit(x0 as f64), T::lit(y0 as f64));
        let (vw, vh) = (T::lit((x1 - x0) as f64), T::lit((y1 - y0) as f64));
        for b in &src.boxes {
            // express relative to the visible window, filter, shift back
            let moved = b.bbox.scale_translate(sx, sy, tx - vx, ty - vy);
            if let Some(kept) = filter.keep(&moved, vw, vh) {
                if let Some(bbox) = snap_clip(&kept.translate(vx, vy), cw_t, ch_t) {
                    boxes.push(LabeledBox::new(bbox, b.category_id));
                }
            }
        }
    }
    Ok(Sample {
        image: canvas,
        boxes,
    })
}

/// Integer HSV offsets on the 8-bit scale (hue in 2-degree units, 180 per turn).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HsvOffsets {
    pub hue: i32,
    pub sat: i32,
    pub val: i32,
}

impl HsvOffsets {
    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

/// One offset per channel, uniform over the integers in `[-delta, delta]`.
pub fn draw_hsv_offsets<R: Rng>(deltas: (u32, u32, u32), rng: &mut R) -> HsvOffsets {
    let mut draw = |d: u32| {
        let d = d as i32;
        rng.random_range(-d..=d)
    };
    HsvOffsets {
        hue: draw(deltas.0),
        sat: draw(deltas.1),
        val: draw(deltas.2),
    }
}

/// Shift one RGB pixel in HSV space: hue wraps around, saturation and value
/// clamp. Conversion is done in floating point so a zero shift is exact.
pub fn hsv_shift_pixel(rgb: [u8; 3], off: HsvOffsets) -> [u8; 3] {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let mut h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    let v = max;

    h = (h + 2.0 * off.hue as f64).rem_euclid(360.0);
    let s = (s + off.sat as f64 / 255.0).clamp(0.0, 1.0);
    let v = (v + off.val as f64 / 255.0).clamp(0.0, 1.0);

    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r1, g1, b1].map(|ch| round_u8((ch + m) * 255.0))
}

/// Photometric jitter in HSV space. Boxes are untouched.
pub fn hsv_jitter<T: Scalar, R: Rng>(s: &Sample<T>, deltas: (u32, u32, u32), rng: &mut R) -> Sample<T> {
    let off = draw_hsv_offsets(deltas, rng);
    if off.is_zero() {
        return s.clone();
    }
    let mut image = s.image.clone();
    for p in image.pixels_mut() {
        *p = Rgb(hsv_shift_pixel(p.0, off));
    }
    Sample {
        image,
        boxes: s.boxes.clone(),
    }
}

/// Mirror the image and its boxes.
pub fn flip<T: Scalar>(s: &Sample<T>, horizontal: bool, vertical: bool) -> Sample<T> {
    let mut image = s.image.clone();
    let (w, h) = dims::<T>(&image);
    if horizontal {
        imageops::flip_horizontal_in_place(&mut image);
    }
    if vertical {
        imageops::flip_vertical_in_place(&mut image);
    }
    let boxes = s
        .boxes
        .iter()
        .map(|b| {
            let mut bbox = b.bbox;
            if horizontal {
                bbox.x = w - bbox.x - bbox.w;
            }
            if vertical {
                bbox.y = h - bbox.y - bbox.h;
            }
            LabeledBox::new(bbox, b.category_id)
        })
        .collect();
    Sample { image, boxes }
}

/// Scale `s` to fit inside `width x height` keeping its aspect ratio, placed
/// top-left on a padded canvas.
fn letterbox<T: Scalar>(s: &Sample<T>, width: u32, height: u32, pad_value: u8) -> Sample<T> {
    let scale = (width as f64 / s.width() as f64).min(height as f64 / s.height() as f64);
    let nw = ((s.width() as f64 * scale).round() as u32).clamp(1, width);
    let nh = ((s.height() as f64 * scale).round() as u32).clamp(1, height);
    let mut canvas = filled(width, height, pad_value);
    paste(&mut canvas, &resize_bilinear(&s.image, nw, nh), 0, 0);
    let (sx, sy) = (
        T::lit(nw as f64 / s.width() as f64),
        T::lit(nh as f64 / s.height() as f64),
    );
    let (nw_t, nh_t) = (T::lit(nw as f64), T::lit(nh as f64));
    let boxes = s
        .boxes
        .iter()
        .filter_map(|b| {
            let moved = b.bbox.scale_translate(sx, sy, T::zero(), T::zero());
            snap_clip(&moved, nw_t, nh_t).map(|bbox| LabeledBox::new(bbox, b.category_id))
        })
        .collect();
    Sample {
        image: canvas,
        boxes,
    }
}

/// Blend `a` with `b` (letterboxed to `a`'s size): `round(l * a + (1 - l) * b)`
/// per channel, halves rounding up. Boxes are the union of both label sets.
pub fn mixup<T: Scalar>(a: &Sample<T>, b: &Sample<T>, lambda: f64, pad_value: u8) -> Result<Sample<T>> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Argument(format!(
            "mixup ratio must lie strictly between 0 and 1, got {lambda}"
        )));
    }
    let b = letterbox(b, a.width(), a.height(), pad_value);
    let mut image = a.image.clone();
    for (pa, pb) in image.pixels_mut().zip(b.image.pixels()) {
        for c in 0..3 {
            pa[c] = round_u8(lambda * pa[c] as f64 + (1.0 - lambda) * pb[c] as f64);
        }
    }
    let mut boxes = a.boxes.clone();
    boxes.extend(b.boxes);
    Ok(Sample { image, boxes })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResizeTarget {
    /// Fixed output size.
    Size { width: u32, height: u32 },
    /// Uniform scale factor drawn from `[lo, hi]`.
    ScaleRange { lo: f64, hi: f64 },
}

/// Bilinear resize. With `keep_ratio` and a fixed size the image is scaled to
/// fit and padded (top-left aligned) up to that size. Box factors follow the
/// actual pixel ratio per axis.
pub fn resize<T: Scalar, R: Rng>(
    s: &Sample<T>,
    target: ResizeTarget,
    keep_ratio: bool,
    pad_value: u8,
    rng: &mut R,
) -> Result<Sample<T>> {
    let (w, h) = (s.width() as f64, s.height() as f64);
    let scaled = |f: f64| -> Result<(u32, u32)> {
        let (nw, nh) = ((w * f).round(), (h * f).round());
        if !(nw >= 1.0 && nh >= 1.0) {
            return Err(Error::Argument(format!("scale {f} collapses the image")));
        }
        Ok((nw as u32, nh as u32))
    };
    let (nw, nh, canvas) = match target {
        ResizeTarget::Size { width, height } if width == 0 || height == 0 => {
            return Err(Error::Argument("resize target must be positive".into()))
        }
        ResizeTarget::Size { width, height } if keep_ratio => {
            let (nw, nh) = scaled((width as f64 / w).min(height as f64 / h))?;
            (nw.min(width), nh.min(height), Some((width, height)))
        }
        ResizeTarget::Size { width, height } => (width, height, None),
        ResizeTarget::ScaleRange { lo, hi } => {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::Argument(format!("bad scale range [{lo}, {hi}]")));
            }
            let (nw, nh) = scaled(lo + (hi - lo) * rng.random::<f64>())?;
            (nw, nh, None)
        }
    };
    let resized = resize_bilinear(&s.image, nw, nh);
    let image = match canvas {
        Some((cw, ch)) => {
            let mut c = filled(cw, ch, pad_value);
            paste(&mut c, &resized, 0, 0);
            c
        }
        None => resized,
    };
    let (sx, sy) = (T::lit(nw as f64 / w), T::lit(nh as f64 / h));
    let (nw_t, nh_t) = (T::lit(nw as f64), T::lit(nh as f64));
    let boxes = s
        .boxes
        .iter()
        .filter_map(|b| {
            let moved = b.bbox.scale_translate(sx, sy, T::zero(), T::zero());
            snap_clip(&moved, nw_t, nh_t).map(|bbox| LabeledBox::new(bbox, b.category_id))
        })
        .collect();
    Ok(Sample { image, boxes })
}

/// Random crop of `size`; the origin is uniform over all valid positions.
/// Images smaller than the crop are padded (bottom/right) first.
pub fn crop<T: Scalar, R: Rng>(
    s: &Sample<T>,
    size: (u32, u32),
    pad_value: u8,
    filter: &BoxFilter,
    rng: &mut R,
) -> Result<Sample<T>> {
    let (cw, ch) = size;
    if cw == 0 || ch == 0 {
        return Err(Error::Argument("crop size must be positive".into()));
    }
    let (w, h) = (s.width().max(cw), s.height().max(ch));
    let ox = rng.random_range(0..=w - cw);
    let oy = rng.random_range(0..=h - ch);
    Ok(crop_at(s, (ox, oy), size, pad_value, filter))
}

/// Crop at a fixed origin. Boxes are translated, clipped to the window and
/// filtered against their uncut area.
pub fn crop_at<T: Scalar>(
    s: &Sample<T>,
    origin: (u32, u32),
    size: (u32, u32),
    pad_value: u8,
    filter: &BoxFilter,
) -> Sample<T> {
    let (cw, ch) = size;
    let padded;
    let src = if s.width() < cw || s.height() < ch {
        let mut c = filled(s.width().max(cw), s.height().max(ch), pad_value);
        paste(&mut c, &s.image, 0, 0);
        padded = c;
        &padded
    } else {
        &s.image
    };
    let (ox, oy) = origin;
    let image = imageops::crop_imm(src, ox, oy, cw, ch).to_image();
    let (cw_t, ch_t) = (T::lit(cw as f64), T::lit(ch as f64));
    let (tx, ty) = (-T::lit(ox as f64), -T::lit(oy as f64));
    let boxes = s
        .boxes
        .iter()
        .filter_map(|b| {
            filter
                .keep(&b.bbox.translate(tx, ty), cw_t, ch_t)
                .map(|bbox| LabeledBox::new(bbox, b.category_id))
        })
        .collect();
    Sample { image, boxes }
}
