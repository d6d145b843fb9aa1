//! Axis-aligned boxes in COCO `[x, y, w, h]` pixel convention.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scalar::Scalar;

/// Slack allowed when checking that an annotation fits its image.
pub const CONTAINMENT_SLACK: f64 = 0.5;

/// Axis-aligned box: left/top edge plus width/height, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox<T> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Self {
        Self { x, y, w, h }
    }

    /// Box from corner coordinates; `None` when the span is empty.
    pub fn from_corners(x0: T, y0: T, x1: T, y1: T) -> Option<Self> {
        let (w, h) = (x1 - x0, y1 - y0);
        (w > T::zero() && h > T::zero()).then(|| Self::new(x0, y0, w, h))
    }

    pub fn right(&self) -> T {
        self.x + self.w
    }

    pub fn bottom(&self) -> T {
        self.y + self.h
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    /// Positive, finite width and height.
    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
            && self.w > T::zero()
            && self.h > T::zero()
    }

    /// Whether the box lies inside a `width x height` image, with `slack` pixels of tolerance.
    pub fn fits_within(&self, width: T, height: T, slack: T) -> bool {
        self.x >= -slack
            && self.y >= -slack
            && self.right() <= width + slack
            && self.bottom() <= height + slack
    }

    pub fn intersection(&self, other: &Self) -> Option<Self> {
        Self::from_corners(
            self.x.max(other.x),
            self.y.max(other.y),
            self.right().min(other.right()),
            self.bottom().min(other.bottom()),
        )
    }

    /// Part of the box inside `[0, width] x [0, height]`.
    pub fn clip(&self, width: T, height: T) -> Option<Self> {
        Self::from_corners(
            self.x.max(T::zero()),
            self.y.max(T::zero()),
            self.right().min(width),
            self.bottom().min(height),
        )
    }

    /// Scale about the origin, then translate.
    pub fn scale_translate(&self, sx: T, sy: T, tx: T, ty: T) -> Self {
        Self::new(self.x * sx + tx, self.y * sy + ty, self.w * sx, self.h * sy)
    }

    pub fn translate(&self, tx: T, ty: T) -> Self {
        Self::new(self.x + tx, self.y + ty, self.w, self.h)
    }

    pub fn cast<U: Scalar>(&self) -> BBox<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        BBox::new(c(self.x), c(self.y), c(self.w), c(self.h))
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

/// Intersection over union. `0` for disjoint or touching boxes, `1` for identical ones.
///
/// Uses the same arithmetic as the reference COCO tooling so that threshold
/// comparisons land on the same side.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    overlap(a, b, false)
}

/// Overlap used for matching against crowd regions: intersection over the
/// detection's own area.
pub fn crowd_overlap<T: Scalar>(det: &BBox<T>, region: &BBox<T>) -> T {
    overlap(det, region, true)
}

fn overlap<T: Scalar>(d: &BBox<T>, g: &BBox<T>, crowd: bool) -> T {
    let w = d.right().min(g.right()) - d.x.max(g.x);
    if w <= T::zero() {
        return T::zero();
    }
    let h = d.bottom().min(g.bottom()) - d.y.max(g.y);
    if h <= T::zero() {
        return T::zero();
    }
    let inter = w * h;
    let union = if crowd {
        d.area()
    } else {
        d.area() + g.area() - inter
    };
    if union <= T::zero() {
        T::zero()
    } else {
        inter / union
    }
}

impl<T: Scalar> Serialize for BBox<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for BBox<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = <[T; 4]>::deserialize(d)?;
        Ok(Self::new(v[0], v[1], v[2], v[3]))
    }
}
