//! Axis-aligned box arithmetic.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum BoxError {
    #[error("malformed box: width {width} and height {height} must be finite and non-negative")]
    Malformed { width: f64, height: f64 },
    #[error("malformed box: coordinates must be finite")]
    NonFinite,
}

/// Corner-form box in continuous pixel coordinates.
///
/// Construct through [`BBox::new`] or [`BBox::from_xywh`] to get a normalized
/// box (`x_max >= x_min`, `y_max >= y_min`). Zero-area boxes are legal.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box from two corners, swapping coordinates when needed.
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x_min: x0.min(x1),
            y_min: y0.min(y1),
            x_max: x0.max(x1),
            y_max: y0.max(y1),
        }
    }

    /// COCO `[x, y, w, h]` adapter.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, BoxError> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        if !(w.is_finite() && h.is_finite()) || w < 0.0 || h < 0.0 {
            return Err(BoxError::Malformed { width: w, height: h });
        }
        Ok(Self {
            x_min: x,
            y_min: y,
            x_max: x + w,
            y_max: y + h,
        })
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_finite(&self) -> bool {
        self.x_min.is_finite() && self.y_min.is_finite() && self.x_max.is_finite() && self.y_max.is_finite()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Clips the box to `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> Self {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        Self {
            x_min: cx(self.x_min),
            y_min: cy(self.y_min),
            x_max: cx(self.x_max),
            y_max: cy(self.y_max),
        }
    }

    #[inline]
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over union; 0 when the union is empty.
    #[inline]
    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }
}

/// Continuous-coordinate IoU (no `+1` pixel convention).
#[inline]
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Unit-cell rasterization of integer boxes; independent of the
    // interval arithmetic in `iou`.
    fn raster_iou(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> f64 {
        let inside = |r: (i64, i64, i64, i64), x: i64, y: i64| x >= r.0 && x < r.2 && y >= r.1 && y < r.3;
        let (lo_x, hi_x) = (a.0.min(b.0), a.2.max(b.2));
        let (lo_y, hi_y) = (a.1.min(b.1), a.3.max(b.3));
        let (mut inter, mut union) = (0u64, 0u64);
        for x in lo_x..hi_x {
            for y in lo_y..hi_y {
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                inter += (ia && ib) as u64;
                union += (ia || ib) as u64;
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1)
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(20., 20., 30., 30.)), 0.0);
        let v = iou(&b(0., 0., 10., 10.), &b(5., 5., 15., 15.));
        assert_eq!(v, raster_iou((0, 0, 10, 10), (5, 5, 15, 15)));
        assert!((v - 25.0 / 175.0).abs() < 1e-15);
    }

    #[test]
    fn touching_and_degenerate_boxes() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(10., 0., 20., 10.)), 0.0);
        let point = b(3., 3., 3., 3.);
        assert_eq!(point.area(), 0.0);
        assert_eq!(iou(&point, &point), 0.0);
        assert_eq!(iou(&point, &b(0., 0., 10., 10.)), 0.0);
    }

    #[test]
    fn from_xywh_examples() {
        assert_eq!(BBox::from_xywh(0., 0., 10., 10.).unwrap(), b(0., 0., 10., 10.));
        assert_eq!(BBox::from_xywh(2., 3., 4., 5.).unwrap(), b(2., 3., 6., 8.));
        let d = BBox::from_xywh(1., 1., 0., 0.).unwrap();
        assert_eq!(d, b(1., 1., 1., 1.));
        assert_eq!(d.area(), 0.0);
        assert!(matches!(
            BBox::from_xywh(0., 0., -1., 2.),
            Err(BoxError::Malformed { .. })
        ));
        assert!(BBox::from_xywh(f64::NAN, 0., 1., 1.).is_err());
    }

    #[test]
    fn new_normalizes_corners() {
        let n = BBox::new(5., 8., 1., 2.);
        assert_eq!(n, b(1., 2., 5., 8.));
    }

    #[test]
    fn clip_to_image() {
        let c = b(-5., -5., 20., 8.).clip(10., 10.);
        assert_eq!(c, b(0., 0., 10., 8.));
    }

    fn int_box() -> impl Strategy<Value = (i64, i64, i64, i64)> {
        (0i64..=24, 0i64..=24, 0i64..=24, 0i64..=24).prop_map(|(a, b, c, d)| (a.min(c), b.min(d), a.max(c), b.max(d)))
    }

    fn to_box(r: (i64, i64, i64, i64)) -> BBox {
        b(r.0 as f64, r.1 as f64, r.2 as f64, r.3 as f64)
    }

    proptest! {
        #[test]
        fn iou_matches_rasterization(ra in int_box(), rb in int_box()) {
            let v = iou(&to_box(ra), &to_box(rb));
            prop_assert!((v - raster_iou(ra, rb)).abs() <= 1e-12);
        }

        #[test]
        fn iou_symmetric_and_bounded(ra in int_box(), rb in int_box()) {
            let (a, c) = (to_box(ra), to_box(rb));
            prop_assert_eq!(iou(&a, &c), iou(&c, &a));
            let v = iou(&a, &c);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn iou_translation_invariant(
            x0 in -100.0f64..100.0, y0 in -100.0f64..100.0, w0 in 0.0f64..50.0, h0 in 0.0f64..50.0,
            x1 in -100.0f64..100.0, y1 in -100.0f64..100.0, w1 in 0.0f64..50.0, h1 in 0.0f64..50.0,
            dx in -1000.0f64..1000.0, dy in -1000.0f64..1000.0,
        ) {
            let a = BBox::from_xywh(x0, y0, w0, h0).unwrap();
            let c = BBox::from_xywh(x1, y1, w1, h1).unwrap();
            let moved = iou(&a.translate(dx, dy), &c.translate(dx, dy));
            prop_assert!((iou(&a, &c) - moved).abs() <= 1e-12);
        }

        #[test]
        fn self_iou_is_one(x in -50.0f64..50.0, y in -50.0f64..50.0, w in 0.01f64..50.0, h in 0.01f64..50.0) {
            let a = BBox::from_xywh(x, y, w, h).unwrap();
            prop_assert_eq!(iou(&a, &a), 1.0);
        }
    }
}
