//! Oriented and axis-aligned boxes, their polygon forms, and IoU between them.
//!
//! Coordinates follow the image convention: `+x` right, `+y` down, angles in
//! radians. A box with angle `theta` has its `w` side along `(cos θ, sin θ)` and
//! its `h` side along `(-sin θ, cos θ)`.

mod min_rect;
mod polygon;

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use min_rect::box_from_quad;
pub use polygon::{clip_convex, polygon_area, ConvexPolygon};

/// Intersections smaller than this are treated as empty.
pub const MIN_POLYGON_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    #[inline]
    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2-D cross product.
    #[inline]
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rotates about the origin by `angle` using `(cos, -sin; sin, cos)`.
    #[inline]
    pub fn rotate(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

/// A rotation about the origin followed by a translation.
impl Add for Point {
    type Output = Point;

    #[inline]
    fn add(self, other: Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }
}

impl Sub for Point {
    type Output = Point;

    #[inline]
    fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    pub rotation: f64,
    pub translation: Point,
}

impl RigidMotion {
    pub fn new(rotation: f64, tx: f64, ty: f64) -> Self {
        Self {
            rotation,
            translation: Point::new(tx, ty),
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        p.rotate(self.rotation) + self.translation
    }
}

/// Rotated rectangle `(cx, cy, w, h, theta)`.
///
/// Construction only checks that the fields are finite and the sides
/// positive; the angle may be anything. Call [`OrientedBox::canonical`] for
/// the unique form with `w >= h` and `theta` in `[0, π)`. Pooling and offset
/// encoding operate on the frame exactly as given, so a box is not silently
/// canonicalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 5]", into = "[f64; 5]")]
pub struct OrientedBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        if ![cx, cy, w, h, theta].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite field in ({cx}, {cy}, {w}, {h}, {theta})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "sides must be positive, got w={w}, h={h}"
            )));
        }
        Ok(Self {
            cx,
            cy,
            w,
            h,
            theta,
        })
    }

    #[inline]
    pub fn cx(&self) -> f64 {
        self.cx
    }
    #[inline]
    pub fn cy(&self) -> f64 {
        self.cy
    }
    #[inline]
    pub fn w(&self) -> f64 {
        self.w
    }
    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }
    #[inline]
    pub fn theta(&self) -> f64 {
        self.theta
    }
    #[inline]
    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }
    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.cx, self.cy, self.w, self.h, self.theta]
    }

    /// Unit vector along the `w` side.
    #[inline]
    pub fn axis_w(&self) -> Point {
        let (s, c) = self.theta.sin_cos();
        Point::new(c, s)
    }

    /// Unit vector along the `h` side.
    #[inline]
    pub fn axis_h(&self) -> Point {
        let (s, c) = self.theta.sin_cos();
        Point::new(-s, c)
    }

    /// Same rectangle with `w >= h` and `theta` in `[0, π)`.
    ///
    /// Swapping the sides adds `π/2` to the angle. Squares have a
    /// four-fold symmetry, so their angle is reduced into `[0, π/2)`.
    pub fn canonical(&self) -> Self {
        let (mut w, mut h, mut theta) = (self.w, self.h, self.theta);
        if w < h {
            std::mem::swap(&mut w, &mut h);
            theta += FRAC_PI_2;
        }
        let period = if w == h { FRAC_PI_2 } else { PI };
        Self {
            w,
            h,
            theta: reduce_angle(theta, period),
            ..*self
        }
    }

    pub fn is_canonical(&self) -> bool {
        *self == self.canonical()
    }

    /// Applies a rigid motion to the center and adds its rotation to the
    /// angle, without canonicalizing.
    pub fn transformed(&self, motion: &RigidMotion) -> Self {
        let c = motion.apply(self.center());
        Self {
            cx: c.x,
            cy: c.y,
            theta: self.theta + motion.rotation,
            ..*self
        }
    }

    /// Uniform scaling about the origin.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.cx * factor,
            self.cy * factor,
            self.w * factor,
            self.h * factor,
            self.theta,
        )
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// Maps a point from the box frame (origin at the center, `x` along `w`)
    /// to image coordinates.
    #[inline]
    pub fn local_to_world(&self, local: Point) -> Point {
        local.rotate(self.theta) + self.center()
    }

    /// Inverse of [`OrientedBox::local_to_world`].
    #[inline]
    pub fn world_to_local(&self, p: Point) -> Point {
        let d = p - self.center();
        Point::new(d.dot(self.axis_w()), d.dot(self.axis_h()))
    }

    /// Whether `p` lies inside the closed rectangle.
    pub fn contains(&self, p: Point) -> bool {
        let l = self.world_to_local(p);
        l.x.abs() <= 0.5 * self.w && l.y.abs() <= 0.5 * self.h
    }
}

impl TryFrom<[f64; 5]> for OrientedBox {
    type Error = Error;

    fn try_from(v: [f64; 5]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }
}

impl From<OrientedBox> for [f64; 5] {
    fn from(b: OrientedBox) -> Self {
        b.to_array()
    }
}

/// Reduces `theta` into `[0, period)`. `rem_euclid` can round up to `period`
/// itself for tiny negative inputs, which is folded back to zero.
pub(crate) fn reduce_angle(theta: f64, period: f64) -> f64 {
    let r = theta.rem_euclid(period);
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Canonical box from a raw `(cx, cy, w, h, theta)` tuple.
pub fn canonicalize(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<OrientedBox> {
    Ok(OrientedBox::new(cx, cy, w, h, theta)?.canonical())
}

/// Axis-aligned box in corner form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct AlignedBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl AlignedBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        if ![xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite corner in ({xmin}, {ymin}, {xmax}, {ymax})"
            )));
        }
        if xmax <= xmin || ymax <= ymin {
            return Err(Error::InvalidBox(format!(
                "empty aligned box ({xmin}, {ymin}, {xmax}, {ymax})"
            )));
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    /// From center form `(cx, cy, w, h)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    #[inline]
    pub fn xmin(&self) -> f64 {
        self.xmin
    }
    #[inline]
    pub fn ymin(&self) -> f64 {
        self.ymin
    }
    #[inline]
    pub fn xmax(&self) -> f64 {
        self.xmax
    }
    #[inline]
    pub fn ymax(&self) -> f64 {
        self.ymax
    }
    #[inline]
    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }
    #[inline]
    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }
    #[inline]
    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }
    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    /// The same rectangle as an oriented box with angle 0, `w` spanning x and
    /// `h` spanning y. The result is not canonicalized: a tall box keeps
    /// `w < h` so that every lifted box shares one frame orientation.
    pub fn to_oriented(&self) -> OrientedBox {
        let c = self.center();
        OrientedBox {
            cx: c.x,
            cy: c.y,
            w: self.width(),
            h: self.height(),
            theta: 0.0,
        }
    }
}

impl TryFrom<[f64; 4]> for AlignedBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<AlignedBox> for [f64; 4] {
    fn from(b: AlignedBox) -> Self {
        b.to_array()
    }
}

/// The four corners, ordered with positive shoelace area, starting from the
/// local `(-w/2, -h/2)` corner.
pub fn corners_of(b: &OrientedBox) -> ConvexPolygon {
    ConvexPolygon::from_vertices_unchecked(corner_points(b, Point::default()).to_vec())
}

fn corner_points(b: &OrientedBox, origin: Point) -> [Point; 4] {
    let (hw, hh) = (0.5 * b.w, 0.5 * b.h);
    let c = b.center() - origin;
    [
        Point::new(-hw, -hh),
        Point::new(hw, -hh),
        Point::new(hw, hh),
        Point::new(-hw, hh),
    ]
    .map(|p| p.rotate(b.theta) + c)
}

/// Smallest axis-aligned box containing the rotated rectangle.
pub fn aligned_hull(b: &OrientedBox) -> AlignedBox {
    let (s, c) = b.theta.sin_cos();
    let half_x = 0.5 * (b.w * c.abs() + b.h * s.abs());
    let half_y = 0.5 * (b.w * s.abs() + b.h * c.abs());
    AlignedBox {
        xmin: b.cx - half_x,
        ymin: b.cy - half_y,
        xmax: b.cx + half_x,
        ymax: b.cy + half_y,
    }
}

/// Intersection-over-union of two rotated rectangles.
///
/// The intersection is clipped in a frame centered on `a` to keep the
/// shoelace sum well conditioned far from the image origin. Touching boxes
/// (zero-area overlap) score 0.
pub fn iou_oriented(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let origin = a.center();
    let pa = ConvexPolygon::from_vertices_unchecked(corner_points(a, origin).to_vec());
    let pb = ConvexPolygon::from_vertices_unchecked(corner_points(b, origin).to_vec());
    let inter = clip_convex(&pa, &pb).area();
    ratio(inter, a.area() + b.area() - inter)
}

pub fn iou_aligned(a: &AlignedBox, b: &AlignedBox) -> f64 {
    let iw = a.xmax.min(b.xmax) - a.xmin.max(b.xmin);
    let ih = a.ymax.min(b.ymax) - a.ymin.max(b.ymin);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    ratio(inter, a.area() + b.area() - inter)
}

fn ratio(inter: f64, union: f64) -> f64 {
    if inter <= 0.0 || union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    fn obb(cx: f64, cy: f64, w: f64, h: f64, t: f64) -> OrientedBox {
        OrientedBox::new(cx, cy, w, h, t).unwrap()
    }

    fn same_point_set(a: &[Point], b: &[Point], tol: f64) -> bool {
        a.len() == b.len()
            && a.iter().all(|p| b.iter().any(|q| (*p - *q).norm() < tol))
            && b.iter().all(|p| a.iter().any(|q| (*p - *q).norm() < tol))
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(OrientedBox::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(OrientedBox::new(0.0, 0.0, 1.0, -1.0, 0.0).is_err());
        assert!(OrientedBox::new(f64::NAN, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(OrientedBox::new(0.0, 0.0, 1.0, 1.0, f64::INFINITY).is_err());
        assert!(AlignedBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(AlignedBox::new(0.0, 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn canonicalize_examples() {
        let a = canonicalize(0.0, 0.0, 4.0, 2.0, 0.0).unwrap();
        assert_eq!(a.to_array(), [0.0, 0.0, 4.0, 2.0, 0.0]);

        let raw = obb(0.0, 0.0, 2.0, 4.0, 0.0);
        let b = raw.canonical();
        assert_eq!((b.w(), b.h()), (4.0, 2.0));
        assert!((b.theta() - FRAC_PI_2).abs() < 1e-15);
        assert!(same_point_set(
            corners_of(&raw).vertices(),
            corners_of(&b).vertices(),
            1e-9
        ));

        let raw = obb(0.0, 0.0, 4.0, 2.0, 3.0 * PI / 2.0);
        let c = raw.canonical();
        assert!((c.theta() - FRAC_PI_2).abs() < 1e-12);
        assert!(same_point_set(
            corners_of(&raw).vertices(),
            corners_of(&c).vertices(),
            1e-9
        ));
    }

    #[test]
    fn canonical_angle_never_reaches_pi() {
        let b = obb(0.0, 0.0, 3.0, 1.0, -1e-17).canonical();
        assert!(b.theta() >= 0.0 && b.theta() < PI);
        let b = obb(0.0, 0.0, 2.0, 2.0, FRAC_PI_2).canonical();
        assert_eq!(b.theta(), 0.0);
    }

    #[test]
    fn corners_examples() {
        let sq = corners_of(&obb(0.0, 0.0, 2.0, 2.0, 0.0));
        let expected = [
            Point::new(-1.0, -1.0),
            Point::new(1.0, -1.0),
            Point::new(1.0, 1.0),
            Point::new(-1.0, 1.0),
        ];
        assert!(same_point_set(sq.vertices(), &expected, 1e-12));
        assert!(sq.signed_area() > 0.0);

        let moved = corners_of(&obb(1.0, 1.0, 2.0, 2.0, 0.0));
        let shifted: Vec<_> = expected.iter().map(|&p| p + Point::new(1.0, 1.0)).collect();
        assert!(same_point_set(moved.vertices(), &shifted, 1e-12));

        let diamond = corners_of(&obb(0.0, 0.0, 2.0 * SQRT_2, 2.0 * SQRT_2, FRAC_PI_4));
        let expected = [
            Point::new(0.0, -2.0),
            Point::new(2.0, 0.0),
            Point::new(0.0, 2.0),
            Point::new(-2.0, 0.0),
        ];
        assert!(same_point_set(diamond.vertices(), &expected, 1e-12));
    }

    #[test]
    fn corner_centroid_is_center() {
        let b = obb(12.5, -3.25, 7.0, 2.5, 1.1);
        let vs = corners_of(&b);
        let sum = vs
            .vertices()
            .iter()
            .fold(Point::default(), |acc, p| acc + *p);
        assert!((sum.x / 4.0 - 12.5).abs() < 1e-9);
        assert!((sum.y / 4.0 + 3.25).abs() < 1e-9);
    }

    #[test]
    fn aligned_hull_examples() {
        let h = aligned_hull(&obb(0.0, 0.0, 4.0, 2.0, 0.0));
        assert_eq!(h.to_array(), [-2.0, -1.0, 2.0, 1.0]);

        let h = aligned_hull(&obb(0.0, 0.0, 2.0 * SQRT_2, 2.0 * SQRT_2, FRAC_PI_4));
        for (got, want) in h.to_array().iter().zip([-2.0, -2.0, 2.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }

        let h = aligned_hull(&obb(5.0, 5.0, 4.0, 2.0, FRAC_PI_2));
        for (got, want) in h.to_array().iter().zip([4.0, 3.0, 6.0, 7.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_examples() {
        let b = obb(3.0, 4.0, 5.0, 2.0, 0.7);
        assert_eq!(iou_oriented(&b, &b), 1.0);

        let a = obb(0.5, 0.5, 1.0, 1.0, 0.0);
        let c = obb(1.0, 0.5, 1.0, 1.0, 0.0);
        assert!((iou_oriented(&a, &c) - 1.0 / 3.0).abs() < 1e-12);

        let r = obb(0.5, 0.5, 1.0, 1.0, FRAC_PI_4);
        let oct = 2.0 * (SQRT_2 - 1.0);
        assert!((iou_oriented(&a, &r) - oct / (2.0 - oct)).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        let a = obb(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = obb(2.0, 0.0, 2.0, 2.0, 0.0);
        assert_eq!(iou_oriented(&a, &b), 0.0);
        assert_eq!(iou_aligned(&aligned_hull(&a), &aligned_hull(&b)), 0.0);
    }

    #[test]
    fn iou_aligned_examples() {
        let a = AlignedBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        assert_eq!(iou_aligned(&a, &a), 1.0);
        let far = AlignedBox::new(10.0, 10.0, 12.0, 12.0).unwrap();
        assert_eq!(iou_aligned(&a, &far), 0.0);
    }

    #[test]
    fn lifted_aligned_box_keeps_its_frame() {
        let tall = AlignedBox::new(0.0, 0.0, 2.0, 6.0).unwrap().to_oriented();
        assert_eq!(tall.to_array(), [1.0, 3.0, 2.0, 6.0, 0.0]);
        assert!(!tall.is_canonical());
    }

    #[test]
    fn serde_rejects_invalid_boxes() {
        let b: OrientedBox = serde_json::from_str("[1, 2, 3, 4, 0.5]").unwrap();
        assert_eq!(b.to_array(), [1.0, 2.0, 3.0, 4.0, 0.5]);
        assert!(serde_json::from_str::<OrientedBox>("[1, 2, -3, 4, 0.5]").is_err());
    }
}
