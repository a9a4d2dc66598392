use crate::error::{Error, Result};

use super::{OrientedBox, Point};

/// Minimum-area rotated rectangle enclosing a quadrilateral, canonicalized.
///
/// Annotated quads are rarely perfect rectangles, so the rectangle comes from
/// rotating calipers over the convex hull of the four vertices. Self-crossing
/// ("bow-tie") and zero-area quads are rejected; mildly concave quads are
/// accepted and enclosed by their hull.
pub fn box_from_quad(quad: &[Point]) -> Result<OrientedBox> {
    if quad.len() != 4 {
        return Err(Error::InvalidQuad(format!(
            "expected 4 vertices, got {}",
            quad.len()
        )));
    }
    if !quad.iter().all(|p| p.is_finite()) {
        return Err(Error::InvalidQuad("non-finite vertex".into()));
    }
    if segments_cross(quad[0], quad[1], quad[2], quad[3])
        || segments_cross(quad[1], quad[2], quad[3], quad[0])
    {
        return Err(Error::InvalidQuad("edges cross each other".into()));
    }

    let hull = convex_hull(quad);
    let scale = quad
        .iter()
        .flat_map(|p| quad.iter().map(move |q| (*p - *q).norm()))
        .fold(0.0, f64::max);
    let area = hull_area(&hull);
    if hull.len() < 3 || area.is_nan() || area <= 1e-12 * scale * scale {
        return Err(Error::InvalidQuad("zero area".into()));
    }

    let mut best: Option<(f64, OrientedBox)> = None;
    for i in 0..hull.len() {
        let edge = hull[(i + 1) % hull.len()] - hull[i];
        let len = edge.norm();
        if len == 0.0 {
            continue;
        }
        let u = edge.scale(1.0 / len);
        let n = Point::new(-u.y, u.x);
        let (mut s_lo, mut s_hi, mut t_lo, mut t_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &hull {
            let (s, t) = (p.dot(u), p.dot(n));
            s_lo = s_lo.min(s);
            s_hi = s_hi.max(s);
            t_lo = t_lo.min(t);
            t_hi = t_hi.max(t);
        }
        let (mut w, mut h) = (s_hi - s_lo, t_hi - t_lo);
        let area = w * h;
        if best
            .as_ref()
            .is_some_and(|(a, _)| area >= a * (1.0 - 1e-12))
        {
            continue;
        }
        // Equal sides within rounding are a square; make them exactly equal
        // so canonicalization picks the square's angle convention.
        if (w - h).abs() <= 1e-9 * w.max(h) {
            w = 0.5 * (w + h);
            h = w;
        }
        let c = u.scale(0.5 * (s_lo + s_hi)) + n.scale(0.5 * (t_lo + t_hi));
        let b = OrientedBox::new(c.x, c.y, w, h, u.y.atan2(u.x))
            .map_err(|e| Error::InvalidQuad(e.to_string()))?;
        best = Some((area, b));
    }

    best.map(|(_, b)| b.canonical())
        .ok_or_else(|| Error::InvalidQuad("zero area".into()))
}

/// Proper crossing of segments `ab` and `cd` (shared endpoints and collinear
/// touching do not count).
fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Andrew's monotone chain; returns the hull with positive winding and no
/// collinear points.
fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: Point, a: Point, b: Point| (a - o).cross(b - o);
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn hull_area(hull: &[Point]) -> f64 {
    if hull.len() < 3 {
        return 0.0;
    }
    let o = hull[0];
    0.5 * hull[1..]
        .windows(2)
        .map(|w| (w[0] - o).cross(w[1] - o))
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::corners_of;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn exact_square() {
        let b = box_from_quad(&pts(&[(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])).unwrap();
        assert_eq!(b.to_array(), [0.0, 0.0, 2.0, 2.0, 0.0]);
    }

    #[test]
    fn diamond() {
        let q = pts(&[(0.0, -2.0), (2.0, 0.0), (0.0, 2.0), (-2.0, 0.0)]);
        let b = box_from_quad(&q).unwrap();
        assert!(b.cx().abs() < 1e-12 && b.cy().abs() < 1e-12);
        assert!((b.w() - 2.0 * SQRT_2).abs() < 1e-12);
        assert!((b.h() - 2.0 * SQRT_2).abs() < 1e-12);
        assert!((b.theta() - FRAC_PI_4).abs() < 1e-12);
        for v in corners_of(&b).vertices() {
            assert!(q.iter().any(|p| (*p - *v).norm() < 1e-6));
        }
    }

    #[test]
    fn vertex_order_and_winding_do_not_matter() {
        let a = box_from_quad(&pts(&[(0.0, 0.0), (4.0, 0.0), (4.0, 2.0), (0.0, 2.0)])).unwrap();
        let b = box_from_quad(&pts(&[(4.0, 2.0), (4.0, 0.0), (0.0, 0.0), (0.0, 2.0)])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_array(), [2.0, 1.0, 4.0, 2.0, 0.0]);
    }

    #[test]
    fn rejects_bad_quads() {
        let bowtie = pts(&[(0.0, 0.0), (2.0, 2.0), (2.0, 0.0), (0.0, 2.0)]);
        assert!(matches!(box_from_quad(&bowtie), Err(Error::InvalidQuad(_))));
        let flat = pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
        assert!(box_from_quad(&flat).is_err());
        let point = pts(&[(1.0, 1.0); 4]);
        assert!(box_from_quad(&point).is_err());
        assert!(box_from_quad(&pts(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)])).is_err());
        let nan = pts(&[(0.0, 0.0), (1.0, f64::NAN), (1.0, 1.0), (0.0, 1.0)]);
        assert!(box_from_quad(&nan).is_err());
    }

    #[test]
    fn concave_quad_uses_hull() {
        // Arrowhead: the dent at (1, 0.5) is inside the hull triangle.
        let q = pts(&[(0.0, 0.0), (1.0, 0.5), (2.0, 0.0), (1.0, 2.0)]);
        let b = box_from_quad(&q).unwrap();
        for p in &q {
            let l = b.world_to_local(*p);
            assert!(l.x.abs() <= 0.5 * b.w() + 1e-9 && l.y.abs() <= 0.5 * b.h() + 1e-9);
        }
    }
}
