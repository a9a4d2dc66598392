use serde::{Deserialize, Serialize};

use super::{Point, MIN_POLYGON_AREA};

/// Signed distance below which a vertex still counts as inside a clip edge.
const EDGE_EPS: f64 = 1e-9;

/// Convex polygon with vertices ordered so the shoelace sum is positive
/// (counter-clockwise with y up; clockwise on screen with y down).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConvexPolygon {
    vertices: Vec<Point>,
}

impl ConvexPolygon {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Wraps `vertices`, reversing them if they wind negatively. Convexity is
    /// the caller's responsibility.
    pub fn new(mut vertices: Vec<Point>) -> Self {
        if shoelace(&vertices) < 0.0 {
            vertices.reverse();
        }
        Self { vertices }
    }

    pub(crate) fn from_vertices_unchecked(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn signed_area(&self) -> f64 {
        shoelace(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        polygon_area(self)
    }

    /// Whether consecutive edges all turn the same way (within `eps`, scaled
    /// by the edge lengths).
    pub fn is_convex(&self, eps: f64) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return n == 0;
        }
        let mut sign = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            let (e1, e2) = ((b - a), (c - b));
            let z = e1.cross(e2);
            if z.abs() <= eps * e1.norm() * e2.norm() {
                continue;
            }
            if sign == 0.0 {
                sign = z.signum();
            } else if z.signum() != sign {
                return false;
            }
        }
        true
    }
}

/// Shoelace sum taken relative to the first vertex to limit cancellation.
fn shoelace(vs: &[Point]) -> f64 {
    if vs.len() < 3 {
        return 0.0;
    }
    let o = vs[0];
    let mut twice = 0.0;
    for w in vs[1..].windows(2) {
        twice += (w[0] - o).cross(w[1] - o);
    }
    0.5 * twice
}

/// Nonnegative area; 0 for empty or degenerate polygons.
pub fn polygon_area(poly: &ConvexPolygon) -> f64 {
    shoelace(&poly.vertices).abs()
}

/// Sutherland–Hodgman intersection of two convex polygons.
///
/// Either operand may wind in either direction. Results with area below
/// [`MIN_POLYGON_AREA`] come back empty.
pub fn clip_convex(subject: &ConvexPolygon, clip: &ConvexPolygon) -> ConvexPolygon {
    if subject.len() < 3 || clip.len() < 3 {
        return ConvexPolygon::empty();
    }
    let mut output = oriented(subject);
    let clip = oriented(clip);
    let mut input = Vec::with_capacity(output.len() + clip.len());

    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let edge = clip[(i + 1) % n] - a;
        let len = edge.norm();
        if len == 0.0 {
            continue;
        }
        let dist = |p: Point| edge.cross(p - a) / len;

        std::mem::swap(&mut input, &mut output);
        output.clear();
        let mut prev = *input.last().unwrap();
        let mut d_prev = dist(prev);
        for &cur in input.iter() {
            let d_cur = dist(cur);
            let (cur_in, prev_in) = (d_cur >= -EDGE_EPS, d_prev >= -EDGE_EPS);
            if cur_in != prev_in {
                let t = d_prev / (d_prev - d_cur);
                output.push(prev + (cur - prev).scale(t));
            }
            if cur_in {
                output.push(cur);
            }
            prev = cur;
            d_prev = d_cur;
        }
    }

    dedup_ring(&mut output);
    if output.len() < 3 || shoelace(&output) < MIN_POLYGON_AREA {
        return ConvexPolygon::empty();
    }
    ConvexPolygon::from_vertices_unchecked(output)
}

fn oriented(poly: &ConvexPolygon) -> Vec<Point> {
    let mut vs = poly.vertices.clone();
    if shoelace(&vs) < 0.0 {
        vs.reverse();
    }
    vs
}

/// Drops vertices that coincide with their predecessor, including the
/// wrap-around pair.
fn dedup_ring(vs: &mut Vec<Point>) {
    const TOL: f64 = 1e-12;
    vs.dedup_by(|b, a| (*b - *a).norm() <= TOL);
    while vs.len() > 1 && (vs[0] - *vs.last().unwrap()).norm() <= TOL {
        vs.pop();
    }
}
