//! DOTA-style annotation text, detection output, and image tiling.
//!
//! Annotation lines read `x1 y1 x2 y2 x3 y3 x4 y4 category difficult`.
//! Lines whose first token contains a colon (`imagesource:GoogleEarth`,
//! `gsd:0.146`) are metadata and skipped, as are blank lines. Detection lines
//! read `category score x1 y1 x2 y2 x3 y3 x4 y4`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};
use crate::geometry::{box_from_quad, corners_of, OrientedBox, Point, RigidMotion};
use crate::nms::{score_order, Detection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedObject {
    /// Corners in the order they appeared in the source.
    pub quad: [Point; 4],
    pub category: String,
    pub difficult: bool,
    /// Minimum-area rectangle around `quad`.
    pub obb: OrientedBox,
}

impl AnnotatedObject {
    pub fn new(quad: [Point; 4], category: impl Into<String>, difficult: bool) -> Result<Self> {
        let category = category.into();
        if category.is_empty() || category.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "category must be a non-empty token, got {category:?}"
            )));
        }
        let obb = box_from_quad(&quad)?;
        Ok(Self {
            quad,
            category,
            difficult,
            obb,
        })
    }

    fn map_points(&self, f: impl Fn(Point) -> Point, obb: OrientedBox) -> Self {
        Self {
            quad: self.quad.map(f),
            category: self.category.clone(),
            difficult: self.difficult,
            obb,
        }
    }
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

/// Whitespace-separated tokens with 1-based character columns.
fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    for (col, (byte, ch)) in line.char_indices().enumerate() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some((byte, col + 1)),
            (true, Some((b, c))) => {
                out.push(Token {
                    text: &line[b..byte],
                    column: c,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some((b, c)) = start {
        out.push(Token {
            text: &line[b..],
            column: c,
        });
    }
    out
}

fn is_skippable(tokens: &[Token<'_>]) -> bool {
    tokens.first().is_none_or(|t| t.text.contains(':'))
}

fn err(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        column,
        message: message.into(),
    }
}

fn number(tok: &Token<'_>, line: usize, what: &str) -> Result<f64, ParseError> {
    match tok.text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(err(
            line,
            tok.column,
            format!("{what}: expected a finite number, found {:?}", tok.text),
        )),
    }
}

fn quad_from(tokens: &[Token<'_>], line: usize) -> Result<[Point; 4], ParseError> {
    let mut q = [Point::default(); 4];
    for (i, p) in q.iter_mut().enumerate() {
        let x = number(&tokens[2 * i], line, &format!("x{}", i + 1))?;
        let y = number(&tokens[2 * i + 1], line, &format!("y{}", i + 1))?;
        *p = Point::new(x, y);
    }
    Ok(q)
}

fn line_end_column(raw: &str) -> usize {
    raw.chars().count() + 1
}

fn parse_annotation_line(raw: &str, line: usize) -> Result<Option<AnnotatedObject>, ParseError> {
    let tokens = tokenize(raw);
    if is_skippable(&tokens) {
        return Ok(None);
    }
    if tokens.len() != 10 {
        let column = tokens.get(10).map_or(line_end_column(raw), |t| t.column);
        return Err(err(
            line,
            column,
            format!(
                "expected 10 fields (8 coordinates, category, difficult), found {}",
                tokens.len()
            ),
        ));
    }
    let quad = quad_from(&tokens, line)?;
    let category = tokens[8].text;
    let difficult = match tokens[9].text {
        "0" => false,
        "1" => true,
        other => {
            return Err(err(
                line,
                tokens[9].column,
                format!("difficult must be 0 or 1, found {other:?}"),
            ))
        }
    };
    AnnotatedObject::new(quad, category, difficult)
        .map(Some)
        .map_err(|e| err(line, tokens[0].column, e.to_string()))
}

/// Parses an annotation file, stopping at the first malformed line.
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotatedObject>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if let Some(obj) = parse_annotation_line(raw, i + 1)? {
            out.push(obj);
        }
    }
    Ok(out)
}

/// Parses every well-formed line and collects errors for the rest.
pub fn parse_annotations_lenient(text: &str) -> (Vec<AnnotatedObject>, Vec<ParseError>) {
    let mut objects = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        match parse_annotation_line(raw, i + 1) {
            Ok(Some(obj)) => objects.push(obj),
            Ok(None) => {}
            Err(e) => errors.push(e),
        }
    }
    (objects, errors)
}

/// One annotation line per object, with shortest round-trip coordinates.
pub fn write_annotations(objects: &[AnnotatedObject]) -> String {
    let mut out = String::new();
    for o in objects {
        for p in &o.quad {
            out.push_str(&format!("{} {} ", p.x, p.y));
        }
        out.push_str(&format!("{} {}\n", o.category, u8::from(o.difficult)));
    }
    out
}

/// Detection lines, highest score first (ties in input order), corners in
/// [`corners_of`] order to three decimals.
pub fn write_detections(dets: &[Detection], category_names: &[String]) -> Result<String> {
    if let Some(d) = dets.iter().find(|d| d.class_id >= category_names.len()) {
        return Err(Error::UnknownClass(d.class_id));
    }
    let mut out = String::new();
    for i in score_order(dets) {
        let d = &dets[i];
        out.push_str(&category_names[d.class_id]);
        out.push(' ');
        out.push_str(&d.score.to_string());
        for p in corners_of(&d.obb).vertices() {
            out.push_str(&format!(" {:.3} {:.3}", p.x, p.y));
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub category: String,
    pub score: f64,
    pub quad: [Point; 4],
    pub obb: OrientedBox,
}

impl DetectionRecord {
    /// Resolves the category against `category_names`.
    pub fn to_detection(&self, category_names: &[String]) -> Result<Detection> {
        let class_id = category_names
            .iter()
            .position(|n| *n == self.category)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown category {:?}", self.category))
            })?;
        Detection::new(self.obb, self.score, class_id)
    }
}

/// Reads detection lines. Quads need not be exact rectangles; each is
/// replaced by its minimum-area rectangle.
pub fn parse_detections(text: &str) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let tokens = tokenize(raw);
        if is_skippable(&tokens) {
            continue;
        }
        if tokens.len() != 10 {
            let column = tokens.get(10).map_or(line_end_column(raw), |t| t.column);
            return Err(err(
                line,
                column,
                format!(
                    "expected 10 fields (category, score, 8 coordinates), found {}",
                    tokens.len()
                ),
            )
            .into());
        }
        let score = number(&tokens[1], line, "score")?;
        if !(0.0..=1.0).contains(&score) {
            return Err(err(
                line,
                tokens[1].column,
                format!("score {score} outside [0, 1]"),
            )
            .into());
        }
        let quad = quad_from(&tokens[2..], line)?;
        let obb = box_from_quad(&quad).map_err(|e| err(line, tokens[2].column, e.to_string()))?;
        out.push(DetectionRecord {
            category: tokens[0].text.to_string(),
            score,
            quad,
            obb,
        });
    }
    Ok(out)
}

/// Axis-aligned crop of a larger image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Window {
    fn contains(&self, p: Point) -> bool {
        let (x0, y0) = (self.x0 as f64, self.y0 as f64);
        p.x >= x0 && p.x <= x0 + self.width as f64 && p.y >= y0 && p.y <= y0 + self.height as f64
    }
}

fn axis_offsets(dim: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut x = 0;
    while x + window < dim {
        x += stride;
        if x + window >= dim {
            out.push(dim - window);
            break;
        }
        out.push(x);
    }
    out
}

/// Top-left offsets of `window`-sized tiles stepping by `stride`, row by
/// row. The last tile on each axis is pulled back to end at the image edge.
/// A dimension smaller than the window gets a single tile at 0.
pub fn tile_windows(
    image_w: usize,
    image_h: usize,
    window: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>> {
    if window == 0 || stride == 0 || stride > window {
        return Err(Error::InvalidArgument(format!(
            "tiling needs window >= 1 and 1 <= stride <= window, got window {window}, stride {stride}"
        )));
    }
    let xs = axis_offsets(image_w, window, stride);
    let ys = axis_offsets(image_h, window, stride);
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect())
}

/// [`tile_windows`] as [`Window`]s.
pub fn tiles(image_w: usize, image_h: usize, window: usize, stride: usize) -> Result<Vec<Window>> {
    Ok(tile_windows(image_w, image_h, window, stride)?
        .into_iter()
        .map(|(x0, y0)| Window {
            x0,
            y0,
            width: window,
            height: window,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiledObject {
    /// Coordinates relative to the window origin.
    pub object: AnnotatedObject,
    /// Some corner of the source quad lies outside the window.
    pub out_of_window: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileWindow {
    pub window: Window,
    pub contained: Vec<TiledObject>,
}

/// Keeps objects whose box center lies in the (closed) window and shifts
/// them into window coordinates. Objects are never clipped.
pub fn transfer_annotations(objects: &[AnnotatedObject], window: Window) -> TileWindow {
    let (dx, dy) = (window.x0 as f64, window.y0 as f64);
    let contained = objects
        .iter()
        .filter(|o| window.contains(o.obb.center()))
        .map(|o| TiledObject {
            out_of_window: o.quad.iter().any(|&p| !window.contains(p)),
            object: o.map_points(
                |p| Point::new(p.x - dx, p.y - dy),
                o.obb.translated(-dx, -dy),
            ),
        })
        .collect();
    TileWindow { window, contained }
}

/// Coordinates multiplied by `factor` (image resized about its origin).
pub fn scale_annotations(objects: &[AnnotatedObject], factor: f64) -> Result<Vec<AnnotatedObject>> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scale factor must be positive, got {factor}"
        )));
    }
    objects
        .iter()
        .map(|o| {
            let b = &o.obb;
            let obb = OrientedBox::new(
                b.cx() * factor,
                b.cy() * factor,
                b.w() * factor,
                b.h() * factor,
                b.theta(),
            )?;
            Ok(o.map_points(|p| p.scale(factor), obb))
        })
        .collect()
}

/// Annotations of a `width × height` image rotated by `k` quarter turns.
///
/// One quarter turn sends `(x, y)` to `(height − y, x)`: a rotation by +90°
/// in image coordinates (clockwise on screen, since y points down) followed
/// by a shift back into the positive quadrant. Image extents are treated as
/// continuous, so four quarter turns are the identity. Returns the objects
/// and the rotated image size.
pub fn rotate_annotations_90k(
    objects: &[AnnotatedObject],
    k: u32,
    width: f64,
    height: f64,
) -> Result<(Vec<AnnotatedObject>, (f64, f64))> {
    if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "image size must be positive, got {width} x {height}"
        )));
    }
    let mut current = objects.to_vec();
    let (mut w, mut h) = (width, height);
    for _ in 0..k % 4 {
        current = current
            .iter()
            .map(|o| {
                let turn = |p: Point| Point::new(h - p.y, p.x);
                let b = &o.obb;
                let c = turn(b.center());
                let obb =
                    OrientedBox::new(c.x, c.y, b.w(), b.h(), b.theta() + FRAC_PI_2)?.canonical();
                Ok(o.map_points(turn, obb))
            })
            .collect::<Result<_>>()?;
        (w, h) = (h, w);
    }
    Ok((current, (w, h)))
}

/// Applies a rigid motion to every annotation (quads and boxes).
pub fn transform_annotations(
    objects: &[AnnotatedObject],
    motion: &RigidMotion,
) -> Vec<AnnotatedObject> {
    objects
        .iter()
        .map(|o| o.map_points(|p| motion.apply(p), o.obb.transformed(motion).canonical()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou_oriented;

    fn names() -> Vec<String> {
        vec!["plane".into(), "ship".into()]
    }

    #[test]
    fn single_square_line() {
        let objs = parse_annotations("0 0 2 0 2 2 0 2 plane 0").unwrap();
        assert_eq!(objs.len(), 1);
        let o = &objs[0];
        assert_eq!(o.category, "plane");
        assert!(!o.difficult);
        let want = [1.0, 1.0, 2.0, 2.0, 0.0];
        for (a, b) in o.obb.to_array().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{:?}", o.obb);
        }
        assert_eq!(o.quad[1], Point::new(2.0, 0.0));
    }

    #[test]
    fn empty_blank_and_metadata() {
        assert!(parse_annotations("").unwrap().is_empty());
        let text = "imagesource:GoogleEarth\r\ngsd:0.5\r\n\r\n  \n0 0 4 0 4 2 0 2 ship 1 \r\n";
        let objs = parse_annotations(text).unwrap();
        assert_eq!(objs.len(), 1);
        assert!(objs[0].difficult);
        assert_eq!(objs[0].category, "ship");
    }

    #[test]
    fn errors_are_located() {
        let e = parse_annotations("gsd:1\n0 0 2 x 2 2 0 2 plane 0\n").unwrap_err();
        let Error::Parse(p) = e else { panic!("{e:?}") };
        assert_eq!((p.line, p.column), (2, 7));

        let Error::Parse(p) = parse_annotations("0 0 2 0 2 2 0 2 plane").unwrap_err() else {
            panic!()
        };
        assert_eq!((p.line, p.column), (1, 22));

        let Error::Parse(p) = parse_annotations("0 0 2 0 2 2 0 2 plane 2").unwrap_err() else {
            panic!()
        };
        assert_eq!((p.line, p.column), (1, 23));

        let Error::Parse(p) = parse_annotations("0 0 2 0 2 2 0 2 plane 0 extra").unwrap_err()
        else {
            panic!()
        };
        assert_eq!(p.column, 25);

        // Collinear corners cannot form a box.
        assert!(parse_annotations("0 0 1 0 2 0 3 0 plane 0").is_err());
        assert!(parse_annotations("0 0 2 0 2 2 0 nan plane 0").is_err());
    }

    #[test]
    fn lenient_collects_errors() {
        let text = "0 0 2 0 2 2 0 2 plane 0\nbad line\n0 0 2 0 2 2 0 2 ship 1\n1 2 3\n";
        let (objs, errs) = parse_annotations_lenient(text);
        assert_eq!(objs.len(), 2);
        assert_eq!(errs.iter().map(|e| e.line).collect::<Vec<_>>(), vec![2, 4]);
    }

    #[test]
    fn annotation_roundtrip_is_exact() {
        let text = "0.1 0.2 10.35 0.2 10.35 5.7 0.1 5.7 plane 0\n3 3 9 4 8 9 2 8 ship 1\n";
        let a = parse_annotations(text).unwrap();
        let b = parse_annotations(&write_annotations(&a)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn detection_writer() {
        assert_eq!(write_detections(&[], &names()).unwrap(), "");
        let b = OrientedBox::new(5.0, 3.0, 4.0, 2.0, 0.0).unwrap();
        let d = Detection::new(b, 0.75, 1).unwrap();
        let text = write_detections(&[d], &names()).unwrap();
        assert_eq!(
            text,
            "ship 0.75 3.000 2.000 7.000 2.000 7.000 4.000 3.000 4.000\n"
        );
        let bad = Detection::new(b, 0.5, 2).unwrap();
        assert_eq!(
            write_detections(&[bad], &names()),
            Err(Error::UnknownClass(2))
        );
    }

    #[test]
    fn detection_order_and_roundtrip() {
        let dets = [
            Detection::new(OrientedBox::new(10.0, 10.0, 8.0, 3.0, 0.4).unwrap(), 0.5, 0).unwrap(),
            Detection::new(OrientedBox::new(30.0, 12.0, 9.0, 2.0, 2.0).unwrap(), 0.9, 1).unwrap(),
            Detection::new(OrientedBox::new(50.0, 20.0, 5.0, 5.0, 0.1).unwrap(), 0.5, 1).unwrap(),
        ];
        let text = write_detections(&dets, &names()).unwrap();
        let back = parse_detections(&text).unwrap();
        let order = [1, 0, 2];
        for (rec, &i) in back.iter().zip(&order) {
            let d = rec.to_detection(&names()).unwrap();
            assert_eq!(d.class_id, dets[i].class_id);
            assert_eq!(d.score, dets[i].score);
            for (p, q) in rec.quad.iter().zip(corners_of(&dets[i].obb).vertices()) {
                assert!((p.x - q.x).abs() <= 0.0005 + 1e-9 && (p.y - q.y).abs() <= 0.0005 + 1e-9);
            }
            assert!(iou_oriented(&d.obb, &dets[i].obb) > 0.999);
        }
        assert!(parse_detections("plane 1.5 0 0 1 0 1 1 0 1").is_err());
        assert!(parse_detections("plane 0.5 0 0 1 0 1 1 0").is_err());
    }

    #[test]
    fn tiling_examples() {
        let xs: Vec<usize> = tile_windows(2048, 1024, 1024, 824)
            .unwrap()
            .iter()
            .map(|t| t.0)
            .collect();
        assert_eq!(xs, vec![0, 824, 1024]);
        assert!(tile_windows(2048, 1024, 1024, 824)
            .unwrap()
            .iter()
            .all(|t| t.1 == 0));
        assert_eq!(tile_windows(1024, 1024, 1024, 824).unwrap(), vec![(0, 0)]);
        assert_eq!(tile_windows(1024, 1024, 1024, 512).unwrap(), vec![(0, 0)]);
        assert_eq!(tile_windows(300, 200, 1024, 824).unwrap(), vec![(0, 0)]);
        assert_eq!(
            tile_windows(10, 4, 4, 3).unwrap(),
            vec![(0, 0), (3, 0), (6, 0)]
        );
        assert!(tile_windows(10, 10, 0, 1).is_err());
        assert!(tile_windows(10, 10, 4, 0).is_err());
        assert!(tile_windows(10, 10, 4, 5).is_err());
    }

    #[test]
    fn transfer_rules() {
        let objs = parse_annotations(
            "10 10 20 10 20 20 10 20 plane 0\n\
             200 200 210 200 210 210 200 210 plane 0\n\
             95 40 105 40 105 50 95 50 ship 0\n",
        )
        .unwrap();
        let w = Window {
            x0: 0,
            y0: 0,
            width: 101,
            height: 101,
        };
        let t = transfer_annotations(&objs, w);
        assert_eq!(t.contained.len(), 2);
        assert!(!t.contained[0].out_of_window);
        assert!(t.contained[1].out_of_window);

        let shifted = transfer_annotations(&objs, Window { x0: 5, y0: 7, ..w });
        let o = &shifted.contained[0].object;
        assert_eq!(o.quad[0], Point::new(5.0, 3.0));
        assert!((o.obb.cx() - 10.0).abs() < 1e-12 && (o.obb.cy() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_and_rotation() {
        let objs = parse_annotations("10 10 30 10 30 20 10 20 plane 0\n").unwrap();
        let half = scale_annotations(&objs, 0.5).unwrap();
        assert_eq!(half[0].quad[2], Point::new(15.0, 10.0));
        assert!((half[0].obb.w() - 10.0).abs() < 1e-12);
        assert!(scale_annotations(&objs, 0.0).is_err());

        let (rot, dims) = rotate_annotations_90k(&objs, 1, 100.0, 60.0).unwrap();
        assert_eq!(dims, (60.0, 100.0));
        assert_eq!(rot[0].quad[0], Point::new(50.0, 10.0));
        let b = rot[0].obb;
        assert!((b.cx() - 45.0).abs() < 1e-12 && (b.cy() - 20.0).abs() < 1e-12);
        assert!((b.theta() - FRAC_PI_2).abs() < 1e-12);
        let refit = box_from_quad(&rot[0].quad).unwrap();
        assert!(iou_oriented(&refit, &b) > 1.0 - 1e-9);

        let (full, dims) = rotate_annotations_90k(&objs, 4, 100.0, 60.0).unwrap();
        assert_eq!(dims, (100.0, 60.0));
        assert_eq!(full[0].quad, objs[0].quad);
    }

    #[test]
    fn tokenizer_columns_count_characters() {
        let toks = tokenize("é  ab\tc");
        let cols: Vec<usize> = toks.iter().map(|t| t.column).collect();
        assert_eq!(cols, vec![1, 4, 7]);
    }
}
