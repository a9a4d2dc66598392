//! Synthetic scenes standing in for proposals and backbone features.
//!
//! A scene is a set of randomly posed oriented rectangles. Each object owns
//! a support region (its axis-aligned hull, enlarged) in which the feature
//! map carries analytic fields describing the object: an occupancy mask,
//! normalized displacements to its center, log side ratios, its angle, and
//! its own-frame coordinates. Regions never overlap, and outside them every
//! field is zero.
//!
//! Pooled over a horizontal RoI, the image-frame fields make first-stage
//! offsets approximately linear in the pooled values; pooled over a rotated
//! RoI near the object, the own-frame fields do the same for second-stage
//! offsets. The approximation error is second order in the RoI's deviation
//! from the object's hull (first stage) or from the object itself (second
//! stage).

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assigner::{assign_horizontal, build_targets};
use crate::encoding::OffsetVector;
use crate::error::{Error, Result};
use crate::geometry::{aligned_hull, AlignedBox, OrientedBox, Point};
use crate::roi_align::{rps_roi_align, AlignConfig, FeatureTensor, PooledFeature};

/// Number of analytic fields rendered per pixel.
pub const FIELD_COUNT: usize = 10;

/// Field indices.
pub mod field {
    /// 1 inside the rectangle, 0 elsewhere.
    pub const OCCUPANCY: usize = 0;
    /// `(cx − x) / hull_width`.
    pub const DX: usize = 1;
    /// `(cy − y) / hull_height`.
    pub const DY: usize = 2;
    /// `ln(w / hull_width)`.
    pub const LOG_W: usize = 3;
    /// `ln(h / hull_height)`.
    pub const LOG_H: usize = 4;
    /// `θ / 2π`.
    pub const ANGLE: usize = 5;
    /// Own-frame coordinate along `w`, over `w`.
    pub const U_OVER_W: usize = 6;
    /// Own-frame coordinate along `h`, over `h`.
    pub const V_OVER_H: usize = 7;
    /// Own-frame coordinate along `w`, over `h`.
    pub const U_OVER_H: usize = 8;
    /// Own-frame coordinate along `h`, over `w`.
    pub const V_OVER_W: usize = 9;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    /// Long-to-short side ratio range.
    pub min_aspect: f64,
    pub max_aspect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRanges {
    /// Scenes are square, `image_size` pixels a side.
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_long_side: f64,
    pub max_long_side: f64,
    pub classes: Vec<ClassSpec>,
    pub hrois_per_object: usize,
    /// Relative jitter applied to hull centers and sides to make HRoIs.
    pub hroi_jitter: f64,
    /// Background HRoIs placed away from every object.
    pub negatives_per_scene: usize,
    /// Support region = hull scaled by this factor plus `region_margin`
    /// pixels on every side.
    pub region_scale: f64,
    pub region_margin: f64,
}

impl Default for GeometryRanges {
    fn default() -> Self {
        Self {
            image_size: 128,
            min_objects: 2,
            max_objects: 5,
            min_long_side: 12.0,
            max_long_side: 24.0,
            classes: vec![
                ClassSpec {
                    name: "small-vehicle".into(),
                    min_aspect: 1.5,
                    max_aspect: 2.2,
                },
                ClassSpec {
                    name: "ship".into(),
                    min_aspect: 4.0,
                    max_aspect: 6.0,
                },
            ],
            hrois_per_object: 3,
            hroi_jitter: 0.1,
            negatives_per_scene: 2,
            region_scale: 1.8,
            region_margin: 4.0,
        }
    }
}

impl GeometryRanges {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("geometry ranges: {m}")));
        if self.image_size < 8 {
            return bad("image_size must be >= 8");
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects > max_objects");
        }
        if !(self.min_long_side > 0.0 && self.min_long_side <= self.max_long_side) {
            return bad("long side range must be positive and ordered");
        }
        if self.classes.is_empty() {
            return bad("at least one class is required");
        }
        for c in &self.classes {
            if c.name.is_empty() || !(c.min_aspect >= 1.0 && c.min_aspect <= c.max_aspect) {
                return bad("class aspect ranges must satisfy 1 <= min <= max with a name");
            }
        }
        if !(self.hroi_jitter >= 0.0 && self.hroi_jitter < 1.0) {
            return bad("hroi_jitter must lie in [0, 1)");
        }
        if !(self.region_scale >= 1.0 && self.region_margin >= 0.0) {
            return bad("region must contain the hull");
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub obb: OrientedBox,
    pub class_id: usize,
    /// Where this object's fields are rendered.
    pub region: AlignedBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub size: usize,
    pub objects: Vec<SceneObject>,
    /// Jittered object hulls first (object-major), then background boxes.
    pub hrois: Vec<AlignedBox>,
}

impl Scene {
    pub fn gt_boxes(&self) -> Vec<OrientedBox> {
        self.objects.iter().map(|o| o.obb).collect()
    }

    /// The `FIELD_COUNT` analytic fields at every pixel center.
    pub fn render_fields(&self) -> Result<FeatureTensor> {
        let n = self.size;
        let mut t = FeatureTensor::zeros(n, n, FIELD_COUNT)?;
        for o in &self.objects {
            let (x0, x1) = pixel_span(o.region.xmin(), o.region.xmax(), n);
            let (y0, y1) = pixel_span(o.region.ymin(), o.region.ymax(), n);
            for y in y0..y1 {
                for x in x0..x1 {
                    let v = object_fields(&o.obb, Point::new(x as f64, y as f64));
                    for (c, val) in v.into_iter().enumerate() {
                        t.set(x, y, c, val);
                    }
                }
            }
        }
        Ok(t)
    }

    /// Position-sensitive feature map for `k × k` bins: every bin group
    /// carries the same fields, padded with zero channels up to
    /// `channels_out`.
    pub fn render_features(&self, k: usize, channels_out: usize) -> Result<FeatureTensor> {
        if channels_out < FIELD_COUNT {
            return Err(Error::InvalidArgument(format!(
                "synthetic features need channels_out >= {FIELD_COUNT}, got {channels_out}"
            )));
        }
        if k == 0 {
            return Err(Error::Shape("k must be >= 1".into()));
        }
        let fields = self.render_fields()?;
        let n = self.size;
        let channels = k * k * channels_out;
        let mut data = vec![0.0; n * n * channels];
        for (pixel, out) in data.chunks_exact_mut(channels).enumerate() {
            let src = &fields.data()[pixel * FIELD_COUNT..][..FIELD_COUNT];
            if src.iter().all(|&v| v == 0.0) {
                continue;
            }
            for group in out.chunks_exact_mut(channels_out) {
                group[..FIELD_COUNT].copy_from_slice(src);
            }
        }
        FeatureTensor::from_vec(n, n, channels, data)
    }
}

fn pixel_span(lo: f64, hi: f64, n: usize) -> (usize, usize) {
    let a = lo.ceil().max(0.0) as usize;
    let b = ((hi.floor() + 1.0).max(0.0) as usize).min(n);
    (a.min(b), b)
}

fn object_fields(obb: &OrientedBox, p: Point) -> [f64; FIELD_COUNT] {
    let hull = aligned_hull(obb);
    let (hw, hh) = (hull.width(), hull.height());
    let local = obb.world_to_local(p);
    let mut v = [0.0; FIELD_COUNT];
    v[field::OCCUPANCY] = if obb.contains(p) { 1.0 } else { 0.0 };
    v[field::DX] = (obb.cx() - p.x) / hw;
    v[field::DY] = (obb.cy() - p.y) / hh;
    v[field::LOG_W] = (obb.w() / hw).ln();
    v[field::LOG_H] = (obb.h() / hh).ln();
    v[field::ANGLE] = obb.theta() / TAU;
    v[field::U_OVER_W] = local.x / obb.w();
    v[field::V_OVER_H] = local.y / obb.h();
    v[field::U_OVER_H] = local.x / obb.h();
    v[field::V_OVER_W] = local.y / obb.w();
    v
}

fn support_region(obb: &OrientedBox, ranges: &GeometryRanges) -> Result<AlignedBox> {
    let hull = aligned_hull(obb);
    let c = hull.center();
    AlignedBox::from_center(
        c.x,
        c.y,
        hull.width() * ranges.region_scale + 2.0 * ranges.region_margin,
        hull.height() * ranges.region_scale + 2.0 * ranges.region_margin,
    )
}

fn overlaps(a: &AlignedBox, b: &AlignedBox, gap: f64) -> bool {
    a.xmin() < b.xmax() + gap
        && b.xmin() < a.xmax() + gap
        && a.ymin() < b.ymax() + gap
        && b.ymin() < a.ymax() + gap
}

/// Random scene. Objects that cannot be placed without overlapping an
/// existing region after a bounded number of attempts are skipped.
pub fn generate_scene<R: Rng>(rng: &mut R, ranges: &GeometryRanges) -> Result<Scene> {
    ranges.validate()?;
    let size = ranges.image_size as f64;
    let want = rng.random_range(ranges.min_objects..=ranges.max_objects);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(want);
    for _ in 0..want {
        for _attempt in 0..64 {
            let class_id = rng.random_range(0..ranges.classes.len());
            let class = &ranges.classes[class_id];
            let long = rng.random_range(ranges.min_long_side..=ranges.max_long_side);
            let aspect = rng.random_range(class.min_aspect..=class.max_aspect);
            let theta = rng.random_range(0.0..PI);
            let probe = OrientedBox::new(0.0, 0.0, long, long / aspect, theta)?.canonical();
            let region = support_region(&probe, ranges)?;
            let (rw, rh) = (region.width(), region.height());
            if rw >= size - 2.0 || rh >= size - 2.0 {
                continue;
            }
            let cx = rng.random_range(0.5 * rw + 1.0..size - 1.0 - 0.5 * rw);
            let cy = rng.random_range(0.5 * rh + 1.0..size - 1.0 - 0.5 * rh);
            let obb = probe.translated(cx, cy);
            let region = support_region(&obb, ranges)?;
            if objects.iter().any(|o| overlaps(&o.region, &region, 2.0)) {
                continue;
            }
            objects.push(SceneObject {
                obb,
                class_id,
                region,
            });
            break;
        }
    }

    let j = ranges.hroi_jitter;
    let mut hrois = Vec::new();
    for o in &objects {
        let hull = aligned_hull(&o.obb);
        let c = hull.center();
        for _ in 0..ranges.hrois_per_object {
            let (dx, dy, sw, sh) = if j > 0.0 {
                (
                    rng.random_range(-j..j),
                    rng.random_range(-j..j),
                    rng.random_range(-j..j),
                    rng.random_range(-j..j),
                )
            } else {
                (0.0, 0.0, 0.0, 0.0)
            };
            hrois.push(AlignedBox::from_center(
                c.x + dx * hull.width(),
                c.y + dy * hull.height(),
                hull.width() * sw.exp(),
                hull.height() * sh.exp(),
            )?);
        }
    }
    for _ in 0..ranges.negatives_per_scene {
        for _attempt in 0..64 {
            let w = rng.random_range(8.0..20.0);
            let h = rng.random_range(8.0..20.0);
            let cx = rng.random_range(0.5 * w..size - 0.5 * w);
            let cy = rng.random_range(0.5 * h..size - 0.5 * h);
            let b = AlignedBox::from_center(cx, cy, w, h)?;
            if objects.iter().all(|o| !overlaps(&o.region, &b, 1.0)) {
                hrois.push(b);
                break;
            }
        }
    }

    Ok(Scene {
        size: ranges.image_size,
        objects,
        hrois,
    })
}

/// `n` scenes drawn from one generator seeded with `seed`.
pub fn generate_scenes(n: usize, seed: u64, ranges: &GeometryRanges) -> Result<Vec<Scene>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| generate_scene(&mut rng, ranges)).collect()
}

/// Pooling layout shared by feature rendering and RoI warping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub align: AlignConfig,
    pub channels_out: usize,
}

impl Default for FeatureLayout {
    fn default() -> Self {
        Self {
            align: AlignConfig::default(),
            channels_out: crate::roi_align::DEFAULT_CHANNELS_OUT,
        }
    }
}

impl FeatureLayout {
    pub fn feature_dim(&self) -> usize {
        self.align.k * self.align.k * self.channels_out
    }
}

/// One positive HRoI with its pooled feature and first-stage target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HroiSample {
    pub scene: usize,
    pub hroi: usize,
    pub gt: usize,
    pub pooled: PooledFeature,
    pub target: OffsetVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub scenes: Vec<Scene>,
    pub samples: Vec<HroiSample>,
}

impl TrainingSet {
    pub fn learner_samples(&self) -> Vec<super::Sample> {
        self.samples
            .iter()
            .map(|s| super::Sample::from_pooled(&s.pooled, s.target))
            .collect()
    }
}

/// Scenes plus every positive HRoI's pooled feature and offset target
/// (HRoIs matched to hulls of the rotated ground truth, targets encoded
/// against the rotated ground truth).
pub fn synthesize_training_set(
    n: usize,
    seed: u64,
    ranges: &GeometryRanges,
    layout: &FeatureLayout,
    pos_thresh: f64,
) -> Result<TrainingSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one scene".into()));
    }
    let scenes = generate_scenes(n, seed, ranges)?;
    let mut samples = Vec::new();
    for (si, scene) in scenes.iter().enumerate() {
        let features = scene.render_features(layout.align.k, layout.channels_out)?;
        samples.extend(positive_hroi_samples(
            si, scene, &features, layout, pos_thresh,
        )?);
    }
    Ok(TrainingSet { scenes, samples })
}

/// Pooled features and targets for the positive HRoIs of one scene, given
/// its rendered features.
pub fn positive_hroi_samples(
    scene_index: usize,
    scene: &Scene,
    features: &FeatureTensor,
    layout: &FeatureLayout,
    pos_thresh: f64,
) -> Result<Vec<HroiSample>> {
    let gts = scene.gt_boxes();
    let assignments = assign_horizontal(&scene.hrois, &gts, pos_thresh)?;
    let lifted: Vec<OrientedBox> = scene.hrois.iter().map(|h| h.to_oriented()).collect();
    let targets = build_targets(&lifted, &assignments, &gts)?;
    targets
        .regression
        .into_iter()
        .map(|(hi, target)| {
            Ok(HroiSample {
                scene: scene_index,
                hroi: hi,
                gt: assignments[hi].gt_index.expect("positive has a gt"),
                pooled: rps_roi_align(
                    features,
                    &lifted[hi],
                    layout.align.k,
                    layout.align.samples_per_bin_side,
                )?,
                target,
            })
        })
        .collect()
}
