//! Two-stage synthetic detection run.
//!
//! Horizontal RoIs are pooled and regressed into rotated RoIs by a first
//! linear learner. The rotated RoIs, enlarged for context, are warped with
//! rotated position-sensitive RoI Align and refined by a second learner.
//! The refined boxes are scored, filtered, suppressed, and evaluated against
//! the synthetic ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assigner::{assign_horizontal, assign_rotated, DEFAULT_POS_IOU};
use crate::encoding::{
    decode, decode_raw, encode, enlarge_context_in_frame, OffsetVector, CONTEXT_LONG, CONTEXT_SHORT,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ApMethod, EvalConfig, EvalReport, GroundTruth, ImageResult};
use crate::geometry::{iou_oriented, OrientedBox};
use crate::learner::synthetic::{
    field, generate_scene, positive_hroi_samples, FeatureLayout, GeometryRanges, Scene,
};
use crate::learner::{train, LinearRegressor, Sample, TrainConfig};
use crate::nms::{rotated_nms, score_filter, Detection};
use crate::roi_align::{rps_roi_align, AlignConfig, FeatureTensor, PooledFeature};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k: usize,
    pub samples_per_bin_side: usize,
    pub channels_out: usize,
    /// Final rotated NMS threshold.
    pub nms_thresh: f64,
    /// Detections scoring below this are dropped before NMS.
    pub score_thresh: f64,
    pub pos_iou_thresh: f64,
    pub context_long: f64,
    pub context_short: f64,
    /// Suppress duplicate rotated RoIs before the second stage.
    pub rroi_nms_enabled: bool,
    pub rroi_nms_thresh: f64,
    pub seed: u64,
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Feed exact targets instead of trained predictions.
    pub oracle: bool,
    pub eval_iou_thresh: f64,
    pub ap_method: ApMethod,
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` picks [`TrainConfig::stable_learning_rate`] for each stage.
    pub learning_rate: Option<f64>,
    pub smooth_l1_beta: f64,
    pub geometry: GeometryRanges,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: crate::roi_align::DEFAULT_BINS,
            samples_per_bin_side: crate::roi_align::DEFAULT_SAMPLES_PER_BIN_SIDE,
            channels_out: crate::roi_align::DEFAULT_CHANNELS_OUT,
            nms_thresh: 0.3,
            score_thresh: 0.05,
            pos_iou_thresh: DEFAULT_POS_IOU,
            context_long: CONTEXT_LONG,
            context_short: CONTEXT_SHORT,
            rroi_nms_enabled: false,
            rroi_nms_thresh: 0.7,
            seed: 0,
            train_scenes: 60,
            test_scenes: 10,
            oracle: false,
            eval_iou_thresh: 0.5,
            ap_method: ApMethod::AllPoints,
            epochs: 100,
            batch_size: 32,
            learning_rate: None,
            smooth_l1_beta: 1.0,
            geometry: GeometryRanges::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k == 0 || self.samples_per_bin_side == 0 {
            return bad("k and samples_per_bin_side must be >= 1".into());
        }
        if self.channels_out < crate::learner::synthetic::FIELD_COUNT {
            return bad(format!(
                "channels_out must be >= {}",
                crate::learner::synthetic::FIELD_COUNT
            ));
        }
        for (name, v) in [
            ("nms_thresh", self.nms_thresh),
            ("rroi_nms_thresh", self.rroi_nms_thresh),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("pos_iou_thresh", self.pos_iou_thresh),
            ("eval_iou_thresh", self.eval_iou_thresh),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.score_thresh) {
            return bad(format!(
                "score_thresh must lie in [0, 1], got {}",
                self.score_thresh
            ));
        }
        if !(self.context_long >= 1.0 && self.context_short >= 1.0)
            || !self.context_long.is_finite()
            || !self.context_short.is_finite()
        {
            return bad("context factors must be finite and >= 1".into());
        }
        if self.test_scenes == 0 || (!self.oracle && self.train_scenes == 0) {
            return bad(
                "need at least one test scene, and one training scene unless oracle".into(),
            );
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("learning_rate must be > 0, got {lr}"));
            }
        }
        self.geometry.validate()?;
        self.train_config(0, 1.0).validate()
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            align: AlignConfig {
                k: self.k,
                samples_per_bin_side: self.samples_per_bin_side,
            },
            channels_out: self.channels_out,
        }
    }

    fn train_config(&self, seed: u64, learning_rate: f64) -> TrainConfig {
        TrainConfig {
            learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            smooth_l1_beta: self.smooth_l1_beta,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}

/// Quality of the proposals and boxes on the held-out scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoMetrics {
    pub train_samples_stage1: usize,
    pub train_samples_stage2: usize,
    pub final_loss_stage1: Option<f64>,
    pub final_loss_stage2: Option<f64>,
    pub learning_rate_stage1: Option<f64>,
    pub learning_rate_stage2: Option<f64>,
    /// Positive HRoIs on the test scenes.
    pub matched_hrois: usize,
    /// Mean rotated IoU between each positive HRoI and its ground truth.
    pub mean_hroi_iou: f64,
    /// Mean rotated IoU between the RRoI decoded from that HRoI and the
    /// same ground truth.
    pub mean_rroi_iou: f64,
    /// Mean IoU of the refined boxes from those RRoIs.
    pub mean_refined_iou: f64,
    pub hroi_count: usize,
    /// RRoIs entering the second stage.
    pub rroi_count: usize,
    pub detection_count: usize,
    pub gt_count: usize,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneResult {
    pub scene: Scene,
    pub detections: Vec<Detection>,
}

impl SceneResult {
    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.scene
            .objects
            .iter()
            .map(|o| GroundTruth::new(o.obb, o.class_id))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutput {
    pub config: PipelineConfig,
    pub metrics: DemoMetrics,
    pub report: EvalReport,
    pub scenes: Vec<SceneResult>,
    pub stage1: Option<LinearRegressor>,
    pub stage2: Option<LinearRegressor>,
    pub loss_trace_stage1: Vec<f64>,
    pub loss_trace_stage2: Vec<f64>,
}

/// Run record written next to the demo artifacts. Contains no timestamps or
/// paths so a fixed configuration reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    pub metrics: DemoMetrics,
    pub report: EvalReport,
}

impl DemoOutput {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            tool: "rroi".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.config.clone(),
            metrics: self.metrics.clone(),
            report: self.report.clone(),
        }
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes") + "\n"
    }
}

/// Stage-1 and stage-2 offsets for one scene's RoIs.
enum Regressor<'a> {
    Trained(&'a LinearRegressor),
    Oracle,
}

/// Index of the class whose aspect range lies nearest to `w / h`.
pub fn class_for_aspect(ranges: &GeometryRanges, b: &OrientedBox) -> usize {
    let b = b.canonical();
    let aspect = b.w() / b.h();
    let gap = |i: usize| {
        let c = &ranges.classes[i];
        (c.min_aspect - aspect).max(aspect - c.max_aspect).max(0.0)
    };
    (0..ranges.classes.len())
        .min_by(|&a, &b| gap(a).total_cmp(&gap(b)))
        .unwrap_or(0)
}

fn occupancy(features: &FeatureTensor, b: &OrientedBox, layout: &FeatureLayout) -> Result<f64> {
    let pooled = pool(features, b, layout)?;
    Ok(pooled.channel_mean(field::OCCUPANCY).clamp(0.0, 1.0))
}

fn pool(
    features: &FeatureTensor,
    b: &OrientedBox,
    layout: &FeatureLayout,
) -> Result<PooledFeature> {
    rps_roi_align(
        features,
        b,
        layout.align.k,
        layout.align.samples_per_bin_side,
    )
}

struct StageOne {
    /// Decoded RRoIs in the frame their offsets imply.
    rrois: Vec<OrientedBox>,
    /// Source HRoI of each RRoI.
    sources: Vec<usize>,
    hroi_count: usize,
}

fn stage_one(
    scene: &Scene,
    features: &FeatureTensor,
    model: &Regressor<'_>,
    config: &PipelineConfig,
) -> Result<StageOne> {
    let layout = config.layout();
    let gts = scene.gt_boxes();
    let lifted: Vec<OrientedBox> = scene.hrois.iter().map(|h| h.to_oriented()).collect();
    let oracle_targets = match model {
        Regressor::Oracle => Some(assign_horizontal(
            &scene.hrois,
            &gts,
            config.pos_iou_thresh,
        )?),
        Regressor::Trained(_) => None,
    };
    let mut rrois = Vec::with_capacity(lifted.len());
    for (i, h) in lifted.iter().enumerate() {
        let offsets = match (model, &oracle_targets) {
            (Regressor::Trained(m), _) => {
                m.predict_slice(pool(features, h, &layout)?.as_slice())?
            }
            (Regressor::Oracle, Some(a)) => a[i]
                .gt_index
                .map_or(OffsetVector::default(), |g| encode(h, &gts[g])),
            (Regressor::Oracle, None) => unreachable!(),
        };
        rrois.push(decode_raw(h, &offsets)?);
    }
    let mut sources: Vec<usize> = (0..rrois.len()).collect();
    if config.rroi_nms_enabled {
        let scored = rrois
            .iter()
            .map(|r| Detection::new(r.canonical(), occupancy(features, r, &layout)?, 0))
            .collect::<Result<Vec<_>>>()?;
        let mut kept = rotated_nms(&scored, config.rroi_nms_thresh)?;
        kept.sort_unstable();
        sources = kept;
        rrois = sources.iter().map(|&i| rrois[i]).collect();
    }
    Ok(StageOne {
        rrois,
        sources,
        hroi_count: lifted.len(),
    })
}

fn stage_two_pooled(
    features: &FeatureTensor,
    rroi: &OrientedBox,
    config: &PipelineConfig,
) -> Result<PooledFeature> {
    let warped = enlarge_context_in_frame(rroi, config.context_long, config.context_short)?;
    pool(features, &warped, &config.layout())
}

fn stage_two_samples(
    scene: &Scene,
    features: &FeatureTensor,
    s1: &StageOne,
    config: &PipelineConfig,
) -> Result<Vec<Sample>> {
    let gts = scene.gt_boxes();
    let assignments = assign_rotated(&s1.rrois, &gts, config.pos_iou_thresh)?;
    let mut out = Vec::new();
    for (r, a) in s1.rrois.iter().zip(&assignments) {
        if let Some(g) = a.gt_index {
            let pooled = stage_two_pooled(features, r, config)?;
            out.push(Sample::from_pooled(
                &pooled,
                encode(r, &gts[g]).with_centered_angle(),
            ));
        }
    }
    Ok(out)
}

struct TestScene {
    result: SceneResult,
    hroi_count: usize,
    rroi_count: usize,
    /// (hroi iou, rroi iou, refined iou) per positive HRoI whose RRoI
    /// reached the second stage.
    ious: Vec<(f64, f64, f64)>,
}

fn run_test_scene(
    scene: Scene,
    stage1: &Regressor<'_>,
    stage2: &Regressor<'_>,
    config: &PipelineConfig,
) -> Result<TestScene> {
    let layout = config.layout();
    let features = scene.render_features(config.k, config.channels_out)?;
    let gts = scene.gt_boxes();
    let s1 = stage_one(&scene, &features, stage1, config)?;
    let oracle_assign = match stage2 {
        Regressor::Oracle => Some(assign_rotated(&s1.rrois, &gts, config.pos_iou_thresh)?),
        Regressor::Trained(_) => None,
    };
    let mut refined = Vec::with_capacity(s1.rrois.len());
    for (i, r) in s1.rrois.iter().enumerate() {
        let offsets = match (stage2, &oracle_assign) {
            (Regressor::Trained(m), _) => {
                m.predict_slice(stage_two_pooled(&features, r, config)?.as_slice())?
            }
            (Regressor::Oracle, Some(a)) => a[i].gt_index.map_or(OffsetVector::default(), |g| {
                encode(r, &gts[g]).with_centered_angle()
            }),
            (Regressor::Oracle, None) => unreachable!(),
        };
        refined.push(decode(r, &offsets)?);
    }

    let hroi_assign = assign_horizontal(&scene.hrois, &gts, config.pos_iou_thresh)?;
    let mut ious = Vec::new();
    for (ri, &src) in s1.sources.iter().enumerate() {
        if let Some(g) = hroi_assign[src].gt_index {
            let gt = &gts[g];
            ious.push((
                iou_oriented(&scene.hrois[src].to_oriented(), gt),
                iou_oriented(&s1.rrois[ri], gt),
                iou_oriented(&refined[ri], gt),
            ));
        }
    }

    let mut candidates = Vec::with_capacity(refined.len());
    for b in &refined {
        let score = occupancy(&features, b, &layout)?;
        candidates.push(Detection::new(
            *b,
            score,
            class_for_aspect(&config.geometry, b),
        )?);
    }
    let candidates = score_filter(&candidates, config.score_thresh);
    let detections = rotated_nms(&candidates, config.nms_thresh)?
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    Ok(TestScene {
        hroi_count: s1.hroi_count,
        rroi_count: s1.rrois.len(),
        ious,
        result: SceneResult { scene, detections },
    })
}

fn fit(
    samples: &[Sample],
    config: &PipelineConfig,
    seed: u64,
) -> Result<(crate::learner::TrainOutcome, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "no positive training samples; raise train_scenes or lower pos_iou_thresh".into(),
        ));
    }
    let lr = config
        .learning_rate
        .unwrap_or_else(|| TrainConfig::stable_learning_rate(samples, config.smooth_l1_beta));
    Ok((train(samples, &config.train_config(seed, lr))?, lr))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Generates scenes, trains both stages (unless `config.oracle`), and
/// evaluates the detections on held-out scenes.
///
/// All randomness comes from one ChaCha generator seeded with
/// `config.seed`: training scenes first, then test scenes, then the two
/// learners' shuffle seeds. Per-scene work runs in parallel and is collected
/// in scene order, so the output does not depend on the thread count.
pub fn run_demo(config: &PipelineConfig) -> Result<DemoOutput> {
    config.validate()?;
    let layout = config.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let train_count = if config.oracle {
        0
    } else {
        config.train_scenes
    };
    let train_scenes: Vec<Scene> = (0..train_count)
        .map(|_| generate_scene(&mut rng, &config.geometry))
        .collect::<Result<_>>()?;
    let test_scenes: Vec<Scene> = (0..config.test_scenes)
        .map(|_| generate_scene(&mut rng, &config.geometry))
        .collect::<Result<_>>()?;
    let seed1: u64 = rng.random();
    let seed2: u64 = rng.random();

    let mut metrics = DemoMetrics {
        train_samples_stage1: 0,
        train_samples_stage2: 0,
        final_loss_stage1: None,
        final_loss_stage2: None,
        learning_rate_stage1: None,
        learning_rate_stage2: None,
        matched_hrois: 0,
        mean_hroi_iou: 0.0,
        mean_rroi_iou: 0.0,
        mean_refined_iou: 0.0,
        hroi_count: 0,
        rroi_count: 0,
        detection_count: 0,
        gt_count: 0,
        map: 0.0,
    };
    let (mut trace1, mut trace2) = (Vec::new(), Vec::new());
    let (model1, model2) = if config.oracle {
        (None, None)
    } else {
        let per_scene: Vec<Vec<Sample>> = train_scenes
            .par_iter()
            .enumerate()
            .map(|(si, scene)| {
                let features = scene.render_features(config.k, config.channels_out)?;
                Ok(
                    positive_hroi_samples(si, scene, &features, &layout, config.pos_iou_thresh)?
                        .iter()
                        .map(|s| Sample::from_pooled(&s.pooled, s.target))
                        .collect(),
                )
            })
            .collect::<Result<_>>()?;
        let samples1: Vec<Sample> = per_scene.into_iter().flatten().collect();
        let (out1, lr1) = fit(&samples1, config, seed1)?;
        metrics.train_samples_stage1 = samples1.len();
        metrics.learning_rate_stage1 = Some(lr1);
        metrics.final_loss_stage1 = out1.loss_trace.last().copied();
        trace1 = out1.loss_trace;
        let model1 = out1.model;

        let stage1 = Regressor::Trained(&model1);
        let per_scene: Vec<Vec<Sample>> = train_scenes
            .par_iter()
            .map(|scene| {
                let features = scene.render_features(config.k, config.channels_out)?;
                let s1 = stage_one(scene, &features, &stage1, config)?;
                stage_two_samples(scene, &features, &s1, config)
            })
            .collect::<Result<_>>()?;
        let samples2: Vec<Sample> = per_scene.into_iter().flatten().collect();
        let (out2, lr2) = fit(&samples2, config, seed2)?;
        metrics.train_samples_stage2 = samples2.len();
        metrics.learning_rate_stage2 = Some(lr2);
        metrics.final_loss_stage2 = out2.loss_trace.last().copied();
        trace2 = out2.loss_trace;
        (Some(model1), Some(out2.model))
    };

    let (stage1, stage2) = match (&model1, &model2) {
        (Some(a), Some(b)) => (Regressor::Trained(a), Regressor::Trained(b)),
        _ => (Regressor::Oracle, Regressor::Oracle),
    };
    let tested: Vec<TestScene> = test_scenes
        .into_par_iter()
        .map(|scene| run_test_scene(scene, &stage1, &stage2, config))
        .collect::<Result<_>>()?;

    let ious: Vec<(f64, f64, f64)> = tested.iter().flat_map(|t| t.ious.iter().copied()).collect();
    metrics.matched_hrois = ious.len();
    metrics.mean_hroi_iou = mean(ious.iter().map(|t| t.0));
    metrics.mean_rroi_iou = mean(ious.iter().map(|t| t.1));
    metrics.mean_refined_iou = mean(ious.iter().map(|t| t.2));
    metrics.hroi_count = tested.iter().map(|t| t.hroi_count).sum();
    metrics.rroi_count = tested.iter().map(|t| t.rroi_count).sum();
    metrics.detection_count = tested.iter().map(|t| t.result.detections.len()).sum();
    metrics.gt_count = tested.iter().map(|t| t.result.scene.objects.len()).sum();

    let images: Vec<ImageResult> = tested
        .iter()
        .map(|t| ImageResult {
            detections: t.result.detections.clone(),
            ground_truth: t.result.ground_truth(),
        })
        .collect();
    let eval_config = EvalConfig {
        iou_thresh: config.eval_iou_thresh,
        method: config.ap_method,
    };
    let report = evaluate(&images, &config.geometry.class_names(), &eval_config)?;
    metrics.map = report.map;

    Ok(DemoOutput {
        config: config.clone(),
        metrics,
        report,
        scenes: tested.into_iter().map(|t| t.result).collect(),
        stage1: model1,
        stage2: model2,
        loss_trace_stage1: trace1,
        loss_trace_stage2: trace2,
    })
}
