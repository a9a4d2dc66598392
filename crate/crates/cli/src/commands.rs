use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rroi_core::dota::{
    parse_annotations, parse_detections, tiles, transfer_annotations, write_annotations,
    write_detections, AnnotatedObject, DetectionRecord,
};
use rroi_core::eval::{evaluate, ApMethod, EvalConfig, GroundTruth, ImageResult};
use rroi_core::geometry::{corners_of, iou_oriented};
use rroi_core::nms::{rotated_nms_with, score_filter, Detection, NmsOptions};
use rroi_core::pipeline::{run_demo, PipelineConfig};

use crate::{DemoArgs, EvalArgs, IouArgs, NmsArgs, TileArgs};

/// Bad flag values; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_annotations(path: &Path) -> Result<Vec<AnnotatedObject>> {
    parse_annotations(&read(path)?).with_context(|| format!("{}", path.display()))
}

fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    parse_detections(&read(path)?).with_context(|| format!("{}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: &mut dyn Write, dest: Option<&Path>, text: &str) -> Result<()> {
    match dest {
        Some(p) => write_file(p, text),
        None => out.write_all(text.as_bytes()).context("writing output"),
    }
}

/// Category names in order of first appearance.
fn categories<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = Vec::<String>::new();
    for n in names {
        if !seen.iter().any(|s| s == n) {
            seen.push(n.to_string());
        }
    }
    seen
}

pub fn iou(args: &IouArgs, out: &mut dyn Write) -> Result<()> {
    let a = read_annotations(&args.a)?;
    let b = read_annotations(&args.b)?;
    let mut csv = String::new();
    for x in &a {
        let row: Vec<String> = b
            .iter()
            .map(|y| iou_oriented(&x.obb, &y.obb).to_string())
            .collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    emit(out, args.out.as_deref(), &csv)
}

pub fn nms(args: &NmsArgs, out: &mut dyn Write) -> Result<()> {
    if !(args.iou_thresh > 0.0 && args.iou_thresh <= 1.0) {
        return Err(usage(format!(
            "--iou-thresh must lie in (0, 1], got {}",
            args.iou_thresh
        )));
    }
    if !(0.0..=1.0).contains(&args.score_thresh) {
        return Err(usage(format!(
            "--score-thresh must lie in [0, 1], got {}",
            args.score_thresh
        )));
    }
    let records = read_detections(&args.detections)?;
    let names = categories(records.iter().map(|r| r.category.as_str()));
    let dets = records
        .iter()
        .map(|r| r.to_detection(&names))
        .collect::<rroi_core::Result<Vec<Detection>>>()?;
    let dets = score_filter(&dets, args.score_thresh);
    let opts = NmsOptions {
        iou_thresh: args.iou_thresh,
        class_agnostic: args.class_agnostic,
    };
    let kept: Vec<Detection> = rotated_nms_with(&dets, opts)?
        .into_iter()
        .map(|i| dets[i])
        .collect();
    emit(out, args.out.as_deref(), &write_detections(&kept, &names)?)
}

pub fn tile(args: &TileArgs, out: &mut dyn Write) -> Result<()> {
    if args.window == 0 || args.stride == 0 || args.stride > args.window {
        return Err(usage(format!(
            "need --window >= 1 and 1 <= --stride <= --window, got {} and {}",
            args.window, args.stride
        )));
    }
    let objects = read_annotations(&args.annotations)?;
    let stem = args
        .annotations
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut csv = String::from("x0,y0,width,height,objects,out_of_window\n");
    for w in tiles(args.width, args.height, args.window, args.stride)? {
        let t = transfer_annotations(&objects, w);
        let flagged = t.contained.iter().filter(|o| o.out_of_window).count();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            w.x0,
            w.y0,
            w.width,
            w.height,
            t.contained.len(),
            flagged
        ));
        if let Some(dir) = &args.out_dir {
            let shifted: Vec<AnnotatedObject> = t.contained.into_iter().map(|o| o.object).collect();
            let path = dir.join(format!("{stem}__{}__{}.txt", w.x0, w.y0));
            write_file(&path, &write_annotations(&shifted))?;
        }
    }
    out.write_all(csv.as_bytes()).context("writing output")
}

/// (ground truth, detections) file pairs. Directories pair files by name; a
/// missing detection file means no detections for that image.
fn eval_pairs(gt: &Path, det: &Path) -> Result<Vec<(PathBuf, Option<PathBuf>)>> {
    if gt.is_dir() {
        if !det.is_dir() {
            return Err(usage("--det must be a directory when --gt is"));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(gt)
            .with_context(|| format!("listing {}", gt.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"));
        files.sort();
        Ok(files
            .into_iter()
            .map(|g| {
                let d = det.join(g.file_name().expect("listed files have names"));
                let d = d.is_file().then_some(d);
                (g, d)
            })
            .collect())
    } else {
        if det.is_dir() {
            return Err(usage("--det must be a file when --gt is"));
        }
        Ok(vec![(gt.to_path_buf(), Some(det.to_path_buf()))])
    }
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    if !(args.iou_thresh >= 0.0 && args.iou_thresh < 1.0) {
        return Err(usage(format!(
            "--iou-thresh must lie in [0, 1), got {}",
            args.iou_thresh
        )));
    }
    let mut loaded = Vec::new();
    for (g, d) in eval_pairs(&args.gt, &args.det)? {
        let gts = read_annotations(&g)?;
        let dets = match d {
            Some(d) => read_detections(&d)?,
            None => Vec::new(),
        };
        loaded.push((gts, dets));
    }
    let names: Vec<String> = loaded
        .iter()
        .flat_map(|(g, d)| {
            g.iter()
                .map(|o| o.category.clone())
                .chain(d.iter().map(|r| r.category.clone()))
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let class_of = |c: &str| names.iter().position(|n| n == c).expect("collected above");
    let images: Vec<ImageResult> = loaded
        .iter()
        .map(|(g, d)| {
            Ok(ImageResult {
                detections: d
                    .iter()
                    .map(|r| r.to_detection(&names))
                    .collect::<rroi_core::Result<_>>()?,
                ground_truth: g
                    .iter()
                    .map(|o| GroundTruth {
                        obb: o.obb,
                        class_id: class_of(&o.category),
                        difficult: o.difficult,
                    })
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    if images
        .iter()
        .all(|i| i.ground_truth.iter().all(|g| g.difficult))
    {
        // Nothing to score against.
        return Ok(());
    }
    let config = EvalConfig {
        iou_thresh: args.iou_thresh,
        method: if args.eleven_point {
            ApMethod::ElevenPoint
        } else {
            ApMethod::AllPoints
        },
    };
    let report = evaluate(&images, &names, &config)?;
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_file(&dir.join("eval_report.json"), &(report.to_json() + "\n"))?;
        write_file(&dir.join("eval_summary.txt"), &report.to_text())?;
    }
    out.write_all(report.to_text().as_bytes())
        .context("writing output")
}

fn demo_config(args: &DemoArgs) -> Result<PipelineConfig> {
    let mut c = match &args.config {
        Some(p) => {
            let text = read(p)?;
            serde_json::from_str::<PipelineConfig>(&text)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(v) = args.iou_thresh {
        c.nms_thresh = v;
    }
    if let Some(v) = args.score_thresh {
        c.score_thresh = v;
    }
    if args.rroi_nms {
        c.rroi_nms_enabled = true;
    }
    if args.no_rroi_nms {
        c.rroi_nms_enabled = false;
    }
    if let Some(v) = args.context_long {
        c.context_long = v;
    }
    if let Some(v) = args.context_short {
        c.context_short = v;
    }
    if args.oracle {
        c.oracle = true;
    }
    if let Some(v) = args.train_scenes {
        c.train_scenes = v;
    }
    if let Some(v) = args.test_scenes {
        c.test_scenes = v;
    }
    if let Some(v) = args.epochs {
        c.epochs = v;
    }
    c.validate().map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

pub fn demo(args: &DemoArgs, out: &mut dyn Write) -> Result<()> {
    let config = demo_config(args)?;
    let run = run_demo(&config)?;
    if let Some(dir) = &args.out_dir {
        write_demo(dir, &run)?;
    }
    let m = &run.metrics;
    let mut text = run.report.to_text();
    text.push_str(&format!(
        "mean IoU with ground truth: HRoI {:.4}, RRoI {:.4}, refined {:.4} ({} matched HRoIs)\n",
        m.mean_hroi_iou, m.mean_rroi_iou, m.mean_refined_iou, m.matched_hrois
    ));
    text.push_str(&format!(
        "proposals: {} HRoIs, {} RRoIs into stage two, {} detections, {} objects\n",
        m.hroi_count, m.rroi_count, m.detection_count, m.gt_count
    ));
    out.write_all(text.as_bytes()).context("writing output")
}

fn write_demo(dir: &Path, run: &rroi_core::pipeline::DemoOutput) -> Result<()> {
    let det_dir = dir.join("detections");
    let gt_dir = dir.join("ground_truth");
    for d in [&det_dir, &gt_dir] {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let names = run.config.geometry.class_names();
    for (i, s) in run.scenes.iter().enumerate() {
        let file = format!("scene_{i:03}.txt");
        write_file(
            &det_dir.join(&file),
            &write_detections(&s.detections, &names)?,
        )?;
        let gts = s
            .scene
            .objects
            .iter()
            .map(|o| {
                let v = corners_of(&o.obb);
                let quad = [
                    v.vertices()[0],
                    v.vertices()[1],
                    v.vertices()[2],
                    v.vertices()[3],
                ];
                AnnotatedObject::new(quad, names[o.class_id].clone(), false)
            })
            .collect::<rroi_core::Result<Vec<_>>>()?;
        write_file(&gt_dir.join(&file), &write_annotations(&gts))?;
    }
    write_file(&dir.join("manifest.json"), &run.manifest_json())?;
    write_file(&dir.join("config.json"), &(run.config.to_json() + "\n"))?;
    write_file(
        &dir.join("eval_report.json"),
        &(run.report.to_json() + "\n"),
    )?;
    write_file(&dir.join("eval_summary.txt"), &run.report.to_text())?;
    if let (Some(m1), Some(m2)) = (&run.stage1, &run.stage2) {
        write_file(&dir.join("stage1_model.json"), &m1.to_json())?;
        write_file(&dir.join("stage2_model.json"), &m2.to_json())?;
        let mut csv = String::from("epoch,stage1_loss,stage2_loss\n");
        for (e, (a, b)) in run
            .loss_trace_stage1
            .iter()
            .zip(&run.loss_trace_stage2)
            .enumerate()
        {
            csv.push_str(&format!("{},{a},{b}\n", e + 1));
        }
        write_file(&dir.join("loss_trace.csv"), &csv)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_keep_first_appearance() {
        let names = categories(["ship", "plane", "ship", "harbor"].into_iter());
        assert_eq!(names, vec!["ship", "plane", "harbor"]);
    }

    #[test]
    fn usage_errors_are_detectable_through_context() {
        let e = Err::<(), _>(usage("bad")).context("outer").unwrap_err();
        assert!(e.chain().any(|c| c.is::<UsageError>()));
    }
}
