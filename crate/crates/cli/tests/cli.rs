use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rroi_core::dota::{parse_annotations, parse_detections, write_detections};
use rroi_core::geometry::{iou_oriented, OrientedBox};
use rroi_core::nms::{rotated_nms, Detection};
use tempfile::TempDir;

fn rroi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rroi"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const THREE: &str =
    "0 0 10 0 10 5 0 5 ship 0\n20 20 30 20 30 40 20 40 harbor 0\n4 0 14 0 14 5 4 5 ship 1\n";

#[test]
fn iou_of_a_file_with_itself_has_unit_diagonal() {
    let tmp = TempDir::new().unwrap();
    let a = write(tmp.path(), "a.txt", THREE);
    let o = rroi(&["iou", s(&a), s(&a)]);
    assert!(o.status.success());
    let rows: Vec<Vec<f64>> = stdout(&o)
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    let objs = parse_annotations(THREE).unwrap();
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 3);
        assert!((row[i] - 1.0).abs() < 1e-12);
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, iou_oriented(&objs[i].obb, &objs[j].obb));
        }
    }
}

#[test]
fn iou_of_disjoint_sets_is_zero() {
    let tmp = TempDir::new().unwrap();
    let a = write(tmp.path(), "a.txt", THREE);
    let b = write(
        tmp.path(),
        "b.txt",
        "100 100 110 100 110 105 100 105 ship 0\n",
    );
    let out = tmp.path().join("m.csv");
    let o = rroi(&["iou", s(&a), s(&b), "--out", s(&out)]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert_eq!(fs::read_to_string(out).unwrap(), "0\n0\n0\n");
}

#[test]
fn empty_inputs_give_empty_outputs() {
    let tmp = TempDir::new().unwrap();
    let e = write(tmp.path(), "empty.txt", "");
    let o = rroi(&["iou", s(&e), s(&e)]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let o = rroi(&["nms", s(&e)]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let o = rroi(&["eval", "--gt", s(&e), "--det", s(&e)]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
}

#[test]
fn nms_matches_the_library() {
    let tmp = TempDir::new().unwrap();
    let names = vec!["ship".to_string()];
    let boxes = [
        (10.0, 10.0, 0.0, 0.9),
        (11.0, 10.0, 0.05, 0.8),
        (40.0, 40.0, 1.0, 0.7),
        (10.0, 10.0, 1.5, 0.6),
    ];
    let dets: Vec<Detection> = boxes
        .iter()
        .map(|&(x, y, t, sc)| {
            Detection::new(OrientedBox::new(x, y, 20.0, 6.0, t).unwrap(), sc, 0).unwrap()
        })
        .collect();
    let input = write(
        tmp.path(),
        "det.txt",
        &write_detections(&dets, &names).unwrap(),
    );
    let o = rroi(&["nms", s(&input), "--iou-thresh", "0.3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // Go through the written text so both sides see the same rounding.
    let parsed: Vec<Detection> = parse_detections(&fs::read_to_string(&input).unwrap())
        .unwrap()
        .iter()
        .map(|r| r.to_detection(&names).unwrap())
        .collect();
    let kept: Vec<Detection> = rotated_nms(&parsed, 0.3)
        .unwrap()
        .into_iter()
        .map(|i| parsed[i])
        .collect();
    assert_eq!(stdout(&o), write_detections(&kept, &names).unwrap());
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn tile_reports_windows_and_writes_files() {
    let tmp = TempDir::new().unwrap();
    let a = write(tmp.path(), "P7.txt", "imagesource:x\n100 100 140 100 140 120 100 120 ship 0\n1500 10 1560 10 1560 30 1500 30 plane 0\n");
    let dir = tmp.path().join("tiles");
    let o = rroi(&[
        "tile",
        s(&a),
        "--width",
        "2048",
        "--height",
        "1024",
        "--out-dir",
        s(&dir),
    ]);
    assert!(o.status.success());
    assert_eq!(
        stdout(&o),
        "x0,y0,width,height,objects,out_of_window\n0,0,1024,1024,1,0\n824,0,1024,1024,1,0\n1024,0,1024,1024,1,0\n"
    );
    let second = fs::read_to_string(dir.join("P7__824__0.txt")).unwrap();
    let objs = parse_annotations(&second).unwrap();
    assert_eq!(objs.len(), 1);
    assert!((objs[0].obb.cx() - (1530.0 - 824.0)).abs() < 1e-9);
}

#[test]
fn eval_scores_a_perfect_detection_file() {
    let tmp = TempDir::new().unwrap();
    let gt = write(tmp.path(), "gt.txt", THREE);
    let det = write(
        tmp.path(),
        "det.txt",
        "ship 0.9 0 0 10 0 10 5 0 5\nharbor 0.8 20 20 30 20 30 40 20 40\n",
    );
    let out = tmp.path().join("report");
    let o = rroi(&[
        "eval",
        "--gt",
        s(&gt),
        "--det",
        s(&det),
        "--out-dir",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(out.join("eval_summary.txt")).unwrap(),
        stdout(&o)
    );
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(json["map"], 1.0);
}

#[test]
fn bad_flags_exit_with_usage_status() {
    let tmp = TempDir::new().unwrap();
    let a = write(tmp.path(), "a.txt", THREE);
    assert_eq!(rroi(&["iou", s(&a)]).status.code(), Some(2));
    assert_eq!(rroi(&["nms", s(&a), "--frobnicate"]).status.code(), Some(2));
    assert_eq!(
        rroi(&["nms", s(&a), "--iou-thresh", "1.5"]).status.code(),
        Some(2)
    );
    assert_eq!(
        rroi(&[
            "tile",
            s(&a),
            "--width",
            "10",
            "--height",
            "10",
            "--stride",
            "2000"
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        rroi(&["demo", "--context-long", "0.5"]).status.code(),
        Some(2)
    );
}

#[test]
fn parse_errors_exit_one_and_name_the_line() {
    let tmp = TempDir::new().unwrap();
    let bad = write(
        tmp.path(),
        "bad.txt",
        "0 0 10 0 10 5 0 5 ship 0\n0 0 10 0 10 x 0 5 ship 0\n",
    );
    let o = rroi(&["iou", s(&bad), s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("bad.txt"), "{err}");
    let o = rroi(&["iou", s(&tmp.path().join("missing.txt")), s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
}

/// Every file below `root` as (relative path, contents), sorted.
fn files_under(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn demo_is_deterministic_and_writes_artifacts() {
    let tmp = TempDir::new().unwrap();
    let args = [
        "demo",
        "--seed",
        "4",
        "--train-scenes",
        "12",
        "--test-scenes",
        "3",
        "--epochs",
        "20",
    ];
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let oa = rroi(&[&args[..], &["--out-dir", s(&a)]].concat());
    let ob = rroi(&[&args[..], &["--out-dir", s(&b)]].concat());
    assert!(
        oa.status.success(),
        "{}",
        String::from_utf8_lossy(&oa.stderr)
    );
    assert_eq!(oa.stdout, ob.stdout);
    let (fa, fb) = (files_under(&a), files_under(&b));
    assert_eq!(fa, fb);
    let names: Vec<String> = fa.iter().map(|(p, _)| p.display().to_string()).collect();
    for want in [
        "manifest.json",
        "config.json",
        "eval_report.json",
        "eval_summary.txt",
        "stage1_model.json",
        "stage2_model.json",
        "loss_trace.csv",
        "detections/scene_000.txt",
        "ground_truth/scene_002.txt",
    ] {
        assert!(
            names.iter().any(|n| n == want),
            "missing {want} in {names:?}"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 4);
    assert!(stdout(&oa).contains("mean IoU with ground truth"));

    // The written config reproduces the run.
    let c = tmp.path().join("c");
    let oc = rroi(&[
        "demo",
        "--config",
        s(&a.join("config.json")),
        "--out-dir",
        s(&c),
    ]);
    assert!(oc.status.success());
    assert_eq!(oc.stdout, oa.stdout);
    assert_eq!(files_under(&c), fa);
}

#[test]
fn demo_config_rejects_unknown_fields() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", "{\"sed\": 3}");
    let o = rroi(&["demo", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sed"));
}
