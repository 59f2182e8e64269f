mod common;

use std::fs;

use common::{demo_set, owseg, owseg_owned, read_json, run_args, tree};
use owseg::pipeline::{ANOMALY_FILE, LABELS_FILE, LABELS_SIDECAR, NAMES_FILE, REPORT_FILE, UNKNOWN_FILE};
use owseg::tensor_io;
use tempfile::tempdir;

#[test]
fn three_fixture_run_writes_layout_and_report() {
    let tmp = tempdir().unwrap();
    let paths = demo_set(&tmp.path().join("in"));
    let out = tmp.path().join("out");
    let res = owseg_owned(&run_args(&paths, &out));
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));

    let report = read_json(&out.join(REPORT_FILE));
    for key in [
        "aupr",
        "auroc",
        "fpr95",
        "fpr90",
        "miou",
        "smiou",
        "name_quality",
        "pixels",
        "images",
    ] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    let per_image = report["per_image"].as_array().unwrap();
    assert_eq!(per_image.len(), 3);
    let ids: Vec<&str> = per_image.iter().map(|p| p["image_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["img_a", "img_b", "img_c"]);
    assert_eq!(report["failed"], 0);

    for id in ids {
        let dir = out.join(id);
        let mask = tensor_io::load_mask(dir.join(UNKNOWN_FILE)).unwrap();
        let heat = tensor_io::load_scalar_map(dir.join(ANOMALY_FILE)).unwrap();
        assert_eq!((heat.height, heat.width), (mask.height, mask.width));
        assert!(heat.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let sidecar = read_json(&dir.join(LABELS_SIDECAR));
        assert_eq!(sidecar["known_count"], 19);
        let labels = tensor_io::decode_pgm(&fs::read(dir.join(LABELS_FILE)).unwrap()).unwrap();
        assert_eq!(labels.pixels.len(), mask.bits.len());
        let names = read_json(&dir.join(NAMES_FILE));
        assert_eq!(names["image_id"], id);
    }
}

#[test]
fn metrics_subcommand_reproduces_run_metrics() {
    let tmp = tempdir().unwrap();
    let paths = demo_set(&tmp.path().join("in"));
    let out = tmp.path().join("out");
    assert_eq!(owseg_owned(&run_args(&paths, &out)).status.code(), Some(0));
    let eval_path = tmp.path().join("eval.json");
    let res = owseg(&[
        "metrics",
        "--manifest",
        paths.manifest.to_str().unwrap(),
        "--predictions",
        out.to_str().unwrap(),
        "--out",
        eval_path.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let run = read_json(&out.join(REPORT_FILE));
    let eval = read_json(&eval_path);
    for key in [
        "aupr",
        "auroc",
        "fpr95",
        "fpr90",
        "miou",
        "miou_per_image",
        "smiou",
        "name_quality",
        "pixels",
        "images",
    ] {
        assert_eq!(run[key], eval[key], "{key}");
    }
}

#[test]
fn empty_manifest_exits_zero_with_empty_report() {
    let tmp = tempdir().unwrap();
    let paths = demo_set(&tmp.path().join("in"));
    fs::write(&paths.manifest, "").unwrap();
    let out = tmp.path().join("out");
    let res = owseg_owned(&run_args(&paths, &out));
    assert_eq!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stderr).contains("no records"));
    let report = read_json(&out.join(REPORT_FILE));
    assert_eq!(report["images"], 0);
    assert_eq!(report["per_image"].as_array().unwrap().len(), 0);
    assert!(report["aupr"].is_null());
}

#[test]
fn strict_mode_names_failing_image() {
    let tmp = tempdir().unwrap();
    let paths = demo_set(&tmp.path().join("in"));
    fs::remove_file(paths.dir.join("img_b.clpe")).unwrap();
    let out = tmp.path().join("out");
    let mut args = run_args(&paths, &out);
    args.push("--strict".into());
    let res = owseg_owned(&args);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("img_b"));
    assert!(!out.join(REPORT_FILE).exists());
}

#[test]
fn lenient_mode_records_failure_and_agrees_with_strict_on_successes() {
    let tmp = tempdir().unwrap();
    let paths = demo_set(&tmp.path().join("in"));
    let clean = tmp.path().join("clean");
    assert_eq!(owseg_owned(&run_args(&paths, &clean)).status.code(), Some(0));

    fs::remove_file(paths.dir.join("img_b.clpe")).unwrap();
    let out = tmp.path().join("out");
    let res = owseg_owned(&run_args(&paths, &out));
    assert_eq!(res.status.code(), Some(3));
    let report = read_json(&out.join(REPORT_FILE));
    assert_eq!(report["failed"], 1);
    assert_eq!(report["errors"][0]["image_id"], "img_b");
    assert_eq!(report["per_image"].as_array().unwrap().len(), 2);
    for id in ["img_a", "img_c"] {
        assert_eq!(tree(&out.join(id)), tree(&clean.join(id)), "{id}");
    }
}

#[test]
fn two_runs_are_byte_identical_across_worker_counts() {
    let tmp = tempdir().unwrap();
    let paths = demo_set(&tmp.path().join("in"));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let mut args_a = run_args(&paths, &a);
    args_a.extend(["--workers".into(), "1".into()]);
    let mut args_b = run_args(&paths, &b);
    args_b.extend(["--workers".into(), "4".into()]);
    assert_eq!(owseg_owned(&args_a).status.code(), Some(0));
    assert_eq!(owseg_owned(&args_b).status.code(), Some(0));
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 16);
    assert_eq!(ta, tb);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(owseg(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(owseg(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(owseg(&["run", "--strategy", "worst"]).status.code(), Some(1));
    assert_eq!(owseg(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_exits_two() {
    let tmp = tempdir().unwrap();
    let paths = demo_set(&tmp.path().join("in"));
    let out = tmp.path().join("out");
    let mut args = run_args(&paths, &out);
    args.extend(["--temperature".into(), "0".into()]);
    let res = owseg_owned(&args);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("temperature"));

    let missing_vocab = owseg(&[
        "run",
        "--manifest",
        paths.manifest.to_str().unwrap(),
        "--vocabulary",
        "/nonexistent/vocab.json",
        "--dictionary",
        paths.dictionary.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(missing_vocab.status.code(), Some(2));
}

#[test]
fn config_file_with_relative_paths() {
    let tmp = tempdir().unwrap();
    demo_set(&tmp.path().join("in"));
    let cfg = tmp.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"manifest": "in/manifest.jsonl", "vocabulary": "in/vocabulary.json",
            "dictionary": "in/dictionary.json", "output": "out", "strategy": "all"}"#,
    )
    .unwrap();
    let res = owseg(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let names = read_json(&tmp.path().join("out/img_c").join(NAMES_FILE));
    assert_eq!(names["strategy"], "all");
}

#[test]
fn validate_accepts_consistent_inputs() {
    let tmp = tempdir().unwrap();
    let paths = demo_set(&tmp.path().join("in"));
    let mut args = run_args(&paths, &tmp.path().join("never"));
    args[0] = "validate".into();
    let res = owseg_owned(&args);
    assert_eq!(res.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(report["images"], 3);
    assert!(report["issues"].as_array().unwrap().is_empty());
    assert!(!tmp.path().join("never").exists());
}
