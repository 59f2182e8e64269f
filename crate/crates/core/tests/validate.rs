use std::fs;
use std::path::Path;

use owseg::fixture::{make_image, make_world, single_anomaly_spec, write_fixture_set, FixturePaths, WorldSpec};
use owseg::pipeline::{validate_inputs, RunConfig, ValidationReport};
use tempfile::tempdir;

fn world_set(dir: &Path, dim: usize) -> FixturePaths {
    let world = make_world(&WorldSpec {
        dim,
        ..WorldSpec::default()
    })
    .unwrap();
    let images = vec![
        (
            "a".to_string(),
            make_image(&world, &single_anomaly_spec(&world, 1, 1)).unwrap(),
        ),
        (
            "b".to_string(),
            make_image(&world, &single_anomaly_spec(&world, 2, 2)).unwrap(),
        ),
    ];
    write_fixture_set(dir, &world, &images).unwrap()
}

fn config(p: &FixturePaths) -> RunConfig {
    RunConfig {
        manifest: Some(p.manifest.clone()),
        vocabulary: Some(p.vocabulary.clone()),
        dictionary: Some(p.dictionary.clone()),
        ..RunConfig::default()
    }
}

fn kinds(r: &ValidationReport) -> Vec<(Option<String>, String)> {
    r.issues.iter().map(|i| (i.image_id.clone(), i.kind.clone())).collect()
}

#[test]
fn consistent_inputs_are_ok() {
    let tmp = tempdir().unwrap();
    let r = validate_inputs(&config(&world_set(tmp.path(), 16)));
    assert!(r.is_ok(), "{r:?}");
    assert_eq!(r.images, 2);
}

#[test]
fn vocabulary_dimension_mismatch_is_listed_per_image() {
    let tmp = tempdir().unwrap();
    let small = world_set(&tmp.path().join("small"), 256);
    let large = world_set(&tmp.path().join("large"), 512);
    // 512-d vocabulary and dictionary, 256-d embedding maps
    let cfg = RunConfig {
        vocabulary: Some(large.vocabulary.clone()),
        dictionary: Some(large.dictionary.clone()),
        ..config(&small)
    };
    let r = validate_inputs(&cfg);
    let k = kinds(&r);
    assert_eq!(
        k,
        vec![
            (Some("a".into()), "dimension_mismatch".into()),
            (Some("b".into()), "dimension_mismatch".into())
        ]
    );
    assert!(r.issues[0].message.contains("512"));
    assert!(r.issues[0].message.contains("256"));
}

#[test]
fn dictionary_dimension_mismatch_is_a_config_issue() {
    let tmp = tempdir().unwrap();
    let small = world_set(&tmp.path().join("small"), 8);
    let large = world_set(&tmp.path().join("large"), 12);
    let cfg = RunConfig {
        dictionary: Some(large.dictionary.clone()),
        ..config(&small)
    };
    let r = validate_inputs(&cfg);
    assert_eq!(kinds(&r), vec![(None, "config".into())]);
}

#[test]
fn duplicate_ids_and_missing_files_reported() {
    let tmp = tempdir().unwrap();
    let p = world_set(tmp.path(), 8);
    let mut manifest = fs::read_to_string(&p.manifest).unwrap();
    let first = manifest.lines().next().unwrap().to_string();
    manifest.push_str(&first);
    manifest.push('\n');
    fs::write(&p.manifest, manifest).unwrap();
    fs::remove_file(tmp.path().join("b_gt.pgm")).unwrap();
    let r = validate_inputs(&config(&p));
    let k = kinds(&r);
    assert!(k.contains(&(Some("a".into()), "duplicate_id".into())), "{k:?}");
    assert!(k.contains(&(Some("b".into()), "missing_file".into())), "{k:?}");
}

#[test]
fn malformed_inputs_reported() {
    let tmp = tempdir().unwrap();
    let p = world_set(tmp.path(), 8);
    fs::write(tmp.path().join("a.clpe"), b"CLPE garbage").unwrap();
    fs::write(
        tmp.path().join("b_names.json"),
        br#"{"rows": ["x"], "cols": [], "similarity": []}"#,
    )
    .unwrap();
    let r = validate_inputs(&config(&p));
    let k = kinds(&r);
    assert!(k.contains(&(Some("a".into()), "format".into())), "{k:?}");
    assert!(k.contains(&(Some("b".into()), "name_similarity".into())), "{k:?}");
}

#[test]
fn gt_shape_mismatch_reported() {
    let tmp = tempdir().unwrap();
    let p = world_set(tmp.path(), 8);
    let small = owseg::tensor_io::BinaryMask::empty(3, 3);
    owseg::tensor_io::save_mask(&small, tmp.path().join("a_gt.pgm")).unwrap();
    let r = validate_inputs(&config(&p));
    assert_eq!(kinds(&r), vec![(Some("a".into()), "dimension_mismatch".into())]);
}

#[test]
fn external_tags_checked() {
    let tmp = tempdir().unwrap();
    let p = world_set(tmp.path(), 8);
    let tags = tmp.path().join("tags");
    fs::create_dir(&tags).unwrap();
    fs::write(tags.join("a.txt"), "tag01\ntag02\n").unwrap();
    fs::write(tags.join("b.txt"), "tag02\nnot-a-tag\n").unwrap();
    let cfg = RunConfig {
        dictionary: None,
        tag_vocabulary: Some(p.dictionary.clone()),
        tags_dir: Some(tags.clone()),
        ..config(&p)
    };
    let r = validate_inputs(&cfg);
    assert_eq!(kinds(&r), vec![(Some("b".into()), "missing_tag_embedding".into())]);

    fs::remove_file(tags.join("a.txt")).unwrap();
    let r = validate_inputs(&cfg);
    assert!(kinds(&r).contains(&(Some("a".into()), "missing_file".into())));
}

#[test]
fn invalid_parameters_reported_once() {
    let tmp = tempdir().unwrap();
    let p = world_set(tmp.path(), 8);
    let cfg = RunConfig {
        top_k: 0,
        sigma: -1.0,
        ..config(&p)
    };
    let r = validate_inputs(&cfg);
    assert_eq!(r.issues.len(), 1);
    assert!(r.issues[0].message.contains("top_k"));
    assert!(r.issues[0].message.contains("sigma"));
}
