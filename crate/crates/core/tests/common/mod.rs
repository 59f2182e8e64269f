#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use owseg::fixture::{self, FixturePaths};

pub fn owseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_owseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn demo_set(dir: &Path) -> FixturePaths {
    fixture::write_demo_set(dir, 7).expect("fixture written")
}

pub fn run_args<'a>(paths: &'a FixturePaths, out: &'a Path) -> Vec<String> {
    vec![
        "run".into(),
        "--manifest".into(),
        paths.manifest.display().to_string(),
        "--vocabulary".into(),
        paths.vocabulary.display().to_string(),
        "--dictionary".into(),
        paths.dictionary.display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ]
}

pub fn owseg_owned(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    owseg(&refs)
}

/// Relative path -> file bytes for every file under `root`.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}
