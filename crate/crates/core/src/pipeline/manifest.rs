use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;

/// One JSON Lines record of a batch manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image_id: String,
    pub embedding_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_tags_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name_sim_path: Option<PathBuf>,
}

impl ManifestRecord {
    /// Relative paths joined onto `base`.
    pub fn resolved(&self, base: &Path) -> Self {
        let join = |p: &PathBuf| if p.is_relative() { base.join(p) } else { p.clone() };
        Self {
            image_id: self.image_id.clone(),
            embedding_path: join(&self.embedding_path),
            gt_mask_path: self.gt_mask_path.as_ref().map(join),
            gt_names: self.gt_names.clone(),
            external_tags_path: self.external_tags_path.as_ref().map(join),
            name_sim_path: self.name_sim_path.as_ref().map(join),
        }
    }
}

/// Image ids name output directories, so they must be a single plain path
/// component.
pub fn check_image_id(id: &str) -> Result<(), String> {
    if id.is_empty() {
        return Err("image_id is empty".into());
    }
    if id == "." || id == ".." {
        return Err(format!("image_id {id:?} is reserved"));
    }
    if let Some(c) = id.chars().find(|c| matches!(c, '/' | '\\' | '\0') || c.is_control()) {
        return Err(format!("image_id {id:?} contains {c:?}"));
    }
    Ok(())
}

/// Parses JSON Lines. Blank lines are skipped; line numbers are 1-based.
pub fn parse_manifest(text: &[u8]) -> Result<Vec<ManifestRecord>, PipelineError> {
    let text = std::str::from_utf8(text).map_err(|e| PipelineError::Manifest {
        line: 0,
        reason: format!("not UTF-8: {e}"),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| PipelineError::Manifest {
            line: i + 1,
            reason: e.to_string(),
        })?;
        check_image_id(&rec.image_id).map_err(|reason| PipelineError::Manifest { line: i + 1, reason })?;
        out.push(rec);
    }
    Ok(out)
}

pub(crate) fn duplicate_ids(records: &[ManifestRecord]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dup: Vec<String> = records
        .iter()
        .filter(|r| !seen.insert(r.image_id.as_str()))
        .map(|r| r.image_id.clone())
        .collect();
    dup.sort();
    dup.dedup();
    dup
}

/// Pairwise similarity between generated candidate names (`rows`) and
/// ground-truth names (`cols`), each value in [0, 1]. Extra top-level keys
/// are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NameSimilarity {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub similarity: Vec<Vec<f64>>,
    /// How raw similarities were mapped into [0, 1], e.g. `"(1+cos)/2"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<String>,
}

fn unique(names: &[String], what: &str) -> Result<(), PipelineError> {
    let mut seen = HashSet::new();
    match names.iter().find(|n| !seen.insert(n.as_str())) {
        Some(n) => Err(PipelineError::NameSimilarity(format!("duplicate {what} name {n:?}"))),
        None => Ok(()),
    }
}

pub fn parse_name_similarity(bytes: &[u8]) -> Result<NameSimilarity, PipelineError> {
    let ns: NameSimilarity = serde_json::from_slice(bytes).map_err(|e| PipelineError::NameSimilarity(e.to_string()))?;
    unique(&ns.rows, "row")?;
    unique(&ns.cols, "column")?;
    if ns.similarity.len() != ns.rows.len() {
        return Err(PipelineError::NameSimilarity(format!(
            "{} rows of values for {} row names",
            ns.similarity.len(),
            ns.rows.len()
        )));
    }
    for (i, row) in ns.similarity.iter().enumerate() {
        if row.len() != ns.cols.len() {
            return Err(PipelineError::NameSimilarity(format!(
                "row {i} has {} values, expected {}",
                row.len(),
                ns.cols.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(PipelineError::NameSimilarity(format!(
                "row {i} has value {v} outside [0, 1]"
            )));
        }
    }
    Ok(ns)
}

impl NameSimilarity {
    /// Matrix for `generated` x `ground_truth`. Generated names missing from
    /// `rows` score 0 against everything; ground-truth names must be present.
    pub fn matrix(&self, generated: &[String], ground_truth: &[String]) -> Result<Vec<Vec<f64>>, PipelineError> {
        let rows: HashMap<&str, usize> = self.rows.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let cols: HashMap<&str, usize> = self.cols.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let col_idx = ground_truth
            .iter()
            .map(|g| {
                cols.get(g.as_str())
                    .copied()
                    .ok_or_else(|| PipelineError::NameSimilarity(format!("ground-truth name {g:?} has no column")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(generated
            .iter()
            .map(|n| match rows.get(n.as_str()) {
                Some(&r) => col_idx.iter().map(|&c| self.similarity[r][c]).collect(),
                None => vec![0.0; col_idx.len()],
            })
            .collect())
    }
}

/// Exact string match: 1 for equal names, 0 otherwise.
pub(crate) fn exact_match_matrix(generated: &[String], ground_truth: &[String]) -> Vec<Vec<f64>> {
    generated
        .iter()
        .map(|n| ground_truth.iter().map(|g| if n == g { 1.0 } else { 0.0 }).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records_and_skips_blanks() {
        let text = br#"{"image_id": "a", "embedding_path": "a.clpe"}

{"image_id": "b", "embedding_path": "/abs/b.clpe", "gt_mask_path": "b.pgm", "gt_names": ["x"]}
"#;
        let recs = parse_manifest(text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].gt_names.as_deref(), Some(&["x".to_string()][..]));
        let r = recs[1].resolved(Path::new("/data"));
        assert_eq!(r.embedding_path, PathBuf::from("/abs/b.clpe"));
        assert_eq!(r.gt_mask_path, Some(PathBuf::from("/data/b.pgm")));
    }

    #[test]
    fn reports_line_numbers() {
        let text = b"{\"image_id\": \"a\", \"embedding_path\": \"a\"}\n{\"image_id\": 3}\n";
        match parse_manifest(text) {
            Err(PipelineError::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_path_like_ids() {
        for id in ["", ".", "..", "a/b", "a\\b"] {
            let line = serde_json::json!({"image_id": id, "embedding_path": "x"}).to_string();
            assert!(parse_manifest(line.as_bytes()).is_err(), "{id:?}");
        }
    }

    #[test]
    fn finds_duplicates() {
        let rec = |id: &str| ManifestRecord {
            image_id: id.into(),
            embedding_path: "x".into(),
            gt_mask_path: None,
            gt_names: None,
            external_tags_path: None,
            name_sim_path: None,
        };
        assert_eq!(
            duplicate_ids(&[rec("a"), rec("b"), rec("a"), rec("a")]),
            vec!["a".to_string()]
        );
    }

    #[test]
    fn name_similarity_shape_checked() {
        assert!(parse_name_similarity(br#"{"rows":["a"],"cols":["x","y"],"similarity":[[0.5]]}"#).is_err());
        assert!(parse_name_similarity(br#"{"rows":["a"],"cols":["x"],"similarity":[[1.5]]}"#).is_err());
        assert!(parse_name_similarity(br#"{"rows":["a","a"],"cols":[],"similarity":[[],[]]}"#).is_err());
        let ns = parse_name_similarity(br#"{"rows":["a","b"],"cols":["x","y"],"similarity":[[0.1,0.2],[0.3,0.4]]}"#)
            .unwrap();
        let m = ns
            .matrix(&["b".into(), "zz".into()], &["y".into(), "x".into()])
            .unwrap();
        assert_eq!(m, vec![vec![0.4, 0.3], vec![0.0, 0.0]]);
        assert!(ns.matrix(&["a".into()], &["nope".into()]).is_err());
        let with_meta =
            parse_name_similarity(br#"{"rows":[],"cols":[],"similarity":[],"mapping":"(1+cos)/2","model":"m"}"#)
                .unwrap();
        assert_eq!(with_meta.mapping.as_deref(), Some("(1+cos)/2"));
    }
}
