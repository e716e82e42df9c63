//! Evaluation measures over externally produced scores.
//!
//! CLIP similarities, zero-shot classifications and relation detections are
//! read from JSON-lines sample files; FID works on binary feature files
//! (see [`fid`]).

pub mod fid;

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

pub use fid::{fid, frechet_distance, gaussian_stats, FeatureSet, GaussianStats};

/// Image-text similarity of the target crop before and after inpainting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub source_similarity: f64,
    pub inpainted_similarity: f64,
    #[serde(default)]
    pub prompt: String,
}

/// Source-crop top-1 label against the inpainted crop's ranked labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationPair {
    pub source_top1: String,
    pub inpainted_topk: Vec<String>,
}

pub type RelationTriple = (String, String, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSets {
    pub ground_truth: BTreeSet<RelationTriple>,
    pub detected: BTreeSet<RelationTriple>,
}

/// Percentage of pairs whose similarity strictly decreased.
pub fn clip_distance(pairs: &[SimilarityPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(ForgeError::EmptyInput("similarity pairs"));
    }
    if let Some(p) = pairs
        .iter()
        .find(|p| !p.source_similarity.is_finite() || !p.inpainted_similarity.is_finite())
    {
        return Err(ForgeError::InvalidParameter(format!("non-finite similarity in {p:?}")));
    }
    let decreased = pairs
        .iter()
        .filter(|p| p.inpainted_similarity < p.source_similarity)
        .count();
    Ok(100.0 * decreased as f64 / pairs.len() as f64)
}

/// Percentage of pairs whose source label is absent from the first `k`
/// inpainted predictions.
pub fn clip_accuracy(pairs: &[ClassificationPair], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(ForgeError::InvalidParameter("k must be at least 1".into()));
    }
    if pairs.is_empty() {
        return Err(ForgeError::EmptyInput("classification pairs"));
    }
    if let Some((i, p)) = pairs.iter().enumerate().find(|(_, p)| p.inpainted_topk.len() < k) {
        return Err(ForgeError::InvalidParameter(format!(
            "pair {i} has {} predictions, top-{k} requested",
            p.inpainted_topk.len()
        )));
    }
    let successes = pairs
        .iter()
        .filter(|p| !p.inpainted_topk[..k].contains(&p.source_top1))
        .count();
    Ok(100.0 * successes as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelSimScore {
    pub score: f64,
    pub scored: usize,
    /// Samples skipped because their ground truth was empty.
    pub excluded: usize,
}

/// Mean per-sample recall of ground-truth relations among detections.
pub fn relsim(samples: &[RelationSets]) -> Result<RelSimScore> {
    let mut total = 0.0;
    let mut scored = 0;
    for s in samples {
        if s.ground_truth.is_empty() {
            continue;
        }
        let hits = s.ground_truth.intersection(&s.detected).count();
        total += hits as f64 / s.ground_truth.len() as f64;
        scored += 1;
    }
    if scored == 0 {
        return Err(ForgeError::EmptyInput("relation samples with ground truth"));
    }
    Ok(RelSimScore {
        score: total / scored as f64,
        scored,
        excluded: samples.len() - scored,
    })
}

/// Read one JSON record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| ForgeError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ForgeError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record =
            serde_json::from_str(&line).map_err(|e| ForgeError::parse(path, format!("line {}: {e}", i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_similarity_pairs(path: &Path) -> Result<Vec<SimilarityPair>> {
    read_jsonl(path)
}

pub fn load_classification_pairs(path: &Path) -> Result<Vec<ClassificationPair>> {
    let pairs: Vec<ClassificationPair> = read_jsonl(path)?;
    for (i, p) in pairs.iter().enumerate() {
        let mut seen = HashSet::new();
        if let Some(dup) = p.inpainted_topk.iter().find(|l| !seen.insert(*l)) {
            return Err(ForgeError::parse(
                path,
                format!("record {}: duplicate label '{dup}'", i + 1),
            ));
        }
    }
    Ok(pairs)
}

pub fn load_relation_sets(path: &Path) -> Result<Vec<RelationSets>> {
    read_jsonl(path)
}
