//! Relation statistics, predicate pruning and relation-phrase assembly.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ForgeError, Result};
use crate::instruction::attribute_augment;
use crate::scene_graph::{BBox, ObjectNode, Relation, SceneGraph};

pub const DEFAULT_RELATION_THRESHOLD: f64 = 1e-4;

/// Corpus-wide predicate counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationFrequencyTable {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl RelationFrequencyTable {
    fn add(&mut self, predicate: &str) {
        *self.counts.entry(predicate.to_owned()).or_default() += 1;
        self.total += 1;
    }

    fn merge(mut self, other: RelationFrequencyTable) -> RelationFrequencyTable {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_default() += v;
        }
        self.total += other.total;
        self
    }

    pub fn frequency(&self, predicate: &str) -> Option<f64> {
        self.counts.get(predicate).map(|&c| c as f64 / self.total as f64)
    }

    pub fn frequencies(&self) -> BTreeMap<String, f64> {
        self.counts
            .iter()
            .map(|(k, &c)| (k.clone(), c as f64 / self.total as f64))
            .collect()
    }

    /// SHA-256 over the sorted `predicate\tcount` lines, hex encoded.
    pub fn corpus_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (predicate, count) in &self.counts {
            hasher.update(predicate.as_bytes());
            hasher.update(b"\t");
            hasher.update(count.to_string().as_bytes());
            hasher.update(b"\n");
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Count every non-synthesized relation in the corpus.
pub fn compute_relation_frequencies(graphs: &[SceneGraph]) -> Result<RelationFrequencyTable> {
    let table = graphs
        .par_iter()
        .fold(RelationFrequencyTable::default, |mut acc, graph| {
            for node in graph.objects.values() {
                for rel in node.relations.iter().filter(|r| !r.is_synthesized()) {
                    acc.add(&rel.predicate);
                }
            }
            acc
        })
        .reduce(RelationFrequencyTable::default, RelationFrequencyTable::merge);
    if table.total == 0 {
        return Err(ForgeError::EmptyRelationCorpus);
    }
    Ok(table)
}

/// Predicates that survive frequency pruning, with the provenance needed to
/// tell whether a cached copy is stale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedPredicates {
    pub threshold: f64,
    pub corpus_hash: String,
    pub predicates: BTreeSet<String>,
}

impl RetainedPredicates {
    pub fn contains(&self, predicate: &str) -> bool {
        self.predicates.contains(predicate)
    }

    /// Retain everything; useful when no pruning is wanted.
    pub fn all_of(table: &RelationFrequencyTable) -> Self {
        filter_relations(table, 0.0)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| ForgeError::parse(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| ForgeError::parse(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| ForgeError::io(path, e))
    }
}

/// Drop predicates whose frequency is strictly lower than `threshold`.
pub fn filter_relations(table: &RelationFrequencyTable, threshold: f64) -> RetainedPredicates {
    let predicates = table
        .counts
        .iter()
        .filter(|(_, &count)| count as f64 / table.total as f64 >= threshold)
        .map(|(p, _)| p.clone())
        .collect();
    RetainedPredicates {
        threshold,
        corpus_hash: table.corpus_hash(),
        predicates,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationThird {
    Left,
    Center,
    Right,
}

impl LocationThird {
    pub fn as_str(&self) -> &'static str {
        match self {
            LocationThird::Left => "left",
            LocationThird::Center => "center",
            LocationThird::Right => "right",
        }
    }

    fn from_index(i: usize) -> Self {
        [LocationThird::Left, LocationThird::Center, LocationThird::Right][i]
    }
}

/// Which horizontal third of the image covers most of the box.
///
/// Ties go to the third holding the box midpoint, then to the leftmost.
/// Coordinates are scaled by 6 so that section bounds (multiples of w/3)
/// and the midpoint are exact integers.
pub fn spatial_location(bbox: &BBox, image_w: i64) -> LocationThird {
    let section = 2 * image_w;
    let x0 = 6 * bbox.x;
    let x1 = 6 * bbox.right();
    let overlaps: Vec<i64> = (0..3)
        .map(|i| {
            let lo = i as i64 * section;
            let hi = lo + section;
            (x1.min(hi) - x0.max(lo)).max(0)
        })
        .collect();
    let best = *overlaps.iter().max().unwrap();
    let mid = 3 * (bbox.x + bbox.right());
    let mid_section = (mid / section).clamp(0, 2) as usize;
    if overlaps[mid_section] == best {
        return LocationThird::from_index(mid_section);
    }
    let first = overlaps.iter().position(|&o| o == best).unwrap();
    LocationThird::from_index(first)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationPhrase {
    pub text: String,
    pub used: Vec<Relation>,
}

/// Render the referring phrase for `node`.
///
/// Every retained relation becomes `"<predicate> the [attribute] <target>"`;
/// they are joined with `" and "` in listing order after dropping repeats.
/// Without any retained relation the phrase is `"at the <third>"`. One
/// attribute draw is made per relation target, in order.
pub fn relation_phrase<R: Rng + ?Sized>(
    node: &ObjectNode,
    graph: &SceneGraph,
    retained: &RetainedPredicates,
    rng: &mut R,
    attribute_probability: f64,
) -> RelationPhrase {
    let mut seen = HashSet::new();
    let kept: Vec<&Relation> = node
        .relations
        .iter()
        .filter(|r| !r.is_synthesized() && retained.contains(&r.predicate))
        .filter(|r| seen.insert((&r.predicate, &r.target)))
        .collect();

    if kept.is_empty() {
        let location = spatial_location(&node.bbox, graph.width);
        let predicate = format!("at the {}", location.as_str());
        return RelationPhrase {
            text: predicate.clone(),
            used: vec![Relation::synthesized(predicate)],
        };
    }

    let mut parts = Vec::with_capacity(kept.len());
    for rel in &kept {
        let target = rel
            .target
            .as_ref()
            .and_then(|t| graph.object(t))
            .expect("validated graph has no dangling relations");
        let part = match attribute_augment(target, rng, attribute_probability) {
            Some(attr) => format!("{} the {} {}", rel.predicate, attr, target.name),
            None => format!("{} the {}", rel.predicate, target.name),
        };
        parts.push(part);
    }
    RelationPhrase {
        text: parts.join(" and "),
        used: kept.into_iter().cloned().collect(),
    }
}
