//! Occurrence tables over a built dataset.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{ForgeError, Result};
use crate::scene_graph::{ImageId, SceneGraph};

use super::manifest::DatasetRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Count {
    pub name: String,
    pub count: u64,
}

/// Tables sorted by descending count, ties in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    /// Classes of removed objects, one count per record.
    pub removable: Vec<Count>,
    /// Classes of objects the removed objects relate to, i.e. the objects
    /// available to referring expressions. Counted once per record.
    pub reference: Vec<Count>,
    /// Predicates of every relation in the images that appear in the
    /// manifest.
    pub relations: Vec<Count>,
}

fn sorted(counts: BTreeMap<String, u64>) -> Vec<Count> {
    let mut out: Vec<Count> = counts.into_iter().map(|(name, count)| Count { name, count }).collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.name.cmp(&b.name)));
    out
}

pub fn emit_statistics(records: &[DatasetRecord], graphs: &[SceneGraph]) -> CorpusStats {
    let by_id: HashMap<&ImageId, &SceneGraph> = graphs.iter().map(|g| (&g.image_id, g)).collect();
    let mut removable = BTreeMap::new();
    let mut reference = BTreeMap::new();
    for r in records {
        *removable.entry(r.object_name.clone()).or_default() += 1;
        let Some(node) = by_id
            .get(&r.image_id)
            .and_then(|g| g.object(&r.object_id).map(|n| (g, n)))
        else {
            continue;
        };
        let (graph, node) = node;
        let targets: BTreeSet<_> = node.relations.iter().filter_map(|rel| rel.target.as_ref()).collect();
        for t in targets {
            if let Some(obj) = graph.object(t) {
                *reference.entry(obj.name.clone()).or_default() += 1;
            }
        }
    }

    let images: BTreeSet<&ImageId> = records.iter().map(|r| &r.image_id).collect();
    let mut relations = BTreeMap::new();
    for image in images {
        if let Some(g) = by_id.get(image) {
            for node in g.objects.values() {
                for rel in node.relations.iter().filter(|r| !r.is_synthesized()) {
                    *relations.entry(rel.predicate.clone()).or_default() += 1;
                }
            }
        }
    }

    CorpusStats {
        removable: sorted(removable),
        reference: sorted(reference),
        relations: sorted(relations),
    }
}

impl CorpusStats {
    /// `name<TAB>role<TAB>count` rows, removable role first.
    pub fn objects_tsv(&self) -> String {
        let mut out = String::from("name\trole\tcount\n");
        for (role, rows) in [("removable", &self.removable), ("reference", &self.reference)] {
            for c in rows {
                let _ = writeln!(out, "{}\t{role}\t{}", c.name, c.count);
            }
        }
        out
    }

    pub fn relations_tsv(&self) -> String {
        let mut out = String::from("predicate\tcount\n");
        for c in &self.relations {
            let _ = writeln!(out, "{}\t{}", c.name, c.count);
        }
        out
    }

    /// Write `objects.tsv`, `relations.tsv` and `stats.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| ForgeError::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| ForgeError::io(&path, e))
        };
        write("objects.tsv", self.objects_tsv())?;
        write("relations.tsv", self.relations_tsv())?;
        let mut json = serde_json::to_string_pretty(self).map_err(|e| ForgeError::parse(dir, e))?;
        json.push('\n');
        write("stats.json", json)
    }
}
