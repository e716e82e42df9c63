//! Scene-graph annotations: parsing, validation and lookup.
//!
//! The on-disk schema is the GQA release format: one top-level JSON object
//! keyed by image id, each entry carrying `width`, `height` and an `objects`
//! map. Files are consumed one image entry at a time, so a full corpus never
//! has to be materialized as a JSON tree.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::{DeserializeSeed, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ForgeError, Result};

/// Orders ids numerically when both parse as unsigned integers (GQA ids are
/// decimal strings), otherwise lexicographically. Numeric ids sort first.
fn id_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl Ord for $name {
            fn cmp(&self, other: &Self) -> Ordering {
                id_cmp(&self.0, &other.0)
            }
        }

        impl PartialOrd for $name {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(
    /// Identifier of an annotated image.
    ImageId
);
string_id!(
    /// Identifier of an object node, unique within its graph.
    ObjectId
);

/// Axis-aligned pixel rectangle `[x, x + w) × [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl BBox {
    pub const fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> i64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.h
    }

    pub fn area(&self) -> i64 {
        self.w.max(0) * self.h.max(0)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0 && self.h > 0
    }

    /// Clip to `[0, width) × [0, height)`. `None` when nothing is left.
    pub fn clip(&self, width: i64, height: i64) -> Option<BBox> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        (x1 > x0 && y1 > y0).then(|| BBox::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn intersection_area(&self, other: &BBox) -> i64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w <= 0 || h <= 0 {
            0
        } else {
            w * h
        }
    }
}

/// An edge of the scene graph, or a synthesized spatial phrase when `target`
/// is `None` (predicate then reads `"at the left"` etc.).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub predicate: String,
    pub target: Option<ObjectId>,
}

impl Relation {
    pub fn new(predicate: impl Into<String>, target: ObjectId) -> Self {
        Self {
            predicate: predicate.into(),
            target: Some(target),
        }
    }

    pub fn synthesized(predicate: impl Into<String>) -> Self {
        Self {
            predicate: predicate.into(),
            target: None,
        }
    }

    pub fn is_synthesized(&self) -> bool {
        self.target.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub id: ObjectId,
    pub name: String,
    pub attributes: Vec<String>,
    pub relations: Vec<Relation>,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub image_id: ImageId,
    pub width: i64,
    pub height: i64,
    pub objects: BTreeMap<ObjectId, ObjectNode>,
}

impl SceneGraph {
    pub fn object(&self, id: &ObjectId) -> Option<&ObjectNode> {
        self.objects.get(id)
    }

    /// All nodes labelled `name`, in id order.
    pub fn objects_of_name(&self, name: &str) -> Vec<&ObjectNode> {
        self.objects.values().filter(|o| o.name == name).collect()
    }

    pub fn relation_count(&self) -> usize {
        self.objects.values().map(|o| o.relations.len()).sum()
    }

    fn to_raw(&self) -> RawGraph {
        RawGraph {
            width: self.width,
            height: self.height,
            objects: self
                .objects
                .values()
                .map(|o| {
                    (
                        o.id.as_str().to_owned(),
                        RawObject {
                            name: o.name.clone(),
                            x: o.bbox.x,
                            y: o.bbox.y,
                            w: o.bbox.w,
                            h: o.bbox.h,
                            attributes: o.attributes.clone(),
                            relations: o
                                .relations
                                .iter()
                                .filter_map(|r| {
                                    r.target.as_ref().map(|t| RawRelation {
                                        name: r.predicate.clone(),
                                        object: t.as_str().to_owned(),
                                    })
                                })
                                .collect(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// `objects_of_name` as a free function, for symmetry with the other rule
/// helpers.
pub fn objects_of_name<'g>(graph: &'g SceneGraph, name: &str) -> Vec<&'g ObjectNode> {
    graph.objects_of_name(name)
}

#[derive(Debug, Serialize, Deserialize)]
struct RawGraph {
    width: i64,
    height: i64,
    #[serde(default)]
    objects: BTreeMap<String, RawObject>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawObject {
    name: String,
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    #[serde(default)]
    attributes: Vec<String>,
    #[serde(default)]
    relations: Vec<RawRelation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRelation {
    name: String,
    object: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRecord {
    pub image_id: String,
    pub reason: String,
}

/// Tallies produced while ingesting an annotation file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub graphs: usize,
    pub objects: usize,
    pub relations: usize,
    pub dropped_relations: usize,
    pub dropped_objects: usize,
    pub clipped_boxes: usize,
    pub skipped_records: Vec<SkippedRecord>,
}

impl ParseReport {
    /// Warnings are dropped relations and dropped objects.
    pub fn warning_count(&self) -> usize {
        self.dropped_relations + self.dropped_objects
    }
}

fn validate(image_id: &str, raw: RawGraph, report: &mut ParseReport) -> std::result::Result<SceneGraph, String> {
    if raw.width <= 0 || raw.height <= 0 {
        return Err(format!("non-positive image size {}x{}", raw.width, raw.height));
    }

    let mut objects = BTreeMap::new();
    let mut pending = Vec::with_capacity(raw.objects.len());
    for (id, obj) in raw.objects {
        if obj.name.is_empty() {
            report.dropped_objects += 1;
            continue;
        }
        let declared = BBox::new(obj.x, obj.y, obj.w, obj.h);
        if !declared.is_valid() {
            report.dropped_objects += 1;
            continue;
        }
        let Some(bbox) = declared.clip(raw.width, raw.height) else {
            report.dropped_objects += 1;
            continue;
        };
        if bbox != declared {
            report.clipped_boxes += 1;
        }
        let id = ObjectId::new(id);
        pending.push((id.clone(), obj.relations));
        objects.insert(
            id.clone(),
            ObjectNode {
                id,
                name: obj.name,
                attributes: obj.attributes,
                relations: Vec::new(),
                bbox,
            },
        );
    }

    for (id, raw_relations) in pending {
        let mut relations = Vec::with_capacity(raw_relations.len());
        for rel in raw_relations {
            let target = ObjectId::new(rel.object);
            if objects.contains_key(&target) {
                relations.push(Relation::new(rel.name, target));
            } else {
                report.dropped_relations += 1;
            }
        }
        report.relations += relations.len();
        if let Some(node) = objects.get_mut(&id) {
            node.relations = relations;
        }
    }

    report.graphs += 1;
    report.objects += objects.len();
    Ok(SceneGraph {
        image_id: ImageId::new(image_id),
        width: raw.width,
        height: raw.height,
        objects,
    })
}

struct GraphStream<'r, F> {
    report: &'r mut ParseReport,
    sink: F,
}

impl<'de, F: FnMut(SceneGraph)> Visitor<'de> for GraphStream<'_, F> {
    type Value = ();

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a map of image id to scene graph")
    }

    fn visit_map<A: MapAccess<'de>>(mut self, mut map: A) -> std::result::Result<(), A::Error> {
        while let Some(image_id) = map.next_key::<String>()? {
            let value: serde_json::Value = map.next_value()?;
            let outcome = serde_json::from_value::<RawGraph>(value)
                .map_err(|e| e.to_string())
                .and_then(|raw| validate(&image_id, raw, self.report));
            match outcome {
                Ok(graph) => (self.sink)(graph),
                Err(reason) => {
                    log::warn!("skipping scene graph {image_id}: {reason}");
                    self.report.skipped_records.push(SkippedRecord { image_id, reason });
                }
            }
        }
        Ok(())
    }
}

impl<'de, F: FnMut(SceneGraph)> DeserializeSeed<'de> for GraphStream<'_, F> {
    type Value = ();

    fn deserialize<D: Deserializer<'de>>(self, deserializer: D) -> std::result::Result<(), D::Error> {
        deserializer.deserialize_map(self)
    }
}

/// Stream validated graphs from `reader` into `sink`, one image at a time.
///
/// Malformed image entries are skipped and tallied in the returned report;
/// a syntactically broken document is a hard error.
pub fn stream_scene_graphs<R: Read, F: FnMut(SceneGraph)>(
    reader: R,
    sink: F,
) -> std::result::Result<ParseReport, serde_json::Error> {
    let mut report = ParseReport::default();
    let mut de = serde_json::Deserializer::from_reader(reader);
    GraphStream {
        report: &mut report,
        sink,
    }
    .deserialize(&mut de)?;
    de.end()?;
    Ok(report)
}

pub fn parse_scene_graphs_from_reader<R: Read>(
    reader: R,
) -> std::result::Result<(Vec<SceneGraph>, ParseReport), serde_json::Error> {
    let mut graphs = Vec::new();
    let report = stream_scene_graphs(reader, |g| graphs.push(g))?;
    Ok((graphs, report))
}

/// Parse a whole annotation file, preserving file order.
pub fn parse_scene_graphs(path: &Path) -> Result<(Vec<SceneGraph>, ParseReport)> {
    let file = File::open(path).map_err(|e| ForgeError::io(path, e))?;
    parse_scene_graphs_from_reader(BufReader::new(file)).map_err(|e| ForgeError::parse(path, e))
}

struct GraphsAsMap<'a>(&'a [SceneGraph]);

impl Serialize for GraphsAsMap<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for g in self.0 {
            map.serialize_entry(g.image_id.as_str(), &g.to_raw())?;
        }
        map.end()
    }
}

/// Serialize graphs back into the annotation schema. Synthesized relations
/// are not part of the schema and are omitted.
pub fn write_scene_graphs<W: Write>(graphs: &[SceneGraph], writer: W) -> serde_json::Result<()> {
    serde_json::to_writer(writer, &GraphsAsMap(graphs))
}

pub fn write_scene_graphs_file(graphs: &[SceneGraph], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| ForgeError::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_scene_graphs(graphs, &mut writer).map_err(|e| ForgeError::parse(path, e))?;
    writer.flush().map_err(|e| ForgeError::io(path, e))
}
