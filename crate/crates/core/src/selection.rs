//! Removal-target selection.
//!
//! An object is a removal target only when its class is flagged
//! bidirectional, it is not a plural node, an implicit part or a worn item,
//! and its box is neither too large nor too small for the image.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::scene_graph::{BBox, ObjectId, ObjectNode, SceneGraph};

const BUILTIN_REGISTRY: &str = include_str!("../data/registry.json");

/// On-disk registry layout.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryFile {
    #[serde(default)]
    pub bidirectional_true: Vec<String>,
    #[serde(default)]
    pub bidirectional_false: Vec<String>,
    #[serde(default)]
    pub implicit_parts: Vec<String>,
    #[serde(default)]
    pub wearables: Vec<String>,
    #[serde(default)]
    pub plural_classes: Vec<String>,
}

/// Per-class removability annotations.
///
/// The built-in registry only covers the classes the construction rules name
/// explicitly; a real corpus build should pass a complete, user-maintained
/// registry file. Unlisted classes are treated as reference-only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemovabilityRegistry {
    bidirectional: BTreeMap<String, bool>,
    plural_classes: BTreeSet<String>,
    implicit_parts: BTreeSet<String>,
    wearables: BTreeSet<String>,
}

impl RemovabilityRegistry {
    pub fn from_file_contents(file: RegistryFile) -> Result<Self> {
        let mut bidirectional = BTreeMap::new();
        for name in &file.bidirectional_true {
            bidirectional.insert(name.clone(), true);
        }
        for name in &file.bidirectional_false {
            if bidirectional.insert(name.clone(), false) == Some(true) {
                return Err(ForgeError::Registry(format!(
                    "'{name}' is listed as both bidirectional and reference-only"
                )));
            }
        }
        let plural_classes: BTreeSet<_> = file.plural_classes.into_iter().collect();
        let implicit_parts: BTreeSet<_> = file.implicit_parts.into_iter().collect();
        let wearables: BTreeSet<_> = file.wearables.into_iter().collect();
        for (list, names) in [
            ("plural_classes", &plural_classes),
            ("implicit_parts", &implicit_parts),
            ("wearables", &wearables),
        ] {
            if let Some(name) = names.iter().find(|n| bidirectional.get(*n) == Some(&true)) {
                return Err(ForgeError::Registry(format!(
                    "'{name}' is in {list} but flagged bidirectional"
                )));
            }
        }
        Ok(Self {
            bidirectional,
            plural_classes,
            implicit_parts,
            wearables,
        })
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, ForgeError> {
        let file: RegistryFile = serde_json::from_str(text).map_err(|e| ForgeError::Registry(e.to_string()))?;
        Self::from_file_contents(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
        let file: RegistryFile = serde_json::from_str(&text).map_err(|e| ForgeError::parse(path, e))?;
        Self::from_file_contents(file)
    }

    /// The registry shipped with the crate (see `data/registry.json`).
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_REGISTRY).expect("bundled registry is valid")
    }

    pub fn to_file_contents(&self) -> RegistryFile {
        let flagged = |want: bool| {
            self.bidirectional
                .iter()
                .filter(|(_, &v)| v == want)
                .map(|(k, _)| k.clone())
                .collect()
        };
        RegistryFile {
            bidirectional_true: flagged(true),
            bidirectional_false: flagged(false),
            implicit_parts: self.implicit_parts.iter().cloned().collect(),
            wearables: self.wearables.iter().cloned().collect(),
            plural_classes: self.plural_classes.iter().cloned().collect(),
        }
    }

    pub fn bidirectional(&self, name: &str) -> Option<bool> {
        self.bidirectional.get(name).copied()
    }

    pub fn is_plural(&self, name: &str) -> bool {
        self.plural_classes.contains(name)
    }

    pub fn is_implicit_part(&self, name: &str) -> bool {
        self.implicit_parts.contains(name)
    }

    pub fn is_wearable(&self, name: &str) -> bool {
        self.wearables.contains(name)
    }

    /// Whether `name` appears in any of the registry's lists.
    pub fn is_known(&self, name: &str) -> bool {
        self.bidirectional.contains_key(name)
            || self.is_plural(name)
            || self.is_implicit_part(name)
            || self.is_wearable(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeThresholds {
    pub min_area_frac: f64,
    pub max_area_frac: f64,
}

impl Default for SizeThresholds {
    fn default() -> Self {
        Self {
            min_area_frac: 2.5e-5,
            max_area_frac: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    Keep,
    TooLarge,
    TooSmall,
}

/// Compare the box area against the image area. Equality with either
/// threshold keeps the object.
pub fn size_filter(bbox: &BBox, image_w: i64, image_h: i64, thresholds: &SizeThresholds) -> SizeClass {
    let area = bbox.area() as f64;
    let image_area = (image_w * image_h) as f64;
    if area > thresholds.max_area_frac * image_area {
        SizeClass::TooLarge
    } else if area < thresholds.min_area_frac * image_area {
        SizeClass::TooSmall
    } else {
        SizeClass::Keep
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionVerdict {
    Removable,
    ReferenceOnly,
    TooLarge,
    TooSmall,
    ImplicitPart,
    Wearable,
    PluralNode,
}

impl SelectionVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionVerdict::Removable => "removable",
            SelectionVerdict::ReferenceOnly => "reference_only",
            SelectionVerdict::TooLarge => "too_large",
            SelectionVerdict::TooSmall => "too_small",
            SelectionVerdict::ImplicitPart => "implicit_part",
            SelectionVerdict::Wearable => "wearable",
            SelectionVerdict::PluralNode => "plural_node",
        }
    }
}

/// Registry plus size thresholds: everything needed to classify a node.
#[derive(Debug, Clone)]
pub struct Selector {
    pub registry: RemovabilityRegistry,
    pub thresholds: SizeThresholds,
}

impl Selector {
    pub fn new(registry: RemovabilityRegistry, thresholds: SizeThresholds) -> Self {
        Self { registry, thresholds }
    }

    /// Rules run in a fixed order and the first rejection wins:
    /// plural, bidirectional flag, implicit part, wearable, size.
    ///
    /// The flag rule rejects classes explicitly flagged `false` and classes
    /// the registry does not list at all. A class that is only listed as a
    /// part or wearable passes the flag rule so that it reports its more
    /// specific verdict.
    pub fn classify(&self, node: &ObjectNode, graph: &SceneGraph) -> SelectionVerdict {
        let name = node.name.as_str();
        let registry = &self.registry;
        if registry.is_plural(name) {
            return SelectionVerdict::PluralNode;
        }
        if registry.bidirectional(name) == Some(false) || !registry.is_known(name) {
            return SelectionVerdict::ReferenceOnly;
        }
        if registry.is_implicit_part(name) {
            return SelectionVerdict::ImplicitPart;
        }
        if registry.is_wearable(name) {
            return SelectionVerdict::Wearable;
        }
        debug_assert_eq!(registry.bidirectional(name), Some(true));
        match size_filter(&node.bbox, graph.width, graph.height, &self.thresholds) {
            SizeClass::Keep => SelectionVerdict::Removable,
            SizeClass::TooLarge => SelectionVerdict::TooLarge,
            SizeClass::TooSmall => SelectionVerdict::TooSmall,
        }
    }

    /// Like [`Selector::classify`], also recording the outcome in `report`.
    pub fn classify_reported(
        &self,
        node: &ObjectNode,
        graph: &SceneGraph,
        report: &mut SelectionReport,
    ) -> SelectionVerdict {
        let verdict = self.classify(node, graph);
        *report.verdicts.entry(verdict).or_default() += 1;
        if !self.registry.is_known(&node.name) {
            *report.unknown_classes.entry(node.name.clone()).or_default() += 1;
        }
        verdict
    }

    /// Ids of the removable objects, in id order.
    pub fn select_removal_targets(&self, graph: &SceneGraph) -> Vec<ObjectId> {
        graph
            .objects
            .values()
            .filter(|node| self.classify(node, graph) == SelectionVerdict::Removable)
            .map(|node| node.id.clone())
            .collect()
    }
}

pub fn classify_object(node: &ObjectNode, graph: &SceneGraph, selector: &Selector) -> SelectionVerdict {
    selector.classify(node, graph)
}

pub fn select_removal_targets(graph: &SceneGraph, selector: &Selector) -> Vec<ObjectId> {
    selector.select_removal_targets(graph)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SelectionReport {
    pub verdicts: BTreeMap<SelectionVerdict, usize>,
    pub unknown_classes: BTreeMap<String, usize>,
}

impl SelectionReport {
    pub fn merge(&mut self, other: SelectionReport) {
        for (k, v) in other.verdicts {
            *self.verdicts.entry(k).or_default() += v;
        }
        for (k, v) in other.unknown_classes {
            *self.unknown_classes.entry(k).or_default() += v;
        }
    }
}
