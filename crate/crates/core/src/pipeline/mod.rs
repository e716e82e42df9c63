//! Dataset compilation: scene graphs in, manifest plus masks and inpainted
//! targets out.
//!
//! Images are processed independently on a worker pool; results are
//! collected in input order and records are sorted by `(image_id,
//! object_id)`, so the manifest does not depend on the worker count.

pub mod config;
pub mod manifest;
pub mod providers;
pub mod stats;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ForgeError, Result};
use crate::instruction::{build_instruction, record_seed};
use crate::mask_ops::{assign_label, dilate, select_best_mask, BinaryMask, MaskCandidate};
use crate::relations::{compute_relation_frequencies, filter_relations, RelationFrequencyTable, RetainedPredicates};
use crate::scene_graph::{parse_scene_graphs, ImageId, ObjectId, ParseReport, SceneGraph};
use crate::selection::{RemovabilityRegistry, SelectionReport, SelectionVerdict, Selector};

pub use config::BuildConfig;
pub use manifest::{DatasetRecord, Split, SplitSummary};
pub use providers::ProviderClients;

use manifest::{assign_splits, load_split_map, write_manifest, SplitMap};
use providers::{InpaintRequest, RefineRequest};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const MASKS_DIR: &str = "masks";
pub const TARGETS_DIR: &str = "targets";
pub const STATS_DIR: &str = "stats";
const WORK_DIR: &str = ".work";

/// Why an image or a selected object produced no record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    DuplicateImage,
    UnsafeId,
    SourceImage,
    SizeMismatch,
    MaskProvider,
    NoMask,
    Refiner,
    EmptyMask,
    Inpainter,
    Instruction,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skip {
    pub image_id: ImageId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub object_id: Option<ObjectId>,
    pub reason: SkipReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedCandidateEntry {
    pub image_id: ImageId,
    pub index: usize,
    pub provider: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheState {
    Disabled,
    Created,
    Loaded,
    /// The cached file was for another corpus or threshold and was rewritten.
    Refreshed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationSummary {
    pub threshold: f64,
    pub corpus_hash: String,
    pub total_relations: u64,
    pub predicates: usize,
    pub retained: usize,
    /// Not serialized: a rerun would report `loaded` where the first run
    /// said `created`.
    #[serde(skip)]
    pub cache: CacheState,
}

/// Everything `build` writes to `report.json`. Contains no timings or
/// worker counts so that it is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildReport {
    pub parse: ParseReport,
    pub images: usize,
    pub records: usize,
    pub selection: SelectionReport,
    pub relations: RelationSummary,
    pub splits: SplitSummary,
    pub skip_counts: BTreeMap<SkipReason, usize>,
    pub skips: Vec<Skip>,
    pub rejected_candidates: Vec<RejectedCandidateEntry>,
}

/// Ids become path components, so they must not escape their directory.
pub fn is_path_safe(id: &str) -> bool {
    !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\', '\0', ':'])
}

/// Everything shared by the workers.
struct Context<'a> {
    config: &'a BuildConfig,
    selector: Selector,
    retained: RetainedPredicates,
    clients: &'a ProviderClients,
    images_dir: PathBuf,
    output_dir: PathBuf,
}

#[derive(Default)]
struct ImageOutcome {
    records: Vec<DatasetRecord>,
    skips: Vec<Skip>,
    selection: SelectionReport,
    rejected: Vec<RejectedCandidateEntry>,
}

impl ImageOutcome {
    fn skip(&mut self, image_id: &ImageId, object_id: Option<&ObjectId>, reason: SkipReason, detail: impl ToString) {
        let detail = detail.to_string();
        match object_id {
            Some(o) => log::warn!("{image_id}/{o}: {reason:?}: {detail}"),
            None => log::warn!("{image_id}: {reason:?}: {detail}"),
        }
        self.skips.push(Skip {
            image_id: image_id.clone(),
            object_id: object_id.cloned(),
            reason,
            detail,
        });
    }
}

fn relative_file(dir: &str, image_id: &ImageId, object_id: &ObjectId) -> String {
    format!("{dir}/{image_id}/{object_id}.png")
}

/// `images_dir` as written in the config, joined with the file name.
fn source_entry(images_dir: &Path, file_name: &str) -> String {
    let dir = images_dir.to_string_lossy();
    let dir = dir.trim_end_matches('/');
    if dir.is_empty() {
        file_name.to_owned()
    } else {
        format!("{dir}/{file_name}")
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) => fs::create_dir_all(p).map_err(|e| ForgeError::io(p, e)),
        None => Ok(()),
    }
}

impl Context<'_> {
    fn process(&self, graph: &SceneGraph) -> ImageOutcome {
        let mut out = ImageOutcome::default();
        let targets: Vec<ObjectId> = graph
            .objects
            .values()
            .filter(|node| {
                self.selector.classify_reported(node, graph, &mut out.selection) == SelectionVerdict::Removable
            })
            .map(|node| node.id.clone())
            .collect();
        if targets.is_empty() {
            return out;
        }

        let image_id = &graph.image_id;
        if !is_path_safe(image_id.as_str()) {
            out.skip(
                image_id,
                None,
                SkipReason::UnsafeId,
                "image id is not a valid file name",
            );
            return out;
        }
        let file_name = format!("{image_id}.{}", self.config.image_extension);
        let source_path = self.images_dir.join(&file_name);
        let source_entry = source_entry(&self.config.images_dir, &file_name);
        let source = match image::open(&source_path) {
            Ok(img) => img.to_rgb8(),
            Err(e) => {
                // Config-relative path keeps the report independent of the cwd.
                out.skip(
                    image_id,
                    None,
                    SkipReason::SourceImage,
                    format!("cannot read '{source_entry}': {e}"),
                );
                return out;
            }
        };
        if (source.width() as i64, source.height() as i64) != (graph.width, graph.height) {
            out.skip(
                image_id,
                None,
                SkipReason::SizeMismatch,
                format!(
                    "image is {}x{}, annotations say {}x{}",
                    source.width(),
                    source.height(),
                    graph.width,
                    graph.height
                ),
            );
            return out;
        }

        let batch = match self.clients.masks.candidates(graph) {
            Ok(b) => b,
            Err(e) => {
                out.skip(image_id, None, SkipReason::MaskProvider, e);
                return out;
            }
        };
        out.rejected
            .extend(batch.rejected.into_iter().map(|r| RejectedCandidateEntry {
                image_id: image_id.clone(),
                index: r.index,
                provider: r.provider,
                reason: r.reason,
            }));
        let mut by_object: HashMap<ObjectId, Vec<MaskCandidate>> = HashMap::new();
        for candidate in batch.candidates {
            if let Some(id) =
                assign_label(&candidate.predicted_bbox, graph, self.config.thresholds.min_match_iou).object_id()
            {
                by_object.entry(id.clone()).or_default().push(candidate);
            }
        }

        for object_id in &targets {
            if !is_path_safe(object_id.as_str()) {
                out.skip(
                    image_id,
                    Some(object_id),
                    SkipReason::UnsafeId,
                    "object id is not a valid file name",
                );
                continue;
            }
            let node = &graph.objects[object_id];
            let Some(best) = by_object.get(object_id).and_then(|c| select_best_mask(c, &node.bbox)) else {
                out.skip(
                    image_id,
                    Some(object_id),
                    SkipReason::NoMask,
                    "no candidate mask matched the object",
                );
                continue;
            };
            match self.record_for(graph, object_id, &best.mask, &source, &source_path, &source_entry) {
                Ok(record) => out.records.push(record),
                Err((reason, detail)) => out.skip(image_id, Some(object_id), reason, detail),
            }
        }
        out
    }

    fn record_for(
        &self,
        graph: &SceneGraph,
        object_id: &ObjectId,
        mask: &BinaryMask,
        source: &image::RgbImage,
        source_path: &Path,
        source_entry: &str,
    ) -> std::result::Result<DatasetRecord, (SkipReason, String)> {
        let image_id = &graph.image_id;
        let node = &graph.objects[object_id];
        let refined;
        let mask = match &self.clients.refiner {
            None => mask,
            Some(refiner) => {
                let request = RefineRequest {
                    image_id,
                    object_id,
                    mask,
                    work_dir: &self.output_dir.join(WORK_DIR),
                };
                refined = refiner
                    .refine(&request)
                    .map_err(|e| (SkipReason::Refiner, e.to_string()))?;
                if (refined.width(), refined.height()) != (mask.width(), mask.height()) {
                    return Err((
                        SkipReason::Refiner,
                        format!(
                            "refined mask is {}x{}, expected {}x{}",
                            refined.width(),
                            refined.height(),
                            mask.width(),
                            mask.height()
                        ),
                    ));
                }
                &refined
            }
        };
        if mask.is_empty() {
            return Err((SkipReason::EmptyMask, "mask has no foreground pixels".into()));
        }
        let dilated =
            dilate(mask, self.config.thresholds.dilation_kernel).map_err(|e| (SkipReason::Output, e.to_string()))?;

        let mask_rel = relative_file(MASKS_DIR, image_id, object_id);
        let target_rel = relative_file(TARGETS_DIR, image_id, object_id);
        let mask_path = self.output_dir.join(&mask_rel);
        let target_path = self.output_dir.join(&target_rel);
        ensure_parent(&mask_path)
            .and_then(|_| ensure_parent(&target_path))
            .and_then(|_| dilated.save_png(&mask_path))
            .map_err(|e| (SkipReason::Output, e.to_string()))?;

        let request = InpaintRequest {
            image_id,
            object_id,
            source_path,
            source,
            mask_path: &mask_path,
            mask: &dilated,
        };
        if let Err(e) = self.clients.inpainter.inpaint(&request, &target_path) {
            let _ = fs::remove_file(&mask_path);
            let _ = fs::remove_file(&target_path);
            return Err((SkipReason::Inpainter, e.to_string()));
        }

        let seed = record_seed(self.config.seed, image_id, object_id);
        let spec = build_instruction(
            node,
            graph,
            &self.selector,
            &self.retained,
            seed,
            self.config.thresholds.attribute_probability,
        )
        .map_err(|e| (SkipReason::Instruction, e.to_string()))?;

        Ok(DatasetRecord {
            image_id: image_id.clone(),
            source_path: source_entry.to_owned(),
            target_path: target_rel,
            instruction: spec.instruction,
            object_id: object_id.clone(),
            object_name: node.name.clone(),
            object_bbox: node.bbox,
            mask_path: mask_rel,
            split: Split::Train,
        })
    }
}

/// Predicate pruning for `graphs`, through the optional cache file.
pub fn retained_predicates(
    graphs: &[SceneGraph],
    threshold: f64,
    cache: Option<&Path>,
) -> Result<(RetainedPredicates, RelationSummary)> {
    let table = match compute_relation_frequencies(graphs) {
        Ok(t) => t,
        Err(ForgeError::EmptyRelationCorpus) => {
            log::warn!("corpus has no relations; relation phrases fall back to spatial locations");
            RelationFrequencyTable::default()
        }
        Err(e) => return Err(e),
    };
    let fresh = filter_relations(&table, threshold);
    let (retained, cache) = match cache {
        None => (fresh, CacheState::Disabled),
        Some(path) if path.exists() => {
            let cached = RetainedPredicates::load(path)?;
            if cached.corpus_hash == fresh.corpus_hash && cached.threshold == threshold {
                (cached, CacheState::Loaded)
            } else {
                log::warn!(
                    "'{}' was computed for another corpus or threshold; rewriting",
                    path.display()
                );
                fresh.save(path)?;
                (fresh, CacheState::Refreshed)
            }
        }
        Some(path) => {
            ensure_parent(path)?;
            fresh.save(path)?;
            (fresh, CacheState::Created)
        }
    };
    let summary = RelationSummary {
        threshold,
        corpus_hash: retained.corpus_hash.clone(),
        total_relations: table.total,
        predicates: table.counts.len(),
        retained: retained.predicates.len(),
        cache,
    };
    Ok((retained, summary))
}

/// Run the full pipeline with the providers named in `config`.
pub fn build(config: &BuildConfig) -> Result<BuildReport> {
    build_with(config, &ProviderClients::from_config(config))
}

pub fn build_with(config: &BuildConfig, clients: &ProviderClients) -> Result<BuildReport> {
    config.validate()?;
    let (parsed, parse) = parse_scene_graphs(&config.resolve(&config.annotations))?;

    let mut seen = HashSet::new();
    let mut graphs = Vec::with_capacity(parsed.len());
    let mut duplicates = Vec::new();
    for g in parsed {
        if seen.insert(g.image_id.clone()) {
            graphs.push(g);
        } else {
            duplicates.push(g.image_id);
        }
    }

    let registry = match &config.registry {
        Some(path) => RemovabilityRegistry::load(&config.resolve(path))?,
        None => RemovabilityRegistry::builtin(),
    };
    let cache = config.retained_predicates.as_ref().map(|p| config.resolve(p));
    let (retained, relations) = retained_predicates(&graphs, config.thresholds.relation_frequency, cache.as_deref())?;
    let split_map = match &config.split_map {
        Some(path) => load_split_map(&config.resolve(path))?,
        None => SplitMap::new(),
    };

    let output_dir = config.resolve(&config.output_dir);
    fs::create_dir_all(&output_dir).map_err(|e| ForgeError::io(&output_dir, e))?;
    let ctx = Context {
        config,
        selector: Selector::new(registry, config.thresholds.size()),
        retained,
        clients,
        images_dir: config.resolve(&config.images_dir),
        output_dir: output_dir.clone(),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ForgeError::Config(format!("cannot start {} workers: {e}", config.workers)))?;
    let outcomes: Vec<ImageOutcome> = pool.install(|| graphs.par_iter().map(|g| ctx.process(g)).collect());
    let _ = fs::remove_dir_all(output_dir.join(WORK_DIR));

    let mut records = Vec::new();
    let mut selection = SelectionReport::default();
    let mut skips: Vec<Skip> = duplicates
        .into_iter()
        .map(|image_id| Skip {
            image_id,
            object_id: None,
            reason: SkipReason::DuplicateImage,
            detail: "image id appears more than once; the first entry is used".into(),
        })
        .collect();
    let mut rejected = Vec::new();
    for o in outcomes {
        records.extend(o.records);
        skips.extend(o.skips);
        selection.merge(o.selection);
        rejected.extend(o.rejected);
    }
    records.sort_by(|a, b| (&a.image_id, &a.object_id).cmp(&(&b.image_id, &b.object_id)));
    let splits = assign_splits(&mut records, &split_map);

    let mut skip_counts = BTreeMap::new();
    for s in &skips {
        *skip_counts.entry(s.reason).or_default() += 1;
    }

    write_manifest(&records, &output_dir.join(MANIFEST_FILE))?;
    stats::emit_statistics(&records, &graphs).write(&output_dir.join(STATS_DIR))?;

    let report = BuildReport {
        parse,
        images: graphs.len(),
        records: records.len(),
        selection,
        relations,
        splits,
        skip_counts,
        skips,
        rejected_candidates: rejected,
    };
    let report_path = output_dir.join(REPORT_FILE);
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| ForgeError::parse(&report_path, e))?;
    json.push('\n');
    fs::write(&report_path, json).map_err(|e| ForgeError::io(&report_path, e))?;
    log::info!(
        "{} records from {} images, {} skipped",
        report.records,
        report.images,
        report.skips.len()
    );
    Ok(report)
}
