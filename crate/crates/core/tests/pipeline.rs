mod common;

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde_json::json;

use inpaint_forge::mask_ops::{dilate, BinaryMask};
use inpaint_forge::pipeline::config::{CommandSpec, InpainterSpec, MaskProviderSpec, RefinerSpec};
use inpaint_forge::pipeline::manifest::read_manifest;
use inpaint_forge::pipeline::{build, BuildConfig, CacheState, SkipReason, MANIFEST_FILE};
use inpaint_forge::scene_graph::BBox;

const REGISTRY: &str = r#"{"bidirectional_true": ["cup", "table"], "bidirectional_false": ["sky"]}"#;

struct Corpus {
    dir: tempfile::TempDir,
}

impl Corpus {
    fn new(graphs: serde_json::Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("graphs.json"), graphs.to_string()).unwrap();
        fs::write(dir.path().join("registry.json"), REGISTRY).unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn image(&self, id: &str, w: u32, h: u32) -> RgbImage {
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x * 9) as u8, (y * 5) as u8, 77]));
        img.save(self.path(&format!("images/{id}.png"))).unwrap();
        img
    }

    fn mask(&self, rel: &str, w: usize, h: usize, bbox: BBox) {
        let path = self.path(rel);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        BinaryMask::from_bbox(w, h, &bbox).save_png(&path).unwrap();
    }

    fn config(&self) -> BuildConfig {
        let text = "annotations = \"graphs.json\"\nimages_dir = \"images\"\noutput_dir = \"out\"\nregistry = \"registry.json\"\n";
        BuildConfig::from_toml(text, self.dir.path()).unwrap()
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.path("out").join(rel)
    }
}

fn two_cups() -> serde_json::Value {
    json!({"1": {"width": 40, "height": 40, "objects": {
        "a": {"name": "cup", "x": 2, "y": 2, "w": 8, "h": 8},
        "b": {"name": "cup", "x": 25, "y": 25, "w": 8, "h": 8},
        "s": {"name": "sky", "x": 0, "y": 0, "w": 40, "h": 2}
    }}})
}

#[test]
fn zero_removable_corpus_gives_empty_manifest() {
    let corpus = Corpus::new(json!({
        "1": {"width": 10, "height": 10, "objects": {"1": {"name": "sky", "x": 0, "y": 0, "w": 10, "h": 3}}},
        "2": {"width": 10, "height": 10, "objects": {}}
    }));
    // No images exist: nothing removable means nothing is loaded.
    let report = build(&corpus.config()).unwrap();
    assert_eq!(report.records, 0);
    assert!(report.skips.is_empty());
    assert_eq!(fs::read(corpus.out(MANIFEST_FILE)).unwrap(), b"");
    assert_eq!(report.relations.total_relations, 0);
    assert_eq!(report.relations.retained, 0);
}

#[test]
fn directory_providers() {
    let corpus = Corpus::new(two_cups());
    corpus.image("1", 40, 40);
    // Candidates: exact box for cup a, a looser lower-IoU one, one that
    // matches nothing, one whose declared box contradicts its mask.
    corpus.mask("cand/1/0.png", 40, 40, BBox::new(2, 2, 8, 8));
    corpus.mask("cand/1/1.png", 40, 40, BBox::new(1, 1, 10, 10));
    corpus.mask("cand/1/2.png", 40, 40, BBox::new(34, 2, 4, 4));
    corpus.mask("cand/1/3.png", 40, 40, BBox::new(25, 25, 8, 8));
    let entry = |provider: &str, score: f64, bbox: [i64; 4], mask: &str| {
        json!({"provider": provider, "predicted_label": "cup", "score": score,
               "bbox": {"x": bbox[0], "y": bbox[1], "w": bbox[2], "h": bbox[3]}, "mask_path": mask})
    };
    let listing = json!({"image_id": "1", "candidates": [
        entry("seg-b", 0.5, [1, 1, 10, 10], "1/1.png"),
        entry("seg-a", 0.9, [2, 2, 8, 8], "1/0.png"),
        entry("seg-a", 0.9, [34, 2, 4, 4], "1/2.png"),
        entry("seg-a", 0.9, [10, 10, 8, 8], "1/3.png"),
    ]});
    fs::write(corpus.path("cand/1.json"), listing.to_string()).unwrap();
    corpus.mask("refined/1/a.png", 40, 40, BBox::new(3, 3, 6, 6));
    let provided = RgbImage::from_pixel(40, 40, Rgb([1, 2, 3]));
    fs::create_dir_all(corpus.path("inpainted/1")).unwrap();
    provided.save(corpus.path("inpainted/1/a.png")).unwrap();

    let mut config = corpus.config();
    config.providers.masks = MaskProviderSpec::Directory { path: "cand".into() };
    config.providers.refiner = RefinerSpec::Directory { path: "refined".into() };
    config.providers.inpainter = InpainterSpec::Directory {
        path: "inpainted".into(),
    };
    let report = build(&config).unwrap();

    assert_eq!(report.records, 1);
    assert_eq!(report.rejected_candidates.len(), 1);
    assert_eq!(report.rejected_candidates[0].index, 3);
    assert_eq!(report.skip_counts.get(&SkipReason::NoMask), Some(&1));
    let records = read_manifest(&corpus.out(MANIFEST_FILE)).unwrap();
    assert_eq!(records[0].object_id.as_str(), "a");
    // Spatial fallback: two cups, no relations.
    assert_eq!(records[0].instruction, "remove the cup at the left");

    let written = BinaryMask::load_png(&corpus.out(&records[0].mask_path)).unwrap();
    let expected = dilate(&BinaryMask::from_bbox(40, 40, &BBox::new(3, 3, 6, 6)), 11).unwrap();
    assert_eq!(written, expected);
    assert_eq!(
        image::open(corpus.out(&records[0].target_path)).unwrap().to_rgb8(),
        provided
    );
}

#[test]
fn best_mask_prefers_iou_over_score() {
    let corpus = Corpus::new(json!({"1": {"width": 40, "height": 40, "objects": {
        "a": {"name": "cup", "x": 10, "y": 10, "w": 10, "h": 10}
    }}}));
    corpus.image("1", 40, 40);
    corpus.mask("cand/1/loose.png", 40, 40, BBox::new(8, 8, 14, 14));
    corpus.mask("cand/1/tight.png", 40, 40, BBox::new(10, 10, 10, 9));
    let listing = json!({"candidates": [
        {"provider": "x", "predicted_label": "cup", "score": 1.0, "bbox": {"x": 8, "y": 8, "w": 14, "h": 14}, "mask_path": "1/loose.png"},
        {"provider": "y", "predicted_label": "cup", "score": 0.1, "bbox": {"x": 10, "y": 10, "w": 10, "h": 9}, "mask_path": "1/tight.png"}
    ]});
    fs::write(corpus.path("cand/1.json"), listing.to_string()).unwrap();
    let mut config = corpus.config();
    config.thresholds.dilation_kernel = 1;
    config.providers.masks = MaskProviderSpec::Directory { path: "cand".into() };
    build(&config).unwrap();
    let written = BinaryMask::load_png(&corpus.out("masks/1/a.png")).unwrap();
    assert_eq!(written.tight_bbox(), Some(BBox::new(10, 10, 10, 9)));
}

#[test]
fn missing_candidate_listing_skips_the_image() {
    let corpus = Corpus::new(two_cups());
    corpus.image("1", 40, 40);
    fs::create_dir_all(corpus.path("cand")).unwrap();
    let mut config = corpus.config();
    config.providers.masks = MaskProviderSpec::Directory { path: "cand".into() };
    let report = build(&config).unwrap();
    assert_eq!(report.records, 0);
    assert_eq!(report.skips[0].reason, SkipReason::MaskProvider);
}

#[cfg(unix)]
fn sh(script: &str) -> CommandSpec {
    CommandSpec {
        program: "sh".into(),
        args: vec!["-c".into(), script.into()],
    }
}

#[cfg(unix)]
#[test]
fn command_providers() {
    let corpus = Corpus::new(two_cups());
    let source = corpus.image("1", 40, 40);
    let mut config = corpus.config();
    config.workers = 4;
    config.providers.refiner = RefinerSpec::Command {
        command: sh("cp '{mask}' '{output}'"),
        serialize: true,
    };
    config.providers.inpainter = InpainterSpec::Command {
        command: sh("test -f '{mask}' && cp '{source}' '{output}'"),
        serialize: false,
    };
    let report = build(&config).unwrap();
    assert_eq!(report.records, 2);
    for r in read_manifest(&corpus.out(MANIFEST_FILE)).unwrap() {
        assert_eq!(image::open(corpus.out(&r.target_path)).unwrap().to_rgb8(), source);
    }
    assert!(!corpus.out(".work").exists());
}

#[cfg(unix)]
#[test]
fn failing_inpainter_skips_and_leaves_no_mask() {
    let corpus = Corpus::new(two_cups());
    corpus.image("1", 40, 40);
    let mut config = corpus.config();
    config.providers.inpainter = InpainterSpec::Command {
        command: sh("test '{object_id}' = b && cp '{source}' '{output}'"),
        serialize: false,
    };
    let report = build(&config).unwrap();
    assert_eq!(report.records, 1);
    assert_eq!(report.skips.len(), 1);
    assert_eq!(report.skips[0].reason, SkipReason::Inpainter);
    assert_eq!(report.skips[0].object_id.as_ref().unwrap().as_str(), "a");
    assert!(!corpus.out("masks/1/a.png").exists());
    assert!(corpus.out("masks/1/b.png").exists());
}

#[test]
fn relation_cache_lifecycle() {
    let corpus = Corpus::new(json!({"1": {"width": 10, "height": 10, "objects": {
        "1": {"name": "cup", "x": 0, "y": 0, "w": 2, "h": 2, "relations": [{"name": "on", "object": "2"}]},
        "2": {"name": "table", "x": 0, "y": 2, "w": 9, "h": 4}
    }}}));
    corpus.image("1", 10, 10);
    let mut config = corpus.config();
    config.retained_predicates = Some("cache/retained.json".into());
    assert_eq!(build(&config).unwrap().relations.cache, CacheState::Created);
    assert!(corpus.path("cache/retained.json").exists());
    assert_eq!(build(&config).unwrap().relations.cache, CacheState::Loaded);
    config.thresholds.relation_frequency = 0.5;
    assert_eq!(build(&config).unwrap().relations.cache, CacheState::Refreshed);
    assert_eq!(build(&config).unwrap().relations.cache, CacheState::Loaded);
}

#[test]
fn duplicate_ids_size_mismatch_and_unsafe_ids() {
    let dir = tempfile::tempdir().unwrap();
    // serde_json keeps duplicate keys when streaming; write the file by hand.
    let graphs = r#"{
        "1": {"width": 10, "height": 10, "objects": {"1": {"name": "cup", "x": 0, "y": 0, "w": 3, "h": 3}}},
        "1": {"width": 10, "height": 10, "objects": {"9": {"name": "cup", "x": 0, "y": 0, "w": 3, "h": 3}}},
        "2": {"width": 10, "height": 10, "objects": {"1": {"name": "cup", "x": 0, "y": 0, "w": 3, "h": 3}}},
        "..": {"width": 10, "height": 10, "objects": {"1": {"name": "cup", "x": 0, "y": 0, "w": 3, "h": 3}}}
    }"#;
    let corpus = Corpus { dir };
    fs::write(corpus.path("graphs.json"), graphs).unwrap();
    fs::write(corpus.path("registry.json"), REGISTRY).unwrap();
    fs::create_dir_all(corpus.path("images")).unwrap();
    corpus.image("1", 10, 10);
    corpus.image("2", 12, 10);
    let report = build(&corpus.config()).unwrap();
    assert_eq!(report.images, 3);
    assert_eq!(report.records, 1);
    let reasons: Vec<_> = report.skips.iter().map(|s| (s.image_id.as_str(), s.reason)).collect();
    assert_eq!(
        reasons,
        [
            ("1", SkipReason::DuplicateImage),
            ("2", SkipReason::SizeMismatch),
            ("..", SkipReason::UnsafeId)
        ]
    );
    let records = read_manifest(&corpus.out(MANIFEST_FILE)).unwrap();
    assert_eq!(records[0].object_id.as_str(), "1");
}

#[test]
fn missing_annotations_is_an_error() {
    let corpus = Corpus::new(json!({}));
    let mut config = corpus.config();
    config.annotations = Path::new("nope.json").into();
    assert!(build(&config).is_err());
}
