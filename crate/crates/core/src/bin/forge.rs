use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use inpaint_forge::mask_ops::BinaryMask;
use inpaint_forge::metrics::{self, FeatureSet};
use inpaint_forge::pipeline::manifest::read_manifest;
use inpaint_forge::pipeline::providers::{export_candidates, mock_inpaint, MaskProvider, MockMaskProvider};
use inpaint_forge::pipeline::stats::emit_statistics;
use inpaint_forge::pipeline::{build, BuildConfig};
use inpaint_forge::relations::{compute_relation_frequencies, filter_relations, DEFAULT_RELATION_THRESHOLD};
use inpaint_forge::scene_graph::{parse_scene_graphs, write_scene_graphs_file};
use inpaint_forge::selection::{RemovabilityRegistry, SelectionReport, Selector, SizeThresholds};

#[derive(Parser)]
#[command(
    name = "forge",
    version,
    about = "Build object-removal datasets from scene graphs and score inpainting results"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate an annotation file; print the parse report.
    Ingest {
        annotations: PathBuf,
        /// Write the validated graphs here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count relation predicates and prune rare ones.
    Relations {
        annotations: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RELATION_THRESHOLD)]
        threshold: f64,
        /// Write the retained-predicate file here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify every object and print verdict counts.
    Select {
        annotations: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Compile a dataset from a TOML config.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Occurrence tables for a built manifest.
    Stats {
        manifest: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Directory for objects.tsv, relations.tsv and stats.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the built-in mock segmentation in the candidate-directory layout.
    MockCandidates {
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Built-in mock inpainter behind the command-provider interface.
    MockInpaint {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score inpainting results.
    Eval {
        #[command(subcommand)]
        metric: Metric,
    },
}

#[derive(Subcommand)]
enum Metric {
    /// Frechet distance between two feature files.
    Fid {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    ClipDistance {
        samples: PathBuf,
    },
    ClipAccuracy {
        samples: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
    Relsim {
        samples: PathBuf,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Ingest { annotations, out } => {
            let (graphs, report) = parse_scene_graphs(&annotations)?;
            if let Some(out) = out {
                write_scene_graphs_file(&graphs, &out)?;
            }
            print_json(&report)
        }
        Cmd::Relations {
            annotations,
            threshold,
            out,
        } => {
            let (graphs, _) = parse_scene_graphs(&annotations)?;
            let table = compute_relation_frequencies(&graphs)?;
            let retained = filter_relations(&table, threshold);
            if let Some(out) = out {
                retained.save(&out)?;
            }
            let predicates: BTreeMap<_, _> = table
                .counts
                .iter()
                .map(|(p, &c)| {
                    (
                        p.clone(),
                        json!({
                            "count": c,
                            "frequency": c as f64 / table.total as f64,
                            "retained": retained.contains(p),
                        }),
                    )
                })
                .collect();
            print_json(&json!({
                "total": table.total,
                "threshold": threshold,
                "corpus_hash": retained.corpus_hash,
                "retained": retained.predicates.len(),
                "predicates": predicates,
            }))
        }
        Cmd::Select { annotations, registry } => {
            let registry = match registry {
                Some(p) => RemovabilityRegistry::load(&p)?,
                None => RemovabilityRegistry::builtin(),
            };
            let selector = Selector::new(registry, SizeThresholds::default());
            let (graphs, _) = parse_scene_graphs(&annotations)?;
            let mut report = SelectionReport::default();
            for g in &graphs {
                for node in g.objects.values() {
                    selector.classify_reported(node, g, &mut report);
                }
            }
            print_json(&report)
        }
        Cmd::Build {
            config,
            seed,
            workers,
            output_dir,
        } => {
            let mut cfg = BuildConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(dir) = output_dir {
                // Relative to the working directory, like any other flag.
                cfg.output_dir = std::path::absolute(&dir).with_context(|| format!("resolving {}", dir.display()))?;
            }
            let report = build(&cfg)?;
            print_json(&json!({
                "images": report.images,
                "records": report.records,
                "skipped": report.skips.len(),
                "splits": report.splits,
            }))
        }
        Cmd::Stats {
            manifest,
            annotations,
            out,
        } => {
            let records = read_manifest(&manifest)?;
            let (graphs, _) = parse_scene_graphs(&annotations)?;
            let stats = emit_statistics(&records, &graphs);
            if let Some(dir) = out {
                stats.write(&dir)?;
            }
            print_json(&stats)
        }
        Cmd::MockCandidates { annotations, out } => {
            let (graphs, _) = parse_scene_graphs(&annotations)?;
            for g in &graphs {
                let batch = MockMaskProvider.candidates(g)?;
                export_candidates(&g.image_id, &batch.candidates, &out)?;
            }
            print_json(&json!({ "images": graphs.len() }))
        }
        Cmd::MockInpaint { source, mask, output } => {
            let src = image::open(&source)
                .with_context(|| format!("reading {}", source.display()))?
                .to_rgb8();
            let mask = BinaryMask::load_png(&mask)?;
            mock_inpaint(&src, &mask)?
                .save_with_format(&output, image::ImageFormat::Png)
                .with_context(|| format!("writing {}", output.display()))?;
            Ok(())
        }
        Cmd::Eval { metric } => match metric {
            Metric::Fid { a, b } => {
                let fa = FeatureSet::load(&a)?;
                let fb = FeatureSet::load(&b)?;
                print_json(&json!({ "fid": metrics::fid(&fa, &fb)? }))
            }
            Metric::ClipDistance { samples } => {
                let pairs = metrics::load_similarity_pairs(&samples)?;
                print_json(&json!({ "clip_distance": metrics::clip_distance(&pairs)?, "samples": pairs.len() }))
            }
            Metric::ClipAccuracy { samples, k } => {
                let pairs = metrics::load_classification_pairs(&samples)?;
                print_json(
                    &json!({ "clip_accuracy": metrics::clip_accuracy(&pairs, k)?, "k": k, "samples": pairs.len() }),
                )
            }
            Metric::Relsim { samples } => {
                let sets = metrics::load_relation_sets(&samples)?;
                print_json(&metrics::relsim(&sets)?)
            }
        },
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
