//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one `[PASS]` or `[FAIL]` line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use inpaint_forge::instruction::{build_instruction, InstructionParts};
use inpaint_forge::mask_ops::{dilate, iou, BinaryMask};
use inpaint_forge::metrics::{
    clip_accuracy, clip_distance, fid, load_classification_pairs, load_relation_sets, load_similarity_pairs, relsim,
    FeatureSet,
};
use inpaint_forge::pipeline::{build, MANIFEST_FILE};
use inpaint_forge::relations::{
    compute_relation_frequencies, filter_relations, spatial_location, LocationThird, RetainedPredicates,
    DEFAULT_RELATION_THRESHOLD,
};
use inpaint_forge::scene_graph::{BBox, ImageId, ObjectId, ObjectNode, Relation, SceneGraph};
use inpaint_forge::selection::{
    size_filter, RemovabilityRegistry, SelectionVerdict, Selector, SizeClass, SizeThresholds,
};

use common::{fixture, golden_workspace};

type Outcome = Result<(), String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn random_box(rng: &mut impl Rng, grid: i64) -> BBox {
    let x = rng.random_range(0..grid);
    let y = rng.random_range(0..grid);
    let w = rng.random_range(1..=grid - x);
    let h = rng.random_range(1..=grid - y);
    BBox::new(x, y, w, h)
}

fn pixel_iou(a: &BBox, b: &BBox, grid: i64) -> f64 {
    let inside = |r: &BBox, x: i64, y: i64| x >= r.x && x < r.right() && y >= r.y && y < r.bottom();
    let (mut inter, mut union) = (0u32, 0u32);
    for y in 0..grid {
        for x in 0..grid {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u32;
            union += (ia || ib) as u32;
        }
    }
    inter as f64 / union as f64
}

fn iou_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<_> = (0..1000)
        .map(|_| (random_box(&mut rng, 64), random_box(&mut rng, 64)))
        .collect();
    let started = Instant::now();
    let fast: Vec<f64> = pairs.iter().map(|(a, b)| iou(a, b)).collect();
    let elapsed = started.elapsed().as_secs_f64();
    for ((a, b), v) in pairs.iter().zip(&fast) {
        let oracle = pixel_iou(a, b, 64);
        ensure!((v - oracle).abs() <= 1e-9, "{a:?} {b:?}: {v} vs {oracle}");
    }
    ensure!(elapsed < 1.0, "took {elapsed:.3} s");
    Ok(())
}

fn brute_dilate(mask: &BinaryMask, k: usize) -> BinaryMask {
    let r = (k / 2) as i64;
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut out = BinaryMask::new(mask.width(), mask.height());
    for y in 0..h {
        for x in 0..w {
            let hit = (y - r..=y + r)
                .flat_map(|yy| (x - r..=x + r).map(move |xx| (xx, yy)))
                .any(|(xx, yy)| xx >= 0 && yy >= 0 && xx < w && yy < h && mask.get(xx as usize, yy as usize));
            out.set(x as usize, y as usize, hit);
        }
    }
    out
}

fn dilation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let started = Instant::now();
    for i in 0..100 {
        let density: f64 = rng.random_range(0.0..0.15);
        let bits = (0..32 * 32).map(|_| rng.random_bool(density)).collect();
        let mask = BinaryMask::from_bits(32, 32, bits).map_err(|e| e.to_string())?;
        for k in [3, 5, 11] {
            let fast = dilate(&mask, k).map_err(|e| e.to_string())?;
            ensure!(fast == brute_dilate(&mask, k), "mask {i}, k = {k}");
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    ensure!(elapsed < 5.0, "took {elapsed:.3} s");
    Ok(())
}

fn features(rows: &[Vec<f64>]) -> FeatureSet {
    let dim = rows[0].len();
    let flat = rows.iter().flatten().map(|&v| v as f32).collect();
    FeatureSet::new(rows.len(), dim, flat).unwrap()
}

/// Mean and (n - 1) covariance computed independently of the crate.
fn reference_stats(f: &FeatureSet) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (f.count(), f.dim());
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        for (j, &v) in f.row(i).iter().enumerate() {
            mean[j] += v as f64 / n as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let row = f.row(i);
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (row[a] as f64 - mean[a]) * (row[b] as f64 - mean[b]) / (n - 1) as f64;
            }
        }
    }
    (mean, cov)
}

/// Principal square root by the Denman-Beavers iteration; valid for
/// matrices with no eigenvalues on the closed negative real axis.
fn sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let mut y = m.clone();
    let mut z = DMatrix::identity(d, d);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        let next = (&y + zi) * 0.5;
        z = (&z + yi) * 0.5;
        let delta = (&next - &y).norm() / next.norm();
        y = next;
        if delta < 1e-14 {
            break;
        }
    }
    y
}

fn reference_fid(a: &FeatureSet, b: &FeatureSet) -> f64 {
    let (ma, ca) = reference_stats(a);
    let (mb, cb) = reference_stats(b);
    let root = sqrtm(&(&ca * &cb));
    (&ma - &mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * root.trace()
}

fn fid_numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let random_rows = |rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|j| rng.random_range(-1.0..1.0) * (1.0 + j as f64 / d as f64) + shift)
                    .collect()
            })
            .collect()
    };
    let a = features(&random_rows(&mut rng, 40, 6, 0.0));
    let b = features(&random_rows(&mut rng, 50, 6, 0.3));
    let err = |e: inpaint_forge::ForgeError| e.to_string();

    let same = fid(&a, &a).map_err(err)?;
    ensure!(same.abs() <= 1e-6, "identical sets: {same}");
    let (ab, ba) = (fid(&a, &b).map_err(err)?, fid(&b, &a).map_err(err)?);
    ensure!((ab - ba).abs() <= 1e-6, "asymmetric: {ab} vs {ba}");

    // 1-D: means 0 and 3, both sample variances 1 (4 * 0.75 / 3).
    let half = (0.75f64).sqrt();
    let one_a = features(&[vec![-half], vec![half], vec![-half], vec![half]]);
    let one_b = features(&[vec![3.0 - half], vec![3.0 + half], vec![3.0 - half], vec![3.0 + half]]);
    let v = fid(&one_a, &one_b).map_err(err)?;
    ensure!((v - 9.0).abs() <= 1e-9, "1-D closed form: {v}");

    // Diagonal covariances commute: distance is |dmu|^2 + sum (sqrt(a) - sqrt(b))^2.
    // Rows +-s_i e_i give mean 0 and variance 2 s_i^2 / (n - 1) on axis i.
    let axis_rows = |scales: &[f64], shift: f64| -> Vec<Vec<f64>> {
        let d = scales.len();
        let mut rows = Vec::new();
        for (i, &s) in scales.iter().enumerate() {
            for sign in [-1.0, 1.0] {
                let mut r = vec![shift; d];
                r[i] += sign * s;
                rows.push(r);
            }
        }
        rows
    };
    let (sa, sb) = ([1.0, 2.0, 0.5], [2.0, 0.5, 1.5]);
    let da = features(&axis_rows(&sa, 0.0));
    let db = features(&axis_rows(&sb, 1.0));
    let n = 6.0;
    let var = |s: f64| 2.0 * s * s / (n - 1.0);
    let expected = 3.0
        + sa.iter()
            .zip(&sb)
            .map(|(x, y)| (var(*x).sqrt() - var(*y).sqrt()).powi(2))
            .sum::<f64>();
    let v = fid(&da, &db).map_err(err)?;
    ensure!((v - expected).abs() <= 1e-9, "diagonal closed form: {v} vs {expected}");

    let big_a = features(&random_rows(&mut rng, 256, 64, 0.0));
    let big_b = features(&random_rows(&mut rng, 256, 64, 0.05));
    let ours = fid(&big_a, &big_b).map_err(err)?;
    let reference = reference_fid(&big_a, &big_b);
    let rel = (ours - reference).abs() / reference.abs();
    ensure!(
        rel <= 1e-4,
        "64-dim: {ours} vs reference {reference} (relative {rel:e})"
    );
    Ok(())
}

fn node(id: &str, name: &str, bbox: BBox) -> ObjectNode {
    ObjectNode {
        id: id.into(),
        name: name.into(),
        attributes: Vec::new(),
        relations: Vec::new(),
        bbox,
    }
}

fn graph(w: i64, h: i64, nodes: Vec<ObjectNode>) -> SceneGraph {
    SceneGraph {
        image_id: ImageId::new("1"),
        width: w,
        height: h,
        objects: nodes.into_iter().map(|n| (n.id.clone(), n)).collect(),
    }
}

fn selection_rules() -> Outcome {
    let selector = Selector::new(RemovabilityRegistry::builtin(), SizeThresholds::default());
    let expected = [
        (&["man", "boat", "kite", "car"][..], SelectionVerdict::Removable),
        (&["wall", "sky"][..], SelectionVerdict::ReferenceOnly),
        (
            &["leg", "arm", "eye", "wheel", "tail"][..],
            SelectionVerdict::ImplicitPart,
        ),
        (
            &["jacket", "pants", "shirt", "jeans", "shoes"][..],
            SelectionVerdict::Wearable,
        ),
    ];
    for (names, verdict) in expected {
        for name in names {
            let n = node("1", name, BBox::new(10, 10, 20, 20));
            let g = graph(100, 100, vec![n.clone()]);
            let got = selector.classify(&n, &g);
            ensure!(got == verdict, "{name}: {got:?}, expected {verdict:?}");
        }
    }

    // 1000 x 1000 image: max 0.5 = 500000 px, min 2.5e-5 = 25 px, both inclusive.
    let t = SizeThresholds::default();
    let cases = [
        (BBox::new(0, 0, 1000, 500), SizeClass::Keep),
        (BBox::new(0, 0, 1000, 501), SizeClass::TooLarge),
        (BBox::new(0, 0, 5, 5), SizeClass::Keep),
        (BBox::new(0, 0, 4, 6), SizeClass::TooSmall),
    ];
    for (bbox, want) in cases {
        let got = size_filter(&bbox, 1000, 1000, &t);
        ensure!(got == want, "{bbox:?}: {got:?}, expected {want:?}");
    }
    let big = node("1", "car", BBox::new(0, 0, 1000, 501));
    let g = graph(1000, 1000, vec![big.clone()]);
    ensure!(
        selector.classify(&big, &g) == SelectionVerdict::TooLarge,
        "oversized car not rejected"
    );
    Ok(())
}

fn retained(preds: &[&str]) -> RetainedPredicates {
    RetainedPredicates {
        threshold: 0.0,
        corpus_hash: String::new(),
        predicates: preds.iter().map(|s| s.to_string()).collect(),
    }
}

fn instruction_templates() -> Outcome {
    let selector = Selector::new(RemovabilityRegistry::builtin(), SizeThresholds::default());
    let err = |e: inpaint_forge::ForgeError| e.to_string();

    let mut kite = node("1", "kite", BBox::new(5, 5, 10, 10));
    kite.relations.push(Relation::new("on", ObjectId::new("2")));
    let g = graph(100, 100, vec![kite.clone(), node("2", "man", BBox::new(50, 5, 20, 40))]);
    let spec = build_instruction(&kite, &g, &selector, &retained(&["on"]), 1, 0.0).map_err(err)?;
    ensure!(
        spec.instruction == "remove the kite",
        "unique instance: '{}'",
        spec.instruction
    );

    let mut first = node("1", "man", BBox::new(5, 5, 10, 30));
    first
        .relations
        .push(Relation::new("to the left of", ObjectId::new("3")));
    first.relations.push(Relation::new("on", ObjectId::new("4")));
    let g = graph(
        100,
        100,
        vec![
            first.clone(),
            node("2", "man", BBox::new(70, 5, 10, 30)),
            node("3", "man", BBox::new(30, 5, 10, 30)),
            node("4", "table", BBox::new(0, 40, 60, 20)),
        ],
    );
    let spec = build_instruction(&first, &g, &selector, &retained(&["on", "to the left of"]), 1, 0.0).map_err(err)?;
    ensure!(
        spec.relation_phrase.as_deref() == Some("to the left of the man and on the table"),
        "joined phrase: {:?}",
        spec.relation_phrase
    );

    // Grammar round trip over random graphs.
    let names = ["man", "kite", "car", "boat"];
    let attrs = ["red", "small", "wooden", "dark blue", "shiny"];
    let predicates = ["on", "near", "holding", "to the right of", "behind"];
    let registry =
        RemovabilityRegistry::from_json(r#"{"bidirectional_true": ["man", "kite", "car", "boat"]}"#).map_err(err)?;
    let selector = Selector::new(registry, SizeThresholds::default());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    while checked < 1000 {
        let count = rng.random_range(1..=5);
        let mut nodes = Vec::new();
        for i in 0..count {
            let mut n = node(
                &i.to_string(),
                names[rng.random_range(0..names.len())],
                random_box(&mut rng, 100),
            );
            n.attributes = (0..rng.random_range(0..3))
                .map(|_| attrs[rng.random_range(0..attrs.len())].to_string())
                .collect();
            for _ in 0..rng.random_range(0..3) {
                let target = rng.random_range(0..count);
                if target != i {
                    n.relations.push(Relation::new(
                        predicates[rng.random_range(0..predicates.len())],
                        ObjectId::new(target.to_string()),
                    ));
                }
            }
            nodes.push(n);
        }
        let g = graph(100, 100, nodes);
        let keep = retained(&predicates[..3]);
        for n in g.objects.values() {
            if selector.classify(n, &g) != SelectionVerdict::Removable {
                continue;
            }
            let spec = build_instruction(n, &g, &selector, &keep, rng.random(), 0.5).map_err(err)?;
            let parts = InstructionParts::parse(&spec.instruction, &n.name)
                .ok_or_else(|| format!("unparseable: '{}'", spec.instruction))?;
            ensure!(parts == spec.parts(&n.name), "slots differ for '{}'", spec.instruction);
            ensure!(
                parts.render() == spec.instruction,
                "render differs for '{}'",
                spec.instruction
            );
            checked += 1;
        }
    }
    Ok(())
}

fn spatial_thirds() -> Outcome {
    let cases = [
        (BBox::new(0, 0, 20, 10), LocationThird::Left),
        (BBox::new(45, 0, 15, 10), LocationThird::Right),
        (BBox::new(0, 0, 60, 10), LocationThird::Center),
        (BBox::new(22, 0, 16, 10), LocationThird::Center),
        // Equal overlap with two thirds: the midpoint's third wins.
        (BBox::new(10, 0, 20, 10), LocationThird::Center),
        (BBox::new(30, 0, 20, 10), LocationThird::Right),
    ];
    for (bbox, want) in cases {
        let got = spatial_location(&bbox, 60);
        ensure!(got == want, "{bbox:?}: {got:?}, expected {want:?}");
    }
    Ok(())
}

fn golden_end_to_end() -> Outcome {
    let started = Instant::now();
    let expected = fs::read(fixture("golden/expected_manifest.jsonl")).map_err(|e| e.to_string())?;
    let (dir, mut config) = golden_workspace();
    for (run, workers) in [1, 2, 8, 8].into_iter().enumerate() {
        config.workers = workers;
        config.output_dir = dir.path().join(format!("out-{run}"));
        build(&config).map_err(|e| e.to_string())?;
        let got = fs::read(config.output_dir.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
        ensure!(
            got == expected,
            "run {run} with {workers} workers differs from the golden manifest"
        );
    }
    let elapsed = started.elapsed().as_secs_f64();
    ensure!(elapsed < 10.0, "took {elapsed:.3} s");
    Ok(())
}

fn metric_reducers() -> Outcome {
    let err = |e: inpaint_forge::ForgeError| e.to_string();
    let pairs = load_similarity_pairs(&fixture("metrics/clip_distance.jsonl")).map_err(err)?;
    let d = clip_distance(&pairs).map_err(err)?;
    ensure!(d == 50.0, "clip_distance {d}");
    let pairs = load_classification_pairs(&fixture("metrics/clip_accuracy.jsonl")).map_err(err)?;
    let a = clip_accuracy(&pairs, 5).map_err(err)?;
    ensure!(a == 70.0, "clip_accuracy {a}");
    let sets = load_relation_sets(&fixture("metrics/relsim.jsonl")).map_err(err)?;
    let r = relsim(&sets).map_err(err)?;
    ensure!(r.score == 0.75, "relsim {}", r.score);
    Ok(())
}

fn relation_filter() -> Outcome {
    let counts: BTreeMap<&str, usize> = [
        ("on", 19000),
        ("near", 990),
        ("holding", 7),
        ("boundary", 2),
        ("rare", 1),
    ]
    .into();
    let mut source = node("1", "cup", BBox::new(0, 0, 5, 5));
    for (pred, n) in &counts {
        for _ in 0..*n {
            source.relations.push(Relation::new(*pred, ObjectId::new("2")));
        }
    }
    let g = graph(100, 100, vec![source, node("2", "table", BBox::new(0, 10, 50, 20))]);
    let table = compute_relation_frequencies(&[g]).map_err(|e| e.to_string())?;
    ensure!(table.total == 20000, "total {}", table.total);
    let kept = filter_relations(&table, DEFAULT_RELATION_THRESHOLD);
    let want: BTreeSet<String> = ["on", "near", "holding", "boundary"].map(String::from).into();
    ensure!(kept.predicates == want, "retained {:?}", kept.predicates);
    Ok(())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("IoU oracle equivalence", iou_oracle),
        ("dilation oracle equivalence", dilation_oracle),
        ("FID numerics", fid_numerics),
        ("selection rules", selection_rules),
        ("instruction templates", instruction_templates),
        ("spatial thirds", spatial_thirds),
        ("golden end-to-end", golden_end_to_end),
        ("metric reducers", metric_reducers),
        ("relation frequency filter", relation_filter),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(()) => println!("[PASS] {name}"),
            Err(why) => {
                println!("[FAIL] {name}: {why}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
