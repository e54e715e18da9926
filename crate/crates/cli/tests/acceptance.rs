//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! The citation criterion reads the real content/cites files from
//! `$PATHMP_CORA_DIR` (default `data/cora`, files `cora.content` and
//! `cora.cites`).

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pathmp::citation::{planetoid_split, train_node_classification, CitationGraph, GcnConfig};
use pathmp::fixtures;
use pathmp::geometry::dihedral;
use pathmp::graph::{build_graph, FeaturizerConfig, Graph, Point};
use pathmp::io::read_citation_files;
use pathmp::model::{Batch, FeatureMode, InputDims, ModelConfig, PathMpnn};
use pathmp::paths::{count_paths_oracle, enumerate_paths};
use pathmp::synth::{PlantedCitation, SynthTask};
use pathmp::tensor::Tape;
use pathmp::train::{split_dataset, train_regression, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

fn enumeration() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    let mut total = 0usize;
    for k in 0..100 {
        let n = rng.gen_range(1..=10);
        let p = [0.2, 0.5, 0.8][k % 3];
        let g = random_graph(&mut rng, n, p);
        for v in 0..n {
            for len in 1..=4 {
                let paths = enumerate_paths(&g, v, len).unwrap();
                let mut counts = vec![0; len + 1];
                for path in &paths {
                    counts[path.len()] += 1;
                }
                total += paths.len();
                if counts != count_paths_oracle(&g, v, len) {
                    mismatches += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 10.0,
        format!("100 graphs, {total} paths, {mismatches} mismatching counts, {secs:.2}s (limit 10s)"),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_pathmp"))
        .args(["gradcheck", "--full-model"])
        .output()
        .expect("binary runs");
    let secs = start.elapsed().as_secs_f64();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut worst: f64 = 0.0;
    let mut modes = 0;
    for line in stdout.lines().filter(|l| l.starts_with("full-model/")) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        worst = worst.max(cols[2].parse().unwrap_or(f64::INFINITY));
        modes += 1;
    }
    outcome(
        out.status.success() && modes == 3 && worst < 1e-4 && secs < 60.0,
        format!("{modes} modes, max relative error {worst:.2e} (limit 1e-4), {secs:.1}s (limit 60s)"),
    )
}

fn rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn randomize(model: &mut PathMpnn, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        for v in model.params_mut().value_mut(id).data_mut() {
            // bounded away from zero
            let m = rng.gen_range(0.1..0.6);
            *v = if rng.gen_bool(0.5) { m } else { -m };
        }
    }
}

fn model_for(g: &Graph, mode: FeatureMode, max_path_len: usize, seed: u64) -> PathMpnn {
    let config = ModelConfig {
        hidden_dim: 8,
        mode,
        max_path_len,
        seed,
        ..ModelConfig::default()
    };
    let dims = InputDims {
        node_dim: g.node_dim(),
        edge_dim: g.edge_dim(),
        targets: 1,
    };
    let mut model = PathMpnn::new(config, dims).unwrap();
    randomize(&mut model, seed);
    model
}

fn invariance() -> Outcome {
    let g = build_graph(&fixtures::five_atom_molecule(), &fixtures::featurizer(true)).unwrap();
    let model = model_for(&g, FeatureMode::Geometry, 3, 1);
    let reference = model.predict(&[&g]).unwrap().item();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_motion: f64 = 0.0;
    for _ in 0..100 {
        let r = rotation(&mut rng);
        let t: Point = std::array::from_fn(|_| rng.gen_range(-10.0..10.0));
        let moved = g
            .coords()
            .unwrap()
            .iter()
            .map(|p| std::array::from_fn(|i| t[i] + (0..3).map(|j| r[i][j] * p[j]).sum::<f64>()))
            .collect();
        let h = g.clone().with_coords(moved).unwrap();
        worst_motion = worst_motion.max((model.predict(&[&h]).unwrap().item() - reference).abs());
    }
    let mut flips = 0;
    let mut worst_magnitude: f64 = 0.0;
    let mut tried = 0;
    while tried < 100 {
        let quad: Vec<Point> = (0..4).map(|_| std::array::from_fn(|_| rng.gen_range(-3.0..3.0))).collect();
        let mirrored: Vec<Point> = quad.iter().map(|p| [p[0], p[1], -p[2]]).collect();
        let (Ok(a), Ok(b)) = (dihedral(&quad, 0, 1, 2, 3), dihedral(&mirrored, 0, 1, 2, 3)) else {
            continue;
        };
        tried += 1;
        if a.sin().signum() == -b.sin().signum() && a.sin() != 0.0 {
            flips += 1;
        }
        worst_magnitude = worst_magnitude.max((a.sin().abs() - b.sin().abs()).abs());
    }
    outcome(
        worst_motion < 1e-6 && flips == 100 && worst_magnitude < 1e-9,
        format!(
            "100 rigid motions: max |Δy| {worst_motion:.2e} (limit 1e-6); 100 reflections: {flips} sign flips, \
             max |Δ|sin|| {worst_magnitude:.2e} (limit 1e-9)"
        ),
    )
}

fn isomers() -> Outcome {
    let (cis, trans) = fixtures::cis_trans_pair();
    let featurizer = FeaturizerConfig::new(fixtures::elements());
    let (cg, tg) = (build_graph(&cis, &featurizer).unwrap(), build_graph(&trans, &featurizer).unwrap());
    let mut geometry_gap = f64::INFINITY;
    let mut base_gap: f64 = 0.0;
    for seed in 0..10 {
        let m = model_for(&cg, FeatureMode::Geometry, 3, seed);
        let gap = (m.predict(&[&cg]).unwrap().item() - m.predict(&[&tg]).unwrap().item()).abs();
        geometry_gap = geometry_gap.min(gap);
        let m = model_for(&cg, FeatureMode::Base, 1, seed);
        let gap = (m.predict(&[&cg]).unwrap().item() - m.predict(&[&tg]).unwrap().item()).abs();
        base_gap = base_gap.max(gap);
    }
    outcome(
        geometry_gap > 1e-6 && base_gap <= 1e-12,
        format!(
            "10 parameter draws: geometry ℓ=3 min |Δy| {geometry_gap:.2e} (need > 1e-6), \
             base ℓ=1 max |Δy| {base_gap:.2e} (need ≤ 1e-12)"
        ),
    )
}

struct Comparison {
    base: Vec<f64>,
    path: Vec<f64>,
    slowest: Duration,
}

fn compare(task: SynthTask, mode: FeatureMode, len: usize) -> Comparison {
    let mut c = Comparison {
        base: Vec::new(),
        path: Vec::new(),
        slowest: Duration::ZERO,
    };
    let n = 200;
    for seed in 0..5u64 {
        let records = task.generate(n, 100 + seed);
        let mut featurizer = FeaturizerConfig::new(task.elements());
        featurizer.bond_lengths = mode == FeatureMode::Geometry;
        let graphs: Vec<Graph> = records.iter().map(|r| build_graph(r, &featurizer).unwrap()).collect();
        let targets: Vec<Vec<f64>> = records.iter().map(|r| r.targets.clone()).collect();
        let split = split_dataset(n, [0.8, 0.1, 0.1], seed).unwrap();
        for (m, l) in [(FeatureMode::Base, 1), (mode, len)] {
            let config = ModelConfig {
                mode: m,
                max_path_len: l,
                seed,
                ..ModelConfig::default()
            };
            let start = Instant::now();
            let run = train_regression(&graphs, &targets, &config, &TrainConfig::default(), &split).unwrap();
            c.slowest = c.slowest.max(start.elapsed());
            let mae = run.report.final_metrics.test_mae.unwrap();
            if m == FeatureMode::Base {
                c.base.push(mae);
            } else {
                c.path.push(mae);
            }
        }
    }
    c
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

fn synthetic() -> Outcome {
    let alcohol = compare(SynthTask::AlcoholCount, FeatureMode::Substructure, 2);
    let wins = alcohol.base.iter().zip(&alcohol.path).filter(|(b, p)| p < b).count();
    let alcohol_ok = mean(&alcohol.path) < mean(&alcohol.base);
    let torsion = compare(SynthTask::DihedralSum, FeatureMode::Geometry, 3);
    let ratio = mean(&torsion.path) / mean(&torsion.base);
    let slowest = alcohol.slowest.max(torsion.slowest).as_secs_f64();
    outcome(
        alcohol_ok && ratio < 0.5 && slowest < 600.0,
        format!(
            "alcohol-count MAE base [{}] vs substructure ℓ=2 [{}]: means {:.4} vs {:.4}, {wins}/5 paired wins; \
             dihedral-sum MAE base [{}] vs geometry ℓ=3 [{}]: mean ratio {ratio:.3} (need < 0.5); \
             slowest run {slowest:.0}s (limit 600s)",
            fmt(&alcohol.base),
            fmt(&alcohol.path),
            mean(&alcohol.path),
            mean(&alcohol.base),
            fmt(&torsion.base),
            fmt(&torsion.path),
        ),
    )
}

/// Plain and path GCN test accuracies on three paired seeds.
fn citation_runs(data: &CitationGraph) -> (Vec<f64>, Vec<f64>, f64) {
    let (mut plain, mut path) = (Vec::new(), Vec::new());
    let mut slowest: f64 = 0.0;
    for seed in 0..3u64 {
        let split = planetoid_split(&data.labels, 20, 500, 1000, seed);
        for (len, out) in [(1, &mut plain), (2, &mut path)] {
            let config = GcnConfig {
                max_path_len: len,
                seed,
                ..GcnConfig::default()
            };
            let start = Instant::now();
            let run = train_node_classification(data, &config, &split).unwrap();
            slowest = slowest.max(start.elapsed().as_secs_f64());
            out.push(run.report.final_metrics.test_accuracy.unwrap());
        }
    }
    (plain, path, slowest)
}

fn citation_verdict(plain: &[f64], path: &[f64], slowest: f64) -> (bool, String) {
    let ok = plain.iter().all(|&a| a >= 0.75) && mean(path) >= mean(plain) - 0.01 && slowest < 300.0;
    (
        ok,
        format!(
            "GCN accuracy [{}] (need ≥ 0.75), path-GCN ℓ=2 [{}]: means {:.4} vs {:.4} (need path ≥ GCN - 0.01), \
             slowest run {slowest:.0}s (limit 300s)",
            fmt(plain),
            fmt(path),
            mean(plain),
            mean(path),
        ),
    )
}

fn cora() -> Outcome {
    let dir = std::env::var_os("PATHMP_CORA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace().join("data/cora"));
    let (content, cites) = (dir.join("cora.content"), dir.join("cora.cites"));
    if !content.exists() || !cites.exists() {
        return outcome(
            false,
            format!("citation data not found at {} (set PATHMP_CORA_DIR)", dir.display()),
        );
    }
    let files = match read_citation_files(&content, &cites) {
        Ok(f) => f,
        Err(e) => return outcome(false, format!("cannot parse citation data: {e}")),
    };
    let shape_ok = files.data.n() == 2708 && files.data.classes == 7 && files.data.features.cols() == 1433;
    let (plain, path, slowest) = citation_runs(&files.data);
    let (ok, detail) = citation_verdict(&plain, &path, slowest);
    outcome(
        ok && shape_ok,
        format!(
            "{} nodes, {} classes, {} features, {} unknown cites dropped; {detail}",
            files.data.n(),
            files.data.classes,
            files.data.features.cols(),
            files.unknown_cites
        ),
    )
}

fn planted_citation() -> Outcome {
    let data = CitationGraph::from_planted(&PlantedCitation::default().generate(0)).unwrap();
    let (plain, path, slowest) = citation_runs(&data);
    let (ok, detail) = citation_verdict(&plain, &path, slowest);
    outcome(ok, detail)
}

fn solubility() -> Outcome {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_pathmp"))
        .args(["train", "--config"])
        .arg(workspace().join("configs/solubility.toml"))
        .arg("--report")
        .arg(std::env::temp_dir().join(format!("pathmp-acceptance-{}.jsonl", std::process::id())))
        .output()
        .expect("binary runs");
    if !out.status.success() {
        return outcome(false, format!("train exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr)));
    }
    let report = std::env::temp_dir().join(format!("pathmp-acceptance-{}.jsonl", std::process::id()));
    let text = std::fs::read_to_string(&report).unwrap();
    let _ = std::fs::remove_file(&report);
    let reports = pathmp::train::TrainReport::parse_jsonl(&text).unwrap();
    let f = &reports[0].final_metrics;
    let (rmse, baseline) = (f.test_rmse.unwrap(), f.baseline_rmse.unwrap());
    outcome(
        rmse <= 0.8 * baseline,
        format!(
            "300 molecules, ℓ=2 substructure: test RMSE {rmse:.4} vs constant-predictor RMSE {baseline:.4} \
             (ratio {:.3}, need ≤ 0.8), {:.0}s",
            rmse / baseline,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn reductions() -> Outcome {
    let featurizer = FeaturizerConfig::new(SynthTask::AlcoholCount.elements());
    let graphs: Vec<Graph> = SynthTask::AlcoholCount
        .generate(20, 3)
        .iter()
        .map(|r| build_graph(r, &featurizer).unwrap())
        .collect();
    let mut mpnn_ok = true;
    for seed in 0..5 {
        let model = model_for(&graphs[0], FeatureMode::Base, 1, seed);
        let feats: Vec<_> = graphs.iter().map(|g| model.featurize(g, vec![0.0]).unwrap()).collect();
        let batch = Batch::new(&feats.iter().collect::<Vec<_>>()).unwrap();
        let mut tape = Tape::new();
        let a = model.forward(&mut tape, &batch).unwrap();
        let b = model.forward_standard(&mut tape, &batch).unwrap();
        mpnn_ok &= tape.value(a) == tape.value(b);
    }
    let data = CitationGraph::from_planted(
        &PlantedCitation {
            nodes: 400,
            features: 200,
            ..PlantedCitation::default()
        }
        .generate(1),
    )
    .unwrap();
    let mut gcn_ok = true;
    for seed in 0..3 {
        let split = planetoid_split(&data.labels, 20, 100, 200, seed);
        let plain = GcnConfig {
            epochs: 50,
            seed,
            ..GcnConfig::default()
        };
        let zero = GcnConfig {
            max_path_len: 3,
            per_hop: 0,
            ..plain.clone()
        };
        let a = train_node_classification(&data, &plain, &split).unwrap();
        let b = train_node_classification(&data, &zero, &split).unwrap();
        gcn_ok &= a.logits == b.logits && a.report.epochs == b.report.epochs;
    }
    outcome(
        mpnn_ok && gcn_ok,
        format!(
            "ℓ=1 path-MPNN vs edge network on 5 seeds: {}; zero-budget path-GCN vs GCN on 3 seeds: {}",
            if mpnn_ok { "bit-identical" } else { "DIFFER" },
            if gcn_ok { "bit-identical" } else { "DIFFER" }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 path enumeration", enumeration),
        ("2 gradient integrity", gradients),
        ("3 geometric invariance", invariance),
        ("4 isomer discrimination", isomers),
        ("5 synthetic mechanism", synthetic),
        ("6 citation benchmark", cora),
        ("7 solubility smoke run", solubility),
        ("8 reduction identities", reductions),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        failed += usize::from(!o.pass);
        println!("criterion {name}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if name.starts_with('6') {
            let s = planted_citation();
            println!(
                "  planted-partition stand-in (informational, not the criterion): {} - {}",
                if s.pass { "pass" } else { "fail" },
                s.detail
            );
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
