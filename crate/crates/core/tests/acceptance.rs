//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use adjnorm::baselines::{pc_adjust_in_place, BaselineConfig, BaselineKind};
use adjnorm::dataset::{split, synth_powerlaw, InteractionDataset, Split, SplitConfig};
use adjnorm::experiment::{run_train_eval_on, ExperimentConfig};
use adjnorm::metrics::{
    nov_at_k, pru_at_k, rank_topk, rank_topk_adjusted, ExclusionPolicy, MetricsReport, RankingResult,
    ScoreAdjust,
};
use adjnorm::model::{forward, Backbone, EmbeddingTable, ModelSpec};
use adjnorm::sparse::{build_adjacency, normalize_r, CsrMatrix};
use adjnorm::theory::{
    convergence_check, limit_matrix, ordering_check, power_iterate, random_connected_bipartite,
    random_connected_graph, with_self_loops, OrderingCase, DEFAULT_DENSE_CAP, ZERO_DIFF_TOL,
};
use adjnorm::train::{train, NegativeSampler, TrainConfig};
use common::{inversions, max_gradient_error, naive_metrics, random_dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

fn random_graph(rng: &mut ChaCha8Rng, g: usize) -> CsrMatrix {
    let n = rng.gen_range(2..=40);
    if g % 2 == 0 || n < 3 {
        random_connected_graph(n, 2.0 / n as f64, rng)
    } else {
        let left = rng.gen_range(1..n);
        random_connected_bipartite(left, n - left, 2.0 / n as f64, rng)
    }
}

fn c1_convergence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let graphs: Vec<CsrMatrix> = (0..100).map(|g| random_graph(&mut rng, g)).collect();
    let mut failures = 0;
    let mut worst_l = 0;
    for r in [0.0, 0.5, 1.0, 1.25] {
        for adj in &graphs {
            let c = convergence_check(adj, r, 1e-8, 10_000).unwrap();
            match c.l_star {
                Some(l) => worst_l = worst_l.max(l),
                None => failures += 1,
            }
        }
    }
    let t = start.elapsed();
    outcome(
        failures == 0 && within(t, 60),
        format!("{failures} of 400 runs not converged, max l*={worst_l}, {:.1}s", t.as_secs_f64()),
    )
}

fn c2_two_node() -> Outcome {
    let adj = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
    let mut worst: f64 = 0.0;
    for r in [0.0, 0.5, 1.0, 1.5] {
        let p = normalize_r(&with_self_loops(&adj).unwrap(), r).unwrap();
        let p1 = power_iterate(&p, 1, DEFAULT_DENSE_CAP).unwrap();
        let limit = limit_matrix(&adj, r).unwrap();
        for (a, b) in p1.iter().zip(limit.matrix.iter()) {
            worst = worst.max((a - b).abs()).max((a - 0.5).abs());
        }
    }
    outcome(worst < 1e-15, format!("max error at l=1: {worst:e}"))
}

fn c3_ordering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let graphs: Vec<CsrMatrix> = (0..20).map(|g| random_graph(&mut rng, g)).collect();
    let mut violations = 0;
    let mut triples = 0;
    let mut max_neutral: f64 = 0.0;
    for (r, case) in [
        (0.5, OrderingCase::PrefersHighDegree),
        (1.0, OrderingCase::DegreeNeutral),
        (1.5, OrderingCase::PrefersLowDegree),
    ] {
        for (g, adj) in graphs.iter().enumerate() {
            let rep = ordering_check(adj, r, g as u64).unwrap();
            assert_eq!(rep.expected, case);
            violations += rep.violations;
            triples += rep.triples;
            if r == 1.0 {
                max_neutral = max_neutral.max(rep.max_abs_diff);
            }
        }
    }
    outcome(
        violations == 0 && max_neutral < ZERO_DIFF_TOL,
        format!("{violations} violations over {triples} triples, max |diff| at r=1: {max_neutral:e}"),
    )
}

fn c4_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (backbone, layers) in [(Backbone::Mf, 0), (Backbone::LightGcn, 2), (Backbone::LrGccf, 2)] {
        for r in [0.5, 0.7, 1.25] {
            let spec = ModelSpec::new(backbone, layers, r, 4).unwrap();
            worst = worst.max(max_gradient_error(&spec, 0.01, 1e-5, 1e-8, 11));
        }
    }
    let t = start.elapsed();
    outcome(
        worst < 1e-5 && within(t, 30),
        format!("max relative error {worst:e}, {:.2}s", t.as_secs_f64()),
    )
}

fn c5_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    let mut count_mismatch = 0;
    for _ in 0..50 {
        let ds = random_dataset(&mut rng, 50, 80);
        if ds.test.is_empty() {
            continue;
        }
        let spec = ModelSpec::new(Backbone::Mf, 0, 0.5, 3).unwrap();
        let table = EmbeddingTable::xavier(ds.num_users, ds.num_items, 3, &mut rng);
        let cache = forward(&spec, &spec.propagation(&ds).unwrap(), &table).unwrap();
        let scores = cache.user_rows().dot(&cache.item_rows().t());
        for k in [1, 5, 20] {
            let ranking = rank_topk(&cache, &ds, k, Split::Test, ExclusionPolicy::default()).unwrap();
            let got = MetricsReport::from_ranking(&ranking, &ds);
            let want = naive_metrics(&scores, &ds, k);
            if got.num_evaluated_users != want.users {
                count_mismatch += 1;
            }
            for (a, b) in [
                (got.recall, want.recall),
                (got.ndcg, want.ndcg),
                (got.nov, want.nov),
                (got.pru, want.pru),
            ] {
                worst = worst.max((a - b).abs());
            }
        }
    }

    // hand examples
    let ds = InteractionDataset::from_parts(4, 2, vec![(0, 0), (1, 1), (2, 1)], vec![], vec![]).unwrap();
    let rank = |lists: Vec<Vec<usize>>| RankingResult {
        k: lists[0].len(),
        target: Split::Test,
        users: (0..lists.len()).collect(),
        lists,
        policy: ExclusionPolicy::default(),
    };
    let nov = nov_at_k(&rank(vec![vec![0, 1]]), &ds);
    let pop = InteractionDataset::from_parts(
        3,
        3,
        vec![(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (0, 2)],
        vec![],
        vec![],
    )
    .unwrap();
    let flat =
        InteractionDataset::from_parts(1, 3, vec![(0, 0), (0, 1), (0, 2)], vec![], vec![]).unwrap();
    let pru_biased = pru_at_k(&rank(vec![vec![0, 1, 2]]), &pop);
    let pru_anti = pru_at_k(&rank(vec![vec![2, 1, 0]]), &pop);
    let pru_flat = pru_at_k(&rank(vec![vec![0, 1, 2]]), &flat);
    let hand_ok = nov == 0.75 && pru_biased == 1.0 && pru_anti == -1.0 && pru_flat == 0.0;
    outcome(
        worst < 1e-12 && count_mismatch == 0 && hand_ok,
        format!(
            "max oracle diff {worst:e}; Nov hand={nov}; PRU extremes {pru_biased}/{pru_anti}/{pru_flat}"
        ),
    )
}

fn c6_symmetric() -> Outcome {
    let raw = synth_powerlaw(30, 20, 5, 1.0, 6).unwrap();
    let ds = split(&raw, &SplitConfig::default()).unwrap();
    let mut worst: f64 = 0.0;
    for backbone in [Backbone::LightGcn, Backbone::LrGccf] {
        let spec = ModelSpec::new(backbone, 2, 0.5, 4).unwrap();
        let p = spec.propagation(&ds).unwrap();
        let a = build_adjacency(&ds, spec.self_loops()).to_dense();
        let deg: Vec<f64> = a.rows().into_iter().map(|r| r.iter().filter(|&&v| v != 0.0).count() as f64).collect();
        let n = a.nrows();
        for i in 0..n {
            for j in 0..n {
                let sym = if a[[i, j]] != 0.0 { 1.0 / (deg[i] * deg[j]).sqrt() } else { 0.0 };
                let f = p.forward.get(i, j).unwrap_or(0.0);
                let b = p.backward.get(i, j).unwrap_or(0.0);
                worst = worst.max((f - sym).abs()).max((b - sym).abs());
            }
        }
    }
    outcome(worst < 1e-15, format!("max entry difference {worst:e}"))
}

/// Hyperparameters for the synthetic trend runs.
fn trend_config(dir: &Path, backbone: &str, layers: usize, r: f64) -> ExperimentConfig {
    let text = format!(
        r#"
[dataset]
name = "synth"
synth = {{ users = 2000, items = 1000, per_user = 10, zipf = 1.0, seed = 1 }}

[model]
backbone = "{backbone}"
layers = {layers}
r = {r}
embed_dim = 64

[train]
learning_rate = 0.005
l2_lambda = 1e-4
batch_size = 2048
max_epochs = 60
eval_every = 5
patience = 5

[eval]
ks = [20]
seeds = [1, 2, 3]

[output]
dir = "{}"
"#,
        dir.join(format!("{backbone}_L{layers}_r{r}")).display()
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

fn trend_dataset() -> InteractionDataset {
    let raw = synth_powerlaw(2000, 1000, 10, 1.0, 1).unwrap();
    split(&raw, &SplitConfig::default()).unwrap()
}

fn seed_mean(ds: &InteractionDataset, cfg: &ExperimentConfig) -> MetricsReport {
    let res = run_train_eval_on(cfg, ds).unwrap();
    let m = res.mean_at(20).unwrap();
    MetricsReport {
        k: 20,
        recall: m.recall,
        ndcg: m.ndcg,
        nov: m.nov,
        pru: m.pru,
        num_evaluated_users: m.num_users_evaluated,
    }
}

fn fmt_series(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

fn c7_r_trend(ds: &InteractionDataset, dir: &Path) -> Outcome {
    let start = Instant::now();
    let means: Vec<MetricsReport> = [0.5, 0.75, 1.0, 1.25]
        .iter()
        .map(|&r| seed_mean(ds, &trend_config(dir, "lightgcn", 3, r)))
        .collect();
    let t = start.elapsed();
    let nov: Vec<f64> = means.iter().map(|m| m.nov).collect();
    let pru: Vec<f64> = means.iter().map(|m| m.pru).collect();
    let (inv_nov, inv_pru) = (inversions(&nov, true), inversions(&pru, false));
    outcome(
        inv_nov <= 1 && inv_pru <= 1 && within(t, 15 * 60),
        format!(
            "Nov@20 [{}] ({inv_nov} inv), PRU@20 [{}] ({inv_pru} inv), {:.0}s",
            fmt_series(&nov),
            fmt_series(&pru),
            t.as_secs_f64()
        ),
    )
}

fn c8_depth_trend(ds: &InteractionDataset, dir: &Path) -> (Outcome, MetricsReport) {
    let start = Instant::now();
    let means: Vec<MetricsReport> = [1, 2, 4, 8]
        .iter()
        .map(|&l| seed_mean(ds, &trend_config(dir, "lightgcn", l, 0.5)))
        .collect();
    let t = start.elapsed();
    let pru: Vec<f64> = means.iter().map(|m| m.pru).collect();
    let inv = inversions(&pru, true);
    (
        outcome(
            inv <= 1 && within(t, 20 * 60),
            format!("PRU@20 [{}] ({inv} inv), {:.0}s", fmt_series(&pru), t.as_secs_f64()),
        ),
        means[1],
    )
}

fn c9_accuracy(ds: &InteractionDataset, dir: &Path, lightgcn_l2: &MetricsReport) -> Outcome {
    let mf = seed_mean(ds, &trend_config(dir, "mf", 0, 0.5));
    outcome(
        lightgcn_l2.recall >= mf.recall,
        format!("Recall@20 LightGCN L=2 {:.5} vs MF {:.5}", lightgcn_l2.recall, mf.recall),
    )
}

fn c10_baselines() -> Outcome {
    let raw = synth_powerlaw(150, 80, 10, 1.0, 10).unwrap();
    let ds = split(&raw, &SplitConfig::default()).unwrap();
    let spec = ModelSpec::new(Backbone::LightGcn, 2, 0.5, 16).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: 256,
        max_epochs: 10,
        eval_every: 5,
        seed: 4,
        ..Default::default()
    };
    let plain = train(&ds, &spec, &cfg, &BaselineConfig::none()).unwrap();
    let ns = train(&ds, &spec, &cfg, &BaselineConfig::new(BaselineKind::Ns, 0.0).unwrap()).unwrap();
    let dd = train(&ds, &spec, &cfg, &BaselineConfig::new(BaselineKind::DegDrop, 0.0).unwrap()).unwrap();
    let ns_same = ns.best == plain.best && ns.log.len() == plain.log.len();
    let dd_same = dd.best == plain.best && dd.log.len() == plain.log.len();

    let cache = forward(&spec, &spec.propagation(&ds).unwrap(), &plain.best).unwrap();
    let base = rank_topk(&cache, &ds, 20, Split::Test, ExclusionPolicy::default()).unwrap();
    let pc = |s: &mut [f64]| pc_adjust_in_place(s, &ds.item_degree, 0.0);
    let adjust: ScoreAdjust<'_> = &pc;
    let adjusted =
        rank_topk_adjusted(&cache, &ds, 20, Split::Test, ExclusionPolicy::default(), Some(adjust)).unwrap();
    let pc_same = base.lists == adjusted.lists;

    // sampling law on item degrees 1, 3, 6 (and one cold item)
    let law = InteractionDataset::from_parts(
        7,
        4,
        vec![(0, 0), (0, 1), (1, 1), (2, 1), (0, 2), (1, 2), (2, 2), (3, 2), (4, 2), (5, 2)],
        vec![],
        vec![],
    )
    .unwrap();
    let mut worst_dev: f64 = 0.0;
    for alpha in [0.5, 1.0] {
        let sampler = NegativeSampler::new(&law, alpha).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sampler.draw(&mut rng)] += 1;
        }
        let w: Vec<f64> = law.item_degree.iter().map(|&d| if d > 0 { (d as f64).powf(alpha) } else { 0.0 }).collect();
        let total: f64 = w.iter().sum();
        if counts[3] != 0 {
            worst_dev = f64::INFINITY;
        }
        for i in 0..3 {
            let expected = w[i] / total;
            let got = counts[i] as f64 / draws as f64;
            worst_dev = worst_dev.max((got - expected).abs() / expected);
        }
    }
    outcome(
        ns_same && dd_same && pc_same && worst_dev < 0.02,
        format!(
            "NS α=0 same: {ns_same}, DegDrop α=0 same: {dd_same}, PC α=0 same ranking: {pc_same}, \
             sampling law max rel. deviation {:.2}%",
            100.0 * worst_dev
        ),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_adjnorm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn pipeline_config(dir: &Path, data: &str, epochs: usize) -> String {
    format!(
        r#"
[dataset]
name = "smoke"
{data}

[model]
backbone = "lightgcn"
layers = 3
r = 0.75
embed_dim = 64

[train]
learning_rate = 0.005
max_epochs = {epochs}
eval_every = 5
patience = 3

[eval]
ks = [10, 20]
seeds = [5]

[output]
dir = "{}"
"#,
        dir.display()
    )
}

fn c11_determinism(root: &Path) -> Outcome {
    let synth = "synth = { users = 300, items = 200, per_user = 12, zipf = 0.8, seed = 2 }";
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let dir = root.join(format!("det_{run}"));
        fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("config.toml");
        fs::write(&cfg, pipeline_config(&dir.join("out"), synth, 15)).unwrap();
        let c = cfg.to_str().unwrap();
        let ok = run_cli(&["prepare", "--config", c]) && run_cli(&["train", "--config", c]);
        let ckpt = dir.join("out/lightgcn_r0.75_L3_seed5/best.ckpt");
        let ok = ok && run_cli(&["eval", "--config", c, "--checkpoint", ckpt.to_str().unwrap()]);
        if !ok {
            return outcome(false, format!("pipeline run {run} failed"));
        }
        let read = |p: &str| fs::read(dir.join("out").join(p)).unwrap_or_default();
        csvs.push((
            read("metrics.csv"),
            read("summary.csv"),
            read("lightgcn_r0.75_L3_seed5/eval_metrics.csv"),
        ));
    }
    let identical = csvs[0] == csvs[1] && !csvs[0].0.is_empty();

    // 100k-interaction smoke run from a TSV file
    let dir = root.join("smoke");
    fs::create_dir_all(&dir).unwrap();
    let raw = synth_powerlaw(10_000, 3_000, 10, 1.0, 9).unwrap();
    let mut tsv = String::from("# user\titem\n");
    for (u, i) in raw.records() {
        tsv.push_str(&format!("{u}\t{i}\n"));
    }
    fs::write(dir.join("interactions.tsv"), tsv).unwrap();
    let cfg = dir.join("config.toml");
    fs::write(&cfg, pipeline_config(&dir.join("out"), "path = \"interactions.tsv\"", 20)).unwrap();
    let c = cfg.to_str().unwrap();
    let start = Instant::now();
    let smoke_ok = run_cli(&["prepare", "--config", c]) && run_cli(&["train", "--config", c]);
    let t = start.elapsed();
    outcome(
        identical && smoke_ok && within(t, 300),
        format!(
            "byte-identical CSVs: {identical}; {}-interaction smoke run ok: {smoke_ok} in {:.0}s",
            raw.len(),
            t.as_secs_f64()
        ),
    )
}

fn main() {
    // `cargo test -- --list` and similar probes
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!(
            "criterion {n:>2} [{}] {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };

    report(1, "propagation limit convergence", c1_convergence());
    report(2, "two-node exact limit", c2_two_node());
    report(3, "limit ordering cases", c3_ordering());
    report(4, "analytic vs numeric gradient", c4_gradients());
    report(5, "metric oracle equivalence", c5_metrics());
    report(6, "r=0.5 symmetric normalization", c6_symmetric());
    let ds = trend_dataset();
    report(7, "novelty/popularity trend in r", c7_r_trend(&ds, tmp.path()));
    let (c8, lightgcn_l2) = c8_depth_trend(&ds, tmp.path());
    report(8, "popularity trend in depth", c8);
    report(9, "LightGCN recall >= MF recall", c9_accuracy(&ds, tmp.path(), &lightgcn_l2));
    report(10, "baseline contracts", c10_baselines());
    report(11, "end-to-end determinism and smoke run", c11_determinism(tmp.path()));

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
