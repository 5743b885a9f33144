#![allow(dead_code)]

use adjnorm::dataset::{InteractionDataset, Split};
use adjnorm::model::{backward, forward, EmbeddingTable, ModelSpec};
use adjnorm::train::{bpr_loss_and_grad, BprTriple};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 5 users, 7 items, every node touched by at least one triple.
pub fn grad_instance() -> (InteractionDataset, Vec<BprTriple>) {
    let train = vec![
        (0, 0), (0, 1), (0, 4),
        (1, 1), (1, 2),
        (2, 0), (2, 3), (2, 5),
        (3, 2), (3, 6),
        (4, 0), (4, 1), (4, 6),
    ];
    let ds = InteractionDataset::from_parts(5, 7, train, vec![], vec![]).unwrap();
    let triples = [
        (0, 0, 2), (0, 4, 5), (1, 1, 3), (1, 2, 6), (2, 3, 1),
        (2, 5, 4), (3, 6, 0), (3, 2, 5), (4, 1, 3), (4, 6, 2),
    ]
    .iter()
    .map(|&(u, i, j)| BprTriple { u, i, j })
    .collect();
    (ds, triples)
}

pub fn objective(
    spec: &ModelSpec,
    ds: &InteractionDataset,
    triples: &[BprTriple],
    table: &EmbeddingTable,
    l2: f64,
) -> f64 {
    let p = spec.propagation(ds).unwrap();
    let cache = forward(spec, &p, table).unwrap();
    bpr_loss_and_grad(triples, &cache, table, l2).unwrap().loss
}

pub fn analytic_gradient(
    spec: &ModelSpec,
    ds: &InteractionDataset,
    triples: &[BprTriple],
    table: &EmbeddingTable,
    l2: f64,
) -> Array2<f64> {
    let p = spec.propagation(ds).unwrap();
    let cache = forward(spec, &p, table).unwrap();
    let lg = bpr_loss_and_grad(triples, &cache, table, l2).unwrap();
    backward(spec, &p, &lg.grad_combined).unwrap() + &lg.grad_l2
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all entries of `E^(0)`,
/// with central differences of step `eps`.
pub fn max_gradient_error(spec: &ModelSpec, l2: f64, eps: f64, floor: f64, seed: u64) -> f64 {
    let (ds, triples) = grad_instance();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = EmbeddingTable::xavier(ds.num_users, ds.num_items, spec.embed_dim, &mut rng);
    let analytic = analytic_gradient(spec, &ds, &triples, &table, l2);
    let mut worst: f64 = 0.0;
    for idx in 0..table.e0.len() {
        let (r, c) = (idx / spec.embed_dim, idx % spec.embed_dim);
        let mut plus = table.clone();
        plus.e0[[r, c]] += eps;
        let mut minus = table.clone();
        minus.e0[[r, c]] -= eps;
        let numeric = (objective(spec, &ds, &triples, &plus, l2)
            - objective(spec, &ds, &triples, &minus, l2))
            / (2.0 * eps);
        let a = analytic[[r, c]];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}

/// Random dataset with train and test splits.
pub fn random_dataset(rng: &mut ChaCha8Rng, max_users: usize, max_items: usize) -> InteractionDataset {
    let nu = rng.gen_range(2..=max_users);
    let ni = rng.gen_range(3..=max_items);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for u in 0..nu {
        let mut owned = false;
        for i in 0..ni {
            let x: f64 = rng.gen();
            if x < 0.15 {
                train.push((u, i));
                owned = true;
            } else if x < 0.22 && owned {
                test.push((u, i));
            }
        }
        if !owned {
            train.push((u, rng.gen_range(0..ni)));
        }
    }
    // a test pair must not also be in train
    test.retain(|p| !train.contains(p));
    InteractionDataset::from_parts(nu, ni, train, vec![], test).unwrap()
}

/// Brute-force reference metrics: full sort of all candidate items,
/// definitions evaluated directly.
pub struct NaiveMetrics {
    pub recall: f64,
    pub ndcg: f64,
    pub nov: f64,
    pub pru: f64,
    pub users: usize,
}

fn naive_rank(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn naive_spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (naive_rank(x), naive_rank(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

pub fn naive_metrics(scores: &Array2<f64>, ds: &InteractionDataset, k: usize) -> NaiveMetrics {
    let truth = ds.user_items(Split::Test);
    let degree = |i: usize| ds.train.iter().filter(|p| p.1 == i).count();
    let nu = ds.num_users as f64;
    let (mut recall, mut ndcg, mut nov, mut pru, mut users) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for u in 0..ds.num_users {
        if truth[u].is_empty() {
            continue;
        }
        users += 1;
        let mut cand: Vec<usize> = (0..ds.num_items)
            .filter(|&i| degree(i) > 0 && !ds.train.contains(&(u, i)))
            .collect();
        cand.sort_by(|&a, &b| scores[[u, b]].partial_cmp(&scores[[u, a]]).unwrap().then(a.cmp(&b)));
        cand.truncate(k);
        let hits: Vec<bool> = cand.iter().map(|i| truth[u].contains(i)).collect();
        recall += hits.iter().filter(|&&h| h).count() as f64 / truth[u].len() as f64;
        let mut dcg = 0.0;
        for (p, &h) in hits.iter().enumerate() {
            if h {
                dcg += 1.0 / ((p + 2) as f64).log2();
            }
        }
        let mut idcg = 0.0;
        for p in 0..k.min(truth[u].len()) {
            idcg += 1.0 / ((p + 2) as f64).log2();
        }
        ndcg += dcg / idcg;
        for &i in &cand {
            nov += -(degree(i) as f64 / nu).log2() / nu.log2();
        }
        if cand.len() >= 2 {
            let pop: Vec<f64> = cand.iter().map(|&i| degree(i) as f64).collect();
            let pos: Vec<f64> = (1..=cand.len()).map(|p| p as f64).collect();
            pru -= naive_spearman(&pop, &pos);
        }
    }
    let n = users as f64;
    NaiveMetrics {
        recall: recall / n,
        ndcg: ndcg / n,
        nov: nov / (n * k as f64),
        pru: pru / n,
        users,
    }
}

/// Count of adjacent pairs that break the requested direction.
pub fn inversions(values: &[f64], increasing: bool) -> usize {
    values
        .windows(2)
        .filter(|w| if increasing { w[1] < w[0] } else { w[1] > w[0] })
        .count()
}
