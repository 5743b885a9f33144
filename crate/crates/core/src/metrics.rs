//! Full-catalog top-K ranking and the accuracy / novelty metrics.

use std::cmp::Ordering;

use ndarray::{s, Axis};
use rayon::prelude::*;

use crate::dataset::{InteractionDataset, Split};
use crate::error::{Error, Result};
use crate::model::ForwardCache;

/// Which items are kept out of a user's ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExclusionPolicy {
    /// Mask the user's own training items.
    pub mask_train: bool,
    /// Drop items with zero training degree from the candidate set.
    pub drop_cold_items: bool,
}

impl Default for ExclusionPolicy {
    fn default() -> Self {
        ExclusionPolicy {
            mask_train: true,
            drop_cold_items: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub k: usize,
    /// Split the lists are evaluated against.
    pub target: Split,
    /// Evaluated users (those with at least one target item), ascending.
    pub users: Vec<usize>,
    /// Top-K items per evaluated user, best first.
    pub lists: Vec<Vec<usize>>,
    pub policy: ExclusionPolicy,
}

impl RankingResult {
    /// Keeps only the first `k` entries of every list.
    pub fn truncated(&self, k: usize) -> RankingResult {
        RankingResult {
            k,
            target: self.target,
            users: self.users.clone(),
            lists: self
                .lists
                .iter()
                .map(|l| l[..l.len().min(k)].to_vec())
                .collect(),
            policy: self.policy,
        }
    }
}

/// Descending score, ascending index on ties.
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The `k` best candidates of `scores`, skipping `excluded` items.
pub fn top_k(scores: &[f64], k: usize, excluded: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut cands: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| !excluded(i))
        .map(|(i, &s)| (s, i))
        .collect();
    if k == 0 {
        return Vec::new();
    }
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, rank_order);
        cands.truncate(k);
    }
    cands.sort_unstable_by(rank_order);
    cands.into_iter().map(|(_, i)| i).collect()
}

/// Score adjustment applied to a user's full item score vector before ranking.
pub type ScoreAdjust<'a> = &'a (dyn Fn(&mut [f64]) + Sync);

const USER_CHUNK: usize = 256;

/// Ranks all candidate items for every user with at least one `target` item.
pub fn rank_topk(
    cache: &ForwardCache,
    ds: &InteractionDataset,
    k: usize,
    target: Split,
    policy: ExclusionPolicy,
) -> Result<RankingResult> {
    rank_topk_adjusted(cache, ds, k, target, policy, None)
}

pub fn rank_topk_adjusted(
    cache: &ForwardCache,
    ds: &InteractionDataset,
    k: usize,
    target: Split,
    policy: ExclusionPolicy,
    adjust: Option<ScoreAdjust<'_>>,
) -> Result<RankingResult> {
    if k == 0 {
        return Err(Error::Argument("K must be >= 1".into()));
    }
    if cache.num_users != ds.num_users || cache.combined.nrows() != ds.num_nodes() {
        return Err(Error::Argument(format!(
            "embeddings cover {} nodes, dataset has {}",
            cache.combined.nrows(),
            ds.num_nodes()
        )));
    }
    let mut has_target = vec![false; ds.num_users];
    for &(u, _) in ds.pairs(target) {
        has_target[u] = true;
    }
    let users: Vec<usize> = (0..ds.num_users).filter(|&u| has_target[u]).collect();
    let user_emb = cache.user_rows();
    let item_emb = cache.item_rows();
    let item_t = item_emb.t();

    let lists: Vec<Vec<usize>> = users
        .par_chunks(USER_CHUNK)
        .flat_map_iter(|chunk| {
            let rows = user_emb.select(Axis(0), chunk);
            let mut scores = rows.dot(&item_t);
            chunk
                .iter()
                .enumerate()
                .map(|(row, &u)| {
                    let mut user_scores = scores.slice_mut(s![row, ..]);
                    let slice = user_scores.as_slice_mut().expect("row-major scores");
                    if let Some(f) = adjust {
                        f(slice);
                    }
                    top_k(slice, k, |i| {
                        (policy.drop_cold_items && ds.item_degree[i] == 0)
                            || (policy.mask_train && ds.is_train_pair(u, i))
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect();

    Ok(RankingResult {
        k,
        target,
        users,
        lists,
        policy,
    })
}

fn targets(ranking: &RankingResult, ds: &InteractionDataset) -> Vec<Vec<usize>> {
    ds.user_items(ranking.target)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean over evaluated users of `|hits| / |target items|`.
pub fn recall_at_k(ranking: &RankingResult, ds: &InteractionDataset) -> f64 {
    let truth = targets(ranking, ds);
    mean(ranking.users.iter().zip(&ranking.lists).map(|(&u, list)| {
        let t = &truth[u];
        let hits = list.iter().filter(|i| t.binary_search(i).is_ok()).count();
        hits as f64 / t.len() as f64
    }))
}

/// Binary-relevance NDCG with `1/log2(p+1)` discounts, positions from 1.
pub fn ndcg_at_k(ranking: &RankingResult, ds: &InteractionDataset) -> f64 {
    let truth = targets(ranking, ds);
    let discount = |p: usize| 1.0 / ((p + 1) as f64).log2();
    mean(ranking.users.iter().zip(&ranking.lists).map(|(&u, list)| {
        let t = &truth[u];
        let dcg: f64 = list
            .iter()
            .enumerate()
            .filter(|(_, i)| t.binary_search(i).is_ok())
            .map(|(pos, _)| discount(pos + 1))
            .sum();
        let idcg: f64 = (1..=ranking.k.min(t.len())).map(discount).sum();
        dcg / idcg
    }))
}

/// Normalized self-information of the recommended items' training
/// popularity; `|U|` inside the logarithm is the full user count.
pub fn nov_at_k(ranking: &RankingResult, ds: &InteractionDataset) -> f64 {
    if ranking.users.is_empty() {
        return 0.0;
    }
    let num_users = ds.num_users as f64;
    let log_u = num_users.log2();
    let mut total = 0.0;
    for list in &ranking.lists {
        for &i in list {
            let mut d = ds.item_degree[i];
            if d == 0 {
                log::warn!("item {i} has no training interactions; using degree 1 for novelty");
                d = 1;
            }
            total += -(d as f64 / num_users).log2() / log_u;
        }
    }
    total / (ranking.users.len() * ranking.k) as f64
}

/// Fractional ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman's rank correlation (Pearson on tie-averaged ranks). Returns 0
/// when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!(
            "spearman: lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Argument("spearman needs at least 2 observations".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Negated mean Spearman correlation between training popularity and rank
/// position inside each top-K list. Lists shorter than 2 contribute 0.
pub fn pru_at_k(ranking: &RankingResult, ds: &InteractionDataset) -> f64 {
    let total: f64 = ranking
        .lists
        .iter()
        .map(|list| {
            if list.len() < 2 {
                return 0.0;
            }
            let pop: Vec<f64> = list.iter().map(|&i| ds.item_degree[i] as f64).collect();
            let pos: Vec<f64> = (1..=list.len()).map(|p| p as f64).collect();
            spearman(&pop, &pos).expect("equal lengths >= 2")
        })
        .sum();
    if ranking.users.is_empty() {
        0.0
    } else {
        -total / ranking.users.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub nov: f64,
    pub pru: f64,
    pub num_evaluated_users: usize,
}

impl MetricsReport {
    pub fn from_ranking(ranking: &RankingResult, ds: &InteractionDataset) -> Self {
        MetricsReport {
            k: ranking.k,
            recall: recall_at_k(ranking, ds),
            ndcg: ndcg_at_k(ranking, ds),
            nov: nov_at_k(ranking, ds),
            pru: pru_at_k(ranking, ds),
            num_evaluated_users: ranking.users.len(),
        }
    }
}

/// Ranks once at the largest K and reports every requested K.
pub fn evaluate(
    cache: &ForwardCache,
    ds: &InteractionDataset,
    target: Split,
    ks: &[usize],
    adjust: Option<ScoreAdjust<'_>>,
) -> Result<Vec<MetricsReport>> {
    let k_max = ks.iter().copied().max().ok_or_else(|| Error::Argument("no K values".into()))?;
    let ranking = rank_topk_adjusted(cache, ds, k_max, target, ExclusionPolicy::default(), adjust)?;
    Ok(ks
        .iter()
        .map(|&k| MetricsReport::from_ranking(&ranking.truncated(k), ds))
        .collect())
}
