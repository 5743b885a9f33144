//! BPR training: triple sampling, softplus loss, Adam and early stopping.

use std::collections::HashSet;
use std::time::Instant;

use ndarray::{Array2, Zip};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::baselines::BaselineConfig;
use crate::dataset::{InteractionDataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{rank_topk, recall_at_k, ExclusionPolicy};
use crate::model::{backward, forward, EmbeddingTable, ForwardCache, ModelSpec};
use crate::sparse::{build_adjacency, drop_edges_degdrop, NormalizedAdjacency};
use crate::{seeded_rng, Rng as ModelRng};

/// Validation metric cut-off used for early stopping.
pub const EARLY_STOP_K: usize = 20;

const MAX_REJECTIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BprTriple {
    pub u: usize,
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    /// Negative sampling exponent; 0 means uniform.
    pub neg_alpha: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            l2_lambda: 1e-4,
            batch_size: 2048,
            max_epochs: 1000,
            eval_every: 5,
            patience: 5,
            neg_alpha: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::Config("l2_lambda must be >= 0".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, eval_every and patience must be positive".into(),
            ));
        }
        if !(self.neg_alpha >= 0.0) {
            return Err(Error::Config("neg_alpha must be >= 0".into()));
        }
        Ok(())
    }
}

/// Negative item law: uniform over all items when `alpha == 0`, otherwise
/// `∝ d_j^alpha` over items with nonzero training degree.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    candidates: Vec<usize>,
    weights: Option<WeightedIndex<f64>>,
}

impl NegativeSampler {
    pub fn new(ds: &InteractionDataset, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Argument(format!("negative sampling alpha must be >= 0, got {alpha}")));
        }
        if alpha == 0.0 {
            if ds.num_items == 0 {
                return Err(Error::Argument("no items to sample negatives from".into()));
            }
            return Ok(NegativeSampler {
                candidates: (0..ds.num_items).collect(),
                weights: None,
            });
        }
        let candidates: Vec<usize> = (0..ds.num_items).filter(|&i| ds.item_degree[i] > 0).collect();
        let weights = WeightedIndex::new(
            candidates.iter().map(|&i| (ds.item_degree[i] as f64).powf(alpha)),
        )
        .map_err(|e| Error::Argument(format!("negative sampling weights: {e}")))?;
        Ok(NegativeSampler {
            candidates,
            weights: Some(weights),
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let k = match &self.weights {
            Some(w) => w.sample(rng),
            None => rng.gen_range(0..self.candidates.len()),
        };
        self.candidates[k]
    }

    /// `n` triples with uniformly drawn training positives. A triple is
    /// skipped (with a warning) when no negative is found within 100 draws.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        ds: &InteractionDataset,
        n: usize,
        rng: &mut R,
    ) -> Vec<BprTriple> {
        let mut out = Vec::with_capacity(n);
        let mut warned: HashSet<usize> = HashSet::new();
        if ds.train.is_empty() {
            return out;
        }
        for _ in 0..n {
            let (u, i) = ds.train[rng.gen_range(0..ds.train.len())];
            let neg = (0..MAX_REJECTIONS)
                .map(|_| self.draw(rng))
                .find(|&j| !ds.is_train_pair(u, j));
            match neg {
                Some(j) => out.push(BprTriple { u, i, j }),
                None => {
                    if warned.insert(u) {
                        log::warn!("user {u}: no negative found after {MAX_REJECTIONS} draws, skipping");
                    }
                }
            }
        }
        out
    }
}

pub fn sample_batch<R: Rng + ?Sized>(
    ds: &InteractionDataset,
    n: usize,
    neg_alpha: f64,
    rng: &mut R,
) -> Result<Vec<BprTriple>> {
    if n == 0 {
        return Err(Error::Argument("batch size must be >= 1".into()));
    }
    Ok(NegativeSampler::new(ds, neg_alpha)?.sample_batch(ds, n, rng))
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    /// Gradient of the softplus term w.r.t. the combined embeddings.
    pub grad_combined: Array2<f64>,
    /// Gradient of the L2 term, applied to `E^(0)` directly.
    pub grad_l2: Array2<f64>,
}

/// Mean softplus BPR loss over `triples` plus `λ‖E_batch‖²`, where
/// `E_batch` holds the ego rows of the distinct users and items in the batch.
pub fn bpr_loss_and_grad(
    triples: &[BprTriple],
    cache: &ForwardCache,
    table: &EmbeddingTable,
    l2_lambda: f64,
) -> Result<LossAndGrad> {
    if triples.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let nu = cache.num_users;
    let c = &cache.combined;
    let mut grad_combined = Array2::zeros(c.raw_dim());
    let scale = 1.0 / triples.len() as f64;
    let mut loss = 0.0;
    let mut rows = Vec::with_capacity(triples.len() * 3);
    for t in triples {
        let (ur, ir, jr) = (t.u, nu + t.i, nu + t.j);
        let (cu, ci, cj) = (c.row(ur), c.row(ir), c.row(jr));
        let diff = cj.dot(&cu) - ci.dot(&cu);
        loss += softplus(diff);
        let s = sigmoid(diff) * scale;
        // d/dcu = s (cj - ci), d/dci = -s cu, d/dcj = s cu
        {
            let mut gu = grad_combined.row_mut(ur);
            gu.scaled_add(s, &cj);
            gu.scaled_add(-s, &ci);
        }
        grad_combined.row_mut(ir).scaled_add(-s, &cu);
        grad_combined.row_mut(jr).scaled_add(s, &cu);
        rows.extend([ur, ir, jr]);
    }
    loss *= scale;

    rows.sort_unstable();
    rows.dedup();
    let mut grad_l2 = Array2::zeros(table.e0.raw_dim());
    if l2_lambda > 0.0 {
        for &r in &rows {
            let e = table.e0.row(r);
            loss += l2_lambda * e.dot(&e);
            grad_l2.row_mut(r).scaled_add(2.0 * l2_lambda, &e);
        }
    }
    Ok(LossAndGrad {
        loss,
        grad_combined,
        grad_l2,
    })
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shape: (usize, usize)) -> Self {
        AdamState {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Rows whose gradient is entirely zero are
/// left alone (their moments are not decayed either).
pub fn adam_step(
    state: &mut AdamState,
    table: &mut EmbeddingTable,
    grad: &Array2<f64>,
    lr: f64,
) -> Result<()> {
    if grad.raw_dim() != table.e0.raw_dim() || state.m.raw_dim() != table.e0.raw_dim() {
        return Err(Error::Argument("Adam: gradient, state and table shapes differ".into()));
    }
    if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
        let cols = grad.ncols();
        return Err(Error::Numerical(format!(
            "non-finite gradient at ({}, {}) on step {}",
            pos / cols,
            pos % cols,
            state.t + 1
        )));
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for r in 0..grad.nrows() {
        let g = grad.row(r);
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        Zip::from(state.m.row_mut(r))
            .and(state.v.row_mut(r))
            .and(table.e0.row_mut(r))
            .and(g)
            .for_each(|m, v, w, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
    }
    Ok(())
}

/// Tracks the best validation score; stops after `patience` consecutive
/// evaluations without a strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<f64>,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, value: f64) -> Observation {
        let improved = self.best.is_none_or(|b| value > b);
        if improved {
            self.best = Some(value);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Observation {
            improved,
            stop: self.stale >= self.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_recall: Option<f64>,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the best validation Recall@20 (the initial table if no
    /// evaluation ran).
    pub best: EmbeddingTable,
    pub best_epoch: usize,
    pub best_val_recall: Option<f64>,
    pub epochs_run: usize,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    /// `epoch,loss,val_recall@20,elapsed_ms`.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,loss,val_recall@20,elapsed_ms\n");
        for row in &self.log {
            let recall = row.val_recall.map(|r| format!("{r:.6}")).unwrap_or_default();
            s.push_str(&format!("{},{:.8},{},{}\n", row.epoch, row.loss, recall, row.elapsed_ms));
        }
        s
    }
}

/// Validation Recall@20 of a forward pass.
pub fn validation_recall(cache: &ForwardCache, ds: &InteractionDataset) -> Result<f64> {
    let ranking = rank_topk(cache, ds, EARLY_STOP_K, Split::Validation, ExclusionPolicy::default())?;
    Ok(recall_at_k(&ranking, ds))
}

/// Trains with early stopping on validation Recall@20.
pub fn train(
    ds: &InteractionDataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    baseline: &BaselineConfig,
) -> Result<TrainOutcome> {
    train_with_evaluator(ds, spec, cfg, baseline, |cache| validation_recall(cache, ds))
}

/// Training loop with a pluggable validation score (higher is better).
pub fn train_with_evaluator(
    ds: &InteractionDataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    baseline: &BaselineConfig,
    mut evaluate: impl FnMut(&ForwardCache) -> Result<f64>,
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    baseline.validate()?;
    if ds.val.is_empty() {
        return Err(Error::Config("validation split is empty; early stopping needs it".into()));
    }
    if ds.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let start = Instant::now();
    let mut rng: ModelRng = seeded_rng(cfg.seed);
    let mut table = EmbeddingTable::xavier(ds.num_users, ds.num_items, spec.embed_dim, &mut rng);
    let mut adam = AdamState::new(table.e0.dim());
    let sampler = NegativeSampler::new(ds, baseline.neg_alpha().unwrap_or(cfg.neg_alpha))?;

    let base_adj = build_adjacency(ds, false);
    let full_p = spec.propagation_from(&base_adj)?;
    let degdrop = baseline.degdrop_alpha().filter(|_| spec.layers > 0);

    let batches = ds.train.len().div_ceil(cfg.batch_size);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = table.clone();
    let mut best_epoch = 0;
    let mut log = Vec::new();
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        let epoch_p: NormalizedAdjacency = match degdrop {
            Some(alpha) => {
                let dropped = drop_edges_degdrop(
                    &base_adj,
                    ds.num_users,
                    alpha,
                    cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch as u64,
                )?;
                spec.propagation_from(&dropped)?
            }
            None => full_p.clone(),
        };
        let mut loss_sum = 0.0;
        let mut loss_batches = 0usize;
        for _ in 0..batches {
            let triples = sampler.sample_batch(ds, cfg.batch_size, &mut rng);
            if triples.is_empty() {
                continue;
            }
            let cache = forward(spec, &epoch_p, &table)?;
            let lg = bpr_loss_and_grad(&triples, &cache, &table, cfg.l2_lambda)?;
            if !lg.loss.is_finite() {
                return Err(Error::Numerical(format!("loss became {} at epoch {epoch}", lg.loss)));
            }
            let mut grad = backward(spec, &epoch_p, &lg.grad_combined)?;
            grad += &lg.grad_l2;
            adam_step(&mut adam, &mut table, &grad, cfg.learning_rate)?;
            loss_sum += lg.loss;
            loss_batches += 1;
        }
        epochs_run = epoch;
        let loss = if loss_batches > 0 { loss_sum / loss_batches as f64 } else { 0.0 };

        let mut val_recall = None;
        let mut stop = false;
        if epoch % cfg.eval_every == 0 {
            let cache = forward(spec, &full_p, &table)?;
            let score = evaluate(&cache)?;
            let obs = stopper.observe(score);
            if obs.improved {
                best = table.clone();
                best_epoch = epoch;
            }
            val_recall = Some(score);
            stop = obs.stop;
            log::debug!("epoch {epoch}: loss {loss:.5}, val recall@20 {score:.5}");
        }
        log.push(EpochLog {
            epoch,
            loss,
            val_recall,
            elapsed_ms: start.elapsed().as_millis(),
        });
        if stop {
            break;
        }
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_recall: stopper.best(),
        epochs_run,
        log,
    })
}
