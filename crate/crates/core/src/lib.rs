//! Graph collaborative filtering with r-normalized adjacency propagation.
//!
//! The propagation operator `D^-r · A · D^-(1-r)` generalizes the symmetric
//! normalization used by LightGCN and LR-GCCF. Sweeping `r` trades accuracy
//! for novelty: `r < 1` favors high-degree (popular) neighbors in the
//! propagation limit, `r = 1` is degree-neutral and `r > 1` favors the long
//! tail.
//!
//! Modules, bottom up:
//!
//! - [`dataset`]: ingestion, k-core filtering, per-user splits, synthetic data
//! - [`sparse`]: CSR matrices, bipartite adjacency, r-normalization, DegDrop
//! - [`model`]: MF / LightGCN / LR-GCCF forward and backward passes
//! - [`train`]: BPR sampling, softplus loss, Adam, early stopping
//! - [`metrics`]: full-catalog top-K ranking, Recall, NDCG, Nov, PRU
//! - [`baselines`]: NS / DegDrop / PC configuration and PC re-scoring
//! - [`theory`]: closed-form propagation limit and its numerical checks
//! - [`experiment`]: config files, prepare/train/eval/sweep orchestration

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod sparse;
pub mod theory;
pub mod train;

pub use error::{Error, Result};

/// Seeded RNG used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;

pub(crate) fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Run `f` inside a rayon pool sized from `ADJNORM_THREADS` (default: all cores).
pub fn with_thread_limit<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match std::env::var("ADJNORM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}
