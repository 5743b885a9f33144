//! Popularity-debiasing baselines.
//!
//! NS and DegDrop only parameterize training (negative sampling law and
//! per-epoch edge dropping). PC is a post-hoc re-scoring applied before
//! ranking: scores are standardized per user over the candidate items and
//! shifted by `alpha · (1 − d_i / d_max)`, so the least popular items get the
//! largest boost and the most popular get none.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaselineKind {
    #[default]
    None,
    /// Popularity-weighted negative sampling, `p(j) ∝ d_j^alpha`.
    Ns,
    /// Degree-aware edge dropping, `p(drop u–i) = min(1, alpha / d_i)`.
    DegDrop,
    /// Popularity compensation at ranking time.
    Pc,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::None => "none",
            BaselineKind::Ns => "ns",
            BaselineKind::DegDrop => "degdrop",
            BaselineKind::Pc => "pc",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "" => Ok(BaselineKind::None),
            "ns" => Ok(BaselineKind::Ns),
            "degdrop" => Ok(BaselineKind::DegDrop),
            "pc" => Ok(BaselineKind::Pc),
            _ => Err(Error::Config(format!("unknown baseline `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub alpha: f64,
}

impl BaselineConfig {
    pub fn none() -> Self {
        BaselineConfig::default()
    }

    pub fn new(kind: BaselineKind, alpha: f64) -> Result<Self> {
        let cfg = BaselineConfig { kind, alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            BaselineKind::None => true,
            BaselineKind::Ns | BaselineKind::DegDrop => (0.0..=1.0).contains(&self.alpha),
            BaselineKind::Pc => self.alpha >= 0.0 && self.alpha.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "alpha {} out of range for baseline {}",
                self.alpha, self.kind
            )))
        }
    }

    /// Negative-sampling exponent implied by this baseline, if it sets one.
    pub fn neg_alpha(&self) -> Option<f64> {
        (self.kind == BaselineKind::Ns).then_some(self.alpha)
    }

    pub fn degdrop_alpha(&self) -> Option<f64> {
        (self.kind == BaselineKind::DegDrop && self.alpha > 0.0).then_some(self.alpha)
    }
}

/// Popularity compensation for one user's score vector over all items.
///
/// Candidates are the items with `d_i >= 1`; non-candidates are returned
/// unchanged. If the candidate scores have zero variance they are left
/// unstandardized.
pub fn pc_adjust(scores: &[f64], item_degree: &[usize], alpha: f64) -> Vec<f64> {
    let mut out = scores.to_vec();
    pc_adjust_in_place(&mut out, item_degree, alpha);
    out
}

pub fn pc_adjust_in_place(scores: &mut [f64], item_degree: &[usize], alpha: f64) {
    debug_assert_eq!(scores.len(), item_degree.len());
    let d_max = item_degree.iter().copied().max().unwrap_or(0);
    if d_max == 0 {
        return;
    }
    let cand = || scores.iter().zip(item_degree).filter(|(_, &d)| d > 0).map(|(s, _)| *s);
    let n = cand().count() as f64;
    let mean = cand().sum::<f64>() / n;
    let var = cand().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    for (s, &d) in scores.iter_mut().zip(item_degree) {
        if d == 0 {
            continue;
        }
        let z = if sd > 0.0 { (*s - mean) / sd } else { *s };
        *s = z + alpha * (1.0 - d as f64 / d_max as f64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::top_k;
    use proptest::prelude::*;

    #[test]
    fn alpha_ranges() {
        assert!(BaselineConfig::new(BaselineKind::Ns, 1.5).is_err());
        assert!(BaselineConfig::new(BaselineKind::DegDrop, -0.1).is_err());
        assert!(BaselineConfig::new(BaselineKind::Pc, 3.0).is_ok());
        assert!(BaselineConfig::new(BaselineKind::Pc, -1.0).is_err());
        assert_eq!("DegDrop".parse::<BaselineKind>().unwrap(), BaselineKind::DegDrop);
    }

    #[test]
    fn equal_scores_favor_unpopular() {
        let adjusted = pc_adjust(&[1.0, 1.0], &[10, 1], 0.3);
        assert_eq!(top_k(&adjusted, 2, |_| false), vec![1, 0]);
    }

    #[test]
    fn cold_items_untouched() {
        let adjusted = pc_adjust(&[5.0, 1.0, 2.0], &[0, 3, 1], 1.0);
        assert_eq!(adjusted[0], 5.0);
    }

    proptest! {
        #[test]
        fn alpha_zero_keeps_ranking(
            scores in proptest::collection::vec(-10.0f64..10.0, 2..40),
            seed in 1usize..50,
        ) {
            let deg: Vec<usize> = (0..scores.len()).map(|i| 1 + (i * seed) % 7).collect();
            let adjusted = pc_adjust(&scores, &deg, 0.0);
            let k = scores.len();
            prop_assert_eq!(top_k(&scores, k, |_| false), top_k(&adjusted, k, |_| false));
        }

        #[test]
        fn max_degree_items_keep_relative_order(
            scores in proptest::collection::vec(-10.0f64..10.0, 3..30),
            alpha in 0.0f64..5.0,
        ) {
            let mut deg: Vec<usize> = (0..scores.len()).map(|i| 1 + i % 3).collect();
            deg[0] = 9;
            deg[1] = 9;
            let adjusted = pc_adjust(&scores, &deg, alpha);
            prop_assert_eq!(
                scores[0].partial_cmp(&scores[1]),
                adjusted[0].partial_cmp(&adjusted[1])
            );
        }
    }
}
