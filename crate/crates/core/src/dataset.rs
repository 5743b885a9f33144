//! Interaction logs: ingestion, k-core filtering, per-user splitting and
//! the synthetic long-tail generator used for desk-scale experiments.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeded_rng;

/// Deduplicated `(user_key, item_key)` pairs in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawInteractions {
    records: Vec<(String, String)>,
}

impl RawInteractions {
    /// Builds from pairs, dropping repeated pairs but keeping first-seen order.
    pub fn from_pairs<I, U, T>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (U, T)>,
        U: Into<String>,
        T: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut records = Vec::new();
        for (u, i) in pairs {
            let pair = (u.into(), i.into());
            if seen.insert(pair.clone()) {
                records.push(pair);
            }
        }
        RawInteractions { records }
    }

    pub fn records(&self) -> &[(String, String)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_users(&self) -> usize {
        self.records.iter().map(|(u, _)| u).collect::<HashSet<_>>().len()
    }

    pub fn num_items(&self) -> usize {
        self.records.iter().map(|(_, i)| i).collect::<HashSet<_>>().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Tsv,
}

/// Reads a tab-separated interaction file. Blank lines and `#` comments are
/// skipped; columns after the second are ignored.
pub fn ingest(path: &Path, format: InputFormat) -> Result<RawInteractions> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw = match format {
        InputFormat::Tsv => parse_tsv(&text)?,
    };
    if raw.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no interactions in {}",
            path.display()
        )));
    }
    Ok(raw)
}

pub(crate) fn parse_tsv(text: &str) -> Result<RawInteractions> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next()) {
            (Some(u), Some(i)) if !u.is_empty() && !i.is_empty() => pairs.push((u, i)),
            _ => {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected `user<TAB>item`, got {line:?}"),
                })
            }
        }
    }
    Ok(RawInteractions::from_pairs(pairs))
}

/// Repeatedly removes users and items with fewer than `min_count`
/// interactions until nothing changes.
pub fn kcore_filter(raw: &RawInteractions, min_count: usize) -> RawInteractions {
    let mut alive: Vec<bool> = vec![true; raw.records.len()];
    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for (k, (u, i)) in raw.records.iter().enumerate() {
            if alive[k] {
                *user_deg.entry(u).or_default() += 1;
                *item_deg.entry(i).or_default() += 1;
            }
        }
        let mut changed = false;
        for (k, (u, i)) in raw.records.iter().enumerate() {
            if alive[k] && (user_deg[u.as_str()] < min_count || item_deg[i.as_str()] < min_count) {
                alive[k] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    RawInteractions {
        records: raw
            .records
            .iter()
            .zip(&alive)
            .filter(|(_, &a)| a)
            .map(|(r, _)| r.clone())
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    /// (train, val, test) fractions.
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub kcore_min: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: (0.7, 0.1, 0.2),
            seed: 2022,
            kcore_min: 1,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.ratios;
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(Error::Argument(format!(
                "split ratios must be positive, got {:?}",
                self.ratios
            )));
        }
        if ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "split ratios must sum to 1, got {:?}",
                self.ratios
            )));
        }
        if self.kcore_min == 0 {
            return Err(Error::Argument("kcore_min must be >= 1".into()));
        }
        Ok(())
    }

    /// (train, val, test) sizes for a user with `n` interactions.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let mut val = (n as f64 * self.ratios.1 + 1e-9).floor() as usize;
        let mut test = (n as f64 * self.ratios.2 + 1e-9).floor() as usize;
        while n > 0 && val + test >= n {
            if test > 0 {
                test -= 1;
            } else {
                val -= 1;
            }
        }
        (n - val - test, val, test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Dense-id dataset with train/validation/test pairs and training degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    /// Training interactions per item (`d_i`). Zero marks a cold item that
    /// only occurs in validation or test.
    pub item_degree: Vec<usize>,
    /// Training interactions per user (`|N_u|`).
    pub user_degree: Vec<usize>,
    /// Sorted training items per user.
    pub user_train_items: Vec<Vec<usize>>,
    pub user_keys: Vec<String>,
    pub item_keys: Vec<String>,
}

impl InteractionDataset {
    /// Assembles a dataset from dense pairs and derives the degree tables.
    pub fn from_parts(
        num_users: usize,
        num_items: usize,
        mut train: Vec<(usize, usize)>,
        mut val: Vec<(usize, usize)>,
        mut test: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, pairs) in [("train", &train), ("val", &val), ("test", &test)] {
            for &(u, i) in pairs.iter() {
                if u >= num_users || i >= num_items {
                    return Err(Error::Argument(format!(
                        "{name} pair ({u},{i}) out of range for {num_users} users x {num_items} items"
                    )));
                }
                if !seen.insert((u, i)) {
                    return Err(Error::Argument(format!(
                        "pair ({u},{i}) appears more than once across splits"
                    )));
                }
            }
        }
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();

        let mut item_degree = vec![0; num_items];
        let mut user_degree = vec![0; num_users];
        let mut user_train_items = vec![Vec::new(); num_users];
        for &(u, i) in &train {
            item_degree[i] += 1;
            user_degree[u] += 1;
            user_train_items[u].push(i);
        }
        for &(u, _) in val.iter().chain(&test) {
            if user_degree[u] == 0 {
                return Err(Error::Argument(format!(
                    "user {u} has held-out interactions but none in train"
                )));
            }
        }
        Ok(InteractionDataset {
            num_users,
            num_items,
            train,
            val,
            test,
            item_degree,
            user_degree,
            user_train_items,
            user_keys: (0..num_users).map(|u| u.to_string()).collect(),
            item_keys: (0..num_items).map(|i| i.to_string()).collect(),
        })
    }

    pub fn pairs(&self, split: Split) -> &[(usize, usize)] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Per-user sorted item lists for one split.
    pub fn user_items(&self, split: Split) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for &(u, i) in self.pairs(split) {
            out[u].push(i);
        }
        out
    }

    pub fn is_train_pair(&self, u: usize, i: usize) -> bool {
        self.user_train_items[u].binary_search(&i).is_ok()
    }

    /// Items with no training interactions.
    pub fn cold_items(&self) -> Vec<usize> {
        (0..self.num_items)
            .filter(|&i| self.item_degree[i] == 0)
            .collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn stats(&self) -> DatasetStats {
        let interactions = self.train.len() + self.val.len() + self.test.len();
        DatasetStats {
            num_users: self.num_users,
            num_items: self.num_items,
            interactions,
            train: self.train.len(),
            val: self.val.len(),
            test: self.test.len(),
            sparsity: interactions as f64 / (self.num_users as f64 * self.num_items as f64),
        }
    }

    /// Writes `train.tsv`, `val.tsv`, `test.tsv`, the two id maps and `stats.tsv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let pairs_file = |name: &str, pairs: &[(usize, usize)]| -> Result<()> {
            let path = dir.join(name);
            let mut s = String::with_capacity(pairs.len() * 10);
            for (u, i) in pairs {
                s.push_str(&format!("{u}\t{i}\n"));
            }
            fs::write(&path, s).map_err(|e| Error::io(&path, e))
        };
        pairs_file("train.tsv", &self.train)?;
        pairs_file("val.tsv", &self.val)?;
        pairs_file("test.tsv", &self.test)?;
        for (name, keys) in [
            ("idmap_users.tsv", &self.user_keys),
            ("idmap_items.tsv", &self.item_keys),
        ] {
            let path = dir.join(name);
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            for (id, key) in keys.iter().enumerate() {
                writeln!(w, "{id}\t{key}").map_err(|e| Error::io(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join("stats.tsv");
        fs::write(&path, self.stats().to_tsv()).map_err(|e| Error::io(&path, e))
    }

    /// Loads a directory produced by [`InteractionDataset::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
        };
        let keys = |name: &str| -> Result<Vec<String>> {
            let text = read(name)?;
            let mut out = Vec::new();
            for (n, line) in text.lines().enumerate() {
                let (id, key) = line.split_once('\t').ok_or_else(|| Error::Parse {
                    line: n + 1,
                    message: format!("{name}: expected `id<TAB>key`"),
                })?;
                if id.parse::<usize>().ok() != Some(out.len()) {
                    return Err(Error::Parse {
                        line: n + 1,
                        message: format!("{name}: ids must be 0..n in order"),
                    });
                }
                out.push(key.to_string());
            }
            Ok(out)
        };
        let pairs = |name: &str| -> Result<Vec<(usize, usize)>> {
            let text = read(name)?;
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.is_empty())
                .map(|(n, line)| {
                    let parsed = line
                        .split_once('\t')
                        .and_then(|(u, i)| Some((u.parse().ok()?, i.parse().ok()?)));
                    parsed.ok_or_else(|| Error::Parse {
                        line: n + 1,
                        message: format!("{name}: expected `u<TAB>i` dense ids"),
                    })
                })
                .collect()
        };
        let user_keys = keys("idmap_users.tsv")?;
        let item_keys = keys("idmap_items.tsv")?;
        let mut ds = InteractionDataset::from_parts(
            user_keys.len(),
            item_keys.len(),
            pairs("train.tsv")?,
            pairs("val.tsv")?,
            pairs("test.tsv")?,
        )?;
        ds.user_keys = user_keys;
        ds.item_keys = item_keys;
        Ok(ds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub num_users: usize,
    pub num_items: usize,
    pub interactions: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub sparsity: f64,
}

impl DatasetStats {
    pub fn to_tsv(&self) -> String {
        format!(
            "num_users\tnum_items\ttrain\tval\ttest\tsparsity\n{}\t{}\t{}\t{}\t{}\t{:.6e}\n",
            self.num_users, self.num_items, self.train, self.val, self.test, self.sparsity
        )
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>10} {:>10} {:>14} {:>10}", "#Users", "#Items", "#Interactions", "Sparsity")?;
        write!(
            f,
            "{:>10} {:>10} {:>14} {:>9.3}%",
            self.num_users,
            self.num_items,
            self.interactions,
            self.sparsity * 100.0
        )
    }
}

/// Splits each user's interactions independently. Dense ids follow first
/// appearance in `raw`; every user keeps at least one training pair.
pub fn split(raw: &RawInteractions, cfg: &SplitConfig) -> Result<InteractionDataset> {
    cfg.validate()?;
    if raw.is_empty() {
        return Err(Error::EmptyInput("nothing to split".into()));
    }
    let mut user_ids: HashMap<&str, usize> = HashMap::new();
    let mut item_ids: HashMap<&str, usize> = HashMap::new();
    let mut user_keys = Vec::new();
    let mut item_keys = Vec::new();
    let mut per_user: Vec<Vec<usize>> = Vec::new();
    for (u, i) in &raw.records {
        let uid = *user_ids.entry(u).or_insert_with(|| {
            user_keys.push(u.clone());
            per_user.push(Vec::new());
            user_keys.len() - 1
        });
        let iid = *item_ids.entry(i).or_insert_with(|| {
            item_keys.push(i.clone());
            item_keys.len() - 1
        });
        per_user[uid].push(iid);
    }

    let mut rng = seeded_rng(cfg.seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (u, items) in per_user.iter_mut().enumerate() {
        items.shuffle(&mut rng);
        let (n_train, n_val, _) = cfg.counts(items.len());
        for (k, &i) in items.iter().enumerate() {
            if k < n_train {
                train.push((u, i));
            } else if k < n_train + n_val {
                val.push((u, i));
            } else {
                test.push((u, i));
            }
        }
    }
    let mut ds =
        InteractionDataset::from_parts(user_keys.len(), item_keys.len(), train, val, test)?;
    ds.user_keys = user_keys;
    ds.item_keys = item_keys;
    Ok(ds)
}

/// Synthetic long-tail interactions: every user draws
/// `interactions_per_user` distinct items with probability proportional to
/// `(rank + 1)^-zipf_exponent`, item `k` having popularity rank `k`.
pub fn synth_powerlaw(
    num_users: usize,
    num_items: usize,
    interactions_per_user: usize,
    zipf_exponent: f64,
    seed: u64,
) -> Result<RawInteractions> {
    if num_users == 0 || num_items == 0 || interactions_per_user == 0 {
        return Err(Error::Argument("synthetic sizes must be positive".into()));
    }
    if interactions_per_user > num_items {
        return Err(Error::Argument(format!(
            "cannot draw {interactions_per_user} distinct items from {num_items}"
        )));
    }
    if !(zipf_exponent >= 0.0) || !zipf_exponent.is_finite() {
        return Err(Error::Argument(format!(
            "zipf exponent must be finite and >= 0, got {zipf_exponent}"
        )));
    }
    let weights: Vec<f64> = (0..num_items)
        .map(|k| ((k + 1) as f64).powf(-zipf_exponent))
        .collect();
    let mut rng = seeded_rng(seed);
    let mut pairs = Vec::with_capacity(num_users * interactions_per_user);
    for u in 0..num_users {
        let picked = rand::seq::index::sample_weighted(
            &mut rng,
            num_items,
            |k| weights[k],
            interactions_per_user,
        )
        .map_err(|e| Error::Argument(format!("weighted sampling failed: {e}")))?;
        let mut items = picked.into_vec();
        items.sort_unstable();
        pairs.extend(items.into_iter().map(|i| (format!("u{u}"), format!("i{i}"))));
    }
    Ok(RawInteractions::from_pairs(pairs))
}
