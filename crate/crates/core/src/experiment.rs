//! Experiment configuration and orchestration behind the CLI.
//!
//! A config is a TOML file with the sections `dataset`, `model`, `train`,
//! `baseline`, `eval` and `output`:
//!
//! ```toml
//! [dataset]
//! name = "synth"
//! synth = { users = 2000, items = 1000, per_user = 10, zipf = 1.0, seed = 1 }
//! # or: path = "ratings.tsv"
//! kcore = 1
//! split = [0.7, 0.1, 0.2]
//! split_seed = 2022
//!
//! [model]
//! backbone = "lightgcn"   # mf | lightgcn | lrgccf
//! layers = 3
//! r = 0.5
//! embed_dim = 64
//!
//! [train]
//! learning_rate = 0.001
//! l2_lambda = 1e-4
//! batch_size = 2048
//! max_epochs = 1000
//! eval_every = 5
//! patience = 5
//! neg_alpha = 0.0
//!
//! [baseline]
//! kind = "none"           # none | ns | degdrop | pc
//! alpha = 0.0
//!
//! [eval]
//! ks = [20]
//! seeds = [1, 2, 3]
//!
//! [output]
//! dir = "runs/synth"
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::baselines::{pc_adjust_in_place, BaselineConfig, BaselineKind};
use crate::dataset::{
    ingest, kcore_filter, split, synth_powerlaw, DatasetStats, InputFormat, InteractionDataset,
    Split, SplitConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{forward, load_checkpoint, save_checkpoint, Backbone, ModelSpec};
use crate::plot::{panels_svg, Panel, Series};
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub users: usize,
    pub items: usize,
    pub per_user: usize,
    pub zipf: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSection>,
    #[serde(default = "one")]
    pub kcore: usize,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub backbone: String,
    pub layers: usize,
    pub r: f64,
    pub embed_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            backbone: "lightgcn".into(),
            layers: 3,
            r: 0.5,
            embed_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub neg_alpha: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            l2_lambda: d.l2_lambda,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            eval_every: d.eval_every,
            patience: d.patience,
            neg_alpha: d.neg_alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub kind: String,
    pub alpha: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            kind: "none".into(),
            alpha: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            ks: vec![20],
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Prepared split files; defaults to `{dir}/data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub eval: EvalSection,
    pub output: OutputSection,
}

fn default_name() -> String {
    "dataset".into()
}
fn one() -> usize {
    1
}
fn default_split() -> [f64; 3] {
    [0.7, 0.1, 0.2]
}
fn default_split_seed() -> u64 {
    2022
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = ExperimentConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.dataset.path.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.output.dir);
        if let Some(p) = cfg.output.data_dir.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.path, &self.dataset.synth) {
            (None, None) => {
                return Err(Error::Config("dataset needs either `path` or `synth`".into()))
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config("dataset: `path` and `synth` are exclusive".into()))
            }
            _ => {}
        }
        self.split_config().validate()?;
        self.model_spec()?;
        self.train_config(0).validate()?;
        self.baseline_config()?;
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("eval.seeds must not be empty".into()));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config("eval.ks must be a nonempty list of K >= 1".into()));
        }
        Ok(())
    }

    pub fn split_config(&self) -> SplitConfig {
        let [a, b, c] = self.dataset.split;
        SplitConfig {
            ratios: (a, b, c),
            seed: self.dataset.split_seed,
            kcore_min: self.dataset.kcore,
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(
            self.model.backbone.parse()?,
            self.model.layers,
            self.model.r,
            self.model.embed_dim,
        )
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            l2_lambda: t.l2_lambda,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            eval_every: t.eval_every,
            patience: t.patience,
            neg_alpha: t.neg_alpha,
            seed,
        }
    }

    pub fn baseline_config(&self) -> Result<BaselineConfig> {
        BaselineConfig::new(self.baseline.kind.parse()?, self.baseline.alpha)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output
            .data_dir
            .clone()
            .unwrap_or_else(|| self.output.dir.join("data"))
    }

    pub fn run_id(&self, seed: u64) -> String {
        let spec = &self.model;
        let mut id = format!(
            "{}_r{}_L{}",
            spec.backbone.to_ascii_lowercase(),
            spec.r,
            spec.layers
        );
        if self.baseline.kind != "none" {
            let _ = write!(id, "_{}{}", self.baseline.kind.to_ascii_lowercase(), self.baseline.alpha);
        }
        let _ = write!(id, "_seed{seed}");
        id
    }
}

/// Builds the filtered and split dataset, writes it to the data directory
/// and returns its statistics.
pub fn run_prepare(cfg: &ExperimentConfig) -> Result<(InteractionDataset, DatasetStats)> {
    let raw = match (&cfg.dataset.path, &cfg.dataset.synth) {
        (Some(path), _) => {
            if !path.exists() {
                return Err(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
                ));
            }
            ingest(path, InputFormat::Tsv)?
        }
        (None, Some(s)) => synth_powerlaw(s.users, s.items, s.per_user, s.zipf, s.seed)?,
        (None, None) => unreachable!("validated"),
    };
    let filtered = if cfg.dataset.kcore > 1 {
        kcore_filter(&raw, cfg.dataset.kcore)
    } else {
        raw
    };
    if filtered.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no interactions survive {}-core filtering",
            cfg.dataset.kcore
        )));
    }
    let ds = split(&filtered, &cfg.split_config())?;
    ds.write_dir(&cfg.data_dir())?;
    let stats = ds.stats();
    Ok((ds, stats))
}

pub fn load_prepared(cfg: &ExperimentConfig) -> Result<InteractionDataset> {
    InteractionDataset::read_dir(&cfg.data_dir())
}

/// One line of a metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub dataset: String,
    pub backbone: Backbone,
    pub r: f64,
    pub layers: usize,
    /// Seed, or `mean` for summary rows.
    pub seed: String,
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub nov: f64,
    pub pru: f64,
    pub num_users_evaluated: usize,
    pub lambda: f64,
    pub baseline: BaselineKind,
    pub alpha: f64,
    /// `ok`, `failed` or `summary`.
    pub status: String,
}

pub const METRICS_HEADER: &str =
    "dataset,backbone,r,L,seed,K,recall,ndcg,nov,pru,num_users_evaluated,lambda,baseline,alpha,status";

fn fmt_metric(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

impl MetricsRow {
    fn new(cfg: &ExperimentConfig, spec: &ModelSpec, seed: String, k: usize) -> Self {
        MetricsRow {
            dataset: cfg.dataset.name.clone(),
            backbone: spec.backbone,
            r: spec.r,
            layers: spec.layers,
            seed,
            k,
            recall: f64::NAN,
            ndcg: f64::NAN,
            nov: f64::NAN,
            pru: f64::NAN,
            num_users_evaluated: 0,
            lambda: cfg.train.l2_lambda,
            baseline: cfg.baseline.kind.parse().unwrap_or_default(),
            alpha: cfg.baseline.alpha,
            status: "failed".into(),
        }
    }

    fn with_report(mut self, m: &MetricsReport) -> Self {
        self.recall = m.recall;
        self.ndcg = m.ndcg;
        self.nov = m.nov;
        self.pru = m.pru;
        self.num_users_evaluated = m.num_evaluated_users;
        self.status = "ok".into();
        self
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.dataset,
            self.backbone,
            self.r,
            self.layers,
            self.seed,
            self.k,
            fmt_metric(self.recall),
            fmt_metric(self.ndcg),
            fmt_metric(self.nov),
            fmt_metric(self.pru),
            self.num_users_evaluated,
            self.lambda,
            self.baseline,
            self.alpha,
            self.status
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse {
            line: 0,
            message: format!("bad metrics row {line:?}"),
        };
        if f.len() != 15 {
            return Err(bad());
        }
        let num = |s: &str| -> Result<f64> {
            if s.is_empty() {
                Ok(f64::NAN)
            } else {
                s.parse().map_err(|_| bad())
            }
        };
        Ok(MetricsRow {
            dataset: f[0].to_string(),
            backbone: f[1].parse()?,
            r: num(f[2])?,
            layers: f[3].parse().map_err(|_| bad())?,
            seed: f[4].to_string(),
            k: f[5].parse().map_err(|_| bad())?,
            recall: num(f[6])?,
            ndcg: num(f[7])?,
            nov: num(f[8])?,
            pru: num(f[9])?,
            num_users_evaluated: f[10].parse().map_err(|_| bad())?,
            lambda: num(f[11])?,
            baseline: f[12].parse()?,
            alpha: num(f[13])?,
            status: f[14].to_string(),
        })
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRow::from_csv)
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Result of training and evaluating every seed of one configuration.
#[derive(Debug, Clone)]
pub struct TrainEvalResult {
    /// Per-seed rows followed by one `mean` row per K.
    pub rows: Vec<MetricsRow>,
    pub summary_csv: String,
}

impl TrainEvalResult {
    pub fn summary_rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(|r| r.status == "summary")
    }

    /// Seed-mean row for cut-off `k`.
    pub fn mean_at(&self, k: usize) -> Option<&MetricsRow> {
        self.summary_rows().find(|r| r.k == k)
    }
}

fn summarize(cfg: &ExperimentConfig, spec: &ModelSpec, rows: &[MetricsRow]) -> (Vec<MetricsRow>, String) {
    let mut summary = Vec::new();
    let mut csv = String::from(
        "dataset,backbone,r,L,K,n_seeds,recall_mean,recall_std,ndcg_mean,ndcg_std,nov_mean,nov_std,pru_mean,pru_std\n",
    );
    for &k in &cfg.eval.ks {
        let ok: Vec<&MetricsRow> = rows.iter().filter(|r| r.k == k && r.is_ok()).collect();
        let col = |f: fn(&MetricsRow) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (rec, ndcg, nov, pru) = (
            col(|r| r.recall),
            col(|r| r.ndcg),
            col(|r| r.nov),
            col(|r| r.pru),
        );
        let mut row = MetricsRow::new(cfg, spec, "mean".into(), k);
        row.recall = rec.0;
        row.ndcg = ndcg.0;
        row.nov = nov.0;
        row.pru = pru.0;
        row.num_users_evaluated = ok.first().map_or(0, |r| r.num_users_evaluated);
        row.status = "summary".into();
        summary.push(row);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            cfg.dataset.name,
            spec.backbone,
            spec.r,
            spec.layers,
            k,
            ok.len(),
            fmt_metric(rec.0),
            fmt_metric(rec.1),
            fmt_metric(ndcg.0),
            fmt_metric(ndcg.1),
            fmt_metric(nov.0),
            fmt_metric(nov.1),
            fmt_metric(pru.0),
            fmt_metric(pru.1)
        );
    }
    (summary, csv)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Test-split metrics for a trained table, with PC re-scoring when configured.
fn test_metrics(
    cfg: &ExperimentConfig,
    ds: &InteractionDataset,
    spec: &ModelSpec,
    table: &crate::model::EmbeddingTable,
) -> Result<Vec<MetricsReport>> {
    let baseline = cfg.baseline_config()?;
    let p = spec.propagation(ds)?;
    let cache = forward(spec, &p, table)?;
    let pc = |scores: &mut [f64]| pc_adjust_in_place(scores, &ds.item_degree, baseline.alpha);
    let adjust: Option<crate::metrics::ScoreAdjust<'_>> =
        (baseline.kind == BaselineKind::Pc).then_some(&pc);
    evaluate(&cache, ds, Split::Test, &cfg.eval.ks, adjust)
}

/// Trains every configured seed, evaluates the best snapshot on the test
/// split and writes `metrics.csv`, `summary.csv`, and per-run
/// `{run_id}/best.ckpt` and `{run_id}/train_log.csv`.
pub fn run_train_eval(cfg: &ExperimentConfig) -> Result<TrainEvalResult> {
    let ds = load_prepared(cfg)?;
    run_train_eval_on(cfg, &ds)
}

pub fn run_train_eval_on(cfg: &ExperimentConfig, ds: &InteractionDataset) -> Result<TrainEvalResult> {
    let spec = cfg.model_spec()?;
    let baseline = cfg.baseline_config()?;
    let mut rows = Vec::new();
    for &seed in &cfg.eval.seeds {
        let run_dir = cfg.output.dir.join(cfg.run_id(seed));
        let outcome = match train(ds, &spec, &cfg.train_config(seed), &baseline) {
            Ok(o) => o,
            Err(Error::Numerical(msg)) => {
                log::error!("seed {seed}: training aborted: {msg}");
                write_file(&run_dir.join("train_log.csv"), &format!("# aborted: {msg}\n"))?;
                for &k in &cfg.eval.ks {
                    rows.push(MetricsRow::new(cfg, &spec, seed.to_string(), k));
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        save_checkpoint(&run_dir.join("best.ckpt"), &spec, &outcome.best, seed)?;
        write_file(&run_dir.join("train_log.csv"), &outcome.log_csv())?;
        log::info!(
            "seed {seed}: {} epochs, best epoch {}, val recall@20 {:?}",
            outcome.epochs_run,
            outcome.best_epoch,
            outcome.best_val_recall
        );
        for m in test_metrics(cfg, ds, &spec, &outcome.best)? {
            rows.push(MetricsRow::new(cfg, &spec, seed.to_string(), m.k).with_report(&m));
        }
    }
    let (summary, summary_csv) = summarize(cfg, &spec, &rows);
    rows.extend(summary);
    write_file(&cfg.output.dir.join("metrics.csv"), &metrics_csv(&rows))?;
    write_file(&cfg.output.dir.join("summary.csv"), &summary_csv)?;
    Ok(TrainEvalResult { rows, summary_csv })
}

/// Evaluates a saved checkpoint on the test split and writes
/// `eval_metrics.csv` next to it.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Vec<MetricsRow>> {
    let ds = load_prepared(cfg)?;
    let ck = load_checkpoint(checkpoint)?;
    if ck.table.num_users != ds.num_users || ck.table.num_items != ds.num_items {
        return Err(Error::Config(format!(
            "checkpoint covers {}x{} but the prepared data is {}x{}",
            ck.table.num_users, ck.table.num_items, ds.num_users, ds.num_items
        )));
    }
    let rows: Vec<MetricsRow> = test_metrics(cfg, &ds, &ck.spec, &ck.table)?
        .iter()
        .map(|m| MetricsRow::new(cfg, &ck.spec, ck.seed.to_string(), m.k).with_report(m))
        .collect();
    let out = checkpoint
        .parent()
        .unwrap_or(Path::new("."))
        .join("eval_metrics.csv");
    write_file(&out, &metrics_csv(&rows))?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    R,
    Depth,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r" => Ok(SweepAxis::R),
            "depth" | "l" | "layers" => Ok(SweepAxis::Depth),
            _ => Err(Error::Argument(format!("unknown sweep axis `{s}` (use r or depth)"))),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::R => "r",
            SweepAxis::Depth => "depth",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn new(axis: SweepAxis, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("sweep needs at least one value".into()));
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Argument("sweep values must be strictly increasing".into()));
        }
        if axis == SweepAxis::Depth && values.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(Error::Argument("depth values must be non-negative integers".into()));
        }
        Ok(SweepSpec { axis, values })
    }

    pub fn parse_values(list: &str) -> Result<Vec<f64>> {
        list.split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Argument(format!("bad sweep value `{v}`")))
            })
            .collect()
    }

    /// Config for one sweep cell: the axis value applied, output redirected
    /// to its own subdirectory, prepared data shared with the parent.
    pub fn cell_config(&self, base: &ExperimentConfig, value: f64) -> ExperimentConfig {
        let mut cfg = base.clone();
        match self.axis {
            SweepAxis::R => cfg.model.r = value,
            SweepAxis::Depth => cfg.model.layers = value as usize,
        }
        cfg.output.data_dir = Some(base.data_dir());
        cfg.output.dir = base.output.dir.join(format!("sweep_{}", self.axis)).join(value.to_string());
        cfg
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Run cells as separate processes of this executable (`train --config`).
    pub parallel_exe: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub row: MetricsRow,
}

pub const SWEEP_HEADER_PREFIX: &str = "axis,value,";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER_PREFIX}{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.axis, r.value, r.row.to_csv());
    }
    s
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut parts = line.splitn(3, ',');
            let axis = parts.next().unwrap_or_default().parse()?;
            let value = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse { line: 0, message: format!("bad sweep row {line:?}") })?;
            let row = MetricsRow::from_csv(parts.next().unwrap_or_default())?;
            Ok(SweepRow { axis, value, row })
        })
        .collect()
}

/// Seed-mean rows at cut-off `k`, one per sweep value, in sweep order.
pub fn sweep_means(rows: &[SweepRow], k: usize) -> Vec<&SweepRow> {
    rows.iter()
        .filter(|r| r.row.status == "summary" && r.row.k == k)
        .collect()
}

/// Runs one train/eval per sweep value and writes `sweep.csv` and `sweep.svg`.
pub fn run_sweep(cfg: &ExperimentConfig, sweep: &SweepSpec, opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    let ds = load_prepared(cfg)?;
    let cells: Vec<ExperimentConfig> = sweep.values.iter().map(|&v| sweep.cell_config(cfg, v)).collect();
    for cell in &cells {
        cell.validate()?;
    }
    let mut outcomes: Vec<Result<Vec<MetricsRow>>> = Vec::new();
    match &opts.parallel_exe {
        None => {
            for cell in &cells {
                outcomes.push(run_train_eval_on(cell, &ds).map(|r| r.rows));
            }
        }
        Some(exe) => {
            let mut children = Vec::new();
            for cell in &cells {
                let path = cell.output.dir.join("config.toml");
                write_file(&path, &cell.to_toml())?;
                let child = Command::new(exe)
                    .arg("train")
                    .arg("--config")
                    .arg(&path)
                    .spawn()
                    .map_err(|e| Error::io(exe, e))?;
                children.push(child);
            }
            for (cell, mut child) in cells.iter().zip(children) {
                let status = child.wait().map_err(|e| Error::io(exe, e))?;
                let result = if status.success() {
                    let path = cell.output.dir.join("metrics.csv");
                    fs::read_to_string(&path)
                        .map_err(|e| Error::io(&path, e))
                        .and_then(|t| parse_metrics_csv(&t))
                } else {
                    Err(Error::Numerical(format!("cell exited with {status}")))
                };
                outcomes.push(result);
            }
        }
    }

    let spec = cfg.model_spec()?;
    let mut rows = Vec::new();
    for ((&value, cell), outcome) in sweep.values.iter().zip(&cells).zip(outcomes) {
        match outcome {
            Ok(cell_rows) => rows.extend(cell_rows.into_iter().map(|row| SweepRow {
                axis: sweep.axis,
                value,
                row,
            })),
            Err(e) => {
                log::error!("sweep cell {}={value} failed: {e}", sweep.axis);
                let mut cell_spec = spec;
                cell_spec.r = cell.model.r;
                cell_spec.layers = cell.model.layers;
                for &k in &cfg.eval.ks {
                    rows.push(SweepRow {
                        axis: sweep.axis,
                        value,
                        row: MetricsRow::new(cell, &cell_spec, "-".into(), k),
                    });
                }
            }
        }
    }
    write_file(&cfg.output.dir.join("sweep.csv"), &sweep_csv(&rows))?;
    write_file(&cfg.output.dir.join("sweep.svg"), &sweep_svg(&rows))?;
    Ok(rows)
}

/// Two panels: accuracy (Recall, NDCG) and novelty (Nov, PRU) against the
/// sweep axis, using seed means at the smallest reported K.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let Some(k) = rows.iter().filter(|r| r.row.status == "summary").map(|r| r.row.k).min() else {
        return panels_svg(&[]);
    };
    let means = sweep_means(rows, k);
    let axis = means.first().map_or(SweepAxis::R, |r| r.axis);
    let series = |name: &str, f: fn(&MetricsRow) -> f64| Series {
        name: format!("{name}@{k}"),
        points: means.iter().map(|r| (r.value, f(&r.row))).collect(),
    };
    let x_label = match axis {
        SweepAxis::R => "normalization coefficient r".to_string(),
        SweepAxis::Depth => "propagation layers L".to_string(),
    };
    panels_svg(&[
        Panel {
            title: "Accuracy".into(),
            x_label: x_label.clone(),
            y_label: "metric".into(),
            series: vec![series("Recall", |r| r.recall), series("NDCG", |r| r.ndcg)],
        },
        Panel {
            title: "Novelty".into(),
            x_label,
            y_label: "metric".into(),
            series: vec![series("Nov", |r| r.nov), series("PRU", |r| r.pru)],
        },
    ])
}

/// Regenerates `sweep.svg` from `sweep.csv` in `dir`.
pub fn run_report(dir: &Path) -> Result<PathBuf> {
    let csv = dir.join("sweep.csv");
    let text = fs::read_to_string(&csv).map_err(|e| Error::io(&csv, e))?;
    let rows = parse_sweep_csv(&text)?;
    let out = dir.join("sweep.svg");
    write_file(&out, &sweep_svg(&rows))?;
    Ok(out)
}
