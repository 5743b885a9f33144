//! MF, LightGCN and LR-GCCF backbones over a shared propagation operator.
//!
//! All three share the same ego embeddings `E^(0)`. Graph backbones propagate
//! `E^(l) = P · E^(l-1)` for `L` layers and combine the layers: LightGCN
//! averages them, LR-GCCF concatenates them. MF uses `E^(0)` directly.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::sparse::{build_adjacency, normalize_r, CsrMatrix, NormalizedAdjacency};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backbone {
    Mf,
    LightGcn,
    LrGccf,
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Mf => "MF",
            Backbone::LightGcn => "LIGHTGCN",
            Backbone::LrGccf => "LRGCCF",
        })
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mf" | "mfbpr" => Ok(Backbone::Mf),
            "lightgcn" => Ok(Backbone::LightGcn),
            "lrgccf" => Ok(Backbone::LrGccf),
            _ => Err(Error::Config(format!("unknown backbone `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub backbone: Backbone,
    pub layers: usize,
    pub r: f64,
    pub embed_dim: usize,
}

impl ModelSpec {
    pub fn new(backbone: Backbone, layers: usize, r: f64, embed_dim: usize) -> Result<Self> {
        let spec = ModelSpec {
            backbone,
            layers,
            r,
            embed_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone == Backbone::Mf && self.layers != 0 {
            return Err(Error::Config(format!(
                "MF has no propagation layers, got L={}",
                self.layers
            )));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if !self.r.is_finite() {
            return Err(Error::Config(format!("r must be finite, got {}", self.r)));
        }
        Ok(())
    }

    /// LR-GCCF propagates over `A + I`, LightGCN over `A`.
    pub fn self_loops(&self) -> bool {
        self.backbone == Backbone::LrGccf
    }

    pub fn combined_dim(&self) -> usize {
        match self.backbone {
            Backbone::LrGccf => self.embed_dim * (self.layers + 1),
            _ => self.embed_dim,
        }
    }

    /// Normalized propagation operator over the training graph.
    pub fn propagation(&self, ds: &InteractionDataset) -> Result<NormalizedAdjacency> {
        self.propagation_from(&build_adjacency(ds, self.self_loops()))
    }

    /// Normalizes an existing adjacency (e.g. after DegDrop), adding the
    /// diagonal first when the backbone needs self-loops.
    pub fn propagation_from(&self, adj: &CsrMatrix) -> Result<NormalizedAdjacency> {
        if self.self_loops() {
            let n = adj.num_rows();
            let mut t: Vec<(usize, usize, f64)> = adj.triplets().map(|(a, b, _)| (a, b, 1.0)).collect();
            t.extend((0..n).filter(|&k| adj.get(k, k).is_none()).map(|k| (k, k, 1.0)));
            normalize_r(&CsrMatrix::from_triplets(n, n, &t)?, self.r)
        } else {
            normalize_r(adj, self.r)
        }
    }
}

/// Ego embeddings `E^(0)`: users in rows `[0, |U|)`, items after them.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub num_users: usize,
    pub num_items: usize,
    pub e0: Array2<f64>,
}

impl EmbeddingTable {
    /// Xavier-uniform init with `fan_in = fan_out = dim`.
    pub fn xavier<R: Rng>(num_users: usize, num_items: usize, dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (2.0 * dim as f64)).sqrt();
        let e0 = Array2::from_shape_simple_fn((num_users + num_items, dim), || {
            rng.gen_range(-bound..bound)
        });
        EmbeddingTable {
            num_users,
            num_items,
            e0,
        }
    }

    pub fn from_matrix(num_users: usize, num_items: usize, e0: Array2<f64>) -> Result<Self> {
        if e0.nrows() != num_users + num_items {
            return Err(Error::Argument(format!(
                "embedding matrix has {} rows, expected {}",
                e0.nrows(),
                num_users + num_items
            )));
        }
        Ok(EmbeddingTable {
            num_users,
            num_items,
            e0,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.e0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.e0.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.e0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `E^(0) .. E^(L)`.
    pub layers: Vec<Array2<f64>>,
    pub combined: Array2<f64>,
    pub num_users: usize,
}

impl ForwardCache {
    pub fn user_rows(&self) -> ndarray::ArrayView2<'_, f64> {
        self.combined.slice(s![..self.num_users, ..])
    }

    pub fn item_rows(&self) -> ndarray::ArrayView2<'_, f64> {
        self.combined.slice(s![self.num_users.., ..])
    }

    /// Score of user `u` for item `i`.
    pub fn predict(&self, u: usize, i: usize) -> Result<f64> {
        let num_items = self.combined.nrows() - self.num_users;
        if u >= self.num_users || i >= num_items {
            return Err(Error::Argument(format!(
                "predict({u},{i}) outside {} users x {num_items} items",
                self.num_users
            )));
        }
        Ok(self.combined.row(u).dot(&self.combined.row(self.num_users + i)))
    }
}

fn check_operator(spec: &ModelSpec, p: &NormalizedAdjacency, rows: usize) -> Result<()> {
    if spec.layers > 0 && p.size() != rows {
        return Err(Error::Argument(format!(
            "propagation operator is {0}x{0} but there are {rows} embedding rows",
            p.size()
        )));
    }
    Ok(())
}

pub fn forward(
    spec: &ModelSpec,
    p: &NormalizedAdjacency,
    table: &EmbeddingTable,
) -> Result<ForwardCache> {
    if table.dim() != spec.embed_dim {
        return Err(Error::Argument(format!(
            "table has dimension {}, model expects {}",
            table.dim(),
            spec.embed_dim
        )));
    }
    check_operator(spec, p, table.num_nodes())?;
    let mut layers = Vec::with_capacity(spec.layers + 1);
    layers.push(table.e0.clone());
    for l in 1..=spec.layers {
        let next = p.forward.spmm(&layers[l - 1].view())?;
        layers.push(next);
    }
    let combined = match spec.backbone {
        Backbone::Mf => layers[0].clone(),
        Backbone::LightGcn => {
            let mut sum = layers[0].clone();
            for layer in &layers[1..] {
                sum += layer;
            }
            sum / (spec.layers + 1) as f64
        }
        Backbone::LrGccf => {
            let views: Vec<_> = layers.iter().map(|m| m.view()).collect();
            concatenate(Axis(1), &views).expect("layers share row count")
        }
    };
    Ok(ForwardCache {
        layers,
        combined,
        num_users: table.num_users,
    })
}

/// Pulls a gradient on the combined embeddings back to `E^(0)`.
///
/// LightGCN: `(1/(L+1)) Σ_l (Pᵀ)^l G`; LR-GCCF: `Σ_l (Pᵀ)^l G_l` with `G_l`
/// the l-th column block. Both use Horner's scheme, so exactly `L`
/// transposed products are needed.
pub fn backward(
    spec: &ModelSpec,
    p: &NormalizedAdjacency,
    grad_combined: &Array2<f64>,
) -> Result<Array2<f64>> {
    if grad_combined.ncols() != spec.combined_dim() {
        return Err(Error::Argument(format!(
            "gradient has {} columns, combined embeddings have {}",
            grad_combined.ncols(),
            spec.combined_dim()
        )));
    }
    check_operator(spec, p, grad_combined.nrows())?;
    let d = spec.embed_dim;
    let big_l = spec.layers;
    match spec.backbone {
        Backbone::Mf => Ok(grad_combined.clone()),
        Backbone::LightGcn => {
            let mut acc = grad_combined.clone();
            for _ in 0..big_l {
                acc = p.backward.spmm(&acc.view())?;
                acc += grad_combined;
            }
            Ok(acc / (big_l + 1) as f64)
        }
        Backbone::LrGccf => {
            let block = |l: usize| grad_combined.slice(s![.., l * d..(l + 1) * d]);
            let mut acc = block(big_l).to_owned();
            for l in (0..big_l).rev() {
                acc = p.backward.spmm(&acc.view())?;
                acc += &block(l);
            }
            Ok(acc)
        }
    }
}

const CHECKPOINT_MAGIC: &str = "adjnorm-checkpoint 1";

/// Writes a text header (spec, seed, dims) terminated by `end`, followed by
/// `E^(0)` as row-major little-endian f64.
pub fn save_checkpoint(path: &Path, spec: &ModelSpec, table: &EmbeddingTable, seed: u64) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = Vec::with_capacity(table.e0.len() * 8 + 256);
    let header = format!(
        "{CHECKPOINT_MAGIC}\nbackbone {}\nlayers {}\nr {:?}\nembed_dim {}\nseed {}\nnum_users {}\nnum_items {}\nrows {}\ncols {}\nend\n",
        spec.backbone,
        spec.layers,
        spec.r,
        spec.embed_dim,
        seed,
        table.num_users,
        table.num_items,
        table.e0.nrows(),
        table.e0.ncols()
    );
    bytes.extend_from_slice(header.as_bytes());
    for v in table.e0.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub table: EmbeddingTable,
    pub seed: u64,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Parse { line: 0, message: format!("{}: {msg}", path.display()) };
    let marker = b"\nend\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("missing header terminator".into()))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("not an adjnorm checkpoint".into()));
    }
    let mut fields = std::collections::HashMap::new();
    for line in lines {
        let (k, v) = line.split_once(' ').ok_or_else(|| bad(format!("bad header line {line:?}")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing `{k}`")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
    let spec = ModelSpec::new(
        get("backbone")?.parse()?,
        num("layers")?,
        get("r")?.parse().map_err(|_| bad("bad `r`".into()))?,
        num("embed_dim")?,
    )?;
    let seed = get("seed")?.parse().map_err(|_| bad("bad `seed`".into()))?;
    let (rows, cols) = (num("rows")?, num("cols")?);
    let body = &bytes[split + marker.len()..];
    if body.len() != rows * cols * 8 {
        return Err(bad(format!("expected {} data bytes, found {}", rows * cols * 8, body.len())));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let e0 = Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(e.to_string()))?;
    let table = EmbeddingTable::from_matrix(num("num_users")?, num("num_items")?, e0)?;
    Ok(Checkpoint { spec, table, seed })
}
