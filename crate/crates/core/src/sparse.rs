//! Compressed sparse row matrices and the r-normalized bipartite
//! propagation operator.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    num_rows: usize,
    num_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from raw CSR arrays, checking every structural invariant.
    pub fn new(
        num_rows: usize,
        num_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let m = CsrMatrix {
            num_rows,
            num_cols,
            row_ptr,
            col_idx,
            values,
        };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Argument(format!("invalid CSR: {msg}")));
        if self.row_ptr.len() != self.num_rows + 1 || self.row_ptr[0] != 0 {
            return bad("row_ptr must have num_rows+1 entries starting at 0");
        }
        if self.row_ptr[self.num_rows] != self.col_idx.len()
            || self.col_idx.len() != self.values.len()
        {
            return bad("row_ptr end, col_idx and values disagree on nnz");
        }
        for r in 0..self.num_rows {
            let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
            if s > e {
                return bad("row_ptr decreases");
            }
            let cols = &self.col_idx[s..e];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad("columns within a row must be strictly increasing");
            }
            if cols.last().is_some_and(|&c| c >= self.num_cols) {
                return bad("column index out of range");
            }
        }
        Ok(())
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        num_rows: usize,
        num_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        if let Some(&(r, c, _)) = sorted.iter().find(|(r, c, _)| *r >= num_rows || *c >= num_cols) {
            return Err(Error::Argument(format!(
                "entry ({r},{c}) outside {num_rows}x{num_cols}"
            )));
        }
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0; num_rows + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..num_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix::new(num_rows, num_cols, row_ptr, col_idx, values)
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            num_rows: n,
            num_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(num_rows: usize, num_cols: usize) -> Self {
        CsrMatrix {
            num_rows,
            num_cols,
            row_ptr: vec![0; num_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_square(&self) -> bool {
        self.num_rows == self.num_cols
    }

    /// `(col, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .binary_search(&c)
            .ok()
            .map(|k| self.values[range.start + k])
    }

    /// Iterates all stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_rows, self.num_cols));
        for (r, c, v) in self.triplets() {
            out[[r, c]] = v;
        }
        out
    }

    /// True if the nonzero pattern is symmetric (values are not compared).
    pub fn has_symmetric_pattern(&self) -> bool {
        self.is_square() && self.triplets().all(|(r, c, _)| self.get(c, r).is_some())
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut row_ptr = vec![0; self.num_cols + 1];
        for &c in &self.col_idx {
            row_ptr[c + 1] += 1;
        }
        for c in 0..self.num_cols {
            row_ptr[c + 1] += row_ptr[c];
        }
        let mut next = row_ptr.clone();
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // Visiting source rows in order keeps each output row sorted.
        for (r, c, v) in self.triplets() {
            let slot = next[c];
            col_idx[slot] = r;
            values[slot] = v;
            next[c] += 1;
        }
        CsrMatrix {
            num_rows: self.num_cols,
            num_cols: self.num_rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse × dense product. Rows are computed independently and each
    /// row accumulates its nonzeros in column order, so the result does not
    /// depend on the thread count.
    pub fn spmm(&self, dense: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.num_cols {
            return Err(Error::Argument(format!(
                "spmm: {}x{} sparse times {}x{} dense",
                self.num_rows,
                self.num_cols,
                dense.nrows(),
                dense.ncols()
            )));
        }
        let mut out = Array2::zeros((self.num_rows, dense.ncols()));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(r, mut out_row)| {
                for (c, v) in self.row(r) {
                    out_row.scaled_add(v, &dense.row(c));
                }
            });
        Ok(out)
    }

    /// Text dump: `num_rows num_cols nnz` header, then `row col value` lines.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.num_rows, self.num_cols, self.nnz());
        for (r, c, v) in self.triplets() {
            let _ = writeln!(s, "{r} {c} {v:e}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<CsrMatrix> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, message: &str| Error::Parse {
            line: line + 1,
            message: message.to_string(),
        };
        let (n, header) = lines.next().ok_or_else(|| Error::EmptyInput("matrix dump".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(n, "bad header"))?;
        let [rows, cols, nnz] = dims[..] else {
            return Err(parse_err(n, "header must be `rows cols nnz`"));
        };
        let mut triplets = Vec::with_capacity(nnz);
        for (n, line) in lines {
            let mut it = line.split_whitespace();
            let entry = (|| {
                let r = it.next()?.parse().ok()?;
                let c = it.next()?.parse().ok()?;
                let v = it.next()?.parse().ok()?;
                Some((r, c, v))
            })();
            triplets.push(entry.ok_or_else(|| parse_err(n, "expected `row col value`"))?);
        }
        if triplets.len() != nnz {
            return Err(Error::Parse {
                line: 1,
                message: format!("header promises {nnz} entries, found {}", triplets.len()),
            });
        }
        CsrMatrix::from_triplets(rows, cols, &triplets)
    }
}

/// Binary user–item adjacency of size `|U|+|I|`. Users occupy rows
/// `[0, |U|)` and items `[|U|, |U|+|I|)`; the diagonal is set iff `self_loops`.
pub fn build_adjacency(ds: &InteractionDataset, self_loops: bool) -> CsrMatrix {
    let n = ds.num_nodes();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, i) in &ds.train {
        rows[u].push(ds.num_users + i);
        rows[ds.num_users + i].push(u);
    }
    if self_loops {
        for (k, row) in rows.iter_mut().enumerate() {
            row.push(k);
        }
    }
    from_binary_rows(n, rows)
}

fn from_binary_rows(n: usize, mut rows: Vec<Vec<usize>>) -> CsrMatrix {
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::new();
    for row in rows.iter_mut() {
        row.sort_unstable();
        row.dedup();
        col_idx.extend_from_slice(row);
        row_ptr.push(col_idx.len());
    }
    let values = vec![1.0; col_idx.len()];
    CsrMatrix {
        num_rows: n,
        num_cols: n,
        row_ptr,
        col_idx,
        values,
    }
}

/// `P = D^-r · A · D^-(1-r)` together with its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub forward: CsrMatrix,
    pub backward: CsrMatrix,
    pub r: f64,
    pub self_loops: bool,
}

impl NormalizedAdjacency {
    pub fn size(&self) -> usize {
        self.forward.num_rows()
    }
}

/// Rescales every nonzero `(a, b)` of a square pattern to
/// `deg(a)^-r · deg(b)^-(1-r)`, where `deg` is the row nonzero count
/// (self-loops included).
pub fn normalize_r(adj: &CsrMatrix, r: f64) -> Result<NormalizedAdjacency> {
    if !adj.is_square() {
        return Err(Error::Argument(format!(
            "adjacency must be square, got {}x{}",
            adj.num_rows(),
            adj.num_cols()
        )));
    }
    if !r.is_finite() {
        return Err(Error::Argument(format!("r must be finite, got {r}")));
    }
    let n = adj.num_rows();
    let deg: Vec<f64> = (0..n).map(|k| adj.row_nnz(k) as f64).collect();
    let row_scale: Vec<f64> = deg.iter().map(|&d| d.powf(-r)).collect();
    let col_scale: Vec<f64> = deg.iter().map(|&d| d.powf(-(1.0 - r))).collect();
    let mut forward = adj.clone();
    for a in 0..n {
        for k in forward.row_ptr[a]..forward.row_ptr[a + 1] {
            let b = forward.col_idx[k];
            forward.values[k] = row_scale[a] * col_scale[b];
        }
    }
    let self_loops = n > 0 && (0..n).all(|k| adj.get(k, k).is_some());
    let backward = forward.transpose();
    Ok(NormalizedAdjacency {
        forward,
        backward,
        r,
        self_loops,
    })
}

/// DegDrop: removes each user–item edge with probability `min(1, alpha / d_i)`
/// where `d_i` is the item's degree in `adj`. Both mirrored entries go
/// together. Self-loops, if any, are kept.
pub fn drop_edges_degdrop(
    adj: &CsrMatrix,
    num_users: usize,
    alpha: f64,
    seed: u64,
) -> Result<CsrMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("DegDrop alpha must be in [0,1], got {alpha}")));
    }
    if !adj.is_square() || num_users > adj.num_rows() {
        return Err(Error::Argument("DegDrop expects a square bipartite adjacency".into()));
    }
    let n = adj.num_rows();
    let mut rng = seeded_rng(seed);
    let degree: Vec<usize> = (0..n)
        .map(|k| adj.row_nnz(k) - adj.get(k, k).is_some() as usize)
        .collect();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for k in 0..n {
        if adj.get(k, k).is_some() {
            rows[k].push(k);
        }
    }
    for u in 0..num_users {
        for (item_node, _) in adj.row(u) {
            if item_node < num_users {
                continue;
            }
            let d_i = degree[item_node];
            let p = if d_i == 0 { 1.0 } else { (alpha / d_i as f64).min(1.0) };
            if alpha > 0.0 && rng.gen::<f64>() < p {
                continue;
            }
            rows[u].push(item_node);
            rows[item_node].push(u);
        }
    }
    Ok(from_binary_rows(n, rows))
}
