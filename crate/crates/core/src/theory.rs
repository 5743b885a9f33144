//! Propagation limit of the r-normalized operator on connected graphs with
//! self-loops, and numerical checks against it.
//!
//! For a connected graph with degrees `d_i` (self-loops excluded), `|E|` edges
//! and `|V|` nodes, `(D̃^-r Ã D̃^-(1-r))^l` converges entrywise to
//!
//! ```text
//! (d_i + 1)^(1-r) · (d_j + 1)^r / (2|E| + |V|)
//! ```
//!
//! so in the limit every node's dot product with `j` scales like
//! `(d_j + 1)^(1-r)`: increasing in degree for `r < 1`, flat at `r = 1` and
//! decreasing for `r > 1`.

use std::collections::VecDeque;
use std::fmt;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seeded_rng;
use crate::sparse::{normalize_r, CsrMatrix, NormalizedAdjacency};

/// Largest graph the dense routines accept by default.
pub const DEFAULT_DENSE_CAP: usize = 200;

/// Tolerance below which a dot-product difference counts as zero.
pub const ZERO_DIFF_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LimitMatrix {
    pub matrix: Array2<f64>,
    pub r: f64,
    /// `2|E| + |V|`.
    pub denominator: f64,
    /// Degrees without the added self-loop.
    pub degrees: Vec<usize>,
}

pub fn is_connected(adj: &CsrMatrix) -> bool {
    let n = adj.num_rows();
    if n == 0 {
        return false;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(a) = queue.pop_front() {
        for (b, _) in adj.row(a) {
            if !seen[b] {
                seen[b] = true;
                count += 1;
                queue.push_back(b);
            }
        }
    }
    count == n
}

fn check_graph(adj: &CsrMatrix) -> Result<()> {
    if !adj.has_symmetric_pattern() {
        return Err(Error::Precondition("graph must be undirected (symmetric pattern)".into()));
    }
    if (0..adj.num_rows()).any(|k| adj.get(k, k).is_some()) {
        return Err(Error::Precondition("input graph must not carry self-loops".into()));
    }
    if !is_connected(adj) {
        return Err(Error::Precondition("graph is not connected".into()));
    }
    Ok(())
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        return Err(Error::Precondition(format!(
            "{n} nodes exceeds the dense cap of {cap}"
        )));
    }
    Ok(())
}

/// Closed-form limit for a connected, loop-free undirected graph.
pub fn limit_matrix(adj_no_loops: &CsrMatrix, r: f64) -> Result<LimitMatrix> {
    check_graph(adj_no_loops)?;
    let n = adj_no_loops.num_rows();
    let degrees: Vec<usize> = (0..n).map(|k| adj_no_loops.row_nnz(k)).collect();
    let denominator = (adj_no_loops.nnz() + n) as f64;
    let left: Vec<f64> = degrees.iter().map(|&d| ((d + 1) as f64).powf(1.0 - r)).collect();
    let right: Vec<f64> = degrees.iter().map(|&d| ((d + 1) as f64).powf(r)).collect();
    let matrix = Array2::from_shape_fn((n, n), |(i, j)| left[i] * right[j] / denominator);
    Ok(LimitMatrix {
        matrix,
        r,
        denominator,
        degrees,
    })
}

/// Adds the identity to a loop-free adjacency.
pub fn with_self_loops(adj: &CsrMatrix) -> Result<CsrMatrix> {
    let n = adj.num_rows();
    let mut t: Vec<(usize, usize, f64)> = adj.triplets().map(|(a, b, _)| (a, b, 1.0)).collect();
    t.extend((0..n).map(|k| (k, k, 1.0)));
    let mut m = CsrMatrix::from_triplets(n, n, &t)?;
    // from_triplets sums duplicates; the pattern is all that matters here.
    if m.values().iter().any(|&v| v != 1.0) {
        m = CsrMatrix::from_triplets(
            n,
            n,
            &m.triplets().map(|(a, b, _)| (a, b, 1.0)).collect::<Vec<_>>(),
        )?;
    }
    Ok(m)
}

/// Dense `P^l` by repeated multiplication (`l = 0` gives the identity).
pub fn power_iterate(p: &NormalizedAdjacency, l: usize, cap: usize) -> Result<Array2<f64>> {
    check_cap(p.size(), cap)?;
    let mut m = Array2::eye(p.size());
    for _ in 0..l {
        m = p.forward.spmm(&m.view())?;
    }
    Ok(m)
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    /// Smallest `l` within tolerance, `None` if not reached by `l_max`.
    pub l_star: Option<usize>,
    pub final_error: f64,
}

/// Finds the first power of the self-looped r-normalized operator whose
/// max-abs-entry distance to the closed-form limit is below `tol`.
pub fn convergence_check(adj: &CsrMatrix, r: f64, tol: f64, l_max: usize) -> Result<Convergence> {
    convergence_check_capped(adj, r, tol, l_max, DEFAULT_DENSE_CAP)
}

pub fn convergence_check_capped(
    adj: &CsrMatrix,
    r: f64,
    tol: f64,
    l_max: usize,
    cap: usize,
) -> Result<Convergence> {
    check_cap(adj.num_rows(), cap)?;
    let limit = limit_matrix(adj, r)?;
    let p = normalize_r(&with_self_loops(adj)?, r)?;
    let mut power = Array2::eye(p.size());
    let mut err = max_abs_diff(&power, &limit.matrix);
    if err < tol {
        return Ok(Convergence { l_star: Some(0), final_error: err });
    }
    for l in 1..=l_max {
        power = p.forward.spmm(&power.view())?;
        err = max_abs_diff(&power, &limit.matrix);
        if err < tol {
            return Ok(Convergence { l_star: Some(l), final_error: err });
        }
    }
    Ok(Convergence { l_star: None, final_error: err })
}

/// Limit embeddings `H^(∞) = limit · H^(0)`.
pub fn limit_embeddings(limit: &LimitMatrix, h0: &Array2<f64>) -> Array2<f64> {
    limit.matrix.dot(h0)
}

/// `(h_i^∞)·(h_j^∞)` from the closed form
/// `[(d_i+1)(d_j+1)]^(1-r) / (2|E|+|V|)^2 · ‖Σ_k (d_k+1)^r h_k‖²`.
pub fn closed_form_dot(limit: &LimitMatrix, h0: &Array2<f64>, i: usize, j: usize) -> f64 {
    let mut weighted = Array1::<f64>::zeros(h0.ncols());
    for (k, &d) in limit.degrees.iter().enumerate() {
        weighted.scaled_add(((d + 1) as f64).powf(limit.r), &h0.row(k));
    }
    let di = (limit.degrees[i] + 1) as f64;
    let dj = (limit.degrees[j] + 1) as f64;
    (di * dj).powf(1.0 - limit.r) / (limit.denominator * limit.denominator) * weighted.dot(&weighted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderingCase {
    /// `r < 1`: higher-degree candidates score higher.
    PrefersHighDegree,
    /// `r = 1`: scores independent of candidate degree.
    DegreeNeutral,
    /// `r > 1`: lower-degree candidates score higher.
    PrefersLowDegree,
}

impl OrderingCase {
    pub fn for_r(r: f64) -> Self {
        if r < 1.0 {
            OrderingCase::PrefersHighDegree
        } else if r == 1.0 {
            OrderingCase::DegreeNeutral
        } else {
            OrderingCase::PrefersLowDegree
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    pub r: f64,
    pub expected: OrderingCase,
    /// Triples `(i, j, k)` with `d_j > d_k` that were checked.
    pub triples: usize,
    pub positive: usize,
    pub zero: usize,
    pub negative: usize,
    pub violations: usize,
    pub max_abs_diff: f64,
}

impl OrderingReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Checks the sign of `h_i·h_j − h_i·h_k` for every ego `i` and every pair
/// with `d_j > d_k`, using limit embeddings of a random `H^(0)`.
pub fn ordering_check(adj: &CsrMatrix, r: f64, h0_seed: u64) -> Result<OrderingReport> {
    check_cap(adj.num_rows(), DEFAULT_DENSE_CAP)?;
    let limit = limit_matrix(adj, r)?;
    let n = adj.num_rows();
    let mut rng = seeded_rng(h0_seed);
    let h0 = Array2::from_shape_simple_fn((n, 8), || rng.gen_range(-1.0..1.0));
    Ok(ordering_from_embeddings(&limit, &limit_embeddings(&limit, &h0)))
}

pub fn ordering_from_embeddings(limit: &LimitMatrix, h: &Array2<f64>) -> OrderingReport {
    let n = h.nrows();
    let gram = h.dot(&h.t());
    let expected = OrderingCase::for_r(limit.r);
    let mut report = OrderingReport {
        r: limit.r,
        expected,
        triples: 0,
        positive: 0,
        zero: 0,
        negative: 0,
        violations: 0,
        max_abs_diff: 0.0,
    };
    let deg = &limit.degrees;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if deg[j] <= deg[k] {
                    continue;
                }
                let diff = gram[[i, j]] - gram[[i, k]];
                report.triples += 1;
                report.max_abs_diff = report.max_abs_diff.max(diff.abs());
                let observed = if diff.abs() < ZERO_DIFF_TOL {
                    report.zero += 1;
                    OrderingCase::DegreeNeutral
                } else if diff > 0.0 {
                    report.positive += 1;
                    OrderingCase::PrefersHighDegree
                } else {
                    report.negative += 1;
                    OrderingCase::PrefersLowDegree
                };
                if observed != expected {
                    report.violations += 1;
                }
            }
        }
    }
    report
}

/// Random connected undirected graph: a random recursive spanning tree
/// plus each remaining pair with probability `extra_edge_prob`.
pub fn random_connected_graph<R: Rng>(n: usize, extra_edge_prob: f64, rng: &mut R) -> CsrMatrix {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = std::collections::BTreeSet::new();
    for k in 1..n {
        let parent = order[rng.gen_range(0..k)];
        let child = order[k];
        edges.insert((parent.min(child), parent.max(child)));
    }
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.gen::<f64>() < extra_edge_prob {
                edges.insert((a, b));
            }
        }
    }
    symmetric_from_edges(n, edges)
}

/// Random connected bipartite graph over `left + right` nodes (left side
/// first), built from a spanning tree that alternates sides plus extra
/// cross edges with probability `extra_edge_prob`.
pub fn random_connected_bipartite<R: Rng>(
    left: usize,
    right: usize,
    extra_edge_prob: f64,
    rng: &mut R,
) -> CsrMatrix {
    assert!(left > 0 && right > 0, "both sides need a node");
    let mut edges = std::collections::BTreeSet::new();
    let mut left_in = vec![0];
    let mut right_in: Vec<usize> = Vec::new();
    let mut left_rest: Vec<usize> = (1..left).collect();
    let mut right_rest: Vec<usize> = (0..right).collect();
    left_rest.shuffle(rng);
    right_rest.shuffle(rng);
    // attach every right node to a connected left node, then every left node
    // to a connected right node
    while let Some(rn) = right_rest.pop() {
        let l = left_in[rng.gen_range(0..left_in.len())];
        edges.insert((l, left + rn));
        right_in.push(rn);
        if let Some(ln) = left_rest.pop() {
            let r = right_in[rng.gen_range(0..right_in.len())];
            edges.insert((ln, left + r));
            left_in.push(ln);
        }
    }
    while let Some(ln) = left_rest.pop() {
        let r = right_in[rng.gen_range(0..right_in.len())];
        edges.insert((ln, left + r));
    }
    for a in 0..left {
        for b in 0..right {
            if rng.gen::<f64>() < extra_edge_prob {
                edges.insert((a, left + b));
            }
        }
    }
    symmetric_from_edges(left + right, edges)
}

fn symmetric_from_edges(n: usize, edges: std::collections::BTreeSet<(usize, usize)>) -> CsrMatrix {
    let mut t = Vec::with_capacity(edges.len() * 2);
    for (a, b) in edges {
        t.push((a, b, 1.0));
        t.push((b, a, 1.0));
    }
    CsrMatrix::from_triplets(n, n, &t).expect("edges in range")
}

/// Parameters of a theory verification run.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryParams {
    pub sizes: Vec<usize>,
    pub rs: Vec<f64>,
    pub graphs_per_cell: usize,
    pub tol: f64,
    pub l_max: usize,
    pub seed: u64,
}

impl Default for TheoryParams {
    fn default() -> Self {
        TheoryParams {
            sizes: vec![10, 20, 40],
            rs: vec![0.0, 0.5, 1.0, 1.25, 1.5],
            graphs_per_cell: 20,
            tol: 1e-8,
            l_max: 10_000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryCell {
    pub size: usize,
    pub r: f64,
    pub graphs: usize,
    pub converged: usize,
    pub max_l_star: Option<usize>,
    pub max_final_error: f64,
    pub ordering_triples: usize,
    pub ordering_violations: usize,
    pub max_r1_diff: f64,
}

impl TheoryCell {
    pub fn passed(&self) -> bool {
        self.converged == self.graphs && self.ordering_violations == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub params: TheoryParams,
    pub cells: Vec<TheoryCell>,
}

impl TheoryReport {
    pub fn passed(&self) -> bool {
        self.cells.iter().all(TheoryCell::passed)
    }
}

impl fmt::Display for TheoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "propagation-limit verification: tol={:e} l_max={} graphs/cell={} seed={}",
            self.params.tol, self.params.l_max, self.params.graphs_per_cell, self.params.seed
        )?;
        writeln!(
            f,
            "{:>5} {:>6} {:>10} {:>8} {:>12} {:>10} {:>10} {:>6}",
            "|V|", "r", "converged", "max_l*", "max_error", "triples", "violations", "status"
        )?;
        for c in &self.cells {
            let l_star = c.max_l_star.map_or("-".to_string(), |l| l.to_string());
            let l_star = if c.converged < c.graphs { "NOT_CONVERGED".to_string() } else { l_star };
            writeln!(
                f,
                "{:>5} {:>6} {:>7}/{:<2} {:>8} {:>12.3e} {:>10} {:>10} {:>6}",
                c.size,
                c.r,
                c.converged,
                c.graphs,
                l_star,
                c.max_final_error,
                c.ordering_triples,
                c.ordering_violations,
                if c.passed() { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "overall: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Runs convergence and ordering checks over random connected graphs for
/// every `(size, r)` cell.
pub fn verify(params: &TheoryParams) -> Result<TheoryReport> {
    let mut cells = Vec::new();
    for (si, &size) in params.sizes.iter().enumerate() {
        if size < 2 {
            return Err(Error::Argument(format!("graph size must be >= 2, got {size}")));
        }
        for (ri, &r) in params.rs.iter().enumerate() {
            let mut rng = seeded_rng(params.seed ^ ((si as u64) << 32) ^ ri as u64);
            let mut cell = TheoryCell {
                size,
                r,
                graphs: params.graphs_per_cell,
                converged: 0,
                max_l_star: None,
                max_final_error: 0.0,
                ordering_triples: 0,
                ordering_violations: 0,
                max_r1_diff: 0.0,
            };
            for g in 0..params.graphs_per_cell {
                let adj = if g % 2 == 0 {
                    random_connected_graph(size, 2.0 / size as f64, &mut rng)
                } else {
                    let left = (size / 2).max(1);
                    random_connected_bipartite(left, size - left, 2.0 / size as f64, &mut rng)
                };
                let conv = convergence_check(&adj, r, params.tol, params.l_max)?;
                if let Some(l) = conv.l_star {
                    cell.converged += 1;
                    cell.max_l_star = Some(cell.max_l_star.map_or(l, |m| m.max(l)));
                }
                cell.max_final_error = cell.max_final_error.max(conv.final_error);
                let ord = ordering_check(&adj, r, rng.gen())?;
                cell.ordering_triples += ord.triples;
                cell.ordering_violations += ord.violations;
                if r == 1.0 {
                    cell.max_r1_diff = cell.max_r1_diff.max(ord.max_abs_diff);
                }
            }
            cells.push(cell);
        }
    }
    Ok(TheoryReport {
        params: params.clone(),
        cells,
    })
}
