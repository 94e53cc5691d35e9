//! Matching strategies over a raw query×item similarity matrix.
//!
//! Rows are queries and columns are items. To retrieve in the opposite
//! direction, transpose the similarity matrix first: every strategy then
//! treats the former items as queries.

use serde::{Deserialize, Serialize};

use crate::embed::{argsort_desc, top_k_sum, Provenance, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;

pub const DEFAULT_BETA: f64 = 30.0;
pub const DEFAULT_CSLS_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Naive,
    InvertedSoftmax,
    Csls,
    Hungarian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub strategy: Strategy,
    /// Inverted Softmax temperature.
    pub beta: f64,
    /// CSLS neighborhood size.
    pub csls_k: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Naive,
            beta: DEFAULT_BETA,
            csls_k: DEFAULT_CSLS_K,
        }
    }
}

impl InferenceConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.csls_k == 0 {
            return Err(Error::InvalidConfig("csls_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-query item rankings plus the scores they were ranked by.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub ranked_items: Vec<Vec<usize>>,
    pub adjusted: SimilarityMatrix,
}

impl RankingResult {
    fn from_adjusted(adjusted: SimilarityMatrix) -> Self {
        let ranked_items = par::map_indices(adjusted.n_queries(), |q| argsort_desc(adjusted.scores().row(q)));
        Self { ranked_items, adjusted }
    }

    pub fn n_queries(&self) -> usize {
        self.ranked_items.len()
    }
}

/// A set of query–item edges with no shared endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Sorted by query index.
    pub edges: Vec<(usize, usize)>,
    /// Sum of raw similarities over `edges`, in edge order.
    pub total_weight: f64,
}

impl Matching {
    /// The matched item of every query, `None` for unmatched queries.
    pub fn item_of(&self, n_queries: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_queries];
        for &(q, i) in &self.edges {
            out[q] = Some(i);
        }
        out
    }
}

pub fn rank_naive(sim: &SimilarityMatrix) -> Result<RankingResult> {
    sim.require_raw()?;
    Ok(RankingResult::from_adjusted(sim.clone()))
}

/// Inverted Softmax rescaling:
/// `s'(q, t) = exp(β s(q,t)) / Σ_{q' ≠ q} exp(β s(q',t))`.
///
/// Each ratio is evaluated with both exponents shifted by the largest
/// exponent in its denominator, so the denominator is at least 1 for any β.
/// Leave-one-out denominators come from prefix and suffix sums, so no
/// subtraction is involved. A ratio beyond the `f64` range saturates at
/// `f64::MAX`.
pub fn inverted_softmax(sim: &SimilarityMatrix, beta: f64) -> Result<SimilarityMatrix> {
    sim.require_raw()?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidConfig(format!("beta must be > 0, got {beta}")));
    }
    let nq = sim.n_queries();
    if nq < 2 {
        return Err(Error::TooFewQueries(nq));
    }
    let by_item = sim.scores().transpose();
    let cols = par::map_indices(sim.n_items(), |t| inverted_softmax_column(by_item.row(t), beta));
    let mut adjusted = Matrix::zeros(nq, sim.n_items());
    for (t, col) in cols.into_iter().enumerate() {
        for (q, v) in col.into_iter().enumerate() {
            adjusted.set(q, t, v);
        }
    }
    SimilarityMatrix::with_provenance(adjusted, Provenance::InvertedSoftmax { beta })
}

fn inverted_softmax_column(column: &[f64], beta: f64) -> Vec<f64> {
    let n = column.len();
    let x: Vec<f64> = column.iter().map(|s| beta * s).collect();
    let top = crate::embed::argmax(&x);
    let m1 = x[top];
    let m2 = x
        .iter()
        .enumerate()
        .filter(|&(q, _)| q != top)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);

    let e: Vec<f64> = x.iter().map(|v| (v - m1).exp()).collect();
    let mut prefix = vec![0.0; n + 1];
    for q in 0..n {
        prefix[q + 1] = prefix[q] + e[q];
    }
    let mut suffix = vec![0.0; n + 1];
    for q in (0..n).rev() {
        suffix[q] = suffix[q + 1] + e[q];
    }

    let mut out = vec![0.0; n];
    for q in 0..n {
        if q == top {
            let denom: f64 = x
                .iter()
                .enumerate()
                .filter(|&(r, _)| r != top)
                .map(|(_, v)| (v - m2).exp())
                .sum();
            // only the column winner can exceed the f64 range
            out[q] = ((x[q] - m2).exp() / denom).min(f64::MAX);
        } else {
            out[q] = e[q] / (prefix[q] + suffix[q + 1]);
        }
    }
    out
}

pub fn rank_inverted_softmax(sim: &SimilarityMatrix, beta: f64) -> Result<RankingResult> {
    Ok(RankingResult::from_adjusted(inverted_softmax(sim, beta)?))
}

/// Cross-modal local scaling:
/// `s'(q, t) = 2 s(q,t) − mean_k(column t) − mean_k(row q)`, where
/// `mean_k` averages the `k` largest entries (no exclusions).
pub fn csls(sim: &SimilarityMatrix, k: usize) -> Result<SimilarityMatrix> {
    sim.require_raw()?;
    if k == 0 {
        return Err(Error::InvalidConfig("csls_k must be at least 1".into()));
    }
    let (nq, ni) = (sim.n_queries(), sim.n_items());
    if k > nq.min(ni) {
        return Err(Error::InsufficientCandidates {
            needed: k,
            available: nq.min(ni),
        });
    }
    let kf = k as f64;
    let scores = sim.scores();
    let by_item = scores.transpose();
    let row_density = par::map_indices(nq, |q| top_k_sum(scores.row(q), k).map(|s| s / kf))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let col_density = par::map_indices(ni, |t| top_k_sum(by_item.row(t), k).map(|s| s / kf))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut adjusted = scores.clone();
    par::for_each_row_mut(adjusted.as_mut_slice(), ni, |q, row| {
        for (t, v) in row.iter_mut().enumerate() {
            *v = 2.0 * *v - col_density[t] - row_density[q];
        }
    });
    SimilarityMatrix::with_provenance(adjusted, Provenance::Csls { k })
}

pub fn rank_csls(sim: &SimilarityMatrix, k: usize) -> Result<RankingResult> {
    Ok(RankingResult::from_adjusted(csls(sim, k)?))
}

/// Dispatches on `cfg.strategy`. Hungarian matching yields a [`Matching`],
/// not a ranking; use [`match_hungarian`] for it.
pub fn rank(sim: &SimilarityMatrix, cfg: &InferenceConfig) -> Result<RankingResult> {
    cfg.validate()?;
    match cfg.strategy {
        Strategy::Naive => rank_naive(sim),
        Strategy::InvertedSoftmax => rank_inverted_softmax(sim, cfg.beta),
        Strategy::Csls => rank_csls(sim, cfg.csls_k),
        Strategy::Hungarian => Err(Error::InvalidConfig(
            "hungarian produces a matching, not a ranking".into(),
        )),
    }
}

/// Maximum-weight bipartite matching over raw similarities.
///
/// Rectangular inputs are padded to square with zero-cost dummy rows or
/// columns; dummy edges never appear in the output. Among optimal matchings
/// the lexicographically smallest edge list (by query, then item) is
/// returned.
pub fn match_hungarian(sim: &SimilarityMatrix) -> Result<Matching> {
    sim.require_raw()?;
    let (nq, ni) = (sim.n_queries(), sim.n_items());
    if nq == 0 || ni == 0 {
        return Ok(Matching {
            edges: Vec::new(),
            total_weight: 0.0,
        });
    }
    let n = nq.max(ni);
    let cost = |r: usize, c: usize| if r < nq && c < ni { -sim.get(r, c) } else { 0.0 };
    let solved = solve_assignment(n, &cost);

    let scale = sim.scores().as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * scale;
    let tight = |r: usize, c: usize| cost(r, c) - solved.row_potential[r] - solved.col_potential[c] <= tol;

    let weight_of =
        |assign: &[usize]| -> f64 { (0..nq).filter(|&q| assign[q] < ni).map(|q| sim.get(q, assign[q])).sum() };
    let optimal = weight_of(&solved.row_to_col);
    let lex = lexicographic_min(n, nq, solved.row_to_col.clone(), &tight);
    let assign = if weight_of(&lex) >= optimal {
        lex
    } else {
        solved.row_to_col
    };

    let edges: Vec<(usize, usize)> = (0..nq).filter(|&q| assign[q] < ni).map(|q| (q, assign[q])).collect();
    let total_weight = edges.iter().map(|&(q, i)| sim.get(q, i)).sum();
    Ok(Matching { edges, total_weight })
}

struct Assignment {
    row_to_col: Vec<usize>,
    row_potential: Vec<f64>,
    col_potential: Vec<f64>,
}

/// Minimum-cost perfect assignment on an `n × n` cost function via
/// shortest augmenting paths with potentials, O(n³). The returned potentials
/// satisfy `cost(r, c) ≥ u[r] + v[c]`, with equality on assigned edges.
fn solve_assignment(n: usize, cost: &dyn Fn(usize, usize) -> f64) -> Assignment {
    // 1-based rows/cols; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    Assignment {
        row_to_col,
        row_potential: u[1..].to_vec(),
        col_potential: v[1..].to_vec(),
    }
}

/// Walks the first `fix_rows` rows in order, moving each to the smallest
/// tight column that still admits a perfect matching of the remaining rows
/// on tight edges. Every perfect matching on tight edges is optimal.
fn lexicographic_min(
    n: usize,
    fix_rows: usize,
    mut row_to_col: Vec<usize>,
    tight: &dyn Fn(usize, usize) -> bool,
) -> Vec<usize> {
    let mut col_to_row = vec![0; n];
    for (r, &c) in row_to_col.iter().enumerate() {
        col_to_row[c] = r;
    }
    let mut col_fixed = vec![false; n];
    for row in 0..fix_rows {
        for target in 0..n {
            if col_fixed[target] || !tight(row, target) {
                continue;
            }
            if row_to_col[row] == target {
                break;
            }
            // give `target` to `row`, then re-seat its previous owner
            let displaced = col_to_row[target];
            let freed = row_to_col[row];
            let mut visited = vec![false; n];
            visited[target] = true;
            let mut path = Vec::new();
            if alternating_path(
                displaced,
                freed,
                row,
                &row_to_col,
                &col_to_row,
                &col_fixed,
                tight,
                &mut visited,
                &mut path,
            ) {
                // path holds (row, new column) reassignments
                for (r, c) in path {
                    row_to_col[r] = c;
                    col_to_row[c] = r;
                }
                row_to_col[row] = target;
                col_to_row[target] = row;
                break;
            }
        }
        col_fixed[row_to_col[row]] = true;
    }
    row_to_col
}

#[allow(clippy::too_many_arguments)]
fn alternating_path(
    row: usize,
    goal: usize,
    skip_row: usize,
    row_to_col: &[usize],
    col_to_row: &[usize],
    col_fixed: &[bool],
    tight: &dyn Fn(usize, usize) -> bool,
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    for c in 0..row_to_col.len() {
        if visited[c] || col_fixed[c] || !tight(row, c) {
            continue;
        }
        visited[c] = true;
        if c == goal {
            path.push((row, c));
            return true;
        }
        let next = col_to_row[c];
        if next == skip_row {
            continue;
        }
        if alternating_path(
            next, goal, skip_row, row_to_col, col_to_row, col_fixed, tight, visited, path,
        ) {
            path.push((row, c));
            return true;
        }
    }
    false
}
