//! Independent reference implementations used by the integration tests.
//!
//! Everything here is written for clarity over speed: full sorts instead of
//! selection, explicit loops instead of matrix products, brute-force search
//! instead of clever algorithms.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vsematch::{LossKind, Matrix, SimilarityMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut *rng)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Random scores in `[-1, 1]`.
pub fn random_similarity(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> SimilarityMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..=1.0)).collect();
    SimilarityMatrix::raw(Matrix::from_vec(rows, cols, data).unwrap()).unwrap()
}

pub fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn cosine_table(queries: &[Vec<f64>], items: &[Vec<f64>]) -> Vec<Vec<f64>> {
    queries
        .iter()
        .map(|q| items.iter().map(|i| cosine(q, i)).collect())
        .collect()
}

/// Negatives of one anchor, hardest first, ties to the lower index.
fn sorted_negatives(scores: &[f64], positive: usize) -> Vec<usize> {
    let mut neg: Vec<usize> = (0..scores.len()).filter(|&j| j != positive).collect();
    neg.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    neg
}

fn chosen_negatives(scores: &[f64], positive: usize, kind: LossKind, k: usize) -> Vec<usize> {
    let neg = sorted_negatives(scores, positive);
    match kind {
        LossKind::SumMargin => neg,
        LossKind::MaxMargin => neg.into_iter().take(1).collect(),
        LossKind::KnnMargin => neg.into_iter().take(k).collect(),
    }
}

/// Triplet loss over a diagonal batch, by explicit enumeration of the
/// selected hinge terms in both directions.
pub fn oracle_loss(queries: &[Vec<f64>], items: &[Vec<f64>], kind: LossKind, alpha: f64, k: usize) -> f64 {
    let s = cosine_table(queries, items);
    let b = s.len();
    let mut terms = Vec::new();
    for a in 0..b {
        let row = s[a].clone();
        for j in chosen_negatives(&row, a, kind, k) {
            terms.push((alpha - row[a] + row[j]).max(0.0));
        }
        let col: Vec<f64> = (0..b).map(|q| s[q][a]).collect();
        for j in chosen_negatives(&col, a, kind, k) {
            terms.push((alpha - col[a] + col[j]).max(0.0));
        }
    }
    neumaier_sum(terms)
}

/// Smallest distance from any hinge argument to 0 and from any selected /
/// unselected negative pair to a swap, over both directions. Batches with a
/// small margin sit near a kink of the piecewise-smooth loss.
pub fn kink_distance(queries: &[Vec<f64>], items: &[Vec<f64>], kind: LossKind, alpha: f64, k: usize) -> f64 {
    let s = cosine_table(queries, items);
    let b = s.len();
    let mut closest = f64::INFINITY;
    for a in 0..b {
        let row = s[a].clone();
        let col: Vec<f64> = (0..b).map(|q| s[q][a]).collect();
        for scores in [row, col] {
            let neg = sorted_negatives(&scores, a);
            let take = match kind {
                LossKind::SumMargin => neg.len(),
                LossKind::MaxMargin => 1,
                LossKind::KnnMargin => k,
            };
            for &j in &neg[..take] {
                closest = closest.min((alpha - scores[a] + scores[j]).abs());
            }
            if take < neg.len() {
                closest = closest.min(scores[neg[take - 1]] - scores[neg[take]]);
            }
        }
    }
    closest
}

/// Central finite differences of `f` with respect to every entry of `x`.
pub fn finite_difference(x: &[Vec<f64>], h: f64, f: impl Fn(&[Vec<f64>]) -> f64) -> Vec<Vec<f64>> {
    let mut grad = vec![vec![0.0; x[0].len()]; x.len()];
    let mut probe = x.to_vec();
    for r in 0..x.len() {
        for c in 0..x[0].len() {
            probe[r][c] = x[r][c] + h;
            let up = f(&probe);
            probe[r][c] = x[r][c] - h;
            let down = f(&probe);
            probe[r][c] = x[r][c];
            grad[r][c] = (up - down) / (2.0 * h);
        }
    }
    grad
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Inverted softmax straight from its definition, with compensated sums.
pub fn oracle_inverted_softmax(s: &[Vec<f64>], beta: f64) -> Vec<Vec<f64>> {
    let (nq, ni) = (s.len(), s[0].len());
    let mut out = vec![vec![0.0; ni]; nq];
    for t in 0..ni {
        let m = (0..nq).map(|q| beta * s[q][t]).fold(f64::NEG_INFINITY, f64::max);
        for q in 0..nq {
            let num = (beta * s[q][t] - m).exp();
            let den = neumaier_sum((0..nq).filter(|&r| r != q).map(|r| (beta * s[r][t] - m).exp()));
            out[q][t] = num / den;
        }
    }
    out
}

fn mean_top_k(mut values: Vec<f64>, k: usize) -> f64 {
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    neumaier_sum(values[..k].iter().copied()) / k as f64
}

pub fn oracle_csls(s: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let (nq, ni) = (s.len(), s[0].len());
    let row_mean: Vec<f64> = s.iter().map(|r| mean_top_k(r.clone(), k)).collect();
    let col_mean: Vec<f64> = (0..ni)
        .map(|t| mean_top_k((0..nq).map(|q| s[q][t]).collect(), k))
        .collect();
    (0..nq)
        .map(|q| (0..ni).map(|t| 2.0 * s[q][t] - col_mean[t] - row_mean[q]).collect())
        .collect()
}

/// Best total weight over all injective assignments of the smaller side,
/// summed in query order. Exponential; keep inputs tiny.
pub fn brute_force_assignment(s: &[Vec<f64>]) -> f64 {
    let (nq, ni) = (s.len(), s[0].len());
    let mut best = f64::NEG_INFINITY;
    let mut used = vec![false; ni];
    let mut chosen = vec![None; nq];
    search(s, 0, nq.min(ni), &mut used, &mut chosen, &mut best);
    best
}

fn search(s: &[Vec<f64>], q: usize, need: usize, used: &mut [bool], chosen: &mut [Option<usize>], best: &mut f64) {
    let matched = chosen.iter().flatten().count();
    if q == s.len() {
        if matched == need {
            let w = (0..s.len()).filter_map(|r| chosen[r].map(|i| s[r][i])).sum::<f64>();
            *best = best.max(w);
        }
        return;
    }
    if s.len() - q > need - matched {
        chosen[q] = None;
        search(s, q + 1, need, used, chosen, best);
    }
    if matched < need {
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                chosen[q] = Some(i);
                search(s, q + 1, need, used, chosen, best);
                chosen[q] = None;
                used[i] = false;
            }
        }
    }
}

/// Repeatedly takes the heaviest remaining edge.
pub fn greedy_assignment(s: &[Vec<f64>]) -> f64 {
    let (nq, ni) = (s.len(), s[0].len());
    let mut edges: Vec<(usize, usize)> = (0..nq).flat_map(|q| (0..ni).map(move |i| (q, i))).collect();
    edges.sort_by(|a, b| s[b.0][b.1].partial_cmp(&s[a.0][a.1]).unwrap());
    let (mut q_used, mut i_used) = (vec![false; nq], vec![false; ni]);
    let mut total = 0.0;
    for (q, i) in edges {
        if !q_used[q] && !i_used[i] {
            q_used[q] = true;
            i_used[i] = true;
            total += s[q][i];
        }
    }
    total
}

/// 1-based rank of the best positive: one plus the number of items that
/// beat it, counting equal scores at a lower index as beating it.
pub fn oracle_rank(scores: &[f64], positives: &[usize]) -> usize {
    positives
        .iter()
        .map(|&p| {
            1 + (0..scores.len())
                .filter(|&j| scores[j] > scores[p] || (scores[j] == scores[p] && j < p))
                .count()
        })
        .min()
        .unwrap()
}
