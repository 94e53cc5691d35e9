//! Triplet ranking losses over a mini-batch.
//!
//! Every loss is a sum of hinge terms `[α − s(pos) + s(neg)]₊` taken in both
//! directions: each query row against the negative items of that row, and
//! each item column against the negative queries of that column. The three
//! losses differ only in which negatives an anchor keeps:
//!
//! | kind         | negatives per anchor                         |
//! |--------------|----------------------------------------------|
//! | `SumMargin`  | all `B − 1`                                  |
//! | `MaxMargin`  | the single hardest (ties to the lower index) |
//! | `KnnMargin`  | the `k` hardest, via [`knn_select`]          |
//!
//! Values are batch sums. Gradients are taken with respect to the
//! un-normalized embedding rows, chaining through cosine similarity and L2
//! normalization.

use serde::{Deserialize, Serialize};

use crate::embed::{knn_select, normalize_rows, unit_cosine, EmbeddingSet, PairIndex, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::par;

pub const DEFAULT_MARGIN: f64 = 0.2;
pub const DEFAULT_KNN_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SumMargin,
    MaxMargin,
    KnnMargin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub margin_alpha: f64,
    /// Only read by [`LossKind::KnnMargin`].
    pub knn_k: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::KnnMargin,
            margin_alpha: DEFAULT_MARGIN,
            knn_k: DEFAULT_KNN_K,
        }
    }
}

impl LossConfig {
    pub fn sum(margin_alpha: f64) -> Self {
        Self {
            kind: LossKind::SumMargin,
            margin_alpha,
            ..Self::default()
        }
    }

    pub fn max(margin_alpha: f64) -> Self {
        Self {
            kind: LossKind::MaxMargin,
            margin_alpha,
            ..Self::default()
        }
    }

    pub fn knn(margin_alpha: f64, knn_k: usize) -> Self {
        Self {
            kind: LossKind::KnnMargin,
            margin_alpha,
            knn_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin_alpha > 0.0 && self.margin_alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "margin must be > 0, got {}",
                self.margin_alpha
            )));
        }
        if self.kind == LossKind::KnnMargin && self.knn_k == 0 {
            return Err(Error::InvalidConfig("knn_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Loss value and gradients with respect to both embedding batches.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub grad_queries: Matrix,
    pub grad_items: Matrix,
    pub active_triplets: usize,
}

/// Loss value and its gradient with respect to the similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLoss {
    pub value: f64,
    pub grad_scores: Matrix,
    pub active_triplets: usize,
}

struct AnchorTerms {
    value: f64,
    active: usize,
    /// d loss / d score along the anchor's row (or column).
    grad: Vec<f64>,
}

fn anchor_terms(scores: &[f64], positive: usize, cfg: &LossConfig) -> Result<AnchorTerms> {
    let n = scores.len();
    let mut negatives: Vec<usize> = match cfg.kind {
        LossKind::SumMargin => (0..n).filter(|&j| j != positive).collect(),
        LossKind::MaxMargin if n < 2 => Vec::new(),
        LossKind::MaxMargin => knn_select(scores, &[positive], 1)?,
        LossKind::KnnMargin => knn_select(scores, &[positive], cfg.knn_k)?,
    };
    // index order keeps k = B-1 bit-identical to the sum loss
    negatives.sort_unstable();
    let pos = scores[positive];
    let mut out = AnchorTerms {
        value: 0.0,
        active: 0,
        grad: vec![0.0; n],
    };
    for j in negatives {
        let hinge = cfg.margin_alpha - pos + scores[j];
        if hinge > 0.0 {
            out.value += hinge;
            out.active += 1;
            out.grad[positive] -= 1.0;
            out.grad[j] += 1.0;
        }
    }
    Ok(out)
}

/// The configured loss as a function of a raw similarity matrix.
///
/// `pairs` must be a bijection between the batch's queries and items.
pub fn score_loss(sim: &SimilarityMatrix, pairs: &PairIndex, cfg: &LossConfig) -> Result<ScoreLoss> {
    sim.require_raw()?;
    cfg.validate()?;
    let (nq, ni) = (sim.n_queries(), sim.n_items());
    if pairs.n_queries() != nq || pairs.n_items() != ni {
        return Err(Error::ShapeMismatch {
            expected: format!("pairs over {nq}x{ni}"),
            actual: format!("pairs over {}x{}", pairs.n_queries(), pairs.n_items()),
        });
    }
    let item_of = pairs.bijection()?;
    let b = nq;
    if cfg.kind == LossKind::KnnMargin && cfg.knn_k + 1 > b {
        return Err(Error::InsufficientCandidates {
            needed: cfg.knn_k,
            available: b.saturating_sub(1),
        });
    }
    let mut query_of = vec![0; b];
    for (q, &i) in item_of.iter().enumerate() {
        query_of[i] = q;
    }

    let scores_t = sim.scores().transpose();
    let rows = par::map_indices(b, |q| anchor_terms(sim.scores().row(q), item_of[q], cfg));
    let cols = par::map_indices(b, |i| anchor_terms(scores_t.row(i), query_of[i], cfg));

    let mut value = 0.0;
    let mut active = 0;
    let mut grad = Matrix::zeros(b, b);
    for (q, terms) in rows.into_iter().enumerate() {
        let terms = terms?;
        value += terms.value;
        active += terms.active;
        grad.row_mut(q).copy_from_slice(&terms.grad);
    }
    for (i, terms) in cols.into_iter().enumerate() {
        let terms = terms?;
        value += terms.value;
        active += terms.active;
        for (q, g) in terms.grad.into_iter().enumerate() {
            if g != 0.0 {
                grad.set(q, i, grad.get(q, i) + g);
            }
        }
    }
    Ok(ScoreLoss {
        value,
        grad_scores: grad,
        active_triplets: active,
    })
}

/// Back-propagates `d loss / d normalized row` through `x ↦ x / ‖x‖`.
fn through_normalization(raw: &Matrix, unit: &Matrix, grad_unit: &Matrix) -> Matrix {
    let mut out = grad_unit.clone();
    let d = raw.cols();
    par::for_each_row_mut(out.as_mut_slice(), d, |r, g| {
        let x = raw.row(r);
        let n = unit.row(r);
        let norm = dot(x, x).sqrt();
        let radial = dot(n, g);
        for (gk, nk) in g.iter_mut().zip(n) {
            *gk = (*gk - nk * radial) / norm;
        }
    });
    out
}

/// The configured loss and its gradients with respect to the raw
/// (un-normalized) query and item rows.
pub fn triplet_loss(
    queries: &EmbeddingSet,
    items: &EmbeddingSet,
    pairs: &PairIndex,
    cfg: &LossConfig,
) -> Result<LossReport> {
    triplet_loss_rows(queries.data(), items.data(), pairs, cfg)
}

/// [`triplet_loss`] on bare row matrices.
pub fn triplet_loss_rows(queries: &Matrix, items: &Matrix, pairs: &PairIndex, cfg: &LossConfig) -> Result<LossReport> {
    if queries.cols() != items.cols() {
        return Err(Error::DimensionMismatch {
            left: queries.cols(),
            right: items.cols(),
        });
    }
    let qn = normalize_rows(queries)?;
    let inn = normalize_rows(items)?;
    let sim = unit_cosine(&qn, &inn)?;
    let ScoreLoss {
        value,
        grad_scores,
        active_triplets,
    } = score_loss(&sim, pairs, cfg)?;

    let d = queries.cols();
    if active_triplets == 0 {
        return Ok(LossReport {
            value,
            grad_queries: Matrix::zeros(queries.rows(), d),
            grad_items: Matrix::zeros(items.rows(), d),
            active_triplets,
        });
    }
    let grad_qn = grad_scores.matmul(&inn)?;
    let grad_in = grad_scores.transpose_matmul(&qn)?;
    Ok(LossReport {
        value,
        grad_queries: through_normalization(queries, &qn, &grad_qn),
        grad_items: through_normalization(items, &inn, &grad_in),
        active_triplets,
    })
}

pub fn sum_margin_loss(
    queries: &EmbeddingSet,
    items: &EmbeddingSet,
    pairs: &PairIndex,
    margin_alpha: f64,
) -> Result<LossReport> {
    triplet_loss(queries, items, pairs, &LossConfig::sum(margin_alpha))
}

pub fn max_margin_loss(
    queries: &EmbeddingSet,
    items: &EmbeddingSet,
    pairs: &PairIndex,
    margin_alpha: f64,
) -> Result<LossReport> {
    triplet_loss(queries, items, pairs, &LossConfig::max(margin_alpha))
}

pub fn knn_margin_loss(
    queries: &EmbeddingSet,
    items: &EmbeddingSet,
    pairs: &PairIndex,
    margin_alpha: f64,
    k: usize,
) -> Result<LossReport> {
    triplet_loss(queries, items, pairs, &LossConfig::knn(margin_alpha, k))
}
