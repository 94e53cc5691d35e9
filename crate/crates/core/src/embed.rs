//! Embedding storage, normalization, cosine similarity and kNN selection.

use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;

/// Rows below this L2 norm cannot be normalized.
pub const ZERO_NORM: f64 = 1e-12;

/// A labeled set of same-dimension vectors for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    data: Matrix,
    ids: Vec<String>,
    normalized: bool,
}

impl EmbeddingSet {
    pub fn new(data: Matrix, ids: Vec<String>) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::Empty("embedding set has no rows"));
        }
        if data.cols() == 0 {
            return Err(Error::Empty("embedding set has zero dimension"));
        }
        if ids.len() != data.rows() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} ids", data.rows()),
                actual: format!("{} ids", ids.len()),
            });
        }
        if let Some(row) = data.iter_rows().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { row });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            data,
            ids,
            normalized: false,
        })
    }

    /// Ids default to `"{prefix}{row}"`.
    pub fn with_prefix(data: Matrix, prefix: &str) -> Result<Self> {
        let ids = (0..data.rows()).map(|i| format!("{prefix}{i}")).collect();
        Self::new(data, ids)
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn into_parts(self) -> (Matrix, Vec<String>) {
        (self.data, self.ids)
    }

    /// Subset of rows, ids carried along.
    pub fn select(&self, rows: &[usize]) -> EmbeddingSet {
        EmbeddingSet {
            data: self.data.select_rows(rows),
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            normalized: self.normalized,
        }
    }
}

/// How the scores of a [`SimilarityMatrix`] were produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Raw,
    InvertedSoftmax { beta: f64 },
    Csls { k: usize },
}

/// Dense `queries × items` score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    scores: Matrix,
    provenance: Provenance,
}

impl SimilarityMatrix {
    /// Wraps precomputed cosine scores.
    pub fn raw(scores: Matrix) -> Result<Self> {
        Self::with_provenance(scores, Provenance::Raw)
    }

    pub fn with_provenance(scores: Matrix, provenance: Provenance) -> Result<Self> {
        if let Some(row) = scores.iter_rows().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { row });
        }
        Ok(Self { scores, provenance })
    }

    pub fn scores(&self) -> &Matrix {
        &self.scores
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn n_queries(&self) -> usize {
        self.scores.rows()
    }

    pub fn n_items(&self) -> usize {
        self.scores.cols()
    }

    #[inline]
    pub fn get(&self, q: usize, i: usize) -> f64 {
        self.scores.get(q, i)
    }

    /// Swaps the roles of queries and items.
    pub fn transpose(&self) -> SimilarityMatrix {
        SimilarityMatrix {
            scores: self.scores.transpose(),
            provenance: self.provenance,
        }
    }

    pub fn require_raw(&self) -> Result<()> {
        match self.provenance {
            Provenance::Raw => Ok(()),
            _ => Err(Error::NotRawSimilarity),
        }
    }

    pub fn into_scores(self) -> Matrix {
        self.scores
    }

    /// Restricts to the given query rows and item columns.
    pub fn submatrix(&self, queries: &[usize], items: &[usize]) -> SimilarityMatrix {
        SimilarityMatrix {
            scores: self.scores.select_rows(queries).select_cols(items),
            provenance: self.provenance,
        }
    }
}

/// Ground-truth correspondence: for each query, the set of matching items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIndex {
    positives: Vec<Vec<usize>>,
    n_items: usize,
}

impl PairIndex {
    /// `positives[q]` lists the items matching query `q`. Lists are sorted
    /// and deduplicated; an empty list means the query has no ground truth.
    pub fn new(mut positives: Vec<Vec<usize>>, n_items: usize) -> Result<Self> {
        for list in &mut positives {
            list.sort_unstable();
            list.dedup();
            if let Some(&bad) = list.iter().find(|&&i| i >= n_items) {
                return Err(Error::IndexOutOfRange {
                    index: bad,
                    len: n_items,
                });
            }
        }
        Ok(Self { positives, n_items })
    }

    /// Query `k` matches item `k`.
    pub fn diagonal(n: usize) -> Self {
        Self {
            positives: (0..n).map(|i| vec![i]).collect(),
            n_items: n,
        }
    }

    pub fn from_pairs<I>(pairs: I, n_queries: usize, n_items: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut positives = vec![Vec::new(); n_queries];
        for (q, i) in pairs {
            let list = positives.get_mut(q).ok_or(Error::IndexOutOfRange {
                index: q,
                len: n_queries,
            })?;
            list.push(i);
        }
        Self::new(positives, n_items)
    }

    pub fn n_queries(&self) -> usize {
        self.positives.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn positives(&self, query: usize) -> &[usize] {
        &self.positives[query]
    }

    pub fn is_positive(&self, query: usize, item: usize) -> bool {
        self.positives[query].binary_search(&item).is_ok()
    }

    /// All `(query, item)` edges in query-then-item order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.positives
            .iter()
            .enumerate()
            .flat_map(|(q, items)| items.iter().map(move |&i| (q, i)))
    }

    pub fn n_pairs(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    /// The item→query view.
    pub fn inverse(&self) -> PairIndex {
        let mut positives = vec![Vec::new(); self.n_items];
        for (q, i) in self.pairs() {
            positives[i].push(q);
        }
        PairIndex {
            positives,
            n_items: self.positives.len(),
        }
    }

    /// For a within-batch pairing: the unique positive of every query,
    /// checked to be a bijection onto the items.
    pub fn bijection(&self) -> Result<Vec<usize>> {
        if self.positives.len() != self.n_items {
            return Err(Error::NotBijective(format!(
                "{} queries vs {} items",
                self.positives.len(),
                self.n_items
            )));
        }
        let mut hit = vec![false; self.n_items];
        let mut out = Vec::with_capacity(self.n_items);
        for (q, list) in self.positives.iter().enumerate() {
            let [item] = list.as_slice() else {
                return Err(Error::NotBijective(format!("query {q} has {} positives", list.len())));
            };
            if std::mem::replace(&mut hit[*item], true) {
                return Err(Error::NotBijective(format!("item {item} paired twice")));
            }
            out.push(*item);
        }
        Ok(out)
    }

    /// Restriction to a subset of queries and items, re-indexed. Positives
    /// outside `items` are dropped. Panics if an index is out of range.
    pub fn restrict(&self, queries: &[usize], items: &[usize]) -> PairIndex {
        let mut remap = vec![usize::MAX; self.n_items];
        for (new, &old) in items.iter().enumerate() {
            remap[old] = new;
        }
        let positives = queries
            .iter()
            .map(|&q| {
                self.positives[q]
                    .iter()
                    .filter_map(|&i| (remap[i] != usize::MAX).then_some(remap[i]))
                    .collect::<Vec<_>>()
            })
            .collect();
        PairIndex::new(positives, items.len()).expect("remapped indices are in range")
    }
}

/// Scales every row to unit L2 norm.
pub fn normalize(e: &EmbeddingSet) -> Result<EmbeddingSet> {
    Ok(EmbeddingSet {
        data: normalize_rows(&e.data)?,
        ids: e.ids.clone(),
        normalized: true,
    })
}

/// [`normalize`] on a bare matrix.
pub fn normalize_rows(data: &Matrix) -> Result<Matrix> {
    let mut out = data.clone();
    if data.cols() == 0 {
        return Ok(out);
    }
    for (r, row) in out.as_mut_slice().chunks_exact_mut(data.cols()).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < ZERO_NORM {
            return Err(Error::ZeroVector(r));
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    Ok(out)
}

/// Cosine similarity of two already unit-norm row sets.
pub(crate) fn unit_cosine(queries: &Matrix, items: &Matrix) -> Result<SimilarityMatrix> {
    let mut scores = queries.matmul_transposed(items)?;
    for v in scores.as_mut_slice() {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(SimilarityMatrix {
        scores,
        provenance: Provenance::Raw,
    })
}

fn normalized(e: &EmbeddingSet) -> Result<Cow<'_, EmbeddingSet>> {
    if e.normalized {
        Ok(Cow::Borrowed(e))
    } else {
        normalize(e).map(Cow::Owned)
    }
}

/// Cosine similarity of every query row against every item row.
///
/// Inputs that are not flagged as normalized are normalized first. Each
/// entry is a fixed-order dot product, clamped to `[-1, 1]` to absorb
/// rounding.
pub fn cosine_similarity(queries: &EmbeddingSet, items: &EmbeddingSet) -> Result<SimilarityMatrix> {
    if queries.dim() != items.dim() {
        return Err(Error::DimensionMismatch {
            left: queries.dim(),
            right: items.dim(),
        });
    }
    let q = normalized(queries)?;
    let i = normalized(items)?;
    unit_cosine(&q.data, &i.data)
}

/// Orders by descending score, then ascending index.
#[inline]
pub(crate) fn desc_score_then_index(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

/// The `k` highest-scoring indices not in `exclude`, sorted by descending
/// score with ties going to the lower index.
pub fn knn_select(scores: &[f64], exclude: &[usize], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|i| !exclude.contains(i)).collect();
    if candidates.len() < k {
        return Err(Error::InsufficientCandidates {
            needed: k,
            available: candidates.len(),
        });
    }
    let cmp = desc_score_then_index(scores);
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, &cmp);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(&cmp);
    Ok(candidates)
}

/// Full ranking of `scores` by descending score, ties to the lower index.
pub(crate) fn argsort_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_unstable_by(desc_score_then_index(scores));
    idx
}

/// Index of the maximum, lowest index on ties.
pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Sum of the `k` largest values in `scores` (no exclusions).
pub(crate) fn top_k_sum(scores: &[f64], k: usize) -> Result<f64> {
    Ok(knn_select(scores, &[], k)?.iter().map(|&i| scores[i]).sum())
}

/// Per-row argmax for every query of a similarity matrix.
pub(crate) fn nearest_items(sim: &SimilarityMatrix) -> Vec<usize> {
    par::map_indices(sim.n_queries(), |q| argmax(sim.scores.row(q)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(rows: &[&[f64]]) -> EmbeddingSet {
        EmbeddingSet::with_prefix(Matrix::from_rows(rows).unwrap(), "x").unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingSet {
        let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmbeddingSet::with_prefix(Matrix::from_vec(n, d, data).unwrap(), "r").unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let n = normalize(&set(&[&[3.0, 4.0]])).unwrap();
        assert!(n.is_normalized());
        assert!((n.data().get(0, 0) - 0.6).abs() < 1e-15);
        assert!((n.data().get(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_keeps_unit_rows_and_ids() {
        let e = set(&[&[1.0, 0.0], &[0.0, -2.0]]);
        let n = normalize(&e).unwrap();
        assert_eq!(n.data().row(0), &[1.0, 0.0]);
        assert_eq!(n.data().row(1), &[0.0, -1.0]);
        assert_eq!(n.ids(), e.ids());
    }

    #[test]
    fn normalize_random_rows_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = normalize(&random_set(&mut rng, 5, 8)).unwrap();
        for row in n.data().iter_rows() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_row_is_an_error() {
        let e = set(&[&[1.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(normalize(&e), Err(Error::ZeroVector(1)));
    }

    #[test]
    fn embedding_set_validation() {
        let m = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(matches!(
            EmbeddingSet::new(m.clone(), vec!["a".into(), "a".into()]),
            Err(Error::DuplicateId(_))
        ));
        let bad = Matrix::from_rows(&[[1.0], [f64::NAN]]).unwrap();
        assert_eq!(EmbeddingSet::with_prefix(bad, "x"), Err(Error::NonFinite { row: 1 }));
        assert!(EmbeddingSet::with_prefix(Matrix::zeros(0, 3), "x").is_err());
        assert!(EmbeddingSet::with_prefix(Matrix::zeros(2, 0), "x").is_err());
    }

    #[test]
    fn cosine_orthonormal_and_antipodal() {
        let basis = set(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let s = cosine_similarity(&basis, &basis).unwrap();
        assert_eq!(s.scores().as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.provenance(), Provenance::Raw);
        let s = cosine_similarity(&set(&[&[1.0, 0.0]]), &set(&[&[-1.0, 0.0]])).unwrap();
        assert_eq!(s.get(0, 0), -1.0);
    }

    #[test]
    fn cosine_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_set(&mut rng, 4, 3);
        let i = random_set(&mut rng, 6, 3);
        let s = cosine_similarity(&q, &i).unwrap();
        for a in 0..4 {
            for b in 0..6 {
                let (x, y) = (q.data().row(a), i.data().row(b));
                let mut dot = 0.0;
                let mut nx = 0.0;
                let mut ny = 0.0;
                for k in 0..3 {
                    dot += x[k] * y[k];
                    nx += x[k] * x[k];
                    ny += y[k] * y[k];
                }
                let oracle = dot / (nx.sqrt() * ny.sqrt());
                assert!((s.get(a, b) - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let err = cosine_similarity(&set(&[&[1.0, 0.0]]), &set(&[&[1.0, 0.0, 0.0]])).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { left: 2, right: 3 });
    }

    #[test]
    fn knn_examples() {
        assert_eq!(knn_select(&[0.9, 0.1, 0.5], &[0], 1).unwrap(), vec![2]);
        assert_eq!(knn_select(&[0.5, 0.5, 0.5], &[], 2).unwrap(), vec![0, 1]);
        assert_eq!(
            knn_select(&[0.1, 0.2], &[1], 2),
            Err(Error::InsufficientCandidates {
                needed: 2,
                available: 1
            })
        );
        assert!(knn_select(&[0.1], &[], 0).is_err());
    }

    #[test]
    fn knn_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let mut all: Vec<usize> = (0..50).collect();
        all.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        assert_eq!(knn_select(&scores, &[], 7).unwrap(), all[..7]);
    }

    #[test]
    fn pair_index_inverse_and_bijection() {
        let p = PairIndex::from_pairs([(0, 1), (1, 1), (2, 0)], 3, 2).unwrap();
        let inv = p.inverse();
        assert_eq!(inv.positives(1), &[0, 1]);
        assert_eq!(inv.inverse(), p);
        assert!(p.bijection().is_err());
        assert_eq!(PairIndex::diagonal(3).bijection().unwrap(), vec![0, 1, 2]);
        assert!(PairIndex::from_pairs([(0, 5)], 1, 2).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(data in prop::collection::vec(0.1f64..5.0, 12)) {
            let e = EmbeddingSet::with_prefix(Matrix::from_vec(3, 4, data).unwrap(), "p").unwrap();
            let once = normalize(&e).unwrap();
            let twice = normalize(&once).unwrap();
            prop_assert!(once.data().max_abs_diff(twice.data()) < 1e-12);
        }

        #[test]
        fn cosine_transpose_and_scale_invariance(
            a in prop::collection::vec(-3.0f64..3.0, 12),
            b in prop::collection::vec(-3.0f64..3.0, 8),
            scale in 0.01f64..100.0,
        ) {
            prop_assume!(a.chunks(4).chain(b.chunks(4)).all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-6));
            let qa = EmbeddingSet::with_prefix(Matrix::from_vec(3, 4, a.clone()).unwrap(), "a").unwrap();
            let ib = EmbeddingSet::with_prefix(Matrix::from_vec(2, 4, b).unwrap(), "b").unwrap();
            let ab = cosine_similarity(&qa, &ib).unwrap();
            let ba = cosine_similarity(&ib, &qa).unwrap();
            prop_assert!(ab.scores().max_abs_diff(&ba.scores().transpose()) < 1e-12);

            let mut scaled = a;
            scaled[..4].iter_mut().for_each(|v| *v *= scale);
            let qs = EmbeddingSet::with_prefix(Matrix::from_vec(3, 4, scaled).unwrap(), "a").unwrap();
            let sb = cosine_similarity(&qs, &ib).unwrap();
            prop_assert!(ab.scores().max_abs_diff(sb.scores()) < 1e-9);
        }

        #[test]
        fn knn_is_top_k_of_sorted(
            scores in prop::collection::vec(-1.0f64..1.0, 2..40),
            k_frac in 0.0f64..1.0,
        ) {
            let exclude = vec![0];
            let avail = scores.len() - 1;
            let k = 1 + ((avail - 1) as f64 * k_frac) as usize;
            let got = knn_select(&scores, &exclude, k).unwrap();
            prop_assert_eq!(&got, &knn_select(&scores, &exclude, k).unwrap());
            let mut sorted: Vec<f64> = scores[1..].to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let picked: Vec<f64> = got.iter().map(|&i| scores[i]).collect();
            prop_assert_eq!(picked, sorted[..k].to_vec());
        }
    }
}
