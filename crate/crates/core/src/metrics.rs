//! Bidirectional retrieval metrics and hub diagnostics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embed::{nearest_items, PairIndex, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::inference::{Matching, RankingResult};
use crate::par;

/// Recall cut-offs reported everywhere.
pub const RECALL_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::ImageToText => "image_to_text",
            Direction::TextToImage => "text_to_image",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    /// Percentage of queries with their best ground-truth rank ≤ K.
    pub r_at: BTreeMap<usize, f64>,
    pub med_r: f64,
    pub mean_r: f64,
    pub n_queries: usize,
}

impl RetrievalReport {
    /// Builds a report from 1-based ground-truth ranks.
    pub fn from_ranks(direction: Direction, ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::Empty("no queries to evaluate"));
        }
        let n = ranks.len() as f64;
        let r_at = RECALL_KS
            .iter()
            .map(|&k| (k, 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
            .collect();
        let mut sorted = ranks.to_vec();
        sorted.sort_unstable();
        let mid = sorted.len() / 2;
        let med_r = if sorted.len() % 2 == 1 {
            sorted[mid] as f64
        } else {
            (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
        };
        let mean_r = ranks.iter().map(|&r| r as f64).sum::<f64>() / n;
        Ok(Self {
            direction,
            r_at,
            med_r,
            mean_r,
            n_queries: ranks.len(),
        })
    }

    pub fn r_at(&self, k: usize) -> f64 {
        self.r_at.get(&k).copied().unwrap_or(f64::NAN)
    }

    /// R@1 + R@5 + R@10.
    pub fn recall_sum(&self) -> f64 {
        RECALL_KS.iter().map(|&k| self.r_at(k)).sum()
    }
}

/// Best (minimum) 1-based position of any ground-truth item for each query.
pub fn ground_truth_ranks(ranking: &RankingResult, pairs: &PairIndex) -> Result<Vec<usize>> {
    if pairs.n_queries() != ranking.n_queries() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} queries", ranking.n_queries()),
            actual: format!("{} queries in pairs", pairs.n_queries()),
        });
    }
    par::map_indices(ranking.n_queries(), |q| {
        if pairs.positives(q).is_empty() {
            return Err(Error::MissingGroundTruth(q));
        }
        ranking.ranked_items[q]
            .iter()
            .position(|&item| pairs.is_positive(q, item))
            .map(|p| p + 1)
            .ok_or(Error::MissingGroundTruth(q))
    })
    .into_iter()
    .collect()
}

pub fn compute_report(ranking: &RankingResult, pairs: &PairIndex, direction: Direction) -> Result<RetrievalReport> {
    RetrievalReport::from_ranks(direction, &ground_truth_ranks(ranking, pairs)?)
}

/// Field-wise mean of several reports of the same direction.
pub fn average_reports(reports: &[RetrievalReport]) -> Result<RetrievalReport> {
    let first = reports.first().ok_or(Error::Empty("no reports to average"))?;
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&RetrievalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(RetrievalReport {
        direction: first.direction,
        r_at: RECALL_KS.iter().map(|&k| (k, mean(&|r| r.r_at(k)))).collect(),
        med_r: mean(&|r| r.med_r),
        mean_r: mean(&|r| r.mean_r),
        n_queries: reports.iter().map(|r| r.n_queries).sum(),
    })
}

/// Splits `0..n` into `folds` contiguous, near-equal ranges.
pub fn contiguous_folds(n: usize, folds: usize) -> Vec<std::ops::Range<usize>> {
    let folds = folds.clamp(1, n.max(1));
    (0..folds).map(|f| (f * n / folds)..((f + 1) * n / folds)).collect()
}

/// Percentage of queries whose matched item is a ground-truth item.
pub fn matching_recall(matching: &Matching, pairs: &PairIndex) -> Result<f64> {
    let nq = pairs.n_queries();
    if nq == 0 {
        return Err(Error::Empty("no queries to evaluate"));
    }
    let hits = matching.edges.iter().filter(|&&(q, i)| pairs.is_positive(q, i)).count();
    Ok(100.0 * hits as f64 / nq as f64)
}

/// How many items are the nearest neighbor of exactly `k` queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HubHistogram {
    counts: BTreeMap<usize, usize>,
    n_items: usize,
    n_queries: usize,
}

impl HubHistogram {
    /// `counts[k]` = number of items that are the NN of `k` queries.
    pub fn from_counts(counts: BTreeMap<usize, usize>, n_queries: usize) -> Result<Self> {
        let n_items = counts.values().sum();
        let claimed: usize = counts.iter().map(|(k, c)| k * c).sum();
        if claimed != n_queries {
            return Err(Error::InvalidConfig(format!(
                "histogram accounts for {claimed} queries, expected {n_queries}"
            )));
        }
        Ok(Self {
            counts,
            n_items,
            n_queries,
        })
    }

    /// Builds the histogram from per-item NN counts.
    pub fn from_item_counts(per_item: &[usize]) -> Self {
        let mut counts = BTreeMap::new();
        for &c in per_item {
            *counts.entry(c).or_insert(0) += 1;
        }
        Self {
            counts,
            n_items: per_item.len(),
            n_queries: per_item.iter().sum(),
        }
    }

    pub fn counts(&self) -> &BTreeMap<usize, usize> {
        &self.counts
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    /// Number of items NN to exactly `k` queries.
    pub fn exactly(&self, k: usize) -> usize {
        self.counts.get(&k).copied().unwrap_or(0)
    }

    /// Number of items NN to at least `k` queries.
    pub fn at_least(&self, k: usize) -> usize {
        self.counts.range(k..).map(|(_, c)| c).sum()
    }

    /// Largest number of queries sharing one NN item.
    pub fn max_hub(&self) -> usize {
        self.counts.iter().rev().find(|(_, &c)| c > 0).map_or(0, |(&k, _)| k)
    }
}

/// Per-item count of queries whose nearest neighbor it is (ties to the
/// lower item index).
pub fn nn_counts(sim: &SimilarityMatrix) -> Vec<usize> {
    let mut per_item = vec![0; sim.n_items()];
    for item in nearest_items(sim) {
        per_item[item] += 1;
    }
    per_item
}

pub fn hub_histogram(sim: &SimilarityMatrix) -> HubHistogram {
    HubHistogram::from_item_counts(&nn_counts(sim))
}

/// Per-item match counts of a matching, as a histogram.
pub fn matching_histogram(matching: &Matching, n_items: usize) -> HubHistogram {
    let mut per_item = vec![0; n_items];
    for &(_, i) in &matching.edges {
        per_item[i] += 1;
    }
    HubHistogram::from_item_counts(&per_item)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub count: usize,
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubSummary {
    pub n_items: usize,
    pub n_queries: usize,
    /// Items NN to no query.
    pub exactly_0: Bucket,
    /// Items NN to exactly one query.
    pub exactly_1: Bucket,
    /// `(τ, items NN to ≥ τ queries)` for every requested threshold.
    pub at_least: Vec<(usize, Bucket)>,
    pub max_hub: usize,
}

impl HubSummary {
    pub fn at_least(&self, threshold: usize) -> Option<Bucket> {
        self.at_least.iter().find(|(t, _)| *t == threshold).map(|&(_, b)| b)
    }
}

/// Thresholds of the usual hub table: ≥2, ≥5, ≥10.
pub const DEFAULT_HUB_THRESHOLDS: [usize; 3] = [2, 5, 10];

pub fn hub_summary(h: &HubHistogram, thresholds: &[usize]) -> Result<HubSummary> {
    if thresholds.is_empty() {
        return Err(Error::Empty("no hub thresholds"));
    }
    let bucket = |count: usize| Bucket {
        count,
        percentage: if h.n_items == 0 {
            0.0
        } else {
            100.0 * count as f64 / h.n_items as f64
        },
    };
    Ok(HubSummary {
        n_items: h.n_items,
        n_queries: h.n_queries,
        exactly_0: bucket(h.exactly(0)),
        exactly_1: bucket(h.exactly(1)),
        at_least: thresholds.iter().map(|&t| (t, bucket(h.at_least(t)))).collect(),
        max_hub: h.max_hub(),
    })
}
