//! Linear toy encoders trained end-to-end with a triplet ranking loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::embed::{EmbeddingSet, PairIndex};
use crate::error::{Error, Result};
use crate::losses::{triplet_loss_rows, LossConfig, LossKind};
use crate::matrix::Matrix;
use crate::metrics::RetrievalReport;

/// `x ↦ x·W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    /// `d_in × d_out`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl ToyEncoder {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::DimensionMismatch {
                left: weight.cols(),
                right: bias.len(),
            });
        }
        if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidConfig("encoder parameters must be finite".into()));
        }
        Ok(Self { weight, bias })
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let a = (6.0 / (d_in + d_out) as f64).sqrt();
        let data = (0..d_in * d_out).map(|_| rng.random_range(-a..a)).collect();
        Self {
            weight: Matrix::from_vec(d_in, d_out, data).expect("sized above"),
            bias: vec![0.0; d_out],
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weight)?;
        let d = self.d_out();
        for row in out.as_mut_slice().chunks_exact_mut(d) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Encodes a whole set, keeping its ids.
    pub fn encode(&self, set: &EmbeddingSet) -> Result<EmbeddingSet> {
        EmbeddingSet::new(self.forward(set.data())?, set.ids().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    /// Joint embedding dimension.
    pub embed_dim: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            lr: 0.001,
            lr_decay_every: 10,
            lr_decay_factor: 10.0,
            embed_dim: 16,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be >= 1".into());
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad(format!("lr_decay_factor must be > 0, got {}", self.lr_decay_factor));
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be >= 1".into());
        }
        self.loss.validate()
    }
}

/// Step size used throughout epoch `epoch` (0-based):
/// `lr / factor^⌊epoch / every⌋`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr / cfg.lr_decay_factor.powi((epoch / cfg.lr_decay_every) as i32)
}

/// Index-aligned training pairs: row `k` of `queries` matches row `k` of
/// `items`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub queries: Matrix,
    pub items: Matrix,
}

impl TrainData {
    pub fn new(queries: Matrix, items: Matrix) -> Result<Self> {
        if queries.rows() != items.rows() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} item rows", queries.rows()),
                actual: format!("{} item rows", items.rows()),
            });
        }
        Ok(Self { queries, items })
    }

    /// One training row per ground-truth edge, in edge order.
    pub fn from_pairs(queries: &EmbeddingSet, items: &EmbeddingSet, pairs: &PairIndex) -> Result<Self> {
        if pairs.n_queries() != queries.len() || pairs.n_items() != items.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("pairs over {}x{}", queries.len(), items.len()),
                actual: format!("pairs over {}x{}", pairs.n_queries(), pairs.n_items()),
            });
        }
        let (q_idx, i_idx): (Vec<usize>, Vec<usize>) = pairs.pairs().unzip();
        Self::new(queries.data().select_rows(&q_idx), items.data().select_rows(&i_idx))
    }

    pub fn len(&self) -> usize {
        self.queries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.rows() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Summed loss over the training set in fixed contiguous batches,
    /// measured after the epoch's updates.
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub query_encoder: ToyEncoder,
    pub item_encoder: ToyEncoder,
    pub history: Vec<EpochRecord>,
}

/// Encoder pair plus optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub query_encoder: ToyEncoder,
    pub item_encoder: ToyEncoder,
    loss: LossConfig,
    states: [AdamState; 4],
    steps: u64,
}

impl Trainer {
    pub fn new(query_encoder: ToyEncoder, item_encoder: ToyEncoder, loss: LossConfig) -> Result<Self> {
        if query_encoder.d_out() != item_encoder.d_out() {
            return Err(Error::DimensionMismatch {
                left: query_encoder.d_out(),
                right: item_encoder.d_out(),
            });
        }
        let states = [
            AdamState::new(query_encoder.weight.as_slice().len()),
            AdamState::new(query_encoder.bias.len()),
            AdamState::new(item_encoder.weight.as_slice().len()),
            AdamState::new(item_encoder.bias.len()),
        ];
        Ok(Self {
            query_encoder,
            item_encoder,
            loss,
            states,
            steps: 0,
        })
    }

    /// Loss config for a batch of `b` rows; `knn_k` is capped at `b − 1`.
    fn batch_loss_config(&self, b: usize) -> LossConfig {
        let mut cfg = self.loss;
        if cfg.kind == LossKind::KnnMargin {
            cfg.knn_k = cfg.knn_k.min(b - 1);
        }
        cfg
    }

    /// Summed loss on one index-aligned batch, without updating anything.
    pub fn batch_loss(&self, queries: &Matrix, items: &Matrix) -> Result<f64> {
        let b = queries.rows();
        let q = self.query_encoder.forward(queries)?;
        let i = self.item_encoder.forward(items)?;
        Ok(triplet_loss_rows(&q, &i, &PairIndex::diagonal(b), &self.batch_loss_config(b))?.value)
    }

    /// One Adam step on the batch mean loss. Returns the summed batch loss
    /// before the update.
    pub fn step(&mut self, queries: &Matrix, items: &Matrix, lr: f64) -> Result<f64> {
        let b = queries.rows();
        let q = self.query_encoder.forward(queries)?;
        let i = self.item_encoder.forward(items)?;
        let report = triplet_loss_rows(&q, &i, &PairIndex::diagonal(b), &self.batch_loss_config(b))?;
        if !report.value.is_finite() {
            return Ok(report.value);
        }
        let inv_b = 1.0 / b as f64;
        let grads = [
            scaled(queries.transpose_matmul(&report.grad_queries)?.into_vec(), inv_b),
            scaled(column_sums(&report.grad_queries), inv_b),
            scaled(items.transpose_matmul(&report.grad_items)?.into_vec(), inv_b),
            scaled(column_sums(&report.grad_items), inv_b),
        ];
        self.steps += 1;
        let t = self.steps;
        let [s_qw, s_qb, s_iw, s_ib] = &mut self.states;
        s_qw.step(self.query_encoder.weight.as_mut_slice(), &grads[0], lr, t);
        s_qb.step(&mut self.query_encoder.bias, &grads[1], lr, t);
        s_iw.step(self.item_encoder.weight.as_mut_slice(), &grads[2], lr, t);
        s_ib.step(&mut self.item_encoder.bias, &grads[3], lr, t);
        Ok(report.value)
    }
}

fn scaled(mut v: Vec<f64>, s: f64) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x *= s);
    v
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for row in m.iter_rows() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// Contiguous batches of `batch_size`, dropping a trailing batch of one.
fn batches(order: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch_size).filter(|c| c.len() >= 2)
}

fn dataset_loss(trainer: &Trainer, data: &TrainData, batch_size: usize) -> Result<f64> {
    let order: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for batch in batches(&order, batch_size) {
        total += trainer.batch_loss(&data.queries.select_rows(batch), &data.items.select_rows(batch))?;
    }
    Ok(total)
}

/// Trains both encoders from Xavier initialization.
///
/// Every epoch shuffles the pairs with the seeded generator, steps through
/// the batches, then records the full-data loss and the epoch's step size.
pub fn train(data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.len() < cfg.batch_size {
        return Err(Error::InvalidConfig(format!(
            "need at least batch_size = {} pairs, got {}",
            cfg.batch_size,
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let query_encoder = ToyEncoder::xavier(data.queries.cols(), cfg.embed_dim, &mut rng);
    let item_encoder = ToyEncoder::xavier(data.items.cols(), cfg.embed_dim, &mut rng);
    let mut trainer = Trainer::new(query_encoder, item_encoder, cfg.loss)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        order.shuffle(&mut rng);
        for batch in batches(&order, cfg.batch_size) {
            let value = trainer.step(&data.queries.select_rows(batch), &data.items.select_rows(batch), lr)?;
            if !value.is_finite() {
                return Err(Error::DivergedLoss { epoch, value });
            }
        }
        let loss = dataset_loss(&trainer, data, cfg.batch_size)?;
        if !loss.is_finite() {
            return Err(Error::DivergedLoss { epoch, value: loss });
        }
        history.push(EpochRecord { epoch, loss, lr });
    }
    Ok(TrainOutcome {
        query_encoder: trainer.query_encoder,
        item_encoder: trainer.item_encoder,
        history,
    })
}

/// Index of the candidate with the largest R@1 + R@5 + R@10 summed over all
/// of its reports (both retrieval directions). Ties go to the lower index;
/// `None` for an empty list.
pub fn model_select<T>(candidates: &[(T, Vec<RetrievalReport>)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, (_, reports)) in candidates.iter().enumerate() {
        let score: f64 = reports.iter().map(RetrievalReport::recall_sum).sum();
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((idx, score));
        }
    }
    best.map(|(idx, _)| idx)
}
