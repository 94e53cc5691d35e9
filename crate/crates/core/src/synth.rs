//! Seeded synthetic paired data standing in for caption/image features.
//!
//! Each class has a latent unit direction. Every pair in the class gets its
//! own latent, a jittered copy of the class direction, and its query and
//! item are independent noisy embeddings of that latent into the two raw
//! spaces. Optionally a fraction of items is pushed along one shared bias
//! vector, the item-space image of the class-direction centroid. Queries of
//! every class lean toward it, so the biased items become hubs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingSet, PairIndex};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub d_raw_query: usize,
    pub d_raw_item: usize,
    /// Standard deviation of the per-coordinate Gaussian noise added to
    /// every raw vector.
    pub noise_sigma: f64,
    /// Fraction of items receiving the hub bias.
    pub hub_fraction: f64,
    /// Length of the hub bias vector.
    pub hub_strength: f64,
    /// Spread of pair latents around their class direction. Zero makes all
    /// pairs of a class share one latent.
    pub class_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 10,
            samples_per_class: 20,
            d_raw_query: 32,
            d_raw_item: 32,
            noise_sigma: 0.0,
            hub_fraction: 0.0,
            hub_strength: 0.0,
            class_spread: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_classes < 2 {
            return bad(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be >= 1".into());
        }
        if self.d_raw_query == 0 || self.d_raw_item == 0 {
            return bad("raw dimensions must be >= 1".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.hub_fraction) {
            return bad(format!("hub_fraction must be in [0, 1], got {}", self.hub_fraction));
        }
        if !(self.hub_strength >= 0.0 && self.hub_strength.is_finite()) {
            return bad(format!("hub_strength must be >= 0, got {}", self.hub_strength));
        }
        if !(self.class_spread >= 0.0 && self.class_spread.is_finite()) {
            return bad(format!("class_spread must be >= 0, got {}", self.class_spread));
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        self.n_classes * self.samples_per_class
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub queries: EmbeddingSet,
    pub items: EmbeddingSet,
    /// Query `p` matches item `p`.
    pub pairs: PairIndex,
    /// Class of pair `p`.
    pub classes: Vec<usize>,
    /// Items that received the hub bias, ascending.
    pub hub_items: Vec<usize>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Embeds latent vectors into a raw space: identity when the dimensions
/// agree, otherwise a fixed Gaussian map scaled by `1/√d_latent`.
fn embedding_map(rng: &mut ChaCha8Rng, d_latent: usize, d_raw: usize) -> Option<Matrix> {
    if d_latent == d_raw {
        return None;
    }
    let scale = 1.0 / (d_latent as f64).sqrt();
    let data = gaussian(rng, d_latent * d_raw).into_iter().map(|v| v * scale).collect();
    Some(Matrix::from_vec(d_latent, d_raw, data).expect("sized above"))
}

fn embed(map: &Option<Matrix>, z: &[f64]) -> Vec<f64> {
    match map {
        None => z.to_vec(),
        Some(m) => {
            let mut out = vec![0.0; m.cols()];
            for (k, &zk) in z.iter().enumerate() {
                for (o, &w) in out.iter_mut().zip(m.row(k)) {
                    *o += zk * w;
                }
            }
            out
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d_latent = spec.d_raw_query.min(spec.d_raw_item);
    let query_map = embedding_map(&mut rng, d_latent, spec.d_raw_query);
    let item_map = embedding_map(&mut rng, d_latent, spec.d_raw_item);
    let class_dirs: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| unit(gaussian(&mut rng, d_latent)))
        .collect();
    let mut centroid = vec![0.0; d_latent];
    for dir in &class_dirs {
        centroid.iter_mut().zip(dir).for_each(|(c, d)| *c += d);
    }
    let hub_dir = unit(embed(&item_map, &centroid));

    let n = spec.n_pairs();
    let jitter = spec.class_spread / (d_latent as f64).sqrt();
    let mut queries = Vec::with_capacity(n * spec.d_raw_query);
    let mut items = Vec::with_capacity(n * spec.d_raw_item);
    let mut classes = Vec::with_capacity(n);
    for (c, dir) in class_dirs.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let offset = gaussian(&mut rng, d_latent);
            let z = unit(dir.iter().zip(&offset).map(|(d, o)| d + jitter * o).collect());
            let q_noise = gaussian(&mut rng, spec.d_raw_query);
            let i_noise = gaussian(&mut rng, spec.d_raw_item);
            queries.extend(
                embed(&query_map, &z)
                    .into_iter()
                    .zip(q_noise)
                    .map(|(v, e)| v + spec.noise_sigma * e),
            );
            items.extend(
                embed(&item_map, &z)
                    .into_iter()
                    .zip(i_noise)
                    .map(|(v, e)| v + spec.noise_sigma * e),
            );
            classes.push(c);
        }
    }

    let n_hubs = (spec.hub_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut hub_items = order[..n_hubs].to_vec();
    hub_items.sort_unstable();
    for &h in &hub_items {
        let row = &mut items[h * spec.d_raw_item..(h + 1) * spec.d_raw_item];
        for (v, b) in row.iter_mut().zip(&hub_dir) {
            *v += spec.hub_strength * b;
        }
    }

    let queries = EmbeddingSet::with_prefix(Matrix::from_vec(n, spec.d_raw_query, queries)?, "q")?;
    let items = EmbeddingSet::with_prefix(Matrix::from_vec(n, spec.d_raw_item, items)?, "i")?;
    Ok(SyntheticData {
        queries,
        items,
        pairs: PairIndex::diagonal(n),
        classes,
        hub_items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::cosine_similarity;
    use crate::inference::rank_naive;
    use crate::metrics::{compute_report, Direction};

    #[test]
    fn noiseless_data_is_perfectly_retrievable() {
        let data = generate_synthetic(&SyntheticSpec {
            seed: 3,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let sim = cosine_similarity(&data.queries, &data.items).unwrap();
        let report = compute_report(&rank_naive(&sim).unwrap(), &data.pairs, Direction::TextToImage).unwrap();
        assert_eq!(report.r_at(1), 100.0);
        for p in 0..data.pairs.n_queries() {
            assert!((sim.get(p, p) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let spec = SyntheticSpec {
            noise_sigma: 0.3,
            hub_fraction: 0.2,
            hub_strength: 1.0,
            seed: 11,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.queries, c.queries);
    }

    #[test]
    fn mismatched_raw_dims() {
        let spec = SyntheticSpec {
            d_raw_query: 12,
            d_raw_item: 20,
            ..Default::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        assert_eq!(data.queries.dim(), 12);
        assert_eq!(data.items.dim(), 20);
        assert_eq!(data.queries.len(), 200);
    }

    #[test]
    fn hub_count_follows_fraction() {
        let spec = SyntheticSpec {
            hub_fraction: 0.3,
            hub_strength: 2.0,
            ..Default::default()
        };
        assert_eq!(generate_synthetic(&spec).unwrap().hub_items.len(), 60);
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            SyntheticSpec {
                n_classes: 1,
                ..Default::default()
            },
            SyntheticSpec {
                noise_sigma: -0.1,
                ..Default::default()
            },
            SyntheticSpec {
                hub_fraction: 1.5,
                ..Default::default()
            },
            SyntheticSpec {
                d_raw_item: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidSpec(_))));
        }
    }
}
