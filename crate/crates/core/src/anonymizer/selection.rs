//! Selection-based baseline: average a random subset of the pool speakers
//! farthest from the source.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, cosine};
use crate::pool::{mean_of, EmbeddingPool};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub n_far: usize,
    pub n_pick: usize,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { n_far: 200, n_pick: 100, seed: 50 }
    }
}

/// Per-speaker centroids of an external pool, sorted by speaker id.
#[derive(Debug, Clone)]
pub struct SelectionPool {
    centroids: Vec<(String, Vec<f64>)>,
    dim: usize,
}

impl SelectionPool {
    pub fn new(pool: &EmbeddingPool) -> Result<Self> {
        let mut centroids = Vec::new();
        for (speaker, mut recs) in pool.by_speaker(None) {
            // fixed summation order so the centroid does not depend on record order
            recs.sort_by(|a, b| a.utterance.cmp(&b.utterance));
            let c = mean_of(pool.dim(), recs.iter().map(|r| r.vector.as_slice()))?;
            centroids.push((speaker, c));
        }
        Ok(SelectionPool { centroids, dim: pool.dim() })
    }

    pub fn num_speakers(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Speaker ids of the `n` centroids farthest (cosine distance) from `source`,
    /// farthest first; ties go to the smaller id.
    pub fn farthest(&self, source: &[f64], n: usize) -> Result<Vec<usize>> {
        if source.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: source.len() });
        }
        if n > self.centroids.len() {
            return Err(Error::PoolTooSmall { available: self.centroids.len(), required: n });
        }
        let mut ranked = self
            .centroids
            .iter()
            .enumerate()
            .map(|(i, (_, c))| Ok((1.0 - cosine(source, c)?, i)))
            .collect::<Result<Vec<_>>>()?;
        // centroids are id-sorted, so index order is id order
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(ranked.into_iter().take(n).map(|(_, i)| i).collect())
    }

    pub fn pseudo_vector(&self, source: &[f64], cfg: &SelectionConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        let far = self.farthest(source, cfg.n_far)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picked: Vec<usize> =
            rand::seq::index::sample(&mut rng, far.len(), cfg.n_pick).into_iter().map(|k| far[k]).collect();
        picked.sort_unstable();
        let mut out = vec![0.0; self.dim];
        for &i in &picked {
            axpy(1.0, &self.centroids[i].1, &mut out);
        }
        out.iter_mut().for_each(|x| *x /= picked.len() as f64);
        Ok(out)
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pick == 0 || self.n_pick > self.n_far {
            return Err(Error::InvalidConfig(format!(
                "selection needs 1 <= n_pick ({}) <= n_far ({})",
                self.n_pick, self.n_far
            )));
        }
        Ok(())
    }

    /// Per-speaker seed so draws do not depend on speaker processing order.
    pub fn for_speaker(&self, speaker: &str) -> SelectionConfig {
        SelectionConfig { seed: mix_seed(self.seed, speaker), ..self.clone() }
    }
}

/// FNV-1a over the id, folded into the seed with a splitmix64 finalizer.
pub fn mix_seed(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut z = seed ^ h.rotate_left(17);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn select_anonymize(pool: &EmbeddingPool, source_centroid: &[f64], cfg: &SelectionConfig) -> Result<Vec<f64>> {
    SelectionPool::new(pool)?.pseudo_vector(source_centroid, cfg)
}
