//! Continuous bag-of-words embeddings trained with negative sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::vocab::{Vocabulary, RESERVED};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbowConfig {
    pub embedding_dim: usize,
    /// Maximum context radius; each position draws its radius from `1..=window`.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig {
            embedding_dim: 128,
            window: 5,
            negatives: 5,
            epochs: 20,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

impl CbowConfig {
    pub fn validate(&self, d_model: usize) -> Result<()> {
        if self.embedding_dim != d_model {
            return Err(Error::Config(format!(
                "CBOW embedding_dim {} must equal d_model {d_model}",
                self.embedding_dim
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("CBOW window must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("CBOW learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CbowOutput {
    /// Input-side vectors, `vocab.len() × embedding_dim`, row-major.
    pub embeddings: Vec<f32>,
    pub dim: usize,
    /// Mean negative-sampling loss per prediction, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

impl CbowOutput {
    pub fn row(&self, id: usize) -> &[f32] {
        &self.embeddings[id * self.dim..(id + 1) * self.dim]
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Trains CBOW on `corpus` (tokenized captions). Tokens mapping to reserved
/// ids are skipped; reserved rows keep their N(0, 0.01²) initialization.
pub fn train_cbow<S: AsRef<str>>(
    corpus: &[Vec<S>],
    vocab: &Vocabulary,
    config: &CbowConfig,
) -> Result<CbowOutput> {
    config.validate(config.embedding_dim)?;
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|c| {
            vocab
                .encode(c)
                .into_iter()
                .filter(|&id| id >= RESERVED)
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect();
    if sentences.is_empty() {
        return Err(Error::Empty("CBOW corpus has no in-vocabulary tokens".into()));
    }

    let dim = config.embedding_dim;
    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0f32, 0.01).unwrap();
    let mut input = vec![0f32; v * dim];
    for id in 0..v {
        for j in 0..dim {
            input[id * dim + j] = if id < RESERVED {
                normal.sample(&mut rng)
            } else {
                (rng.random::<f32>() - 0.5) / dim as f32
            };
        }
    }
    let mut output = vec![0f32; v * dim];

    // unigram^0.75 table over ordinary tokens
    let mut counts = vec![0f64; v];
    for s in &sentences {
        for &id in s {
            counts[id] += 1.0;
        }
    }
    let mut cumulative = Vec::with_capacity(v);
    let mut acc = 0.0;
    for c in &counts {
        acc += c.powf(0.75);
        cumulative.push(acc);
    }
    let sample_negative = |rng: &mut ChaCha8Rng| -> usize {
        let r = rng.random::<f64>() * acc;
        cumulative.partition_point(|&c| c <= r).min(v - 1)
    };

    let words_per_epoch: usize = sentences.iter().map(Vec::len).sum();
    let total = (words_per_epoch * config.epochs).max(1) as f64;
    let mut processed = 0usize;
    let mut hidden = vec![0f32; dim];
    let mut err = vec![0f32; dim];
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        let mut loss = 0f64;
        let mut predictions = 0usize;
        for s in &sentences {
            for pos in 0..s.len() {
                let lr = (config.learning_rate * (1.0 - processed as f64 / total).max(1e-4)) as f32;
                processed += 1;
                let radius = rng.random_range(1..=config.window);
                let lo = pos.saturating_sub(radius);
                let hi = (pos + radius).min(s.len() - 1);
                let n_ctx = hi - lo;
                if n_ctx == 0 {
                    continue;
                }
                hidden.iter_mut().for_each(|h| *h = 0.0);
                for (c, &id) in s[lo..=hi].iter().enumerate() {
                    if lo + c == pos {
                        continue;
                    }
                    for j in 0..dim {
                        hidden[j] += input[id * dim + j];
                    }
                }
                hidden.iter_mut().for_each(|h| *h /= n_ctx as f32);
                err.iter_mut().for_each(|e| *e = 0.0);
                let center = s[pos];
                for k in 0..=config.negatives {
                    let (target, label) = if k == 0 {
                        (center, 1.0f32)
                    } else {
                        let t = sample_negative(&mut rng);
                        if t == center {
                            continue;
                        }
                        (t, 0.0)
                    };
                    let row = &mut output[target * dim..(target + 1) * dim];
                    let f: f32 = row.iter().zip(&hidden).map(|(a, b)| a * b).sum();
                    let p = sigmoid(f);
                    let lp = if label > 0.5 { p } else { 1.0 - p };
                    loss -= (lp.max(1e-7) as f64).ln();
                    let g = (label - p) * lr;
                    for j in 0..dim {
                        err[j] += g * row[j];
                        row[j] += g * hidden[j];
                    }
                }
                predictions += 1;
                for (c, &id) in s[lo..=hi].iter().enumerate() {
                    if lo + c == pos {
                        continue;
                    }
                    for j in 0..dim {
                        input[id * dim + j] += err[j];
                    }
                }
            }
        }
        epoch_losses.push(loss / predictions.max(1) as f64);
    }

    Ok(CbowOutput {
        embeddings: input,
        dim,
        epoch_losses,
    })
}
