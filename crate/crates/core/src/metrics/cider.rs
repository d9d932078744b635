use std::collections::{BTreeMap, BTreeSet};

use super::bleu::ngram_counts;
use super::EvalPair;
use crate::error::{Error, Result};

pub const CIDER_SIGMA: f64 = 6.0;
const MAX_N: usize = 4;

type Vector<'a> = BTreeMap<&'a [String], f64>;

struct Weighted<'a> {
    vecs: Vec<Vector<'a>>,
    norms: Vec<f64>,
    len: usize,
}

fn weigh<'a>(tokens: &'a [String], df: &BTreeMap<&[String], usize>, log_n: f64) -> Weighted<'a> {
    let mut vecs = Vec::with_capacity(MAX_N);
    let mut norms = Vec::with_capacity(MAX_N);
    for n in 1..=MAX_N {
        let v: Vector = ngram_counts(tokens, n)
            .into_iter()
            .map(|(g, c)| {
                let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
                (g, c as f64 * (log_n - d.ln()))
            })
            .collect();
        norms.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
        vecs.push(v);
    }
    Weighted {
        vecs,
        norms,
        len: tokens.len(),
    }
}

/// CIDEr-D of every pair, in input order, on a 0–10 scale.
///
/// Per n in 1..=4, n-gram counts are weighted by `ln N − ln max(1, df)`,
/// where `df` counts the clips whose references contain the n-gram. The
/// similarity to each reference is the clipped dot product
/// `Σ min(c, r)·r / (|c|·|r|)` times `exp(−(len_c − len_r)² / 2σ²)`,
/// averaged over n and over references, then multiplied by 10.
pub fn cider_d(pairs: &[EvalPair]) -> Result<Vec<f64>> {
    if pairs.len() < 2 {
        return Err(Error::Contract(format!(
            "CIDEr-D needs at least two clips for document frequencies, got {}",
            pairs.len()
        )));
    }
    let mut df: BTreeMap<&[String], usize> = BTreeMap::new();
    for p in pairs {
        let mut seen: BTreeSet<&[String]> = BTreeSet::new();
        for r in &p.references {
            for n in 1..=MAX_N {
                seen.extend(ngram_counts(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = (pairs.len() as f64).ln();
    let weigh = |tokens| weigh(tokens, &df, log_n);
    let sim = |c: &Weighted, r: &Weighted| -> f64 {
        let delta = c.len as f64 - r.len as f64;
        let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        let mut total = 0.0;
        for n in 0..MAX_N {
            let mut dot = 0.0;
            for (g, &cv) in &c.vecs[n] {
                if let Some(&rv) = r.vecs[n].get(g) {
                    dot += cv.min(rv) * rv;
                }
            }
            if c.norms[n] != 0.0 && r.norms[n] != 0.0 {
                dot /= c.norms[n] * r.norms[n];
            }
            total += dot * penalty;
        }
        total / MAX_N as f64
    };
    Ok(pairs
        .iter()
        .map(|p| {
            let c = weigh(&p.candidate);
            let refs: Vec<Weighted> = p.references.iter().map(|r| weigh(r)).collect();
            // summed in sorted order so reference order cannot change the bits
            let mut sims: Vec<f64> = refs.iter().map(|r| sim(&c, r)).collect();
            sims.sort_by(f64::total_cmp);
            let mean = sims.iter().sum::<f64>() / refs.len().max(1) as f64;
            mean * 10.0
        })
        .collect())
}
