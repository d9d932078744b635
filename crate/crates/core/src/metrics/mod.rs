//! Corpus captioning metrics over candidate/multi-reference pairs.

mod bleu;
mod cider;
mod io;
mod meteor;
mod report;
mod rouge;
mod stem;

pub use bleu::{bleu4, brevity_penalty, closest_ref_len, modified_precision};
pub use cider::{cider_d, CIDER_SIGMA};
pub use io::{parse_candidates, parse_spice, read_candidates, read_spice, write_candidates, CandidateRecord};
pub use meteor::{align, meteor, meteor_single, Alignment, SynonymTable};
pub use report::{CorpusScores, MetricReport, SampleScores, TABLE_COLUMNS};
pub use rouge::{lcs_len, rouge_l, ROUGE_BETA};
pub use stem::porter_stem;

use std::collections::{BTreeMap, BTreeSet};

use crate::data::ClipRecord;
use crate::error::{Error, Result};
use crate::textproc::tokenize;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub clip_id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

#[derive(Clone, Debug, Default)]
pub struct MetricOptions {
    pub bleu_smoothing: bool,
    pub synonyms: Option<SynonymTable>,
    /// Externally computed per-clip SPICE values.
    pub spice: Option<BTreeMap<String, f64>>,
}

/// Mean of CIDEr and SPICE.
pub fn spider(cider: f64, spice: f64) -> f64 {
    (cider + spice) / 2.0
}

/// Scores `pairs` with every metric. Pairs are processed in clip-id order,
/// so the result does not depend on input order.
pub fn evaluate_pairs(pairs: &[EvalPair], opts: &MetricOptions) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("no pairs to evaluate".into()));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    for w in sorted.windows(2) {
        if w[0].clip_id == w[1].clip_id {
            return Err(Error::Clip {
                clip_id: w[0].clip_id.clone(),
                msg: "evaluated twice".into(),
            });
        }
    }
    for p in &sorted {
        if p.references.is_empty() {
            return Err(Error::Clip {
                clip_id: p.clip_id.clone(),
                msg: "no references".into(),
            });
        }
    }
    let spice: Option<Vec<f64>> = match &opts.spice {
        Some(table) => Some(
            sorted
                .iter()
                .map(|p| {
                    table.get(&p.clip_id).copied().ok_or_else(|| Error::Clip {
                        clip_id: p.clip_id.clone(),
                        msg: "missing SPICE value".into(),
                    })
                })
                .collect::<Result<_>>()?,
        ),
        None => None,
    };

    let syn = opts.synonyms.as_ref();
    let ciders = cider_d(&sorted)?;
    let mut samples = Vec::with_capacity(sorted.len());
    for (i, p) in sorted.iter().enumerate() {
        samples.push(SampleScores {
            clip_id: p.clip_id.clone(),
            candidate: p.candidate.join(" "),
            meteor: meteor(&p.candidate, &p.references, syn),
            rouge_l: rouge_l(&p.candidate, &p.references),
            cider_d: ciders[i],
            spice: spice.as_ref().map(|s| s[i]),
        });
    }
    let n = samples.len() as f64;
    let mean = |f: fn(&SampleScores) -> f64| samples.iter().map(f).sum::<f64>() / n;
    let cider = mean(|s| s.cider_d);
    let spice_mean = spice.map(|s| s.iter().sum::<f64>() / n);
    let corpus = CorpusScores {
        bleu4: bleu4(&sorted, opts.bleu_smoothing),
        meteor: mean(|s| s.meteor),
        rouge_l: mean(|s| s.rouge_l),
        cider_d: cider,
        spice: spice_mean,
        spider: spice_mean.map(|s| spider(cider, s)),
    };
    Ok(MetricReport::new(corpus, samples, opts))
}

/// Pairs each record with its candidate caption, tokenizing both sides.
pub fn evaluate_corpus(
    candidates: &[CandidateRecord],
    records: &[ClipRecord],
    opts: &MetricOptions,
) -> Result<MetricReport> {
    let by_id: BTreeMap<&str, &str> = candidates
        .iter()
        .map(|c| (c.clip_id.as_str(), c.caption.as_str()))
        .collect();
    let known: BTreeSet<&str> = records.iter().map(|r| r.clip_id.as_str()).collect();
    if let Some(extra) = by_id.keys().find(|id| !known.contains(*id)) {
        return Err(Error::Clip {
            clip_id: extra.to_string(),
            msg: "candidate for a clip outside the evaluated set".into(),
        });
    }
    let pairs = records
        .iter()
        .map(|r| {
            let caption = by_id.get(r.clip_id.as_str()).ok_or_else(|| Error::Clip {
                clip_id: r.clip_id.clone(),
                msg: "no candidate caption".into(),
            })?;
            Ok(EvalPair {
                clip_id: r.clip_id.clone(),
                candidate: tokenize(caption),
                references: r.captions.iter().map(|c| tokenize(c)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_pairs(&pairs, opts)
}
