//! Experiment orchestration: data generation, per-seed training, the
//! validation mixing-weight sweep, evaluation and multi-seed aggregation.

mod aggregate;
mod config;

pub use aggregate::{curve, curve_csv, mean_sd, table, CurveRow, Table, TableRow};
pub use config::{default_grid, validate_grid, ExperimentConfig, MetricSettings, SELECTION_METRICS};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic_dataset, ClipData, Dataset, Manifest, Split};
use crate::decoding::{decode_clip, DecodeConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_pairs, read_spice, write_candidates, CandidateRecord, CorpusScores, EvalPair, MetricOptions,
    MetricReport, SynonymTable,
};
use crate::model::{MixingWeight, MultiEncoderTransformer};
use crate::textproc::{tokenize, train_cbow, Vocabulary};
use crate::training::{fit, TrainHistory};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const MODEL_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.json";
pub const SWEEP_FILE: &str = "sweep.json";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const VISION_ONLY_REPORT: &str = "vision_only_report.json";
pub const CURVE_FILE: &str = "curve.csv";

/// Beam-decodes every clip at a fixed mixing weight.
pub fn decode_clips(
    model: &MultiEncoderTransformer<f32>,
    vocab: &Vocabulary,
    clips: &[ClipData],
    mix: MixingWeight,
    cfg: &DecodeConfig,
) -> Result<Vec<CandidateRecord>> {
    clips
        .iter()
        .map(|c| {
            let h = decode_clip(model, &c.audio, &c.secondary, mix, cfg).map_err(|e| Error::Clip {
                clip_id: c.clip_id.clone(),
                msg: e.to_string(),
            })?;
            Ok(CandidateRecord {
                clip_id: c.clip_id.clone(),
                caption: vocab.decode(&h.tokens).join(" "),
            })
        })
        .collect()
}

/// Scores candidates (in clip order) against the clips' references.
pub fn score_candidates(
    candidates: &[CandidateRecord],
    clips: &[ClipData],
    opts: &MetricOptions,
) -> Result<MetricReport> {
    let pairs: Vec<EvalPair> = clips
        .iter()
        .zip(candidates)
        .map(|(c, cand)| EvalPair {
            clip_id: c.clip_id.clone(),
            candidate: tokenize(&cand.caption),
            references: c.references.clone(),
        })
        .collect();
    evaluate_pairs(&pairs, opts)
}

/// The most frequent reference caption among `train`, ties broken by the
/// lexicographically smallest text.
pub fn prior_caption(train: &[ClipData]) -> Option<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for c in train {
        for r in &c.references {
            *counts.entry(r.join(" ")).or_insert(0) += 1;
        }
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|(_, n)| *n == best).map(|(s, _)| s)
}

/// Scores the prior caption as the candidate for every clip.
pub fn prior_baseline(train: &[ClipData], clips: &[ClipData], opts: &MetricOptions) -> Result<MetricReport> {
    let caption = prior_caption(train).ok_or_else(|| Error::Empty("no training captions".into()))?;
    let cands: Vec<CandidateRecord> = clips
        .iter()
        .map(|c| CandidateRecord {
            clip_id: c.clip_id.clone(),
            caption: caption.clone(),
        })
        .collect();
    score_candidates(&cands, clips, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub scores: CorpusScores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub selection_metric: String,
    pub chosen_lambda: f64,
    pub chosen_score: f64,
    pub rows: Vec<SweepRow>,
    /// Metrics whose own best weight lies more than 0.15 from the choice.
    pub disagreements: Vec<String>,
}

/// Position of the maximum, preferring the later (larger-weight) entry on ties.
fn argmax_last(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v >= values[best] {
            best = i;
        }
    }
    best
}

impl SweepResult {
    /// Picks the selection metric's argmax over `rows`.
    pub fn select(rows: Vec<SweepRow>, metric: &str) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("mixing-weight grid is empty".into()));
        }
        let column = |key: &str| -> Result<Vec<f64>> {
            rows.iter()
                .map(|r| {
                    r.scores
                        .get(key)
                        .ok_or_else(|| Error::Config(format!("metric {key:?} not in sweep scores")))
                })
                .collect()
        };
        let chosen = argmax_last(&column(metric)?);
        let lambda = rows[chosen].lambda;
        let mut disagreements = Vec::new();
        for key in SELECTION_METRICS.iter().filter(|k| **k != metric) {
            let other = rows[argmax_last(&column(key)?)].lambda;
            if (other - lambda).abs() > 0.15 + 1e-9 {
                log::warn!("{key} peaks at lambda {other}, selection on {metric} chose {lambda}");
                disagreements.push(format!("{key}: best lambda {other}"));
            }
        }
        Ok(SweepResult {
            selection_metric: metric.to_string(),
            chosen_lambda: lambda,
            chosen_score: column(metric)?[chosen],
            rows,
            disagreements,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("sweep serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,bleu4,meteor,rouge_l,cider_d\n");
        for r in &self.rows {
            let c = &r.scores;
            s.push_str(&format!("{},{},{},{},{}\n", r.lambda, c.bleu4, c.meteor, c.rouge_l, c.cider_d));
        }
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Decodes `clips` at each grid weight and scores them.
pub fn sweep_clips(
    model: &MultiEncoderTransformer<f32>,
    vocab: &Vocabulary,
    clips: &[ClipData],
    grid: &[f64],
    metric: &str,
    decode: &DecodeConfig,
    opts: &MetricOptions,
) -> Result<SweepResult> {
    validate_grid(grid)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let cands = decode_clips(model, vocab, clips, MixingWeight::new(lambda)?, decode)?;
        let scores = score_candidates(&cands, clips, opts)?.corpus;
        log::info!("sweep lambda {lambda}: {metric} {:.4}", scores.get(metric).unwrap_or(f64::NAN));
        rows.push(SweepRow { lambda, scores });
    }
    SweepResult::select(rows, metric)
}

/// A trained run loaded from its directory.
pub struct TrainedRun {
    pub dir: PathBuf,
    pub model: MultiEncoderTransformer<f32>,
    pub vocab: Vocabulary,
}

impl TrainedRun {
    pub fn load(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        Ok(TrainedRun {
            model: MultiEncoderTransformer::load(dir.join(MODEL_FILE))?,
            vocab: Vocabulary::load(dir.join(VOCAB_FILE))?,
            dir,
        })
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads split clips from the manifest and drives every harness command.
pub struct Experiment {
    pub config: ExperimentConfig,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Experiment { config })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(ExperimentConfig::load(path)?)
    }

    /// Writes the synthetic task next to the configured manifest.
    pub fn gen_data(&self) -> Result<Manifest> {
        let dir = self.config.manifest.parent().unwrap_or(Path::new("."));
        let manifest = generate_synthetic_dataset(&self.config.data, dir)?;
        let name = self.config.manifest.file_name().unwrap_or_default();
        if name != "manifest.jsonl" {
            manifest.save(&self.config.manifest)?;
        }
        Ok(manifest)
    }

    fn manifest(&self) -> Result<Manifest> {
        Manifest::load(&self.config.manifest)
    }

    fn split(&self, split: Split, vocab: &Vocabulary) -> Result<Dataset> {
        let m = self.manifest()?.split(split);
        if m.is_empty() {
            return Err(Error::Empty(format!("manifest has no {split:?} clips")));
        }
        Dataset::load(&m, vocab, self.config.model.max_caption_len)
    }

    /// Clips of one split; references are read from the manifest.
    pub fn clips(&self, split: Split, vocab: &Vocabulary) -> Result<Vec<ClipData>> {
        Ok(self.split(split, vocab)?.clips)
    }

    pub fn metric_options(&self, with_spice: bool) -> Result<MetricOptions> {
        let m = &self.config.metrics;
        Ok(MetricOptions {
            bleu_smoothing: m.bleu_smoothing,
            synonyms: m.synonyms.as_ref().map(SynonymTable::load).transpose()?,
            spice: match (&m.spice, with_spice) {
                (Some(p), true) => Some(read_spice(p)?),
                _ => None,
            },
        })
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.config.run_dir(seed)
    }

    /// Builds the vocabulary from training captions, optionally pretrains
    /// embeddings, and trains one seed into its run directory.
    pub fn train(&self, seed: u64) -> Result<TrainHistory> {
        let dir = self.run_dir(seed);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let manifest = self.manifest()?;
        let train_records = manifest.split(Split::Train);
        let corpus: Vec<Vec<String>> = train_records
            .records
            .iter()
            .flat_map(|r| r.captions.iter().map(|c| tokenize(c)))
            .collect();
        let vocab = Vocabulary::build(&corpus, self.config.vocab_min_count)?;
        let max_len = self.config.model.max_caption_len;
        let train = Dataset::load(&train_records, &vocab, max_len)?;
        let val_records = manifest.split(Split::Val);
        let val = if val_records.is_empty() {
            None
        } else {
            Some(Dataset::load(&val_records, &vocab, max_len)?)
        };

        let mut cfg = self.config.clone();
        cfg.seed = seed;
        cfg.n_seeds = 1;
        cfg.model.vocab_size = vocab.len();
        cfg.model.d_audio_in = train.audio_width();
        cfg.model.d_secondary_in = train.secondary_width();
        cfg.train.seed = seed;
        if let Some(c) = &mut cfg.cbow {
            c.seed = seed;
        }
        vocab.save(dir.join(VOCAB_FILE))?;
        write(&dir.join(CONFIG_FILE), &cfg.to_json())?;

        let mut model = MultiEncoderTransformer::<f32>::new(cfg.model.clone(), seed)?;
        if let Some(c) = &cfg.cbow {
            let emb = train_cbow(&corpus, &vocab, c)?;
            model.load_embeddings(&emb.embeddings, emb.dim)?;
        }
        log::info!("training seed {seed} into {}", dir.display());
        let history = fit(&mut model, &train, val.as_ref(), &cfg.train, Some(&dir), &mut ())?;
        model.save(dir.join(MODEL_FILE))?;
        Ok(history)
    }

    /// Sweeps the mixing weight on the validation split and records the choice.
    pub fn sweep(&self, seed: u64) -> Result<SweepResult> {
        let run = TrainedRun::load(self.run_dir(seed))?;
        let val = self.clips(Split::Val, &run.vocab)?;
        let result = sweep_clips(
            &run.model,
            &run.vocab,
            &val,
            &self.config.grid,
            &self.config.selection_metric,
            &self.config.decode,
            &self.metric_options(false)?,
        )?;
        let path = run.dir.join(SWEEP_FILE);
        write(&path, &result.to_json())?;
        write(&path.with_extension("csv"), &result.to_csv())?;
        Ok(result)
    }

    /// Decodes and scores one split at `lambda`, without writing anything.
    pub fn evaluate(&self, run: &TrainedRun, split: Split, lambda: f64) -> Result<(Vec<CandidateRecord>, MetricReport)> {
        let clips = self.clips(split, &run.vocab)?;
        let cands = decode_clips(&run.model, &run.vocab, &clips, MixingWeight::new(lambda)?, &self.config.decode)?;
        let report = score_candidates(&cands, &clips, &self.metric_options(split == Split::Eval)?)?;
        Ok((cands, report))
    }

    fn eval_to(&self, seed: u64, lambda: f64, report_name: &str) -> Result<MetricReport> {
        let run = TrainedRun::load(self.run_dir(seed))?;
        let (cands, report) = self.evaluate(&run, Split::Eval, lambda)?;
        let path = run.dir.join(report_name);
        report.save(&path)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        write_candidates(run.dir.join(format!("{stem}_candidates.jsonl")), &cands)?;
        Ok(report)
    }

    /// Evaluates at `lambda`, or at the weight chosen by a previous sweep.
    pub fn eval(&self, seed: u64, lambda: Option<f64>) -> Result<MetricReport> {
        let lambda = match lambda {
            Some(l) => l,
            None => SweepResult::load(self.run_dir(seed).join(SWEEP_FILE))?.chosen_lambda,
        };
        self.eval_to(seed, lambda, EVAL_REPORT)
    }

    /// Evaluation with the acoustic stream's weight forced to 0.
    pub fn vision_only(&self, seed: u64) -> Result<MetricReport> {
        self.eval_to(seed, 0.0, VISION_ONLY_REPORT)
    }

    /// CIDEr across seeds at every grid weight on the evaluation split;
    /// writes `curve.csv` under the output directory.
    pub fn curve(&self) -> Result<Vec<CurveRow>> {
        let mut per_seed = Vec::new();
        for seed in self.config.seeds() {
            let run = TrainedRun::load(self.run_dir(seed))?;
            let mut ciders = Vec::with_capacity(self.config.grid.len());
            for &lambda in &self.config.grid {
                ciders.push(self.evaluate(&run, Split::Eval, lambda)?.1.corpus.cider_d);
            }
            per_seed.push(ciders);
        }
        let rows = curve(&self.config.grid, &per_seed)?;
        let out = &self.config.out_dir;
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write(&out.join(CURVE_FILE), &curve_csv(&rows))?;
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(lambda: f64, bleu4: f64, meteor: f64, cider_d: f64) -> SweepRow {
        SweepRow {
            lambda,
            scores: CorpusScores {
                bleu4,
                meteor,
                rouge_l: meteor,
                cider_d,
                spice: None,
                spider: None,
            },
        }
    }

    #[test]
    fn selection_prefers_the_larger_weight_on_ties() {
        let rows = vec![row(0.0, 0.1, 0.3, 1.0), row(0.5, 0.2, 0.3, 1.0), row(1.0, 0.1, 0.2, 0.5)];
        let s = SweepResult::select(rows, "meteor").unwrap();
        assert_eq!(s.chosen_lambda, 0.5);
        assert_eq!(s.chosen_score, 0.3);
        assert!(s.disagreements.is_empty());
        assert_eq!(s.to_csv().lines().count(), 4);
    }

    #[test]
    fn singleton_grid_and_disagreement_warning() {
        let s = SweepResult::select(vec![row(1.0, 0.0, 0.0, 0.0)], "meteor").unwrap();
        assert_eq!(s.chosen_lambda, 1.0);
        let rows = vec![row(0.0, 0.9, 0.1, 2.0), row(1.0, 0.1, 0.5, 1.0)];
        let s = SweepResult::select(rows, "meteor").unwrap();
        assert_eq!(s.chosen_lambda, 1.0);
        assert_eq!(s.disagreements.len(), 2);
        assert!(SweepResult::select(vec![], "meteor").is_err());
        assert!(SweepResult::select(vec![row(1.0, 0.0, 0.0, 0.0)], "spice").is_err());
    }

    #[test]
    fn prior_caption_is_the_most_frequent_with_lexicographic_ties() {
        use crate::data::{FeatureSequence, Modality};
        let clip = |id: &str, caps: &[&str]| ClipData {
            clip_id: id.into(),
            audio: FeatureSequence::new(id, Modality::Audio, 1, 1, vec![0.0]).unwrap(),
            secondary: FeatureSequence::new(id, Modality::Visual, 1, 1, vec![0.0]).unwrap(),
            references: caps.iter().map(|c| tokenize(c)).collect(),
        };
        let train = vec![clip("a", &["b dog", "a cat"]), clip("b", &["b dog", "a cat"]), clip("c", &["z"])];
        assert_eq!(prior_caption(&train).as_deref(), Some("a cat"));
        assert_eq!(prior_caption(&[]), None);
        let rep = prior_baseline(&train, &train, &MetricOptions::default()).unwrap();
        assert_eq!(rep.samples[0].candidate, "a cat");
    }
}
