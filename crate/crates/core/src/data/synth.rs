//! Synthetic audiovisual captioning task.
//!
//! Every clip holds 1 to `max_events` events, each a (noun, verb) pair laid
//! out over contiguous frame segments. The audio stream carries event
//! identity on the active frames. What the secondary stream carries depends
//! on [`SecondaryMode`]; in semantic mode it is the only source of the
//! clip's modifier word.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::fseq::{write_fseq, FeatureSequence, Modality};
use super::manifest::{ClipRecord, Manifest, Split, EVAL_REFERENCES};
use crate::error::{Error, Result};
use crate::textproc::tokenize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecondaryMode {
    /// Whole-clip pattern encoding the clip's nouns and its modifier.
    Semantic,
    /// Event onset/offset indicators only.
    Temporal,
    /// Standard normal noise, independent of everything else.
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NounEntry {
    pub noun: String,
    pub verbs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_eval: usize,
    pub frames: usize,
    pub d_audio: usize,
    pub d_secondary: usize,
    pub secondary_mode: SecondaryMode,
    pub nouns: Vec<NounEntry>,
    pub modifiers: Vec<String>,
    pub max_events: usize,
    pub noise: f64,
    pub seed: u64,
}

const CONNECTORS: [&str; EVAL_REFERENCES] = ["then", "and then", "after that", "next", "and later"];

fn default_nouns() -> Vec<NounEntry> {
    [
        ("dog", ["barks", "growls"]),
        ("cat", ["meows", "purrs"]),
        ("car", ["passes", "honks"]),
        ("bird", ["sings", "chirps"]),
        ("man", ["speaks", "laughs"]),
        ("door", ["slams", "creaks"]),
        ("baby", ["cries", "giggles"]),
        ("bell", ["rings", "chimes"]),
    ]
    .iter()
    .map(|(n, vs)| NounEntry {
        noun: n.to_string(),
        verbs: vs.iter().map(|v| v.to_string()).collect(),
    })
    .collect()
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        SyntheticTaskConfig {
            n_train: 500,
            n_val: 50,
            n_eval: 100,
            frames: 16,
            d_audio: 32,
            d_secondary: 32,
            secondary_mode: SecondaryMode::Semantic,
            nouns: default_nouns(),
            modifiers: ["red", "blue", "green", "yellow"].map(String::from).to_vec(),
            max_events: 3,
            noise: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticTaskConfig {
    fn event_count(&self) -> usize {
        self.nouns.iter().map(|n| n.verbs.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_train + self.n_val + self.n_eval == 0 {
            return bad("synthetic task needs at least one clip".into());
        }
        if self.frames == 0 || self.d_audio == 0 || self.d_secondary == 0 {
            return bad("frames and feature widths must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise level must be finite and non-negative, got {}", self.noise));
        }
        if self.max_events == 0 || self.max_events > self.frames {
            return bad(format!(
                "max_events must be in 1..={} (one frame per event), got {}",
                self.frames, self.max_events
            ));
        }
        if self.nouns.is_empty() || self.modifiers.is_empty() {
            return bad("grammar needs at least one noun and one modifier".into());
        }
        if self.nouns.iter().any(|n| n.verbs.is_empty()) {
            return bad("every noun needs at least one verb".into());
        }
        if self.event_count() < 2 {
            return bad("grammar must define at least two distinct events".into());
        }
        let mut words = HashSet::new();
        let all = self
            .nouns
            .iter()
            .flat_map(|n| std::iter::once(&n.noun).chain(&n.verbs))
            .chain(&self.modifiers);
        for w in all {
            if tokenize(w) != [w.as_str()] {
                return bad(format!("grammar word {w:?} is not a single normalized token"));
            }
            if !words.insert(w.as_str()) {
                return bad(format!("grammar word {w:?} used twice"));
            }
        }
        if self.event_count() > self.d_audio {
            return bad(format!(
                "{} event classes need d_audio >= {0}, got {}",
                self.event_count(),
                self.d_audio
            ));
        }
        match self.secondary_mode {
            SecondaryMode::Semantic if self.nouns.len() + self.modifiers.len() > self.d_secondary => {
                bad(format!(
                    "semantic mode needs d_secondary >= {}",
                    self.nouns.len() + self.modifiers.len()
                ))
            }
            SecondaryMode::Temporal if self.d_secondary < 2 => {
                bad("temporal mode needs d_secondary >= 2".into())
            }
            _ => Ok(()),
        }
    }
}

/// Latent content of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipContent {
    /// (noun index, verb index) in temporal order.
    pub events: Vec<(usize, usize)>,
    /// Half-open frame ranges per event.
    pub segments: Vec<(usize, usize)>,
    pub modifier: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticClip {
    pub record: ClipRecord,
    pub content: ClipContent,
    pub audio: FeatureSequence,
    pub secondary: FeatureSequence,
}

/// `n` orthogonal rows of length `d`, each with norm sqrt(d).
fn orthogonal_patterns(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        let s = (d as f64).sqrt() / norm;
        v.iter_mut().for_each(|a| *a *= s);
        rows.push(v);
    }
    rows
}

struct Generator<'a> {
    cfg: &'a SyntheticTaskConfig,
    event_patterns: Vec<Vec<f64>>,
    noun_patterns: Vec<Vec<f64>>,
    modifier_patterns: Vec<Vec<f64>>,
    /// Event index offset of each noun's first verb.
    event_base: Vec<usize>,
    structure: ChaCha8Rng,
    audio_noise: ChaCha8Rng,
    secondary_noise: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl<'a> Generator<'a> {
    fn new(cfg: &'a SyntheticTaskConfig) -> Self {
        let mut pat = stream(cfg.seed, 0);
        let event_patterns = orthogonal_patterns(cfg.event_count(), cfg.d_audio, &mut pat);
        let (noun_patterns, modifier_patterns) = if cfg.secondary_mode == SecondaryMode::Semantic {
            let mut all = orthogonal_patterns(
                cfg.nouns.len() + cfg.modifiers.len(),
                cfg.d_secondary,
                &mut pat,
            );
            let mods = all.split_off(cfg.nouns.len());
            (all, mods)
        } else {
            (Vec::new(), Vec::new())
        };
        let mut event_base = Vec::with_capacity(cfg.nouns.len());
        let mut acc = 0;
        for n in &cfg.nouns {
            event_base.push(acc);
            acc += n.verbs.len();
        }
        Generator {
            cfg,
            event_patterns,
            noun_patterns,
            modifier_patterns,
            event_base,
            structure: stream(cfg.seed, 1),
            audio_noise: stream(cfg.seed, 2),
            secondary_noise: stream(cfg.seed, 3),
        }
    }

    fn content(&mut self) -> ClipContent {
        let cfg = self.cfg;
        let rng = &mut self.structure;
        let n = rng.random_range(1..=cfg.max_events);
        let mut events: Vec<(usize, usize)> = Vec::with_capacity(n);
        while events.len() < n {
            let noun = rng.random_range(0..cfg.nouns.len());
            let verb = rng.random_range(0..cfg.nouns[noun].verbs.len());
            if events.last() != Some(&(noun, verb)) {
                events.push((noun, verb));
            }
        }
        let cuts: Vec<usize> = (1..cfg.frames).collect();
        let mut chosen: Vec<usize> = cuts.choose_multiple(rng, n - 1).copied().collect();
        chosen.sort_unstable();
        let mut segments = Vec::with_capacity(n);
        let mut start = 0;
        for c in chosen.into_iter().chain(std::iter::once(cfg.frames)) {
            segments.push((start, c));
            start = c;
        }
        let modifier = rng.random_range(0..cfg.modifiers.len());
        ClipContent {
            events,
            segments,
            modifier,
        }
    }

    fn audio(&mut self, c: &ClipContent) -> Vec<f32> {
        let (t, d) = (self.cfg.frames, self.cfg.d_audio);
        let mut out = vec![0f64; t * d];
        for (&(noun, verb), &(a, b)) in c.events.iter().zip(&c.segments) {
            let p = &self.event_patterns[self.event_base[noun] + verb];
            for f in a..b {
                out[f * d..(f + 1) * d].copy_from_slice(p);
            }
        }
        let sigma = self.cfg.noise;
        for v in &mut out {
            let z: f64 = StandardNormal.sample(&mut self.audio_noise);
            *v += sigma * z;
        }
        out.into_iter().map(|v| v as f32).collect()
    }

    fn secondary(&mut self, c: &ClipContent) -> Vec<f32> {
        let (t, d) = (self.cfg.frames, self.cfg.d_secondary);
        let sigma = self.cfg.noise;
        let mut out = vec![0f64; t * d];
        match self.cfg.secondary_mode {
            SecondaryMode::Semantic => {
                let mut base = self.modifier_patterns[c.modifier].clone();
                let nouns: HashSet<usize> = c.events.iter().map(|e| e.0).collect();
                let mut nouns: Vec<usize> = nouns.into_iter().collect();
                nouns.sort_unstable();
                for n in nouns {
                    base.iter_mut()
                        .zip(&self.noun_patterns[n])
                        .for_each(|(a, b)| *a += b);
                }
                for f in 0..t {
                    out[f * d..(f + 1) * d].copy_from_slice(&base);
                }
                self.add_noise(&mut out, sigma);
            }
            SecondaryMode::Temporal => {
                let level = (d as f64).sqrt();
                for &(a, b) in &c.segments {
                    out[a * d] = level;
                    out[(b - 1) * d + 1] = level;
                }
                self.add_noise(&mut out, sigma);
            }
            SecondaryMode::Noise => self.add_noise(&mut out, 1.0),
        }
        out.into_iter().map(|v| v as f32).collect()
    }

    fn add_noise(&mut self, out: &mut [f64], sigma: f64) {
        for v in out {
            let z: f64 = StandardNormal.sample(&mut self.secondary_noise);
            *v += sigma * z;
        }
    }

    fn caption(&self, c: &ClipContent, variant: usize) -> String {
        let cfg = self.cfg;
        let mut words: Vec<&str> = Vec::new();
        for (i, &(noun, verb)) in c.events.iter().enumerate() {
            if i == 0 {
                words.push("a");
                words.push(&cfg.modifiers[c.modifier]);
            } else {
                words.extend(CONNECTORS[variant].split(' '));
                words.push(if variant.is_multiple_of(2) { "a" } else { "the" });
            }
            words.push(&cfg.nouns[noun].noun);
            words.push(&cfg.nouns[noun].verbs[verb]);
        }
        words.join(" ")
    }
}

fn clip_name(split: Split, i: usize) -> String {
    let tag = match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Eval => "eval",
    };
    format!("{tag}_{i:05}")
}

/// Generates every clip in memory. Training clips get the canonical caption
/// only; validation and evaluation clips get five reference variants with
/// the canonical one first.
pub fn synthesize(cfg: &SyntheticTaskConfig) -> Result<Vec<SyntheticClip>> {
    cfg.validate()?;
    let mut g = Generator::new(cfg);
    let mut clips = Vec::with_capacity(cfg.n_train + cfg.n_val + cfg.n_eval);
    for (split, count) in [(Split::Train, cfg.n_train), (Split::Val, cfg.n_val), (Split::Eval, cfg.n_eval)] {
        for i in 0..count {
            let id = clip_name(split, i);
            let content = g.content();
            let audio = g.audio(&content);
            let secondary = g.secondary(&content);
            let n_caps = if split == Split::Train { 1 } else { EVAL_REFERENCES };
            let captions = (0..n_caps).map(|v| g.caption(&content, v)).collect();
            let record = ClipRecord {
                clip_id: id.clone(),
                audio: PathBuf::from("audio").join(format!("{id}.fseq")),
                secondary: PathBuf::from("secondary").join(format!("{id}.fseq")),
                captions,
                split,
            };
            clips.push(SyntheticClip {
                audio: FeatureSequence::new(&id, Modality::Audio, cfg.frames, cfg.d_audio, audio)?,
                secondary: FeatureSequence::new(&id, Modality::Visual, cfg.frames, cfg.d_secondary, secondary)?,
                record,
                content,
            });
        }
    }
    Ok(clips)
}

/// Writes feature files under `out_dir/{audio,secondary}/` and the manifest
/// to `out_dir/manifest.jsonl`.
pub fn generate_synthetic_dataset(cfg: &SyntheticTaskConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    let clips = synthesize(cfg)?;
    for c in &clips {
        write_fseq(out_dir.join(&c.record.audio), &c.audio)?;
        write_fseq(out_dir.join(&c.record.secondary), &c.secondary)?;
    }
    let manifest = Manifest::new(clips.into_iter().map(|c| c.record).collect(), out_dir)?;
    manifest.save(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
