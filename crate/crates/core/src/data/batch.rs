use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::fseq::{read_fseq, FeatureSequence};
use super::manifest::Manifest;
use super::synth::SyntheticClip;
use crate::error::{Error, Result};
use crate::textproc::{tokenize, Vocabulary, EOS, PAD, SOS};

/// Feature streams and references of one clip, held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipData {
    pub clip_id: String,
    pub audio: FeatureSequence,
    pub secondary: FeatureSequence,
    /// Tokenized reference captions.
    pub references: Vec<Vec<String>>,
}

/// One teacher-forcing example: a clip paired with one of its captions.
#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub clip: usize,
    /// `sos w1 .. wn eos`.
    pub tokens: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub clips: Vec<ClipData>,
    pub items: Vec<Item>,
}

/// Wraps a caption in sos/eos, keeping at most `max_len - 1` words so the
/// decoder input (`sos w1 .. wn`) fits in `max_len` positions.
pub fn encode_caption(vocab: &Vocabulary, caption: &[String], max_len: usize) -> Vec<usize> {
    let keep = caption.len().min(max_len.saturating_sub(1));
    let mut ids = Vec::with_capacity(keep + 2);
    ids.push(SOS);
    ids.extend(vocab.encode(&caption[..keep]));
    ids.push(EOS);
    ids
}

impl Dataset {
    pub fn from_clips(clips: Vec<ClipData>, vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Empty("dataset has no clips".into()));
        }
        let (da, ds) = (clips[0].audio.width(), clips[0].secondary.width());
        let mut items = Vec::new();
        for (i, c) in clips.iter().enumerate() {
            if c.audio.width() != da || c.secondary.width() != ds {
                return Err(Error::Clip {
                    clip_id: c.clip_id.clone(),
                    msg: format!(
                        "feature widths {}/{} differ from {da}/{ds}",
                        c.audio.width(),
                        c.secondary.width()
                    ),
                });
            }
            for r in &c.references {
                items.push(Item {
                    clip: i,
                    tokens: encode_caption(vocab, r, max_len),
                });
            }
        }
        Ok(Dataset { clips, items })
    }

    /// Reads every feature file named by `manifest`.
    pub fn load(manifest: &Manifest, vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        let mut clips = Vec::with_capacity(manifest.len());
        for r in &manifest.records {
            let read = |p: &std::path::Path| {
                read_fseq(manifest.resolve(p)).map_err(|e| Error::Clip {
                    clip_id: r.clip_id.clone(),
                    msg: e.to_string(),
                })
            };
            clips.push(ClipData {
                clip_id: r.clip_id.clone(),
                audio: read(&r.audio)?,
                secondary: read(&r.secondary)?,
                references: r.captions.iter().map(|c| tokenize(c)).collect(),
            });
        }
        Self::from_clips(clips, vocab, max_len)
    }

    pub fn from_synthetic<'a>(
        clips: impl IntoIterator<Item = &'a SyntheticClip>,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Self> {
        let clips = clips
            .into_iter()
            .map(|c| ClipData {
                clip_id: c.record.clip_id.clone(),
                audio: c.audio.clone(),
                secondary: c.secondary.clone(),
                references: c.record.captions.iter().map(|s| tokenize(s)).collect(),
            })
            .collect();
        Self::from_clips(clips, vocab, max_len)
    }

    pub fn audio_width(&self) -> usize {
        self.clips[0].audio.width()
    }

    pub fn secondary_width(&self) -> usize {
        self.clips[0].secondary.width()
    }

    /// Builds a padded batch from item indices.
    pub fn collate(&self, items: &[usize]) -> Batch {
        let b = items.len();
        let clips: Vec<&ClipData> = items.iter().map(|&i| &self.clips[self.items[i].clip]).collect();
        let audio = PaddedFeatures::stack(clips.iter().map(|c| &c.audio));
        let secondary = PaddedFeatures::stack(clips.iter().map(|c| &c.secondary));
        let seq_len = items.iter().map(|&i| self.items[i].tokens.len()).max().unwrap_or(0);
        let mut tokens = vec![PAD; b * seq_len];
        let mut token_lens = Vec::with_capacity(b);
        for (row, &i) in items.iter().enumerate() {
            let t = &self.items[i].tokens;
            tokens[row * seq_len..row * seq_len + t.len()].copy_from_slice(t);
            token_lens.push(t.len());
        }
        Batch {
            item_ids: items.to_vec(),
            clip_ids: clips.iter().map(|c| c.clip_id.clone()).collect(),
            audio,
            secondary,
            tokens,
            token_lens,
            seq_len,
        }
    }
}

/// Zero-padded `[B, frames, width]` stack with per-item valid lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedFeatures {
    pub values: Vec<f32>,
    pub lens: Vec<usize>,
    pub frames: usize,
    pub width: usize,
}

impl PaddedFeatures {
    pub fn stack<'a>(seqs: impl Iterator<Item = &'a FeatureSequence> + Clone) -> Self {
        let frames = seqs.clone().map(|s| s.frames()).max().unwrap_or(0);
        let width = seqs.clone().next().map_or(0, |s| s.width());
        let mut values = Vec::new();
        let mut lens = Vec::new();
        for s in seqs {
            values.extend_from_slice(s.values());
            values.resize(values.len() + (frames - s.frames()) * width, 0.0);
            lens.push(s.frames());
        }
        PaddedFeatures {
            values,
            lens,
            frames,
            width,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.lens.len()
    }

    /// `[B, frames]`, true on valid frames.
    pub fn mask(&self) -> Vec<bool> {
        self.lens
            .iter()
            .flat_map(|&l| (0..self.frames).map(move |t| t < l))
            .collect()
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.frames * self.width;
        &mut self.values[b * n..(b + 1) * n]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub item_ids: Vec<usize>,
    pub clip_ids: Vec<String>,
    pub audio: PaddedFeatures,
    pub secondary: PaddedFeatures,
    /// `[B, seq_len]` padded with `PAD`.
    pub tokens: Vec<usize>,
    pub token_lens: Vec<usize>,
    pub seq_len: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.token_lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_lens.is_empty()
    }

    /// Decoder length: one less than the padded token length.
    pub fn steps(&self) -> usize {
        self.seq_len.saturating_sub(1)
    }

    fn shifted(&self, offset: usize) -> Vec<usize> {
        let l = self.steps();
        (0..self.len())
            .flat_map(|b| self.tokens[b * self.seq_len + offset..b * self.seq_len + offset + l].iter().copied())
            .collect()
    }

    /// `[B, steps]` decoder inputs (tokens without the last position).
    pub fn inputs(&self) -> Vec<usize> {
        self.shifted(0)
    }

    /// `[B, steps]` targets (tokens shifted left by one).
    pub fn targets(&self) -> Vec<usize> {
        self.shifted(1)
    }

    /// `[B, steps]`, true where the decoder input is a real token.
    pub fn token_mask(&self) -> Vec<bool> {
        let l = self.steps();
        self.token_lens
            .iter()
            .flat_map(|&n| (0..l).map(move |t| t + 1 < n))
            .collect()
    }
}

/// Item indices grouped into batches. With `shuffle = Some((seed, epoch))`
/// the order is a permutation that depends only on seed and epoch.
pub fn batch_order(n: usize, batch_size: usize, shuffle: Option<(u64, u64)>) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some((seed, epoch)) = shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        idx.shuffle(&mut rng);
    }
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

pub fn make_batches(
    dataset: &Dataset,
    batch_size: usize,
    shuffle: Option<(u64, u64)>,
) -> Vec<Batch> {
    batch_order(dataset.items.len(), batch_size, shuffle)
        .iter()
        .map(|ix| dataset.collate(ix))
        .collect()
}
