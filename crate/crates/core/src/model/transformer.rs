use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{MixingWeight, ModelConfig};
use super::positions::sinusoidal_positions;
use crate::data::{Batch, PaddedFeatures};
use crate::error::{Error, Result};
use crate::tensor::kernels::log_softmax;
use crate::tensor::{NodeId, ParamId, ParamStore, Scalar, Tape};
use crate::textproc::PAD;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Audio,
    Secondary,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Attention {
    pub q: Affine,
    pub k: Affine,
    pub v: Affine,
    pub o: Affine,
}

#[derive(Clone, Debug)]
pub(crate) struct Layer {
    pub norm_self: Norm,
    pub self_attn: Attention,
    pub norm_cross: Norm,
    pub cross_audio: Attention,
    pub cross_secondary: Attention,
    pub norm_ff: Norm,
    pub ff_in: Affine,
    pub ff_out: Affine,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub enc_audio: Affine,
    pub enc_secondary: Affine,
    pub embedding: ParamId,
    pub layers: Vec<Layer>,
    pub final_norm: Norm,
    pub output: Affine,
}

impl Attention {
    fn ids(&self) -> Vec<ParamId> {
        [self.q, self.k, self.v, self.o]
            .iter()
            .flat_map(|a| [a.w, a.b])
            .collect()
    }
}

struct Init<'a, F: Scalar> {
    store: ParamStore<F>,
    rng: &'a mut ChaCha8Rng,
}

impl<F: Scalar> Init<'_, F> {
    /// `[fan_in, fan_out]` weight and bias, both U(±1/sqrt(fan_in)).
    fn affine(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Affine> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<F> {
            (0..n)
                .map(|_| F::of((rand::Rng::random::<f64>(self.rng) * 2.0 - 1.0) * bound))
                .collect()
        };
        let w = draw(fan_in * fan_out);
        let b = draw(fan_out);
        Ok(Affine {
            w: self.store.add(format!("{name}.weight"), &[fan_in, fan_out], w)?,
            b: self.store.add(format!("{name}.bias"), &[fan_out], b)?,
        })
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<Norm> {
        Ok(Norm {
            gain: self.store.add(format!("{name}.gain"), &[d], vec![F::one(); d])?,
            bias: self.store.add(format!("{name}.bias"), &[d], vec![F::zero(); d])?,
        })
    }

    fn attention(&mut self, name: &str, d: usize) -> Result<Attention> {
        Ok(Attention {
            q: self.affine(&format!("{name}.q"), d, d)?,
            k: self.affine(&format!("{name}.k"), d, d)?,
            v: self.affine(&format!("{name}.v"), d, d)?,
            o: self.affine(&format!("{name}.o"), d, d)?,
        })
    }
}

/// Feed-forward encoders per stream, a token embedding with sinusoidal
/// positions, and pre-norm decoder layers whose cross-attention is
/// duplicated per stream and mixed linearly.
#[derive(Clone, Debug)]
pub struct MultiEncoderTransformer<F: Scalar> {
    pub(crate) config: ModelConfig,
    pub(crate) store: ParamStore<F>,
    pub(crate) layout: Layout,
    pub(crate) positions: Vec<F>,
}

/// Encoder outputs and their key masks (`[B, T]`, true on valid frames).
#[derive(Clone, Debug)]
pub struct Encoded {
    pub audio: Option<NodeId>,
    pub secondary: Option<NodeId>,
    pub audio_mask: Vec<bool>,
    pub secondary_mask: Vec<bool>,
    pub audio_frames: usize,
    pub secondary_frames: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct CrossOutput {
    pub audio: Option<NodeId>,
    pub secondary: Option<NodeId>,
    pub mixed: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerTrace {
    /// Normalized decoder state fed to both cross-attention blocks.
    pub cross_input: NodeId,
    pub cross: CrossOutput,
}

#[derive(Clone, Debug)]
pub struct Forward {
    /// `[B, L, V]`.
    pub logits: NodeId,
    pub encoded: Encoded,
    pub layers: Vec<LayerTrace>,
}

fn lens_mask(lens: &[usize], frames: usize) -> Vec<bool> {
    lens.iter()
        .flat_map(|&l| (0..frames).map(move |t| t < l))
        .collect()
}

/// `[B, Lq, Lk]` mask letting every query see the valid keys of its item.
fn broadcast_key_mask(key_mask: &[bool], batch: usize, lq: usize, lk: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(batch * lq * lk);
    for b in 0..batch {
        for _ in 0..lq {
            out.extend_from_slice(&key_mask[b * lk..(b + 1) * lk]);
        }
    }
    out
}

pub(crate) fn causal_mask(batch: usize, l: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(batch * l * l);
    for _ in 0..batch {
        for q in 0..l {
            out.extend((0..l).map(|k| k <= q));
        }
    }
    out
}

impl<F: Scalar> MultiEncoderTransformer<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let mut init = Init {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        let enc_audio = init.affine("encoder_audio", config.d_audio_in, d)?;
        let enc_secondary = init.affine("encoder_secondary", config.d_secondary_in, d)?;
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).unwrap();
        let table: Vec<F> = (0..config.vocab_size * d)
            .map(|_| F::of(normal.sample(init.rng)))
            .collect();
        let embedding = init.store.add("embedding", &[config.vocab_size, d], table)?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let p = format!("layers.{i}");
            layers.push(Layer {
                norm_self: init.norm(&format!("{p}.norm_self"), d)?,
                self_attn: init.attention(&format!("{p}.self_attn"), d)?,
                norm_cross: init.norm(&format!("{p}.norm_cross"), d)?,
                cross_audio: init.attention(&format!("{p}.cross_audio"), d)?,
                cross_secondary: init.attention(&format!("{p}.cross_secondary"), d)?,
                norm_ff: init.norm(&format!("{p}.norm_ff"), d)?,
                ff_in: init.affine(&format!("{p}.ff.in"), d, config.d_ff)?,
                ff_out: init.affine(&format!("{p}.ff.out"), config.d_ff, d)?,
            });
        }
        let final_norm = init.norm("final_norm", d)?;
        let output = init.affine("output", d, config.vocab_size)?;
        let store = init.store;
        let rows = config.max_caption_len.max(1024);
        let positions = sinusoidal_positions::<F>(rows, d)?.into_values();
        Ok(MultiEncoderTransformer {
            config,
            store,
            layout: Layout {
                enc_audio,
                enc_secondary,
                embedding,
                layers,
                final_norm,
                output,
            },
            positions,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    /// Parameters of one layer's cross-attention block for `stream`.
    pub fn cross_attention_params(&self, layer: usize, stream: Stream) -> Vec<ParamId> {
        let l = &self.layout.layers[layer];
        match stream {
            Stream::Audio => l.cross_audio.ids(),
            Stream::Secondary => l.cross_secondary.ids(),
        }
    }

    pub fn encoder_params(&self, stream: Stream) -> Vec<ParamId> {
        let a = match stream {
            Stream::Audio => self.layout.enc_audio,
            Stream::Secondary => self.layout.enc_secondary,
        };
        vec![a.w, a.b]
    }

    /// Copies the same values into a model of another precision.
    pub fn to_precision<G: Scalar>(&self) -> MultiEncoderTransformer<G> {
        let mut store = ParamStore::new();
        for id in self.store.ids() {
            let v = self.store.values(id).iter().map(|x| G::of(x.as_f64())).collect();
            store
                .add(self.store.name(id), self.store.shape(id), v)
                .expect("names are unique in the source store");
        }
        MultiEncoderTransformer {
            config: self.config.clone(),
            store,
            layout: self.layout.clone(),
            positions: self.positions.iter().map(|x| G::of(x.as_f64())).collect(),
        }
    }

    /// Overwrites the token embedding with `rows` (`vocab_size × d_model`),
    /// rescaled so its root-mean-square entry matches the random
    /// initialization (1/sqrt(d_model)).
    pub fn load_embeddings(&mut self, rows: &[f32], dim: usize) -> Result<()> {
        let (v, d) = (self.config.vocab_size, self.config.d_model);
        if dim != d || rows.len() != v * d {
            return Err(Error::Dimension {
                op: "load_embeddings",
                lhs: vec![v, d],
                rhs: vec![rows.len() / dim.max(1), dim],
            });
        }
        let ms = rows.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / rows.len() as f64;
        let target = 1.0 / (d as f64).sqrt();
        let s = if ms > 0.0 { target / ms.sqrt() } else { 1.0 };
        let dst = self.store.values_mut(self.layout.embedding);
        for (o, &x) in dst.iter_mut().zip(rows) {
            *o = F::of(x as f64 * s);
        }
        Ok(())
    }

    fn affine(&self, tape: &mut Tape<F>, x: NodeId, a: Affine) -> Result<NodeId> {
        let w = tape.param(&self.store, a.w);
        let b = tape.param(&self.store, a.b);
        tape.linear(x, w, Some(b))
    }

    fn norm(&self, tape: &mut Tape<F>, x: NodeId, n: Norm) -> Result<NodeId> {
        let g = tape.param(&self.store, n.gain);
        let b = tape.param(&self.store, n.bias);
        tape.layer_norm(x, g, b, F::of(self.config.ln_eps))
    }

    fn drop(&self, tape: &mut Tape<F>, x: NodeId, rng: &mut Option<&mut dyn RngCore>) -> Result<NodeId> {
        match rng {
            Some(r) if self.config.dropout > 0.0 => tape.dropout(x, self.config.dropout, &mut **r),
            _ => Ok(x),
        }
    }

    /// Multi-head scaled dot-product attention of `xq` (`[B, Lq, d]`) over
    /// `xkv` (`[B, Lk, d]`); `allowed` is `[B, Lq, Lk]`.
    pub(crate) fn attention(
        &self,
        tape: &mut Tape<F>,
        p: &Attention,
        xq: NodeId,
        xkv: NodeId,
        allowed: &[bool],
    ) -> Result<NodeId> {
        let h = self.config.n_heads;
        let q = self.affine(tape, xq, p.q)?;
        let k = self.affine(tape, xkv, p.k)?;
        let v = self.affine(tape, xkv, p.v)?;
        let (qh, kh, vh) = (tape.split_heads(q, h)?, tape.split_heads(k, h)?, tape.split_heads(v, h)?);
        let scores = tape.bmm(qh, kh, true)?;
        let scores = tape.scale(scores, F::of(1.0 / (self.config.head_dim() as f64).sqrt()));
        let w = tape.masked_softmax(scores, allowed, h)?;
        let ctx = tape.bmm(w, vh, false)?;
        let merged = tape.merge_heads(ctx, h)?;
        self.affine(tape, merged, p.o)
    }

    fn check_features(&self, f: &PaddedFeatures, stream: Stream) -> Result<()> {
        let want = match stream {
            Stream::Audio => self.config.d_audio_in,
            Stream::Secondary => self.config.d_secondary_in,
        };
        if f.width != want || f.frames == 0 || f.values.len() != f.batch_size() * f.frames * f.width {
            return Err(Error::Dimension {
                op: "encode_stream",
                lhs: vec![f.batch_size(), f.frames, f.width],
                rhs: vec![want],
            });
        }
        Ok(())
    }

    /// Per-frame affine map + ReLU to `[B, T, d_model]`.
    pub fn encode_stream(&self, tape: &mut Tape<F>, f: &PaddedFeatures, stream: Stream) -> Result<NodeId> {
        self.check_features(f, stream)?;
        let x = tape.constant(
            &[f.batch_size(), f.frames, f.width],
            f.values.iter().map(|&v| F::of_f32(v)).collect(),
        )?;
        let a = match stream {
            Stream::Audio => self.layout.enc_audio,
            Stream::Secondary => self.layout.enc_secondary,
        };
        let pre = self.affine(tape, x, a)?;
        let h = tape.relu(pre);
        if !self.config.encoder_positions {
            return Ok(h);
        }
        let pe = self.position_block(tape, f.batch_size(), f.frames)?;
        tape.add(h, pe)
    }

    fn position_block(&self, tape: &mut Tape<F>, batch: usize, len: usize) -> Result<NodeId> {
        let d = self.config.d_model;
        if len * d > self.positions.len() {
            return Err(Error::Length {
                len,
                max: self.positions.len() / d,
            });
        }
        let rows = &self.positions[..len * d];
        let mut v = Vec::with_capacity(batch * len * d);
        for _ in 0..batch {
            v.extend_from_slice(rows);
        }
        tape.constant(&[batch, len, d], v)
    }

    /// Encodes the streams whose mixing weight is non-zero (both when
    /// `force_both`).
    pub fn encode(
        &self,
        tape: &mut Tape<F>,
        audio: &PaddedFeatures,
        secondary: &PaddedFeatures,
        mix: MixingWeight,
        force_both: bool,
    ) -> Result<Encoded> {
        if audio.batch_size() != secondary.batch_size() {
            return Err(Error::Dimension {
                op: "encode",
                lhs: vec![audio.batch_size()],
                rhs: vec![secondary.batch_size()],
            });
        }
        let a = if force_both || mix.audio() > 0.0 {
            Some(self.encode_stream(tape, audio, Stream::Audio)?)
        } else {
            self.check_features(audio, Stream::Audio)?;
            None
        };
        let s = if force_both || mix.secondary() > 0.0 {
            Some(self.encode_stream(tape, secondary, Stream::Secondary)?)
        } else {
            self.check_features(secondary, Stream::Secondary)?;
            None
        };
        Ok(Encoded {
            audio: a,
            secondary: s,
            audio_mask: lens_mask(&audio.lens, audio.frames),
            secondary_mask: lens_mask(&secondary.lens, secondary.frames),
            audio_frames: audio.frames,
            secondary_frames: secondary.frames,
        })
    }

    /// `λ·CrossAttn_audio(x) + (1−λ)·CrossAttn_secondary(x)`. A branch with
    /// zero weight is not evaluated, so λ ∈ {0, 1} reduces exactly to the
    /// single-stream block.
    pub fn dual_cross_attention(
        &self,
        tape: &mut Tape<F>,
        layer: usize,
        x: NodeId,
        enc: &Encoded,
        mix: MixingWeight,
    ) -> Result<CrossOutput> {
        let l = &self.layout.layers[layer];
        let (batch, lq) = (tape.shape(x)[0], tape.shape(x)[1]);
        let branch = |tape: &mut Tape<F>, weight: f64, h: Option<NodeId>, mask: &[bool], frames: usize, p: &Attention| {
            if weight == 0.0 {
                return Ok(None);
            }
            let h = h.ok_or_else(|| Error::Contract("stream with non-zero weight was not encoded".into()))?;
            let allowed = broadcast_key_mask(mask, batch, lq, frames);
            self.attention(tape, p, x, h, &allowed).map(Some)
        };
        let a = branch(tape, mix.audio(), enc.audio, &enc.audio_mask, enc.audio_frames, &l.cross_audio)?;
        let s = branch(
            tape,
            mix.secondary(),
            enc.secondary,
            &enc.secondary_mask,
            enc.secondary_frames,
            &l.cross_secondary,
        )?;
        let mixed = match (a, s) {
            (Some(a), None) => a,
            (None, Some(s)) => s,
            (Some(a), Some(s)) => {
                let wa = tape.scale(a, F::of(mix.audio()));
                let ws = tape.scale(s, F::of(mix.secondary()));
                tape.add(wa, ws)?
            }
            (None, None) => unreachable!("weights sum to one"),
        };
        Ok(CrossOutput {
            audio: a,
            secondary: s,
            mixed,
        })
    }

    /// Full forward pass. `tokens` is `[B, steps]` decoder input ids.
    /// Dropout is active iff `dropout_rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        audio: &PaddedFeatures,
        secondary: &PaddedFeatures,
        tokens: &[usize],
        steps: usize,
        mix: MixingWeight,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Forward> {
        let cfg = &self.config;
        if steps == 0 || steps > cfg.max_caption_len {
            return Err(Error::Length {
                len: steps,
                max: cfg.max_caption_len,
            });
        }
        let batch = audio.batch_size();
        if tokens.len() != batch * steps {
            return Err(Error::Dimension {
                op: "decoder tokens",
                lhs: vec![batch, steps],
                rhs: vec![tokens.len()],
            });
        }
        let encoded = self.encode(tape, audio, secondary, mix, false)?;
        let table = tape.param(&self.store, self.layout.embedding);
        let scale = if cfg.scale_embedding {
            F::of((cfg.d_model as f64).sqrt())
        } else {
            F::one()
        };
        let emb = tape.embedding(table, tokens, &[batch, steps], scale)?;
        let pe = self.position_block(tape, batch, steps)?;
        let x0 = tape.add(emb, pe)?;
        let mut x = self.drop(tape, x0, &mut dropout_rng)?;
        let causal = causal_mask(batch, steps);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for (i, l) in self.layout.layers.iter().enumerate() {
            let a = self.norm(tape, x, l.norm_self)?;
            let s = self.attention(tape, &l.self_attn, a, a, &causal)?;
            let s = self.drop(tape, s, &mut dropout_rng)?;
            x = tape.add(x, s)?;

            let c = self.norm(tape, x, l.norm_cross)?;
            let cross = self.dual_cross_attention(tape, i, c, &encoded, mix)?;
            let m = self.drop(tape, cross.mixed, &mut dropout_rng)?;
            x = tape.add(x, m)?;
            layers.push(LayerTrace {
                cross_input: c,
                cross,
            });

            let f = self.norm(tape, x, l.norm_ff)?;
            let f = self.affine(tape, f, l.ff_in)?;
            let f = tape.relu(f);
            let f = self.affine(tape, f, l.ff_out)?;
            let f = self.drop(tape, f, &mut dropout_rng)?;
            x = tape.add(x, f)?;
        }
        let y = self.norm(tape, x, self.layout.final_norm)?;
        let logits = self.affine(tape, y, self.layout.output)?;
        Ok(Forward {
            logits,
            encoded,
            layers,
        })
    }

    /// Teacher-forced mean cross-entropy over non-pad targets of `batch`.
    pub fn loss(
        &self,
        tape: &mut Tape<F>,
        batch: &Batch,
        mix: MixingWeight,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<(NodeId, Forward)> {
        let fwd = self.forward(
            tape,
            &batch.audio,
            &batch.secondary,
            &batch.inputs(),
            batch.steps(),
            mix,
            dropout_rng,
        )?;
        let loss = tape.cross_entropy(fwd.logits, &batch.targets(), PAD)?;
        Ok((loss, fwd))
    }

    /// Mean token loss of each batch item, evaluated without dropout.
    pub fn per_item_loss(&self, batch: &Batch, mix: MixingWeight) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let fwd = self.forward(
            &mut tape,
            &batch.audio,
            &batch.secondary,
            &batch.inputs(),
            batch.steps(),
            mix,
            None,
        )?;
        let logits = tape.values(fwd.logits);
        let (l, v) = (batch.steps(), self.config.vocab_size);
        let targets = batch.targets();
        let mut out = Vec::with_capacity(batch.len());
        for b in 0..batch.len() {
            let (mut total, mut n) = (0.0, 0usize);
            for t in 0..l {
                let target = targets[b * l + t];
                if target == PAD {
                    continue;
                }
                let row = &logits[(b * l + t) * v..(b * l + t + 1) * v];
                total -= log_softmax(row)[target].as_f64();
                n += 1;
            }
            out.push(if n == 0 { 0.0 } else { total / n as f64 });
        }
        Ok(out)
    }
}
