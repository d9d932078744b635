//! Tape-free single-clip inference with cached keys and values, used by
//! beam search. Produces the same logits as the tape forward pass up to
//! floating-point reassociation.

use super::config::MixingWeight;
use super::transformer::{Affine, Attention, MultiEncoderTransformer, Norm};
use crate::data::FeatureSequence;
use crate::error::{Error, Result};
use crate::tensor::kernels::{layer_norm_row, masked_softmax_row, matmul_nn};
use crate::tensor::Scalar;

#[derive(Clone, Debug)]
struct StreamCache<F> {
    keys: Vec<F>,
    values: Vec<F>,
    frames: usize,
}

/// Encoder outputs of one clip, projected to per-layer cross-attention
/// keys and values for each stream that carries weight.
#[derive(Clone, Debug)]
pub struct EncodedClip<F> {
    mix: MixingWeight,
    audio: Vec<StreamCache<F>>,
    secondary: Vec<StreamCache<F>>,
}

impl<F> EncodedClip<F> {
    pub fn mix(&self) -> MixingWeight {
        self.mix
    }
}

/// Self-attention cache of one partial caption.
#[derive(Clone, Debug)]
pub struct DecoderState<F> {
    pos: usize,
    keys: Vec<Vec<F>>,
    values: Vec<Vec<F>>,
}

impl<F> DecoderState<F> {
    /// Number of tokens consumed so far.
    pub fn len(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == 0
    }
}

impl<F: Scalar> MultiEncoderTransformer<F> {
    /// `rows × in` → `rows × out` through an affine map.
    fn affine_rows(&self, x: &[F], rows: usize, a: Affine) -> Vec<F> {
        let shape = self.store.shape(a.w);
        let (k, n) = (shape[0], shape[1]);
        let bias = self.store.values(a.b);
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        matmul_nn(x, self.store.values(a.w), &mut out, rows, k, n, true);
        out
    }

    fn norm_row(&self, x: &[F], n: Norm) -> Vec<F> {
        let mut out = vec![F::zero(); x.len()];
        layer_norm_row(
            x,
            self.store.values(n.gain),
            self.store.values(n.bias),
            F::of(self.config.ln_eps),
            &mut out,
            None,
        );
        out
    }

    /// Attention of one query over `frames` cached keys/values.
    fn attend_one(&self, q: &[F], keys: &[F], values: &[F], frames: usize, p: &Attention) -> Vec<F> {
        let d = self.config.d_model;
        let dh = self.config.head_dim();
        let scale = F::of(1.0 / (dh as f64).sqrt());
        let mut ctx = vec![F::zero(); d];
        let mut w = vec![F::zero(); frames];
        for h in 0..self.config.n_heads {
            let qh = &q[h * dh..(h + 1) * dh];
            for (j, s) in w.iter_mut().enumerate() {
                let kh = &keys[j * d + h * dh..j * d + (h + 1) * dh];
                *s = qh.iter().zip(kh).map(|(&a, &b)| a * b).sum::<F>() * scale;
            }
            masked_softmax_row(&mut w, None);
            let out = &mut ctx[h * dh..(h + 1) * dh];
            for (j, &wj) in w.iter().enumerate() {
                let vh = &values[j * d + h * dh..j * d + (h + 1) * dh];
                out.iter_mut().zip(vh).for_each(|(o, &v)| *o += wj * v);
            }
        }
        self.affine_rows(&ctx, 1, p.o)
    }

    fn encode_rows(&self, f: &FeatureSequence, a: Affine, width: usize) -> Result<Vec<F>> {
        if f.width() != width {
            return Err(Error::Dimension {
                op: "encode_stream",
                lhs: vec![f.frames(), f.width()],
                rhs: vec![width],
            });
        }
        let x: Vec<F> = f.values().iter().map(|&v| F::of_f32(v)).collect();
        let mut h = self.affine_rows(&x, f.frames(), a);
        h.iter_mut().for_each(|v| *v = v.max(F::zero()));
        if self.config.encoder_positions {
            let d = self.config.d_model;
            if f.frames() * d > self.positions.len() {
                return Err(Error::Length {
                    len: f.frames(),
                    max: self.positions.len() / d,
                });
            }
            h.iter_mut().zip(&self.positions).for_each(|(v, &p)| *v += p);
        }
        Ok(h)
    }

    /// Runs both encoders (as needed by `mix`) and precomputes every
    /// layer's cross-attention keys and values.
    pub fn encode_clip(
        &self,
        audio: &FeatureSequence,
        secondary: &FeatureSequence,
        mix: MixingWeight,
    ) -> Result<EncodedClip<F>> {
        let cfg = &self.config;
        let caches = |f: &FeatureSequence, a: Affine, width: usize, pick: fn(&super::transformer::Layer) -> &Attention| -> Result<Vec<StreamCache<F>>> {
            let h = self.encode_rows(f, a, width)?;
            Ok(self
                .layout
                .layers
                .iter()
                .map(|l| {
                    let p = pick(l);
                    StreamCache {
                        keys: self.affine_rows(&h, f.frames(), p.k),
                        values: self.affine_rows(&h, f.frames(), p.v),
                        frames: f.frames(),
                    }
                })
                .collect())
        };
        let audio = if mix.audio() > 0.0 {
            caches(audio, self.layout.enc_audio, cfg.d_audio_in, |l| &l.cross_audio)?
        } else {
            Vec::new()
        };
        let secondary = if mix.secondary() > 0.0 {
            caches(secondary, self.layout.enc_secondary, cfg.d_secondary_in, |l| &l.cross_secondary)?
        } else {
            Vec::new()
        };
        Ok(EncodedClip {
            mix,
            audio,
            secondary,
        })
    }

    pub fn start_state(&self) -> DecoderState<F> {
        let n = self.config.n_layers;
        DecoderState {
            pos: 0,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
        }
    }

    /// Feeds `token` at the next position and returns the logits over the
    /// vocabulary for the following token.
    pub fn step(&self, enc: &EncodedClip<F>, state: &mut DecoderState<F>, token: usize) -> Result<Vec<F>> {
        let cfg = &self.config;
        let d = cfg.d_model;
        if state.pos >= cfg.max_caption_len {
            return Err(Error::Length {
                len: state.pos + 1,
                max: cfg.max_caption_len,
            });
        }
        if token >= cfg.vocab_size {
            return Err(Error::Index {
                index: token,
                extent: cfg.vocab_size,
            });
        }
        let scale = if cfg.scale_embedding {
            F::of((d as f64).sqrt())
        } else {
            F::one()
        };
        let table = self.store.values(self.layout.embedding);
        let pe = &self.positions[state.pos * d..(state.pos + 1) * d];
        let mut x: Vec<F> = table[token * d..(token + 1) * d]
            .iter()
            .zip(pe)
            .map(|(&e, &p)| e * scale + p)
            .collect();
        let mix = enc.mix;
        for (i, l) in self.layout.layers.iter().enumerate() {
            let a = self.norm_row(&x, l.norm_self);
            let q = self.affine_rows(&a, 1, l.self_attn.q);
            state.keys[i].extend(self.affine_rows(&a, 1, l.self_attn.k));
            state.values[i].extend(self.affine_rows(&a, 1, l.self_attn.v));
            let s = self.attend_one(&q, &state.keys[i], &state.values[i], state.pos + 1, &l.self_attn);
            x.iter_mut().zip(&s).for_each(|(x, &s)| *x += s);

            let c = self.norm_row(&x, l.norm_cross);
            let branch = |cache: &StreamCache<F>, p: &Attention| {
                let q = self.affine_rows(&c, 1, p.q);
                self.attend_one(&q, &cache.keys, &cache.values, cache.frames, p)
            };
            let ya = (mix.audio() > 0.0).then(|| branch(&enc.audio[i], &l.cross_audio));
            let ys = (mix.secondary() > 0.0).then(|| branch(&enc.secondary[i], &l.cross_secondary));
            let mixed = match (ya, ys) {
                (Some(a), None) => a,
                (None, Some(s)) => s,
                (Some(a), Some(s)) => {
                    let (wa, ws) = (F::of(mix.audio()), F::of(mix.secondary()));
                    a.iter().zip(&s).map(|(&a, &s)| a * wa + s * ws).collect()
                }
                (None, None) => unreachable!("weights sum to one"),
            };
            x.iter_mut().zip(&mixed).for_each(|(x, &m)| *x += m);

            let f = self.norm_row(&x, l.norm_ff);
            let mut f = self.affine_rows(&f, 1, l.ff_in);
            f.iter_mut().for_each(|v| *v = v.max(F::zero()));
            let f = self.affine_rows(&f, 1, l.ff_out);
            x.iter_mut().zip(&f).for_each(|(x, &f)| *x += f);
        }
        state.pos += 1;
        let y = self.norm_row(&x, self.layout.final_norm);
        Ok(self.affine_rows(&y, 1, self.layout.output))
    }
}
