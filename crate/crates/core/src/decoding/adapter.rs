use super::{beam_search, BeamHypothesis, DecodeConfig, StepModel};
use crate::data::FeatureSequence;
use crate::error::{Error, Result};
use crate::model::{DecoderState, EncodedClip, MixingWeight, MultiEncoderTransformer};
use crate::tensor::kernels::log_softmax;
use crate::tensor::Scalar;
use crate::textproc::{EOS, PAD, SOS, UNK};

/// One encoded clip exposed as a [`StepModel`]. Pad, sos and unk are never
/// proposed.
pub struct ClipDecoder<'a, F: Scalar> {
    model: &'a MultiEncoderTransformer<F>,
    encoded: EncodedClip<F>,
}

impl<'a, F: Scalar> ClipDecoder<'a, F> {
    pub fn new(
        model: &'a MultiEncoderTransformer<F>,
        audio: &FeatureSequence,
        secondary: &FeatureSequence,
        mix: MixingWeight,
    ) -> Result<Self> {
        Ok(ClipDecoder {
            model,
            encoded: model.encode_clip(audio, secondary, mix)?,
        })
    }

    fn log_probs(&self, logits: Vec<F>) -> Vec<f64> {
        let mut lp: Vec<f64> = log_softmax(&logits).into_iter().map(|v| v.as_f64()).collect();
        for t in [PAD, SOS, UNK] {
            if let Some(v) = lp.get_mut(t) {
                *v = f64::NEG_INFINITY;
            }
        }
        lp
    }
}

impl<F: Scalar> StepModel for ClipDecoder<'_, F> {
    type State = DecoderState<F>;

    fn eos(&self) -> usize {
        EOS
    }

    fn start(&self) -> Result<(Self::State, Vec<f64>)> {
        let mut state = self.model.start_state();
        let logits = self.model.step(&self.encoded, &mut state, SOS)?;
        Ok((state, self.log_probs(logits)))
    }

    fn advance(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>> {
        let logits = self.model.step(&self.encoded, state, token)?;
        Ok(self.log_probs(logits))
    }
}

/// Beam-decodes one clip; the returned tokens exclude sos and eos.
pub fn decode_clip<F: Scalar>(
    model: &MultiEncoderTransformer<F>,
    audio: &FeatureSequence,
    secondary: &FeatureSequence,
    mix: MixingWeight,
    cfg: &DecodeConfig,
) -> Result<BeamHypothesis> {
    let limit = model.config().max_caption_len;
    if cfg.max_depth > limit {
        return Err(Error::Config(format!(
            "max_depth {} exceeds the model's caption length {limit}",
            cfg.max_depth
        )));
    }
    beam_search(&ClipDecoder::new(model, audio, secondary, mix)?, cfg)
}
