//! The multi-encoder transformer: per-stream feed-forward encoders, a token
//! embedding with sinusoidal positions, and decoder layers whose
//! cross-attention is duplicated per stream and linearly mixed.

mod checkpoint;
mod config;
mod infer;
mod positions;
mod transformer;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use config::{MixingWeight, ModelConfig};
pub use infer::{DecoderState, EncodedClip};
pub use positions::sinusoidal_positions;
pub use transformer::{CrossOutput, Encoded, Forward, LayerTrace, MultiEncoderTransformer, Stream};
