//! Single-file parameter container.
//!
//! ```text
//! AVFUSE-CKPT 1
//! config {"d_model":128,...}
//! tensor encoder_audio.weight 32x128
//! tensor encoder_audio.bias 128
//! ...
//! end
//! <f32 little-endian payloads, concatenated in header order>
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::transformer::MultiEncoderTransformer;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

const MAGIC_LINE: &str = "AVFUSE-CKPT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!(
            "{MAGIC_LINE}\nconfig {}\n",
            serde_json::to_string(&self.config).expect("config serializes")
        );
        for t in &self.tensors {
            head.push_str(&format!("tensor {} {}\n", t.name, shape_text(&t.shape)));
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        for t in &self.tensors {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<(u64, &str)> {
            let start = *pos;
            let rest = &bytes[start..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::format(bytes.len() as u64, "unterminated header line"))?;
            let line = std::str::from_utf8(&rest[..nl])
                .map_err(|e| Error::format((start + e.valid_up_to()) as u64, "header is not UTF-8"))?;
            *pos = start + nl + 1;
            Ok((start as u64, line))
        };

        let (off, magic) = next_line(&mut pos)?;
        if magic != MAGIC_LINE {
            return Err(Error::format(off, "bad magic line"));
        }
        let (off, cfg_line) = next_line(&mut pos)?;
        let json = cfg_line
            .strip_prefix("config ")
            .ok_or_else(|| Error::format(off, "expected config line"))?;
        let config: ModelConfig =
            serde_json::from_str(json).map_err(|e| Error::format(off, format!("config: {e}")))?;
        config
            .validate()
            .map_err(|e| Error::format(off, e.to_string()))?;

        let mut specs: Vec<(String, Vec<usize>, usize)> = Vec::new();
        let mut seen = HashSet::new();
        let mut payload = 0usize;
        loop {
            let (off, line) = next_line(&mut pos)?;
            if line == "end" {
                break;
            }
            let mut parts = line.split(' ');
            let (Some("tensor"), Some(name), Some(dims), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::format(off, format!("malformed tensor line {line:?}")));
            };
            if name.is_empty() || !seen.insert(name.to_string()) {
                return Err(Error::format(off, format!("empty or duplicate tensor name {name:?}")));
            }
            let shape: Vec<usize> = dims
                .split('x')
                .map(|s| s.parse::<usize>().ok().filter(|&n| n > 0 && s.bytes().all(|b| b.is_ascii_digit())))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::format(off, format!("bad shape {dims:?}")))?;
            if shape.len() > 3 {
                return Err(Error::format(off, format!("rank {} exceeds 3", shape.len())));
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &b| a.checked_mul(b))
                .ok_or_else(|| Error::format(off, "tensor size overflows"))?;
            payload = n
                .checked_mul(4)
                .and_then(|b| payload.checked_add(b))
                .ok_or_else(|| Error::format(off, "payload size overflows"))?;
            specs.push((name.to_string(), shape, n));
        }
        let body = &bytes[pos..];
        if body.len() != payload {
            return Err(Error::format(
                (pos + body.len().min(payload)) as u64,
                format!("payload is {} bytes, header declares {payload}", body.len()),
            ));
        }
        let mut tensors = Vec::with_capacity(specs.len());
        let mut at = 0usize;
        for (name, shape, n) in specs {
            let mut values = Vec::with_capacity(n);
            for chunk in body[at..at + 4 * n].chunks_exact(4) {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::format(
                        (pos + at + 4 * values.len()) as u64,
                        format!("non-finite value in {name}"),
                    ));
                }
                values.push(v);
            }
            at += 4 * n;
            tensors.push(NamedTensor { name, shape, values });
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl<F: Scalar> MultiEncoderTransformer<F> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let tensors = self
            .store
            .ids()
            .map(|id| NamedTensor {
                name: self.store.name(id).to_string(),
                shape: self.store.shape(id).to_vec(),
                values: self.store.values(id).iter().map(|v| v.as_f32()).collect(),
            })
            .collect();
        Checkpoint {
            config: self.config.clone(),
            tensors,
        }
    }

    /// Rebuilds a model; the checkpoint must hold exactly the parameters
    /// its config implies, with matching shapes.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(ckpt.config.clone(), 0)?;
        if ckpt.tensors.len() != model.store.len() {
            return Err(Error::Contract(format!(
                "checkpoint has {} tensors, config implies {}",
                ckpt.tensors.len(),
                model.store.len()
            )));
        }
        for t in &ckpt.tensors {
            let id = model
                .store
                .find(&t.name)
                .ok_or_else(|| Error::Contract(format!("unexpected tensor {}", t.name)))?;
            if model.store.shape(id) != t.shape.as_slice() {
                return Err(Error::Dimension {
                    op: "checkpoint tensor",
                    lhs: model.store.shape(id).to_vec(),
                    rhs: t.shape.clone(),
                });
            }
            for (dst, &v) in model.store.values_mut(id).iter_mut().zip(&t.values) {
                *dst = F::of_f32(v);
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            vocab_size: 9,
            d_audio_in: 3,
            d_secondary_in: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let m = MultiEncoderTransformer::<f32>::new(tiny(), 3).unwrap();
        let bytes = m.to_checkpoint().to_bytes();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ck.to_bytes(), bytes);
        let back = MultiEncoderTransformer::<f32>::from_checkpoint(&ck).unwrap();
        for id in m.params().ids() {
            assert_eq!(m.params().values(id), back.params().values(id));
        }
        assert!(std::str::from_utf8(&bytes[..40]).unwrap().starts_with("AVFUSE-CKPT 1\nconfig {"));
    }

    #[test]
    fn structural_errors_carry_offsets() {
        let m = MultiEncoderTransformer::<f32>::new(tiny(), 3).unwrap();
        let bytes = m.to_checkpoint().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 2]),
            Err(Error::Format { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
        assert!(Checkpoint::from_bytes(b"").is_err());
    }

    #[test]
    fn mismatched_tensor_sets_are_rejected() {
        let m = MultiEncoderTransformer::<f32>::new(tiny(), 3).unwrap();
        let mut ck = m.to_checkpoint();
        ck.tensors.pop();
        assert!(MultiEncoderTransformer::<f32>::from_checkpoint(&ck).is_err());
        let mut ck = m.to_checkpoint();
        ck.tensors[0].name = "bogus".into();
        assert!(MultiEncoderTransformer::<f32>::from_checkpoint(&ck).is_err());
    }

    proptest! {
        #[test]
        fn parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = Checkpoint::from_bytes(&bytes);
        }

        #[test]
        fn arbitrary_containers_round_trip(
            shapes in proptest::collection::vec(proptest::collection::vec(1usize..4, 1..=3), 0..5),
            seed in any::<u32>(),
        ) {
            let tensors = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let n: usize = s.iter().product();
                    NamedTensor {
                        name: format!("t{i}"),
                        shape: s.clone(),
                        values: (0..n).map(|j| (seed as f32) * 1e-3 - j as f32).collect(),
                    }
                })
                .collect();
            let ck = Checkpoint { config: tiny(), tensors };
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back, ck);
        }
    }
}
