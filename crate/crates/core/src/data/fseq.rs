//! FSEQ feature files.
//!
//! Layout (little-endian):
//!
//! | offset | size  | field                               |
//! |--------|-------|-------------------------------------|
//! | 0      | 4     | magic `FSQ1`                        |
//! | 4      | 4     | `u32` frame count T                 |
//! | 8      | 4     | `u32` feature width D               |
//! | 12     | 1     | modality (0 = audio, 1 = visual)    |
//! | 13     | 7     | reserved, must be zero              |
//! | 20     | 4·T·D | `f32` values, row-major             |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FSQ1";
pub const HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
}

impl Modality {
    fn code(self) -> u8 {
        match self {
            Modality::Audio => 0,
            Modality::Visual => 1,
        }
    }
}

/// One clip's `T×D` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    clip_id: String,
    modality: Modality,
    frames: usize,
    width: usize,
    values: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(
        clip_id: impl Into<String>,
        modality: Modality,
        frames: usize,
        width: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if frames == 0 || width == 0 {
            return Err(Error::Contract(format!(
                "feature matrix must be at least 1x1, got {frames}x{width}"
            )));
        }
        if frames.checked_mul(width) != Some(values.len()) {
            return Err(Error::Dimension {
                op: "feature sequence",
                lhs: vec![frames, width],
                rhs: vec![values.len()],
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite feature at frame {}, channel {}",
                i / width,
                i % width
            )));
        }
        Ok(FeatureSequence {
            clip_id: clip_id.into(),
            modality,
            frames,
            width,
            values,
        })
    }

    pub fn clip_id(&self) -> &str {
        &self.clip_id
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.width..(t + 1) * self.width]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.push(self.modality.code());
        out.extend_from_slice(&[0u8; 7]);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses an FSEQ image. `clip_id` is attached to the result; the file
    /// itself does not carry one.
    pub fn from_bytes(clip_id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
            ));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::format(0, "bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let frames = u32_at(4);
        let width = u32_at(8);
        if frames == 0 {
            return Err(Error::format(4, "frame count must be at least 1"));
        }
        if width == 0 {
            return Err(Error::format(8, "feature width must be at least 1"));
        }
        let modality = match bytes[12] {
            0 => Modality::Audio,
            1 => Modality::Visual,
            m => return Err(Error::format(12, format!("unknown modality code {m}"))),
        };
        if let Some(i) = bytes[13..HEADER_LEN].iter().position(|&b| b != 0) {
            return Err(Error::format(13 + i as u64, "reserved byte is not zero"));
        }
        let payload = frames
            .checked_mul(width)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(4, "payload size overflows"))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() < payload {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated payload: expected {payload} bytes, found {}", body.len()),
            ));
        }
        if body.len() > payload {
            return Err(Error::format(
                (HEADER_LEN + payload) as u64,
                "trailing bytes after payload",
            ));
        }
        let mut values = Vec::with_capacity(frames * width);
        for (i, chunk) in body.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format((HEADER_LEN + 4 * i) as u64, "non-finite value"));
            }
            values.push(v);
        }
        Ok(FeatureSequence {
            clip_id: clip_id.into(),
            modality,
            frames,
            width,
            values,
        })
    }
}

pub fn write_fseq(path: impl AsRef<Path>, seq: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, seq.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads an FSEQ file; the clip id defaults to the file stem.
pub fn read_fseq(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureSequence::from_bytes(id, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_64x512_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values: Vec<f32> = (0..64 * 512).map(|_| rng.random_range(-10.0..10.0)).collect();
        let seq = FeatureSequence::new("c", Modality::Visual, 64, 512, values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.fseq");
        write_fseq(&p, &seq).unwrap();
        let back = read_fseq(&p).unwrap();
        assert_eq!(back, seq);
        assert_eq!(back.to_bytes(), fs::read(&p).unwrap());
    }

    #[test]
    fn zero_rows_rejected() {
        assert!(FeatureSequence::new("c", Modality::Audio, 0, 4, vec![]).is_err());
    }

    #[test]
    fn wrong_magic_is_a_format_error_at_offset_zero() {
        let seq = FeatureSequence::new("c", Modality::Audio, 1, 1, vec![1.0]).unwrap();
        let mut bytes = seq.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            FeatureSequence::from_bytes("c", &bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn truncation_and_trailing_bytes_report_offsets() {
        let seq = FeatureSequence::new("c", Modality::Audio, 2, 3, vec![0.5; 6]).unwrap();
        let bytes = seq.to_bytes();
        assert!(matches!(
            FeatureSequence::from_bytes("c", &bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            FeatureSequence::from_bytes("c", &bytes[..10]),
            Err(Error::Format { offset: 10, .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            FeatureSequence::from_bytes("c", &long),
            Err(Error::Format { offset: 44, .. })
        ));
        let mut reserved = bytes;
        reserved[17] = 1;
        assert!(matches!(
            FeatureSequence::from_bytes("c", &reserved),
            Err(Error::Format { offset: 17, .. })
        ));
    }

    #[test]
    fn header_layout_is_exact() {
        let seq = FeatureSequence::new("c", Modality::Visual, 2, 1, vec![1.0, -2.0]).unwrap();
        let b = seq.to_bytes();
        assert_eq!(&b[..4], b"FSQ1");
        assert_eq!(&b[4..8], &[2, 0, 0, 0]);
        assert_eq!(&b[8..12], &[1, 0, 0, 0]);
        assert_eq!(b[12], 1);
        assert_eq!(&b[13..20], &[0; 7]);
        assert_eq!(&b[20..24], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 28);
    }

    proptest! {
        #[test]
        fn parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..128)) {
            let _ = FeatureSequence::from_bytes("fuzz", &bytes);
        }

        #[test]
        fn encode_decode_is_identity(t in 1usize..6, d in 1usize..6, seed in any::<u64>(), visual in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f32> = (0..t * d).map(|_| rng.random_range(-1e6f32..1e6)).collect();
            let m = if visual { Modality::Visual } else { Modality::Audio };
            let seq = FeatureSequence::new("x", m, t, d, values).unwrap();
            let back = FeatureSequence::from_bytes("x", &seq.to_bytes()).unwrap();
            prop_assert_eq!(back, seq);
        }
    }
}
