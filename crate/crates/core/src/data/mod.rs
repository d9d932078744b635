//! Feature files, clip manifests, the synthetic task generator, masking
//! augmentation and batching.

pub mod augment;
pub mod batch;
pub mod fseq;
pub mod manifest;
pub mod synth;

pub use augment::{default_mask_widths, spec_mask};
pub use batch::{make_batches, Batch, ClipData, Dataset, PaddedFeatures};
pub use fseq::{read_fseq, write_fseq, FeatureSequence, Modality};
pub use manifest::{ClipRecord, Manifest, Split};
pub use synth::{generate_synthetic_dataset, synthesize, SecondaryMode, SyntheticTaskConfig};
