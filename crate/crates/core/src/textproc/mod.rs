//! Caption tokenization, vocabulary and CBOW word-embedding pretraining.

mod cbow;
mod vocab;

pub use cbow::{train_cbow, CbowConfig, CbowOutput};
pub use vocab::{Vocabulary, EOS, PAD, RESERVED, SOS, UNK};

/// Lowercases, strips every character that is neither alphanumeric nor
/// whitespace, and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}
