use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::tokenize;

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: usize = 4;

const RESERVED_NAMES: [&str; RESERVED] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Token ↔ id table. Ids `0..4` are the reserved pad/sos/eos/unk tokens;
/// ordinary tokens follow densely.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

impl Vocabulary {
    /// Counts tokens over the tokenized corpus; tokens seen at least
    /// `min_count` times get ids ordered by frequency (descending) then
    /// lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Self> {
        if corpus.iter().all(|c| c.is_empty()) {
            return Err(Error::Empty("vocabulary corpus has no tokens".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for caption in corpus {
            for tok in caption {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut v = Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()).collect())?;
        v.min_count = min_count;
        Ok(v)
    }

    fn from_tokens(words: Vec<String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
        let mut index = HashMap::new();
        for (i, w) in words.into_iter().enumerate() {
            if index.insert(w.clone(), RESERVED + i).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate token {w:?}"),
                });
            }
            tokens.push(w);
        }
        Ok(Vocabulary {
            tokens,
            index,
            min_count: 1,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_reserved(id: usize) -> bool {
        id < RESERVED
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Maps ids back to tokens, dropping reserved ids and anything out of range.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| !Self::is_reserved(i))
            .filter_map(|&i| self.token(i).map(str::to_string))
            .collect()
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED..]
    }

    /// One token per line; line `k` (0-based) holds id `k + 4`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for w in self.words() {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut words = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let toks = tokenize(line);
            if toks.len() != 1 || toks[0] != line {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("not a single normalized token: {line:?}"),
                });
            }
            words.push(line.to_string());
        }
        if !text.is_empty() && !text.ends_with('\n') {
            return Err(Error::Parse {
                line: words.len(),
                msg: "missing trailing newline".into(),
            });
        }
        Self::from_tokens(words)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
