use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// References per clip required for validation and evaluation records.
pub const EVAL_REFERENCES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub clip_id: String,
    pub audio: PathBuf,
    pub secondary: PathBuf,
    pub captions: Vec<String>,
    pub split: Split,
}

impl ClipRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.clip_id.is_empty() {
            return Err("empty clip_id".into());
        }
        match self.split {
            Split::Train if self.captions.is_empty() => {
                Err("training clip needs at least one caption".into())
            }
            Split::Val | Split::Eval if self.captions.len() != EVAL_REFERENCES => Err(format!(
                "{:?} clip needs {EVAL_REFERENCES} captions, has {}",
                self.split,
                self.captions.len()
            )),
            _ => Ok(()),
        }
    }
}

/// JSON-lines clip index. Relative feature paths are resolved against
/// `base_dir` (the manifest file's directory when loaded from disk).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ClipRecord>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<ClipRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = Manifest {
            records,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            r.validate().map_err(|msg| Error::Parse {
                line: i + 1,
                msg: format!("clip {}: {msg}", r.clip_id),
            })?;
            if !seen.insert(r.clip_id.as_str()) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate clip_id {}", r.clip_id),
                });
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ClipRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            records.push(r);
        }
        Self::new(records, base_dir)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split(&self, split: Split) -> Manifest {
        Manifest {
            records: self
                .records
                .iter()
                .filter(|r| r.split == split)
                .cloned()
                .collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, clip_id: &str) -> Option<&ClipRecord> {
        self.records.iter().find(|r| r.clip_id == clip_id)
    }
}
