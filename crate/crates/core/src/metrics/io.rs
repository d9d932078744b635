use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a candidates file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub clip_id: String,
    pub caption: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpiceRecord {
    clip_id: String,
    spice: f64,
}

fn jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<(usize, T)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|r| (i + 1, r))
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
        })
        .collect()
}

pub fn parse_candidates(text: &str) -> Result<Vec<CandidateRecord>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (line, r) in jsonl::<CandidateRecord>(text)? {
        if seen.insert(r.clip_id.clone(), line).is_some() {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate clip_id {:?}", r.clip_id),
            });
        }
        out.push(r);
    }
    Ok(out)
}

pub fn read_candidates(path: impl AsRef<Path>) -> Result<Vec<CandidateRecord>> {
    let path = path.as_ref();
    parse_candidates(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_candidates(path: impl AsRef<Path>, records: &[CandidateRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-clip SPICE values; each must lie in [0, 1].
pub fn parse_spice(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (line, r) in jsonl::<SpiceRecord>(text)? {
        if !(0.0..=1.0).contains(&r.spice) {
            return Err(Error::Parse {
                line,
                msg: format!("spice {} outside [0, 1]", r.spice),
            });
        }
        if out.insert(r.clip_id.clone(), r.spice).is_some() {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate clip_id {:?}", r.clip_id),
            });
        }
    }
    Ok(out)
}

pub fn read_spice(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    parse_spice(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
