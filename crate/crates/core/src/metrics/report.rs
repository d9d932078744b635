use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricOptions;
use crate::error::{Error, Result};

/// Column order of the results table.
pub const TABLE_COLUMNS: [&str; 6] = ["BLEU-4", "METEOR", "ROUGE-L", "CIDEr", "SPICE", "SPIDEr"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
    pub spice: Option<f64>,
    pub spider: Option<f64>,
}

impl CorpusScores {
    /// Values in [`TABLE_COLUMNS`] order.
    pub fn columns(&self) -> [Option<f64>; 6] {
        [
            Some(self.bleu4),
            Some(self.meteor),
            Some(self.rouge_l),
            Some(self.cider_d),
            self.spice,
            self.spider,
        ]
    }

    /// Looks a metric up by its report key.
    pub fn get(&self, key: &str) -> Option<f64> {
        match key {
            "bleu4" => Some(self.bleu4),
            "meteor" => Some(self.meteor),
            "rouge_l" => Some(self.rouge_l),
            "cider_d" => Some(self.cider_d),
            "spice" => self.spice,
            "spider" => self.spider,
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub clip_id: String,
    pub candidate: String,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
    pub spice: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Which variant of each metric produced the numbers.
    pub variants: BTreeMap<String, String>,
    pub corpus: CorpusScores,
    pub samples: Vec<SampleScores>,
}

impl MetricReport {
    pub(crate) fn new(corpus: CorpusScores, samples: Vec<SampleScores>, opts: &MetricOptions) -> Self {
        let mut variants = BTreeMap::new();
        variants.insert(
            "bleu4".into(),
            format!(
                "corpus-level, closest reference length, {}",
                if opts.bleu_smoothing { "add-one smoothing for n>1" } else { "no smoothing" }
            ),
        );
        variants.insert(
            "meteor".into(),
            format!(
                "exact, porter stem{} stages; Fmean=10PR/(R+9P); penalty 0.5(chunks/m)^3; mean over clips",
                if opts.synonyms.is_some() { ", synonym table" } else { "" }
            ),
        );
        variants.insert("rouge_l".into(), "LCS F-measure, beta 1.2, best reference".into());
        variants.insert(
            "cider_d".into(),
            "CIDEr-D, idf ln(N)-ln(max(1,df)), clipped, sigma 6, x10".into(),
        );
        if corpus.spice.is_some() {
            variants.insert("spice".into(), "imported per-clip values".into());
        }
        MetricReport {
            variants,
            corpus,
            samples,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// Header plus one row in table column order; absent values are empty.
    pub fn to_csv(&self) -> String {
        let row: Vec<String> = self
            .corpus
            .columns()
            .iter()
            .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
            .collect();
        format!("{}\n{}\n", TABLE_COLUMNS.join(","), row.join(","))
    }

    pub fn save(&self, json_path: impl AsRef<Path>) -> Result<()> {
        let path = json_path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))?;
        let csv = path.with_extension("csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }

    pub fn load(json_path: impl AsRef<Path>) -> Result<Self> {
        let path = json_path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
