use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::stem::porter_stem;
use crate::error::{Error, Result};

/// Alignment search nodes explored per stage before settling for the best
/// matching found so far.
const SEARCH_BUDGET: usize = 50_000;

/// Groups of interchangeable words, one group per line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynonymTable {
    group_of: BTreeMap<String, Vec<usize>>,
}

impl SynonymTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut group_of: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut groups = 0;
        for line in text.lines() {
            let words: Vec<&str> = line.split_whitespace().collect();
            if words.is_empty() || words[0].starts_with('#') {
                continue;
            }
            for w in words {
                let entry = group_of.entry(w.to_lowercase()).or_default();
                if !entry.contains(&groups) {
                    entry.push(groups);
                }
            }
            groups += 1;
        }
        Ok(SynonymTable { group_of })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        match (self.group_of.get(a), self.group_of.get(b)) {
            (Some(x), Some(y)) => x.iter().any(|g| y.contains(g)),
            _ => false,
        }
    }
}

/// Matched (candidate, reference) positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub matches: Vec<(usize, usize)>,
    pub chunks: usize,
}

/// Runs of matches contiguous and in the same order on both sides.
fn count_chunks(matches: &[(usize, usize)]) -> usize {
    let mut m = matches.to_vec();
    m.sort_unstable();
    if m.is_empty() {
        return 0;
    }
    1 + m
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

fn max_matching(edges: &[Vec<usize>], n_right: usize) -> usize {
    fn augment(u: usize, edges: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &edges[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, edges, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_right];
    (0..edges.len())
        .filter(|&u| augment(u, edges, &mut vec![false; n_right], &mut owner))
        .count()
}

struct Search<'a> {
    rows: Vec<(usize, &'a [usize])>,
    target: usize,
    fixed: &'a [(usize, usize)],
    used_ref: Vec<bool>,
    current: Vec<(usize, usize)>,
    best: Option<(usize, Vec<(usize, usize)>)>,
    nodes: usize,
}

impl Search<'_> {
    fn run(&mut self, row: usize) {
        self.nodes += 1;
        if self.nodes > SEARCH_BUDGET && self.best.is_some() {
            return;
        }
        if self.current.len() == self.target {
            let mut all = self.fixed.to_vec();
            all.extend_from_slice(&self.current);
            let ch = count_chunks(&all);
            if self.best.as_ref().is_none_or(|(b, _)| ch < *b) {
                self.best = Some((ch, self.current.clone()));
            }
            return;
        }
        if row == self.rows.len() || self.current.len() + (self.rows.len() - row) < self.target {
            return;
        }
        let (i, js) = self.rows[row];
        for &j in js {
            if !self.used_ref[j] {
                self.used_ref[j] = true;
                self.current.push((i, j));
                self.run(row + 1);
                self.current.pop();
                self.used_ref[j] = false;
            }
        }
        self.run(row + 1);
    }
}

/// Stage-wise alignment: exact matches, then equal Porter stems, then
/// synonyms. Each stage adds a maximum matching among still-unmatched
/// words, choosing the one with the fewest chunks overall.
pub fn align(candidate: &[String], reference: &[String], synonyms: Option<&SynonymTable>) -> Alignment {
    let cand_stems: Vec<String> = candidate.iter().map(|w| porter_stem(w)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|w| porter_stem(w)).collect();
    let stages: [&dyn Fn(usize, usize) -> bool; 3] = [
        &|i, j| candidate[i] == reference[j],
        &|i, j| cand_stems[i] == ref_stems[j],
        &|i, j| synonyms.is_some_and(|s| s.are_synonyms(&candidate[i], &reference[j])),
    ];
    let mut fixed: Vec<(usize, usize)> = Vec::new();
    for related in stages {
        let used_c: Vec<bool> = (0..candidate.len()).map(|i| fixed.iter().any(|m| m.0 == i)).collect();
        let used_r: Vec<bool> = (0..reference.len()).map(|j| fixed.iter().any(|m| m.1 == j)).collect();
        let edges: Vec<Vec<usize>> = (0..candidate.len())
            .map(|i| {
                if used_c[i] {
                    return Vec::new();
                }
                (0..reference.len()).filter(|&j| !used_r[j] && related(i, j)).collect()
            })
            .collect();
        let target = max_matching(&edges, reference.len());
        if target == 0 {
            continue;
        }
        let rows: Vec<(usize, &[usize])> = edges
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.is_empty())
            .map(|(i, e)| (i, e.as_slice()))
            .collect();
        let mut search = Search {
            rows,
            target,
            fixed: &fixed,
            used_ref: used_r,
            current: Vec::new(),
            best: None,
            nodes: 0,
        };
        search.run(0);
        let (_, chosen) = search.best.expect("a maximum matching exists");
        fixed.extend(chosen);
    }
    fixed.sort_unstable();
    Alignment {
        chunks: count_chunks(&fixed),
        matches: fixed,
    }
}

/// `Fmean · (1 − 0.5 · (chunks/m)³)` with `Fmean = 10PR / (R + 9P)`.
pub fn meteor_single(candidate: &[String], reference: &[String], synonyms: Option<&SynonymTable>) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let a = align(candidate, reference, synonyms);
    let m = a.matches.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (a.chunks as f64 / m).powi(3);
    fmean * (1.0 - penalty)
}

/// Best score over the references.
pub fn meteor(candidate: &[String], references: &[Vec<String>], synonyms: Option<&SynonymTable>) -> f64 {
    references
        .iter()
        .map(|r| meteor_single(candidate, r, synonyms))
        .fold(0.0, f64::max)
}
