use std::collections::BTreeMap;

use super::EvalPair;

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut out = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped n-gram matches and candidate n-gram total over the corpus.
pub fn modified_precision(pairs: &[EvalPair], n: usize) -> (usize, usize) {
    let (mut num, mut den) = (0, 0);
    for p in pairs {
        let cand = ngram_counts(&p.candidate, n);
        let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
        for r in &p.references {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        for (g, c) in cand {
            num += c.min(max_ref.get(g).copied().unwrap_or(0));
            den += c;
        }
    }
    (num, den)
}

/// Reference length closest to `cand_len`, the shorter one on ties.
pub fn closest_ref_len(cand_len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(cand_len), l))
        .unwrap_or(0)
}

/// `exp(1 − r/c)` when `c < r`, else 1.
pub fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    }
}

/// Corpus BLEU-4: geometric mean of clipped 1..4-gram precisions times the
/// brevity penalty. `smoothing` adds one to numerator and denominator of
/// the 2..4-gram precisions.
pub fn bleu4(pairs: &[EvalPair], smoothing: bool) -> f64 {
    let c: usize = pairs.iter().map(|p| p.candidate.len()).sum();
    if c == 0 {
        log::warn!("BLEU over an empty candidate corpus is 0");
        return 0.0;
    }
    let r: usize = pairs.iter().map(|p| closest_ref_len(p.candidate.len(), &p.references)).sum();
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (mut num, mut den) = modified_precision(pairs, n);
        if smoothing && n > 1 {
            num += 1;
            den += 1;
        }
        if num == 0 || den == 0 {
            return 0.0;
        }
        log_sum += (num as f64 / den as f64).ln();
    }
    brevity_penalty(c, r) * (log_sum / 4.0).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::tokenize;

    fn pair(c: &str, refs: &[&str]) -> EvalPair {
        EvalPair {
            clip_id: "x".into(),
            candidate: tokenize(c),
            references: refs.iter().map(|r| tokenize(r)).collect(),
        }
    }

    #[test]
    fn clipped_unigram_precision_is_two_sevenths() {
        let p = pair("the the the the the the the", &["the cat is on the mat"]);
        assert_eq!(modified_precision(&[p], 1), (2, 7));
    }

    #[test]
    fn identical_candidates_score_one() {
        let pairs = [
            pair("a dog barks then a cat meows", &["a dog barks then a cat meows", "a dog growls"]),
            pair("the bell rings and then a baby cries", &["x y", "the bell rings and then a baby cries"]),
        ];
        assert!((bleu4(&pairs, false) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_length_candidate_takes_e_to_minus_one() {
        let full = "a b c d e f g h";
        let p = pair("a b c d", &[full]);
        assert!((brevity_penalty(4, 8) - (-1.0f64).exp()).abs() < 1e-15);
        // every n-gram of the candidate is in the reference, so precisions are 1
        assert!((bleu4(&[p], false) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn closest_reference_prefers_shorter_on_ties() {
        let refs = vec![tokenize("a b c d e f"), tokenize("a b")];
        assert_eq!(closest_ref_len(4, &refs), 2);
        assert_eq!(closest_ref_len(5, &refs), 6);
    }

    #[test]
    fn missing_four_grams_zero_the_score_unless_smoothed() {
        let p = pair("a b c", &["a b c"]);
        assert_eq!(bleu4(std::slice::from_ref(&p), false), 0.0);
        assert!(bleu4(&[p], true) > 0.0);
        assert_eq!(bleu4(&[pair("", &["a b"])], false), 0.0);
    }
}
