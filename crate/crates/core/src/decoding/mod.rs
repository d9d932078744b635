//! Beam search with length-normalized final selection.

mod adapter;

pub use adapter::{decode_clip, ClipDecoder};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub max_depth: usize,
    pub length_norm_alpha: f64,
    /// Rank live candidates by normalized score instead of raw log-prob.
    pub normalize_during_pruning: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: 5,
            max_depth: 20,
            length_norm_alpha: 1.0,
            normalize_during_pruning: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.max_depth == 0 {
            return Err(Error::Config("beam_width and max_depth must be at least 1".into()));
        }
        if !(self.length_norm_alpha >= 0.0 && self.length_norm_alpha.is_finite()) {
            return Err(Error::Config(format!(
                "length_norm_alpha {} must be finite and non-negative",
                self.length_norm_alpha
            )));
        }
        Ok(())
    }
}

/// A partial or finished caption. `tokens` excludes sos and eos.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities, eos included when emitted.
    pub cum_logprob: f64,
    pub finished: bool,
}

/// `cum_logprob / len^alpha`; an empty hypothesis scores −∞.
pub fn normalized_score(h: &BeamHypothesis, alpha: f64) -> f64 {
    normalize(h.cum_logprob, h.tokens.len(), alpha)
}

fn normalize(cum: f64, len: usize, alpha: f64) -> f64 {
    if len == 0 {
        f64::NEG_INFINITY
    } else {
        cum / (len as f64).powf(alpha)
    }
}

/// An autoregressive scorer driven one token at a time.
pub trait StepModel {
    type State: Clone;

    fn eos(&self) -> usize;

    /// Initial state and log-probabilities of the first token. Tokens that
    /// must never be produced carry −∞.
    fn start(&self) -> Result<(Self::State, Vec<f64>)>;

    /// Consumes `token` and returns log-probabilities of the next one.
    fn advance(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>>;
}

struct Live<S> {
    hyp: BeamHypothesis,
    state: S,
    next: Vec<f64>,
}

struct Candidate {
    key: f64,
    cum: f64,
    token: usize,
    parent: usize,
}

/// Descending score, then lower token id, then earlier parent.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.key
        .partial_cmp(&a.key)
        .unwrap_or(Ordering::Equal)
        .then(a.token.cmp(&b.token))
        .then(a.parent.cmp(&b.parent))
}

/// Bounded pool of finished hypotheses; when full, the worst by
/// normalized score (latest on ties) is evicted.
struct Finished {
    items: Vec<(f64, BeamHypothesis)>,
    capacity: usize,
}

impl Finished {
    fn push(&mut self, score: f64, h: BeamHypothesis) {
        self.items.push((score, h));
        if self.items.len() > self.capacity {
            let worst = (0..self.items.len())
                .rev()
                .min_by(|&i, &j| {
                    self.items[i]
                        .0
                        .partial_cmp(&self.items[j].0)
                        .unwrap_or(Ordering::Equal)
                        .then(j.cmp(&i))
                })
                .expect("non-empty");
            self.items.remove(worst);
        }
    }

    /// Highest score; earliest on ties.
    fn best(self) -> Option<BeamHypothesis> {
        let mut best: Option<(f64, BeamHypothesis)> = None;
        for (s, h) in self.items {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, h));
            }
        }
        best.map(|(_, h)| h)
    }
}

/// Standard beam search. Each step scores every extension of every live
/// hypothesis and keeps the top `beam_width` overall; extensions ending in
/// eos, or reaching `max_depth`, move to the finished pool. Returns the
/// finished hypothesis with the best normalized score.
pub fn beam_search<M: StepModel>(model: &M, cfg: &DecodeConfig) -> Result<BeamHypothesis> {
    cfg.validate()?;
    let eos = model.eos();
    let alpha = cfg.length_norm_alpha;
    let (state, next) = model.start()?;
    let mut live = vec![Live {
        hyp: BeamHypothesis {
            tokens: Vec::new(),
            cum_logprob: 0.0,
            finished: false,
        },
        state,
        next,
    }];
    let mut finished = Finished {
        items: Vec::new(),
        capacity: cfg.beam_width,
    };

    for depth in 1..=cfg.max_depth {
        let mut cands = Vec::new();
        for (parent, l) in live.iter().enumerate() {
            for (token, &lp) in l.next.iter().enumerate() {
                if lp == f64::NEG_INFINITY || lp.is_nan() {
                    continue;
                }
                let cum = l.hyp.cum_logprob + lp;
                let key = if cfg.normalize_during_pruning {
                    let len = l.hyp.tokens.len() + usize::from(token != eos);
                    normalize(cum, len, alpha)
                } else {
                    cum
                };
                cands.push(Candidate { key, cum, token, parent });
            }
        }
        cands.sort_by(rank);
        cands.truncate(cfg.beam_width);

        let mut next_live = Vec::with_capacity(cands.len());
        for c in cands {
            let parent = &live[c.parent];
            let mut tokens = parent.hyp.tokens.clone();
            if c.token != eos {
                tokens.push(c.token);
            }
            let done = c.token == eos || depth == cfg.max_depth;
            let hyp = BeamHypothesis {
                tokens,
                cum_logprob: c.cum,
                finished: done,
            };
            if done {
                finished.push(normalized_score(&hyp, alpha), hyp);
            } else {
                let mut state = parent.state.clone();
                let next = model.advance(&mut state, c.token)?;
                next_live.push(Live { hyp, state, next });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }
    Ok(finished.best().unwrap_or(BeamHypothesis {
        tokens: Vec::new(),
        cum_logprob: 0.0,
        finished: true,
    }))
}

/// Most probable token at each step (lowest id on ties) until eos or
/// `max_depth` tokens.
pub fn greedy<M: StepModel>(model: &M, max_depth: usize) -> Result<BeamHypothesis> {
    let eos = model.eos();
    let (mut state, mut next) = model.start()?;
    let mut h = BeamHypothesis {
        tokens: Vec::new(),
        cum_logprob: 0.0,
        finished: false,
    };
    for depth in 1..=max_depth {
        let mut best: Option<(usize, f64)> = None;
        for (t, &lp) in next.iter().enumerate() {
            if lp != f64::NEG_INFINITY && best.is_none_or(|(_, b)| lp > b) {
                best = Some((t, lp));
            }
        }
        let Some((token, lp)) = best else { break };
        h.cum_logprob += lp;
        if token == eos {
            break;
        }
        h.tokens.push(token);
        if depth < max_depth {
            next = model.advance(&mut state, token)?;
        }
    }
    h.finished = true;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Log-probabilities drawn from a seeded RNG keyed by the prefix.
    struct TableModel {
        seed: u64,
        vocab: usize,
        eos: usize,
        sharpness: f64,
    }

    impl TableModel {
        fn dist(&self, prefix: &[usize]) -> Vec<f64> {
            let key = prefix
                .iter()
                .fold(self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15), |h, &t| {
                    (h ^ (t as u64 + 1)).wrapping_mul(0x0100_0000_01b3).rotate_left(17)
                });
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            let logits: Vec<f64> = (0..self.vocab).map(|_| rng.random::<f64>() * self.sharpness).collect();
            crate::tensor::kernels::log_softmax(&logits)
        }
    }

    impl StepModel for TableModel {
        type State = Vec<usize>;

        fn eos(&self) -> usize {
            self.eos
        }

        fn start(&self) -> Result<(Vec<usize>, Vec<f64>)> {
            Ok((Vec::new(), self.dist(&[])))
        }

        fn advance(&self, state: &mut Vec<usize>, token: usize) -> Result<Vec<f64>> {
            state.push(token);
            Ok(self.dist(state))
        }
    }

    /// Every eos-terminated or depth-capped sequence with its normalized score.
    fn enumerate(m: &TableModel, depth: usize, alpha: f64) -> Vec<(Vec<usize>, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![(Vec::new(), 0.0)];
        while let Some((prefix, cum)) = stack.pop() {
            let d = m.dist(&prefix);
            for (t, &lp) in d.iter().enumerate() {
                if t == m.eos {
                    let s = if prefix.is_empty() { f64::NEG_INFINITY } else { (cum + lp) / (prefix.len() as f64).powf(alpha) };
                    out.push((prefix.clone(), s));
                } else {
                    let mut p = prefix.clone();
                    p.push(t);
                    if p.len() == depth {
                        let s = (cum + lp) / (depth as f64).powf(alpha);
                        out.push((p, s));
                    } else {
                        stack.push((p, cum + lp));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn normalization_examples() {
        let h = BeamHypothesis {
            tokens: vec![4, 5, 6, 7],
            cum_logprob: -4.0,
            finished: true,
        };
        assert_eq!(normalized_score(&h, 1.0), -1.0);
        assert_eq!(normalized_score(&h, 0.0), -4.0);
        let short = BeamHypothesis {
            tokens: vec![4, 5],
            ..h.clone()
        };
        assert!(normalized_score(&h, 1.0) > normalized_score(&short, 1.0));
        let empty = BeamHypothesis {
            tokens: vec![],
            ..h
        };
        assert_eq!(normalized_score(&empty, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn wide_beam_matches_exhaustive_enumeration() {
        for seed in 0..200 {
            let m = TableModel {
                seed,
                vocab: 3,
                eos: 0,
                sharpness: 3.0,
            };
            let cfg = DecodeConfig {
                beam_width: 27,
                max_depth: 3,
                ..Default::default()
            };
            let got = beam_search(&m, &cfg).unwrap();
            let all = enumerate(&m, 3, 1.0);
            let best = all
                .iter()
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            assert_eq!(got.tokens, best.0, "seed {seed}");
            assert!((normalized_score(&got, 1.0) - best.1).abs() < 1e-12);
        }
    }

    #[test]
    fn width_one_is_greedy() {
        for seed in 0..200 {
            let m = TableModel {
                seed,
                vocab: 5,
                eos: 2,
                sharpness: 4.0,
            };
            let cfg = DecodeConfig {
                beam_width: 1,
                max_depth: 6,
                ..Default::default()
            };
            let b = beam_search(&m, &cfg).unwrap();
            let g = greedy(&m, 6).unwrap();
            assert_eq!(b.tokens, g.tokens);
            assert_eq!(b.cum_logprob, g.cum_logprob);
        }
    }

    struct OneHot(Vec<usize>);

    impl StepModel for OneHot {
        type State = usize;

        fn eos(&self) -> usize {
            0
        }

        fn start(&self) -> Result<(usize, Vec<f64>)> {
            Ok((0, self.dist(0)))
        }

        fn advance(&self, state: &mut usize, _: usize) -> Result<Vec<f64>> {
            *state += 1;
            Ok(self.dist(*state))
        }
    }

    impl OneHot {
        fn dist(&self, pos: usize) -> Vec<f64> {
            let target = self.0.get(pos).copied().unwrap_or(0);
            (0..6).map(|t| if t == target { 0.0 } else { f64::NEG_INFINITY }).collect()
        }
    }

    #[test]
    fn deterministic_model_yields_its_sequence_at_any_width() {
        let m = OneHot(vec![3, 1, 4, 5]);
        for w in 1..6 {
            let cfg = DecodeConfig {
                beam_width: w,
                ..Default::default()
            };
            let h = beam_search(&m, &cfg).unwrap();
            assert_eq!(h.tokens, vec![3, 1, 4, 5]);
            assert_eq!(h.cum_logprob, 0.0);
        }
        let capped = beam_search(
            &m,
            &DecodeConfig {
                max_depth: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(capped.tokens, vec![3, 1]);
    }

    #[test]
    fn wider_beams_do_not_score_worse_in_aggregate() {
        let mut totals = [0.0f64; 9];
        for seed in 0..50 {
            let m = TableModel {
                seed: 1000 + seed,
                vocab: 6,
                eos: 1,
                sharpness: 3.0,
            };
            for w in 1..=9 {
                let cfg = DecodeConfig {
                    beam_width: w,
                    max_depth: 5,
                    ..Default::default()
                };
                totals[w - 1] += normalized_score(&beam_search(&m, &cfg).unwrap(), 1.0);
            }
        }
        for w in 0..8 {
            assert!(totals[w + 1] >= totals[w] - 1e-9, "{totals:?}");
        }
    }

    #[test]
    fn pruning_flag_and_config_errors() {
        let m = TableModel {
            seed: 7,
            vocab: 4,
            eos: 0,
            sharpness: 2.0,
        };
        let cfg = DecodeConfig {
            normalize_during_pruning: true,
            beam_width: 64,
            max_depth: 3,
            ..Default::default()
        };
        // with no pruning both readings coincide
        let plain = DecodeConfig {
            normalize_during_pruning: false,
            ..cfg.clone()
        };
        assert_eq!(beam_search(&m, &cfg).unwrap(), beam_search(&m, &plain).unwrap());
        for bad in [
            DecodeConfig { beam_width: 0, ..Default::default() },
            DecodeConfig { max_depth: 0, ..Default::default() },
            DecodeConfig { length_norm_alpha: f64::NAN, ..Default::default() },
        ] {
            assert!(matches!(beam_search(&m, &bad), Err(Error::Config(_))));
        }
    }
}
