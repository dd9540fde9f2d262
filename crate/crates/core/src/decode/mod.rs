//! Masked sampling, beam search and oracle-invariance checking.

mod lm;

pub use lm::{softmax, LmError, ToyLm};

use std::collections::{HashMap, VecDeque};
use std::time::Instant;

use num_rational::BigRational;
use num_traits::Zero;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::counters::CounterVector;
use crate::grammar::{parse_grammar, Cfg, GrammarError};
use crate::prob::ratio;
use crate::reach::{Engine, EngineState};
use crate::token::{
    admissible_tokens, admissible_tokens_counted, step_token_counted, BoundVocab, TokenEntry,
    TokenId, TokenMask, Vocab, VocabError, EOS_NAME,
};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("no admissible token carries probability mass at prefix {0:?}")]
    DeadEnd(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("model covers {model} tokens but the vocabulary has {vocab}")]
    VocabSize { model: usize, vocab: usize },
    #[error("invalid decoding configuration: {0}")]
    Config(String),
}

/// Softmax restricted to admissible entries; the rest are exactly zero.
///
/// Excluded entries never enter the normalizing sum. Errors if no
/// admissible entry has a finite logit.
pub fn hard_mask(logits: &[f64], mask: &TokenMask) -> Result<Vec<f64>, DecodeError> {
    let m = mask
        .iter()
        .map(|v| logits[v as usize])
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(DecodeError::DeadEnd(String::new()));
    }
    let mut out = vec![0.0; logits.len()];
    let mut z = 0.0;
    for v in mask.iter() {
        let e = (logits[v as usize] - m).exp();
        out[v as usize] = e;
        z += e;
    }
    for x in &mut out {
        *x /= z;
    }
    Ok(out)
}

/// Exact renormalized restriction of `probs` to the mask.
pub fn hard_mask_exact(probs: &[BigRational], mask: &TokenMask) -> Option<Vec<BigRational>> {
    let z: BigRational = mask.iter().map(|v| &probs[v as usize]).sum();
    if z.is_zero() {
        return None;
    }
    Some(
        probs
            .iter()
            .enumerate()
            .map(|(v, p)| {
                if mask.contains(v as TokenId) {
                    p / &z
                } else {
                    BigRational::zero()
                }
            })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeConfig {
    pub beam: usize,
    /// Maximum number of tokens, counting the end-of-sequence token.
    pub max_len: usize,
    pub seed: u64,
    /// Record wall-clock phase timings in traces.
    pub timings: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 1,
            max_len: 32,
            seed: 0,
            timings: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepTrace {
    pub t: usize,
    /// Admissible tokens at this step, eos included.
    pub admissible: usize,
    pub token: TokenId,
    pub token_name: String,
    pub p_pre: f64,
    pub p_post: f64,
    /// Work done in this step.
    pub counters: CounterVector,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_mask_ns: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_update_ns: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub tokens: Vec<TokenId>,
    /// Ended with eos; otherwise the length limit was hit.
    pub terminated: bool,
    pub trace: Vec<StepTrace>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub terminated: bool,
    /// Work attributable to producing this hypothesis: masks computed at
    /// each of its prefixes plus the engine steps along it.
    pub counters: CounterVector,
    #[serde(skip)]
    pub state: EngineState,
}

#[derive(Clone, Debug, Serialize)]
pub struct BeamStep {
    pub t: usize,
    /// Work per hypothesis expanded at this step.
    pub per_hypothesis: Vec<CounterVector>,
    pub total: CounterVector,
}

#[derive(Clone, Debug, Serialize)]
pub struct BeamResult {
    pub hypotheses: Vec<Hypothesis>,
    pub steps: Vec<BeamStep>,
    /// All engine work performed, including pruned branches.
    pub total: CounterVector,
}

/// Grammar engine and bound vocabulary for decoding.
#[derive(Clone, Debug)]
pub struct Decoder {
    engine: Engine,
    vocab: BoundVocab,
}

fn elapsed_ns(start: Option<Instant>) -> Option<u64> {
    start.map(|s| s.elapsed().as_nanos() as u64)
}

impl Decoder {
    pub fn new(g: &Cfg, vocab: &Vocab) -> Result<Self, DecodeError> {
        Ok(Decoder {
            engine: Engine::for_grammar(g)?,
            vocab: vocab.bind(g)?,
        })
    }

    pub fn from_parts(engine: Engine, vocab: BoundVocab) -> Self {
        Decoder { engine, vocab }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn vocab(&self) -> &BoundVocab {
        &self.vocab
    }

    fn check(&self, lm: &ToyLm) -> Result<(), DecodeError> {
        if lm.vocab_size() != self.vocab.len() {
            return Err(DecodeError::VocabSize {
                model: lm.vocab_size(),
                vocab: self.vocab.len(),
            });
        }
        Ok(())
    }

    pub fn mask(&self, s: &EngineState) -> TokenMask {
        admissible_tokens(&self.engine, s, &self.vocab)
    }

    /// Ancestral sampling from the hard-masked process with an RNG seeded
    /// from `cfg.seed`.
    pub fn sample(&self, lm: &ToyLm, cfg: &DecodeConfig) -> Result<Sample, DecodeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        self.sample_with(lm, cfg, &mut rng)
    }

    pub fn sample_with<R: Rng>(
        &self,
        lm: &ToyLm,
        cfg: &DecodeConfig,
        rng: &mut R,
    ) -> Result<Sample, DecodeError> {
        self.check(lm)?;
        if cfg.max_len == 0 {
            return Err(DecodeError::Config("max length must be at least 1".into()));
        }
        let mut state = self.engine.init();
        let mut tokens = Vec::new();
        let mut trace = Vec::new();
        let eos = self.vocab.eos();
        for t in 1..=cfg.max_len {
            let mut step = CounterVector::default();
            let clock = cfg.timings.then(Instant::now);
            let mask = admissible_tokens_counted(&self.engine, &state, &self.vocab, &mut step);
            let logits = lm.logits(&tokens);
            let q = hard_mask(&logits, &mask)
                .map_err(|_| DecodeError::DeadEnd(self.vocab.vocab().format_tokens(&tokens)))?;
            let t_mask_ns = elapsed_ns(clock);
            let y = WeightedIndex::new(&q)
                .expect("masked distribution has positive mass")
                .sample(rng) as TokenId;
            let p = softmax(&logits);
            let clock = cfg.timings.then(Instant::now);
            if y != eos {
                state = step_token_counted(&self.engine, &state, &self.vocab, y, &mut step);
            }
            trace.push(StepTrace {
                t,
                admissible: mask.count(),
                token: y,
                token_name: self.vocab.vocab().name(y).to_string(),
                p_pre: p[y as usize],
                p_post: q[y as usize],
                counters: step,
                t_mask_ns,
                t_update_ns: elapsed_ns(clock),
            });
            tokens.push(y);
            if y == eos {
                return Ok(Sample {
                    tokens,
                    terminated: true,
                    trace,
                });
            }
        }
        Ok(Sample {
            tokens,
            terminated: false,
            trace,
        })
    }

    /// Beam search over masked log-probabilities. Every hypothesis owns its
    /// engine state. Ties break on the token sequence.
    pub fn beam(&self, lm: &ToyLm, cfg: &DecodeConfig) -> Result<BeamResult, DecodeError> {
        self.check(lm)?;
        if cfg.beam == 0 || cfg.max_len == 0 {
            return Err(DecodeError::Config("beam width and max length must be at least 1".into()));
        }
        let eos = self.vocab.eos();
        let mut total = CounterVector::default();
        let mut init_work = CounterVector::default();
        let init = self.engine.init_counted(&mut init_work);
        total += init_work;
        let mut beam = vec![Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            terminated: false,
            counters: init_work,
            state: init,
        }];
        let mut steps = Vec::new();
        for t in 1..=cfg.max_len {
            if beam.iter().all(|h| h.terminated) {
                break;
            }
            let mut candidates: Vec<(f64, Vec<TokenId>, usize, TokenId)> = Vec::new();
            let mut mask_work = vec![CounterVector::default(); beam.len()];
            for (hi, h) in beam.iter().enumerate() {
                if h.terminated {
                    continue;
                }
                let mask = admissible_tokens_counted(&self.engine, &h.state, &self.vocab, &mut mask_work[hi]);
                let Ok(q) = hard_mask(&lm.logits(&h.tokens), &mask) else {
                    continue;
                };
                for y in mask.iter() {
                    if q[y as usize] > 0.0 {
                        let mut toks = h.tokens.clone();
                        toks.push(y);
                        candidates.push((h.log_prob + q[y as usize].ln(), toks, hi, y));
                    }
                }
            }
            for (hi, h) in beam.iter().enumerate() {
                if h.terminated {
                    candidates.push((h.log_prob, h.tokens.clone(), hi, eos));
                }
            }
            if candidates.is_empty() {
                return Err(DecodeError::DeadEnd(String::new()));
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            candidates.truncate(cfg.beam);

            let mut work = mask_work.clone();
            let mut next = Vec::with_capacity(candidates.len());
            for (score, toks, hi, y) in candidates {
                let parent = &beam[hi];
                if parent.terminated {
                    next.push(parent.clone());
                    continue;
                }
                let mut upd = CounterVector::default();
                let state = if y == eos {
                    parent.state.clone()
                } else {
                    step_token_counted(&self.engine, &parent.state, &self.vocab, y, &mut upd)
                };
                work[hi] += upd;
                next.push(Hypothesis {
                    tokens: toks,
                    log_prob: score,
                    terminated: y == eos,
                    counters: parent.counters + mask_work[hi] + upd,
                    state,
                });
            }
            let live: Vec<CounterVector> = beam
                .iter()
                .zip(&work)
                .filter(|(h, _)| !h.terminated)
                .map(|(_, w)| *w)
                .collect();
            let step_total: CounterVector = live.iter().copied().sum();
            total += step_total;
            steps.push(BeamStep {
                t,
                per_hypothesis: live,
                total: step_total,
            });
            beam = next;
        }
        Ok(BeamResult {
            hypotheses: beam,
            steps,
            total,
        })
    }

    /// Counters from re-running one hypothesis alone: init, then a mask and
    /// a step at every prefix.
    pub fn replay_counters(&self, tokens: &[TokenId]) -> CounterVector {
        let mut c = CounterVector::default();
        let mut s = self.engine.init_counted(&mut c);
        for &y in tokens {
            admissible_tokens_counted(&self.engine, &s, &self.vocab, &mut c);
            if y != self.vocab.eos() {
                s = step_token_counted(&self.engine, &s, &self.vocab, y, &mut c);
            }
        }
        c
    }

    /// Whether `tokens` realizes a prefix of some sentence, or a sentence if
    /// it ends in eos.
    pub fn is_viable(&self, tokens: &[TokenId]) -> bool {
        let eos = self.vocab.eos();
        let (body, ends) = match tokens.split_last() {
            Some((&last, body)) if last == eos => (body, true),
            _ => (tokens, false),
        };
        if body.contains(&eos) {
            return false;
        }
        let w = self.vocab.realize(body).expect("valid token ids");
        let s = self.engine.run(&w);
        s.is_live() && (!ends || self.engine.accepts(&s))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MaskMismatch {
    /// Token names of the prefix at which masks differ.
    pub prefix: Vec<String>,
    /// Tokens admissible under the first grammar only.
    pub only_left: Vec<String>,
    /// Tokens admissible under the second grammar only.
    pub only_right: Vec<String>,
}

impl MaskMismatch {
    /// The prefix extended by the first differing token, as a string of
    /// token names.
    pub fn witness(&self) -> String {
        let mut w = self.prefix.clone();
        if let Some(t) = self.only_left.first().or(self.only_right.first()) {
            w.push(t.clone());
        }
        w.join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InvarianceReport {
    pub max_len: usize,
    pub prefixes_checked: usize,
    pub mismatch: Option<MaskMismatch>,
}

/// Compares admissible-token masks of two grammars on every live token
/// prefix of length up to `max_len`, breadth first. Stops at the first
/// difference.
pub fn oracle_invariance_check(
    g1: &Cfg,
    g2: &Cfg,
    vocab: &Vocab,
    max_len: usize,
) -> Result<InvarianceReport, DecodeError> {
    let d1 = Decoder::new(g1, vocab)?;
    let d2 = Decoder::new(g2, vocab)?;
    let mut queue = VecDeque::from([(Vec::<TokenId>::new(), d1.engine.init(), d2.engine.init())]);
    let mut checked = 0;
    while let Some((prefix, s1, s2)) = queue.pop_front() {
        let m1 = d1.mask(&s1);
        let m2 = d2.mask(&s2);
        checked += 1;
        if m1 != m2 {
            let names = |f: &dyn Fn(TokenId) -> bool| -> Vec<String> {
                (0..vocab.len() as TokenId)
                    .filter(|&v| f(v))
                    .map(|v| vocab.name(v).to_string())
                    .collect()
            };
            return Ok(InvarianceReport {
                max_len,
                prefixes_checked: checked,
                mismatch: Some(MaskMismatch {
                    prefix: prefix.iter().map(|&v| vocab.name(v).to_string()).collect(),
                    only_left: names(&|v| m1.contains(v) && !m2.contains(v)),
                    only_right: names(&|v| m2.contains(v) && !m1.contains(v)),
                }),
            });
        }
        if prefix.len() == max_len {
            continue;
        }
        for y in m1.iter().filter(|&y| y != vocab.eos()) {
            let n1 = step_token_counted(&d1.engine, &s1, &d1.vocab, y, &mut CounterVector::default());
            let n2 = step_token_counted(&d2.engine, &s2, &d2.vocab, y, &mut CounterVector::default());
            let mut p = prefix.clone();
            p.push(y);
            queue.push_back((p, n1, n2));
        }
    }
    Ok(InvarianceReport {
        max_len,
        prefixes_checked: checked,
        mismatch: None,
    })
}

/// Two-sentence language `{a, ba}` with a table model under which masking
/// and global conditioning disagree on the first token.
pub fn separation_example() -> (Cfg, Vocab, ToyLm) {
    let g = parse_grammar("S -> 'a' | 'b' 'a'\n").expect("fixed grammar");
    let vocab = Vocab::singleton(&g);
    let (a, b) = (0, 1);
    let table = HashMap::from([
        (vec![], vec![ratio(6, 10), ratio(4, 10), ratio(0, 1)]),
        (vec![a], vec![ratio(9, 10), ratio(0, 1), ratio(1, 10)]),
        (vec![b], vec![ratio(1, 100), ratio(99, 100), ratio(0, 1)]),
    ]);
    let lm = ToyLm::table(3, vec![ratio(0, 1), ratio(0, 1), ratio(1, 1)], table).expect("valid table");
    (g, vocab, lm)
}

/// Vocabulary with single-terminal tokens, every two-terminal token, and
/// eos.
pub fn pair_vocab(g: &Cfg) -> Vocab {
    let mut tokens = Vec::new();
    for t in g.terminals() {
        tokens.push(vec![t.clone()]);
    }
    for x in g.terminals() {
        for y in g.terminals() {
            tokens.push(vec![x.clone(), y.clone()]);
        }
    }
    let mut entries: Vec<TokenEntry> = tokens
        .into_iter()
        .enumerate()
        .map(|(i, terminals)| TokenEntry {
            id: i as TokenId,
            name: terminals.concat(),
            terminals,
        })
        .collect();
    entries.push(TokenEntry {
        id: entries.len() as TokenId,
        name: EOS_NAME.into(),
        terminals: Vec::new(),
    });
    Vocab::new(entries).expect("pair vocabulary is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::earley_accepts;
    use crate::grammar::{builtin, Builtin};

    fn mask_of(len: usize, eos: TokenId, set: &[TokenId]) -> TokenMask {
        let mut m = TokenMask::empty(len, eos);
        for &v in set {
            m.set(v);
        }
        m
    }

    #[test]
    fn hard_mask_examples() {
        let q = hard_mask(&[1.0, 1.0, 1.0], &mask_of(3, 2, &[0, 1])).unwrap();
        assert_eq!(q, vec![0.5, 0.5, 0.0]);
        let q = hard_mask(&[0.6f64.ln(), 0.4f64.ln(), f64::NEG_INFINITY], &mask_of(3, 2, &[0, 1, 2])).unwrap();
        assert!((q[1] - 0.4).abs() < 1e-12);
        let q = hard_mask(&[3.0, -1.0, 0.5], &mask_of(3, 2, &[2])).unwrap();
        assert_eq!(q, vec![0.0, 0.0, 1.0]);
        assert!(hard_mask(&[0.0, f64::NEG_INFINITY], &mask_of(2, 0, &[1])).is_err());
    }

    #[test]
    fn separation_model_values() {
        let (g, v, lm) = separation_example();
        let d = Decoder::new(&g, &v).unwrap();
        let m = d.mask(&d.engine().init());
        let q = hard_mask_exact(lm.probs_exact(&[]).unwrap(), &m).unwrap();
        assert_eq!(q[1], ratio(2, 5));
    }

    #[test]
    fn samples_are_sound_and_deterministic() {
        for b in Builtin::ALL {
            let g = builtin(b);
            let v = Vocab::singleton(&g);
            let d = Decoder::new(&g, &v).unwrap();
            let lm = ToyLm::random(7, v.len());
            for seed in 0..30 {
                let cfg = DecodeConfig { seed, max_len: 24, ..Default::default() };
                let s = d.sample(&lm, &cfg).unwrap();
                assert_eq!(s, d.sample(&lm, &cfg).unwrap());
                if s.terminated {
                    let w = d.vocab().realize(&s.tokens).unwrap();
                    assert!(earley_accepts(&g, &w), "{b}");
                }
                for st in &s.trace {
                    assert!(st.p_post >= st.p_pre - 1e-15);
                }
            }
        }
    }

    #[test]
    fn beam_of_one_is_greedy() {
        let g = builtin(Builtin::G1);
        let v = Vocab::singleton(&g);
        let d = Decoder::new(&g, &v).unwrap();
        let lm = ToyLm::random(3, v.len());
        let r = d.beam(&lm, &DecodeConfig { beam: 1, max_len: 12, ..Default::default() }).unwrap();
        let mut s = d.engine().init();
        let mut toks = Vec::new();
        for _ in 0..12 {
            let q = hard_mask(&lm.logits(&toks), &d.mask(&s)).unwrap();
            let y = (0..q.len()).max_by(|&a, &b| q[a].total_cmp(&q[b]).then(b.cmp(&a))).unwrap() as TokenId;
            toks.push(y);
            if y == v.eos() {
                break;
            }
            s = crate::token::step_token(d.engine(), &s, d.vocab(), y);
        }
        assert_eq!(r.hypotheses[0].tokens, toks);
    }

    #[test]
    fn beam_hypotheses_are_viable_and_additive() {
        let g = builtin(Builtin::G1);
        let v = Vocab::singleton(&g);
        let d = Decoder::new(&g, &v).unwrap();
        let lm = ToyLm::random(11, v.len());
        let r = d.beam(&lm, &DecodeConfig { beam: 4, max_len: 10, ..Default::default() }).unwrap();
        assert_eq!(r.hypotheses.len(), 4);
        for h in &r.hypotheses {
            assert!(d.is_viable(&h.tokens));
            assert_eq!(h.counters, d.replay_counters(&h.tokens));
        }
        let summed: CounterVector = r.steps.iter().flat_map(|s| s.per_hypothesis.iter().copied()).sum();
        let init = d.replay_counters(&[]);
        assert_eq!(r.total, summed + init);
    }

    #[test]
    fn invariance_examples() {
        let g1 = builtin(Builtin::G1);
        let v = Vocab::singleton(&g1);
        let r = oracle_invariance_check(&g1, &builtin(Builtin::G2), &v, 6).unwrap();
        assert_eq!(r.mismatch, None);
        let r = oracle_invariance_check(&g1, &builtin(Builtin::G3), &v, 6).unwrap();
        assert_eq!(r.mismatch.unwrap().witness(), "b");
    }
}
