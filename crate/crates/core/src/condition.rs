//! Exact conditioning on grammatical termination and distortion of hard
//! masking relative to it.
//!
//! The event conditioned on is "ends with eos within `horizon` tokens and
//! the realized string is in the language". The horizon counts every token,
//! eos included. Survival values satisfy
//! `h(u) = Σ_v p(v | u) h(u v)` with `h(u eos) = [u ∈ L]`.

use std::collections::HashMap;

use num_rational::BigRational;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::decode::{Decoder, ToyLm};
use crate::prob::Scalar;
use crate::reach::EngineState;
use crate::token::{step_token, TokenId, TokenMask};

#[derive(Debug, Error, PartialEq)]
pub enum ConditionError {
    #[error("enumeration needs {needed} leaves (|V|^remaining horizon) but the budget is {budget}")]
    BudgetExceeded { needed: f64, budget: u64 },
    #[error("cannot condition on a null event: h({0:?}) = 0")]
    NullConditioning(String),
    #[error("prefix {0:?} is longer than the horizon")]
    PrefixTooLong(String),
    #[error("prefix contains eos before its end")]
    EosInPrefix,
}

/// Default cap on `|V|^horizon`.
pub const DEFAULT_BUDGET: u64 = 10_000_000;

/// Memoized survival values for one model, grammar and horizon.
pub struct Conditioner<'a, S: Scalar> {
    lm: &'a ToyLm,
    decoder: &'a Decoder,
    horizon: usize,
    budget: u64,
    memo: HashMap<Vec<TokenId>, S>,
}

impl<'a, S: Scalar> Conditioner<'a, S> {
    pub fn new(lm: &'a ToyLm, decoder: &'a Decoder, horizon: usize) -> Self {
        Conditioner {
            lm,
            decoder,
            horizon,
            budget: DEFAULT_BUDGET,
            memo: HashMap::new(),
        }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn check(&self, prefix: &[TokenId]) -> Result<EngineState, ConditionError> {
        let eos = self.decoder.vocab().eos();
        if prefix.len() > self.horizon {
            return Err(ConditionError::PrefixTooLong(self.names(prefix)));
        }
        if prefix.iter().rev().skip(1).any(|&y| y == eos) {
            return Err(ConditionError::EosInPrefix);
        }
        let needed = (self.decoder.vocab().len() as f64).powi((self.horizon - prefix.len()) as i32);
        if needed > self.budget as f64 {
            return Err(ConditionError::BudgetExceeded {
                needed,
                budget: self.budget,
            });
        }
        let mut s = self.decoder.engine().init();
        for &y in prefix.iter().filter(|&&y| y != eos) {
            if !s.is_live() {
                break;
            }
            s = step_token(self.decoder.engine(), &s, self.decoder.vocab(), y);
        }
        Ok(s)
    }

    fn names(&self, prefix: &[TokenId]) -> String {
        self.decoder.vocab().vocab().format_tokens(prefix)
    }

    /// `h(prefix)`.
    pub fn survival(&mut self, prefix: &[TokenId]) -> Result<S, ConditionError> {
        let s = self.check(prefix)?;
        let mut p = prefix.to_vec();
        Ok(self.h(&mut p, &s))
    }

    fn h(&mut self, prefix: &mut Vec<TokenId>, s: &EngineState) -> S {
        let eos = self.decoder.vocab().eos();
        if prefix.last() == Some(&eos) {
            return if self.decoder.engine().accepts(s) { S::one() } else { S::zero() };
        }
        if !s.is_live() || prefix.len() >= self.horizon {
            return S::zero();
        }
        if let Some(v) = self.memo.get(prefix.as_slice()) {
            return v.clone();
        }
        let probs: Vec<S> = self.lm.probs_as(prefix);
        let mut total = S::zero();
        for (y, p) in probs.into_iter().enumerate() {
            if p.is_zero() {
                continue;
            }
            let y = y as TokenId;
            let next = if y == eos {
                s.clone()
            } else {
                step_token(self.decoder.engine(), s, self.decoder.vocab(), y)
            };
            prefix.push(y);
            let h = self.h(prefix, &next);
            prefix.pop();
            total = total + p * h;
        }
        self.memo.insert(prefix.clone(), total.clone());
        total
    }

    /// Survival of every one-token extension.
    pub fn child_survival(&mut self, prefix: &[TokenId]) -> Result<Vec<S>, ConditionError> {
        let s = self.check(prefix)?;
        let eos = self.decoder.vocab().eos();
        if prefix.last() == Some(&eos) || prefix.len() >= self.horizon {
            return Ok(vec![S::zero(); self.decoder.vocab().len()]);
        }
        let mut out = Vec::with_capacity(self.decoder.vocab().len());
        let mut p = prefix.to_vec();
        for y in 0..self.decoder.vocab().len() as TokenId {
            let next = if y == eos || !s.is_live() {
                s.clone()
            } else {
                step_token(self.decoder.engine(), &s, self.decoder.vocab(), y)
            };
            p.push(y);
            out.push(self.h(&mut p, &next));
            p.pop();
        }
        Ok(out)
    }

    /// Conditional next-token distribution `p(v|u) h(uv) / h(u)`.
    pub fn doob_next_dist(&mut self, prefix: &[TokenId]) -> Result<Vec<S>, ConditionError> {
        let hu = self.survival(prefix)?;
        if hu.is_zero() {
            return Err(ConditionError::NullConditioning(self.names(prefix)));
        }
        let hs = self.child_survival(prefix)?;
        let probs: Vec<S> = self.lm.probs_as(prefix);
        Ok(probs
            .into_iter()
            .zip(hs)
            .map(|(p, h)| p * h / hu.clone())
            .collect())
    }

    /// Admissible-token mask at `prefix`.
    pub fn mask(&self, prefix: &[TokenId]) -> Result<TokenMask, ConditionError> {
        let s = self.check(prefix)?;
        Ok(self.decoder.mask(&s))
    }

    /// Hard-masked distribution, computed in the same scalar type.
    pub fn hard_mask_dist(&mut self, prefix: &[TokenId]) -> Result<Vec<S>, ConditionError> {
        let mask = self.mask(prefix)?;
        let probs: Vec<S> = self.lm.probs_as(prefix);
        let z = mask.iter().fold(S::zero(), |a, v| a + probs[v as usize].clone());
        if z.is_zero() {
            return Err(ConditionError::NullConditioning(self.names(prefix)));
        }
        Ok(probs
            .into_iter()
            .enumerate()
            .map(|(v, p)| if mask.contains(v as TokenId) { p / z.clone() } else { S::zero() })
            .collect())
    }

    pub fn distortion(&mut self, prefix: &[TokenId]) -> Result<DistortionReport, ConditionError> {
        let mask = self.mask(prefix)?;
        let hu = self.survival(prefix)?;
        let hs = self.child_survival(prefix)?;
        let q = self.hard_mask_dist(prefix)?;
        let admissible: Vec<TokenId> = mask.iter().collect();
        let h_adm: Vec<S> = admissible.iter().map(|&v| hs[v as usize].clone()).collect();
        let h_min = h_adm.iter().cloned().reduce(|a, b| if b < a { b } else { a }).unwrap_or_else(S::zero);
        let h_max = h_adm.iter().cloned().reduce(|a, b| if b > a { b } else { a }).unwrap_or_else(S::zero);
        let vocab = self.decoder.vocab().vocab();
        let names = |ids: &[TokenId]| ids.iter().map(|&v| vocab.name(v).to_string()).collect::<Vec<_>>();

        let mut report = DistortionReport {
            prefix: names(prefix),
            horizon: self.horizon,
            exact: S::is_exact(),
            admissible: names(&admissible),
            h_prefix: hu.as_f64(),
            h: h_adm.iter().map(S::as_f64).collect(),
            h_min: h_min.as_f64(),
            h_max: h_max.as_f64(),
            gamma: None,
            q: q.iter().map(S::as_f64).collect(),
            p_e: None,
            kl: None,
            tv: None,
            kl_bound: None,
            tv_bound: None,
            equal: false,
            violation: false,
            exact_values: None,
        };
        if hu.is_zero() {
            return Ok(report);
        }
        let pe = self.doob_next_dist(prefix)?;
        report.p_e = Some(pe.iter().map(S::as_f64).collect());
        report.equal = q == pe;
        // TV is computed in the scalar type, KL in f64 from the exact values.
        let tv = q
            .iter()
            .zip(&pe)
            .fold(S::zero(), |a, (x, y)| a + x.abs_diff(y))
            .as_f64()
            / 2.0;
        let mut kl = 0.0;
        for (x, y) in q.iter().zip(&pe) {
            if x.is_zero() {
                continue;
            }
            if y.is_zero() {
                kl = f64::INFINITY;
                break;
            }
            // Ratio first: exact when S is rational.
            kl += x.as_f64() * (x.clone() / y.clone()).as_f64().ln();
        }
        if report.equal {
            kl = 0.0;
        }
        report.kl = Some(kl);
        report.tv = Some(tv);
        if !h_min.is_zero() {
            let gamma = (h_max.clone() / h_min.clone()).as_f64();
            let log_gamma = if h_max == h_min { 0.0 } else { gamma.ln() };
            report.gamma = Some(gamma);
            report.kl_bound = Some(log_gamma);
            report.tv_bound = Some((0.5 * log_gamma).sqrt());
            let tol = S::tolerance();
            report.violation = kl > log_gamma + tol || tv > (0.5 * log_gamma).sqrt() + tol;
        }
        if S::is_exact() {
            report.exact_values = Some(ExactValues {
                h_prefix: hu.to_string(),
                h: h_adm.iter().map(|x| x.to_string()).collect(),
                q: q.iter().map(|x| x.to_string()).collect(),
                p_e: pe.iter().map(|x| x.to_string()).collect(),
            });
        }
        Ok(report)
    }

    /// Draws one sequence from the conditioned process.
    pub fn sample<R: Rng>(&mut self, rng: &mut R) -> Result<Vec<TokenId>, ConditionError> {
        let eos = self.decoder.vocab().eos();
        let mut prefix = Vec::new();
        loop {
            let d = self.doob_next_dist(&prefix)?;
            let w: Vec<f64> = d.iter().map(S::as_f64).collect();
            let y = WeightedIndex::new(&w).expect("positive mass").sample(rng) as TokenId;
            prefix.push(y);
            if y == eos {
                return Ok(prefix);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactValues {
    pub h_prefix: String,
    pub h: Vec<String>,
    pub q: Vec<String>,
    pub p_e: Vec<String>,
}

/// One-step distortion of hard masking from the conditioned distribution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistortionReport {
    pub prefix: Vec<String>,
    pub horizon: usize,
    pub exact: bool,
    pub admissible: Vec<String>,
    pub h_prefix: f64,
    /// Survival of each admissible extension, in `admissible` order.
    pub h: Vec<f64>,
    pub h_min: f64,
    pub h_max: f64,
    /// `h_max / h_min`; `None` when `h_min = 0` (spread is infinite and the
    /// bounds are vacuous).
    pub gamma: Option<f64>,
    pub q: Vec<f64>,
    pub p_e: Option<Vec<f64>>,
    pub kl: Option<f64>,
    pub tv: Option<f64>,
    pub kl_bound: Option<f64>,
    pub tv_bound: Option<f64>,
    /// Hard masking coincides with conditioning at this prefix.
    pub equal: bool,
    pub violation: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_values: Option<ExactValues>,
}

/// Runs the distortion analysis in exact arithmetic for table models and
/// in `f64` for random ones.
pub fn distortion(
    lm: &ToyLm,
    decoder: &Decoder,
    prefix: &[TokenId],
    horizon: usize,
) -> Result<DistortionReport, ConditionError> {
    if lm.is_exact() {
        Conditioner::<BigRational>::new(lm, decoder, horizon).distortion(prefix)
    } else {
        Conditioner::<f64>::new(lm, decoder, horizon).distortion(prefix)
    }
}

/// Language `{a, b}` under a model whose every admissible branch survives
/// with probability one, so masking equals conditioning.
pub fn constant_survival_example() -> (crate::grammar::Cfg, crate::token::Vocab, ToyLm) {
    use crate::prob::ratio;
    let g = crate::grammar::parse_grammar("S -> 'a' | 'b'\n").expect("fixed grammar");
    let vocab = crate::token::Vocab::singleton(&g);
    let table = HashMap::from([(vec![], vec![ratio(3, 10), ratio(7, 10), ratio(0, 1)])]);
    let lm = ToyLm::table(3, vec![ratio(0, 1), ratio(0, 1), ratio(1, 1)], table).expect("valid table");
    (g, vocab, lm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::separation_example;
    use crate::grammar::{builtin, Builtin};
    use crate::prob::ratio;
    use crate::token::Vocab;
    use rand::SeedableRng;

    #[test]
    fn separation_survival_and_doob() {
        let (g, v, lm) = separation_example();
        let d = Decoder::new(&g, &v).unwrap();
        let mut c = Conditioner::<BigRational>::new(&lm, &d, 3);
        assert_eq!(c.survival(&[]).unwrap(), ratio(64, 1000));
        let pe = c.doob_next_dist(&[]).unwrap();
        assert_eq!(pe, vec![ratio(15, 16), ratio(1, 16), ratio(0, 1)]);
        // dead prefix and accepted termination
        assert_eq!(c.survival(&[1, 1]).unwrap(), ratio(0, 1));
        assert_eq!(c.survival(&[0, 2]).unwrap(), ratio(1, 1));
        // horizon 2 cannot reach "b a <eos>"
        let mut short = Conditioner::<BigRational>::new(&lm, &d, 2);
        assert_eq!(short.survival(&[]).unwrap(), ratio(6, 100));
    }

    #[test]
    fn separation_distortion() {
        let (g, v, lm) = separation_example();
        let d = Decoder::new(&g, &v).unwrap();
        let r = distortion(&lm, &d, &[], 3).unwrap();
        assert_eq!(r.q[..2], [0.6, 0.4]);
        assert_eq!(r.p_e.as_ref().unwrap()[..2], [0.9375, 0.0625]);
        assert!(!r.equal && !r.violation);
        let kl = 0.6 * (0.6f64 / 0.9375).ln() + 0.4 * (0.4f64 / 0.0625).ln();
        assert!((r.kl.unwrap() - kl).abs() < 1e-12);
        assert!((r.tv.unwrap() - 0.3375).abs() < 1e-12);
        assert!((r.gamma.unwrap() - 10.0).abs() < 1e-12);
        assert!(r.kl.unwrap() <= r.kl_bound.unwrap());
    }

    #[test]
    fn constant_survival_means_no_distortion() {
        let (g, v, lm) = constant_survival_example();
        let d = Decoder::new(&g, &v).unwrap();
        let r = distortion(&lm, &d, &[], 4).unwrap();
        assert!(r.equal);
        assert_eq!(r.kl, Some(0.0));
        assert_eq!(r.tv, Some(0.0));
        assert_eq!(r.gamma, Some(1.0));
    }

    #[test]
    fn recursion_holds_on_random_models() {
        let g = builtin(Builtin::G1);
        let v = Vocab::singleton(&g);
        let d = Decoder::new(&g, &v).unwrap();
        let lm = ToyLm::random(5, v.len());
        let mut c = Conditioner::<f64>::new(&lm, &d, 6);
        for prefix in [vec![], vec![0], vec![0, 0], vec![0, 1]] {
            let h = c.survival(&prefix).unwrap();
            let hs = c.child_survival(&prefix).unwrap();
            let p = lm.probs(&prefix);
            let s: f64 = p.iter().zip(&hs).map(|(a, b)| a * b).sum();
            assert!((h - s).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&h));
        }
        let r = distortion(&lm, &d, &[], 6).unwrap();
        assert!(!r.violation);
    }

    #[test]
    fn budget_guard() {
        let (g, v, lm) = separation_example();
        let d = Decoder::new(&g, &v).unwrap();
        let mut c = Conditioner::<BigRational>::new(&lm, &d, 20).with_budget(1000);
        assert!(matches!(c.survival(&[]), Err(ConditionError::BudgetExceeded { .. })));
    }

    #[test]
    fn conditioned_samples_are_members() {
        let (g, v, lm) = separation_example();
        let d = Decoder::new(&g, &v).unwrap();
        let mut c = Conditioner::<BigRational>::new(&lm, &d, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let y = c.sample(&mut rng).unwrap();
            assert!(d.is_viable(&y));
        }
    }
}
