//! Toy autoregressive models over a vocabulary.

use std::collections::HashMap;

use num_rational::BigRational;
use num_traits::{One, Signed};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;
use thiserror::Error;

use crate::prob::{ratio_from_json, Scalar};
use crate::token::{TokenId, Vocab};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LmError {
    #[error("model JSON: {0}")]
    Json(String),
    #[error("table model needs a `default` distribution")]
    MissingDefault,
    #[error("distribution for {context} has {found} entries, vocabulary has {expected}")]
    Length {
        context: String,
        found: usize,
        expected: usize,
    },
    #[error("distribution for {context}: {message}")]
    Invalid { context: String, message: String },
    #[error("unknown token {0:?} in table key")]
    UnknownToken(String),
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Table {
        default: Vec<BigRational>,
        table: HashMap<Vec<TokenId>, Vec<BigRational>>,
    },
    Random {
        seed: u64,
    },
}

/// Next-token model `p(y_t | y_<t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyLm {
    kind: Kind,
    vocab_size: usize,
    vocab_ref: Option<String>,
}

fn check_dist(context: &str, d: &[BigRational], expected: usize) -> Result<(), LmError> {
    if d.len() != expected {
        return Err(LmError::Length {
            context: context.to_string(),
            found: d.len(),
            expected,
        });
    }
    if d.iter().any(|p| p.is_negative()) {
        return Err(LmError::Invalid {
            context: context.to_string(),
            message: "negative probability".into(),
        });
    }
    let s: BigRational = d.iter().sum();
    if s != BigRational::one() {
        return Err(LmError::Invalid {
            context: context.to_string(),
            message: format!("probabilities sum to {s}, not 1"),
        });
    }
    Ok(())
}

impl ToyLm {
    /// Table model; prefixes not in `table` use `default`.
    pub fn table(
        vocab_size: usize,
        default: Vec<BigRational>,
        table: HashMap<Vec<TokenId>, Vec<BigRational>>,
    ) -> Result<Self, LmError> {
        check_dist("default", &default, vocab_size)?;
        for (k, d) in &table {
            check_dist(&format!("prefix {k:?}"), d, vocab_size)?;
        }
        Ok(ToyLm {
            kind: Kind::Table { default, table },
            vocab_size,
            vocab_ref: None,
        })
    }

    /// Logits are i.i.d. standard normal draws seeded by `(seed, prefix)`.
    pub fn random(seed: u64, vocab_size: usize) -> Self {
        ToyLm {
            kind: Kind::Random { seed },
            vocab_size,
            vocab_ref: None,
        }
    }

    /// Parses `{vocab_ref, default, table}` or `{vocab_ref, seed}`. Table
    /// keys are space-separated token names; `""` is the empty prefix.
    /// Probabilities may be JSON numbers or `"p/q"` strings.
    pub fn from_json(text: &str, vocab: &Vocab) -> Result<Self, LmError> {
        let v: Value = serde_json::from_str(text).map_err(|e| LmError::Json(e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| LmError::Json("expected an object".into()))?;
        let vocab_ref = obj.get("vocab_ref").and_then(Value::as_str).map(str::to_string);
        if let Some(seed) = obj.get("seed") {
            let seed = seed
                .as_u64()
                .ok_or_else(|| LmError::Json("`seed` must be a nonnegative integer".into()))?;
            let mut lm = ToyLm::random(seed, vocab.len());
            lm.vocab_ref = vocab_ref;
            return Ok(lm);
        }
        let dist = |context: &str, v: &Value| -> Result<Vec<BigRational>, LmError> {
            let arr = v.as_array().ok_or_else(|| LmError::Invalid {
                context: context.to_string(),
                message: "expected an array".into(),
            })?;
            arr.iter()
                .map(|x| {
                    ratio_from_json(x).ok_or_else(|| LmError::Invalid {
                        context: context.to_string(),
                        message: format!("not a probability: {x}"),
                    })
                })
                .collect()
        };
        let default = dist("default", obj.get("default").ok_or(LmError::MissingDefault)?)?;
        let mut table = HashMap::new();
        if let Some(t) = obj.get("table") {
            let t = t
                .as_object()
                .ok_or_else(|| LmError::Json("`table` must be an object".into()))?;
            for (key, d) in t {
                let prefix = key
                    .split_whitespace()
                    .map(|n| vocab.id_of(n).map_err(|_| LmError::UnknownToken(n.to_string())))
                    .collect::<Result<Vec<_>, _>>()?;
                table.insert(prefix, dist(key, d)?);
            }
        }
        let mut lm = ToyLm::table(vocab.len(), default, table)?;
        lm.vocab_ref = vocab_ref;
        Ok(lm)
    }

    pub fn to_json(&self, vocab: &Vocab) -> String {
        let mut obj = serde_json::Map::new();
        if let Some(r) = &self.vocab_ref {
            obj.insert("vocab_ref".into(), Value::String(r.clone()));
        }
        match &self.kind {
            Kind::Random { seed } => {
                obj.insert("seed".into(), Value::from(*seed));
            }
            Kind::Table { default, table } => {
                let d = |v: &[BigRational]| {
                    Value::Array(v.iter().map(|p| Value::String(p.to_string())).collect())
                };
                obj.insert("default".into(), d(default));
                let mut keys: Vec<_> = table.keys().collect();
                keys.sort();
                let mut t = serde_json::Map::new();
                for k in keys {
                    t.insert(vocab.format_tokens(k), d(&table[k]));
                }
                obj.insert("table".into(), Value::Object(t));
            }
        }
        serde_json::to_string_pretty(&Value::Object(obj)).expect("model serializes")
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn vocab_ref(&self) -> Option<&str> {
        self.vocab_ref.as_deref()
    }

    /// Table models carry exact rational probabilities.
    pub fn is_exact(&self) -> bool {
        matches!(self.kind, Kind::Table { .. })
    }

    /// Exact distribution, for table models only.
    pub fn probs_exact(&self, prefix: &[TokenId]) -> Option<&[BigRational]> {
        match &self.kind {
            Kind::Table { default, table } => Some(table.get(prefix).unwrap_or(default)),
            Kind::Random { .. } => None,
        }
    }

    pub fn probs_as<S: Scalar>(&self, prefix: &[TokenId]) -> Vec<S> {
        match &self.kind {
            Kind::Table { .. } => self
                .probs_exact(prefix)
                .expect("table model")
                .iter()
                .map(S::from_ratio)
                .collect(),
            Kind::Random { .. } => softmax(&self.logits(prefix)).into_iter().map(S::from_float).collect(),
        }
    }

    pub fn probs(&self, prefix: &[TokenId]) -> Vec<f64> {
        self.probs_as::<f64>(prefix)
    }

    /// Natural-log scores; zero-probability tokens get `-inf`.
    pub fn logits(&self, prefix: &[TokenId]) -> Vec<f64> {
        match &self.kind {
            Kind::Table { .. } => self
                .probs(prefix)
                .into_iter()
                .map(|p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
                .collect(),
            Kind::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(*seed, prefix));
                (0..self.vocab_size).map(|_| StandardNormal.sample(&mut rng)).collect()
            }
        }
    }
}

/// SplitMix64-style mixing of the seed with the prefix.
fn mix(seed: u64, prefix: &[TokenId]) -> u64 {
    let step = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    let mut h = step(seed);
    h = step(h ^ prefix.len() as u64);
    for &t in prefix {
        h = step(h ^ t as u64);
    }
    h
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}
