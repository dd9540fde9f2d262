//! Vocabularies, the tokenizer homomorphism, and token-level admissibility.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counters::CounterVector;
use crate::grammar::{Cfg, TermId};
use crate::reach::{Engine, EngineState};

pub type TokenId = u32;

pub const EOS_NAME: &str = "<eos>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("vocabulary JSON: {0}")]
    Json(String),
    #[error("token ids must be dense 0..{expected}; found id {found}")]
    NonDenseIds { expected: usize, found: TokenId },
    #[error("vocabulary must contain exactly one {EOS_NAME} token, found {0}")]
    EosCount(usize),
    #[error("token {0:?} has an empty terminal string")]
    EmptyToken(String),
    #[error("token {token:?} uses terminal {terminal:?}, which the grammar does not declare")]
    UnknownTerminal { token: String, terminal: String },
    #[error("unknown token id {0}")]
    UnknownId(TokenId),
    #[error("unknown token name {0:?}")]
    UnknownName(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub id: TokenId,
    pub name: String,
    /// Terminal names; absent for the end-of-sequence token.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terminals: Vec<String>,
}

/// A vocabulary with dense ids and exactly one end-of-sequence token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<TokenEntry>,
    eos: TokenId,
}

impl Vocab {
    pub fn new(mut tokens: Vec<TokenEntry>) -> Result<Self, VocabError> {
        tokens.sort_by_key(|t| t.id);
        for (i, t) in tokens.iter().enumerate() {
            if t.id as usize != i {
                return Err(VocabError::NonDenseIds {
                    expected: tokens.len(),
                    found: t.id,
                });
            }
        }
        let eos: Vec<TokenId> = tokens.iter().filter(|t| t.name == EOS_NAME).map(|t| t.id).collect();
        if eos.len() != 1 {
            return Err(VocabError::EosCount(eos.len()));
        }
        for t in &tokens {
            if t.name != EOS_NAME && t.terminals.is_empty() {
                return Err(VocabError::EmptyToken(t.name.clone()));
            }
            if t.name == EOS_NAME && !t.terminals.is_empty() {
                return Err(VocabError::EmptyToken(t.name.clone()));
            }
        }
        Ok(Vocab { tokens, eos: eos[0] })
    }

    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let tokens: Vec<TokenEntry> =
            serde_json::from_str(text).map_err(|e| VocabError::Json(e.to_string()))?;
        Vocab::new(tokens)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.tokens).expect("vocab serializes")
    }

    /// One token per terminal, named after it, followed by `<eos>`.
    pub fn singleton(g: &Cfg) -> Self {
        let mut tokens: Vec<TokenEntry> = g
            .terminals()
            .iter()
            .enumerate()
            .map(|(i, t)| TokenEntry {
                id: i as TokenId,
                name: t.clone(),
                terminals: vec![t.clone()],
            })
            .collect();
        tokens.push(TokenEntry {
            id: tokens.len() as TokenId,
            name: EOS_NAME.to_string(),
            terminals: Vec::new(),
        });
        Vocab::new(tokens).expect("singleton vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn tokens(&self) -> &[TokenEntry] {
        &self.tokens
    }

    pub fn name(&self, id: TokenId) -> &str {
        &self.tokens[id as usize].name
    }

    pub fn id_of(&self, name: &str) -> Result<TokenId, VocabError> {
        self.tokens
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.id)
            .ok_or_else(|| VocabError::UnknownName(name.to_string()))
    }

    /// Parses whitespace-separated token names.
    pub fn parse_tokens(&self, text: &str) -> Result<Vec<TokenId>, VocabError> {
        text.split_whitespace().map(|n| self.id_of(n)).collect()
    }

    pub fn format_tokens(&self, ys: &[TokenId]) -> String {
        ys.iter().map(|&y| self.name(y)).collect::<Vec<_>>().join(" ")
    }

    /// Resolves terminal names against `g`.
    pub fn bind(&self, g: &Cfg) -> Result<BoundVocab, VocabError> {
        let mut realization = Vec::with_capacity(self.tokens.len());
        for t in &self.tokens {
            let mut ids = Vec::with_capacity(t.terminals.len());
            for name in &t.terminals {
                ids.push(g.terminal_id(name).ok_or_else(|| VocabError::UnknownTerminal {
                    token: t.name.clone(),
                    terminal: name.clone(),
                })?);
            }
            realization.push(ids);
        }
        Ok(BoundVocab {
            vocab: self.clone(),
            realization,
        })
    }
}

/// A vocabulary whose tokens are resolved to a grammar's terminal ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundVocab {
    vocab: Vocab,
    realization: Vec<Vec<TermId>>,
}

impl BoundVocab {
    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.vocab.eos
    }

    pub fn terminals_of(&self, y: TokenId) -> &[TermId] {
        &self.realization[y as usize]
    }

    /// Mean number of terminals per non-eos token.
    pub fn mean_terminals_per_token(&self) -> f64 {
        let (n, total) = self
            .realization
            .iter()
            .enumerate()
            .filter(|&(i, _)| i as TokenId != self.eos())
            .fold((0usize, 0usize), |(n, s), (_, r)| (n + 1, s + r.len()));
        if n == 0 {
            0.0
        } else {
            total as f64 / n as f64
        }
    }

    /// Concatenated terminal string; eos contributes nothing.
    pub fn realize(&self, ys: &[TokenId]) -> Result<Vec<TermId>, VocabError> {
        let mut out = Vec::new();
        for &y in ys {
            out.extend(
                self.realization
                    .get(y as usize)
                    .ok_or(VocabError::UnknownId(y))?,
            );
        }
        Ok(out)
    }
}

/// Admissible-token bitset with a separate end-of-sequence bit.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenMask {
    words: Vec<u64>,
    len: usize,
    eos: bool,
    eos_id: TokenId,
}

impl TokenMask {
    pub fn empty(len: usize, eos_id: TokenId) -> Self {
        TokenMask {
            words: vec![0; len.div_ceil(64)],
            len,
            eos: false,
            eos_id,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn set(&mut self, v: TokenId) {
        self.words[v as usize / 64] |= 1 << (v % 64);
        if v == self.eos_id {
            self.eos = true;
        }
    }

    pub fn contains(&self, v: TokenId) -> bool {
        (v as usize) < self.len && self.words[v as usize / 64] >> (v % 64) & 1 == 1
    }

    pub fn eos(&self) -> bool {
        self.eos
    }

    /// Number of admissible tokens including eos.
    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.len as TokenId).filter(|&v| self.contains(v))
    }
}

/// Steps through every token's realization from `s`. Input state is not
/// modified.
pub fn admissible_tokens(engine: &Engine, s: &EngineState, v: &BoundVocab) -> TokenMask {
    admissible_tokens_counted(engine, s, v, &mut CounterVector::default())
}

pub fn admissible_tokens_counted(
    engine: &Engine,
    s: &EngineState,
    v: &BoundVocab,
    counters: &mut CounterVector,
) -> TokenMask {
    let mut mask = TokenMask::empty(v.len(), v.eos());
    for y in 0..v.len() as TokenId {
        if y == v.eos() {
            if engine.accepts(s) {
                mask.set(y);
            }
            continue;
        }
        let mut cur = s.clone();
        for &a in v.terminals_of(y) {
            counters.speculative_token_steps += 1;
            cur = engine.step_terminal_counted(&cur, a, counters);
            if !cur.is_live() {
                break;
            }
        }
        if cur.is_live() {
            mask.set(y);
        }
    }
    mask
}

/// Engine state after consuming a token's realization.
pub fn step_token(engine: &Engine, s: &EngineState, v: &BoundVocab, y: TokenId) -> EngineState {
    step_token_counted(engine, s, v, y, &mut CounterVector::default())
}

pub fn step_token_counted(
    engine: &Engine,
    s: &EngineState,
    v: &BoundVocab,
    y: TokenId,
    counters: &mut CounterVector,
) -> EngineState {
    let mut cur = s.clone();
    for &a in v.terminals_of(y) {
        if !cur.is_live() {
            break;
        }
        cur = engine.step_terminal_counted(&cur, a, counters);
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{builtin, Builtin};

    fn multi_vocab() -> Vocab {
        Vocab::from_json(
            r#"[{"id":0,"name":"a","terminals":["a"]},
                {"id":1,"name":"ab","terminals":["a","b"]},
                {"id":2,"name":"bb","terminals":["b","b"]},
                {"id":3,"name":"<eos>"}]"#,
        )
        .unwrap()
    }

    #[test]
    fn realize_concatenates() {
        let g = builtin(Builtin::G1);
        let v = Vocab::singleton(&g).bind(&g).unwrap();
        let ta = 0;
        let tb = 1;
        assert_eq!(g.format_terminal_string(&v.realize(&[ta, ta, tb]).unwrap()), "aab");
        assert_eq!(v.realize(&[v.eos()]).unwrap(), Vec::<TermId>::new());
        let m = multi_vocab().bind(&g).unwrap();
        assert_eq!(g.format_terminal_string(&m.realize(&[1, 1]).unwrap()), "abab");
        assert_eq!(m.realize(&[9]), Err(VocabError::UnknownId(9)));
    }

    #[test]
    fn validation() {
        let g = builtin(Builtin::G1);
        assert_eq!(
            Vocab::from_json(r#"[{"id":0,"name":"a","terminals":["a"]}]"#),
            Err(VocabError::EosCount(0))
        );
        assert!(matches!(
            Vocab::from_json(r#"[{"id":1,"name":"<eos>"}]"#),
            Err(VocabError::NonDenseIds { .. })
        ));
        let bad = Vocab::from_json(r#"[{"id":0,"name":"c","terminals":["c"]},{"id":1,"name":"<eos>"}]"#).unwrap();
        assert!(matches!(bad.bind(&g), Err(VocabError::UnknownTerminal { .. })));
        let v = multi_vocab();
        assert_eq!(Vocab::from_json(&v.to_json()).unwrap(), v);
    }

    #[test]
    fn g1_masks() {
        let g = builtin(Builtin::G1);
        let e = Engine::for_grammar(&g).unwrap();
        let v = Vocab::singleton(&g).bind(&g).unwrap();
        let s = e.run(&g.parse_terminal_string("a").unwrap());
        let m = admissible_tokens(&e, &s, &v);
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![0, 1]);
        assert!(!m.eos());
        let s = e.run(&g.parse_terminal_string("ab").unwrap());
        let m = admissible_tokens(&e, &s, &v);
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![v.eos()]);
        assert!(m.eos());
    }

    #[test]
    fn sigma_star_admits_all_tokens() {
        let g = builtin(Builtin::G3);
        let e = Engine::for_grammar(&g).unwrap();
        let v = multi_vocab().bind(&g).unwrap();
        for u in ["", "ab", "bbba"] {
            let s = e.run(&g.parse_terminal_string(u).unwrap());
            let m = admissible_tokens(&e, &s, &v);
            assert_eq!(m.count(), 4);
            assert!(m.eos());
        }
    }

    #[test]
    fn multi_terminal_tokens_on_g1() {
        let g = builtin(Builtin::G1);
        let e = Engine::for_grammar(&g).unwrap();
        let v = multi_vocab().bind(&g).unwrap();
        let s = e.run(&g.parse_terminal_string("a").unwrap());
        let mut c = CounterVector::default();
        let m = admissible_tokens_counted(&e, &s, &v, &mut c);
        // "a"+"a", "a"+"ab", "a"+"bb" is not a prefix
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(c.speculative_token_steps, 1 + 2 + 2);
    }
}
