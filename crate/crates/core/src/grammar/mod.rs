//! Context-free grammars: symbol tables, validation, reduction and the
//! static size functional κ.
//!
//! A [`Cfg`] is immutable once built. Every transformation in this crate
//! (reduction, inlining, binarization) returns a new value.

mod builtin;
mod parse;
mod random;

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub use builtin::{builtin, load_grammar, Builtin};
pub use parse::parse_grammar;
pub use random::random_grammar;

/// Index of a terminal within its grammar.
pub type TermId = u32;
/// Index of a nonterminal within its grammar.
pub type NtId = u32;

/// A grammar symbol. Terminal and nonterminal index spaces are disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Symbol {
    Terminal(TermId),
    Nonterminal(NtId),
}

impl Symbol {
    pub fn is_terminal(self) -> bool {
        matches!(self, Symbol::Terminal(_))
    }
}

/// `lhs -> rhs`; an empty `rhs` is an ε-production.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Production {
    pub lhs: NtId,
    pub rhs: Vec<Symbol>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("undeclared nonterminal `{name}` at {line}:{col}")]
    Undeclared { name: String, line: usize, col: usize },
    #[error("duplicate {kind} name `{name}`")]
    DuplicateName { kind: &'static str, name: String },
    #[error("grammar has no productions")]
    NoProductions,
    #[error("symbol out of range in production {production}")]
    InvalidSymbol { production: usize },
    #[error("start symbol `{0}` derives no terminal string (empty language)")]
    EmptyLanguage(String),
    #[error("unknown terminal `{0}`")]
    UnknownTerminal(String),
    #[error("unknown builtin grammar `{0}` (expected G1..G4)")]
    UnknownBuiltin(String),
    #[error("cannot read grammar file {path}: {message}")]
    Io { path: String, message: String },
}

/// A context-free grammar `(N, Σ, P, S)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Cfg {
    nonterminals: Vec<String>,
    terminals: Vec<String>,
    productions: Vec<Production>,
    start: NtId,
}

impl Cfg {
    /// Builds a grammar, validating symbol references and name uniqueness.
    /// Repeated identical productions collapse to their first occurrence.
    pub fn new(
        nonterminals: Vec<String>,
        terminals: Vec<String>,
        productions: Vec<Production>,
        start: NtId,
    ) -> Result<Self, GrammarError> {
        check_unique("nonterminal", &nonterminals)?;
        check_unique("terminal", &terminals)?;
        if (start as usize) >= nonterminals.len() {
            return Err(GrammarError::NoProductions);
        }
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(productions.len());
        for (i, p) in productions.into_iter().enumerate() {
            let valid_lhs = (p.lhs as usize) < nonterminals.len();
            let valid_rhs = p.rhs.iter().all(|s| match *s {
                Symbol::Terminal(t) => (t as usize) < terminals.len(),
                Symbol::Nonterminal(n) => (n as usize) < nonterminals.len(),
            });
            if !valid_lhs || !valid_rhs {
                return Err(GrammarError::InvalidSymbol { production: i });
            }
            if seen.insert(p.clone()) {
                kept.push(p);
            }
        }
        Ok(Cfg {
            nonterminals,
            terminals,
            productions: kept,
            start,
        })
    }

    pub fn nonterminals(&self) -> &[String] {
        &self.nonterminals
    }

    pub fn terminals(&self) -> &[String] {
        &self.terminals
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn start(&self) -> NtId {
        self.start
    }

    pub fn nonterminal_name(&self, n: NtId) -> &str {
        &self.nonterminals[n as usize]
    }

    pub fn terminal_name(&self, t: TermId) -> &str {
        &self.terminals[t as usize]
    }

    pub fn terminal_id(&self, name: &str) -> Option<TermId> {
        self.terminals.iter().position(|t| t == name).map(|i| i as TermId)
    }

    pub fn nonterminal_id(&self, name: &str) -> Option<NtId> {
        self.nonterminals
            .iter()
            .position(|t| t == name)
            .map(|i| i as NtId)
    }

    /// Indices of the productions whose left-hand side is `nt`.
    pub fn productions_of(&self, nt: NtId) -> impl Iterator<Item = usize> + '_ {
        self.productions
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.lhs == nt)
            .map(|(i, _)| i)
    }

    /// Compiled control-state count: `1 + 2|N| + Σ_p (|rhs(p)| + 1)`.
    pub fn kappa(&self) -> u64 {
        1 + 2 * self.nonterminals.len() as u64
            + self
                .productions
                .iter()
                .map(|p| p.rhs.len() as u64 + 1)
                .sum::<u64>()
    }

    /// Total number of symbols on all right-hand sides plus one per production.
    pub fn size(&self) -> usize {
        self.productions.iter().map(|p| p.rhs.len() + 1).sum()
    }

    /// Nonterminals that derive ε.
    pub fn nullable(&self) -> Vec<bool> {
        let mut nullable = vec![false; self.nonterminals.len()];
        let mut changed = true;
        while changed {
            changed = false;
            for p in &self.productions {
                if nullable[p.lhs as usize] {
                    continue;
                }
                let all = p.rhs.iter().all(|s| match *s {
                    Symbol::Terminal(_) => false,
                    Symbol::Nonterminal(n) => nullable[n as usize],
                });
                if all {
                    nullable[p.lhs as usize] = true;
                    changed = true;
                }
            }
        }
        nullable
    }

    /// Length of the shortest terminal string each nonterminal derives, or
    /// `None` for unproductive nonterminals.
    pub fn min_yield(&self) -> Vec<Option<usize>> {
        let mut best: Vec<Option<usize>> = vec![None; self.nonterminals.len()];
        let mut changed = true;
        while changed {
            changed = false;
            for p in &self.productions {
                let mut total = Some(0usize);
                for s in &p.rhs {
                    total = match (total, *s) {
                        (Some(acc), Symbol::Terminal(_)) => Some(acc + 1),
                        (Some(acc), Symbol::Nonterminal(n)) => best[n as usize].map(|m| acc + m),
                        (None, _) => None,
                    };
                }
                if let Some(len) = total {
                    let slot = &mut best[p.lhs as usize];
                    if slot.is_none_or(|cur| len < cur) {
                        *slot = Some(len);
                        changed = true;
                    }
                }
            }
        }
        best
    }

    /// Removes unproductive, then unreachable, nonterminals. The terminal
    /// alphabet is kept intact so the result describes a language over the
    /// same Σ.
    pub fn reduce(&self) -> Result<Cfg, GrammarError> {
        let productive: Vec<bool> = self.min_yield().iter().map(Option::is_some).collect();
        if !productive[self.start as usize] {
            return Err(GrammarError::EmptyLanguage(
                self.nonterminal_name(self.start).to_string(),
            ));
        }
        let usable = |p: &Production| {
            productive[p.lhs as usize]
                && p.rhs.iter().all(|s| match *s {
                    Symbol::Terminal(_) => true,
                    Symbol::Nonterminal(n) => productive[n as usize],
                })
        };

        let mut reachable = vec![false; self.nonterminals.len()];
        reachable[self.start as usize] = true;
        let mut stack = vec![self.start];
        while let Some(nt) = stack.pop() {
            for p in self.productions.iter().filter(|p| p.lhs == nt && usable(p)) {
                for s in &p.rhs {
                    if let Symbol::Nonterminal(n) = *s {
                        if !reachable[n as usize] {
                            reachable[n as usize] = true;
                            stack.push(n);
                        }
                    }
                }
            }
        }

        let mut remap = vec![None; self.nonterminals.len()];
        let mut names = Vec::new();
        for (i, name) in self.nonterminals.iter().enumerate() {
            if reachable[i] {
                remap[i] = Some(names.len() as NtId);
                names.push(name.clone());
            }
        }
        let productions = self
            .productions
            .iter()
            .filter(|p| reachable[p.lhs as usize] && usable(p))
            .map(|p| Production {
                lhs: remap[p.lhs as usize].expect("reachable lhs"),
                rhs: p
                    .rhs
                    .iter()
                    .map(|s| match *s {
                        Symbol::Terminal(t) => Symbol::Terminal(t),
                        Symbol::Nonterminal(n) => {
                            Symbol::Nonterminal(remap[n as usize].expect("reachable rhs"))
                        }
                    })
                    .collect(),
            })
            .collect();
        Cfg::new(
            names,
            self.terminals.clone(),
            productions,
            remap[self.start as usize].expect("start reachable"),
        )
    }

    /// True when [`Cfg::reduce`] would return this grammar unchanged.
    pub fn is_reduced(&self) -> bool {
        self.reduce().is_ok_and(|r| &r == self)
    }

    /// Splits a terminal string written as text into terminal ids.
    ///
    /// Whitespace separates pieces; each piece is tokenized by longest match
    /// against the terminal names, so `"aab"` and `"a a b"` agree for a
    /// grammar with single-letter terminals.
    pub fn parse_terminal_string(&self, text: &str) -> Result<Vec<TermId>, GrammarError> {
        let mut out = Vec::new();
        for piece in text.split_whitespace() {
            let mut rest = piece;
            while !rest.is_empty() {
                let best = self
                    .terminals
                    .iter()
                    .enumerate()
                    .filter(|(_, name)| !name.is_empty() && rest.starts_with(name.as_str()))
                    .max_by_key(|(_, name)| name.len());
                match best {
                    Some((i, name)) => {
                        out.push(i as TermId);
                        rest = &rest[name.len()..];
                    }
                    None => return Err(GrammarError::UnknownTerminal(rest.to_string())),
                }
            }
        }
        Ok(out)
    }

    /// Renders a terminal string; single-character alphabets are written
    /// without separators.
    pub fn format_terminal_string(&self, word: &[TermId]) -> String {
        let compact = self.terminals.iter().all(|t| t.chars().count() == 1);
        let names: Vec<&str> = word.iter().map(|&t| self.terminal_name(t)).collect();
        if compact {
            names.concat()
        } else {
            names.join(" ")
        }
    }
}

fn check_unique(kind: &'static str, names: &[String]) -> Result<(), GrammarError> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(GrammarError::DuplicateName {
                kind,
                name: n.clone(),
            });
        }
    }
    Ok(())
}

pub(crate) fn quote_terminal(name: &str) -> String {
    let mut s = String::with_capacity(name.len() + 2);
    s.push('\'');
    for c in name.chars() {
        if c == '\'' || c == '\\' {
            s.push('\\');
        }
        s.push(c);
    }
    s.push('\'');
    s
}

/// Prints the grammar in the text format accepted by [`parse_grammar`].
///
/// Header directives are emitted only when the body alone would not
/// reproduce the same symbol tables, so `parse_grammar(&g.to_string())`
/// always yields `g` again.
impl fmt::Display for Cfg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let implied = parse::implied_tables(self);
        if self.productions.first().map(|p| p.lhs) != Some(self.start) {
            writeln!(f, "%start {}", self.nonterminal_name(self.start))?;
        }
        if implied.nonterminals != self.nonterminals {
            writeln!(f, "%nonterminals {}", self.nonterminals.join(" "))?;
        }
        if implied.terminals != self.terminals {
            let quoted: Vec<String> = self.terminals.iter().map(|t| quote_terminal(t)).collect();
            writeln!(f, "%terminals {}", quoted.join(" "))?;
        }
        let mut i = 0;
        while i < self.productions.len() {
            let lhs = self.productions[i].lhs;
            let mut alts = Vec::new();
            while i < self.productions.len() && self.productions[i].lhs == lhs {
                alts.push(self.format_rhs(&self.productions[i].rhs));
                i += 1;
            }
            writeln!(f, "{} -> {}", self.nonterminal_name(lhs), alts.join(" | "))?;
        }
        Ok(())
    }
}

impl Cfg {
    pub fn format_rhs(&self, rhs: &[Symbol]) -> String {
        if rhs.is_empty() {
            return "eps".to_string();
        }
        rhs.iter()
            .map(|s| match *s {
                Symbol::Terminal(t) => quote_terminal(self.terminal_name(t)),
                Symbol::Nonterminal(n) => self.nonterminal_name(n).to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn format_production(&self, index: usize) -> String {
        let p = &self.productions[index];
        format!("{} -> {}", self.nonterminal_name(p.lhs), self.format_rhs(&p.rhs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_of_builtins() {
        assert_eq!(builtin(Builtin::G1).kappa(), 8);
        assert_eq!(builtin(Builtin::G2).kappa(), 15);
        assert_eq!(builtin(Builtin::G3).kappa(), 10);
        assert_eq!(builtin(Builtin::G4).kappa(), 15);
    }

    #[test]
    fn reduce_keeps_reduced_grammar() {
        let g1 = builtin(Builtin::G1);
        assert_eq!(g1.reduce().unwrap(), g1);
        assert!(g1.is_reduced());
    }

    #[test]
    fn reduce_detects_empty_language() {
        let g = parse_grammar("S -> 'a' S").unwrap();
        assert!(matches!(g.reduce(), Err(GrammarError::EmptyLanguage(_))));
    }

    #[test]
    fn reduce_drops_unproductive() {
        let g = parse_grammar("S -> A | 'a'\nA -> A").unwrap();
        let r = g.reduce().unwrap();
        assert_eq!(r.to_string(), "S -> 'a'\n");
        assert_eq!(r.nonterminals(), ["S"]);
        assert_eq!(r.reduce().unwrap(), r);
    }

    #[test]
    fn reduce_drops_unreachable_but_keeps_alphabet() {
        let g = parse_grammar("S -> 'a'\nB -> 'b'").unwrap();
        let r = g.reduce().unwrap();
        assert_eq!(r.nonterminals(), ["S"]);
        assert_eq!(r.terminals(), ["a", "b"]);
        let back = parse_grammar(&r.to_string()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn nullable_and_min_yield() {
        let g4 = builtin(Builtin::G4);
        assert_eq!(g4.nullable(), vec![true, false]);
        assert_eq!(g4.min_yield(), vec![Some(0), Some(1)]);
    }

    #[test]
    fn terminal_strings_split_by_longest_match() {
        let g = parse_grammar("S -> 'ab' S | 'a' | 'b'").unwrap();
        let w = g.parse_terminal_string("aba b").unwrap();
        assert_eq!(w, vec![0, 1, 2]);
        assert!(g.parse_terminal_string("c").is_err());
    }

    #[test]
    fn duplicate_productions_collapse() {
        let g = parse_grammar("S -> 'a' | 'a' | eps").unwrap();
        assert_eq!(g.productions().len(), 2);
    }
}
