//! All-spans packed chart, grown one input position at a time.
//!
//! The grammar is preprocessed: reduced, ε-rules removed (ε membership of the
//! start symbol is kept as a flag), and right-hand sides longer than two
//! binarized left to right with fresh nonterminals. This changes the forest
//! of grammars that need it; grammars already in that shape are untouched.
//!
//! Packed nodes are binary splits `(A, i, k, j, rule)`. Unary rules only
//! create symbol nodes.

use std::collections::BTreeSet;

use crate::grammar::{Cfg, GrammarError, Symbol, TermId};

use super::ChartError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinSym {
    T(TermId),
    N(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinRhs {
    Term(TermId),
    Unit(u32),
    Pair(BinSym, BinSym),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinRule {
    pub lhs: u32,
    pub rhs: BinRhs,
}

#[derive(Clone, Debug)]
pub struct BinarizedGrammar {
    pub nonterminals: Vec<String>,
    pub terminals: Vec<String>,
    pub rules: Vec<BinRule>,
    pub start: u32,
    pub start_nullable: bool,
}

/// Most nullable occurrences in one right-hand side that ε-removal expands.
const MAX_NULLABLE_OCCURRENCES: usize = 12;

impl BinarizedGrammar {
    pub fn from_cfg(g: &Cfg) -> Result<Self, ChartError> {
        let g = g.reduce()?;
        let nullable = g.nullable();
        let mut nonterminals: Vec<String> = g.nonterminals().to_vec();
        let mut seen = BTreeSet::new();
        let mut flat: Vec<(u32, Vec<Symbol>)> = Vec::new();
        for p in g.productions() {
            let opt: Vec<usize> = p
                .rhs
                .iter()
                .enumerate()
                .filter(|(_, s)| matches!(s, Symbol::Nonterminal(n) if nullable[*n as usize]))
                .map(|(i, _)| i)
                .collect();
            if opt.len() > MAX_NULLABLE_OCCURRENCES {
                return Err(ChartError::TooManyNullable(g.format_production(
                    g.productions().iter().position(|q| q == p).unwrap_or(0),
                )));
            }
            for mask in 0u32..(1 << opt.len()) {
                let rhs: Vec<Symbol> = p
                    .rhs
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| match opt.iter().position(|o| o == i) {
                        Some(bit) => mask >> bit & 1 == 0,
                        None => true,
                    })
                    .map(|(_, s)| *s)
                    .collect();
                if rhs.is_empty() || rhs == [Symbol::Nonterminal(p.lhs)] {
                    continue;
                }
                if seen.insert((p.lhs, rhs.clone())) {
                    flat.push((p.lhs, rhs));
                }
            }
        }
        let sym = |s: Symbol| match s {
            Symbol::Terminal(t) => BinSym::T(t),
            Symbol::Nonterminal(n) => BinSym::N(n),
        };
        let mut rules = Vec::new();
        for (lhs, rhs) in flat {
            match rhs.len() {
                1 => rules.push(BinRule {
                    lhs,
                    rhs: match rhs[0] {
                        Symbol::Terminal(t) => BinRhs::Term(t),
                        Symbol::Nonterminal(n) => BinRhs::Unit(n),
                    },
                }),
                2 => rules.push(BinRule {
                    lhs,
                    rhs: BinRhs::Pair(sym(rhs[0]), sym(rhs[1])),
                }),
                n => {
                    let base = g.nonterminal_name(lhs).to_string();
                    let mut left = sym(rhs[0]);
                    for (k, &s) in rhs.iter().enumerate().take(n - 1).skip(1) {
                        let fresh = nonterminals.len() as u32;
                        nonterminals.push(format!("{base}~{}.{k}", rules.len()));
                        rules.push(BinRule {
                            lhs: fresh,
                            rhs: BinRhs::Pair(left, sym(s)),
                        });
                        left = BinSym::N(fresh);
                    }
                    rules.push(BinRule {
                        lhs,
                        rhs: BinRhs::Pair(left, sym(rhs[n - 1])),
                    });
                }
            }
        }
        Ok(BinarizedGrammar {
            nonterminals,
            terminals: g.terminals().to_vec(),
            rules,
            start: g.start(),
            start_nullable: nullable[g.start() as usize],
        })
    }

    fn sym_name(&self, s: BinSym) -> String {
        match s {
            BinSym::T(t) => crate::grammar::quote_terminal(&self.terminals[t as usize]),
            BinSym::N(n) => self.nonterminals[n as usize].clone(),
        }
    }

    pub fn rule_label(&self, r: usize) -> String {
        let rule = &self.rules[r];
        let rhs = match rule.rhs {
            BinRhs::Term(t) => self.sym_name(BinSym::T(t)),
            BinRhs::Unit(n) => self.sym_name(BinSym::N(n)),
            BinRhs::Pair(x, y) => format!("{} {}", self.sym_name(x), self.sym_name(y)),
        };
        format!("{} -> {}", self.nonterminals[rule.lhs as usize], rhs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PackedNode {
    pub rule: usize,
    pub i: usize,
    pub k: usize,
    pub j: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepCounts {
    pub new_symbol: u64,
    pub new_packed: u64,
    pub symbol_by_nt: Vec<u64>,
    pub packed_by_rule: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct PackedChart {
    g: BinarizedGrammar,
    n_nt: usize,
    input: Vec<TermId>,
    /// `cells[j][i * n_nt + A]`: symbol node `A[i, j]` exists.
    cells: Vec<Vec<bool>>,
    recorded: Option<Vec<PackedNode>>,
    symbol_total: u64,
    packed_total: u64,
}

impl PackedChart {
    pub fn new(g: &Cfg) -> Result<Self, ChartError> {
        let g = BinarizedGrammar::from_cfg(g)?;
        let n_nt = g.nonterminals.len();
        Ok(PackedChart {
            g,
            n_nt,
            input: Vec::new(),
            cells: vec![Vec::new()],
            recorded: None,
            symbol_total: 0,
            packed_total: 0,
        })
    }

    /// Keeps every packed node for later inspection.
    pub fn with_recording(mut self) -> Self {
        self.recorded = Some(Vec::new());
        self
    }

    pub fn grammar(&self) -> &BinarizedGrammar {
        &self.g
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    pub fn symbol_total(&self) -> u64 {
        self.symbol_total
    }

    pub fn packed_total(&self) -> u64 {
        self.packed_total
    }

    pub fn recorded(&self) -> Option<&[PackedNode]> {
        self.recorded.as_deref()
    }

    pub fn has_symbol(&self, a: u32, i: usize, j: usize) -> bool {
        i < j && j <= self.input.len() && self.cells[j][i * self.n_nt + a as usize]
    }

    fn has(&self, s: BinSym, i: usize, k: usize) -> bool {
        match s {
            BinSym::T(t) => k == i + 1 && self.input[i] == t,
            BinSym::N(n) => self.cells[k][i * self.n_nt + n as usize],
        }
    }

    /// Whether the whole input so far is derivable from the start symbol.
    pub fn accepts(&self) -> bool {
        if self.input.is_empty() {
            self.g.start_nullable
        } else {
            self.has_symbol(self.g.start, 0, self.input.len())
        }
    }

    /// Extends the input by `a` and closes every span ending at the new
    /// position, shortest first.
    pub fn step(&mut self, a: TermId) -> StepCounts {
        self.input.push(a);
        let j = self.input.len();
        let n = self.n_nt;
        self.cells.push(vec![false; j * n]);
        let mut counts = StepCounts {
            symbol_by_nt: vec![0; n],
            packed_by_rule: vec![0; self.g.rules.len()],
            ..Default::default()
        };
        for i in (0..j).rev() {
            let mut present = vec![false; n];
            for (r, rule) in self.g.rules.iter().enumerate() {
                match rule.rhs {
                    BinRhs::Term(t) => {
                        if i + 1 == j && self.input[i] == t {
                            present[rule.lhs as usize] = true;
                        }
                    }
                    BinRhs::Pair(x, y) => {
                        for k in i + 1..j {
                            if self.has(x, i, k) && self.has(y, k, j) {
                                present[rule.lhs as usize] = true;
                                counts.packed_by_rule[r] += 1;
                                if let Some(rec) = &mut self.recorded {
                                    rec.push(PackedNode { rule: r, i, k, j });
                                }
                            }
                        }
                    }
                    BinRhs::Unit(_) => {}
                }
            }
            loop {
                let mut changed = false;
                for rule in &self.g.rules {
                    if let BinRhs::Unit(b) = rule.rhs {
                        if present[b as usize] && !present[rule.lhs as usize] {
                            present[rule.lhs as usize] = true;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            for (nt, &p) in present.iter().enumerate() {
                if p {
                    self.cells[j][i * n + nt] = true;
                    counts.symbol_by_nt[nt] += 1;
                }
            }
        }
        counts.new_symbol = counts.symbol_by_nt.iter().sum();
        counts.new_packed = counts.packed_by_rule.iter().sum();
        self.symbol_total += counts.new_symbol;
        self.packed_total += counts.new_packed;
        counts
    }

    /// Every binary split whose children exist has a packed node. Requires
    /// recording.
    pub fn is_split_complete(&self) -> bool {
        let Some(rec) = &self.recorded else {
            return false;
        };
        let have: BTreeSet<PackedNode> = rec.iter().copied().collect();
        let len = self.input.len();
        for (r, rule) in self.g.rules.iter().enumerate() {
            if let BinRhs::Pair(x, y) = rule.rhs {
                for j in 1..=len {
                    for i in 0..j {
                        for k in i + 1..j {
                            if self.has(x, i, k)
                                && self.has(y, k, j)
                                && !have.contains(&PackedNode { rule: r, i, k, j })
                            {
                                return false;
                            }
                        }
                    }
                }
            }
        }
        true
    }
}

impl From<GrammarError> for ChartError {
    fn from(e: GrammarError) -> Self {
        ChartError::Grammar(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{builtin, parse_grammar, Builtin};

    #[test]
    fn g4_is_already_binary() {
        let b = BinarizedGrammar::from_cfg(&builtin(Builtin::G4)).unwrap();
        assert_eq!(b.nonterminals, ["S0", "S"]);
        let labels: Vec<String> = (0..b.rules.len()).map(|r| b.rule_label(r)).collect();
        assert_eq!(labels, ["S0 -> S", "S -> S S", "S -> 'a'", "S -> 'b'"]);
        assert!(b.start_nullable);
    }

    #[test]
    fn long_rules_are_binarized() {
        let b = BinarizedGrammar::from_cfg(&parse_grammar("S -> 'a' S 'b' 'c' | 'x'").unwrap()).unwrap();
        assert_eq!(b.nonterminals.len(), 3);
        assert!(b.rules.iter().all(|r| !matches!(r.rhs, BinRhs::Unit(_))));
        let mut c = PackedChart::new(&parse_grammar("S -> 'a' S 'b' 'c' | 'x'").unwrap()).unwrap();
        for t in [0, 3, 1, 2] {
            c.step(t);
        }
        assert!(c.accepts());
    }

    #[test]
    fn g4_small_counts() {
        let mut c = PackedChart::new(&builtin(Builtin::G4)).unwrap().with_recording();
        let rr = c.grammar().rules.iter().position(|r| matches!(r.rhs, BinRhs::Pair(..))).unwrap();
        let mut cum = 0;
        for t in 1..=5 {
            let s = c.step(0);
            assert_eq!(s.packed_by_rule[rr], (t * (t - 1) / 2) as u64);
            assert_eq!(s.symbol_by_nt[1], t as u64);
            cum += s.packed_by_rule[rr];
            if t == 4 {
                assert_eq!(cum, 10);
            }
        }
        assert!(c.is_split_complete());
        assert!(c.accepts());
    }

    #[test]
    fn epsilon_removal_keeps_language() {
        let g = parse_grammar("S -> A 'c' A\nA -> eps | 'a' A").unwrap();
        let mut c = PackedChart::new(&g).unwrap();
        assert!(!c.accepts());
        for t in g.parse_terminal_string("aaca").unwrap() {
            c.step(t);
        }
        assert!(c.accepts());
    }
}
