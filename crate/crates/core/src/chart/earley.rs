//! Earley recognizer with Aycock–Horspool handling of nullable symbols.

use std::collections::{BTreeSet, HashSet};

use crate::grammar::{Cfg, Symbol, TermId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Item {
    pub production: usize,
    pub dot: usize,
    pub origin: usize,
}

/// Item sets per input position.
#[derive(Clone, Debug)]
pub struct EarleyChart {
    pub sets: Vec<Vec<Item>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EarleyResult {
    /// Sorted terminals `a` with `u a` a prefix of some sentence.
    pub next: Vec<TermId>,
    pub member: bool,
}

/// Runs the recognizer over `u` on the reduced form of `g`.
///
/// Returns `None` when the language is empty.
pub fn earley_chart(g: &Cfg, u: &[TermId]) -> Option<(Cfg, EarleyChart)> {
    let g = g.reduce().ok()?;
    let nullable = g.nullable();
    let prods = g.productions();
    let mut sets: Vec<Vec<Item>> = vec![Vec::new(); u.len() + 1];
    let mut seen: Vec<HashSet<Item>> = vec![HashSet::new(); u.len() + 1];

    fn add(sets: &mut [Vec<Item>], seen: &mut [HashSet<Item>], k: usize, it: Item) {
        if seen[k].insert(it) {
            sets[k].push(it);
        }
    }

    for p in g.productions_of(g.start()) {
        add(&mut sets, &mut seen, 0, Item { production: p, dot: 0, origin: 0 });
    }
    for k in 0..=u.len() {
        let mut idx = 0;
        while idx < sets[k].len() {
            let it = sets[k][idx];
            idx += 1;
            let rhs = &prods[it.production].rhs;
            match rhs.get(it.dot) {
                Some(&Symbol::Nonterminal(b)) => {
                    for q in g.productions_of(b) {
                        add(&mut sets, &mut seen, k, Item { production: q, dot: 0, origin: k });
                    }
                    if nullable[b as usize] {
                        add(&mut sets, &mut seen, k, Item { dot: it.dot + 1, ..it });
                    }
                }
                Some(&Symbol::Terminal(a)) => {
                    if u.get(k) == Some(&a) {
                        add(&mut sets, &mut seen, k + 1, Item { dot: it.dot + 1, ..it });
                    }
                }
                None => {
                    let lhs = prods[it.production].lhs;
                    let mut j = 0;
                    while j < sets[it.origin].len() {
                        let parent = sets[it.origin][j];
                        j += 1;
                        if prods[parent.production].rhs.get(parent.dot) == Some(&Symbol::Nonterminal(lhs)) {
                            add(&mut sets, &mut seen, k, Item { dot: parent.dot + 1, ..parent });
                        }
                    }
                }
            }
        }
    }
    Some((g, EarleyChart { sets }))
}

/// Next-terminal set and membership of `u`.
pub fn earley_next_terminals(g: &Cfg, u: &[TermId]) -> EarleyResult {
    let Some((g, chart)) = earley_chart(g, u) else {
        return EarleyResult { next: Vec::new(), member: false };
    };
    let last = &chart.sets[u.len()];
    let mut next = BTreeSet::new();
    let mut member = false;
    for it in last {
        let p = &g.productions()[it.production];
        match p.rhs.get(it.dot) {
            Some(&Symbol::Terminal(a)) => {
                next.insert(a);
            }
            None if it.origin == 0 && p.lhs == g.start() => member = true,
            _ => {}
        }
    }
    EarleyResult { next: next.into_iter().collect(), member }
}

pub fn earley_accepts(g: &Cfg, w: &[TermId]) -> bool {
    earley_next_terminals(g, w).member
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{builtin, parse_grammar, Builtin};

    fn run(g: &Cfg, u: &str) -> (String, bool) {
        let r = earley_next_terminals(g, &g.parse_terminal_string(u).unwrap());
        (g.format_terminal_string(&r.next), r.member)
    }

    #[test]
    fn examples() {
        assert_eq!(run(&builtin(Builtin::G1), "a"), ("ab".into(), false));
        assert_eq!(run(&builtin(Builtin::G4), ""), ("ab".into(), true));
        assert_eq!(run(&builtin(Builtin::G2), "aabb"), ("".into(), true));
        assert_eq!(run(&builtin(Builtin::G1), "ba"), ("".into(), false));
    }

    #[test]
    fn nullable_chains() {
        let g = parse_grammar("S -> A B 'c'\nA -> eps | 'a'\nB -> A A").unwrap();
        assert_eq!(run(&g, ""), ("ca".into(), false));
        assert_eq!(run(&g, "aa"), ("ca".into(), false));
        assert_eq!(run(&g, "c"), ("".into(), true));
        assert_eq!(run(&g, "aaac"), ("".into(), true));
        assert_eq!(run(&g, "aaaa"), ("".into(), false));
    }

    #[test]
    fn empty_language() {
        let g = parse_grammar("S -> S 'a'").unwrap();
        assert_eq!(run(&g, ""), ("".into(), false));
    }
}
