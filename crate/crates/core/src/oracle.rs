//! Exhaustive reference procedures used to cross-check the engines.
//!
//! Both work directly on leftmost derivations and share no code with the
//! automaton, Earley or chart implementations.

use std::collections::{BTreeSet, HashSet};

use num_bigint::BigUint;
use num_traits::Zero;

use crate::grammar::{Cfg, Symbol, TermId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Completion {
    /// Terminals `a` for which some sentence starts with `u a`.
    pub next: Vec<TermId>,
    pub member: bool,
    /// False when the form-length cap cut the search; `next` and `member`
    /// are then lower bounds.
    pub exhaustive: bool,
}

/// Searches leftmost derivations of the reduced grammar for sentences
/// extending `u`.
///
/// Each sentential form is cut after the shortest prefix whose minimal
/// yield already covers the terminals still needed (`|u| - matched + 1`);
/// later symbols cannot affect the answer. Forms longer than
/// `needed + slack` are not expanded.
pub fn completion_search(g: &Cfg, u: &[TermId], slack: usize) -> Completion {
    let Ok(g) = g.reduce() else {
        return Completion { next: Vec::new(), member: false, exhaustive: true };
    };
    let min_yield: Vec<usize> = g.min_yield().into_iter().map(|m| m.expect("reduced")).collect();
    let weight = |s: &Symbol| match s {
        Symbol::Terminal(_) => 1,
        Symbol::Nonterminal(n) => min_yield[*n as usize],
    };
    let truncate = |form: &mut Vec<Symbol>, needed: usize| {
        let mut acc = 0;
        for (j, s) in form.iter().enumerate() {
            acc += weight(s);
            if acc >= needed {
                form.truncate(j + 1);
                return;
            }
        }
    };

    let mut next = BTreeSet::new();
    let mut member = false;
    let mut exhaustive = true;
    let mut seen: HashSet<(usize, Vec<Symbol>)> = HashSet::new();
    let mut stack = vec![(0usize, vec![Symbol::Nonterminal(g.start())])];
    while let Some((matched, mut form)) = stack.pop() {
        let needed = u.len() - matched + 1;
        truncate(&mut form, needed);
        if !seen.insert((matched, form.clone())) {
            continue;
        }
        match form.first().copied() {
            None => {
                if matched == u.len() {
                    member = true;
                }
            }
            Some(Symbol::Terminal(a)) => {
                if matched == u.len() {
                    next.insert(a);
                } else if u[matched] == a {
                    stack.push((matched + 1, form[1..].to_vec()));
                }
            }
            Some(Symbol::Nonterminal(n)) => {
                if form.len() > needed + slack {
                    exhaustive = false;
                    continue;
                }
                for pi in g.productions_of(n) {
                    let mut f = g.productions()[pi].rhs.clone();
                    f.extend_from_slice(&form[1..]);
                    stack.push((matched, f));
                }
            }
        }
    }
    Completion {
        next: next.into_iter().collect(),
        member,
        exhaustive,
    }
}

/// Counts leftmost derivations of `w`, which equals the number of parse
/// trees. Returns `None` if more than `budget` forms are expanded.
pub fn count_leftmost_derivations(g: &Cfg, w: &[TermId], budget: usize) -> Option<BigUint> {
    let min_yield: Vec<Option<usize>> = g.min_yield();
    let mut total = BigUint::zero();
    let mut expanded = 0usize;
    let mut stack = vec![(0usize, vec![Symbol::Nonterminal(g.start())])];
    while let Some((matched, form)) = stack.pop() {
        let mut need = 0;
        for s in &form {
            need += match s {
                Symbol::Terminal(_) => 1,
                Symbol::Nonterminal(n) => match min_yield[*n as usize] {
                    Some(m) => m,
                    None => usize::MAX / 4,
                },
            };
        }
        if matched + need > w.len() {
            continue;
        }
        // Skip matching terminals at the front.
        let mut m = matched;
        let mut k = 0;
        while let Some(&Symbol::Terminal(a)) = form.get(k) {
            if w.get(m) != Some(&a) {
                break;
            }
            m += 1;
            k += 1;
        }
        match form.get(k) {
            None => {
                if m == w.len() {
                    total += 1u32;
                }
            }
            Some(Symbol::Terminal(_)) => {}
            Some(&Symbol::Nonterminal(n)) => {
                expanded += 1;
                if expanded > budget {
                    return None;
                }
                for pi in g.productions_of(n) {
                    let mut f = g.productions()[pi].rhs.clone();
                    f.extend_from_slice(&form[k + 1..]);
                    stack.push((m, f));
                }
            }
        }
    }
    Some(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{builtin, Builtin};

    #[test]
    fn completions_on_g1() {
        let g = builtin(Builtin::G1);
        let c = completion_search(&g, &g.parse_terminal_string("a").unwrap(), 8);
        assert_eq!(c, Completion { next: vec![0, 1], member: false, exhaustive: true });
        let c = completion_search(&g, &g.parse_terminal_string("ab").unwrap(), 8);
        assert_eq!(c, Completion { next: vec![], member: true, exhaustive: true });
    }

    #[test]
    fn left_recursion_terminates() {
        let g = builtin(Builtin::G4);
        let c = completion_search(&g, &g.parse_terminal_string("abb").unwrap(), 8);
        assert_eq!(c, Completion { next: vec![0, 1], member: true, exhaustive: true });
    }

    #[test]
    fn derivation_counts() {
        let g = builtin(Builtin::G4);
        let n = |k: usize| count_leftmost_derivations(&g, &vec![0; k], 1 << 20).unwrap();
        assert_eq!(n(1), BigUint::from(1u32));
        assert_eq!(n(4), BigUint::from(5u32));
        assert_eq!(n(6), BigUint::from(42u32));
    }
}
