//! Exact parse-tree counts by span dynamic programming.

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::grammar::{Cfg, NtId, Symbol, TermId};

use super::ChartError;

/// Nonterminal on a cycle `A ⇒+ A` through rules whose other symbols are
/// all nullable; such a grammar has infinitely many trees for some input.
pub fn find_unit_cycle(g: &Cfg) -> Option<NtId> {
    let nullable = g.nullable();
    let n = g.nonterminals().len();
    let mut adj = vec![Vec::new(); n];
    for p in g.productions() {
        for (i, s) in p.rhs.iter().enumerate() {
            if let Symbol::Nonterminal(b) = *s {
                let others_nullable = p.rhs.iter().enumerate().all(|(k, x)| {
                    k == i || matches!(x, Symbol::Nonterminal(c) if nullable[*c as usize])
                });
                if others_nullable {
                    adj[p.lhs as usize].push(b);
                }
            }
        }
    }
    unit_order(&adj).err()
}

/// Topological order with dependencies first, or a nonterminal on a cycle.
fn unit_order(adj: &[Vec<NtId>]) -> Result<Vec<NtId>, NtId> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let n = adj.len();
    let mut mark = vec![0u8; n];
    let mut order = Vec::with_capacity(n);
    for root in 0..n {
        if mark[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        mark[root] = 1;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if let Some(&w) = adj[v].get(*next) {
                *next += 1;
                match mark[w as usize] {
                    0 => {
                        mark[w as usize] = 1;
                        stack.push((w as usize, 0));
                    }
                    1 => return Err(w),
                    _ => {}
                }
            } else {
                mark[v] = 2;
                order.push(v as NtId);
                stack.pop();
            }
        }
    }
    Ok(order)
}

/// Number of distinct parse trees of `w` from the start symbol.
///
/// Unproductive and unreachable nonterminals are removed first; they carry
/// no trees.
pub fn count_parse_trees(g: &Cfg, w: &[TermId]) -> Result<BigUint, ChartError> {
    let Ok(g) = g.reduce() else {
        return Ok(BigUint::zero());
    };
    if let Some(a) = find_unit_cycle(&g) {
        return Err(ChartError::InfiniteAmbiguity(g.nonterminal_name(a).to_string()));
    }
    let nullable = g.nullable();
    let n_nt = g.nonterminals().len();
    let mut adj = vec![Vec::new(); n_nt];
    for p in g.productions() {
        for (i, s) in p.rhs.iter().enumerate() {
            if let Symbol::Nonterminal(b) = *s {
                if p.rhs.iter().enumerate().all(|(k, x)| {
                    k == i || matches!(x, Symbol::Nonterminal(c) if nullable[*c as usize])
                }) {
                    adj[p.lhs as usize].push(b);
                }
            }
        }
    }
    let order = unit_order(&adj).expect("cycle already excluded");

    let n = w.len();
    let idx = |a: NtId, i: usize, j: usize| (a as usize * (n + 1) + i) * (n + 1) + j;
    let mut table = vec![BigUint::zero(); n_nt * (n + 1) * (n + 1)];
    for len in 0..=n {
        for i in 0..=n - len {
            let j = i + len;
            for &a in &order {
                let mut total = BigUint::zero();
                for pi in g.productions_of(a) {
                    let rhs = &g.productions()[pi].rhs;
                    // ways[k - i]: rhs prefix derives w[i..k]
                    let mut ways = vec![BigUint::zero(); len + 1];
                    ways[0] = BigUint::one();
                    for s in rhs {
                        let mut next = vec![BigUint::zero(); len + 1];
                        for k in 0..=len {
                            if ways[k].is_zero() {
                                continue;
                            }
                            match *s {
                                Symbol::Terminal(t) => {
                                    if k < len && w[i + k] == t {
                                        next[k + 1] += &ways[k];
                                    }
                                }
                                Symbol::Nonterminal(b) => {
                                    for k2 in k..=len {
                                        let c = &table[idx(b, i + k, i + k2)];
                                        if !c.is_zero() {
                                            next[k2] += &ways[k] * c;
                                        }
                                    }
                                }
                            }
                        }
                        ways = next;
                    }
                    total += &ways[len];
                }
                table[idx(a, i, j)] = total;
            }
        }
    }
    Ok(table[idx(g.start(), 0, n)].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{builtin, parse_grammar, Builtin};

    fn count(g: &Cfg, w: &str) -> BigUint {
        count_parse_trees(g, &g.parse_terminal_string(w).unwrap()).unwrap()
    }

    #[test]
    fn catalan_on_g4() {
        let g = builtin(Builtin::G4);
        assert_eq!(count(&g, "a"), BigUint::from(1u32));
        assert_eq!(count(&g, "abab"), BigUint::from(5u32));
        assert_eq!(count(&g, ""), BigUint::from(1u32));
    }

    #[test]
    fn g3_is_unambiguous() {
        let g = builtin(Builtin::G3);
        for w in ["", "a", "abba", "bbbbbb"] {
            assert_eq!(count(&g, w), BigUint::from(1u32));
        }
    }

    #[test]
    fn cycles_are_rejected_by_name() {
        let g = parse_grammar("S -> A | 'a'\nA -> S | 'b'").unwrap();
        assert!(matches!(
            count_parse_trees(&g, &[0]),
            Err(ChartError::InfiniteAmbiguity(n)) if n == "S" || n == "A"
        ));
        let g = parse_grammar("S -> S S | eps | 'a'").unwrap();
        assert_eq!(
            count_parse_trees(&g, &[0]),
            Err(ChartError::InfiniteAmbiguity("S".into()))
        );
    }

    #[test]
    fn nullable_middles() {
        // S -> A A with A -> 'a' | eps: "a" has two trees, "" one, "aa" one
        let g = parse_grammar("S -> A A\nA -> 'a' | eps").unwrap();
        assert_eq!(count(&g, "a"), BigUint::from(2u32));
        assert_eq!(count(&g, ""), BigUint::from(1u32));
        assert_eq!(count(&g, "aa"), BigUint::from(1u32));
    }
}
