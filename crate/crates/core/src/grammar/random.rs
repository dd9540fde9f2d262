use rand::Rng;

use super::{Cfg, NtId, Production, Symbol, TermId};

/// Draws a small random grammar over `terminals` and returns its reduced
/// form, retrying until the language is nonempty.
///
/// Each of up to `max_nonterminals` nonterminals gets one to three
/// productions with right-hand sides of length `0..=max_rhs`.
pub fn random_grammar<R: Rng>(
    rng: &mut R,
    max_nonterminals: usize,
    max_rhs: usize,
    terminals: &[&str],
) -> Cfg {
    assert!(max_nonterminals >= 1 && !terminals.is_empty());
    loop {
        let n = rng.random_range(1..=max_nonterminals);
        let names: Vec<String> = (0..n).map(|i| format!("N{i}")).collect();
        let mut productions = Vec::new();
        for lhs in 0..n {
            for _ in 0..rng.random_range(1..=3) {
                let len = rng.random_range(0..=max_rhs);
                let rhs = (0..len)
                    .map(|_| {
                        if rng.random_bool(0.5) {
                            Symbol::Terminal(rng.random_range(0..terminals.len()) as TermId)
                        } else {
                            Symbol::Nonterminal(rng.random_range(0..n) as NtId)
                        }
                    })
                    .collect();
                productions.push(Production {
                    lhs: lhs as NtId,
                    rhs,
                });
            }
        }
        let g = Cfg::new(
            names,
            terminals.iter().map(|t| t.to_string()).collect(),
            productions,
            0,
        )
        .expect("generated symbols are in range");
        if let Ok(reduced) = g.reduce() {
            return reduced;
        }
    }
}
