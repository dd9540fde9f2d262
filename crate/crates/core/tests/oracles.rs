//! Independent recognizers agree with the reachability engine.

use gcd_core::chart::{count_parse_trees, earley_accepts, earley_next_terminals, find_unit_cycle};
use gcd_core::decode::pair_vocab;
use gcd_core::grammar::{builtin, Builtin, Cfg, TermId};
use gcd_core::oracle::count_leftmost_derivations;
use gcd_core::pda::{compile_rtn, SimOutcome};
use gcd_core::reach::Engine;
use gcd_core::selftest::{cross_check, random_reduced_grammars};
use gcd_core::token::admissible_tokens;

fn corpus(seed: u64, n: usize) -> Vec<Cfg> {
    let mut v: Vec<Cfg> = Builtin::ALL.iter().map(|&b| builtin(b)).collect();
    v.extend(random_reduced_grammars(seed, n));
    v
}

fn strings(alphabet: u32, max_len: usize) -> Vec<Vec<TermId>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for w in &frontier {
            for a in 0..alphabet {
                let mut x: Vec<TermId> = w.clone();
                x.push(a);
                next.push(x);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn engine_matches_earley_and_search_on_other_seeds() {
    for seed in [1, 2] {
        for g in corpus(seed, 50) {
            cross_check(&g, 7, 8).unwrap();
        }
    }
}

#[test]
fn membership_agrees_with_bounded_simulation() {
    let (mut conclusive, mut total) = (0, 0);
    for g in corpus(7, 40) {
        let g = g.reduce().unwrap();
        let npda = compile_rtn(&g);
        let engine = Engine::new(npda.clone());
        for w in strings(g.terminals().len() as u32, 6) {
            let by_earley = earley_accepts(&g, &w);
            assert_eq!(engine.accepts(&engine.run(&w)), by_earley, "{w:?} in\n{g}");
            total += 1;
            match npda.simulate_accepts(&w, 8) {
                SimOutcome::Accept => assert!(by_earley, "{w:?} in\n{g}"),
                SimOutcome::Reject => assert!(!by_earley, "{w:?} in\n{g}"),
                SimOutcome::BoundExceeded => continue,
            }
            conclusive += 1;
        }
    }
    println!("{conclusive}/{total} simulations conclusive");
    assert!(conclusive * 2 > total);
}

#[test]
fn multi_terminal_tokens_match_earley_viability() {
    for g in corpus(9, 30) {
        let g = g.reduce().unwrap();
        let vocab = pair_vocab(&g).bind(&g).unwrap();
        let engine = Engine::for_grammar(&g).unwrap();
        for u in strings(g.terminals().len() as u32, 4) {
            let s = engine.run(&u);
            if !s.is_live() {
                continue;
            }
            let mask = admissible_tokens(&engine, &s, &vocab);
            for y in 0..vocab.len() as u32 {
                let viable = if y == vocab.eos() {
                    earley_accepts(&g, &u)
                } else {
                    let mut x = u.clone();
                    x.extend_from_slice(vocab.terminals_of(y));
                    let r = earley_next_terminals(&g, &x);
                    r.member || !r.next.is_empty()
                };
                assert_eq!(mask.contains(y), viable, "token {y} after {u:?} in\n{g}");
            }
        }
    }
}

#[test]
fn tree_counts_match_derivation_enumeration() {
    let mut compared = 0;
    for g in corpus(11, 60) {
        let g = g.reduce().unwrap();
        if find_unit_cycle(&g).is_some() {
            assert!(count_parse_trees(&g, &[]).is_err());
            continue;
        }
        for w in strings(g.terminals().len() as u32, 5) {
            let Some(e) = count_leftmost_derivations(&g, &w, 1 << 18) else {
                continue;
            };
            assert_eq!(count_parse_trees(&g, &w).unwrap(), e, "{w:?} in\n{g}");
            compared += 1;
        }
    }
    assert!(compared > 1000);
}
