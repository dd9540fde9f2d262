use gcd_core::chart::earley_next_terminals;
use gcd_core::counters::CounterVector;
use gcd_core::decode::{hard_mask, oracle_invariance_check, Decoder, ToyLm};
use gcd_core::grammar::{builtin, random_grammar, Builtin, Cfg, Production, Symbol};
use gcd_core::perf::fit_affine;
use gcd_core::reach::{Engine, WorklistOrder};
use gcd_core::rewrite::{canonical_hash, single_rewrites};
use gcd_core::token::{TokenMask, Vocab};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reduced(seed: u64) -> Option<Cfg> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_grammar(&mut rng, 4, 3, &["a", "b"]).reduce().ok()
}

fn counters() -> impl Strategy<Value = CounterVector> {
    prop::array::uniform6(0u64..1_000_000).prop_map(|v| CounterVector {
        chart_symbol_nodes: v[0],
        chart_packed_nodes: v[1],
        engine_edges_touched: v[2],
        saturation_iterations: v[3],
        speculative_token_steps: v[4],
        bitset_slots_scanned: v[5],
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hard_mask_renormalizes_admissible_mass(
        logits in prop::collection::vec(-20.0f64..20.0, 2..10),
        bits in prop::collection::vec(any::<bool>(), 10),
    ) {
        let n = logits.len();
        let mut mask = TokenMask::empty(n, (n - 1) as u32);
        for i in 0..n {
            if bits[i] {
                mask.set(i as u32);
            }
        }
        match hard_mask(&logits, &mask) {
            Err(_) => prop_assert_eq!(mask.count(), 0),
            Ok(q) => {
                let total: f64 = q.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                let on: Vec<usize> = (0..n).filter(|&i| mask.contains(i as u32)).collect();
                for i in 0..n {
                    if !mask.contains(i as u32) {
                        prop_assert_eq!(q[i], 0.0);
                    }
                }
                for w in on.windows(2) {
                    let (i, j) = (w[0], w[1]);
                    let want = (logits[i] - logits[j]).exp();
                    prop_assert!((q[i] / q[j] - want).abs() <= 1e-9 * want.max(1.0));
                }
            }
        }
    }

    #[test]
    fn stepping_leaves_the_source_state_intact(word in prop::collection::vec(0u32..2, 0..12)) {
        let g = builtin(Builtin::G4);
        let e = Engine::for_grammar(&g).unwrap();
        let mut s = e.init();
        for &a in &word {
            let before = s.clone();
            let next = e.step_terminal(&s, a);
            prop_assert_eq!(&s, &before);
            s = next;
        }
        prop_assert_eq!(&s, &e.run(&word));
    }

    #[test]
    fn worklist_order_does_not_change_states(seed in any::<u64>(), word in prop::collection::vec(0u32..2, 0..8)) {
        if let Some(g) = reduced(seed) {
            let fifo = Engine::for_grammar(&g).unwrap();
            let lifo = Engine::for_grammar(&g).unwrap().with_order(WorklistOrder::Lifo);
            prop_assert_eq!(fifo.run(&word), lifo.run(&word));
        }
    }

    #[test]
    fn every_admissible_token_stays_viable(seed in any::<u64>(), walk in any::<u64>()) {
        if let Some(g) = reduced(seed) {
            let vocab = Vocab::singleton(&g);
            let d = Decoder::new(&g, &vocab).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(walk);
            let mut s = d.engine().init();
            let mut u = Vec::new();
            for _ in 0..8 {
                let mask = d.mask(&s);
                let e = earley_next_terminals(&g, &u);
                prop_assert_eq!(mask.eos(), e.member);
                let ys: Vec<u32> = mask.iter().filter(|&y| y != vocab.eos()).collect();
                for &y in &ys {
                    prop_assert!(e.next.contains(&d.vocab().terminals_of(y)[0]));
                }
                let Some(&y) = ys.choose(&mut rng) else { break };
                let a = d.vocab().terminals_of(y)[0];
                s = d.engine().step_terminal(&s, a);
                u.push(a);
            }
        }
    }

    #[test]
    fn counter_sums_and_differences_invert(a in counters(), b in counters()) {
        let s = a + b;
        prop_assert_eq!(s.since(&a), b);
        prop_assert_eq!(s.since(&b), a);
        prop_assert_eq!([a, b].into_iter().sum::<CounterVector>(), s);
    }

    #[test]
    fn canonical_hash_ignores_renaming_and_interleaving(seed in any::<u64>(), shuffle in any::<u64>()) {
        if let Some(g) = reduced(seed) {
            let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
            let n = g.nonterminals().len();
            let mut perm: Vec<u32> = (0..n as u32).collect();
            perm.shuffle(&mut rng);
            let names: Vec<String> = (0..n).map(|i| format!("Q{}", rng.random::<u32>() % 1000 + 1000 * i as u32)).collect();
            let mut nts = vec![String::new(); n];
            for (old, &new) in perm.iter().enumerate() {
                nts[new as usize] = names[old].clone();
            }
            let map = |s: &Symbol| match *s {
                Symbol::Nonterminal(x) => Symbol::Nonterminal(perm[x as usize]),
                t => t,
            };
            let mut prods: Vec<Production> = g
                .productions()
                .iter()
                .map(|p| Production { lhs: perm[p.lhs as usize], rhs: p.rhs.iter().map(map).collect() })
                .collect();
            // Interleaving across left-hand sides may change; order within one may not.
            prods.sort_by_key(|p| p.lhs);
            let h = Cfg::new(nts, g.terminals().to_vec(), prods, perm[g.start() as usize]).unwrap();
            prop_assert_eq!(canonical_hash(&g), canonical_hash(&h));
        }
    }

    #[test]
    fn noise_free_fit_is_exact(a in 0.0f64..50.0, b in 0.0f64..50.0) {
        let pairs: Vec<(f64, f64)> = (0..12).map(|i| (i as f64, a * i as f64 + b)).collect();
        let f = fit_affine(&pairs).unwrap();
        prop_assert!((f.a - a).abs() < 1e-6 && (f.b - b).abs() < 1e-6);
    }

    #[test]
    fn random_model_distributions_are_normalized(seed in any::<u64>(), prefix in prop::collection::vec(0u32..3, 0..6)) {
        let lm = ToyLm::random(seed, 3);
        let p = lm.probs(&prefix);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(p, lm.probs(&prefix));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn single_rewrites_preserve_masks(seed in any::<u64>()) {
        if let Some(g) = reduced(seed) {
            let vocab = Vocab::singleton(&g);
            for (kind, h) in single_rewrites(&g).into_iter().take(6) {
                let r = oracle_invariance_check(&g, &h, &vocab, 6).unwrap();
                prop_assert!(r.mismatch.is_none(), "{:?} broke\n{}\ninto\n{}", kind, g, h);
            }
        }
    }
}
