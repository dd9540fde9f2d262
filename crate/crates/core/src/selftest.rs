//! Desk-scale acceptance suite shared by the test harness and the CLI.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use num_bigint::BigUint;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::chart::{count_parse_trees, earley_accepts, earley_next_terminals, sac_measure, SacEngine};
use crate::condition::{constant_survival_example, distortion, Conditioner};
use crate::counters::CounterVector;
use crate::decode::{oracle_invariance_check, separation_example, DecodeConfig, Decoder, ToyLm};
use crate::grammar::{parse_grammar, random_grammar, Builtin, Cfg, TermId};
use crate::oracle::{completion_search, count_leftmost_derivations};
use crate::pda::compile_rtn;
use crate::perf::{fit_affine, loglog_slope, proxy, BitsetEngine, ProxyWeights};
use crate::prob::ratio;
use crate::reach::Engine;
use crate::rewrite::{enumerate_family, family_of, select_min, CostKey, DEFAULT_MEMBER_CAP, DEFAULT_PRIORITY};
use crate::token::Vocab;

pub const CRITERIA: [(u8, &str); 13] = [
    (1, "exact-kappa"),
    (2, "oracle-invariance"),
    (3, "cross-oracle"),
    (4, "catalan-ambiguity"),
    (5, "forest-density"),
    (6, "sac-exponents"),
    (7, "separation-numbers"),
    (8, "distortion-bounds"),
    (9, "soundness"),
    (10, "bitset-overhead"),
    (11, "beam-additivity"),
    (12, "rewriter-selection"),
    (13, "fit-recovery"),
];

#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub millis: u128,
}

/// Grammar sources for the four built-ins, overridable with fixture files.
#[derive(Clone, Debug)]
pub struct SelftestOptions {
    pub sources: [(String, String); 4],
    pub seed: u64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            sources: Builtin::ALL.map(|b| (format!("builtin:{}", b.name()), b.source().to_string())),
            seed: 0,
        }
    }
}

impl SelftestOptions {
    fn grammar(&self, b: Builtin) -> Result<Cfg, String> {
        let i = Builtin::ALL.iter().position(|&x| x == b).expect("listed");
        let (origin, text) = &self.sources[i];
        parse_grammar(text).map_err(|e| format!("{} ({origin}): {e}", b.name()))
    }
}

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn run_criterion(id: u8, opts: &SelftestOptions) -> CriterionResult {
    let name = CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .map(|c| c.1)
        .unwrap_or("unknown");
    let clock = Instant::now();
    let f: fn(&SelftestOptions) -> Outcome = match id {
        1 => exact_kappa,
        2 => oracle_invariance,
        3 => cross_oracle,
        4 => catalan_ambiguity,
        5 => forest_density,
        6 => sac_exponents,
        7 => separation_numbers,
        8 => distortion_bounds,
        9 => soundness,
        10 => bitset_overhead,
        11 => beam_additivity,
        12 => rewriter_selection,
        13 => fit_recovery,
        _ => |_| Err("no such criterion".into()),
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| f(opts))).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let (passed, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CriterionResult {
        id,
        name,
        passed,
        detail,
        millis: clock.elapsed().as_millis(),
    }
}

pub fn run_all(opts: &SelftestOptions) -> Vec<CriterionResult> {
    CRITERIA.iter().map(|c| run_criterion(c.0, opts)).collect()
}

/// One line per criterion; timings are appended only when asked so that
/// the body is reproducible.
pub fn format_report(results: &[CriterionResult], timings: bool) -> String {
    let mut out = String::new();
    for r in results {
        write!(
            out,
            "{} {:>2} {:<20} {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.id,
            r.name,
            r.detail
        )
        .unwrap();
        if timings {
            write!(out, " [{} ms]", r.millis).unwrap();
        }
        out.push('\n');
    }
    let passed = results.iter().filter(|r| r.passed).count();
    writeln!(out, "{passed}/{} passed", results.len()).unwrap();
    out
}

fn exact_kappa(o: &SelftestOptions) -> Outcome {
    let g1 = o.grammar(Builtin::G1)?;
    let g2 = o.grammar(Builtin::G2)?;
    let (k1, k2) = (g1.kappa(), g2.kappa());
    let (n1, n2) = (compile_rtn(&g1).num_states(), compile_rtn(&g2).num_states());
    ensure(k1 == 8 && n1 == 8, || format!("G1: kappa {k1}, states {n1}; expected 8"))?;
    ensure(k2 == 15 && n2 == 15, || format!("G2: kappa {k2}, states {n2}; expected 15"))?;
    Ok("G1 8, G2 15".into())
}

fn oracle_invariance(o: &SelftestOptions) -> Outcome {
    let mut detail = Vec::new();
    for (a, b) in [(Builtin::G1, Builtin::G2), (Builtin::G3, Builtin::G4)] {
        let (ga, gb) = (o.grammar(a)?, o.grammar(b)?);
        let vocab = Vocab::singleton(&ga);
        let r = oracle_invariance_check(&ga, &gb, &vocab, 10).map_err(|e| e.to_string())?;
        if let Some(m) = r.mismatch {
            return Err(format!("{}/{}: mismatch at `{}`", a.name(), b.name(), m.witness()));
        }
        detail.push(format!("{}/{} {} prefixes", a.name(), b.name(), r.prefixes_checked));
    }
    Ok(detail.join(", "))
}

/// Engine, Earley and derivation search agree on every live prefix up to
/// `depth`. Returns the number of prefixes checked.
pub fn cross_check(g: &Cfg, depth: usize, slack: usize) -> Result<usize, String> {
    let g = g.reduce().map_err(|e| e.to_string())?;
    let engine = Engine::for_grammar(&g).map_err(|e| e.to_string())?;
    let mut queue = VecDeque::from([(Vec::<TermId>::new(), engine.init())]);
    let mut checked = 0;
    while let Some((u, s)) = queue.pop_front() {
        checked += 1;
        let n = engine.next_terminals(&s);
        let e = earley_next_terminals(&g, &u);
        let show = || g.format_terminal_string(&u);
        if n.terminals != e.next || n.eos != e.member {
            return Err(format!(
                "engine {:?}/{} vs Earley {:?}/{} at `{}` in\n{g}",
                n.terminals,
                n.eos,
                e.next,
                e.member,
                show()
            ));
        }
        let c = completion_search(&g, &u, slack);
        let sub = c.next.iter().all(|t| n.terminals.contains(t)) && (!c.member || n.eos);
        let eq = c.next == n.terminals && c.member == n.eos;
        if !sub || (c.exhaustive && !eq) {
            return Err(format!(
                "engine {:?}/{} vs search {:?}/{} at `{}` in\n{g}",
                n.terminals,
                n.eos,
                c.next,
                c.member,
                show()
            ));
        }
        if u.len() < depth {
            for &a in &n.terminals {
                let mut v = u.clone();
                v.push(a);
                queue.push_back((v, engine.step_terminal(&s, a)));
            }
        }
    }
    Ok(checked)
}

/// Reduced random grammars over `{a, b}` with nonempty languages.
pub fn random_reduced_grammars(seed: u64, count: usize) -> Vec<Cfg> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let g = random_grammar(&mut rng, 4, 3, &["a", "b"]);
        if let Ok(r) = g.reduce() {
            out.push(r);
        }
    }
    out
}

fn cross_oracle(o: &SelftestOptions) -> Outcome {
    let mut grammars = Vec::new();
    for b in Builtin::ALL {
        grammars.push(o.grammar(b)?);
    }
    grammars.extend(random_reduced_grammars(o.seed, 100));
    let mut total = 0;
    for g in &grammars {
        total += cross_check(g, 8, 8)?;
    }
    Ok(format!("{} grammars, {total} prefixes", grammars.len()))
}

/// `C_n = binom(2n, n) / (n + 1)`.
pub fn catalan_number(n: u32) -> BigUint {
    let mut c = BigUint::from(1u32);
    for k in 0..n {
        c = c * BigUint::from(2 * (2 * k + 1)) / BigUint::from(k + 2);
    }
    c
}

fn words(len: usize) -> impl Iterator<Item = Vec<TermId>> {
    (0u32..1 << len).map(move |m| (0..len).map(|i| (m >> i) & 1).collect())
}

fn catalan_ambiguity(o: &SelftestOptions) -> Outcome {
    let g = o.grammar(Builtin::G4)?;
    for n in 1..=12 {
        let want = catalan_number(n as u32 - 1);
        for w in words(n) {
            let got = count_parse_trees(&g, &w).map_err(|e| e.to_string())?;
            ensure(got == want, || {
                format!("`{}`: {got} trees, expected {want}", g.format_terminal_string(&w))
            })?;
            if n <= 8 {
                let e = count_leftmost_derivations(&g, &w, 1 << 22)
                    .ok_or_else(|| format!("enumeration budget exceeded at n = {n}"))?;
                ensure(e == want, || {
                    format!("`{}`: {e} enumerated trees, expected {want}", g.format_terminal_string(&w))
                })?;
            }
        }
    }
    Ok("n = 1..12 all words; enumeration n <= 8".into())
}

fn binom(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn forest_density(o: &SelftestOptions) -> Outcome {
    let g = o.grammar(Builtin::G4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
    let mixed: Vec<TermId> = (0..64).map(|_| rng.random_range(0..2)).collect();
    for w in [vec![0; 64], mixed] {
        let s = sac_measure(&g, &w, SacEngine::PackedChart).map_err(|e| e.to_string())?;
        let packed = s.packed_component("S -> S S").ok_or("no `S -> S S` rule")?;
        let symbol = s.symbol_component("S").ok_or("no `S` nonterminal")?;
        let (mut cp, mut cs) = (0, 0);
        for t in 1..=64u64 {
            let (p, y) = (packed[t as usize - 1], symbol[t as usize - 1]);
            cp += p;
            cs += y;
            ensure(p == t * (t - 1) / 2, || format!("t = {t}: {p} new packed, expected {}", t * (t - 1) / 2))?;
            ensure(cp == binom(t + 1, 3), || format!("n = {t}: {cp} packed, expected {}", binom(t + 1, 3)))?;
            ensure(cs == binom(t + 1, 2), || format!("n = {t}: {cs} symbol nodes, expected {}", binom(t + 1, 2)))?;
        }
    }
    Ok(format!("n <= 64: packed C(n+1,3) = {} at 64", binom(65, 3)))
}

fn sac_exponents(o: &SelftestOptions) -> Outcome {
    let g4 = o.grammar(Builtin::G4)?;
    let g3 = o.grammar(Builtin::G3)?;
    let w = vec![0; 256];
    let s4 = sac_measure(&g4, &w, SacEngine::PackedChart).map_err(|e| e.to_string())?;
    let s3 = sac_measure(&g3, &w, SacEngine::RegularFastPath).map_err(|e| e.to_string())?;
    let range = 16..=256usize;
    let mut cum = 0u64;
    let mut cum_pts = Vec::new();
    for t in 1..=256 {
        cum += s4.delta(t);
        if range.contains(&t) {
            cum_pts.push((t as f64, cum as f64));
        }
    }
    let step = loglog_slope(&range.clone().map(|t| (t as f64, s4.delta(t) as f64)).collect::<Vec<_>>());
    let cumulative = loglog_slope(&cum_pts);
    let fast = loglog_slope(&range.map(|t| (t as f64, s3.delta(t) as f64)).collect::<Vec<_>>());
    let detail = format!("G4 step {step:.3}, cumulative {cumulative:.3}; G3 fast path {fast:.3}");
    ensure((step - 2.0).abs() <= 0.1, || detail.clone())?;
    ensure((cumulative - 3.0).abs() <= 0.1, || detail.clone())?;
    ensure(fast.abs() <= 0.1, || detail.clone())?;
    Ok(detail)
}

fn separation_numbers(o: &SelftestOptions) -> Outcome {
    let (g, vocab, lm) = separation_example();
    let d = Decoder::new(&g, &vocab).map_err(|e| e.to_string())?;
    let b = vocab.id_of("b").map_err(|e| e.to_string())? as usize;
    let mut c = Conditioner::<BigRational>::new(&lm, &d, 3);
    let q = c.hard_mask_dist(&[]).map_err(|e| e.to_string())?;
    let pe = c.doob_next_dist(&[]).map_err(|e| e.to_string())?;
    ensure(q[b] == ratio(2, 5), || format!("hard-masked P(b) = {}", q[b]))?;
    ensure(pe[b] == ratio(1, 16), || format!("conditioned P(b) = {}", pe[b]))?;
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
    let cfg = DecodeConfig {
        max_len: 3,
        ..Default::default()
    };
    let mut masked_b = 0;
    for _ in 0..n {
        let s = d.sample_with(&lm, &cfg, &mut rng).map_err(|e| e.to_string())?;
        masked_b += (s.tokens[0] as usize == b) as usize;
    }
    let mut fc = Conditioner::<f64>::new(&lm, &d, 3);
    let mut doob_b = 0;
    for _ in 0..n {
        let s = fc.sample(&mut rng).map_err(|e| e.to_string())?;
        doob_b += (s[0] as usize == b) as usize;
    }
    let (fm, fd) = (masked_b as f64 / n as f64, doob_b as f64 / n as f64);
    let detail = format!("exact 2/5 and 1/16; Monte Carlo {fm:.4} and {fd:.4}");
    ensure((fm - 0.4).abs() <= 0.01, || detail.clone())?;
    ensure((fd - 0.0625).abs() <= 0.005, || detail.clone())?;
    Ok(detail)
}

fn distortion_bounds(o: &SelftestOptions) -> Outcome {
    let g = o.grammar(Builtin::G1)?;
    let vocab = Vocab::singleton(&g);
    let d = Decoder::new(&g, &vocab).map_err(|e| e.to_string())?;
    let prefixes: Vec<Vec<u32>> = vec![vec![], vec![0], vec![0, 0], vec![0, 1]];
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..1000 {
        let lm = ToyLm::random(o.seed.wrapping_add(seed), vocab.len());
        let mut c = Conditioner::<f64>::new(&lm, &d, 6);
        for p in &prefixes {
            if !d.is_viable(p) {
                continue;
            }
            let r = c.distortion(p).map_err(|e| e.to_string())?;
            checked += 1;
            ensure(!r.violation, || format!("model {seed}, prefix {p:?}: {r:?}"))?;
            if let (Some(kl), Some(b)) = (r.kl, r.kl_bound) {
                if b > 0.0 {
                    worst = worst.max(kl / b);
                }
            }
        }
    }
    let (cg, cv, clm) = constant_survival_example();
    let cd = Decoder::new(&cg, &cv).map_err(|e| e.to_string())?;
    let r = distortion(&clm, &cd, &[], 4).map_err(|e| e.to_string())?;
    ensure(r.kl == Some(0.0) && r.equal, || format!("constant survival: KL {:?}", r.kl))?;
    Ok(format!("{checked} checks, max KL/bound {worst:.3}; constant survival KL 0"))
}

fn soundness(o: &SelftestOptions) -> Outcome {
    let mut detail = Vec::new();
    for b in Builtin::ALL {
        let g = o.grammar(b)?;
        let vocab = Vocab::singleton(&g);
        let d = Decoder::new(&g, &vocab).map_err(|e| e.to_string())?;
        let lm = ToyLm::random(o.seed ^ 0x5eed, vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
        let cfg = DecodeConfig {
            max_len: 64,
            ..Default::default()
        };
        let (mut done, mut tries) = (0, 0);
        while done < 1000 {
            tries += 1;
            ensure(tries <= 50_000, || format!("{}: only {done} terminated samples", b.name()))?;
            let s = d.sample_with(&lm, &cfg, &mut rng).map_err(|e| e.to_string())?;
            if !s.terminated {
                continue;
            }
            let w = d.vocab().realize(&s.tokens).map_err(|e| e.to_string())?;
            ensure(earley_accepts(&g, &w), || {
                format!("{}: sample `{}` rejected", b.name(), g.format_terminal_string(&w))
            })?;
            done += 1;
        }
        detail.push(format!("{} {done}/{tries}", b.name()));
    }
    Ok(detail.join(", "))
}

fn bitset_overhead(o: &SelftestOptions) -> Outcome {
    let mut out = Vec::new();
    for (b, want) in [(Builtin::G1, 8.0), (Builtin::G2, 15.0)] {
        let g = o.grammar(b)?;
        let be = BitsetEngine::new(Engine::for_grammar(&g).map_err(|e| e.to_string())?);
        let w = g.parse_terminal_string("aaaaabbbbb").map_err(|e| e.to_string())?;
        let s = proxy(&be.run(&w), &ProxyWeights::unit("bitset_slots_scanned").expect("known"));
        ensure(s.iter().all(|&v| v == want), || format!("{}: slots per step {s:?}", b.name()))?;
        out.push(format!("{} {want}", b.name()));
    }
    Ok(out.join(" vs "))
}

fn beam_additivity(o: &SelftestOptions) -> Outcome {
    let mut detail = Vec::new();
    for b in [Builtin::G1, Builtin::G4] {
        let g = o.grammar(b)?;
        let vocab = Vocab::singleton(&g);
        let d = Decoder::new(&g, &vocab).map_err(|e| e.to_string())?;
        let lm = ToyLm::random(o.seed.wrapping_add(11), vocab.len());
        let mut init = CounterVector::default();
        d.engine().init_counted(&mut init);
        for width in [1, 2, 4, 8] {
            let r = d
                .beam(
                    &lm,
                    &DecodeConfig {
                        beam: width,
                        max_len: 12,
                        ..Default::default()
                    },
                )
                .map_err(|e| e.to_string())?;
            let per_hyp: CounterVector = r.steps.iter().flat_map(|s| s.per_hypothesis.iter().copied()).sum();
            let per_step: CounterVector = r.steps.iter().map(|s| s.total).sum();
            ensure(r.total == init + per_hyp && per_step == per_hyp, || {
                format!("{} B={width}: total {:?} vs sum {:?}", b.name(), r.total, init + per_hyp)
            })?;
            for h in &r.hypotheses {
                ensure(h.counters == d.replay_counters(&h.tokens), || {
                    format!("{} B={width}: hypothesis counters differ from replay", b.name())
                })?;
            }
        }
        detail.push(b.name().to_string());
    }
    Ok(format!("B in 1,2,4,8 on {}", detail.join(", ")))
}

fn rewriter_selection(o: &SelftestOptions) -> Outcome {
    let g1 = o.grammar(Builtin::G1)?;
    let g2 = o.grammar(Builtin::G2)?;
    let vocab = Vocab::singleton(&g2);
    let fam = enumerate_family(&g2, 2, DEFAULT_MEMBER_CAP).map_err(|e| e.to_string())?;
    ensure(!fam.partial, || "family hit the member cap".into())?;
    for m in &fam.members {
        let r = oracle_invariance_check(&g2, &m.grammar, &vocab, 8).map_err(|e| e.to_string())?;
        ensure(r.mismatch.is_none(), || format!("member {} differs from G2:\n{}", m.hash, m.grammar))?;
    }
    let min_kappa = fam.members.iter().map(|m| m.kappa).min().unwrap_or(0);
    ensure(min_kappa < 15, || format!("smallest member kappa {min_kappa}"))?;
    let workload: Vec<Vec<TermId>> = (1..=6)
        .map(|n| [vec![0; n], vec![1; n]].concat())
        .collect();
    let pair = family_of(&[g2.clone(), g1.clone()]).map_err(|e| e.to_string())?;
    let sel = select_min(&pair, &workload, &[CostKey::Sac, CostKey::Kappa], None).map_err(|e| e.to_string())?;
    ensure(pair.members[sel.winner].kappa == 8, || "select_min({G1, G2}) did not return G1".into())?;
    for (fam, sel) in [
        (&pair, sel.clone()),
        (&fam, select_min(&fam, &workload, &DEFAULT_PRIORITY, None).map_err(|e| e.to_string())?),
    ] {
        let w = &sel.costs[sel.winner];
        let dominated = sel.costs.iter().any(|c| c.strictly_dominates(w));
        ensure(!dominated, || format!("winner {} is strictly dominated", fam.members[sel.winner].hash))?;
    }
    Ok(format!(
        "{} members invariant to depth 8, min kappa {min_kappa}; G1 selected",
        fam.members.len()
    ))
}

fn fit_recovery(o: &SelftestOptions) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
    let noise = Normal::new(0.0, 0.1).expect("valid sigma");
    let pairs: Vec<(f64, f64)> = (0..64)
        .map(|i| {
            let s = (i % 32) as f64 * 4.0;
            (s, 3.0 * s + 7.0 + noise.sample(&mut rng))
        })
        .collect();
    let f = fit_affine(&pairs).map_err(|e| e.to_string())?;
    let detail = format!("a {:.4}, b {:.4}, R2 {:.6}", f.a, f.b, f.r2);
    ensure((f.a - 3.0).abs() <= 0.15 && (f.b - 7.0).abs() <= 0.35, || detail.clone())?;
    Ok(detail)
}
