//! Language-preserving grammar rewrites, bounded rewrite families, and
//! cost-based selection of a representative.
//!
//! Two rewrites are available: inlining a non-start nonterminal at one
//! occurrence, and eliminating a delegating nonterminal (one whose
//! productions coincide with another's once the two are identified, or
//! whose single production is a unit rule).

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet, VecDeque};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chart::{sac_measure, RegularFastPath, SacEngine};
use crate::counters::CounterVector;
use crate::grammar::{Cfg, GrammarError, NtId, Production, Symbol, TermId};
use crate::reach::Engine;
use crate::token::{admissible_tokens_counted, Vocab};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RewriteError {
    #[error("production index {0} out of range")]
    NoSuchProduction(usize),
    #[error("position {position} of `{production}` does not hold a nonterminal")]
    NotANonterminal { production: String, position: usize },
    #[error("cannot inline the start symbol `{0}`")]
    StartSymbol(String),
    #[error("`{eliminated}` does not delegate to `{into}`")]
    NotDelegating { eliminated: String, into: String },
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Chart(#[from] crate::chart::ChartError),
    #[error(transparent)]
    Vocab(#[from] crate::token::VocabError),
}

/// Replaces production `production` by one copy per alternative of the
/// nonterminal at `position` of its right-hand side. The result is reduced.
pub fn inline(g: &Cfg, production: usize, position: usize) -> Result<Cfg, RewriteError> {
    let p = g
        .productions()
        .get(production)
        .ok_or(RewriteError::NoSuchProduction(production))?;
    let a = match p.rhs.get(position) {
        Some(Symbol::Nonterminal(a)) => *a,
        _ => {
            return Err(RewriteError::NotANonterminal {
                production: g.format_production(production),
                position,
            })
        }
    };
    if a == g.start() {
        return Err(RewriteError::StartSymbol(g.nonterminal_name(a).to_string()));
    }
    let mut prods = Vec::with_capacity(g.productions().len() + 2);
    for (i, q) in g.productions().iter().enumerate() {
        if i != production {
            prods.push(q.clone());
            continue;
        }
        for alt in g.productions_of(a) {
            let mut rhs = p.rhs[..position].to_vec();
            rhs.extend_from_slice(&g.productions()[alt].rhs);
            rhs.extend_from_slice(&p.rhs[position + 1..]);
            prods.push(Production { lhs: p.lhs, rhs });
        }
    }
    let out = Cfg::new(g.nonterminals().to_vec(), g.terminals().to_vec(), prods, g.start())?;
    Ok(out.reduce()?)
}

/// Substitutes `into` for `from` in a production.
fn substitute(p: &Production, from: NtId, into: NtId) -> Production {
    let f = |n: NtId| if n == from { into } else { n };
    Production {
        lhs: f(p.lhs),
        rhs: p
            .rhs
            .iter()
            .map(|s| match *s {
                Symbol::Nonterminal(n) => Symbol::Nonterminal(f(n)),
                t => t,
            })
            .collect(),
    }
}

/// Whether `eliminated` can be replaced by `into` everywhere.
pub fn delegates(g: &Cfg, eliminated: NtId, into: NtId) -> bool {
    if eliminated == into {
        return false;
    }
    let of = |n: NtId| -> Vec<Production> {
        let mut v: Vec<Production> = g
            .productions_of(n)
            .map(|i| substitute(&g.productions()[i], eliminated, into))
            .map(|p| Production { lhs: into, ..p })
            .collect();
        v.sort();
        v.dedup();
        v
    };
    let elim_prods: Vec<usize> = g.productions_of(eliminated).collect();
    let unit = elim_prods.len() == 1 && g.productions()[elim_prods[0]].rhs == [Symbol::Nonterminal(into)];
    unit || of(eliminated) == of(into)
}

/// Removes `eliminated`, redirecting every use to `into`.
pub fn eliminate_delegation(g: &Cfg, eliminated: NtId, into: NtId) -> Result<Cfg, RewriteError> {
    if !delegates(g, eliminated, into) {
        return Err(RewriteError::NotDelegating {
            eliminated: g.nonterminal_name(eliminated).to_string(),
            into: g.nonterminal_name(into).to_string(),
        });
    }
    let prods: Vec<Production> = g
        .productions()
        .iter()
        .filter(|p| p.lhs != eliminated)
        .map(|p| substitute(p, eliminated, into))
        .filter(|p| p.rhs != [Symbol::Nonterminal(p.lhs)])
        .collect();
    let start = if g.start() == eliminated { into } else { g.start() };
    let out = Cfg::new(g.nonterminals().to_vec(), g.terminals().to_vec(), prods, start)?;
    Ok(out.reduce()?)
}

/// Structure with nonterminals numbered by first use from the start
/// symbol and productions sorted. Equal canonical forms imply identical
/// grammars up to renaming; the converse need not hold.
pub fn canonical_form(g: &Cfg) -> String {
    let mut order: Vec<NtId> = vec![g.start()];
    let mut index: HashMap<NtId, usize> = HashMap::from([(g.start(), 0)]);
    let mut k = 0;
    while k < order.len() {
        let a = order[k];
        k += 1;
        for pi in g.productions_of(a) {
            for s in &g.productions()[pi].rhs {
                if let Symbol::Nonterminal(b) = *s {
                    if !index.contains_key(&b) {
                        index.insert(b, order.len());
                        order.push(b);
                    }
                }
            }
        }
    }
    for n in 0..g.nonterminals().len() as NtId {
        if !index.contains_key(&n) {
            index.insert(n, order.len());
            order.push(n);
        }
    }
    let sym = |s: &Symbol| match *s {
        Symbol::Terminal(t) => crate::grammar::quote_terminal(g.terminal_name(t)),
        Symbol::Nonterminal(n) => format!("n{}", index[&n]),
    };
    let mut rows: Vec<(usize, Vec<String>)> = g
        .productions()
        .iter()
        .map(|p| (index[&p.lhs], p.rhs.iter().map(sym).collect()))
        .collect();
    rows.sort();
    let mut terms: Vec<String> = g.terminals().iter().map(|t| crate::grammar::quote_terminal(t)).collect();
    terms.sort();
    let mut out = format!("T {}\n", terms.join(" "));
    for (lhs, rhs) in rows {
        out.push_str(&format!("n{lhs} -> {}\n", rhs.join(" ")));
    }
    out
}

pub fn canonical_hash(g: &Cfg) -> String {
    let digest = Sha256::digest(canonical_form(g).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RewriteKind {
    Inline {
        production: String,
        position: usize,
        nonterminal: String,
    },
    DelegationElimination {
        eliminated: String,
        into: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RewriteStep {
    #[serde(flatten)]
    pub kind: RewriteKind,
    pub source_hash: String,
}

/// Every single rewrite applicable to `g`, in a fixed order.
pub fn single_rewrites(g: &Cfg) -> Vec<(RewriteKind, Cfg)> {
    let mut out = Vec::new();
    for (pi, p) in g.productions().iter().enumerate() {
        for (pos, s) in p.rhs.iter().enumerate() {
            if let Symbol::Nonterminal(a) = *s {
                if let Ok(h) = inline(g, pi, pos) {
                    out.push((
                        RewriteKind::Inline {
                            production: g.format_production(pi),
                            position: pos,
                            nonterminal: g.nonterminal_name(a).to_string(),
                        },
                        h,
                    ));
                }
            }
        }
    }
    let n = g.nonterminals().len() as NtId;
    for e in 0..n {
        for into in 0..n {
            // A symmetric merge keeps the start symbol's name.
            if delegates(g, e, into) && !(e == g.start() && delegates(g, into, e)) {
                if let Ok(h) = eliminate_delegation(g, e, into) {
                    out.push((
                        RewriteKind::DelegationElimination {
                            eliminated: g.nonterminal_name(e).to_string(),
                            into: g.nonterminal_name(into).to_string(),
                        },
                        h,
                    ));
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct FamilyMember {
    #[serde(serialize_with = "ser_grammar")]
    pub grammar: Cfg,
    pub hash: String,
    pub kappa: u64,
    pub path: Vec<RewriteStep>,
}

fn ser_grammar<S: serde::Serializer>(g: &Cfg, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&g.to_string())
}

#[derive(Clone, Debug, Serialize)]
pub struct RewriteFamily {
    pub budget: usize,
    /// Members in discovery order; the seed is first.
    pub members: Vec<FamilyMember>,
    /// The member cap stopped enumeration early.
    pub partial: bool,
}

pub const DEFAULT_MEMBER_CAP: usize = 10_000;

/// Breadth-first closure under at most `budget` rewrites, deduplicated by
/// canonical hash.
pub fn enumerate_family(g: &Cfg, budget: usize, member_cap: usize) -> Result<RewriteFamily, RewriteError> {
    let seed = g.reduce()?;
    let h = canonical_hash(&seed);
    let mut seen = HashSet::from([h.clone()]);
    let mut members = vec![FamilyMember {
        kappa: seed.kappa(),
        grammar: seed,
        hash: h,
        path: Vec::new(),
    }];
    let mut queue = VecDeque::from([(0usize, 0usize)]);
    let mut partial = false;
    'outer: while let Some((idx, depth)) = queue.pop_front() {
        if depth == budget {
            continue;
        }
        let m = members[idx].clone();
        for (kind, next) in single_rewrites(&m.grammar) {
            let h = canonical_hash(&next);
            if !seen.insert(h.clone()) {
                continue;
            }
            if members.len() >= member_cap {
                partial = true;
                break 'outer;
            }
            let mut path = m.path.clone();
            path.push(RewriteStep {
                kind,
                source_hash: m.hash.clone(),
            });
            members.push(FamilyMember {
                kappa: next.kappa(),
                grammar: next,
                hash: h,
                path,
            });
            queue.push_back((members.len() - 1, depth + 1));
        }
    }
    Ok(RewriteFamily {
        budget,
        members,
        partial,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKey {
    Sac,
    Kappa,
    Tokenizer,
}

impl std::str::FromStr for CostKey {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sac" => Ok(CostKey::Sac),
            "kappa" => Ok(CostKey::Kappa),
            "tokenizer" | "tok" => Ok(CostKey::Tokenizer),
            other => Err(format!("unknown cost component `{other}` (expected sac, kappa, tokenizer)")),
        }
    }
}

pub const DEFAULT_PRIORITY: [CostKey; 3] = [CostKey::Sac, CostKey::Kappa, CostKey::Tokenizer];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostVector {
    /// Mean per-step structure proxy (symbol plus packed nodes) over the
    /// workload; uses the constant-state recognizer when the grammar admits
    /// one, the packed chart otherwise.
    pub sac: f64,
    pub kappa: u64,
    /// Mean speculative terminal steps per mask over the workload.
    pub tokenizer: f64,
}

impl CostVector {
    fn get(&self, k: CostKey) -> f64 {
        match k {
            CostKey::Sac => self.sac,
            CostKey::Kappa => self.kappa as f64,
            CostKey::Tokenizer => self.tokenizer,
        }
    }

    pub fn strictly_dominates(&self, other: &CostVector) -> bool {
        [CostKey::Sac, CostKey::Kappa, CostKey::Tokenizer]
            .iter()
            .all(|&k| self.get(k) < other.get(k))
    }
}

/// Measures a grammar's cost on `workload` (terminal strings).
pub fn measure_cost(g: &Cfg, workload: &[Vec<TermId>], vocab: Option<&Vocab>) -> Result<CostVector, RewriteError> {
    let engine_kind = if RegularFastPath::new(g).is_ok() {
        SacEngine::RegularFastPath
    } else {
        SacEngine::PackedChart
    };
    let mut sac_sum = 0.0;
    let mut sac_n = 0usize;
    for w in workload {
        let s = sac_measure(g, w, engine_kind)?;
        for st in &s.steps {
            sac_sum += (st.new_symbol + st.new_packed) as f64;
            sac_n += 1;
        }
    }
    let engine = Engine::for_grammar(g)?;
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => Vocab::singleton(g),
    };
    let bound = vocab.bind(g)?;
    let mut counters = CounterVector::default();
    let mut masks = 0usize;
    for w in workload {
        let mut s = engine.init();
        for &a in w {
            admissible_tokens_counted(&engine, &s, &bound, &mut counters);
            masks += 1;
            s = engine.step_terminal(&s, a);
            if !s.is_live() {
                break;
            }
        }
    }
    Ok(CostVector {
        sac: if sac_n == 0 { 0.0 } else { sac_sum / sac_n as f64 },
        kappa: g.kappa(),
        tokenizer: if masks == 0 {
            0.0
        } else {
            counters.speculative_token_steps as f64 / masks as f64
        },
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Selection {
    pub winner: usize,
    pub priority: Vec<CostKey>,
    pub costs: Vec<CostVector>,
}

/// Compares members lexicographically under `priority`, then by grammar
/// size, then by canonical hash.
pub fn compare_members(a: (&FamilyMember, &CostVector), b: (&FamilyMember, &CostVector), priority: &[CostKey]) -> Ordering {
    for &k in priority {
        match a.1.get(k).total_cmp(&b.1.get(k)) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.0.grammar
        .size()
        .cmp(&b.0.grammar.size())
        .then_with(|| a.0.hash.cmp(&b.0.hash))
}

pub fn select_min(
    family: &RewriteFamily,
    workload: &[Vec<TermId>],
    priority: &[CostKey],
    vocab: Option<&Vocab>,
) -> Result<Selection, RewriteError> {
    assert!(!family.members.is_empty(), "family is never empty");
    let costs = family
        .members
        .par_iter()
        .map(|m| measure_cost(&m.grammar, workload, vocab))
        .collect::<Result<Vec<_>, _>>()?;
    let winner = (0..costs.len())
        .min_by(|&i, &j| {
            compare_members(
                (&family.members[i], &costs[i]),
                (&family.members[j], &costs[j]),
                priority,
            )
        })
        .expect("nonempty");
    Ok(Selection {
        winner,
        priority: priority.to_vec(),
        costs,
    })
}

/// Family of the given grammars without rewrites, for comparing
/// hand-written alternatives.
pub fn family_of(grammars: &[Cfg]) -> Result<RewriteFamily, RewriteError> {
    let mut members = Vec::new();
    for g in grammars {
        let g = g.reduce()?;
        members.push(FamilyMember {
            hash: canonical_hash(&g),
            kappa: g.kappa(),
            grammar: g,
            path: Vec::new(),
        });
    }
    Ok(RewriteFamily {
        budget: 0,
        members,
        partial: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{builtin, parse_grammar, Builtin};

    #[test]
    fn inline_into_g2() {
        let g = builtin(Builtin::G2);
        let h = inline(&g, 0, 1).unwrap();
        assert_eq!(h.to_string(), "S -> 'a' 'a' A 'b' 'b' | 'a' 'b' | eps\nA -> 'a' A 'b' | eps\n");
        assert!(matches!(inline(&g, 0, 0), Err(RewriteError::NotANonterminal { .. })));
        assert!(matches!(inline(&g, 1, 0), Err(RewriteError::NotANonterminal { .. })));
        let g1 = builtin(Builtin::G1);
        assert!(matches!(inline(&g1, 0, 1), Err(RewriteError::StartSymbol(_))));
    }

    #[test]
    fn single_alternative_inline_keeps_count() {
        let g = parse_grammar("S -> 'x' B | 'y'\nB -> 'b' S").unwrap();
        let h = inline(&g, 0, 1).unwrap();
        assert_eq!(h.productions().len(), g.productions().len() - 1);
        assert_eq!(h.to_string(), "%terminals 'x' 'y' 'b'\nS -> 'x' 'b' S | 'y'\n");
    }

    #[test]
    fn delegation_merges_g2_into_g1() {
        let g2 = builtin(Builtin::G2);
        assert!(delegates(&g2, 1, 0));
        let h = eliminate_delegation(&g2, 1, 0).unwrap();
        assert_eq!(canonical_hash(&h), canonical_hash(&builtin(Builtin::G1)));
        assert_eq!(h.kappa(), 8);
        let unit = parse_grammar("S -> A\nA -> 'a' A | 'b'").unwrap();
        let h = eliminate_delegation(&unit, 0, 1).unwrap();
        assert_eq!(h.nonterminal_name(h.start()), "A");
        assert!(eliminate_delegation(&builtin(Builtin::G4), 0, 1).is_err());
    }

    #[test]
    fn canonical_form_ignores_names_and_order() {
        let a = parse_grammar("S -> 'a' X | eps\nX -> 'b' S").unwrap();
        let b = parse_grammar("%start Q\nY -> 'b' Q\nQ -> eps | 'a' Y").unwrap();
        assert_eq!(canonical_hash(&a), canonical_hash(&b));
        assert_ne!(canonical_hash(&a), canonical_hash(&builtin(Builtin::G1)));
    }

    #[test]
    fn family_sizes() {
        let f0 = enumerate_family(&builtin(Builtin::G1), 0, DEFAULT_MEMBER_CAP).unwrap();
        assert_eq!(f0.members.len(), 1);
        let f1 = enumerate_family(&builtin(Builtin::G2), 1, DEFAULT_MEMBER_CAP).unwrap();
        assert!(f1.members.len() > 1);
        assert!(f1.members.iter().any(|m| m.kappa == 8));
        let capped = enumerate_family(&builtin(Builtin::G2), 3, 3).unwrap();
        assert!(capped.partial);
        assert_eq!(capped.members.len(), 3);
    }

    #[test]
    fn selection_prefers_g1_and_g3() {
        let g1 = builtin(Builtin::G1);
        let w: Vec<Vec<TermId>> = ["aabb", "ab", "aaabbb"]
            .iter()
            .map(|s| g1.parse_terminal_string(s).unwrap())
            .collect();
        let fam = family_of(&[builtin(Builtin::G2), g1.clone()]).unwrap();
        let sel = select_min(&fam, &w, &[CostKey::Sac, CostKey::Kappa], None).unwrap();
        assert_eq!(sel.winner, 1);
        let fam = family_of(&[builtin(Builtin::G4), builtin(Builtin::G3)]).unwrap();
        let sel = select_min(&fam, &[vec![0; 32]], &DEFAULT_PRIORITY, None).unwrap();
        assert_eq!(sel.winner, 1);
        assert!(sel.costs[0].sac > 100.0 * sel.costs[1].sac);
        let single = family_of(&[g1]).unwrap();
        assert_eq!(select_min(&single, &w, &DEFAULT_PRIORITY, None).unwrap().winner, 0);
    }
}
