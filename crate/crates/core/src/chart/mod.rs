//! Reference recognizer, packed-forest growth measurement and parse counts.

mod count;
mod earley;
mod packed;

pub use count::{count_parse_trees, find_unit_cycle};
pub use earley::{earley_accepts, earley_chart, earley_next_terminals, EarleyChart, EarleyResult, Item};
pub use packed::{BinRhs, BinRule, BinSym, BinarizedGrammar, PackedChart, PackedNode, StepCounts};

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::counters::CounterVector;
use crate::grammar::{Cfg, GrammarError, NtId, Symbol, TermId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChartError {
    #[error(transparent)]
    Grammar(GrammarError),
    #[error("grammar is not right-linear and deterministic: {0}")]
    NotRightLinear(String),
    #[error("nonterminal `{0}` derives itself through nullable context; parse count is infinite")]
    InfiniteAmbiguity(String),
    #[error("too many nullable occurrences to remove ε-rules in `{0}`")]
    TooManyNullable(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SacEngine {
    PackedChart,
    RegularFastPath,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SacStep {
    /// 1-based position just consumed.
    pub t: usize,
    pub new_symbol: u64,
    pub new_packed: u64,
}

/// Per-step structure growth. For the fast path, `new_symbol` holds the
/// bookkeeping units and `new_packed` is zero.
#[derive(Clone, Debug, Serialize)]
pub struct SacSeries {
    pub engine: SacEngine,
    pub steps: Vec<SacStep>,
    /// Labels of the packed-node components (one per binarized rule).
    pub rule_labels: Vec<String>,
    /// Labels of the symbol-node components (one per chart nonterminal).
    pub nonterminal_labels: Vec<String>,
    /// `packed_by_rule[t-1][r]`.
    pub packed_by_rule: Vec<Vec<u64>>,
    /// `symbol_by_nt[t-1][A]`.
    pub symbol_by_nt: Vec<Vec<u64>>,
    /// Whether the full input is derivable.
    pub accepted: bool,
}

impl SacSeries {
    /// Headline increment at step `t` (1-based): packed nodes for the chart,
    /// bookkeeping units for the fast path.
    pub fn delta(&self, t: usize) -> u64 {
        let s = &self.steps[t - 1];
        match self.engine {
            SacEngine::PackedChart => s.new_packed,
            SacEngine::RegularFastPath => s.new_symbol,
        }
    }

    pub fn deltas(&self) -> Vec<u64> {
        (1..=self.steps.len()).map(|t| self.delta(t)).collect()
    }

    pub fn cumulative_packed(&self) -> u64 {
        self.steps.iter().map(|s| s.new_packed).sum()
    }

    pub fn cumulative_symbol(&self) -> u64 {
        self.steps.iter().map(|s| s.new_symbol).sum()
    }

    /// Per-step packed increments of the rule labelled `label`, e.g. `S -> S S`.
    pub fn packed_component(&self, label: &str) -> Option<Vec<u64>> {
        let r = self.rule_labels.iter().position(|l| l == label)?;
        Some(self.packed_by_rule.iter().map(|v| v[r]).collect())
    }

    /// Per-step new symbol nodes for nonterminal `name`.
    pub fn symbol_component(&self, name: &str) -> Option<Vec<u64>> {
        let a = self.nonterminal_labels.iter().position(|l| l == name)?;
        Some(self.symbol_by_nt.iter().map(|v| v[a]).collect())
    }

    /// Columns `t,new_symbol,new_packed,cum_packed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,new_symbol,new_packed,cum_packed\n");
        let mut cum = 0;
        for s in &self.steps {
            cum += s.new_packed;
            writeln!(out, "{},{},{},{}", s.t, s.new_symbol, s.new_packed, cum).unwrap();
        }
        out
    }

    /// Counter vector of step `t` (1-based).
    pub fn counters(&self, t: usize) -> CounterVector {
        let s = &self.steps[t - 1];
        CounterVector {
            chart_symbol_nodes: s.new_symbol,
            chart_packed_nodes: s.new_packed,
            ..Default::default()
        }
    }
}

/// Constant-state recognizer for right-linear grammars where no two
/// productions of a nonterminal start with the same terminal.
#[derive(Clone, Debug)]
pub struct RegularFastPath {
    /// `delta[A][a]`: `Some(Some(B))` for `A -> a B`, `Some(None)` for `A -> a`.
    delta: Vec<Vec<Option<Option<NtId>>>>,
    final_: Vec<bool>,
    start: NtId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FastState {
    At(NtId),
    Done,
    Dead,
}

impl RegularFastPath {
    pub fn new(g: &Cfg) -> Result<Self, ChartError> {
        let g = g.reduce()?;
        let n = g.nonterminals().len();
        let mut delta = vec![vec![None; g.terminals().len()]; n];
        let mut final_ = vec![false; n];
        for (pi, p) in g.productions().iter().enumerate() {
            let bad = || ChartError::NotRightLinear(g.format_production(pi));
            let (a, next) = match p.rhs.as_slice() {
                [] => {
                    final_[p.lhs as usize] = true;
                    continue;
                }
                [Symbol::Terminal(a)] => (*a, None),
                [Symbol::Terminal(a), Symbol::Nonterminal(b)] => (*a, Some(*b)),
                _ => return Err(bad()),
            };
            let slot = &mut delta[p.lhs as usize][a as usize];
            if slot.is_some() {
                return Err(bad());
            }
            *slot = Some(next);
        }
        Ok(RegularFastPath {
            delta,
            final_,
            start: g.start(),
        })
    }

    pub fn init(&self) -> FastState {
        FastState::At(self.start)
    }

    pub fn step(&self, s: FastState, a: TermId) -> FastState {
        match s {
            FastState::At(q) => match self.delta[q as usize].get(a as usize).copied().flatten() {
                Some(Some(b)) => FastState::At(b),
                Some(None) => FastState::Done,
                None => FastState::Dead,
            },
            _ => FastState::Dead,
        }
    }

    pub fn accepts(&self, s: FastState) -> bool {
        match s {
            FastState::At(q) => self.final_[q as usize],
            FastState::Done => true,
            FastState::Dead => false,
        }
    }
}

/// Per-step structure growth of `g` on `w` under `engine`.
pub fn sac_measure(g: &Cfg, w: &[TermId], engine: SacEngine) -> Result<SacSeries, ChartError> {
    match engine {
        SacEngine::PackedChart => {
            let mut chart = PackedChart::new(g)?;
            let mut series = SacSeries {
                engine,
                steps: Vec::with_capacity(w.len()),
                rule_labels: (0..chart.grammar().rules.len())
                    .map(|r| chart.grammar().rule_label(r))
                    .collect(),
                nonterminal_labels: chart.grammar().nonterminals.clone(),
                packed_by_rule: Vec::new(),
                symbol_by_nt: Vec::new(),
                accepted: false,
            };
            for (t, &a) in w.iter().enumerate() {
                let c = chart.step(a);
                series.steps.push(SacStep {
                    t: t + 1,
                    new_symbol: c.new_symbol,
                    new_packed: c.new_packed,
                });
                series.packed_by_rule.push(c.packed_by_rule);
                series.symbol_by_nt.push(c.symbol_by_nt);
            }
            series.accepted = chart.accepts();
            Ok(series)
        }
        SacEngine::RegularFastPath => {
            let fp = RegularFastPath::new(g)?;
            let mut s = fp.init();
            let mut steps = Vec::with_capacity(w.len());
            for (t, &a) in w.iter().enumerate() {
                s = fp.step(s, a);
                steps.push(SacStep {
                    t: t + 1,
                    new_symbol: 1,
                    new_packed: 0,
                });
            }
            Ok(SacSeries {
                engine,
                rule_labels: Vec::new(),
                nonterminal_labels: Vec::new(),
                packed_by_rule: vec![Vec::new(); steps.len()],
                symbol_by_nt: vec![Vec::new(); steps.len()],
                steps,
                accepted: fp.accepts(s),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{builtin, Builtin};

    #[test]
    fn g4_step_five() {
        let g = builtin(Builtin::G4);
        let s = sac_measure(&g, &[0; 5], SacEngine::PackedChart).unwrap();
        assert_eq!(s.packed_component("S -> S S").unwrap()[4], 10);
        let s4 = sac_measure(&g, &[0; 4], SacEngine::PackedChart).unwrap();
        assert_eq!(s4.packed_component("S -> S S").unwrap().iter().sum::<u64>(), 10);
        assert_eq!(s4.symbol_component("S").unwrap().iter().sum::<u64>(), 10);
        assert!(s4.accepted);
    }

    #[test]
    fn g3_fast_path_is_constant() {
        let g = builtin(Builtin::G3);
        let w = g.parse_terminal_string("abbab").unwrap();
        let s = sac_measure(&g, &w, SacEngine::RegularFastPath).unwrap();
        assert_eq!(s.deltas(), vec![1; 5]);
        assert!(s.accepted);
        let chart = sac_measure(&g, &[0; 16], SacEngine::PackedChart).unwrap();
        let d = chart.deltas();
        assert!(d.windows(2).all(|p| p[1] > p[0]), "{d:?}");
    }

    #[test]
    fn fast_path_rejects_other_shapes() {
        for b in [Builtin::G1, Builtin::G4] {
            assert!(matches!(
                sac_measure(&builtin(b), &[0], SacEngine::RegularFastPath),
                Err(ChartError::NotRightLinear(_))
            ));
        }
    }

    #[test]
    fn csv_has_cumulative_column() {
        let g = builtin(Builtin::G4);
        let s = sac_measure(&g, &[0; 3], SacEngine::PackedChart).unwrap();
        assert_eq!(s.to_csv(), "t,new_symbol,new_packed,cum_packed\n1,2,0,0\n2,4,1,1\n3,6,3,4\n");
    }
}
