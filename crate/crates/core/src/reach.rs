//! Reachable-configuration sets of the RTN automaton, maintained as finite
//! automata over the stack alphabet and closed under ε-moves by post*
//! saturation.
//!
//! A [`ConfigSet`] has one node per control state, one base node, and
//! auxiliary nodes introduced by push moves. Configuration `(q, γ)` is a
//! member iff `γ`, read top to bottom and ending in `⊥`, labels a path from
//! `q`'s node to the base node. Edges never enter a control-state node.
//!
//! Auxiliary nodes are keyed by `(return address, step)`. They are fresh for
//! every consumed terminal: reusing one across steps would let stack
//! suffixes from different histories mix. Bisimilar auxiliary nodes are
//! merged after each step.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use crate::counters::CounterVector;
use crate::grammar::{Cfg, GrammarError, TermId};
use crate::pda::{compile_rtn, Input, Npda, StackAction, StateId};

/// Stack label: [`BOTTOM`] or the id of the dot state used as return address.
pub type StackLabel = u32;
pub const BOTTOM: StackLabel = 0;
const EPS: u32 = u32::MAX;

type Edge = (u32, u32, u32);

/// Identity of an auxiliary node: the pushed return address and the step at
/// which the push happened.
pub type AuxKey = (StackLabel, u32);

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ConfigSet {
    num_control: u32,
    /// Sorted, labelled only.
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    aux_keys: Vec<AuxKey>,
}

impl ConfigSet {
    fn from_edges(num_control: u32, mut edges: Vec<Edge>, aux_keys: Vec<AuxKey>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        let n = num_control as usize + 1 + aux_keys.len();
        let mut offsets = vec![0usize; n + 1];
        for &(f, _, _) in &edges {
            offsets[f as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        ConfigSet {
            num_control,
            edges,
            offsets,
            aux_keys,
        }
    }

    pub fn num_control(&self) -> u32 {
        self.num_control
    }

    pub fn base(&self) -> u32 {
        self.num_control
    }

    pub fn num_nodes(&self) -> usize {
        self.num_control as usize + 1 + self.aux_keys.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn aux_keys(&self) -> &[AuxKey] {
        &self.aux_keys
    }

    pub fn edges(&self) -> &[(u32, StackLabel, u32)] {
        &self.edges
    }

    pub fn edges_from(&self, node: u32) -> &[(u32, StackLabel, u32)] {
        &self.edges[self.offsets[node as usize]..self.offsets[node as usize + 1]]
    }

    /// True iff no configuration is represented.
    pub fn is_empty(&self) -> bool {
        self.edges.first().is_none_or(|e| e.0 >= self.num_control)
    }

    /// Membership of `(q, stack)`; `stack` is top first and must end in `⊥`
    /// to be a member.
    pub fn contains(&self, q: StateId, stack: &[StackLabel]) -> bool {
        if q >= self.num_control {
            return false;
        }
        let mut cur: BTreeSet<u32> = BTreeSet::from([q]);
        for &l in stack {
            let mut next = BTreeSet::new();
            for &n in &cur {
                for &(_, el, to) in self.edges_from(n) {
                    if el == l {
                        next.insert(to);
                    }
                }
            }
            if next.is_empty() {
                return false;
            }
            cur = next;
        }
        cur.contains(&self.base())
    }

    /// Control states that occur in at least one member configuration.
    pub fn active_states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.num_control).filter(|&q| !self.edges_from(q).is_empty())
    }

    /// Enumerates members whose stack holds at most `max_height` labels,
    /// including `⊥`. Output is sorted.
    pub fn members_up_to(&self, max_height: usize) -> Vec<(StateId, Vec<StackLabel>)> {
        let mut out = Vec::new();
        for q in 0..self.num_control {
            let mut frontier = vec![(q, Vec::new())];
            for _ in 0..max_height {
                let mut next = Vec::new();
                for (n, stack) in frontier {
                    for &(_, l, to) in self.edges_from(n) {
                        let mut s: Vec<StackLabel> = stack.clone();
                        s.push(l);
                        if to == self.base() {
                            out.push((q, s.clone()));
                        }
                        next.push((to, s));
                    }
                }
                next.sort();
                next.dedup();
                frontier = next;
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WorklistOrder {
    #[default]
    Fifo,
    Lifo,
}

/// Immutable engine state; stepping produces a new value.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EngineState {
    configs: Arc<ConfigSet>,
    consumed: usize,
    live: bool,
}

impl EngineState {
    pub fn configs(&self) -> &ConfigSet {
        &self.configs
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn is_live(&self) -> bool {
        self.live
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NextTerminals {
    /// Sorted terminal ids.
    pub terminals: Vec<TermId>,
    pub eos: bool,
}

#[derive(Clone, Debug)]
pub struct Engine {
    npda: Arc<Npda>,
    order: WorklistOrder,
    /// Per terminal, the `(from, to)` pairs of terminal moves.
    term_moves: Vec<Vec<(StateId, StateId)>>,
}

impl Engine {
    /// Builds an engine for a compiled automaton.
    ///
    /// # Panics
    /// If the automaton was not compiled from a reduced grammar; liveness is
    /// only structural in that case.
    pub fn new(npda: Npda) -> Self {
        assert!(
            npda.from_reduced(),
            "reachability engine requires a reduced grammar"
        );
        let mut term_moves = vec![Vec::new(); npda.num_terminals()];
        for t in npda.transitions() {
            if let Input::Terminal(a) = t.input {
                term_moves[a as usize].push((t.from, t.to));
            }
        }
        Engine {
            npda: Arc::new(npda),
            order: WorklistOrder::Fifo,
            term_moves,
        }
    }

    /// Reduces `g` and compiles it. Terminal ids are unchanged by reduction.
    pub fn for_grammar(g: &Cfg) -> Result<Self, GrammarError> {
        Ok(Engine::new(compile_rtn(&g.reduce()?)))
    }

    pub fn with_order(mut self, order: WorklistOrder) -> Self {
        self.order = order;
        self
    }

    pub fn npda(&self) -> &Npda {
        &self.npda
    }

    pub fn kappa(&self) -> usize {
        self.npda.num_states()
    }

    pub fn num_terminals(&self) -> usize {
        self.term_moves.len()
    }

    pub fn init(&self) -> EngineState {
        self.init_counted(&mut CounterVector::default())
    }

    pub fn init_counted(&self, counters: &mut CounterVector) -> EngineState {
        let mut sat = Saturator::new(self, 0, &[]);
        sat.push((self.npda.initial(), BOTTOM, sat.base));
        sat.run(counters);
        self.wrap(sat.finish(), 0)
    }

    pub fn step_terminal(&self, s: &EngineState, a: TermId) -> EngineState {
        self.step_terminal_counted(s, a, &mut CounterVector::default())
    }

    /// Consumes terminal `a`. Returns a dead state if `a` cannot follow.
    pub fn step_terminal_counted(
        &self,
        s: &EngineState,
        a: TermId,
        counters: &mut CounterVector,
    ) -> EngineState {
        let consumed = s.consumed + 1;
        let old = &s.configs;
        let mut sat = Saturator::new(self, consumed as u32, old.aux_keys());
        for &e in old.edges() {
            if e.0 > old.base() {
                counters.engine_edges_touched += 1;
                sat.insert(e);
            }
        }
        if let Some(moves) = self.term_moves.get(a as usize) {
            for &(p, q) in moves {
                for &(_, l, to) in old.edges_from(p) {
                    counters.engine_edges_touched += 1;
                    sat.push((q, l, to));
                }
            }
        }
        sat.run(counters);
        self.wrap(sat.finish(), consumed)
    }

    pub fn run(&self, word: &[TermId]) -> EngineState {
        let mut s = self.init();
        for &a in word {
            if !s.live {
                break;
            }
            s = self.step_terminal(&s, a);
        }
        s
    }

    pub fn next_terminals(&self, s: &EngineState) -> NextTerminals {
        let mut set = BTreeSet::new();
        for q in s.configs.active_states() {
            for t in self.npda.terminal_moves(q) {
                if let Input::Terminal(a) = t.input {
                    set.insert(a);
                }
            }
        }
        NextTerminals {
            terminals: set.into_iter().collect(),
            eos: self.accepts(s),
        }
    }

    /// Whether the consumed prefix is itself in the language.
    pub fn accepts(&self, s: &EngineState) -> bool {
        s.configs.contains(self.npda.accepting(), &[BOTTOM])
    }

    fn wrap(&self, configs: ConfigSet, consumed: usize) -> EngineState {
        EngineState {
            live: !configs.is_empty(),
            configs: Arc::new(configs),
            consumed,
        }
    }
}

struct Saturator<'e> {
    engine: &'e Engine,
    step: u32,
    num_control: u32,
    base: u32,
    rel: HashSet<Edge>,
    out: Vec<Vec<(u32, u32)>>,
    eps_into: Vec<Vec<u32>>,
    aux_keys: Vec<AuxKey>,
    fresh_aux: HashMap<StackLabel, u32>,
    work: VecDeque<Edge>,
}

impl<'e> Saturator<'e> {
    fn new(engine: &'e Engine, step: u32, old_aux: &[AuxKey]) -> Self {
        let num_control = engine.kappa() as u32;
        let n = num_control as usize + 1 + old_aux.len();
        Saturator {
            engine,
            step,
            num_control,
            base: num_control,
            rel: HashSet::new(),
            out: vec![Vec::new(); n],
            eps_into: vec![Vec::new(); n],
            aux_keys: old_aux.to_vec(),
            fresh_aux: HashMap::new(),
            work: VecDeque::new(),
        }
    }

    fn push(&mut self, e: Edge) {
        self.work.push_back(e);
    }

    fn pop(&mut self) -> Option<Edge> {
        match self.engine.order {
            WorklistOrder::Fifo => self.work.pop_front(),
            WorklistOrder::Lifo => self.work.pop_back(),
        }
    }

    fn aux(&mut self, r: StackLabel) -> u32 {
        if let Some(&n) = self.fresh_aux.get(&r) {
            return n;
        }
        let n = self.out.len() as u32;
        self.out.push(Vec::new());
        self.eps_into.push(Vec::new());
        self.aux_keys.push((r, self.step));
        self.fresh_aux.insert(r, n);
        n
    }

    fn insert(&mut self, e: Edge) -> bool {
        if !self.rel.insert(e) {
            return false;
        }
        let (p, l, q) = e;
        if l == EPS {
            self.eps_into[q as usize].push(p);
        } else {
            self.out[p as usize].push((l, q));
        }
        true
    }

    fn run(&mut self, counters: &mut CounterVector) {
        let npda = Arc::clone(&self.engine.npda);
        while let Some(e) = self.pop() {
            counters.saturation_iterations += 1;
            if !self.insert(e) {
                continue;
            }
            counters.engine_edges_touched += 1;
            let (p, l, q) = e;
            if l == EPS {
                for i in 0..self.out[q as usize].len() {
                    let (l2, q2) = self.out[q as usize][i];
                    self.push((p, l2, q2));
                }
                continue;
            }
            debug_assert!(p < self.num_control);
            for t in npda.epsilon_moves(p) {
                match t.action {
                    StackAction::None => self.push((t.to, l, q)),
                    StackAction::Push(r) => {
                        let aux = self.aux(r);
                        self.push((t.to, r, aux));
                        if self.insert((aux, l, q)) {
                            counters.engine_edges_touched += 1;
                            for i in 0..self.eps_into[aux as usize].len() {
                                let p2 = self.eps_into[aux as usize][i];
                                self.push((p2, l, q));
                            }
                        }
                    }
                    StackAction::Pop(r) => {
                        if l == r {
                            self.push((t.to, EPS, q));
                        }
                    }
                }
            }
        }
    }

    /// Drops ε-edges, discards unreachable nodes, merges bisimilar
    /// non-control nodes and renumbers canonically.
    fn finish(self) -> ConfigSet {
        let nc = self.num_control as usize;
        let n = self.out.len();
        let mut reach = vec![false; n];
        let mut stack: Vec<u32> = Vec::new();
        for p in 0..nc {
            for &(_, q) in &self.out[p] {
                if !reach[q as usize] {
                    reach[q as usize] = true;
                    stack.push(q);
                }
            }
        }
        while let Some(x) = stack.pop() {
            for &(_, q) in &self.out[x as usize] {
                if !reach[q as usize] {
                    reach[q as usize] = true;
                    stack.push(q);
                }
            }
        }
        reach[self.base as usize] = true;
        let live: Vec<u32> = (nc as u32..n as u32).filter(|&x| reach[x as usize]).collect();

        // Moore-style refinement to the coarsest forward bisimulation.
        let mut class: Vec<usize> = vec![0; n];
        let mut count = 1;
        loop {
            let mut sigs: BTreeMap<(usize, Vec<(u32, usize)>), usize> = BTreeMap::new();
            let mut node_sig = Vec::with_capacity(live.len());
            for &x in &live {
                let mut s: Vec<(u32, usize)> = self.out[x as usize]
                    .iter()
                    .map(|&(l, q)| (l, class[q as usize]))
                    .collect();
                s.sort_unstable();
                s.dedup();
                let sig = (class[x as usize], s);
                let next = sigs.len();
                let id = *sigs.entry(sig.clone()).or_insert(next);
                node_sig.push(id);
            }
            let new_count = sigs.len();
            for (i, &x) in live.iter().enumerate() {
                class[x as usize] = node_sig[i];
            }
            if new_count == count {
                break;
            }
            count = new_count;
        }

        // Representative key per class: the base node sorts first.
        let mut class_key: BTreeMap<usize, Option<AuxKey>> = BTreeMap::new();
        for &x in &live {
            let key = if x == self.base {
                None
            } else {
                Some(self.aux_keys[(x - self.base - 1) as usize])
            };
            let c = class[x as usize];
            let entry = class_key.entry(c).or_insert(key);
            if key < *entry {
                *entry = key;
            }
        }
        let mut ordered: Vec<(Option<AuxKey>, usize)> =
            class_key.iter().map(|(&c, &k)| (k, c)).collect();
        ordered.sort();
        debug_assert_eq!(ordered[0].0, None, "base node is never merged");
        let mut new_id: HashMap<usize, u32> = HashMap::new();
        let mut aux_keys = Vec::new();
        for (i, &(k, c)) in ordered.iter().enumerate() {
            new_id.insert(c, self.base + i as u32);
            if let Some(k) = k {
                aux_keys.push(k);
            }
        }

        let mut edges = Vec::new();
        for p in 0..nc {
            for &(l, q) in &self.out[p] {
                edges.push((p as u32, l, new_id[&class[q as usize]]));
            }
        }
        let mut done = HashSet::new();
        for &x in &live {
            let c = class[x as usize];
            if !done.insert(c) {
                continue;
            }
            for &(l, q) in &self.out[x as usize] {
                edges.push((new_id[&c], l, new_id[&class[q as usize]]));
            }
        }
        ConfigSet::from_edges(self.num_control, edges, aux_keys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{builtin, Builtin};
    use crate::pda::SimOutcome;
    use std::collections::hash_map::DefaultHasher;
    use std::hash::{Hash, Hasher};

    fn engine(b: Builtin) -> (Cfg, Engine) {
        let g = builtin(b);
        let e = Engine::for_grammar(&g).unwrap();
        (g, e)
    }

    fn next(g: &Cfg, e: &Engine, u: &str) -> (String, bool) {
        let s = e.run(&g.parse_terminal_string(u).unwrap());
        let n = e.next_terminals(&s);
        (g.format_terminal_string(&n.terminals), n.eos)
    }

    #[test]
    fn init_closure_of_g1() {
        let (_, e) = engine(Builtin::G1);
        let s = e.init();
        let a = e.npda();
        assert!(s.configs().contains(1, &[BOTTOM]));
        assert!(s.configs().contains(a.dot_state(0, 0), &[BOTTOM]));
        assert!(s.configs().contains(a.dot_state(1, 0), &[BOTTOM]));
        assert!(s.configs().contains(a.accepting(), &[BOTTOM]));
        assert!(!s.configs().contains(a.dot_state(0, 1), &[BOTTOM]));
    }

    #[test]
    fn g1_next_terminal_examples() {
        let (g, e) = engine(Builtin::G1);
        assert_eq!(next(&g, &e, "a"), ("ab".into(), false));
        assert_eq!(next(&g, &e, "ab"), ("".into(), true));
        assert_eq!(next(&g, &e, ""), ("a".into(), true));
        assert_eq!(next(&g, &e, "aab"), ("b".into(), false));
        let s = e.run(&g.parse_terminal_string("aa").unwrap());
        assert!(s.is_live());
        let s = e.step_terminal(&s, g.terminal_id("b").unwrap());
        assert!(s.is_live());
        let s = e.run(&g.parse_terminal_string("ab").unwrap());
        assert!(!e.step_terminal(&s, g.terminal_id("a").unwrap()).is_live());
    }

    #[test]
    fn g3_and_g4_admit_everything() {
        for b in [Builtin::G3, Builtin::G4] {
            let (g, e) = engine(b);
            for u in ["", "a", "ba", "abba", "bbbbbbb"] {
                assert_eq!(next(&g, &e, u), ("ab".into(), true), "{b} {u}");
            }
        }
    }

    #[test]
    fn stepping_does_not_mutate_input() {
        let (g, e) = engine(Builtin::G4);
        let s = e.run(&g.parse_terminal_string("abab").unwrap());
        let h = |s: &EngineState| {
            let mut h = DefaultHasher::new();
            s.hash(&mut h);
            h.finish()
        };
        let before = h(&s);
        let copy = s.clone();
        let _ = e.step_terminal(&s, 0);
        let _ = e.step_terminal(&s, 1);
        assert_eq!(h(&s), before);
        assert_eq!(s, copy);
    }

    #[test]
    fn fifo_and_lifo_agree() {
        for b in Builtin::ALL {
            let g = builtin(b);
            let fifo = Engine::for_grammar(&g).unwrap();
            let lifo = fifo.clone().with_order(WorklistOrder::Lifo);
            for u in ["", "a", "ab", "aab", "abab", "bba"] {
                let w = g.parse_terminal_string(u).unwrap();
                let x = fifo.run(&w);
                let y = lifo.run(&w);
                assert_eq!(x.configs().members_up_to(5), y.configs().members_up_to(5));
                assert_eq!(fifo.next_terminals(&x), lifo.next_terminals(&y));
            }
        }
    }

    /// Every member with a short stack is reachable in the bounded
    /// simulation, and vice versa.
    #[test]
    fn members_match_bounded_simulation() {
        for b in Builtin::ALL {
            let g = builtin(b).reduce().unwrap();
            let e = Engine::for_grammar(&g).unwrap();
            for u in ["", "a", "aa", "ab", "abb", "ba"] {
                let w = g.parse_terminal_string(u).unwrap();
                let s = e.run(&w);
                let members = s.configs().members_up_to(4);
                let simulated = simulate_configs(e.npda(), &w, 8);
                let short: BTreeSet<_> = simulated.iter().filter(|c| c.1.len() <= 4).cloned().collect();
                let members: BTreeSet<_> = members.into_iter().collect();
                assert_eq!(members, short, "{b} {u:?}");
                for c in &simulated {
                    assert!(s.configs().contains(c.0, &c.1));
                }
            }
        }
    }

    /// Configurations reachable after reading `w`, stack top first ending in ⊥.
    fn simulate_configs(a: &Npda, w: &[TermId], bound: usize) -> BTreeSet<(StateId, Vec<StackLabel>)> {
        let mut seen = BTreeSet::new();
        let mut q = VecDeque::new();
        seen.insert((a.initial(), 0usize, vec![BOTTOM]));
        q.push_back((a.initial(), 0usize, vec![BOTTOM]));
        while let Some((p, pos, st)) = q.pop_front() {
            let mut next = Vec::new();
            for t in a.epsilon_moves(p) {
                match t.action {
                    StackAction::None => next.push((t.to, pos, st.clone())),
                    StackAction::Push(r) if st.len() < bound => {
                        let mut s = vec![r];
                        s.extend(&st);
                        next.push((t.to, pos, s));
                    }
                    StackAction::Pop(r) if st[0] == r => next.push((t.to, pos, st[1..].to_vec())),
                    _ => {}
                }
            }
            if pos < w.len() {
                for t in a.terminal_moves(p) {
                    if t.input == Input::Terminal(w[pos]) {
                        next.push((t.to, pos + 1, st.clone()));
                    }
                }
            }
            for c in next {
                if seen.insert(c.clone()) {
                    q.push_back(c);
                }
            }
        }
        seen.into_iter()
            .filter(|c| c.1 == w.len())
            .map(|(p, _, s)| (p, s))
            .collect()
    }

    fn return_count(e: &Engine) -> usize {
        e.npda()
            .transitions()
            .iter()
            .filter(|t| matches!(t.action, StackAction::Push(_)))
            .count()
    }

    /// Each step adds at most one node per return address.
    #[test]
    fn node_growth_per_step_is_bounded() {
        for b in Builtin::ALL {
            let (g, e) = engine(b);
            let r = return_count(&e);
            let mut s = e.init();
            let mut prev = s.configs().num_nodes();
            let mut i = 0;
            while i < 40 {
                let n = e.next_terminals(&s);
                if n.terminals.is_empty() {
                    break;
                }
                let a = n.terminals[(i * 7 + 3) % n.terminals.len()];
                s = e.step_terminal(&s, a);
                let now = s.configs().num_nodes();
                assert!(now <= prev + r, "{b}: {prev} -> {now}");
                assert!(now <= g.kappa() as usize + 1 + r * (i + 2));
                prev = now;
                i += 1;
            }
        }
    }

    #[test]
    fn node_counts_grow_at_most_linearly_on_g1() {
        let (g, e) = engine(Builtin::G1);
        let returns = return_count(&e);
        let mut s = e.init();
        let a = g.terminal_id("a").unwrap();
        for t in 1..=30 {
            s = e.step_terminal(&s, a);
            assert!(s.configs().num_nodes() <= e.kappa() + 1 + returns * (t + 1));
        }
        let b = g.terminal_id("b").unwrap();
        for _ in 0..30 {
            s = e.step_terminal(&s, b);
        }
        assert!(e.accepts(&s));
    }

    #[test]
    fn agrees_with_pda_simulation_on_membership() {
        for b in Builtin::ALL {
            let (g, e) = engine(b);
            let a = compile_rtn(&g.reduce().unwrap());
            for u in ["", "a", "b", "ab", "ba", "aabb", "abab", "aab"] {
                let w = g.parse_terminal_string(u).unwrap();
                let sim = a.simulate_accepts(&w, 2 * w.len() + 4);
                assert_eq!(e.accepts(&e.run(&w)), sim == SimOutcome::Accept, "{b} {u}");
            }
        }
    }
}
