//! Recursive-transition-network compilation of a grammar into a
//! nondeterministic pushdown automaton.
//!
//! Control states are laid out in a fixed order: the start state, then an
//! entry/exit pair per nonterminal, then one dot state per position of every
//! production. The stack alphabet is `⊥` plus every dot state, since dot
//! states double as return addresses.

use std::collections::{HashSet, VecDeque};

use serde::Serialize;

use crate::grammar::{Cfg, NtId, Symbol, TermId};

pub type StateId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum ControlState {
    Start,
    Enter { nonterminal: NtId },
    Exit { nonterminal: NtId },
    Dot { production: usize, position: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StackSymbol {
    Bottom,
    Return(StateId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Input {
    Epsilon,
    Terminal(TermId),
}

/// Stack effect of a transition. Guard-free moves apply under any top.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StackAction {
    None,
    Push(StateId),
    Pop(StateId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Transition {
    pub from: StateId,
    pub input: Input,
    pub action: StackAction,
    pub to: StateId,
}

#[derive(Clone, Debug)]
pub struct Npda {
    states: Vec<ControlState>,
    stack_alphabet: Vec<StackSymbol>,
    transitions: Vec<Transition>,
    initial: StateId,
    accepting: StateId,
    eps_out: Vec<Vec<usize>>,
    term_out: Vec<Vec<usize>>,
    dot_base: Vec<StateId>,
    num_terminals: usize,
    from_reduced: bool,
}

/// Compiles `g` into its RTN automaton. The number of control states is
/// exactly `g.kappa()`.
pub fn compile_rtn(g: &Cfg) -> Npda {
    let n_nt = g.nonterminals().len() as StateId;
    let enter = |a: NtId| 1 + 2 * a;
    let exit = |a: NtId| 2 + 2 * a;

    let mut states = vec![ControlState::Start];
    for a in 0..n_nt {
        states.push(ControlState::Enter { nonterminal: a });
        states.push(ControlState::Exit { nonterminal: a });
    }
    let mut dot_base = Vec::with_capacity(g.productions().len());
    for (pi, p) in g.productions().iter().enumerate() {
        dot_base.push(states.len() as StateId);
        for position in 0..=p.rhs.len() {
            states.push(ControlState::Dot {
                production: pi,
                position,
            });
        }
    }

    let mut stack_alphabet = vec![StackSymbol::Bottom];
    stack_alphabet.extend(
        (dot_base.first().copied().unwrap_or(states.len() as StateId)..states.len() as StateId)
            .map(StackSymbol::Return),
    );

    let mut transitions = vec![Transition {
        from: 0,
        input: Input::Epsilon,
        action: StackAction::None,
        to: enter(g.start()),
    }];
    for (pi, p) in g.productions().iter().enumerate() {
        let dot = |i: usize| dot_base[pi] + i as StateId;
        transitions.push(Transition {
            from: enter(p.lhs),
            input: Input::Epsilon,
            action: StackAction::None,
            to: dot(0),
        });
        for (i, sym) in p.rhs.iter().enumerate() {
            match *sym {
                Symbol::Terminal(t) => transitions.push(Transition {
                    from: dot(i),
                    input: Input::Terminal(t),
                    action: StackAction::None,
                    to: dot(i + 1),
                }),
                Symbol::Nonterminal(b) => {
                    transitions.push(Transition {
                        from: dot(i),
                        input: Input::Epsilon,
                        action: StackAction::Push(dot(i + 1)),
                        to: enter(b),
                    });
                    transitions.push(Transition {
                        from: exit(b),
                        input: Input::Epsilon,
                        action: StackAction::Pop(dot(i + 1)),
                        to: dot(i + 1),
                    });
                }
            }
        }
        transitions.push(Transition {
            from: dot(p.rhs.len()),
            input: Input::Epsilon,
            action: StackAction::None,
            to: exit(p.lhs),
        });
    }

    let mut eps_out = vec![Vec::new(); states.len()];
    let mut term_out = vec![Vec::new(); states.len()];
    for (i, t) in transitions.iter().enumerate() {
        match t.input {
            Input::Epsilon => eps_out[t.from as usize].push(i),
            Input::Terminal(_) => term_out[t.from as usize].push(i),
        }
    }

    Npda {
        states,
        stack_alphabet,
        transitions,
        initial: 0,
        accepting: exit(g.start()),
        eps_out,
        term_out,
        dot_base,
        num_terminals: g.terminals().len(),
        from_reduced: g.is_reduced(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimOutcome {
    Accept,
    Reject,
    /// No accepting run was found, but some branch was cut at the stack
    /// height bound, so rejection is not established.
    BoundExceeded,
}

impl Npda {
    pub fn states(&self) -> &[ControlState] {
        &self.states
    }

    pub fn stack_alphabet(&self) -> &[StackSymbol] {
        &self.stack_alphabet
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn accepting(&self) -> StateId {
        self.accepting
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_terminals(&self) -> usize {
        self.num_terminals
    }

    /// Whether the source grammar was reduced at compile time.
    pub fn from_reduced(&self) -> bool {
        self.from_reduced
    }

    pub fn dot_state(&self, production: usize, position: usize) -> StateId {
        self.dot_base[production] + position as StateId
    }

    pub fn epsilon_moves(&self, from: StateId) -> impl Iterator<Item = &Transition> {
        self.eps_out[from as usize].iter().map(|&i| &self.transitions[i])
    }

    pub fn terminal_moves(&self, from: StateId) -> impl Iterator<Item = &Transition> {
        self.term_out[from as usize].iter().map(|&i| &self.transitions[i])
    }

    /// Exhaustive search over configurations with at most `bound` return
    /// addresses above `⊥`.
    ///
    /// Exponential; intended as a reference for testing the saturation
    /// engine, not for decoding.
    pub fn simulate_accepts(&self, word: &[TermId], bound: usize) -> SimOutcome {
        assert!(bound >= word.len(), "depth bound must be at least |w|");
        let mut seen: HashSet<(StateId, usize, Vec<StateId>)> = HashSet::new();
        let mut queue = VecDeque::new();
        let mut cut = false;
        let init = (self.initial, 0usize, Vec::new());
        seen.insert(init.clone());
        queue.push_back(init);
        while let Some((q, pos, stack)) = queue.pop_front() {
            if q == self.accepting && pos == word.len() && stack.is_empty() {
                return SimOutcome::Accept;
            }
            let mut next = Vec::new();
            for t in self.epsilon_moves(q) {
                match t.action {
                    StackAction::None => next.push((t.to, pos, stack.clone())),
                    StackAction::Push(r) => {
                        if stack.len() >= bound {
                            cut = true;
                        } else {
                            let mut s = stack.clone();
                            s.push(r);
                            next.push((t.to, pos, s));
                        }
                    }
                    StackAction::Pop(r) => {
                        if stack.last() == Some(&r) {
                            let mut s = stack.clone();
                            s.pop();
                            next.push((t.to, pos, s));
                        }
                    }
                }
            }
            if let Some(&a) = word.get(pos) {
                for t in self.terminal_moves(q) {
                    if t.input == Input::Terminal(a) {
                        next.push((t.to, pos + 1, stack.clone()));
                    }
                }
            }
            for c in next {
                if seen.insert(c.clone()) {
                    queue.push_back(c);
                }
            }
        }
        if cut {
            SimOutcome::BoundExceeded
        } else {
            SimOutcome::Reject
        }
    }

    /// Human-readable label such as `S.in` or `S->a.S b`.
    pub fn state_label(&self, g: &Cfg, id: StateId) -> String {
        match self.states[id as usize] {
            ControlState::Start => "start".to_string(),
            ControlState::Enter { nonterminal } => format!("{}.in", g.nonterminal_name(nonterminal)),
            ControlState::Exit { nonterminal } => format!("{}.out", g.nonterminal_name(nonterminal)),
            ControlState::Dot {
                production,
                position,
            } => {
                let p = &g.productions()[production];
                let before = g.format_rhs(&p.rhs[..position]);
                let after = g.format_rhs(&p.rhs[position..]);
                let before = if position == 0 { String::new() } else { before };
                let after = if position == p.rhs.len() { String::new() } else { after };
                format!("{} -> {}.{}", g.nonterminal_name(p.lhs), before, after)
            }
        }
    }

    /// JSON-serializable dump with stable ids, role tags and labels.
    pub fn dump(&self, g: &Cfg) -> PdaDump {
        PdaDump {
            kappa: g.kappa(),
            initial: self.initial,
            accepting: vec![self.accepting],
            states: self
                .states
                .iter()
                .enumerate()
                .map(|(id, role)| StateDump {
                    id: id as StateId,
                    role: *role,
                    label: self.state_label(g, id as StateId),
                })
                .collect(),
            stack_alphabet: self.stack_alphabet.clone(),
            transitions: self
                .transitions
                .iter()
                .map(|t| TransitionDump {
                    from: t.from,
                    input: match t.input {
                        Input::Epsilon => None,
                        Input::Terminal(a) => Some(g.terminal_name(a).to_string()),
                    },
                    action: t.action,
                    to: t.to,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PdaDump {
    pub kappa: u64,
    pub initial: StateId,
    pub accepting: Vec<StateId>,
    pub states: Vec<StateDump>,
    pub stack_alphabet: Vec<StackSymbol>,
    pub transitions: Vec<TransitionDump>,
}

#[derive(Debug, Serialize)]
pub struct StateDump {
    pub id: StateId,
    #[serde(flatten)]
    pub role: ControlState,
    pub label: String,
}

#[derive(Debug, Serialize)]
pub struct TransitionDump {
    pub from: StateId,
    /// Terminal name, or `null` for ε.
    pub input: Option<String>,
    pub action: StackAction,
    pub to: StateId,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{builtin, parse_grammar, Builtin};

    #[test]
    fn state_counts_match_kappa() {
        for b in Builtin::ALL {
            let g = builtin(b);
            assert_eq!(compile_rtn(&g).num_states() as u64, g.kappa(), "{b}");
        }
        assert_eq!(compile_rtn(&builtin(Builtin::G1)).num_states(), 8);
        assert_eq!(compile_rtn(&builtin(Builtin::G2)).num_states(), 15);
    }

    #[test]
    fn epsilon_grammar_has_four_states() {
        let g = parse_grammar("S -> eps").unwrap();
        let a = compile_rtn(&g);
        assert_eq!(a.num_states(), 4);
        assert_eq!(
            a.states(),
            [
                ControlState::Start,
                ControlState::Enter { nonterminal: 0 },
                ControlState::Exit { nonterminal: 0 },
                ControlState::Dot { production: 0, position: 0 },
            ]
        );
        assert_eq!(a.simulate_accepts(&[], 4), SimOutcome::Accept);
    }

    #[test]
    fn transition_inventory_for_g1() {
        let g = builtin(Builtin::G1);
        let a = compile_rtn(&g);
        // start, 2 choices, 2 exits, 2 terminal moves, 1 call + 1 return
        assert_eq!(a.transitions().len(), 9);
        for t in a.transitions() {
            if let Input::Terminal(_) = t.input {
                assert_eq!(t.action, StackAction::None);
            }
        }
        let pushes: Vec<_> = a
            .transitions()
            .iter()
            .filter(|t| matches!(t.action, StackAction::Push(_)))
            .collect();
        assert_eq!(pushes.len(), 1);
        assert_eq!(pushes[0].input, Input::Epsilon);
        assert_eq!(a.stack_alphabet().len(), 1 + 5);
    }

    #[test]
    fn simulation_on_g1() {
        let g = builtin(Builtin::G1);
        let a = compile_rtn(&g);
        let w = |s: &str| g.parse_terminal_string(s).unwrap();
        assert_eq!(a.simulate_accepts(&w("aabb"), 16), SimOutcome::Accept);
        assert_eq!(a.simulate_accepts(&w("aba"), 16), SimOutcome::Reject);
        assert_eq!(a.simulate_accepts(&w(""), 16), SimOutcome::Accept);
        assert_eq!(a.simulate_accepts(&w("aab"), 16), SimOutcome::Reject);
    }

    #[test]
    fn left_recursion_reports_bound() {
        let g = builtin(Builtin::G4);
        let a = compile_rtn(&g);
        let w = g.parse_terminal_string("ab").unwrap();
        assert_eq!(a.simulate_accepts(&w, 6), SimOutcome::Accept);
        let g = parse_grammar("S -> S 'a' | 'b'").unwrap();
        let a = compile_rtn(&g);
        let w = g.parse_terminal_string("a").unwrap();
        assert_eq!(a.simulate_accepts(&w, 3), SimOutcome::BoundExceeded);
    }

    #[test]
    fn dump_is_stable_json() {
        let g = builtin(Builtin::G1);
        let a = compile_rtn(&g);
        let json = serde_json::to_value(a.dump(&g)).unwrap();
        assert_eq!(json["states"].as_array().unwrap().len(), 8);
        assert_eq!(json["states"][1]["role"], "enter");
        assert_eq!(json["states"][1]["label"], "S.in");
        assert_eq!(json["states"][3]["label"], "S -> .'a' S 'b'");
        assert_eq!(json["transitions"][0]["input"], serde_json::Value::Null);
    }
}
