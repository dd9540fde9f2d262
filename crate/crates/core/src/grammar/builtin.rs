//! The four reference grammars: two presentations of `a^n b^n` and two of
//! `{a, b}*`.

use std::fmt;
use std::str::FromStr;

use super::{parse_grammar, Cfg, GrammarError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Builtin {
    /// `S -> a S b | ε`
    G1,
    /// `S -> a A b | ε`, `A -> a A b | ε`: `G1` with a redundant delegate.
    G2,
    /// Right-recursive `{a,b}*`.
    G3,
    /// Concatenative `{a,b}*`; Catalan-ambiguous.
    G4,
}

impl Builtin {
    pub const ALL: [Builtin; 4] = [Builtin::G1, Builtin::G2, Builtin::G3, Builtin::G4];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::G1 => "G1",
            Builtin::G2 => "G2",
            Builtin::G3 => "G3",
            Builtin::G4 => "G4",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Builtin::G1 => "S -> 'a' S 'b' | eps\n",
            Builtin::G2 => "S -> 'a' A 'b' | eps\nA -> 'a' A 'b' | eps\n",
            Builtin::G3 => "S -> 'a' S | 'b' S | eps\n",
            Builtin::G4 => "S0 -> S | eps\nS -> S S | 'a' | 'b'\n",
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Builtin {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "G1" => Ok(Builtin::G1),
            "G2" => Ok(Builtin::G2),
            "G3" => Ok(Builtin::G3),
            "G4" => Ok(Builtin::G4),
            _ => Err(GrammarError::UnknownBuiltin(s.to_string())),
        }
    }
}

pub fn builtin(which: Builtin) -> Cfg {
    parse_grammar(which.source()).expect("builtin grammars parse")
}

/// Resolves `builtin:G1`..`builtin:G4` or reads a grammar file.
pub fn load_grammar(reference: &str) -> Result<Cfg, GrammarError> {
    if let Some(name) = reference.strip_prefix("builtin:") {
        return Ok(builtin(name.parse()?));
    }
    let text = std::fs::read_to_string(reference).map_err(|e| GrammarError::Io {
        path: reference.to_string(),
        message: e.to_string(),
    })?;
    parse_grammar(&text)
}
