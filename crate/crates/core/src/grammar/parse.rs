//! Text format for grammars.
//!
//! ```text
//! # comment
//! S  -> 'a' S 'b' | eps
//! A  -> 'x' ; B -> A A
//! ```
//!
//! One rule per line (or separated by `;`), terminals in single quotes,
//! `eps` for the empty right-hand side, and the first left-hand side is the
//! start symbol. Repeated definitions of a nonterminal append alternatives.
//! Optional `%start`, `%nonterminals` and `%terminals` directives pin the
//! symbol tables explicitly; the printer emits them only when needed.

use std::collections::HashMap;

use super::{Cfg, GrammarError, NtId, Production, Symbol, TermId};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Quoted(String),
    Directive(String),
    Arrow,
    Bar,
    Sep,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> GrammarError {
    GrammarError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn lex(text: &str) -> Result<Vec<Spanned>, GrammarError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            match c {
                '#' => break,
                ';' => {
                    out.push(Spanned { tok: Tok::Sep, line: line_no, col });
                    i += 1;
                }
                '|' => {
                    out.push(Spanned { tok: Tok::Bar, line: line_no, col });
                    i += 1;
                }
                '-' if chars.get(i + 1) == Some(&'>') => {
                    out.push(Spanned { tok: Tok::Arrow, line: line_no, col });
                    i += 2;
                }
                '\'' => {
                    let mut name = String::new();
                    i += 1;
                    loop {
                        match chars.get(i) {
                            None => return Err(syntax(line_no, col, "unterminated terminal literal")),
                            Some('\\') => {
                                match chars.get(i + 1) {
                                    Some(&e) => name.push(e),
                                    None => {
                                        return Err(syntax(line_no, col, "unterminated terminal literal"))
                                    }
                                }
                                i += 2;
                            }
                            Some('\'') => {
                                i += 1;
                                break;
                            }
                            Some(&ch) => {
                                name.push(ch);
                                i += 1;
                            }
                        }
                    }
                    if name.is_empty() {
                        return Err(syntax(line_no, col, "empty terminal literal; use eps"));
                    }
                    out.push(Spanned { tok: Tok::Quoted(name), line: line_no, col });
                }
                '%' => {
                    let start = i + 1;
                    i += 1;
                    while i < chars.len() && is_ident_char(chars[i]) {
                        i += 1;
                    }
                    let name: String = chars[start..i].iter().collect();
                    out.push(Spanned { tok: Tok::Directive(name), line: line_no, col });
                }
                c if c.is_whitespace() => i += 1,
                c if is_ident_char(c) => {
                    let start = i;
                    while i < chars.len() && is_ident_char(chars[i]) {
                        i += 1;
                    }
                    let name: String = chars[start..i].iter().collect();
                    out.push(Spanned { tok: Tok::Ident(name), line: line_no, col });
                }
                other => return Err(syntax(line_no, col, format!("unexpected character `{other}`"))),
            }
        }
        out.push(Spanned {
            tok: Tok::Sep,
            line: line_no,
            col: chars.len() + 1,
        });
    }
    Ok(out)
}

enum RawSym {
    Nt { name: String, line: usize, col: usize },
    T(String),
}

struct RawRule {
    lhs: String,
    alts: Vec<Vec<RawSym>>,
}

#[derive(Default)]
struct Directives {
    start: Option<(String, usize, usize)>,
    nonterminals: Option<Vec<String>>,
    terminals: Option<Vec<String>>,
}

/// Parses the grammar text format into a validated [`Cfg`].
pub fn parse_grammar(text: &str) -> Result<Cfg, GrammarError> {
    let toks = lex(text)?;
    let mut pos = 0;
    let mut rules: Vec<RawRule> = Vec::new();
    let mut directives = Directives::default();

    while pos < toks.len() {
        let Spanned { tok, line, col } = toks[pos].clone();
        match tok {
            Tok::Sep => pos += 1,
            Tok::Directive(name) => {
                pos += 1;
                let mut args = Vec::new();
                while pos < toks.len() && toks[pos].tok != Tok::Sep {
                    args.push(toks[pos].clone());
                    pos += 1;
                }
                match name.as_str() {
                    "start" => match args.as_slice() {
                        [Spanned { tok: Tok::Ident(n), line, col }] => {
                            directives.start = Some((n.clone(), *line, *col))
                        }
                        _ => return Err(syntax(line, col, "%start takes one nonterminal")),
                    },
                    "nonterminals" => {
                        let mut names = Vec::new();
                        for a in args {
                            match a.tok {
                                Tok::Ident(n) => names.push(n),
                                _ => return Err(syntax(a.line, a.col, "expected nonterminal name")),
                            }
                        }
                        directives.nonterminals = Some(names);
                    }
                    "terminals" => {
                        let mut names = Vec::new();
                        for a in args {
                            match a.tok {
                                Tok::Quoted(n) => names.push(n),
                                _ => return Err(syntax(a.line, a.col, "expected quoted terminal")),
                            }
                        }
                        directives.terminals = Some(names);
                    }
                    other => return Err(syntax(line, col, format!("unknown directive %{other}"))),
                }
            }
            Tok::Ident(lhs) => {
                pos += 1;
                match toks.get(pos) {
                    Some(Spanned { tok: Tok::Arrow, .. }) => pos += 1,
                    Some(t) => return Err(syntax(t.line, t.col, "expected `->`")),
                    None => return Err(syntax(line, col, "expected `->`")),
                }
                let mut alts = Vec::new();
                let mut current: Vec<RawSym> = Vec::new();
                let mut saw_eps = false;
                let mut alt_start = toks.get(pos).map(|t| (t.line, t.col)).unwrap_or((line, col));
                loop {
                    let t = toks.get(pos).cloned();
                    match t.map(|t| (t.tok, t.line, t.col)) {
                        Some((Tok::Bar, l, c)) | Some((Tok::Sep, l, c)) => {
                            if current.is_empty() && !saw_eps {
                                return Err(syntax(alt_start.0, alt_start.1, "empty alternative; use eps"));
                            }
                            alts.push(std::mem::take(&mut current));
                            saw_eps = false;
                            pos += 1;
                            if matches!(toks[pos - 1].tok, Tok::Sep) {
                                break;
                            }
                            alt_start = toks.get(pos).map(|t| (t.line, t.col)).unwrap_or((l, c));
                        }
                        Some((Tok::Ident(name), l, c)) => {
                            pos += 1;
                            if name == "eps" {
                                if !current.is_empty() || saw_eps {
                                    return Err(syntax(l, c, "eps must stand alone in an alternative"));
                                }
                                saw_eps = true;
                            } else {
                                if saw_eps {
                                    return Err(syntax(l, c, "eps must stand alone in an alternative"));
                                }
                                current.push(RawSym::Nt { name, line: l, col: c });
                            }
                        }
                        Some((Tok::Quoted(name), l, c)) => {
                            pos += 1;
                            if saw_eps {
                                return Err(syntax(l, c, "eps must stand alone in an alternative"));
                            }
                            current.push(RawSym::T(name));
                        }
                        Some((Tok::Arrow, l, c)) => return Err(syntax(l, c, "unexpected `->`")),
                        Some((Tok::Directive(_), l, c)) => {
                            return Err(syntax(l, c, "directive inside a rule"))
                        }
                        None => break,
                    }
                }
                rules.push(RawRule { lhs, alts });
            }
            other => {
                let what = match other {
                    Tok::Arrow => "`->`",
                    Tok::Bar => "`|`",
                    _ => "token",
                };
                return Err(syntax(line, col, format!("unexpected {what} at start of rule")));
            }
        }
    }

    build(rules, directives)
}

fn build(rules: Vec<RawRule>, directives: Directives) -> Result<Cfg, GrammarError> {
    if rules.is_empty() {
        return Err(GrammarError::NoProductions);
    }
    let nonterminals: Vec<String> = match directives.nonterminals {
        Some(names) => names,
        None => {
            let mut names: Vec<String> = Vec::new();
            for r in &rules {
                if !names.contains(&r.lhs) {
                    names.push(r.lhs.clone());
                }
            }
            names
        }
    };
    let nt_index: HashMap<&str, NtId> = nonterminals
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i as NtId))
        .collect();

    let explicit_terminals = directives.terminals.is_some();
    let mut terminals: Vec<String> = directives.terminals.unwrap_or_default();
    let mut productions = Vec::new();
    for r in &rules {
        let lhs = *nt_index.get(r.lhs.as_str()).ok_or_else(|| GrammarError::Undeclared {
            name: r.lhs.clone(),
            line: 0,
            col: 0,
        })?;
        for alt in &r.alts {
            let mut rhs = Vec::with_capacity(alt.len());
            for s in alt {
                match s {
                    RawSym::Nt { name, line, col } => {
                        let id = nt_index.get(name.as_str()).ok_or_else(|| GrammarError::Undeclared {
                            name: name.clone(),
                            line: *line,
                            col: *col,
                        })?;
                        rhs.push(Symbol::Nonterminal(*id));
                    }
                    RawSym::T(name) => {
                        let id = match terminals.iter().position(|t| t == name) {
                            Some(i) => i,
                            None if explicit_terminals => {
                                return Err(GrammarError::UnknownTerminal(name.clone()))
                            }
                            None => {
                                terminals.push(name.clone());
                                terminals.len() - 1
                            }
                        };
                        rhs.push(Symbol::Terminal(id as TermId));
                    }
                }
            }
            productions.push(Production { lhs, rhs });
        }
    }
    let start = match directives.start {
        Some((name, line, col)) => *nt_index
            .get(name.as_str())
            .ok_or(GrammarError::Undeclared { name, line, col })?,
        None => nt_index[rules[0].lhs.as_str()],
    };
    Cfg::new(nonterminals, terminals, productions, start)
}

pub(super) struct ImpliedTables {
    pub nonterminals: Vec<String>,
    pub terminals: Vec<String>,
}

/// Symbol tables a directive-free print of `g` would parse back to.
pub(super) fn implied_tables(g: &Cfg) -> ImpliedTables {
    let mut nts: Vec<NtId> = Vec::new();
    let mut ts: Vec<TermId> = Vec::new();
    for p in g.productions() {
        if !nts.contains(&p.lhs) {
            nts.push(p.lhs);
        }
    }
    for p in g.productions() {
        for s in &p.rhs {
            if let Symbol::Terminal(t) = *s {
                if !ts.contains(&t) {
                    ts.push(t);
                }
            }
        }
    }
    ImpliedTables {
        nonterminals: nts.iter().map(|&n| g.nonterminal_name(n).to_string()).collect(),
        terminals: ts.iter().map(|&t| g.terminal_name(t).to_string()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_g1() {
        let g = parse_grammar("S -> 'a' S 'b' | eps").unwrap();
        assert_eq!(g.nonterminals().len(), 1);
        assert_eq!(g.terminals(), ["a", "b"]);
        assert_eq!(g.productions().len(), 2);
        assert!(g.productions()[1].rhs.is_empty());
    }

    #[test]
    fn parses_epsilon_only() {
        let g = parse_grammar("S -> eps").unwrap();
        assert_eq!(g.productions().len(), 1);
        assert!(g.terminals().is_empty());
    }

    #[test]
    fn parses_g4_with_semicolons() {
        let g = parse_grammar("S0 -> S | eps ; S -> S S | 'a' | 'b'").unwrap();
        assert_eq!(g.nonterminals(), ["S0", "S"]);
        assert_eq!(g.productions().len(), 5);
    }

    #[test]
    fn comments_and_blank_lines() {
        let g = parse_grammar("# header\n\nS -> 'a' # trailing\n").unwrap();
        assert_eq!(g.productions().len(), 1);
    }

    #[test]
    fn duplicate_definition_merges() {
        let g = parse_grammar("S -> 'a'\nS -> 'b'").unwrap();
        assert_eq!(g.nonterminals().len(), 1);
        assert_eq!(g.productions().len(), 2);
    }

    #[test]
    fn undeclared_symbol_reports_position() {
        let err = parse_grammar("S -> 'a' B").unwrap_err();
        assert_eq!(
            err,
            GrammarError::Undeclared {
                name: "B".into(),
                line: 1,
                col: 10
            }
        );
    }

    #[test]
    fn syntax_errors_carry_line_and_column() {
        match parse_grammar("S -> 'a'\nT 'b'") {
            Err(GrammarError::Syntax { line, col, .. }) => assert_eq!((line, col), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_grammar("S -> 'a' |"), Err(GrammarError::Syntax { .. })));
        assert!(matches!(parse_grammar("S -> 'a"), Err(GrammarError::Syntax { .. })));
        assert!(matches!(parse_grammar("S -> eps 'a'"), Err(GrammarError::Syntax { .. })));
    }

    #[test]
    fn quoted_terminals_with_escapes_round_trip() {
        let g = parse_grammar(r"S -> 'it\'s' | '\\'").unwrap();
        assert_eq!(g.terminals(), ["it's", "\\"]);
        assert_eq!(parse_grammar(&g.to_string()).unwrap(), g);
    }

    #[test]
    fn directives_pin_tables() {
        let text = "%start B\n%nonterminals B A\n%terminals 'y' 'x'\nA -> 'x'\nB -> A 'y'\n";
        let g = parse_grammar(text).unwrap();
        assert_eq!(g.start(), 0);
        assert_eq!(g.nonterminals(), ["B", "A"]);
        assert_eq!(g.terminals(), ["y", "x"]);
        assert_eq!(g.to_string(), text);
    }
}
