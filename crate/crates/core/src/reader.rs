//! Reader for the restricted Prolog-like source language.
//!
//! Supported syntax: facts and rules (`Head.` / `Head :- Body.`), the
//! directives `:- table(p/n).`, `:- tabling_mode(p/n, coinductive).` and
//! `:- coinductive(p/n).`, `%` line comments, lists `[a,b|T]`, integers,
//! `_`-prefixed and capitalized variables, and the operators
//! `, ; -> *-> \+ = == \== =.. is < > =< >= =:= mod + - *` plus `!`, with
//! conventional precedence. The operator table is fixed.

use std::fmt;

use crate::term::{LabeledLiteral, TermLiteral};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at {line}:{col}: {msg}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Atom(String),
    Var(String),
    Int(i64),
    Open,      // (
    Close,     // )
    OpenList,  // [
    CloseList, // ]
    Bar,       // |
    Comma,
    End, // .
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: u32,
    col: u32,
}

const SYMBOL_CHARS: &str = "+-*/\\^<>=~:.?@#&";

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        ParseError { line: self.line, col: self.col, msg: msg.into() }
    }

    fn peek_byte(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek_byte()?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn skip_ws(&mut self) {
        loop {
            match self.peek_byte() {
                Some(b'%') => {
                    while let Some(b) = self.bump() {
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(b) if b.is_ascii_whitespace() => {
                    self.bump();
                }
                _ => return,
            }
        }
    }

    fn next_tok(&mut self) -> Result<Option<Spanned>, ParseError> {
        self.skip_ws();
        let (line, col) = (self.line, self.col);
        let Some(b) = self.peek_byte() else {
            return Ok(None);
        };
        let tok = match b {
            b'(' => {
                self.bump();
                Tok::Open
            }
            b')' => {
                self.bump();
                Tok::Close
            }
            b'[' => {
                self.bump();
                Tok::OpenList
            }
            b']' => {
                self.bump();
                Tok::CloseList
            }
            b'|' => {
                self.bump();
                Tok::Bar
            }
            b',' => {
                self.bump();
                Tok::Comma
            }
            b'!' => {
                self.bump();
                Tok::Atom("!".into())
            }
            b';' => {
                self.bump();
                Tok::Atom(";".into())
            }
            b'0'..=b'9' => {
                let mut n: i64 = 0;
                while let Some(d @ b'0'..=b'9') = self.peek_byte() {
                    n = n
                        .checked_mul(10)
                        .and_then(|n| n.checked_add((d - b'0') as i64))
                        .ok_or_else(|| self.error("integer literal overflows"))?;
                    self.bump();
                }
                Tok::Int(n)
            }
            b'_' | b'A'..=b'Z' => {
                let mut s = String::new();
                while let Some(c) = self.peek_byte() {
                    if c == b'_' || c.is_ascii_alphanumeric() {
                        s.push(c as char);
                        self.bump();
                    } else {
                        break;
                    }
                }
                Tok::Var(s)
            }
            b'a'..=b'z' => {
                let mut s = String::new();
                while let Some(c) = self.peek_byte() {
                    if c == b'_' || c.is_ascii_alphanumeric() {
                        s.push(c as char);
                        self.bump();
                    } else {
                        break;
                    }
                }
                Tok::Atom(s)
            }
            b if SYMBOL_CHARS.contains(b as char) => {
                let mut s = String::new();
                while let Some(c) = self.peek_byte() {
                    if SYMBOL_CHARS.contains(c as char) {
                        s.push(c as char);
                        self.bump();
                    } else {
                        break;
                    }
                }
                // A solitary '.' (possibly at end of a symbolic run) ends a
                // clause when followed by layout or end of input.
                if s == "." {
                    Tok::End
                } else {
                    Tok::Atom(s)
                }
            }
            other => {
                return Err(self.error(format!("unexpected character `{}`", other as char)))
            }
        };
        Ok(Some(Spanned { tok, line, col }))
    }
}

fn tokenize(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut lx = Lexer::new(src);
    let mut out = Vec::new();
    while let Some(t) = lx.next_tok()? {
        out.push(t);
    }
    Ok(out)
}

#[derive(Clone, Copy, PartialEq)]
enum InfixKind {
    Xfx,
    Xfy,
    Yfx,
}

fn infix_op(name: &str) -> Option<(u32, InfixKind)> {
    Some(match name {
        ":-" => (1200, InfixKind::Xfx),
        ";" => (1100, InfixKind::Xfy),
        "->" | "*->" => (1050, InfixKind::Xfy),
        "," => (1000, InfixKind::Xfy),
        "=" | "==" | "\\==" | "=.." | "is" | "<" | ">" | "=<" | ">=" | "=:=" | "=\\=" => {
            (700, InfixKind::Xfx)
        }
        "+" | "-" => (500, InfixKind::Yfx),
        "*" | "/" | "mod" => (400, InfixKind::Yfx),
        _ => return None,
    })
}

fn prefix_op(name: &str) -> Option<(u32, bool /* fy */)> {
    Some(match name {
        ":-" | "?-" => (1200, false),
        "\\+" => (900, true),
        "-" => (200, true),
        _ => return None,
    })
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn new(toks: Vec<Spanned>) -> Self {
        Parser { toks, pos: 0 }
    }

    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn bump(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, msg: impl Into<String>) -> ParseError {
        match self.peek() {
            Some(s) => ParseError { line: s.line, col: s.col, msg: msg.into() },
            None => {
                let (line, col) = self
                    .toks
                    .last()
                    .map(|s| (s.line, s.col))
                    .unwrap_or((1, 1));
                ParseError { line, col, msg: msg.into() }
            }
        }
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(s) if &s.tok == tok => {
                self.bump();
                Ok(())
            }
            _ => Err(self.error_at(format!("expected {what}"))),
        }
    }

    /// Precedence-climbing term reader.
    fn term(&mut self, max_prec: u32) -> Result<TermLiteral, ParseError> {
        let mut left = self.primary(max_prec)?;
        let mut left_prec = 0u32;
        loop {
            let name = match self.peek().map(|s| &s.tok) {
                Some(Tok::Comma) if max_prec >= 1000 => ",".to_string(),
                Some(Tok::Atom(a)) => a.clone(),
                _ => break,
            };
            let Some((prec, kind)) = infix_op(&name) else {
                break;
            };
            if prec > max_prec {
                break;
            }
            let left_max = match kind {
                InfixKind::Yfx => prec,
                _ => prec - 1,
            };
            if left_prec > left_max {
                break;
            }
            self.bump();
            let right_max = match kind {
                InfixKind::Xfy => prec,
                _ => prec - 1,
            };
            let right = self.term(right_max)?;
            left = TermLiteral::Compound(name, vec![left, right]);
            left_prec = prec;
        }
        Ok(left)
    }

    fn primary(&mut self, max_prec: u32) -> Result<TermLiteral, ParseError> {
        let Some(s) = self.bump() else {
            return Err(self.error_at("unexpected end of input"));
        };
        match s.tok {
            Tok::Int(n) => Ok(TermLiteral::Int(n)),
            Tok::Var(name) => Ok(TermLiteral::Var(name)),
            Tok::Open => {
                let t = self.term(1200)?;
                self.expect(&Tok::Close, "`)`")?;
                Ok(t)
            }
            Tok::OpenList => self.list_tail(),
            Tok::Atom(name) => {
                // compound: functor immediately followed by (
                if matches!(self.peek().map(|s| &s.tok), Some(Tok::Open)) {
                    self.bump();
                    let mut args = vec![self.term(999)?];
                    while matches!(self.peek().map(|s| &s.tok), Some(Tok::Comma)) {
                        self.bump();
                        args.push(self.term(999)?);
                    }
                    self.expect(&Tok::Close, "`)`")?;
                    return Ok(TermLiteral::Compound(name, args));
                }
                if let Some((prec, fy)) = prefix_op(&name) {
                    if prec <= max_prec && self.starts_term() {
                        if name == "-" {
                            if let Some(Tok::Int(n)) = self.peek().map(|s| s.tok.clone()) {
                                self.bump();
                                return Ok(TermLiteral::Int(-n));
                            }
                        }
                        let operand = self.term(if fy { prec } else { prec - 1 })?;
                        return Ok(TermLiteral::Compound(name, vec![operand]));
                    }
                }
                if infix_op(&name).is_some() && prefix_op(&name).is_none() {
                    return Err(ParseError {
                        line: s.line,
                        col: s.col,
                        msg: format!("operator `{name}` used without a left operand"),
                    });
                }
                Ok(TermLiteral::Atom(name))
            }
            Tok::Close | Tok::CloseList | Tok::Bar | Tok::Comma | Tok::End => Err(ParseError {
                line: s.line,
                col: s.col,
                msg: format!("unexpected token `{:?}`", s.tok),
            }),
        }
    }

    fn starts_term(&self) -> bool {
        matches!(
            self.peek().map(|s| &s.tok),
            Some(Tok::Int(_))
                | Some(Tok::Var(_))
                | Some(Tok::Atom(_))
                | Some(Tok::Open)
                | Some(Tok::OpenList)
        )
    }

    fn list_tail(&mut self) -> Result<TermLiteral, ParseError> {
        if matches!(self.peek().map(|s| &s.tok), Some(Tok::CloseList)) {
            self.bump();
            return Ok(TermLiteral::Atom("[]".into()));
        }
        let mut items = vec![self.term(999)?];
        loop {
            match self.peek().map(|s| s.tok.clone()) {
                Some(Tok::Comma) => {
                    self.bump();
                    items.push(self.term(999)?);
                }
                Some(Tok::Bar) => {
                    self.bump();
                    let tail = self.term(999)?;
                    self.expect(&Tok::CloseList, "`]`")?;
                    return Ok(TermLiteral::List(items, Some(Box::new(tail))));
                }
                Some(Tok::CloseList) => {
                    self.bump();
                    return Ok(TermLiteral::List(items, None));
                }
                _ => return Err(self.error_at("expected `,`, `|` or `]` in list")),
            }
        }
    }
}

/// One item of a source program.
#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Clause { head: TermLiteral, body: Vec<TermLiteral> },
    Directive(TermLiteral),
}

/// Splits a `,`-chain into its conjuncts.
pub fn flatten_conjunction(t: &TermLiteral, out: &mut Vec<TermLiteral>) {
    match t {
        TermLiteral::Compound(c, args) if c == "," && args.len() == 2 => {
            flatten_conjunction(&args[0], out);
            flatten_conjunction(&args[1], out);
        }
        other => out.push(other.clone()),
    }
}

pub fn parse_program(src: &str) -> Result<Vec<Item>, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser::new(toks);
    let mut items = Vec::new();
    while p.peek().is_some() {
        let term = p.term(1200)?;
        p.expect(&Tok::End, "`.` at end of clause")?;
        items.push(item_from_term(term)?);
    }
    Ok(items)
}

fn item_from_term(term: TermLiteral) -> Result<Item, ParseError> {
    match term {
        TermLiteral::Compound(op, args) if op == ":-" && args.len() == 1 => {
            Ok(Item::Directive(args.into_iter().next().unwrap()))
        }
        TermLiteral::Compound(op, args) if op == ":-" && args.len() == 2 => {
            let mut it = args.into_iter();
            let head = it.next().unwrap();
            let body_term = it.next().unwrap();
            validate_head(&head)?;
            let mut body = Vec::new();
            flatten_conjunction(&body_term, &mut body);
            Ok(Item::Clause { head, body })
        }
        head => {
            validate_head(&head)?;
            Ok(Item::Clause { head, body: Vec::new() })
        }
    }
}

fn validate_head(head: &TermLiteral) -> Result<(), ParseError> {
    match head {
        TermLiteral::Atom(_) | TermLiteral::Compound(..) => Ok(()),
        _ => Err(ParseError {
            line: 0,
            col: 0,
            msg: "clause head must be an atom or compound term".into(),
        }),
    }
}

/// Parses a query: a conjunction of goals ended by `.` (the `?-` prefix is
/// optional, the final `.` too). Returns the goals and the named variables in
/// first-occurrence order; names starting with `_` are marked hidden.
pub fn parse_query(src: &str) -> Result<(Vec<TermLiteral>, Vec<QueryVar>), ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser::new(toks);
    if p.peek().is_none() {
        return Err(ParseError { line: 1, col: 1, msg: "empty query".into() });
    }
    let mut term = p.term(1200)?;
    if let Some(s) = p.peek() {
        if s.tok == Tok::End {
            p.bump();
        }
    }
    if p.peek().is_some() {
        return Err(p.error_at("trailing input after query"));
    }
    if let TermLiteral::Compound(op, args) = &term {
        if op == "?-" && args.len() == 1 {
            term = args[0].clone();
        }
    }
    let mut goals = Vec::new();
    flatten_conjunction(&term, &mut goals);
    let mut vars = Vec::new();
    for g in &goals {
        collect_vars(g, &mut vars);
    }
    Ok((goals, vars))
}

/// A named query variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryVar {
    pub name: String,
    /// `_`-prefixed names are bound like any other but omitted from answers.
    pub hidden: bool,
}

fn collect_vars(t: &TermLiteral, out: &mut Vec<QueryVar>) {
    match t {
        TermLiteral::Var(name) => {
            if name != "_" && !out.iter().any(|v| &v.name == name) {
                out.push(QueryVar { name: name.clone(), hidden: name.starts_with('_') });
            }
        }
        TermLiteral::List(items, tail) => {
            for i in items {
                collect_vars(i, out);
            }
            if let Some(t) = tail {
                collect_vars(t, out);
            }
        }
        TermLiteral::Compound(_, args) => {
            for a in args {
                collect_vars(a, out);
            }
        }
        _ => {}
    }
}

/// Parses a term literal with optional cycle-label equations, e.g.
/// `L=[1,2,3|L]` or `B=[1|A], A=[2,3|A]` or a bare `f(a,b)`.
pub fn parse_term_literal(src: &str) -> Result<LabeledLiteral, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser::new(toks);
    let term = p.term(1200)?;
    if let Some(s) = p.peek() {
        if s.tok == Tok::End {
            p.bump();
        }
    }
    if p.peek().is_some() {
        return Err(p.error_at("trailing input after term"));
    }
    let mut parts = Vec::new();
    flatten_conjunction(&term, &mut parts);
    let mut defs = Vec::new();
    let mut root: Option<TermLiteral> = None;
    for part in &parts {
        match part {
            TermLiteral::Compound(eq, args) if eq == "=" && args.len() == 2 => {
                let TermLiteral::Var(name) = &args[0] else {
                    return Err(ParseError {
                        line: 0,
                        col: 0,
                        msg: "left side of a label equation must be a variable".into(),
                    });
                };
                defs.push((name.clone(), args[1].clone()));
                if root.is_none() {
                    root = Some(TermLiteral::Var(name.clone()));
                }
            }
            other => {
                if parts.len() == 1 {
                    root = Some(other.clone());
                } else {
                    return Err(ParseError {
                        line: 0,
                        col: 0,
                        msg: "expected `Name = Term` equations".into(),
                    });
                }
            }
        }
    }
    Ok(LabeledLiteral { defs, root: root.expect("nonempty parse") })
}

impl fmt::Debug for Parser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Parser at {}", self.pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_bin_program() {
        let src = "\
:- table(bin/1).
:- tabling_mode(bin/1, coinductive).
bin([0|T]) :- bin(T).
bin([1|T]) :- bin(T).
";
        let items = parse_program(src).unwrap();
        assert_eq!(items.len(), 4);
        assert!(matches!(items[0], Item::Directive(_)));
        assert!(matches!(items[1], Item::Directive(_)));
        let Item::Clause { head, body } = &items[2] else {
            panic!()
        };
        assert!(matches!(head, TermLiteral::Compound(n, _) if n == "bin"));
        assert_eq!(body.len(), 1);
    }

    #[test]
    fn parses_sieve_constructs() {
        let src = "\
filter(H, [K|T], L) :-
  ( K > H, K mod H =:= 0 ->
    L = T1
  ; L = [K|T1]
  ),
  filter(H, T, T1).
";
        let items = parse_program(src).unwrap();
        let Item::Clause { body, .. } = &items[0] else {
            panic!()
        };
        assert_eq!(body.len(), 2);
        let TermLiteral::Compound(op, args) = &body[0] else {
            panic!()
        };
        assert_eq!(op, ";");
        let TermLiteral::Compound(arrow, _) = &args[0] else {
            panic!()
        };
        assert_eq!(arrow, "->");
    }

    #[test]
    fn operator_precedence_shapes() {
        let (goals, _) = parse_query("X is 1 + 2 * 3.").unwrap();
        let TermLiteral::Compound(is, args) = &goals[0] else {
            panic!()
        };
        assert_eq!(is, "is");
        let TermLiteral::Compound(plus, args2) = &args[1] else {
            panic!()
        };
        assert_eq!(plus, "+");
        assert!(matches!(&args2[1], TermLiteral::Compound(m, _) if m == "*"));

        let (goals, _) = parse_query("4 mod 2 =:= 0.").unwrap();
        assert!(matches!(&goals[0], TermLiteral::Compound(op, _) if op == "=:="));
    }

    #[test]
    fn parses_query_with_cyclic_binding() {
        let (goals, vars) = parse_query("X = [0,1|X], bin(X).").unwrap();
        assert_eq!(goals.len(), 2);
        assert_eq!(vars.len(), 1);
        assert_eq!(vars[0].name, "X");
        assert!(!vars[0].hidden);
    }

    #[test]
    fn underscore_vars_are_hidden() {
        let (_, vars) = parse_query("_L=[1,2|_B], _B=[3,4,5|_B], comember(E, _L).").unwrap();
        let names: Vec<_> = vars.iter().map(|v| (v.name.as_str(), v.hidden)).collect();
        assert_eq!(names, vec![("_L", true), ("_B", true), ("E", false)]);
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_program("p(X :- q.").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.col > 1);
    }

    #[test]
    fn empty_query_is_an_error() {
        assert!(parse_query("").is_err());
    }

    #[test]
    fn parses_term_literals() {
        let lit = parse_term_literal("L=[1,2,3|L]").unwrap();
        assert_eq!(lit.defs.len(), 1);
        assert_eq!(lit.root, TermLiteral::Var("L".into()));

        let lit = parse_term_literal("f(a,b)").unwrap();
        assert!(lit.defs.is_empty());

        let lit = parse_term_literal("B=[1|A], A=[2,3|A]").unwrap();
        assert_eq!(lit.defs.len(), 2);
        assert_eq!(lit.root, TermLiteral::Var("B".into()));
    }

    #[test]
    fn negative_integers_parse() {
        let (goals, _) = parse_query("X is -3 + 1.").unwrap();
        let TermLiteral::Compound(_, args) = &goals[0] else {
            panic!()
        };
        let TermLiteral::Compound(_, args2) = &args[1] else {
            panic!()
        };
        assert_eq!(args2[0], TermLiteral::Int(-3));
    }

    #[test]
    fn soft_cut_operator_parses() {
        let (goals, _) = parse_query("( member(X, S) *-> true ; p(X) ).").unwrap();
        let TermLiteral::Compound(op, args) = &goals[0] else {
            panic!()
        };
        assert_eq!(op, ";");
        assert!(matches!(&args[0], TermLiteral::Compound(sc, _) if sc == "*->"));
    }
}
