//! Concrete `.atr` syntax: lexing, parsing into a surface program,
//! desugaring into core terms, and pretty-printing back.

use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::bits::Bits;
use crate::syntax::{self, BasicOp, Crec, Label, Name, Span, Term, TermKind, TermRef, Type};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{span}: syntax error: expected {}, found {found}", expected.join(" or "))]
    Syntax { span: Span, expected: Vec<String>, found: String },
    #[error("{span}: {message}")]
    Desugar { span: Span, message: String },
}

impl ParseError {
    pub fn span(&self) -> Span {
        match self {
            ParseError::Syntax { span, .. } | ParseError::Desugar { span, .. } => *span,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ParseError::Syntax { .. } => "SyntaxError",
            ParseError::Desugar { .. } => "DesugarError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Str(String),
    Kw(&'static str),
    Sym(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{}`", s),
            Tok::Str(s) => write!(f, "string \"{}\"", s),
            Tok::Kw(k) | Tok::Sym(k) => write!(f, "`{}`", k),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

const KEYWORDS: &[&str] = &[
    "fn", "let", "val", "in", "end", "letrec", "if", "then", "else", "down", "c0", "c1", "d", "t0",
    "t1", "eps", "oracle", "crec", "fnr",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

fn lex(src: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let advance = |i: &mut usize, line: &mut u32, col: &mut u32, c: char| {
        *i += 1;
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, c);
            continue;
        }
        if c == '(' && chars.get(i + 1) == Some(&'*') {
            let mut depth = 0;
            loop {
                if i >= chars.len() {
                    return Err(ParseError::Syntax {
                        span,
                        expected: vec!["`*)`".into()],
                        found: "end of input".into(),
                    });
                }
                if chars[i] == '(' && chars.get(i + 1) == Some(&'*') {
                    depth += 1;
                    advance(&mut i, &mut line, &mut col, '(');
                    advance(&mut i, &mut line, &mut col, '*');
                } else if chars[i] == '*' && chars.get(i + 1) == Some(&')') {
                    depth -= 1;
                    advance(&mut i, &mut line, &mut col, '*');
                    advance(&mut i, &mut line, &mut col, ')');
                    if depth == 0 {
                        break;
                    }
                } else {
                    let ch = chars[i];
                    advance(&mut i, &mut line, &mut col, ch);
                }
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '\'') {
                let ch = chars[i];
                s.push(ch);
                advance(&mut i, &mut line, &mut col, ch);
            }
            let tok = match KEYWORDS.iter().find(|k| **k == s) {
                Some(k) => Tok::Kw(k),
                None => Tok::Ident(s),
            };
            out.push((tok, span));
            continue;
        }
        if c == '"' {
            advance(&mut i, &mut line, &mut col, c);
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    Some('"') => {
                        advance(&mut i, &mut line, &mut col, '"');
                        break;
                    }
                    Some(&ch @ ('0' | '1')) => {
                        s.push(ch);
                        advance(&mut i, &mut line, &mut col, ch);
                    }
                    other => {
                        return Err(ParseError::Syntax {
                            span: Span { line, col },
                            expected: vec!["`0`".into(), "`1`".into(), "`\"`".into()],
                            found: other.map_or("end of input".into(), |c| format!("`{}`", c)),
                        })
                    }
                }
            }
            out.push((Tok::Str(s), span));
            continue;
        }
        let two: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let sym = match two.as_str() {
            "=>" => Some("=>"),
            "->" => Some("->"),
            _ => None,
        };
        if let Some(s) = sym {
            let next = chars[i + 1];
            advance(&mut i, &mut line, &mut col, c);
            advance(&mut i, &mut line, &mut col, next);
            out.push((Tok::Sym(s), span));
            continue;
        }
        let one = match c {
            '(' => "(",
            ')' => ")",
            ':' => ":",
            '=' => "=",
            ';' => ";",
            _ => {
                return Err(ParseError::Syntax {
                    span,
                    expected: vec!["a token".into()],
                    found: format!("`{}`", c),
                })
            }
        };
        advance(&mut i, &mut line, &mut col, c);
        out.push((Tok::Sym(one), span));
    }
    out.push((Tok::Eof, Span { line, col }));
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SExpr {
    pub kind: SExprKind,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub enum SExprKind {
    Var(String),
    Str(Bits),
    Fn(Vec<(String, Option<Type>)>, Box<SExpr>),
    Let(String, Option<Type>, Box<SExpr>, Box<SExpr>),
    Letrec(String, Type, Box<SExpr>, Box<SExpr>),
    If(Box<SExpr>, Box<SExpr>, Box<SExpr>),
    Down(Box<SExpr>, Box<SExpr>),
    Op(BasicOp, Box<SExpr>),
    App(Box<SExpr>, Vec<SExpr>),
    Crec(Bits, String, Option<Type>, Box<SExpr>),
}

#[derive(Debug, Clone)]
pub struct Decl {
    pub name: String,
    pub ty: Option<Type>,
    pub expr: SExpr,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct SurfaceProgram {
    pub oracles: Vec<(String, Type, Span)>,
    pub decls: Vec<Decl>,
    pub main: SExpr,
}

impl SurfaceProgram {
    pub fn declared_type(&self, name: &str) -> Option<&Type> {
        self.decls.iter().find(|d| d.name == name).and_then(|d| d.ty.as_ref())
    }

    /// Type annotation of the main expression when it names a declaration.
    pub fn main_annotation(&self) -> Option<&Type> {
        match &self.main.kind {
            SExprKind::Var(x) => self.declared_type(x),
            _ => None,
        }
    }
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &[&str]) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            span: self.span(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().to_string(),
        })
    }

    fn is(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn expect_kw(&mut self, k: &'static str) -> Result<Span, ParseError> {
        if self.is(&Tok::Kw(k)) {
            Ok(self.bump().1)
        } else {
            self.fail(&[&format!("`{}`", k)])
        }
    }

    fn expect_sym(&mut self, s: &'static str) -> Result<Span, ParseError> {
        if self.is(&Tok::Sym(s)) {
            Ok(self.bump().1)
        } else {
            self.fail(&[&format!("`{}`", s)])
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.fail(&["identifier"]),
        }
    }

    fn program(&mut self) -> Result<SurfaceProgram, ParseError> {
        let mut oracles = Vec::new();
        let mut decls: Vec<Decl> = Vec::new();
        loop {
            if self.is(&Tok::Kw("oracle")) {
                let span = self.bump().1;
                let name = self.ident()?;
                self.expect_sym(":")?;
                let ty = self.ty()?;
                self.expect_sym(";")?;
                oracles.push((name, ty, span));
            } else if self.is(&Tok::Kw("val")) {
                let span = self.bump().1;
                let name = self.ident()?;
                let ty = if self.is(&Tok::Sym(":")) {
                    self.bump();
                    Some(self.ty()?)
                } else {
                    None
                };
                self.expect_sym("=")?;
                let expr = self.expr()?;
                self.expect_sym(";")?;
                decls.push(Decl { name, ty, expr, span });
            } else {
                break;
            }
        }
        let mut seen: Vec<&str> = Vec::new();
        for name in oracles.iter().map(|o| (o.0.as_str(), o.2)).chain(decls.iter().map(|d| (d.name.as_str(), d.span))) {
            if seen.contains(&name.0) {
                return Err(ParseError::Desugar {
                    span: name.1,
                    message: format!("duplicate top-level name `{}`", name.0),
                });
            }
            seen.push(name.0);
        }
        let main = self.expr()?;
        if !self.is(&Tok::Eof) {
            return self.fail(&["end of input"]);
        }
        Ok(SurfaceProgram { oracles, decls, main })
    }

    fn ty(&mut self) -> Result<Type, ParseError> {
        let arg = self.btype()?;
        if self.is(&Tok::Sym("->")) {
            self.bump();
            let res = self.ty()?;
            Ok(Type::arrow(arg, res))
        } else {
            Ok(arg)
        }
    }

    fn btype(&mut self) -> Result<Type, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if s.starts_with("N_") => {
                let span = self.bump().1;
                match Label::from_word(&s[2..]) {
                    Some(l) => Ok(Type::Base(l)),
                    None => Err(ParseError::Syntax {
                        span,
                        expected: vec!["a label (eps, d, bd, dbd, ...)".into()],
                        found: format!("`{}`", &s[2..]),
                    }),
                }
            }
            Tok::Sym("(") => {
                self.bump();
                let t = self.ty()?;
                self.expect_sym(")")?;
                Ok(t)
            }
            _ => self.fail(&["type"]),
        }
    }

    fn expr(&mut self) -> Result<SExpr, ParseError> {
        let span = self.span();
        let kind = match self.peek() {
            Tok::Kw("fn") => {
                self.bump();
                let mut params = Vec::new();
                loop {
                    match self.peek().clone() {
                        Tok::Ident(x) => {
                            self.bump();
                            params.push((x, None));
                        }
                        Tok::Sym("(") => {
                            self.bump();
                            let x = self.ident()?;
                            self.expect_sym(":")?;
                            let t = self.ty()?;
                            self.expect_sym(")")?;
                            params.push((x, Some(t)));
                        }
                        _ if !params.is_empty() => break,
                        _ => return self.fail(&["parameter"]),
                    }
                }
                self.expect_sym("=>")?;
                SExprKind::Fn(params, Box::new(self.expr()?))
            }
            Tok::Kw("let") => {
                self.bump();
                self.expect_kw("val")?;
                let x = self.ident()?;
                let ann = if self.is(&Tok::Sym(":")) {
                    self.bump();
                    Some(self.ty()?)
                } else {
                    None
                };
                self.expect_sym("=")?;
                let s = self.expr()?;
                self.expect_kw("in")?;
                let t = self.expr()?;
                self.expect_kw("end")?;
                SExprKind::Let(x, ann, Box::new(s), Box::new(t))
            }
            Tok::Kw("letrec") => {
                self.bump();
                let f = self.ident()?;
                self.expect_sym(":")?;
                let ty = self.ty()?;
                self.expect_sym("=")?;
                let s = self.expr()?;
                self.expect_kw("in")?;
                let t = self.expr()?;
                self.expect_kw("end")?;
                SExprKind::Letrec(f, ty, Box::new(s), Box::new(t))
            }
            Tok::Kw("if") => {
                self.bump();
                let s = self.expr()?;
                self.expect_kw("then")?;
                let t = self.expr()?;
                self.expect_kw("else")?;
                let e = self.expr()?;
                SExprKind::If(Box::new(s), Box::new(t), Box::new(e))
            }
            _ => return self.app(),
        };
        Ok(SExpr { kind, span })
    }

    fn starts_item(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Ident(_)
                | Tok::Str(_)
                | Tok::Sym("(")
                | Tok::Kw("eps" | "down" | "c0" | "c1" | "d" | "t0" | "t1" | "crec")
        )
    }

    fn app(&mut self) -> Result<SExpr, ParseError> {
        let span = self.span();
        if !self.starts_item() {
            return self.fail(&["expression"]);
        }
        let head = self.item()?;
        let mut args = Vec::new();
        while self.starts_item() {
            args.push(self.item()?);
        }
        if args.is_empty() {
            Ok(head)
        } else {
            Ok(SExpr { kind: SExprKind::App(Box::new(head), args), span })
        }
    }

    fn item(&mut self) -> Result<SExpr, ParseError> {
        let span = self.span();
        let op = match self.peek() {
            Tok::Kw("c0") => Some(BasicOp::C0),
            Tok::Kw("c1") => Some(BasicOp::C1),
            Tok::Kw("d") => Some(BasicOp::D),
            Tok::Kw("t0") => Some(BasicOp::T0),
            Tok::Kw("t1") => Some(BasicOp::T1),
            _ => None,
        };
        if let Some(op) = op {
            self.bump();
            let a = self.atom()?;
            return Ok(SExpr { kind: SExprKind::Op(op, Box::new(a)), span });
        }
        if self.is(&Tok::Kw("down")) {
            self.bump();
            let a = self.atom()?;
            let b = self.atom()?;
            return Ok(SExpr { kind: SExprKind::Down(Box::new(a), Box::new(b)), span });
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<SExpr, ParseError> {
        let span = self.span();
        let kind = match self.peek().clone() {
            Tok::Ident(x) => {
                self.bump();
                SExprKind::Var(x)
            }
            Tok::Str(s) => {
                self.bump();
                SExprKind::Str(Bits::parse(&s).expect("lexer admits only bits"))
            }
            Tok::Kw("eps") => {
                self.bump();
                SExprKind::Str(Bits::empty())
            }
            Tok::Kw("crec") => {
                self.bump();
                let seed = match self.peek().clone() {
                    Tok::Str(s) => {
                        self.bump();
                        Bits::parse(&s).unwrap()
                    }
                    Tok::Kw("eps") => {
                        self.bump();
                        Bits::empty()
                    }
                    _ => return self.fail(&["clock string"]),
                };
                self.expect_sym("(")?;
                self.expect_kw("fnr")?;
                let f = self.ident()?;
                let ann = if self.is(&Tok::Sym(":")) {
                    self.bump();
                    Some(self.ty()?)
                } else {
                    None
                };
                self.expect_sym("=>")?;
                let body = self.expr()?;
                self.expect_sym(")")?;
                SExprKind::Crec(seed, f, ann, Box::new(body))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                return Ok(e);
            }
            _ => return self.fail(&["identifier", "string", "`eps`", "`(`"]),
        };
        Ok(SExpr { kind, span })
    }
}

pub fn parse(source: &str) -> Result<SurfaceProgram, ParseError> {
    let toks = lex(source)?;
    Parser { toks, pos: 0 }.program()
}

/// Parses a type written in surface syntax.
pub fn parse_type(source: &str) -> Result<Type, ParseError> {
    let toks = lex(source)?;
    let mut p = Parser { toks, pos: 0 };
    let t = p.ty()?;
    if !p.is(&Tok::Eof) {
        return p.fail(&["end of input"]);
    }
    Ok(t)
}

pub fn desugar(p: &SurfaceProgram) -> Result<TermRef, ParseError> {
    let oracles: BTreeMap<String, Type> = p.oracles.iter().map(|(n, t, _)| (n.clone(), t.clone())).collect();
    let mut d = Desugarer { oracles, bound: Vec::new() };
    let mut defs = Vec::new();
    for decl in &p.decls {
        let e = d.expr(&decl.expr)?;
        defs.push((decl, e));
        d.bound.push(decl.name.clone());
    }
    let mut acc = d.expr(&p.main)?;
    for (decl, e) in defs.into_iter().rev() {
        let lam = Term::at(TermKind::Lambda(decl.name.as_str().into(), decl.ty.clone(), acc), decl.span);
        acc = Term::at(TermKind::App(lam, e), decl.span);
    }
    Ok(acc)
}

/// Parses and desugars a whole program.
pub fn parse_program(source: &str) -> Result<(SurfaceProgram, TermRef), ParseError> {
    let p = parse(source)?;
    let t = desugar(&p)?;
    Ok((p, t))
}

struct Desugarer {
    oracles: BTreeMap<String, Type>,
    bound: Vec<String>,
}

impl Desugarer {
    fn scoped<T>(&mut self, names: &[String], f: impl FnOnce(&mut Self) -> T) -> T {
        let n = self.bound.len();
        self.bound.extend(names.iter().cloned());
        let r = f(self);
        self.bound.truncate(n);
        r
    }

    fn expr(&mut self, e: &SExpr) -> Result<TermRef, ParseError> {
        let span = e.span;
        let kind = match &e.kind {
            SExprKind::Var(x) => {
                if !self.bound.contains(x) {
                    if let Some(t) = self.oracles.get(x) {
                        return Ok(Term::at(TermKind::Oracle(x.as_str().into(), t.clone()), span));
                    }
                }
                TermKind::Var(x.as_str().into())
            }
            SExprKind::Str(b) => TermKind::Const(b.clone()),
            SExprKind::Fn(params, body) => {
                let names: Vec<String> = params.iter().map(|p| p.0.clone()).collect();
                let b = self.scoped(&names, |d| d.expr(body))?;
                return Ok(params.iter().rev().fold(b, |acc, (x, t)| {
                    Term::at(TermKind::Lambda(x.as_str().into(), t.clone(), acc), span)
                }));
            }
            SExprKind::Let(x, ann, s, t) => {
                let s = self.expr(s)?;
                let t = self.scoped(std::slice::from_ref(x), |d| d.expr(t))?;
                let lam = Term::at(TermKind::Lambda(x.as_str().into(), ann.clone(), t), span);
                TermKind::App(lam, s)
            }
            SExprKind::Letrec(f, ty, s, t) => {
                let k = ty.arity();
                let s = self.scoped(std::slice::from_ref(f), |d| d.expr(s))?;
                let mut lambdas = 0;
                let mut cur = &s;
                while let TermKind::Lambda(_, _, b) = &cur.kind {
                    lambdas += 1;
                    cur = b;
                }
                if k == 0 || lambdas != k {
                    return Err(ParseError::Desugar {
                        span,
                        message: format!(
                            "letrec `{}` must be an abstraction over exactly {} parameter(s) matching its type {}",
                            f, k, ty
                        ),
                    });
                }
                let crec = Term::at(
                    TermKind::Crec(Crec {
                        seed: Bits::empty(),
                        ty: Some(ty.clone()),
                        body: Term::at(TermKind::AffineLambda(f.as_str().into(), s), span),
                        site: syntax::fresh_site(),
                    }),
                    span,
                );
                let t = self.scoped(std::slice::from_ref(f), |d| d.expr(t))?;
                return Ok(syntax::subst(&t, f, &crec));
            }
            SExprKind::If(s, t, e) => TermKind::Cond(self.expr(s)?, self.expr(t)?, self.expr(e)?),
            SExprKind::Down(s, t) => TermKind::Down(self.expr(s)?, self.expr(t)?),
            SExprKind::Op(o, s) => TermKind::Op(*o, self.expr(s)?),
            SExprKind::App(h, args) => {
                let mut acc = self.expr(h)?;
                for a in args {
                    let a = self.expr(a)?;
                    acc = Term::at(TermKind::App(acc, a), span);
                }
                return Ok(acc);
            }
            SExprKind::Crec(seed, f, ann, body) => {
                let b = self.scoped(std::slice::from_ref(f), |d| d.expr(body))?;
                TermKind::Crec(Crec {
                    seed: seed.clone(),
                    ty: ann.clone(),
                    body: Term::at(TermKind::AffineLambda(f.as_str().into(), b), span),
                    site: syntax::fresh_site(),
                })
            }
        };
        Ok(Term::at(kind, span))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Ctx {
    Top,
    Head,
    Arg,
}

/// Renders a term as parseable `.atr` text, declaring any oracles it uses.
pub fn pretty_print(t: &Term) -> String {
    let mut oracles: BTreeMap<Name, Type> = BTreeMap::new();
    t.walk(&mut |n| {
        if let TermKind::Oracle(x, ty) = &n.kind {
            oracles.insert(x.clone(), ty.clone());
        }
    });
    let mut out = String::new();
    for (x, ty) in &oracles {
        out.push_str(&format!("oracle {} : {};\n", x, ty));
    }
    out.push_str(&pretty_term(t));
    out.push('\n');
    out
}

/// Renders a term without oracle declarations.
pub fn pretty_term(t: &Term) -> String {
    let mut s = String::new();
    pp(t, Ctx::Top, 0, &mut s);
    s
}

fn newline(out: &mut String, indent: usize) {
    out.push('\n');
    for _ in 0..indent {
        out.push_str("  ");
    }
}

fn pp(t: &Term, ctx: Ctx, indent: usize, out: &mut String) {
    let atomic = matches!(t.kind, TermKind::Var(_) | TermKind::Oracle(..) | TermKind::Const(_) | TermKind::Crec(_));
    let headlike = matches!(t.kind, TermKind::App(..) | TermKind::Op(..) | TermKind::Down(..))
        && !matches!(&t.kind, TermKind::App(f, _) if matches!(f.kind, TermKind::Lambda(..)));
    let wrap = match ctx {
        Ctx::Top => false,
        Ctx::Head => !(atomic || headlike),
        Ctx::Arg => !atomic,
    };
    if wrap {
        out.push('(');
    }
    match &t.kind {
        TermKind::Var(x) | TermKind::Oracle(x, _) => out.push_str(x),
        TermKind::Const(b) => {
            if b.is_empty() {
                out.push_str("eps");
            } else {
                out.push_str(&format!("\"{}\"", b));
            }
        }
        TermKind::Lambda(..) => {
            out.push_str("fn");
            let mut cur = t;
            while let TermKind::Lambda(x, ann, b) = &cur.kind {
                match ann {
                    Some(ty) => out.push_str(&format!(" ({} : {})", x, ty)),
                    None => out.push_str(&format!(" {}", x)),
                }
                cur = b;
            }
            out.push_str(" =>");
            newline(out, indent + 1);
            pp(cur, Ctx::Top, indent + 1, out);
        }
        TermKind::AffineLambda(f, b) => {
            out.push_str(&format!("fnr {} => ", f));
            pp(b, Ctx::Top, indent, out);
        }
        TermKind::App(f, a) => {
            if let TermKind::Lambda(x, ann, body) = &f.kind {
                out.push_str(&format!("let val {}", x));
                if let Some(ty) = ann {
                    out.push_str(&format!(" : {}", ty));
                }
                out.push_str(" = ");
                pp(a, Ctx::Top, indent + 1, out);
                out.push_str(" in");
                newline(out, indent);
                pp(body, Ctx::Top, indent, out);
                newline(out, indent);
                out.push_str("end");
            } else {
                pp(f, Ctx::Head, indent, out);
                out.push(' ');
                pp(a, Ctx::Arg, indent, out);
            }
        }
        TermKind::Op(o, a) => {
            out.push_str(o.keyword());
            out.push(' ');
            pp(a, Ctx::Arg, indent, out);
        }
        TermKind::Down(a, b) => {
            out.push_str("down ");
            pp(a, Ctx::Arg, indent, out);
            out.push(' ');
            pp(b, Ctx::Arg, indent, out);
        }
        TermKind::Cond(s, a, b) => {
            out.push_str("if ");
            pp(s, Ctx::Top, indent + 1, out);
            out.push_str(" then");
            newline(out, indent + 1);
            pp(a, Ctx::Top, indent + 1, out);
            newline(out, indent);
            out.push_str("else");
            newline(out, indent + 1);
            pp(b, Ctx::Top, indent + 1, out);
        }
        TermKind::Crec(c) => {
            let seed = if c.seed.is_empty() { "eps".to_string() } else { format!("\"{}\"", c.seed) };
            let (f, inner) = match &c.body.kind {
                TermKind::AffineLambda(f, b) => (f, b),
                _ => unreachable!("crec body is affine"),
            };
            out.push_str(&format!("crec {} (fnr {}", seed, f));
            if let Some(ty) = &c.ty {
                out.push_str(&format!(" : {}", ty));
            }
            out.push_str(" =>");
            newline(out, indent + 1);
            pp(inner, Ctx::Top, indent + 1, out);
            out.push(')');
        }
    }
    if wrap {
        out.push(')');
    }
}

/// Shared handle used by callers that only need the term.
pub fn parse_term(source: &str) -> Result<TermRef, ParseError> {
    parse_program(source).map(|(_, t)| t)
}

pub fn name(s: &str) -> Name {
    Rc::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::alpha_eq;

    #[test]
    fn identity_is_lambda() {
        let t = parse_term("fn x => x").unwrap();
        assert!(matches!(&t.kind, TermKind::Lambda(x, None, b) if &**x == "x" && matches!(&b.kind, TermKind::Var(_))));
    }

    #[test]
    fn truncated_letrec_is_syntax_error() {
        let e = parse("letrec f : N_d = ").unwrap_err();
        assert!(matches!(e, ParseError::Syntax { .. }));
        assert_eq!(e.span().line, 1);
    }

    #[test]
    fn let_desugars_to_redex() {
        let t = parse_term("let val x = \"1\" in x end").unwrap();
        let expected = Term::app(Term::lam("x", Term::var("x")), Term::constant("1"));
        assert!(alpha_eq(&t, &expected));
    }

    #[test]
    fn letrec_desugars_to_crec_application() {
        let t = parse_term("fn y => letrec f : N_eps -> N_d = fn u => c0 (f (d u)) in f y end").unwrap();
        let TermKind::Lambda(_, _, body) = &t.kind else { panic!() };
        let TermKind::App(head, arg) = &body.kind else { panic!() };
        assert!(matches!(&arg.kind, TermKind::Var(v) if &**v == "y"));
        let TermKind::Crec(c) = &head.kind else { panic!() };
        assert!(c.seed.is_empty());
        assert_eq!(&**c.parts().fvar, "f");
        assert_eq!(c.parts().params.len(), 1);
    }

    #[test]
    fn multi_parameter_fn_is_curried() {
        let t = parse_term("fn a b => a").unwrap();
        let expected = Term::lam("a", Term::lam("b", Term::var("a")));
        assert!(alpha_eq(&t, &expected));
    }

    #[test]
    fn letrec_shape_is_checked() {
        let e = parse_program("letrec f : N_eps -> N_eps -> N_d = fn u => u in f end").unwrap_err();
        assert_eq!(e.code(), "DesugarError");
    }

    #[test]
    fn oracle_references_resolve() {
        let (p, t) = parse_program("oracle a : N_eps -> N_bd; fn (x : N_eps) => a x").unwrap();
        assert_eq!(p.oracles.len(), 1);
        let TermKind::Lambda(_, _, body) = &t.kind else { panic!() };
        let TermKind::App(h, _) = &body.kind else { panic!() };
        assert!(matches!(&h.kind, TermKind::Oracle(n, _) if &**n == "a"));
    }

    #[test]
    fn bound_names_shadow_oracles() {
        let t = parse_term("oracle a : N_eps -> N_bd; fn a => a").unwrap();
        let TermKind::Lambda(_, _, body) = &t.kind else { panic!() };
        assert!(matches!(&body.kind, TermKind::Var(_)));
    }

    #[test]
    fn constants_render_as_literals() {
        assert_eq!(pretty_term(&Term::constant("011")), "\"011\"");
        assert_eq!(pretty_term(&Term::eps()), "eps");
    }

    #[test]
    fn crec_renders_and_round_trips() {
        let src = "fn (y : N_eps) => letrec f : N_eps -> N_d = fn u => if u then c1 (f (d u)) else \"0\" in f y end";
        let t = parse_term(src).unwrap();
        let text = pretty_print(&t);
        assert!(text.contains("crec eps (fnr f : N_eps -> N_d =>"));
        let back = parse_term(&text).unwrap();
        assert!(alpha_eq(&t, &back), "{}", text);
    }

    #[test]
    fn application_items() {
        let t = parse_term("f (c0 x) (down a b) c").unwrap();
        let (h, args) = t.spine();
        assert!(matches!(&h.kind, TermKind::Var(_)));
        assert_eq!(args.len(), 3);
        let back = parse_term(&pretty_print(&t)).unwrap();
        assert!(alpha_eq(&t, &back));
    }

    #[test]
    fn comments_are_skipped() {
        let t = parse_term("(* outer (* nested *) *) fn x => x").unwrap();
        assert!(matches!(&t.kind, TermKind::Lambda(..)));
    }

    #[test]
    fn bad_label_is_reported() {
        assert!(parse_type("N_db").is_err());
        assert_eq!(parse_type("N_bd -> N_dbd").unwrap().to_string(), "N_bd -> N_dbd");
    }
}
