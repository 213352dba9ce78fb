//! Plain affine recursion: recognition and the dagger transform.
//!
//! An affinely used recursive variable `f` is in plain position when every
//! occurrence sits in a complete application whose result flows through
//! basic operations, branches, the left side of `down`, a single argument
//! position, or the body of a let-binding.

use std::rc::Rc;

use serde::Serialize;
use thiserror::Error;

use crate::syntax::{fresh_name, Crec, Name, Span, Term, TermKind, TermRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OccurrenceKind {
    Absent,
    CompleteApplication,
    CondBranch,
    BasicOp,
    DownLeft,
    ArgumentPosition,
    LetBinding,
    Violation,
}

/// The clause matched at the root, or the path to the first violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AffineOccurrence {
    pub kind: OccurrenceKind,
    /// Child indices from the root (as in [`Term::children`]) to the
    /// offending subterm; empty unless `kind` is `Violation`.
    pub path: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{span}: cannot normalize occurrence of `{var}`: {message}")]
pub struct NormalizeFailed {
    pub var: String,
    pub span: Span,
    pub message: String,
}

fn violation(path: Vec<usize>) -> AffineOccurrence {
    AffineOccurrence { kind: OccurrenceKind::Violation, path }
}

fn ok(kind: OccurrenceKind) -> AffineOccurrence {
    AffineOccurrence { kind, path: Vec::new() }
}

/// Classifies the occurrence of `f` (of arity `k`) in a base-typed `t`.
pub fn classify_occurrence(t: &Term, f: &str, k: usize) -> AffineOccurrence {
    if !t.occurs_free(f) {
        return ok(OccurrenceKind::Absent);
    }
    // Descends into child `i`, prefixing its path on failure.
    let sub = |i: usize, s: &Term, kind: OccurrenceKind| {
        let r = classify_occurrence(s, f, k);
        if r.kind == OccurrenceKind::Violation {
            let mut p = vec![i];
            p.extend(r.path);
            violation(p)
        } else {
            ok(kind)
        }
    };
    match &t.kind {
        TermKind::Op(_, s) => sub(0, s, OccurrenceKind::BasicOp),
        TermKind::Cond(s, a, b) => {
            if s.occurs_free(f) {
                return violation(vec![0]);
            }
            let ra = sub(1, a, OccurrenceKind::CondBranch);
            if ra.kind == OccurrenceKind::Violation {
                return ra;
            }
            sub(2, b, OccurrenceKind::CondBranch)
        }
        TermKind::Down(s, r) => {
            if r.occurs_free(f) {
                return violation(vec![1]);
            }
            sub(0, s, OccurrenceKind::DownLeft)
        }
        TermKind::App(..) => classify_app(t, f, k),
        _ => violation(Vec::new()),
    }
}

fn classify_app(t: &Term, f: &str, k: usize) -> AffineOccurrence {
    let (head, args) = spine_of(t);
    let m = args.len();
    // Path to the i-th spine argument and to the head.
    let arg_path = |i: usize| {
        let mut p = vec![0; m - 1 - i];
        p.push(1);
        p
    };
    let head_path = || vec![0; m];
    let users: Vec<usize> = (0..m).filter(|&i| args[i].occurs_free(f)).collect();
    if let TermKind::Var(x) = &head.kind {
        if &**x == f {
            return match users.first() {
                Some(&i) => violation(arg_path(i)),
                None if m == k => ok(OccurrenceKind::CompleteApplication),
                None => violation(Vec::new()),
            };
        }
    }
    if !head.occurs_free(f) {
        return match users.as_slice() {
            [i] => {
                let r = classify_occurrence(args[*i], f, k);
                if r.kind == OccurrenceKind::Violation {
                    let mut p = arg_path(*i);
                    p.extend(r.path);
                    violation(p)
                } else {
                    ok(OccurrenceKind::ArgumentPosition)
                }
            }
            [] => ok(OccurrenceKind::Absent),
            [_, j, ..] => violation(arg_path(*j)),
        };
    }
    if let Some(&i) = users.first() {
        return violation(arg_path(i));
    }
    // Let-binding: exactly m abstractions around a plain body.
    let mut body = head;
    let mut n = 0;
    while n < m {
        match &body.kind {
            TermKind::Lambda(x, _, b) => {
                if &**x == f {
                    return ok(OccurrenceKind::LetBinding);
                }
                body = b;
                n += 1;
            }
            _ => break,
        }
    }
    if n < m || matches!(body.kind, TermKind::Lambda(..)) {
        return violation(head_path());
    }
    let r = classify_occurrence(body, f, k);
    if r.kind == OccurrenceKind::Violation {
        let mut p = head_path();
        p.extend(std::iter::repeat(0).take(m));
        p.extend(r.path);
        violation(p)
    } else {
        ok(OccurrenceKind::LetBinding)
    }
}

fn spine_of(t: &Term) -> (&Term, Vec<&Term>) {
    let mut args = Vec::new();
    let mut cur = t;
    while let TermKind::App(g, a) = &cur.kind {
        args.push(&**a);
        cur = g;
    }
    args.reverse();
    (cur, args)
}

pub fn plain_affine_position(t: &Term, f: &str, k: usize) -> bool {
    classify_occurrence(t, f, k).kind != OccurrenceKind::Violation
}

fn rebuild(t: &TermRef, kind: TermKind) -> TermRef {
    Term::at(kind, t.span)
}

/// Puts `f` into plain affine position in the base-typed term `t` without
/// changing its value.
pub fn dagger(t: &TermRef, f: &str, k: usize) -> Result<TermRef, NormalizeFailed> {
    stacker::maybe_grow(64 * 1024, 2 * 1024 * 1024, || dagger_inner(t, f, k))
}

fn dagger_inner(t: &TermRef, f: &str, k: usize) -> Result<TermRef, NormalizeFailed> {
    if !t.occurs_free(f) {
        return Ok(t.clone());
    }
    let fail = |msg: &str| NormalizeFailed { var: f.to_string(), span: t.span, message: msg.to_string() };
    match &t.kind {
        TermKind::Op(op, s) => {
            let s2 = dagger(s, f, k)?;
            Ok(if Rc::ptr_eq(&s2, s) { t.clone() } else { rebuild(t, TermKind::Op(*op, s2)) })
        }
        TermKind::Cond(s, a, b) => {
            if s.occurs_free(f) {
                return Err(fail("occurs in a conditional test"));
            }
            let (a2, b2) = (dagger(a, f, k)?, dagger(b, f, k)?);
            if Rc::ptr_eq(&a2, a) && Rc::ptr_eq(&b2, b) {
                Ok(t.clone())
            } else {
                Ok(rebuild(t, TermKind::Cond(s.clone(), a2, b2)))
            }
        }
        TermKind::Down(s, r) => {
            if r.occurs_free(f) {
                return Err(fail("occurs in the bound of down"));
            }
            let s2 = dagger(s, f, k)?;
            Ok(if Rc::ptr_eq(&s2, s) { t.clone() } else { rebuild(t, TermKind::Down(s2, r.clone())) })
        }
        TermKind::App(..) => dagger_app(t, f, k),
        _ => Err(fail("occurs outside a base-typed position")),
    }
}

fn dagger_app(t: &TermRef, f: &str, k: usize) -> Result<TermRef, NormalizeFailed> {
    let fail = |msg: String| NormalizeFailed { var: f.to_string(), span: t.span, message: msg };
    let (head, args) = t.spine();
    let m = args.len();
    let users: Vec<usize> = (0..m).filter(|&i| args[i].occurs_free(f)).collect();
    let head_has = head.occurs_free(f);
    if users.len() + usize::from(head_has) > 1 {
        return Err(fail("occurs more than once in one application".into()));
    }
    if let TermKind::Var(x) = &head.kind {
        if &**x == f {
            if m != k {
                return Err(fail(format!("applied to {} of {} arguments", m, k)));
            }
            return Ok(t.clone());
        }
    }
    if let [i] = users.as_slice() {
        let ai = dagger(args[*i], f, k)?;
        if Rc::ptr_eq(&ai, args[*i]) {
            return Ok(t.clone());
        }
        let new_args = args.iter().enumerate().map(|(j, a)| if j == *i { ai.clone() } else { (*a).clone() });
        return Ok(respan(Term::apps(head.clone(), new_args), t.span));
    }
    // f sits in the head, which must be an abstraction.
    let mut binders: Vec<(Name, Option<crate::Type>)> = Vec::new();
    let mut body = head;
    while let TermKind::Lambda(x, ann, b) = &body.kind {
        if &**x == f {
            // f is shadowed below this binder.
            return Ok(t.clone());
        }
        binders.push((x.clone(), ann.clone()));
        body = b;
    }
    if binders.is_empty() {
        return Err(fail("operator containing the recursive variable is not an abstraction".into()));
    }
    let i = binders.len();
    if i > m {
        return Err(fail("let-binding is not of base type".into()));
    }
    // Fill out the missing arguments with fresh variables.
    let mut avoid = body.free_vars();
    avoid.extend(binders.iter().map(|(x, _)| x.clone()));
    avoid.insert(f.into());
    let mut fresh: Vec<Name> = Vec::new();
    for _ in i..m {
        let y = fresh_name("y", &avoid);
        avoid.insert(y.clone());
        fresh.push(y);
    }
    let filled = fresh.iter().fold(body.clone(), |acc, y| Term::at(TermKind::App(acc, Term::at(TermKind::Var(y.clone()), head.span)), head.span));
    let body2 = dagger(&filled, f, k)?;
    if i == m && Rc::ptr_eq(&body2, body) {
        return Ok(t.clone());
    }
    let mut all_binders = binders;
    all_binders.extend(fresh.into_iter().map(|y| (y, None)));
    let new_head = all_binders
        .into_iter()
        .rev()
        .fold(body2, |acc, (x, ann)| Term::at(TermKind::Lambda(x, ann, acc), head.span));
    Ok(respan(Term::apps(new_head, args.into_iter().cloned()), t.span))
}

fn respan(t: TermRef, span: Span) -> TermRef {
    match Rc::try_unwrap(t) {
        Ok(mut inner) => {
            inner.span = span;
            Rc::new(inner)
        }
        Err(rc) => rc,
    }
}

/// Rebuilds a crec with a new inner body, keeping site, seed and binders.
fn with_crec_body(t: &TermRef, c: &Crec, inner: TermRef) -> TermRef {
    let TermKind::AffineLambda(fvar, lam) = &c.body.kind else { unreachable!("crec body is affine") };
    let k = c.split().1.len();
    fn go(t: &TermRef, k: usize, inner: &TermRef) -> TermRef {
        if k == 0 {
            return inner.clone();
        }
        match &t.kind {
            TermKind::Lambda(x, ann, b) => Term::at(TermKind::Lambda(x.clone(), ann.clone(), go(b, k - 1, inner)), t.span),
            _ => inner.clone(),
        }
    }
    let new_lam = go(lam, k, &inner);
    let body = Term::at(TermKind::AffineLambda(fvar.clone(), new_lam), c.body.span);
    Term::at(TermKind::Crec(Crec { seed: c.seed.clone(), ty: c.ty.clone(), body, site: c.site }), t.span)
}

/// Applies dagger to every crec body in `t`, innermost first.
pub fn normalize_program(t: &TermRef) -> Result<TermRef, NormalizeFailed> {
    stacker::maybe_grow(64 * 1024, 2 * 1024 * 1024, || normalize_inner(t))
}

fn normalize_inner(t: &TermRef) -> Result<TermRef, NormalizeFailed> {
    let n = normalize_program;
    Ok(match &t.kind {
        TermKind::Var(_) | TermKind::Oracle(..) | TermKind::Const(_) => t.clone(),
        TermKind::Lambda(x, ann, b) => rebuild(t, TermKind::Lambda(x.clone(), ann.clone(), n(b)?)),
        TermKind::AffineLambda(x, b) => rebuild(t, TermKind::AffineLambda(x.clone(), n(b)?)),
        TermKind::App(a, b) => rebuild(t, TermKind::App(n(a)?, n(b)?)),
        TermKind::Op(op, s) => rebuild(t, TermKind::Op(*op, n(s)?)),
        TermKind::Cond(s, a, b) => rebuild(t, TermKind::Cond(n(s)?, n(a)?, n(b)?)),
        TermKind::Down(s, r) => rebuild(t, TermKind::Down(n(s)?, n(r)?)),
        TermKind::Crec(c) => {
            let (fvar, params, body) = c.split();
            let inner = n(&body)?;
            let inner = if params.contains(&fvar) { inner } else { dagger(&inner, &fvar, params.len())? };
            with_crec_body(t, c, inner)
        }
    })
}

/// The inner bodies of all crec subterms, with recursive variable and arity.
pub fn crec_bodies(t: &TermRef) -> Vec<(Name, usize, TermRef)> {
    let mut out = Vec::new();
    t.walk(&mut |s| {
        if let TermKind::Crec(c) = &s.kind {
            let (f, params, body) = c.split();
            out.push((f, params.len(), body));
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_term;
    use crate::syntax::alpha_eq;

    fn term(s: &str) -> TermRef {
        parse_term(s).unwrap()
    }

    #[test]
    fn complete_application_is_plain() {
        let t = term("f x y");
        assert_eq!(classify_occurrence(&t, "f", 2).kind, OccurrenceKind::CompleteApplication);
    }

    #[test]
    fn argument_position_is_plain() {
        let t = term("insert a (f b (d u))");
        assert_eq!(classify_occurrence(&t, "f", 2).kind, OccurrenceKind::ArgumentPosition);
    }

    #[test]
    fn partial_let_binding_is_not_plain() {
        let t = term("(fn x => f s) a1 a2");
        assert!(!plain_affine_position(&t, "f", 2));
        let d = dagger(&t, "f", 2).unwrap();
        assert!(plain_affine_position(&d, "f", 2));
        let expected = term("(fn x => fn y => f s y) a1 a2");
        assert!(alpha_eq(&d, &expected), "{}", crate::parser::pretty_term(&d));
    }

    #[test]
    fn plain_terms_are_fixed_points() {
        let t = term("if t0 u then c0 (f b (d u)) else down (c1 (f b (d u))) b");
        assert!(plain_affine_position(&t, "f", 2));
        assert!(Rc::ptr_eq(&dagger(&t, "f", 2).unwrap(), &t));
    }

    #[test]
    fn violation_path_points_at_test() {
        let t = term("if f b u then eps else eps");
        let occ = classify_occurrence(&t, "f", 2);
        assert_eq!(occ.kind, OccurrenceKind::Violation);
        assert_eq!(occ.path, vec![0]);
        assert!(dagger(&t, "f", 2).is_err());
    }

    #[test]
    fn dagger_pushes_through_operators() {
        let t = term("c1 (d ((fn x => f x) b (d u)))");
        let d = dagger(&t, "f", 2).unwrap();
        assert!(plain_affine_position(&d, "f", 2));
        let again = dagger(&d, "f", 2).unwrap();
        assert!(alpha_eq(&d, &again));
    }

    #[test]
    fn fresh_names_avoid_capture() {
        let t = term("(fn x => f y) a1 a2");
        let d = dagger(&t, "f", 2).unwrap();
        assert!(plain_affine_position(&d, "f", 2));
        // The free `y` must stay free.
        assert!(d.free_vars().contains("y"));
    }
}
