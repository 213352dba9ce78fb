//! Dual-zone tiered typing with subsumption and restricted shift.
//!
//! Checking is bidirectional. Every accepted term yields a [`Derivation`]
//! whose nodes record the intuitionistic context, the affine variables the
//! subterm actually uses, and the rule applied.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::bits::Bits;
use crate::scope::Scope;
use crate::syntax::{
    self, alpha_eq, shift_type, subtype, type_join, Label, Name, Span, Term, TermKind, TermRef, Type,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ErrorCode {
    AffineReuse,
    AffineInOperatorAndArgument,
    AffineInCondTest,
    AffineArgNotBase,
    CrecClockCondition,
    ShiftNonEmptyAffine,
    ShiftUnsupported,
    NotSubtype,
    ArityMismatch,
    UnboundVariable,
    AnnotationRequired,
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{span}: {code}: {message}")]
pub struct TypeError {
    pub code: ErrorCode,
    pub span: Span,
    pub message: String,
}

fn err<T>(code: ErrorCode, span: Span, message: impl Into<String>) -> Result<T, TypeError> {
    Err(TypeError { code, span, message: message.into() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Rule {
    ZeroI,
    ConstI,
    OracleI,
    IntId,
    AffId,
    Shift,
    Subsumption,
    OpC,
    OpD,
    OpT,
    DownI,
    IfI,
    CrecI,
    ArrowI,
    ArrowE,
}

impl Rule {
    pub fn label(self) -> &'static str {
        match self {
            Rule::ZeroI => "Zero-I",
            Rule::ConstI => "Const-I",
            Rule::OracleI => "Oracle-I",
            Rule::IntId => "Int-Id-I",
            Rule::AffId => "Aff-Id-I",
            Rule::Shift => "Shift",
            Rule::Subsumption => "Subsumption",
            Rule::OpC => "c_a-I",
            Rule::OpD => "d-I",
            Rule::OpT => "t_a-I",
            Rule::DownI => "down-I",
            Rule::IfI => "if-I",
            Rule::CrecI => "crec-I",
            Rule::ArrowI => "->-I",
            Rule::ArrowE => "->-E",
        }
    }
}

/// Affine variables used by a subterm, with their types.
pub type Zone = Vec<(Name, Type)>;

#[derive(Clone)]
pub struct TypeContext {
    pub gamma: Scope<Type>,
    pub delta: Zone,
}

impl Default for TypeContext {
    fn default() -> Self {
        TypeContext { gamma: Scope::new(), delta: Vec::new() }
    }
}

impl TypeContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_var(mut self, x: &str, t: Type) -> Self {
        self.delta.retain(|(y, _)| &**y != x);
        self.gamma = self.gamma.extend(x.into(), t);
        self
    }

    pub fn with_affine(mut self, x: &str, t: Type) -> Self {
        self.delta.retain(|(y, _)| &**y != x);
        self.delta.push((x.into(), t));
        self
    }
}

#[derive(Clone)]
pub struct Derivation {
    pub rule: Rule,
    pub gamma: Scope<Type>,
    pub delta: Zone,
    pub term: TermRef,
    pub ty: Type,
    pub premises: Vec<Derivation>,
}

impl fmt::Debug for Derivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Derivation")
            .field("rule", &self.rule)
            .field("ty", &self.ty.to_string())
            .field("premises", &self.premises)
            .finish()
    }
}

impl Derivation {
    pub fn size(&self) -> usize {
        1 + self.premises.iter().map(|p| p.size()).sum::<usize>()
    }

    pub fn walk(&self, visit: &mut dyn FnMut(&Derivation)) {
        visit(self);
        for p in &self.premises {
            p.walk(visit);
        }
    }

    /// Strips trailing Subsumption and Shift nodes.
    pub fn core(&self) -> &Derivation {
        match self.rule {
            Rule::Subsumption | Rule::Shift => self.premises[0].core(),
            _ => self,
        }
    }
}

fn zone_union(a: &Zone, b: &Zone) -> Zone {
    let mut out = a.clone();
    for (x, t) in b {
        if !out.iter().any(|(y, _)| y == x) {
            out.push((x.clone(), t.clone()));
        }
    }
    out
}

fn used_affine(delta: &Zone, t: &Term) -> Zone {
    delta.iter().filter(|(x, _)| t.occurs_free(x)).cloned().collect()
}

/// Assigns each affine variable to the one subterm of an application where
/// it occurs free.
pub fn split_affine(delta: &Zone, operator: &Term, argument: &Term) -> Result<(Zone, Zone), TypeError> {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (x, t) in delta {
        match (operator.occurs_free(x), argument.occurs_free(x)) {
            (true, true) => {
                return err(
                    ErrorCode::AffineInOperatorAndArgument,
                    argument.span,
                    format!("affine variable `{}` occurs in both the operator and the argument", x),
                )
            }
            (true, false) => left.push((x.clone(), t.clone())),
            (false, true) => right.push((x.clone(), t.clone())),
            (false, false) => {}
        }
    }
    Ok((left, right))
}

/// Side condition of crec-I: every b_i with b_i <: b1 (including the result
/// b0) must be oracular.
pub fn validate_crec(seed: &Bits, rec: &Type, span: Span) -> Result<(), TypeError> {
    let _ = seed;
    let (args, result) = rec.uncurry();
    if args.is_empty() || args.iter().any(|a| !a.is_base()) {
        return err(
            ErrorCode::ArityMismatch,
            span,
            format!("recursive type {} must take at least one argument, all of base type", rec),
        );
    }
    let b1 = args[0].tail();
    let mut labels = vec![(0usize, result)];
    labels.extend(args.iter().enumerate().map(|(i, a)| (i + 1, a.tail())));
    for (i, b) in labels {
        if syntax::label_le(b, b1) && !b.is_oracular() {
            return err(
                ErrorCode::CrecClockCondition,
                span,
                format!("b{} = N_{} is below the clock type N_{} but not oracular", i, b, b1),
            );
        }
    }
    Ok(())
}

/// Applies Shift to a whole derivation.
pub fn apply_shift(d: Derivation) -> Result<Derivation, TypeError> {
    if !d.delta.is_empty() {
        return err(
            ErrorCode::ShiftNonEmptyAffine,
            d.term.span,
            format!("cannot shift a term using affine variable `{}`", d.delta[0].0),
        );
    }
    let ty = shift_type(&d.ty).map_err(|e| TypeError {
        code: ErrorCode::ShiftUnsupported,
        span: d.term.span,
        message: e.to_string(),
    })?;
    Ok(Derivation {
        rule: Rule::Shift,
        gamma: d.gamma.clone(),
        delta: Vec::new(),
        term: d.term.clone(),
        ty,
        premises: vec![d],
    })
}

fn subsume(d: Derivation, to: &Type) -> Derivation {
    if &d.ty == to {
        return d;
    }
    debug_assert!(subtype(&d.ty, to));
    Derivation {
        rule: Rule::Subsumption,
        gamma: d.gamma.clone(),
        delta: d.delta.clone(),
        term: d.term.clone(),
        ty: to.clone(),
        premises: vec![d],
    }
}

const MAX_SHIFTS: usize = 3;

/// Infers a type for `t` under `ctx`.
pub fn infer(t: &TermRef, ctx: &TypeContext) -> Result<Derivation, TypeError> {
    Checker.infer(t, &ctx.gamma, &ctx.delta)
}

/// Checks `t` against `expected`, allowing one trailing Subsumption.
pub fn check_program(t: &TermRef, ctx: &TypeContext, expected: &Type) -> Result<Derivation, TypeError> {
    Checker.check(t, &ctx.gamma, &ctx.delta, expected)
}

struct Checker;

impl Checker {
    fn node(&self, rule: Rule, gamma: &Scope<Type>, delta: Zone, term: &TermRef, ty: Type, premises: Vec<Derivation>) -> Derivation {
        Derivation { rule, gamma: gamma.clone(), delta, term: term.clone(), ty, premises }
    }

    fn check(&self, t: &TermRef, gamma: &Scope<Type>, delta: &Zone, expected: &Type) -> Result<Derivation, TypeError> {
        stacker::maybe_grow(64 * 1024, 2 * 1024 * 1024, || self.check_inner(t, gamma, delta, expected))
    }

    fn check_inner(&self, t: &TermRef, gamma: &Scope<Type>, delta: &Zone, expected: &Type) -> Result<Derivation, TypeError> {
        if let (TermKind::Lambda(x, ann, body), Type::Arrow(sigma, tau)) = (&t.kind, expected) {
            let param = match ann {
                Some(a) => {
                    if !subtype(sigma, a) {
                        return err(
                            ErrorCode::NotSubtype,
                            t.span,
                            format!("parameter `{}` annotated {} cannot accept {}", x, a, sigma),
                        );
                    }
                    a.clone()
                }
                None => (**sigma).clone(),
            };
            let g = gamma.extend(x.clone(), param.clone());
            let dl: Zone = delta.iter().filter(|(y, _)| y != x).cloned().collect();
            let db = self.check(body, &g, &dl, tau)?;
            let ty = Type::arrow(param, db.ty.clone());
            let d = self.node(Rule::ArrowI, gamma, db.delta.clone(), t, ty, vec![db]);
            return Ok(subsume(d, expected));
        }
        let d = self.infer(t, gamma, delta)?;
        self.coerce(d, expected)
    }

    /// Subsumption, or Shift followed by Subsumption when that is the only
    /// way to reach `expected`.
    fn coerce(&self, d: Derivation, expected: &Type) -> Result<Derivation, TypeError> {
        if subtype(&d.ty, expected) {
            return Ok(subsume(d, expected));
        }
        let mut shifted = d.ty.clone();
        for _ in 0..MAX_SHIFTS {
            shifted = match shift_type(&shifted) {
                Ok(s) => s,
                Err(_) => break,
            };
            if subtype(&shifted, expected) {
                let mut cur = d;
                while !subtype(&cur.ty, expected) {
                    cur = apply_shift(cur)?;
                }
                return Ok(subsume(cur, expected));
            }
        }
        err(ErrorCode::NotSubtype, d.term.span, format!("expected {}, found {}", expected, d.ty))
    }

    fn infer(&self, t: &TermRef, gamma: &Scope<Type>, delta: &Zone) -> Result<Derivation, TypeError> {
        stacker::maybe_grow(64 * 1024, 2 * 1024 * 1024, || self.infer_inner(t, gamma, delta))
    }

    fn infer_inner(&self, t: &TermRef, gamma: &Scope<Type>, delta: &Zone) -> Result<Derivation, TypeError> {
        match &t.kind {
            TermKind::Const(b) => {
                let (rule, l) = if b.is_empty() { (Rule::ZeroI, Label::EPS) } else { (Rule::ConstI, Label::D) };
                Ok(self.node(rule, gamma, Vec::new(), t, Type::Base(l), vec![]))
            }
            TermKind::Oracle(_, ty) => Ok(self.node(Rule::OracleI, gamma, Vec::new(), t, ty.clone(), vec![])),
            TermKind::Var(x) => {
                if let Some((_, ty)) = delta.iter().find(|(y, _)| y == x) {
                    return Ok(self.node(Rule::AffId, gamma, vec![(x.clone(), ty.clone())], t, ty.clone(), vec![]));
                }
                match gamma.get(x) {
                    Some(ty) => Ok(self.node(Rule::IntId, gamma, Vec::new(), t, ty.clone(), vec![])),
                    None => err(ErrorCode::UnboundVariable, t.span, format!("unbound variable `{}`", x)),
                }
            }
            TermKind::Lambda(x, ann, body) => match ann {
                Some(a) => {
                    let g = gamma.extend(x.clone(), a.clone());
                    let dl: Zone = delta.iter().filter(|(y, _)| y != x).cloned().collect();
                    let db = self.infer(body, &g, &dl)?;
                    let ty = Type::arrow(a.clone(), db.ty.clone());
                    Ok(self.node(Rule::ArrowI, gamma, db.delta.clone(), t, ty, vec![db]))
                }
                None => err(
                    ErrorCode::AnnotationRequired,
                    t.span,
                    format!("cannot infer the type of parameter `{}`; annotate it or apply the abstraction", x),
                ),
            },
            TermKind::AffineLambda(f, _) => err(
                ErrorCode::AnnotationRequired,
                t.span,
                format!("affine abstraction over `{}` may only appear as a crec body", f),
            ),
            TermKind::App(..) => self.infer_app(t, gamma, delta),
            TermKind::Op(op, s) => {
                let ds = self.infer(s, gamma, delta)?;
                let l = self.base_of(&ds)?;
                use syntax::BasicOp::*;
                let (rule, ds) = match op {
                    C0 | C1 => {
                        let lc = l.computational_ceiling();
                        (Rule::OpC, subsume(ds, &Type::Base(lc)))
                    }
                    D => (Rule::OpD, ds),
                    T0 | T1 => (Rule::OpT, ds),
                };
                let ty = ds.ty.clone();
                Ok(self.node(rule, gamma, ds.delta.clone(), t, ty, vec![ds]))
            }
            TermKind::Cond(s, a, b) => {
                if let Some((f, _)) = used_affine(delta, s).first() {
                    return err(
                        ErrorCode::AffineInCondTest,
                        s.span,
                        format!("affine variable `{}` occurs in a conditional test", f),
                    );
                }
                let ds = self.infer(s, gamma, &Vec::new())?;
                self.base_of(&ds)?;
                let da = self.infer(a, gamma, delta)?;
                let db = self.infer(b, gamma, delta)?;
                let la = self.base_of(&da)?;
                let lb = self.base_of(&db)?;
                let ty = type_join(&Type::Base(la), &Type::Base(lb)).expect("base join");
                let zone = zone_union(&da.delta, &db.delta);
                let da = subsume(da, &ty);
                let db = subsume(db, &ty);
                Ok(self.node(Rule::IfI, gamma, zone, t, ty, vec![ds, da, db]))
            }
            TermKind::Down(s, r) => {
                if let Some((f, _)) = used_affine(delta, r).first() {
                    return err(
                        ErrorCode::AffineReuse,
                        r.span,
                        format!("affine variable `{}` is not available in the bound of down", f),
                    );
                }
                let ds = self.infer(s, gamma, delta)?;
                self.base_of(&ds)?;
                let dr = self.infer(r, gamma, &Vec::new())?;
                let l = self.base_of(&dr)?;
                Ok(self.node(Rule::DownI, gamma, ds.delta.clone(), t, Type::Base(l), vec![ds, dr]))
            }
            TermKind::Crec(c) => self.infer_crec(t, c, gamma, delta),
        }
    }

    fn base_of(&self, d: &Derivation) -> Result<Label, TypeError> {
        d.ty.as_base().ok_or_else(|| TypeError {
            code: ErrorCode::NotSubtype,
            span: d.term.span,
            message: format!("expected a base type, found {}", d.ty),
        })
    }

    fn infer_crec(&self, t: &TermRef, c: &syntax::Crec, gamma: &Scope<Type>, delta: &Zone) -> Result<Derivation, TypeError> {
        let ty = match &c.ty {
            Some(ty) => ty.clone(),
            None => return err(ErrorCode::AnnotationRequired, t.span, "crec requires a type annotation"),
        };
        if let Some((f, _)) = used_affine(delta, &c.body).first() {
            return err(
                ErrorCode::AffineReuse,
                t.span,
                format!("affine variable `{}` cannot be used inside a nested recursion", f),
            );
        }
        validate_crec(&c.seed, &ty, t.span)?;
        let (args, result) = ty.uncurry();
        let (fvar, params, body) = c.split();
        if params.len() != args.len() {
            return err(
                ErrorCode::ArityMismatch,
                t.span,
                format!("crec type {} expects {} parameter(s), body binds {}", ty, args.len(), params.len()),
            );
        }
        let seed_term = Term::at(TermKind::Const(c.seed.clone()), t.span);
        let dseed = self.infer(&seed_term, gamma, &Vec::new())?;
        let dseed = subsume(dseed, &Type::Base(Label::D));
        let mut g = gamma.clone();
        for (p, a) in params.iter().zip(&args) {
            g = g.extend(p.clone(), (*a).clone());
        }
        let zone: Zone = if params.contains(&fvar) { Vec::new() } else { vec![(fvar.clone(), ty.clone())] };
        let dbody = self.infer(&body, &g, &zone)?;
        let dbody = self.coerce(dbody, &Type::Base(result))?;
        Ok(self.node(Rule::CrecI, gamma, Vec::new(), t, ty.clone(), vec![dseed, dbody]))
    }

    fn infer_app(&self, t: &TermRef, gamma: &Scope<Type>, delta: &Zone) -> Result<Derivation, TypeError> {
        let (head, args) = t.spine();
        // Redexes (let-bindings) take parameter types from their arguments.
        if let TermKind::Lambda(..) = head.kind {
            return self.infer_redex(t, gamma, delta);
        }
        let _ = args;
        let TermKind::App(f, a) = &t.kind else { unreachable!() };
        let (zf, za) = split_affine(delta, f, a)?;
        let df = self.infer(f, gamma, &zf)?;
        self.apply(t, df, a, gamma, &za)
    }

    /// Finishes `->-E` given the operator derivation.
    fn apply(&self, t: &TermRef, df: Derivation, a: &TermRef, gamma: &Scope<Type>, za: &Zone) -> Result<Derivation, TypeError> {
        let Type::Arrow(sigma, _) = &df.ty else {
            return err(
                ErrorCode::ArityMismatch,
                a.span,
                format!("operator of type {} is applied to too many arguments", df.ty),
            );
        };
        let sigma = (**sigma).clone();
        let da = match (&a.kind, &sigma) {
            (TermKind::Lambda(_, None, _), Type::Arrow(..)) => self.check(a, gamma, za, &sigma)?,
            _ => self.infer(a, gamma, za)?,
        };
        let (df, da) = if subtype(&da.ty, &sigma) {
            let da = subsume(da, &sigma);
            (df, da)
        } else {
            let df = self.shift_operator(df, &da)?;
            let Type::Arrow(s2, _) = &df.ty else { unreachable!() };
            let s2 = (**s2).clone();
            (df, subsume(da, &s2))
        };
        let Type::Arrow(sigma, tau) = &df.ty else { unreachable!() };
        if !da.delta.is_empty() && !sigma.is_base() {
            return err(
                ErrorCode::AffineArgNotBase,
                a.span,
                format!("argument using affine variable `{}` must have base type, not {}", da.delta[0].0, sigma),
            );
        }
        let zone = zone_union(&df.delta, &da.delta);
        let ty = (**tau).clone();
        Ok(self.node(Rule::ArrowE, gamma, zone, t, ty, vec![df, da]))
    }

    /// Shifts the operator until the argument type fits its domain.
    fn shift_operator(&self, df: Derivation, da: &Derivation) -> Result<Derivation, TypeError> {
        let mismatch = || TypeError {
            code: ErrorCode::NotSubtype,
            span: da.term.span,
            message: format!("argument of type {} does not fit operator type {}", da.ty, df.ty),
        };
        if df.ty.level() > 1 {
            return Err(mismatch());
        }
        let mut ty = df.ty.clone();
        let mut needed = None;
        for n in 1..=MAX_SHIFTS {
            ty = shift_type(&ty).map_err(|_| mismatch())?;
            if let Type::Arrow(s, _) = &ty {
                if subtype(&da.ty, s) {
                    needed = Some(n);
                    break;
                }
            }
        }
        let Some(n) = needed else { return Err(mismatch()) };
        let mut cur = df;
        for _ in 0..n {
            cur = apply_shift(cur)?;
        }
        Ok(cur)
    }

    fn infer_redex(&self, t: &TermRef, gamma: &Scope<Type>, delta: &Zone) -> Result<Derivation, TypeError> {
        let (head, args) = t.spine();
        // Peel as many abstractions as there are arguments.
        let mut lambdas: Vec<&TermRef> = Vec::new();
        let mut cur = head;
        while lambdas.len() < args.len() {
            match &cur.kind {
                TermKind::Lambda(_, _, b) => {
                    lambdas.push(cur);
                    cur = b;
                }
                _ => break,
            }
        }
        let m = lambdas.len();
        // Affine zones: every variable goes to exactly one of the m arguments
        // or the abstraction itself.
        let mut zones: Vec<Zone> = vec![Vec::new(); m];
        let mut zhead: Zone = Vec::new();
        for (x, ty) in delta {
            let in_head = head.occurs_free(x);
            let users: Vec<usize> = (0..m).filter(|&i| args[i].occurs_free(x)).collect();
            if users.len() + usize::from(in_head) > 1 {
                let span = users.last().map(|&i| args[i].span).unwrap_or(t.span);
                return err(
                    ErrorCode::AffineInOperatorAndArgument,
                    span,
                    format!("affine variable `{}` occurs in both the operator and an argument", x),
                );
            }
            if in_head {
                zhead.push((x.clone(), ty.clone()));
            } else if let Some(&i) = users.first() {
                zones[i].push((x.clone(), ty.clone()));
            }
        }
        let mut dargs = Vec::with_capacity(m);
        let mut params = Vec::with_capacity(m);
        for i in 0..m {
            let TermKind::Lambda(x, ann, _) = &lambdas[i].kind else { unreachable!() };
            let da = match ann {
                Some(a) => self.check(args[i], gamma, &zones[i], a)?,
                None => self.infer(args[i], gamma, &zones[i])?,
            };
            if !da.delta.is_empty() && !da.ty.is_base() {
                return err(
                    ErrorCode::AffineArgNotBase,
                    args[i].span,
                    format!("argument using affine variable `{}` must have base type", da.delta[0].0),
                );
            }
            params.push((x.clone(), da.ty.clone()));
            dargs.push(da);
        }
        // Body under all parameters.
        let mut g = gamma.clone();
        let mut dz = zhead.clone();
        for (x, ty) in &params {
            g = g.extend(x.clone(), ty.clone());
            dz.retain(|(y, _)| y != x);
        }
        let dbody = self.infer(cur, &g, &dz)?;
        // Rebuild the abstraction derivations from the inside out.
        let mut dlam = dbody;
        for i in (0..m).rev() {
            let gi = params[..i].iter().fold(gamma.clone(), |acc, (x, ty)| acc.extend(x.clone(), ty.clone()));
            let ty = Type::arrow(params[i].1.clone(), dlam.ty.clone());
            let zone = dlam.delta.clone();
            dlam = self.node(Rule::ArrowI, &gi, zone, lambdas[i], ty, vec![dlam]);
        }
        // Apply to the arguments.
        let mut dcur = dlam;
        let mut node_term = head.clone();
        for (i, da) in dargs.into_iter().enumerate() {
            node_term = app_term(&node_term, args[i], t);
            let Type::Arrow(_, tau) = &dcur.ty else { unreachable!() };
            let ty = (**tau).clone();
            let zone = zone_union(&dcur.delta, &da.delta);
            dcur = self.node(Rule::ArrowE, gamma, zone, &node_term, ty, vec![dcur, da]);
        }
        // Remaining arguments apply ordinarily.
        for a in &args[m..] {
            node_term = app_term(&node_term, a, t);
            let (_, za) = split_affine(delta, &dcur.term, a)?;
            if !za.is_empty() && dcur.delta.iter().any(|(x, _)| za.iter().any(|(y, _)| x == y)) {
                return err(ErrorCode::AffineInOperatorAndArgument, a.span, "affine variable used twice");
            }
            dcur = self.apply(&node_term, dcur, a, gamma, &za)?;
        }
        Ok(dcur)
    }
}

/// Recovers the original App node for the prefix `f a` of the spine of `whole`.
fn app_term(f: &TermRef, a: &TermRef, whole: &TermRef) -> TermRef {
    let mut cur = whole;
    loop {
        match &cur.kind {
            TermKind::App(g, b) if std::rc::Rc::ptr_eq(b, a) && std::rc::Rc::ptr_eq(g, f) => return cur.clone(),
            TermKind::App(g, _) => cur = g,
            _ => return Term::at(TermKind::App(f.clone(), a.clone()), whole.span),
        }
    }
}

/// Re-validates every rule instance of a derivation independently of the
/// checker that produced it.
pub fn validate(d: &Derivation) -> Result<(), String> {
    for p in &d.premises {
        validate(p)?;
    }
    let fail = |msg: &str| Err(format!("{} at {}: {}", d.rule.label(), d.term.span, msg));
    let prem = |i: usize| &d.premises[i];
    let arity = |n: usize| d.premises.len() == n;
    let same_term = |a: &TermRef, b: &TermRef| std::rc::Rc::ptr_eq(a, b) || alpha_eq(a, b);
    match d.rule {
        Rule::ZeroI => match &d.term.kind {
            TermKind::Const(b) if b.is_empty() && d.ty == Type::Base(Label::EPS) && arity(0) => Ok(()),
            _ => fail("expected eps : N_eps"),
        },
        Rule::ConstI => match &d.term.kind {
            TermKind::Const(b) if !b.is_empty() && d.ty == Type::Base(Label::D) && arity(0) => Ok(()),
            _ => fail("expected a nonempty constant at N_d"),
        },
        Rule::OracleI => match &d.term.kind {
            TermKind::Oracle(_, ty) if *ty == d.ty && arity(0) => Ok(()),
            _ => fail("oracle type mismatch"),
        },
        Rule::IntId => match &d.term.kind {
            TermKind::Var(x) if d.gamma.get(x) == Some(&d.ty) && d.delta.is_empty() => Ok(()),
            _ => fail("variable not in the intuitionistic zone at this type"),
        },
        Rule::AffId => match &d.term.kind {
            TermKind::Var(x) if d.delta.len() == 1 && d.delta[0].0 == *x && d.delta[0].1 == d.ty => Ok(()),
            _ => fail("variable not in the affine zone at this type"),
        },
        Rule::Shift => {
            if !arity(1) || !prem(0).delta.is_empty() {
                return fail("shift needs one premise with an empty affine zone");
            }
            match shift_type(&prem(0).ty) {
                Ok(t) if t == d.ty && same_term(&prem(0).term, &d.term) => Ok(()),
                _ => fail("conclusion is not the shift of the premise"),
            }
        }
        Rule::Subsumption => {
            if arity(1) && subtype(&prem(0).ty, &d.ty) && same_term(&prem(0).term, &d.term) && prem(0).delta == d.delta {
                Ok(())
            } else {
                fail("premise type is not a subtype")
            }
        }
        Rule::OpC | Rule::OpD | Rule::OpT => {
            let TermKind::Op(op, s) = &d.term.kind else { return fail("not a basic operation") };
            let ok_rule = match op {
                syntax::BasicOp::C0 | syntax::BasicOp::C1 => d.rule == Rule::OpC,
                syntax::BasicOp::D => d.rule == Rule::OpD,
                _ => d.rule == Rule::OpT,
            };
            let Some(l) = d.ty.as_base() else { return fail("non-base type") };
            if !ok_rule || !arity(1) || prem(0).ty != d.ty || !same_term(&prem(0).term, s) {
                return fail("premise mismatch");
            }
            if d.rule == Rule::OpC && !l.is_computational() {
                return fail("c_a requires a computational label");
            }
            Ok(())
        }
        Rule::DownI => {
            let TermKind::Down(s, r) = &d.term.kind else { return fail("not down") };
            if !arity(2) || !same_term(&prem(0).term, s) || !same_term(&prem(1).term, r) {
                return fail("premise terms");
            }
            if !prem(1).delta.is_empty() {
                return fail("bound must be typed without affine variables");
            }
            if !prem(0).ty.is_base() || !prem(1).ty.is_base() || prem(1).ty != d.ty || prem(0).delta != d.delta {
                return fail("types");
            }
            Ok(())
        }
        Rule::IfI => {
            let TermKind::Cond(s, a, b) = &d.term.kind else { return fail("not if") };
            if !arity(3) || !same_term(&prem(0).term, s) || !same_term(&prem(1).term, a) || !same_term(&prem(2).term, b) {
                return fail("premise terms");
            }
            if !prem(0).delta.is_empty() {
                return fail("affine variable in test");
            }
            if !prem(0).ty.is_base() || !d.ty.is_base() || prem(1).ty != d.ty || prem(2).ty != d.ty {
                return fail("branch types");
            }
            if d.delta != zone_union(&prem(1).delta, &prem(2).delta) {
                return fail("affine zone is not the union of the branches");
            }
            Ok(())
        }
        Rule::ArrowI => {
            let TermKind::Lambda(x, ann, b) = &d.term.kind else { return fail("not an abstraction") };
            let Type::Arrow(sigma, tau) = &d.ty else { return fail("not an arrow") };
            if !arity(1) || !same_term(&prem(0).term, b) || prem(0).ty != **tau {
                return fail("body");
            }
            if prem(0).gamma.get(x) != Some(&**sigma) {
                return fail("parameter not bound at the domain type");
            }
            if ann.as_ref().is_some_and(|a| a != &**sigma) {
                return fail("annotation differs from domain");
            }
            if prem(0).delta != d.delta {
                return fail("affine zone");
            }
            Ok(())
        }
        Rule::ArrowE => {
            let TermKind::App(f, a) = &d.term.kind else { return fail("not an application") };
            if !arity(2) || !same_term(&prem(0).term, f) || !same_term(&prem(1).term, a) {
                return fail("premise terms");
            }
            let Type::Arrow(sigma, tau) = &prem(0).ty else { return fail("operator is not an arrow") };
            if prem(1).ty != **sigma || d.ty != **tau {
                return fail("argument or result type");
            }
            let (d0, d1) = (&prem(0).delta, &prem(1).delta);
            if d0.iter().any(|(x, _)| d1.iter().any(|(y, _)| x == y)) {
                return fail("affine zones overlap");
            }
            if !d1.is_empty() && !sigma.is_base() {
                return fail("affine argument of non-base type");
            }
            if d.delta != zone_union(d0, d1) {
                return fail("affine zone");
            }
            Ok(())
        }
        Rule::CrecI => {
            let TermKind::Crec(c) = &d.term.kind else { return fail("not crec") };
            let Some(ty) = &c.ty else { return fail("missing annotation") };
            if *ty != d.ty || !arity(2) || !d.delta.is_empty() {
                return fail("shape");
            }
            if validate_crec(&c.seed, ty, d.term.span).is_err() {
                return fail("clock side condition");
            }
            if prem(0).ty != Type::Base(Label::D) {
                return fail("seed must be typed N_d");
            }
            let (fvar, params, body) = c.split();
            let (args, result) = ty.uncurry();
            if !same_term(&prem(1).term, &body) || prem(1).ty != Type::Base(result) {
                return fail("body premise");
            }
            for (p, a) in params.iter().zip(args) {
                if prem(1).gamma.get(p) != Some(a) {
                    return fail("parameter typing");
                }
            }
            if prem(1).delta.iter().any(|(x, t)| *x != fvar || t != ty) {
                return fail("body may only use the recursive variable affinely");
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn n(l: u32) -> Type {
        Type::Base(Label(l))
    }

    fn check_src(src: &str) -> Result<Derivation, TypeError> {
        let (_, t) = parse_program(src).expect("parse");
        infer(&t, &TypeContext::new())
    }

    fn code_of(src: &str) -> ErrorCode {
        check_src(src).expect_err("should be rejected").code
    }

    #[test]
    fn eps_is_zero_i() {
        let d = check_program(&Term::eps(), &TypeContext::new(), &n(0)).unwrap();
        assert_eq!(d.rule, Rule::ZeroI);
        let d = check_program(&Term::constant("01"), &TypeContext::new(), &n(1)).unwrap();
        assert_eq!(d.rule, Rule::ConstI);
    }

    #[test]
    fn const_does_not_fit_eps() {
        let e = check_program(&Term::constant("01"), &TypeContext::new(), &n(0)).unwrap_err();
        assert_eq!(e.code, ErrorCode::NotSubtype);
    }

    #[test]
    fn f_of_f_x_types_at_dbd() {
        // f : N_eps -> N_d applied to f x : N_d needs one shift of the outer f.
        let ctx = TypeContext::new().with_var("f", Type::arrow(n(0), n(1))).with_var("x", n(0));
        let t = Term::app(Term::var("f"), Term::app(Term::var("f"), Term::var("x")));
        let d = infer(&t, &ctx).unwrap();
        assert_eq!(d.ty, n(3));
        validate(&d).unwrap();
        let mut shifts = 0;
        d.walk(&mut |x| shifts += usize::from(x.rule == Rule::Shift));
        assert_eq!(shifts, 1);
    }

    #[test]
    fn shift_requires_empty_affine_zone() {
        let src = "oracle alpha : N_eps -> N_bd;
            fn (b : N_eps) => letrec f : N_eps -> N_d = fn u => if u then f (alpha u) else eps in f b end";
        assert_eq!(code_of(src), ErrorCode::ShiftNonEmptyAffine);
    }

    #[test]
    fn shift_of_level_two_is_unsupported() {
        let ctx = TypeContext::new().with_var("g", Type::arrow(Type::arrow(n(0), n(1)), n(1)));
        let d = infer(&Term::var("g"), &ctx).unwrap();
        assert_eq!(apply_shift(d).unwrap_err().code, ErrorCode::ShiftUnsupported);
    }

    #[test]
    fn operator_and_argument_conflict() {
        let src = "fn (b : N_eps) => letrec f : N_eps -> N_eps -> N_eps =
            fn c u => if u then f c (f c (d u)) else u in f b b end";
        assert_eq!(code_of(src), ErrorCode::AffineInOperatorAndArgument);
    }

    #[test]
    fn affine_in_test_rejected() {
        let src = "fn (b : N_eps) => letrec f : N_eps -> N_eps -> N_d =
            fn c u => if f c (d u) then \"1\" else eps in f b b end";
        assert_eq!(code_of(src), ErrorCode::AffineInCondTest);
    }

    #[test]
    fn down_bound_cannot_use_affine() {
        let src = "fn (b : N_eps) => letrec f : N_eps -> N_eps -> N_eps =
            fn c u => if u then down (f c (d u)) (f c (d u)) else u in f b b end";
        assert_eq!(code_of(src), ErrorCode::AffineReuse);
    }

    #[test]
    fn clock_condition_examples() {
        let e = Bits::empty();
        let sp = Span::default();
        assert!(validate_crec(&e, &Type::curried([n(0), n(1)], n(1)), sp).is_ok());
        assert_eq!(validate_crec(&e, &Type::arrow(n(1), n(1)), sp).unwrap_err().code, ErrorCode::CrecClockCondition);
        assert!(validate_crec(&e, &Type::curried([n(2), n(0)], n(0)), sp).is_ok());
        let bad = validate_crec(&e, &Type::curried([n(2), n(1)], n(0)), sp).unwrap_err();
        assert!(bad.message.contains("b2"));
    }

    #[test]
    fn split_affine_assigns_zones() {
        let delta: Zone = vec![("f".into(), Type::arrow(n(0), n(1)))];
        let op = Term::var("f");
        let arg = Term::var("x");
        assert_eq!(split_affine(&delta, &op, &arg).unwrap().0.len(), 1);
        let op2 = Term::var("g");
        let arg2 = Term::app(Term::var("f"), Term::var("x"));
        let (l, r) = split_affine(&delta, &op2, &arg2).unwrap();
        assert!(l.is_empty() && r.len() == 1);
        assert_eq!(split_affine(&delta, &arg2, &arg2).unwrap_err().code, ErrorCode::AffineInOperatorAndArgument);
    }

    #[test]
    fn let_binding_of_functions_needs_no_annotation_on_use() {
        let src = "val twice : N_d -> N_d = fn x => c0 (c0 x);
            fn (y : N_eps) => let val z = twice y in c1 z end";
        let d = check_src(src).unwrap();
        assert_eq!(d.ty, Type::arrow(n(0), n(1)));
        validate(&d).unwrap();
    }

    #[test]
    fn unannotated_lambda_needs_annotation() {
        assert_eq!(code_of("fn x => x"), ErrorCode::AnnotationRequired);
    }

    #[test]
    fn unbound_variable() {
        assert_eq!(code_of("c0 zz"), ErrorCode::UnboundVariable);
    }

    #[test]
    fn too_many_arguments() {
        assert_eq!(code_of("fn (x : N_eps) => x x"), ErrorCode::ArityMismatch);
    }

    #[test]
    fn subsumption_monotone_on_simple_terms() {
        let t = Term::op(syntax::BasicOp::C0, Term::eps());
        for l in 1..6 {
            assert!(check_program(&t, &TypeContext::new(), &n(l)).is_ok());
        }
    }

    #[test]
    fn lambda_param_from_expected_type() {
        let t = Term::lam("x", Term::op(syntax::BasicOp::C1, Term::var("x")));
        let d = check_program(&t, &TypeContext::new(), &Type::arrow(n(0), n(1))).unwrap();
        validate(&d).unwrap();
        assert!(check_program(&t, &TypeContext::new(), &Type::arrow(n(2), n(1))).is_err());
    }
}
