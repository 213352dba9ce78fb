//! Time-complexity polynomials: their types, canonical forms, safety
//! classification, substitution and numeric evaluation.
//!
//! Every `Poly` built through the smart constructors is kept in normal form:
//! beta-redexes and `cost`/`pot` projections of pairs are contracted eagerly
//! and base-type arithmetic is stored as a sum of monomials whose atoms are
//! variables, neutral applications or canonical `max` nodes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::scope::Scope;
use crate::syntax::{fresh_name, Label, Name, Type};

/// Base of a time-complexity type: a potential tier `T_L` or the cost type
/// `T`, which sits above every tier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Tier {
    Pot(Label),
    Cost,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tier::Pot(l) => write!(f, "T_{}", l),
            Tier::Cost => f.write_str("T"),
        }
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum TcType {
    Cost,
    Base(Label),
    /// A cost paired with a potential.
    Pair(Rc<TcType>, Rc<TcType>),
    /// Potential of a function: argument potential to a t.c. pair.
    Arrow(Rc<TcType>, Rc<TcType>),
}

impl TcType {
    pub fn pair(cost: TcType, pot: TcType) -> TcType {
        TcType::Pair(Rc::new(cost), Rc::new(pot))
    }

    pub fn arrow(arg: TcType, result: TcType) -> TcType {
        TcType::Arrow(Rc::new(arg), Rc::new(result))
    }

    pub fn tail(&self) -> Tier {
        match self {
            TcType::Cost => Tier::Cost,
            TcType::Base(l) => Tier::Pot(*l),
            TcType::Pair(_, p) => p.tail(),
            TcType::Arrow(_, r) => r.tail(),
        }
    }

    pub fn is_base(&self) -> bool {
        matches!(self, TcType::Cost | TcType::Base(_))
    }

    /// An application of something of this type hides its argument when the
    /// result tier lies strictly below the argument tier.
    pub fn shadows_argument(&self) -> bool {
        match self {
            TcType::Arrow(a, r) => r.tail() < a.tail(),
            _ => false,
        }
    }
}

impl fmt::Display for TcType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TcType::Cost => f.write_str("T"),
            TcType::Base(l) => write!(f, "T_{}", l),
            TcType::Pair(c, p) => write!(f, "({}, {})", c, p),
            TcType::Arrow(a, r) => {
                if matches!(**a, TcType::Arrow(..)) {
                    write!(f, "({}) -> {}", a, r)
                } else {
                    write!(f, "{} -> {}", a, r)
                }
            }
        }
    }
}

pub fn tc_subtype(a: &TcType, b: &TcType) -> bool {
    match (a, b) {
        (TcType::Base(x), TcType::Base(y)) => x <= y,
        (TcType::Base(_) | TcType::Cost, TcType::Cost) => true,
        (TcType::Pair(c, p), TcType::Pair(c2, p2)) => tc_subtype(c, c2) && tc_subtype(p, p2),
        (TcType::Arrow(a1, r1), TcType::Arrow(a2, r2)) => tc_subtype(a2, a1) && tc_subtype(r1, r2),
        _ => false,
    }
}

/// The t.c. type of an ATR type: a cost paired with its potential type.
pub fn tc_type_of(s: &Type) -> TcType {
    TcType::pair(TcType::Cost, pot_type_of(s))
}

pub fn pot_type_of(s: &Type) -> TcType {
    match s {
        Type::Base(l) => TcType::Base(*l),
        Type::Arrow(a, r) => TcType::arrow(pot_type_of(a), tc_type_of(r)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolyError {
    #[error("unbound polynomial variable `{0}`")]
    Unbound(Name),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("not safe: {0}")]
    NotSafe(String),
    #[error("recursion bound {0} does not close within the unfolding limit")]
    Unbounded(Name),
    #[error("cannot parse polynomial at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Poly {
    /// `0^n`; `Nat(0)` is the empty string literal.
    Nat(u64),
    Var(Name, TcType),
    Oracle(Name, TcType),
    Sum(Rc<[Poly]>),
    Prod(Rc<[Poly]>),
    Max(Rc<[Poly]>),
    Lam(Name, TcType, Rc<Poly>),
    App(Rc<Poly>, Rc<Poly>),
    Pair(Rc<Poly>, Rc<Poly>),
    Cost(Rc<Poly>),
    Pot(Rc<Poly>),
    /// A clocked recursion bounded by numeric unfolding.
    Rec(Rc<RecBound>),
}

/// Bound of a clocked recursion evaluated by unfolding it level by level:
/// `cost` and `pot` bound one level of the body over the parameters, the
/// potential `w` of the recursive result and the cost `next` of the
/// recursive call, and `args` bound the arguments of that call. The
/// parameters, `w` and `next` are bound inside the node.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct RecBound {
    pub label: Name,
    pub params: Vec<(Name, TcType)>,
    pub result: Label,
    pub seed_len: u64,
    pub w: Name,
    pub next: Name,
    pub cost: Poly,
    pub pot: Poly,
    pub args: Vec<Poly>,
}

/// Deepest unfolding a numeric recursion bound will follow.
pub const MAX_UNFOLDINGS: usize = 1 << 16;

/// Cost of the clock test `if down (c0 a) (c0 v1) then .. else ..` up to
/// its branch, for a first argument of length `v1`.
pub fn clock_test_cost(v1: u128) -> u128 {
    8 + 2 * v1 + v1.max(1)
}

impl RecBound {
    /// The t.c. type of the recursion: partial applications cost 1.
    pub fn tc_type(&self) -> TcType {
        let tail = TcType::pair(TcType::Cost, TcType::Base(self.result));
        self.params.iter().rev().fold(tail, |acc, (_, t)| TcType::pair(TcType::Cost, TcType::arrow(t.clone(), acc)))
    }

    fn binders(&self) -> impl Iterator<Item = (&Name, TcType)> {
        self.params
            .iter()
            .map(|(x, t)| (x, t.clone()))
            .chain([(&self.w, TcType::Base(self.result)), (&self.next, TcType::Cost)])
    }

    fn polys(&self) -> impl Iterator<Item = &Poly> {
        [&self.cost, &self.pot].into_iter().chain(self.args.iter())
    }

    fn map_polys(&self, f: impl Fn(&Poly) -> Poly) -> RecBound {
        RecBound {
            cost: f(&self.cost),
            pot: f(&self.pot),
            args: self.args.iter().map(&f).collect(),
            ..self.clone()
        }
    }
}

type Monomial = Vec<Poly>;
type Rep = BTreeMap<Monomial, u64>;

fn rep_of(p: &Poly) -> Rep {
    let mut r = Rep::new();
    match p {
        Poly::Nat(0) => {}
        Poly::Nat(n) => {
            r.insert(Vec::new(), *n);
        }
        Poly::Sum(xs) => {
            for x in xs.iter() {
                rep_add(&mut r, rep_of(x));
            }
        }
        Poly::Prod(xs) => {
            r.insert(Vec::new(), 1);
            for x in xs.iter() {
                r = rep_mul(&r, &rep_of(x));
            }
        }
        other => {
            r.insert(vec![other.clone()], 1);
        }
    }
    r
}

fn rep_add(into: &mut Rep, from: Rep) {
    for (m, c) in from {
        let e = into.entry(m).or_insert(0);
        *e = e.saturating_add(c);
    }
}

fn rep_mul(a: &Rep, b: &Rep) -> Rep {
    let mut out = Rep::new();
    for (ma, ca) in a {
        for (mb, cb) in b {
            let mut m = ma.clone();
            m.extend(mb.iter().cloned());
            m.sort();
            let e = out.entry(m).or_insert(0);
            *e = e.saturating_add(ca.saturating_mul(*cb));
        }
    }
    out
}

fn from_rep(r: Rep) -> Poly {
    let mut terms: Vec<Poly> = Vec::new();
    for (atoms, c) in r {
        if c == 0 {
            continue;
        }
        if atoms.is_empty() {
            terms.push(Poly::Nat(c));
        } else if c == 1 && atoms.len() == 1 {
            terms.push(atoms.into_iter().next().unwrap());
        } else {
            let mut fs = Vec::with_capacity(atoms.len() + 1);
            if c != 1 {
                fs.push(Poly::Nat(c));
            }
            fs.extend(atoms);
            terms.push(Poly::Prod(fs.into()));
        }
    }
    match terms.len() {
        0 => Poly::Nat(0),
        1 => terms.pop().unwrap(),
        _ => Poly::Sum(terms.into()),
    }
}

/// Syntactic pointwise dominance: sound but incomplete.
fn syn_le(a: &Poly, b: &Poly) -> bool {
    if a == b || matches!(a, Poly::Nat(0)) {
        return true;
    }
    match (a, b) {
        (Poly::Max(xs), _) => xs.iter().all(|x| syn_le(x, b)),
        (_, Poly::Max(ys)) => ys.iter().any(|y| syn_le(a, y)),
        _ => {
            let (ra, rb) = (rep_of(a), rep_of(b));
            ra.iter().all(|(m, c)| rb.get(m).is_some_and(|d| d >= c))
        }
    }
}

impl Poly {
    pub fn nat(n: u64) -> Poly {
        Poly::Nat(n)
    }

    pub fn zero() -> Poly {
        Poly::Nat(0)
    }

    pub fn var(name: &str, ty: TcType) -> Poly {
        Poly::Var(name.into(), ty)
    }

    pub fn oracle(name: &str, ty: TcType) -> Poly {
        Poly::Oracle(name.into(), ty)
    }

    pub fn add(a: Poly, b: Poly) -> Poly {
        Poly::sum([a, b])
    }

    pub fn sum(xs: impl IntoIterator<Item = Poly>) -> Poly {
        let mut r = Rep::new();
        for x in xs {
            rep_add(&mut r, rep_of(&x));
        }
        from_rep(r)
    }

    pub fn mul(a: Poly, b: Poly) -> Poly {
        from_rep(rep_mul(&rep_of(&a), &rep_of(&b)))
    }

    pub fn max(a: Poly, b: Poly) -> Poly {
        Poly::max_all([a, b])
    }

    pub fn max_all(xs: impl IntoIterator<Item = Poly>) -> Poly {
        let mut flat = Vec::new();
        for x in xs {
            match x {
                Poly::Max(ys) => flat.extend(ys.iter().cloned()),
                Poly::Nat(0) => {}
                other => flat.push(other),
            }
        }
        flat.sort();
        flat.dedup();
        let mut kept: Vec<Poly> = Vec::new();
        for x in flat {
            if kept.iter().any(|k| syn_le(&x, k)) {
                continue;
            }
            kept.retain(|k| !syn_le(k, &x));
            kept.push(x);
        }
        kept.sort();
        match kept.len() {
            0 => Poly::Nat(0),
            1 => kept.pop().unwrap(),
            _ => Poly::Max(kept.into()),
        }
    }

    pub fn lam(x: &str, ty: TcType, body: Poly) -> Poly {
        Poly::Lam(x.into(), ty, Rc::new(body))
    }

    /// Application with eager beta reduction.
    pub fn app(f: Poly, a: Poly) -> Poly {
        match f {
            Poly::Lam(x, _, body) => {
                let mut m = BTreeMap::new();
                m.insert(x, a);
                body.substitute(&m)
            }
            f => Poly::App(Rc::new(f), Rc::new(a)),
        }
    }

    pub fn apps(f: Poly, args: impl IntoIterator<Item = Poly>) -> Poly {
        args.into_iter().fold(f, Poly::app)
    }

    pub fn pair(c: Poly, p: Poly) -> Poly {
        Poly::Pair(Rc::new(c), Rc::new(p))
    }

    pub fn cost(p: Poly) -> Poly {
        match p {
            Poly::Pair(c, _) => (*c).clone(),
            p => Poly::Cost(Rc::new(p)),
        }
    }

    pub fn pot(p: Poly) -> Poly {
        match p {
            Poly::Pair(_, q) => (*q).clone(),
            p => Poly::Pot(Rc::new(p)),
        }
    }

    /// The least element of a t.c. type, used when erasing shadowed terms.
    pub fn zero_of(ty: &TcType) -> Poly {
        match ty {
            TcType::Cost | TcType::Base(_) => Poly::Nat(0),
            TcType::Pair(c, p) => Poly::pair(Poly::zero_of(c), Poly::zero_of(p)),
            TcType::Arrow(a, r) => Poly::lam("_", (**a).clone(), Poly::zero_of(r)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Poly::Nat(0))
    }

    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>) {
        match self {
            Poly::Nat(_) | Poly::Oracle(..) => {}
            Poly::Var(x, _) => {
                if !bound.contains(x) {
                    out.insert(x.clone());
                }
            }
            Poly::Sum(xs) | Poly::Prod(xs) | Poly::Max(xs) => {
                for x in xs.iter() {
                    x.collect_free(bound, out);
                }
            }
            Poly::Lam(x, _, b) => {
                bound.push(x.clone());
                b.collect_free(bound, out);
                bound.pop();
            }
            Poly::App(a, b) | Poly::Pair(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            Poly::Cost(a) | Poly::Pot(a) => a.collect_free(bound, out),
            Poly::Rec(rb) => {
                let n = bound.len();
                bound.extend(rb.binders().map(|(x, _)| x.clone()));
                rb.polys().for_each(|p| p.collect_free(bound, out));
                bound.truncate(n);
            }
        }
    }

    pub fn oracles(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.visit(&mut |p| {
            if let Poly::Oracle(a, _) = p {
                out.insert(a.clone());
            }
        });
        out
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Poly)) {
        f(self);
        match self {
            Poly::Nat(_) | Poly::Var(..) | Poly::Oracle(..) => {}
            Poly::Sum(xs) | Poly::Prod(xs) | Poly::Max(xs) => xs.iter().for_each(|x| x.visit(f)),
            Poly::Lam(_, _, b) | Poly::Cost(b) | Poly::Pot(b) => b.visit(f),
            Poly::Rec(rb) => rb.polys().for_each(|p| p.visit(f)),
            Poly::App(a, b) | Poly::Pair(a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    pub fn size(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }

    /// Capture-avoiding simultaneous substitution for free variables.
    pub fn substitute(&self, map: &BTreeMap<Name, Poly>) -> Poly {
        self.rewrite(map, &BTreeMap::new())
    }

    /// Replaces oracle symbols by polynomials, typically their t.c.
    pub fn substitute_oracles(&self, map: &BTreeMap<Name, Poly>) -> Poly {
        self.rewrite(&BTreeMap::new(), map)
    }

    /// Rebuilds the polynomial through the smart constructors.
    pub fn normalize(&self) -> Poly {
        self.rebuild(&BTreeMap::new(), &BTreeMap::new(), true)
    }

    fn rewrite(&self, vars: &BTreeMap<Name, Poly>, oracles: &BTreeMap<Name, Poly>) -> Poly {
        if vars.is_empty() && oracles.is_empty() {
            return self.clone();
        }
        self.rebuild(vars, oracles, false)
    }

    fn rebuild(&self, vars: &BTreeMap<Name, Poly>, oracles: &BTreeMap<Name, Poly>, force: bool) -> Poly {
        let go = |p: &Poly| -> Poly {
            if force {
                p.rebuild(vars, oracles, true)
            } else {
                p.rewrite(vars, oracles)
            }
        };
        match self {
            Poly::Nat(_) => self.clone(),
            Poly::Var(x, _) => vars.get(x).cloned().unwrap_or_else(|| self.clone()),
            Poly::Oracle(a, _) => oracles.get(a).cloned().unwrap_or_else(|| self.clone()),
            Poly::Sum(xs) => Poly::sum(xs.iter().map(go)),
            Poly::Prod(xs) => xs.iter().map(go).fold(Poly::Nat(1), Poly::mul),
            Poly::Max(xs) => Poly::max_all(xs.iter().map(go)),
            Poly::Lam(x, ty, body) => {
                let mut inner = vars.clone();
                inner.remove(x);
                let mut captured = BTreeSet::new();
                for v in inner.values().chain(oracles.values()) {
                    captured.extend(v.free_vars());
                }
                if captured.contains(x) {
                    let mut avoid = captured;
                    avoid.extend(body.free_vars());
                    avoid.extend(inner.keys().cloned());
                    let x2 = fresh_name(x, &avoid);
                    inner.insert(x.clone(), Poly::Var(x2.clone(), ty.clone()));
                    Poly::Lam(x2, ty.clone(), Rc::new(body.rebuild(&inner, oracles, force)))
                } else {
                    let b = if force { body.rebuild(&inner, oracles, true) } else { body.rewrite(&inner, oracles) };
                    Poly::Lam(x.clone(), ty.clone(), Rc::new(b))
                }
            }
            Poly::App(f, a) => Poly::app(go(f), go(a)),
            Poly::Pair(c, p) => Poly::pair(go(c), go(p)),
            Poly::Cost(p) => Poly::cost(go(p)),
            Poly::Pot(p) => Poly::pot(go(p)),
            Poly::Rec(rb) => {
                let mut inner = vars.clone();
                for (x, _) in rb.binders() {
                    inner.remove(x);
                }
                let mut captured = BTreeSet::new();
                for v in inner.values().chain(oracles.values()) {
                    captured.extend(v.free_vars());
                }
                let mut rb2 = (**rb).clone();
                let mut avoid = captured.clone();
                avoid.extend(self.free_vars());
                avoid.extend(inner.keys().cloned());
                let mut rename = |x: &mut Name, ty: TcType, inner: &mut BTreeMap<Name, Poly>| {
                    if captured.contains(x) {
                        let x2 = fresh_name(x, &avoid);
                        avoid.insert(x2.clone());
                        inner.insert(x.clone(), Poly::Var(x2.clone(), ty));
                        *x = x2;
                    }
                };
                for (x, ty) in rb2.params.iter_mut() {
                    rename(x, ty.clone(), &mut inner);
                }
                rename(&mut rb2.w, TcType::Base(rb.result), &mut inner);
                rename(&mut rb2.next, TcType::Cost, &mut inner);
                let sub = |p: &Poly| if force { p.rebuild(&inner, oracles, true) } else { p.rewrite(&inner, oracles) };
                let mapped = rb.map_polys(sub);
                Poly::Rec(Rc::new(RecBound { params: rb2.params, w: rb2.w, next: rb2.next, ..mapped }))
            }
        }
    }

    pub fn type_of(&self) -> Result<TcType, PolyError> {
        match self {
            Poly::Nat(0) => Ok(TcType::Base(Label::EPS)),
            Poly::Nat(_) => Ok(TcType::Base(Label::D)),
            Poly::Var(_, t) | Poly::Oracle(_, t) => Ok(t.clone()),
            Poly::Sum(xs) | Poly::Prod(xs) => {
                let tier = join_tiers(xs)?;
                Ok(match tier {
                    Tier::Cost => TcType::Cost,
                    Tier::Pot(l) => TcType::Base(l.computational_ceiling()),
                })
            }
            Poly::Max(xs) => Ok(match join_tiers(xs)? {
                Tier::Cost => TcType::Cost,
                Tier::Pot(l) => TcType::Base(l),
            }),
            Poly::Lam(_, t, b) => Ok(TcType::arrow(t.clone(), b.type_of()?)),
            Poly::App(f, _) => match f.type_of()? {
                TcType::Arrow(_, r) => Ok((*r).clone()),
                t => Err(PolyError::TypeMismatch(format!("applying a polynomial of type {}", t))),
            },
            Poly::Pair(c, p) => Ok(TcType::pair(c.type_of()?, p.type_of()?)),
            Poly::Cost(_) => Ok(TcType::Cost),
            Poly::Rec(rb) => Ok(rb.tc_type()),
            Poly::Pot(p) => match p.type_of()? {
                TcType::Pair(_, q) => Ok((*q).clone()),
                t => Err(PolyError::TypeMismatch(format!("pot of a polynomial of type {}", t))),
            },
        }
    }

    /// Replaces every shadowed argument by the zero of its type.
    pub fn erase_shadowed(&self) -> Poly {
        match self {
            Poly::Nat(_) | Poly::Var(..) | Poly::Oracle(..) => self.clone(),
            Poly::Sum(xs) => Poly::sum(xs.iter().map(Poly::erase_shadowed)),
            Poly::Prod(xs) => xs.iter().map(Poly::erase_shadowed).fold(Poly::Nat(1), Poly::mul),
            Poly::Max(xs) => Poly::max_all(xs.iter().map(Poly::erase_shadowed)),
            Poly::Lam(x, t, b) => Poly::Lam(x.clone(), t.clone(), Rc::new(b.erase_shadowed())),
            Poly::App(f, a) => {
                let ft = f.type_of();
                let a2 = match &ft {
                    Ok(t @ TcType::Arrow(arg, _)) if t.shadows_argument() => Poly::zero_of(arg),
                    _ => a.erase_shadowed(),
                };
                Poly::app(f.erase_shadowed(), a2)
            }
            Poly::Pair(c, p) => Poly::pair(c.erase_shadowed(), p.erase_shadowed()),
            Poly::Cost(p) => Poly::cost(p.erase_shadowed()),
            Poly::Pot(p) => Poly::pot(p.erase_shadowed()),
            Poly::Rec(rb) => Poly::Rec(Rc::new(rb.map_polys(Poly::erase_shadowed))),
        }
    }

    /// Free-variable occurrences outside shadowed positions, with types.
    pub fn unshadowed_vars(&self) -> Vec<(Name, TcType)> {
        let mut out = Vec::new();
        self.collect_unshadowed(&mut Vec::new(), &mut out);
        out
    }

    fn collect_unshadowed(&self, bound: &mut Vec<Name>, out: &mut Vec<(Name, TcType)>) {
        match self {
            Poly::Nat(_) | Poly::Oracle(..) => {}
            Poly::Var(x, t) => {
                if !bound.contains(x) {
                    out.push((x.clone(), t.clone()));
                }
            }
            Poly::Sum(xs) | Poly::Prod(xs) | Poly::Max(xs) => {
                xs.iter().for_each(|x| x.collect_unshadowed(bound, out))
            }
            Poly::Lam(x, _, b) => {
                bound.push(x.clone());
                b.collect_unshadowed(bound, out);
                bound.pop();
            }
            Poly::App(f, a) => {
                f.collect_unshadowed(bound, out);
                if !f.type_of().is_ok_and(|t| t.shadows_argument()) {
                    a.collect_unshadowed(bound, out);
                }
            }
            Poly::Pair(a, b) => {
                a.collect_unshadowed(bound, out);
                b.collect_unshadowed(bound, out);
            }
            Poly::Cost(a) | Poly::Pot(a) => a.collect_unshadowed(bound, out),
            Poly::Rec(rb) => {
                let n = bound.len();
                bound.extend(rb.binders().map(|(x, _)| x.clone()));
                rb.polys().for_each(|p| p.collect_unshadowed(bound, out));
                bound.truncate(n);
            }
        }
    }

    /// Head symbol and arguments of `pot(..pot(v q1)..) qk` chains.
    fn potential_spine(&self) -> Option<(&Poly, Vec<&Poly>)> {
        match self {
            Poly::Var(..) | Poly::Oracle(..) => Some((self, Vec::new())),
            Poly::Pot(inner) => match &**inner {
                Poly::App(f, q) => {
                    let (h, mut args) = f.potential_spine()?;
                    args.push(q);
                    Some((h, args))
                }
                _ => None,
            },
            _ => None,
        }
    }

    fn application_spine(&self) -> Option<(&Poly, Vec<&Poly>)> {
        match self {
            Poly::App(f, q) => {
                let (h, mut args) = f.potential_spine()?;
                args.push(q);
                Some((h, args))
            }
            _ => None,
        }
    }

    /// Recognizes the normal-form shapes of closed-over-variables t.c.
    /// polynomials (literals, potential/cost/application spines over a
    /// variable or oracle, arithmetic, pairs and abstractions).
    pub fn has_normal_shape(&self) -> bool {
        let spine_ok = |(_, args): (&Poly, Vec<&Poly>)| args.iter().all(|q| q.has_normal_shape());
        match self {
            Poly::Nat(_) | Poly::Var(..) | Poly::Oracle(..) => true,
            Poly::Sum(xs) | Poly::Prod(xs) | Poly::Max(xs) => xs.iter().all(Poly::has_normal_shape),
            Poly::Pair(a, b) => a.has_normal_shape() && b.has_normal_shape(),
            Poly::Lam(_, _, b) => b.has_normal_shape(),
            Poly::Pot(_) => self.potential_spine().is_some_and(spine_ok),
            Poly::Rec(_) => false,
            Poly::Cost(inner) => inner
                .potential_spine()
                .or_else(|| inner.application_spine())
                .is_some_and(spine_ok),
            Poly::App(..) => self.application_spine().is_some_and(spine_ok),
        }
    }
}

fn join_tiers(xs: &[Poly]) -> Result<Tier, PolyError> {
    let mut tier = Tier::Pot(Label::EPS);
    for x in xs {
        let t = x.type_of()?;
        if !t.is_base() {
            return Err(PolyError::TypeMismatch(format!("arithmetic on type {}", t)));
        }
        tier = tier.max(t.tail());
    }
    Ok(tier)
}

// ---------------------------------------------------------------- safety

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum SafetyClass {
    Strict,
    Chary,
    Safe { q: Poly, r: Poly },
    Unsafe(String),
}

impl SafetyClass {
    pub fn is_safe(&self) -> bool {
        !matches!(self, SafetyClass::Unsafe(_))
    }
}

/// `q + r` at a computational tier, `q max r` at an oracular one.
pub fn safe_combine(q: Poly, r: Poly, b: Label) -> Poly {
    if b.is_oracular() {
        Poly::max(q, r)
    } else {
        Poly::add(q, r)
    }
}

pub fn is_strict(p: &Poly, b: Label) -> bool {
    let Ok(ty) = p.type_of() else { return false };
    ty.tail() <= Tier::Pot(b) && p.unshadowed_vars().iter().all(|(_, t)| t.tail() < Tier::Pot(b))
}

pub fn is_chary(p: &Poly, b: Label) -> bool {
    let args: &[Poly] = match p {
        Poly::Nat(0) => return true,
        Poly::Max(xs) => xs,
        other => std::slice::from_ref(other),
    };
    args.iter().all(|x| {
        x.type_of().is_ok_and(|t| t.is_base() && t.tail() <= Tier::Pot(b))
            && x.potential_spine().is_some_and(|(_, qs)| qs.iter().all(|q| is_strict(q, b)))
    })
}

fn fresh_for(p: &Poly, base: &str) -> Name {
    fresh_name(base, &p.free_vars())
}

/// A strict/chary pair `(q, r)` with `p <= q (+)_b r` pointwise, built from
/// the syntax of a base-type potential.
pub fn safe_witness(p: &Poly, b: Label) -> Option<(Poly, Poly)> {
    if is_strict(p, b) {
        return Some((p.clone(), Poly::zero()));
    }
    if is_chary(p, b) {
        return Some((Poly::zero(), p.clone()));
    }
    match p {
        Poly::Max(xs) => {
            let ws = xs.iter().map(|x| safe_witness(x, b)).collect::<Option<Vec<_>>>()?;
            let (qs, rs): (Vec<Poly>, Vec<Poly>) = ws.into_iter().unzip();
            let q = if b.is_oracular() { Poly::max_all(qs) } else { Poly::sum(qs) };
            Some((q, Poly::max_all(rs)))
        }
        Poly::Sum(xs) if b.is_computational() => {
            let mut q = Vec::new();
            let mut r = Poly::zero();
            for x in xs.iter() {
                let (qx, rx) = safe_witness(x, b)?;
                q.push(qx);
                if !rx.is_zero() {
                    if !r.is_zero() {
                        return None;
                    }
                    r = rx;
                }
            }
            Some((Poly::sum(q), r))
        }
        _ => None,
    }
}

pub fn classify_safety(p: &Poly, b: Label) -> SafetyClass {
    let mut numeric = false;
    p.visit(&mut |q| numeric |= matches!(q, Poly::Rec(_)));
    if numeric {
        return SafetyClass::Unsafe(format!("{} contains a numerically unfolded recursion", p));
    }
    let ty = match p.type_of() {
        Ok(t) => t,
        Err(e) => return SafetyClass::Unsafe(e.to_string()),
    };
    match ty {
        TcType::Pair(..) => classify_safety(&Poly::pot(p.clone()), b),
        TcType::Arrow(arg, _) => {
            let v = fresh_for(p, "v");
            classify_safety(&Poly::pot(Poly::app(p.clone(), Poly::Var(v, (*arg).clone()))), b)
        }
        TcType::Cost => SafetyClass::Unsafe(format!("{} has cost type", p)),
        TcType::Base(_) => {
            if is_strict(p, b) {
                return SafetyClass::Strict;
            }
            if is_chary(p, b) {
                return SafetyClass::Chary;
            }
            match safe_witness(p, b) {
                Some((q, r)) if safe_combine(q.clone(), r.clone(), b) == *p => SafetyClass::Safe { q, r },
                Some(_) => SafetyClass::Unsafe(format!("{} is only bounded by a T_{}-safe polynomial", p, b)),
                None => SafetyClass::Unsafe(format!("{} is not T_{}-safe", p, b)),
            }
        }
    }
}

/// A `b`-safe polynomial dominating `p`, at any potential or t.c. type.
pub fn safe_bound(p: &Poly, b: Label) -> Result<Poly, PolyError> {
    match p.type_of()? {
        TcType::Pair(..) => Ok(Poly::pair(Poly::cost(p.clone()), safe_bound(&Poly::pot(p.clone()), b)?)),
        TcType::Arrow(arg, _) => {
            let v = fresh_for(p, "v");
            let applied = Poly::app(p.clone(), Poly::Var(v.clone(), (*arg).clone()));
            let body = Poly::pair(Poly::cost(applied.clone()), safe_bound(&Poly::pot(applied), b)?);
            Ok(Poly::Lam(v, (*arg).clone(), Rc::new(body)))
        }
        TcType::Cost => Err(PolyError::NotSafe(format!("{} has cost type", p))),
        TcType::Base(_) => safe_witness(p, b)
            .map(|(q, r)| safe_combine(q, r, b))
            .ok_or_else(|| PolyError::NotSafe(format!("{} at T_{}", p, b))),
    }
}

/// A `b`-safe polynomial above `p max p2`. At higher types the join is taken
/// pointwise and costs are maxed.
pub fn safe_join(p: &Poly, p2: &Poly, b: Label) -> Result<Poly, PolyError> {
    let ty = p.type_of()?;
    match ty {
        TcType::Pair(..) => Ok(Poly::pair(
            Poly::max(Poly::cost(p.clone()), Poly::cost(p2.clone())),
            safe_join(&Poly::pot(p.clone()), &Poly::pot(p2.clone()), b)?,
        )),
        TcType::Arrow(arg, _) => {
            let mut avoid = p.free_vars();
            avoid.extend(p2.free_vars());
            let v = fresh_name("v", &avoid);
            let x = Poly::Var(v.clone(), (*arg).clone());
            let body = safe_join(&Poly::app(p.clone(), x.clone()), &Poly::app(p2.clone(), x), b)?;
            Ok(Poly::Lam(v, (*arg).clone(), Rc::new(body)))
        }
        TcType::Cost => Ok(Poly::max(p.clone(), p2.clone())),
        TcType::Base(_) => {
            let not_safe = |x: &Poly| PolyError::NotSafe(format!("{} at T_{}", x, b));
            let (q1, r1) = safe_witness(p, b).ok_or_else(|| not_safe(p))?;
            let (q2, r2) = safe_witness(p2, b).ok_or_else(|| not_safe(p2))?;
            Ok(if b.is_oracular() {
                Poly::max_all([q1, q2, r1, r2])
            } else {
                Poly::add(Poly::add(q1, q2), Poly::max(r1, r2))
            })
        }
    }
}

// ------------------------------------------------------------ evaluation

pub type PolyFn = Rc<dyn Fn(PolyValue) -> Result<PolyValue, PolyError>>;

#[derive(Clone)]
pub enum PolyValue {
    Nat(u128),
    Pair(Rc<PolyValue>, Rc<PolyValue>),
    Fun(PolyFn),
}

impl fmt::Debug for PolyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolyValue::Nat(n) => write!(f, "{}", n),
            PolyValue::Pair(a, b) => write!(f, "({:?}, {:?})", a, b),
            PolyValue::Fun(_) => f.write_str("<fn>"),
        }
    }
}

impl PolyValue {
    pub fn pair(c: PolyValue, p: PolyValue) -> PolyValue {
        PolyValue::Pair(Rc::new(c), Rc::new(p))
    }

    pub fn fun(f: impl Fn(PolyValue) -> Result<PolyValue, PolyError> + 'static) -> PolyValue {
        PolyValue::Fun(Rc::new(f))
    }

    pub fn as_nat(&self) -> Result<u128, PolyError> {
        match self {
            PolyValue::Nat(n) => Ok(*n),
            other => Err(PolyError::TypeMismatch(format!("expected a number, got {:?}", other))),
        }
    }

    pub fn cost(&self) -> Result<PolyValue, PolyError> {
        match self {
            PolyValue::Pair(c, _) => Ok((**c).clone()),
            other => Err(PolyError::TypeMismatch(format!("cost of {:?}", other))),
        }
    }

    pub fn pot(&self) -> Result<PolyValue, PolyError> {
        match self {
            PolyValue::Pair(_, p) => Ok((**p).clone()),
            other => Err(PolyError::TypeMismatch(format!("pot of {:?}", other))),
        }
    }

    pub fn apply(&self, arg: PolyValue) -> Result<PolyValue, PolyError> {
        match self {
            PolyValue::Fun(f) => f(arg),
            other => Err(PolyError::TypeMismatch(format!("applying {:?}", other))),
        }
    }
}

/// Values for free variables and oracle symbols, looked up by name.
#[derive(Clone, Default, Debug)]
pub struct Valuation {
    pub vars: BTreeMap<Name, PolyValue>,
    pub oracles: BTreeMap<Name, PolyValue>,
}

impl Valuation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, x: &str, v: PolyValue) -> Self {
        self.vars.insert(x.into(), v);
        self
    }

    pub fn with_nat(self, x: &str, n: u128) -> Self {
        self.with(x, PolyValue::Nat(n))
    }

    pub fn with_oracle(mut self, a: &str, v: PolyValue) -> Self {
        self.oracles.insert(a.into(), v);
        self
    }
}

/// Evaluates after erasing shadowed subterms.
pub fn eval_poly(p: &Poly, valuation: &Valuation) -> Result<PolyValue, PolyError> {
    eval_erased(&p.erase_shadowed(), valuation)
}

/// Evaluates a polynomial whose shadowed subterms were already erased.
pub fn eval_erased(p: &Poly, valuation: &Valuation) -> Result<PolyValue, PolyError> {
    let mut env = Scope::new();
    for (x, v) in &valuation.vars {
        env = env.extend(x.clone(), v.clone());
    }
    eval_in(p, &env, &Rc::new(valuation.oracles.clone()))
}

pub fn eval_nat(p: &Poly, valuation: &Valuation) -> Result<u128, PolyError> {
    eval_poly(p, valuation)?.as_nat()
}

fn eval_in(p: &Poly, env: &Scope<PolyValue>, oracles: &Rc<BTreeMap<Name, PolyValue>>) -> Result<PolyValue, PolyError> {
    let nat = |q: &Poly| eval_in(q, env, oracles)?.as_nat();
    Ok(match p {
        Poly::Nat(n) => PolyValue::Nat(*n as u128),
        Poly::Var(x, _) => env.get(x).cloned().ok_or_else(|| PolyError::Unbound(x.clone()))?,
        Poly::Oracle(a, _) => oracles.get(a).cloned().ok_or_else(|| PolyError::Unbound(a.clone()))?,
        Poly::Sum(xs) => {
            let mut acc: u128 = 0;
            for x in xs.iter() {
                acc = acc.saturating_add(nat(x)?);
            }
            PolyValue::Nat(acc)
        }
        Poly::Prod(xs) => {
            let mut acc: u128 = 1;
            for x in xs.iter() {
                acc = acc.saturating_mul(nat(x)?);
            }
            PolyValue::Nat(acc)
        }
        Poly::Max(xs) => {
            let mut acc: u128 = 0;
            for x in xs.iter() {
                acc = acc.max(nat(x)?);
            }
            PolyValue::Nat(acc)
        }
        Poly::Lam(x, _, body) => {
            let (x, body, env, oracles) = (x.clone(), body.clone(), env.clone(), oracles.clone());
            PolyValue::fun(move |v| eval_in(&body, &env.extend(x.clone(), v), &oracles))
        }
        Poly::App(f, a) => eval_in(f, env, oracles)?.apply(eval_in(a, env, oracles)?)?,
        Poly::Pair(c, q) => PolyValue::pair(eval_in(c, env, oracles)?, eval_in(q, env, oracles)?),
        Poly::Cost(q) => eval_in(q, env, oracles)?.cost()?,
        Poly::Rec(rb) => rec_value(rb.clone(), env.clone(), oracles.clone(), Vec::new()),
        Poly::Pot(q) => eval_in(q, env, oracles)?.pot()?,
    })
}

/// The curried t.c. of a numeric recursion bound: partial applications
/// cost 1 and the final one runs the unfolding.
fn rec_value(
    rb: Rc<RecBound>,
    env: Scope<PolyValue>,
    oracles: Rc<BTreeMap<Name, PolyValue>>,
    got: Vec<u128>,
) -> PolyValue {
    PolyValue::pair(
        PolyValue::Nat(1),
        PolyValue::fun(move |v| {
            let mut got = got.clone();
            got.push(v.as_nat()?);
            if got.len() == rb.params.len() {
                rec_unfold(&rb, &env, &oracles, got)
            } else {
                Ok(rec_value(rb.clone(), env.clone(), oracles.clone(), got))
            }
        }),
    )
}

/// Follows the argument bounds until the clock test must fail, then sums the
/// per-level costs bottom-up, feeding each level's potential to the one above.
fn rec_unfold(
    rb: &RecBound,
    env: &Scope<PolyValue>,
    oracles: &Rc<BTreeMap<Name, PolyValue>>,
    entry: Vec<u128>,
) -> Result<PolyValue, PolyError> {
    let level = |vals: &[u128], w: u128, next: u128| {
        let mut e = env.clone();
        for ((x, _), v) in rb.params.iter().zip(vals) {
            e = e.extend(x.clone(), PolyValue::Nat(*v));
        }
        e.extend(rb.w.clone(), PolyValue::Nat(w)).extend(rb.next.clone(), PolyValue::Nat(next))
    };
    let mut levels = vec![entry];
    loop {
        let j = levels.len() - 1;
        if rb.seed_len as u128 + j as u128 > levels[j][0] {
            break;
        }
        if j >= MAX_UNFOLDINGS {
            return Err(PolyError::Unbounded(rb.label.clone()));
        }
        let e = level(&levels[j], 0, 0);
        let next = rb.args.iter().map(|a| eval_in(a, &e, oracles)?.as_nat()).collect::<Result<Vec<_>, _>>()?;
        levels.push(next);
    }
    let depth = levels.len() - 1;
    let mut cost = clock_test_cost(levels[depth][0]) + 1;
    let mut w = 0u128;
    for vals in levels[..depth].iter().rev() {
        let e = level(vals, w, cost);
        let c = eval_in(&rb.cost, &e, oracles)?.as_nat()?;
        w = eval_in(&rb.pot, &e, oracles)?.as_nat()?;
        cost = clock_test_cost(vals[0]).saturating_add(c);
    }
    Ok(PolyValue::pair(PolyValue::Nat(cost), PolyValue::Nat(w)))
}

// ------------------------------------------------------------- rendering

const PREC_SUM: u8 = 1;
const PREC_PROD: u8 = 2;
const PREC_ATOM: u8 = 3;

impl Poly {
    fn prec(&self) -> u8 {
        match self {
            Poly::Sum(_) => PREC_SUM,
            Poly::Prod(_) => PREC_PROD,
            Poly::Lam(..) => 0,
            _ => PREC_ATOM,
        }
    }

    fn fmt_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.prec() < min {
            f.write_str("(")?;
            self.fmt_at(f, 0)?;
            return f.write_str(")");
        }
        let list = |f: &mut fmt::Formatter<'_>, xs: &[Poly], sep: &str, at: u8| -> fmt::Result {
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    f.write_str(sep)?;
                }
                x.fmt_at(f, at)?;
            }
            Ok(())
        };
        match self {
            Poly::Nat(n) => write!(f, "{}", n),
            Poly::Var(x, _) | Poly::Oracle(x, _) => f.write_str(x),
            Poly::Sum(xs) => list(f, xs, " + ", PREC_PROD),
            Poly::Prod(xs) => list(f, xs, " * ", PREC_ATOM),
            Poly::Max(xs) => {
                f.write_str("max(")?;
                list(f, xs, ", ", 0)?;
                f.write_str(")")
            }
            Poly::Lam(x, t, b) => {
                write!(f, "fn {}: {} => ", x, t)?;
                b.fmt_at(f, 0)
            }
            Poly::App(g, a) => {
                g.fmt_at(f, PREC_ATOM)?;
                f.write_str("(")?;
                a.fmt_at(f, 0)?;
                f.write_str(")")
            }
            Poly::Pair(c, p) => {
                f.write_str("(")?;
                c.fmt_at(f, 0)?;
                f.write_str(", ")?;
                p.fmt_at(f, 0)?;
                f.write_str(")")
            }
            Poly::Cost(p) => {
                f.write_str("cost(")?;
                p.fmt_at(f, 0)?;
                f.write_str(")")
            }
            Poly::Pot(p) => {
                f.write_str("pot(")?;
                p.fmt_at(f, 0)?;
                f.write_str(")")
            }
            Poly::Rec(rb) => {
                write!(f, "unfold[{}](", rb.label)?;
                let fv: Vec<Name> = self.free_vars().into_iter().collect();
                f.write_str(&fv.join(", "))?;
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(f, 0)
    }
}

// --------------------------------------------------------------- parsing

/// Types of the identifiers a polynomial text may mention.
#[derive(Clone, Default, Debug)]
pub struct PolyContext {
    pub vars: BTreeMap<Name, TcType>,
    pub oracles: BTreeMap<Name, TcType>,
}

impl PolyContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_var(mut self, x: &str, t: TcType) -> Self {
        self.vars.insert(x.into(), t);
        self
    }

    pub fn with_oracle(mut self, a: &str, t: TcType) -> Self {
        self.oracles.insert(a.into(), t);
        self
    }
}

/// Parses the textual form produced by `Display`, minus abstractions:
/// numbers, identifiers, `+`, `*`, `max(..)`, `cost(..)`, `pot(..)`, pairs
/// and application written `f(a)`.
pub fn parse_poly(text: &str, ctx: &PolyContext) -> Result<Poly, PolyError> {
    let mut p = PolyParser { src: text.as_bytes(), pos: 0, ctx };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("trailing input"));
    }
    Ok(e)
}

struct PolyParser<'a> {
    src: &'a [u8],
    pos: usize,
    ctx: &'a PolyContext,
}

impl PolyParser<'_> {
    fn error(&self, message: &str) -> PolyError {
        PolyError::Parse { offset: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), PolyError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Poly, PolyError> {
        let mut terms = vec![self.term()?];
        while self.eat(b'+') {
            terms.push(self.term()?);
        }
        Ok(Poly::sum(terms))
    }

    fn term(&mut self) -> Result<Poly, PolyError> {
        let mut acc = self.factor()?;
        while self.eat(b'*') {
            acc = Poly::mul(acc, self.factor()?);
        }
        Ok(acc)
    }

    fn ident(&mut self) -> Option<String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            let ok = c.is_ascii_alphabetic() || c == b'_' || (self.pos > start && (c.is_ascii_digit() || c == b'\''));
            if !ok {
                break;
            }
            self.pos += 1;
        }
        (self.pos > start).then(|| String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn factor(&mut self) -> Result<Poly, PolyError> {
        self.skip_ws();
        let Some(&c) = self.src.get(self.pos) else {
            return Err(self.error("unexpected end of input"));
        };
        if c.is_ascii_digit() {
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            return digits.parse().map(Poly::Nat).map_err(|_| self.error("number out of range"));
        }
        if self.eat(b'(') {
            let first = self.expr()?;
            if self.eat(b',') {
                let second = self.expr()?;
                self.expect(b')')?;
                return Ok(Poly::pair(first, second));
            }
            self.expect(b')')?;
            return Ok(first);
        }
        let Some(name) = self.ident() else {
            return Err(self.error("expected a polynomial"));
        };
        match name.as_str() {
            "max" => {
                self.expect(b'(')?;
                let mut args = vec![self.expr()?];
                while self.eat(b',') {
                    args.push(self.expr()?);
                }
                self.expect(b')')?;
                Ok(Poly::max_all(args))
            }
            "cost" | "pot" => {
                self.expect(b'(')?;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(if name == "cost" { Poly::cost(e) } else { Poly::pot(e) })
            }
            _ => {
                let mut head = if let Some(t) = self.ctx.vars.get(name.as_str()) {
                    Poly::Var(name.as_str().into(), t.clone())
                } else if let Some(t) = self.ctx.oracles.get(name.as_str()) {
                    Poly::Oracle(name.as_str().into(), t.clone())
                } else {
                    return Err(self.error(&format!("unknown identifier `{}`", name)));
                };
                while self.eat(b'(') {
                    let a = self.expr()?;
                    self.expect(b')')?;
                    head = Poly::app(head, a);
                }
                Ok(head)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base(l: u32) -> TcType {
        TcType::Base(Label(l))
    }

    fn v(x: &str, l: u32) -> Poly {
        Poly::var(x, base(l))
    }

    fn n(k: u64) -> Poly {
        Poly::nat(k)
    }

    #[test]
    fn tc_types_of_atr_types() {
        assert_eq!(tc_type_of(&Type::Base(Label::D)), TcType::pair(TcType::Cost, base(1)));
        let f = Type::arrow(Type::Base(Label::EPS), Type::Base(Label::D));
        assert_eq!(pot_type_of(&f), TcType::arrow(base(0), TcType::pair(TcType::Cost, base(1))));
    }

    #[test]
    fn beta_and_projection() {
        let inc = Poly::lam("x", base(1), Poly::add(v("x", 1), n(1)));
        assert_eq!(Poly::app(inc, v("y", 1)), Poly::add(v("y", 1), n(1)));
        let pr = Poly::lam("v", base(1), Poly::pair(n(1), Poly::add(v("v", 1), n(1))));
        assert_eq!(Poly::pot(Poly::app(pr, n(3))), n(4));
    }

    #[test]
    fn nested_potential_spine_is_left_alone() {
        let at = TcType::arrow(base(0), TcType::pair(TcType::Cost, TcType::arrow(base(0), TcType::pair(TcType::Cost, base(0)))));
        let a = Poly::oracle("alpha", at);
        let p = Poly::pot(Poly::app(Poly::pot(Poly::app(a, v("q1", 0))), v("q2", 0)));
        assert!(matches!(p, Poly::Pot(_)));
        assert_eq!(p.normalize(), p);
        assert!(p.has_normal_shape());
        assert_eq!(p.to_string(), "pot(pot(alpha(q1))(q2))");
    }

    #[test]
    fn max_simplifications() {
        let x = v("x", 1);
        assert_eq!(Poly::max(x.clone(), x.clone()), x);
        assert_eq!(Poly::max(x.clone(), Poly::add(x.clone(), n(1))), Poly::add(x.clone(), n(1)));
        assert_eq!(Poly::max(n(0), x.clone()), x);
        assert_eq!(Poly::max(n(2), n(5)), n(5));
    }

    #[test]
    fn arithmetic_canonical_forms() {
        let (x, y) = (v("x", 1), v("y", 1));
        let a = Poly::mul(Poly::add(x.clone(), n(1)), Poly::add(y.clone(), n(2)));
        let b = Poly::sum([Poly::mul(x.clone(), y.clone()), Poly::mul(n(2), x.clone()), y.clone(), n(2)]);
        assert_eq!(a, b);
        assert_eq!(Poly::add(x.clone(), x.clone()), Poly::mul(n(2), x));
    }

    #[test]
    fn substitution_example() {
        let mut m = BTreeMap::new();
        m.insert(Name::from("v"), n(2));
        assert_eq!(Poly::add(v("v", 1), n(1)).substitute(&m), n(3));
    }

    #[test]
    fn substitution_avoids_capture() {
        let body = Poly::lam("y", base(1), Poly::add(v("x", 1), v("y", 1)));
        let mut m = BTreeMap::new();
        m.insert(Name::from("x"), v("y", 1));
        let out = body.substitute(&m);
        let Poly::Lam(y2, _, b) = &out else { panic!("{}", out) };
        assert_ne!(&**y2, "y");
        assert_eq!(**b, Poly::add(v("y", 1), Poly::Var(y2.clone(), base(1))));
    }

    #[test]
    fn zero_and_variables_are_chary() {
        assert_eq!(classify_safety(&n(0), Label::D), SafetyClass::Strict);
        assert!(is_chary(&n(0), Label::D));
        assert!(is_chary(&v("w", 1), Label::D));
        assert_eq!(classify_safety(&v("w", 1), Label::D), SafetyClass::Chary);
    }

    #[test]
    fn cost_variable_must_be_shadowed() {
        let c = Poly::var("xc", TcType::Cost);
        let p = Poly::add(v("w", 1), c.clone());
        assert!(!classify_safety(&p, Label::D).is_safe());
        // Inside a shadowing application the cost variable is harmless.
        let fty = TcType::arrow(TcType::Cost, TcType::pair(TcType::Cost, base(1)));
        let g = Poly::var("g", fty);
        let q = Poly::pot(Poly::app(g, c));
        assert!(q.unshadowed_vars().iter().all(|(x, _)| &**x == "g"));
    }

    #[test]
    fn safe_decompositions() {
        let (x, w) = (v("x", 0), v("w", 1));
        let p = Poly::sum([Poly::mul(x.clone(), x.clone()), n(3), w.clone()]);
        match classify_safety(&p, Label::D) {
            SafetyClass::Safe { q, r } => {
                assert_eq!(r, w);
                assert_eq!(q, Poly::add(Poly::mul(x.clone(), x.clone()), n(3)));
            }
            other => panic!("{:?}", other),
        }
        assert!(!classify_safety(&Poly::mul(n(2), w.clone()), Label::D).is_safe());
        assert!(!classify_safety(&Poly::mul(w.clone(), w.clone()), Label::D).is_safe());
        // At an oracular tier only max may combine the parts.
        let (y, u) = (v("y", 1), v("u", 2));
        assert!(classify_safety(&Poly::max(y.clone(), u.clone()), Label::BD).is_safe());
        assert!(!classify_safety(&Poly::add(y, u), Label::BD).is_safe());
    }

    #[test]
    fn higher_type_safety_applies_a_fresh_variable() {
        let f = Poly::lam("v", base(1), Poly::pair(n(1), Poly::add(v("v", 1), v("x", 0))));
        assert!(classify_safety(&f, Label::D).is_safe());
        let g = Poly::lam("v", base(1), Poly::pair(n(1), Poly::mul(v("v", 1), v("v", 1))));
        assert!(!classify_safety(&g, Label::D).is_safe());
    }

    #[test]
    fn join_examples() {
        let (q, r, q2, r2) = (v("a", 0), v("r", 1), v("b", 0), v("s", 1));
        let j = safe_join(&Poly::add(q.clone(), r.clone()), &Poly::add(q2.clone(), r2.clone()), Label::D).unwrap();
        assert_eq!(j, Poly::sum([q.clone(), q2.clone(), Poly::max(r.clone(), r2.clone())]));
        let (q, r, q2, r2) = (v("a", 1), v("r", 2), v("b", 1), v("s", 2));
        let j = safe_join(&Poly::max(q.clone(), r.clone()), &Poly::max(q2.clone(), r2.clone()), Label::BD).unwrap();
        assert_eq!(j, Poly::max_all([q, q2, r, r2]));
    }

    #[test]
    fn erased_evaluation_of_shadowed_arguments() {
        let fty = TcType::arrow(base(2), TcType::pair(TcType::Cost, base(1)));
        let g = Poly::var("g", fty);
        let p = Poly::pot(Poly::app(g, v("big", 2)));
        let val = Valuation::new()
            .with("g", PolyValue::fun(|a| Ok(PolyValue::pair(PolyValue::Nat(1), a))))
            .with_nat("big", 100);
        assert_eq!(eval_nat(&p, &val).unwrap(), 0);
    }

    #[test]
    fn parse_renders_round_trip() {
        let ctx = PolyContext::new().with_var("n1", base(0)).with_var("n2", base(0));
        let p = parse_poly("2*n1*n1 + max(n2, n1+1) + 3", &ctx).unwrap();
        assert_eq!(parse_poly(&p.to_string(), &ctx).unwrap(), p);
        assert!(parse_poly("n3 + 1", &ctx).is_err());
        assert!(parse_poly("n1 +", &ctx).is_err());
    }

    #[test]
    fn oracle_application_parses() {
        let aty = TcType::arrow(base(0), TcType::pair(TcType::Cost, base(0)));
        let ctx = PolyContext::new().with_var("n", base(0)).with_oracle("alpha", aty);
        let p = parse_poly("pot(alpha(n + 1))", &ctx).unwrap();
        assert_eq!(p.to_string(), "pot(alpha(1 + n))");
        let val = Valuation::new().with_nat("n", 4).with_oracle(
            "alpha",
            PolyValue::fun(|a| Ok(PolyValue::pair(PolyValue::Nat(1), PolyValue::Nat(a.as_nat()? * 2)))),
        );
        assert_eq!(eval_nat(&p, &val).unwrap(), 10);
    }

    // Random base-type polynomials over variables x0..x3 with tiers 0..3.

    fn arb_base_poly() -> impl Strategy<Value = Poly> {
        let leaf = prop_oneof![(0u64..4).prop_map(Poly::Nat), (0u32..4).prop_map(|i| v(&format!("x{}", i), i)),];
        leaf.prop_recursive(4, 24, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Poly::add(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Poly::mul(a, b)),
                (inner.clone(), inner).prop_map(|(a, b)| Poly::max(a, b)),
            ]
        })
    }

    fn arb_type() -> impl Strategy<Value = Type> {
        let leaf = (0u32..5).prop_map(|l| Type::Base(Label(l)));
        leaf.prop_recursive(3, 12, 2, |inner| (inner.clone(), inner).prop_map(|(a, r)| Type::arrow(a, r)))
    }

    fn valuation(ns: &[u128]) -> Valuation {
        ns.iter().enumerate().fold(Valuation::new(), |val, (i, k)| val.with_nat(&format!("x{}", i), *k))
    }

    fn strict_at(b: u32) -> impl Strategy<Value = Poly> {
        let leaf = prop_oneof![(0u64..4).prop_map(Poly::Nat), (0..b).prop_map(|i| v(&format!("x{}", i), i)),];
        leaf.prop_recursive(3, 12, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Poly::add(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Poly::mul(a, b)),
                (inner.clone(), inner).prop_map(|(a, b)| Poly::max(a, b)),
            ]
        })
    }

    fn safe_at(b: u32) -> impl Strategy<Value = Poly> {
        let chary = proptest::collection::vec(0usize..3, 0..3)
            .prop_map(move |ws| Poly::max_all(ws.into_iter().map(|i| v(&format!("w{}", i), b))));
        (strict_at(b), chary).prop_map(move |(q, r)| safe_combine(q, r, Label(b)))
    }

    fn safe_valuation(b: u32, ns: &[u128]) -> Valuation {
        let mut val = valuation(ns);
        for i in 0..3 {
            val = val.with_nat(&format!("w{}", i), ns[(i + b as usize) % ns.len()] + 1);
        }
        val
    }

    proptest! {
        #[test]
        fn tail_commutes_with_translation(t in arb_type()) {
            prop_assert_eq!(tc_type_of(&t).tail(), Tier::Pot(t.tail()));
        }

        #[test]
        fn normalize_is_idempotent(p in arb_base_poly()) {
            let once = p.normalize();
            prop_assert_eq!(once.normalize(), once.clone());
            prop_assert!(once.has_normal_shape());
        }

        #[test]
        fn evaluation_is_monotone(p in arb_base_poly(), ns in proptest::collection::vec(0u128..6, 4), i in 0usize..4) {
            let lo = eval_nat(&p, &valuation(&ns)).unwrap();
            let mut up = ns.clone();
            up[i] += 1;
            prop_assert!(lo <= eval_nat(&p, &valuation(&up)).unwrap());
        }

        #[test]
        fn normalize_preserves_value(p in arb_base_poly(), ns in proptest::collection::vec(0u128..6, 4)) {
            prop_assert_eq!(eval_nat(&p, &valuation(&ns)).unwrap(), eval_nat(&p.normalize(), &valuation(&ns)).unwrap());
        }

        #[test]
        fn render_parse_round_trip(p in arb_base_poly()) {
            let ctx = (0..4).fold(PolyContext::new(), |c, i| c.with_var(&format!("x{}", i), base(i)));
            prop_assert_eq!(parse_poly(&p.to_string(), &ctx).unwrap(), p);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn join_of_safe_is_safe(
            (b, p, q, ns) in (1u32..5).prop_flat_map(|b| (Just(b), safe_at(b), safe_at(b), proptest::collection::vec(0u128..6, 4)))
        ) {
            prop_assert!(classify_safety(&p, Label(b)).is_safe(), "{} at {}", p, b);
            let j = safe_join(&p, &q, Label(b)).unwrap();
            prop_assert!(classify_safety(&j, Label(b)).is_safe(), "{} at {}", j, b);
            let val = safe_valuation(b, &ns);
            let m = eval_nat(&p, &val).unwrap().max(eval_nat(&q, &val).unwrap());
            prop_assert!(m <= eval_nat(&j, &val).unwrap());
        }
    }
}
