//! Core syntax: labels, tiered types and terms.

use std::collections::BTreeSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU32, Ordering};

use thiserror::Error;

use crate::bits::Bits;

pub type Name = Rc<str>;

/// A label is identified by its level: the label set holds exactly one word
/// of each length, alternating `d` and `b` and ending in `d`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Label(pub u32);

impl Label {
    pub const EPS: Label = Label(0);
    pub const D: Label = Label(1);
    pub const BD: Label = Label(2);
    pub const DBD: Label = Label(3);

    pub fn level(self) -> u32 {
        self.0
    }

    pub fn is_oracular(self) -> bool {
        self.0 % 2 == 0
    }

    pub fn is_computational(self) -> bool {
        !self.is_oracular()
    }

    /// The least computational label above or equal to `self`.
    pub fn computational_ceiling(self) -> Label {
        if self.is_computational() {
            self
        } else {
            Label(self.0 + 1)
        }
    }

    pub fn word(self) -> String {
        if self.0 == 0 {
            return "eps".to_string();
        }
        let mut w = String::with_capacity(self.0 as usize);
        for i in 0..self.0 {
            // The last letter is always `d`; letters alternate leftwards.
            let from_end = self.0 - 1 - i;
            w.push(if from_end % 2 == 0 { 'd' } else { 'b' });
        }
        w
    }

    pub fn from_word(w: &str) -> Option<Label> {
        if w == "eps" {
            return Some(Label::EPS);
        }
        if w.is_empty() {
            return None;
        }
        let l = Label(w.len() as u32);
        (l.word() == w).then_some(l)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.word())
    }
}

pub fn label_le(a: Label, b: Label) -> bool {
    a.0 <= b.0
}

pub fn is_oracular(a: Label) -> bool {
    a.is_oracular()
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Type {
    Base(Label),
    Arrow(Rc<Type>, Rc<Type>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeAlgebraError {
    #[error("shift is only defined for types of level at most 1, got {0}")]
    ShiftUnsupported(Type),
    #[error("no join for {0} and {1}")]
    JoinUndefined(Type, Type),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Predicativity {
    Predicative,
    Impredicative,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Flatness {
    Flat,
    Strict,
}

impl Type {
    pub fn base(l: Label) -> Type {
        Type::Base(l)
    }

    pub fn arrow(a: Type, r: Type) -> Type {
        Type::Arrow(Rc::new(a), Rc::new(r))
    }

    /// `a1 -> a2 -> ... -> result`.
    pub fn curried(args: impl IntoIterator<Item = Type>, result: Type) -> Type {
        let args: Vec<Type> = args.into_iter().collect();
        args.into_iter().rev().fold(result, |acc, a| Type::arrow(a, acc))
    }

    pub fn as_base(&self) -> Option<Label> {
        match self {
            Type::Base(l) => Some(*l),
            Type::Arrow(..) => None,
        }
    }

    pub fn is_base(&self) -> bool {
        matches!(self, Type::Base(_))
    }

    pub fn tail(&self) -> Label {
        match self {
            Type::Base(l) => *l,
            Type::Arrow(_, r) => r.tail(),
        }
    }

    /// Argument types of the curried arrow and its result base.
    pub fn uncurry(&self) -> (Vec<&Type>, Label) {
        let mut args = Vec::new();
        let mut cur = self;
        while let Type::Arrow(a, r) = cur {
            args.push(&**a);
            cur = r;
        }
        (args, cur.tail())
    }

    pub fn arity(&self) -> usize {
        self.uncurry().0.len()
    }

    /// Type level: 0 for base types, 1 + max argument level for arrows.
    pub fn level(&self) -> u32 {
        match self {
            Type::Base(_) => 0,
            Type::Arrow(a, r) => (a.level() + 1).max(r.level()),
        }
    }

    pub fn labels(&self) -> Vec<Label> {
        match self {
            Type::Base(l) => vec![*l],
            Type::Arrow(a, r) => {
                let mut v = a.labels();
                v.extend(r.labels());
                v
            }
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Base(l) => write!(f, "N_{}", l),
            Type::Arrow(a, r) => {
                if a.is_base() {
                    write!(f, "{} -> {}", a, r)
                } else {
                    write!(f, "({}) -> {}", a, r)
                }
            }
        }
    }
}

pub fn subtype(s: &Type, t: &Type) -> bool {
    match (s, t) {
        (Type::Base(a), Type::Base(b)) => label_le(*a, *b),
        (Type::Arrow(sa, sr), Type::Arrow(ta, tr)) => subtype(ta, sa) && subtype(sr, tr),
        _ => false,
    }
}

pub fn classify(t: &Type) -> (Predicativity, Flatness) {
    let (args, result) = t.uncurry();
    let pred = if args.iter().all(|a| label_le(a.tail(), result)) {
        Predicativity::Predicative
    } else {
        Predicativity::Impredicative
    };
    let flat = if args.iter().any(|a| a.tail() == result) {
        Flatness::Flat
    } else {
        Flatness::Strict
    };
    (pred, flat)
}

pub fn shift_type(t: &Type) -> Result<Type, TypeAlgebraError> {
    if t.level() > 1 {
        return Err(TypeAlgebraError::ShiftUnsupported(t.clone()));
    }
    Ok(raise(t, 2))
}

fn raise(t: &Type, by: u32) -> Type {
    match t {
        Type::Base(l) => Type::Base(Label(l.0 + by)),
        Type::Arrow(a, r) => Type::arrow(raise(a, by), raise(r, by)),
    }
}

pub fn type_join(s: &Type, t: &Type) -> Result<Type, TypeAlgebraError> {
    match (s, t) {
        (Type::Base(a), Type::Base(b)) => Ok(Type::Base((*a).max(*b))),
        _ => Err(TypeAlgebraError::JoinUndefined(s.clone(), t.clone())),
    }
}

#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, Debug)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub enum BasicOp {
    C0,
    C1,
    D,
    T0,
    T1,
}

impl BasicOp {
    pub fn keyword(self) -> &'static str {
        match self {
            BasicOp::C0 => "c0",
            BasicOp::C1 => "c1",
            BasicOp::D => "d",
            BasicOp::T0 => "t0",
            BasicOp::T1 => "t1",
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            BasicOp::C0 | BasicOp::T0 => 0,
            _ => 1,
        }
    }

    pub fn apply(self, a: &Bits) -> Bits {
        match self {
            BasicOp::C0 | BasicOp::C1 => a.cons(self.bit()),
            BasicOp::D => a.tail(),
            BasicOp::T0 | BasicOp::T1 => {
                if a.first() == Some(self.bit()) {
                    Bits::zeros(1)
                } else {
                    Bits::empty()
                }
            }
        }
    }
}

/// Identifies a recursion site; unfolded copies keep the site of the
/// original `crec`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct SiteId(pub u32);

static NEXT_SITE: AtomicU32 = AtomicU32::new(1);

pub fn fresh_site() -> SiteId {
    SiteId(NEXT_SITE.fetch_add(1, Ordering::Relaxed))
}

pub type TermRef = Rc<Term>;

#[derive(Clone, Debug)]
pub struct Term {
    pub kind: TermKind,
    pub span: Span,
}

#[derive(Clone, Debug)]
pub struct Crec {
    pub seed: Bits,
    pub ty: Option<Type>,
    /// `AffineLambda(f, λv1..vk. t)`.
    pub body: TermRef,
    pub site: SiteId,
}

#[derive(Clone, Debug)]
pub enum TermKind {
    Var(Name),
    Oracle(Name, Type),
    Const(Bits),
    Lambda(Name, Option<Type>, TermRef),
    AffineLambda(Name, TermRef),
    App(TermRef, TermRef),
    Op(BasicOp, TermRef),
    Cond(TermRef, TermRef, TermRef),
    Down(TermRef, TermRef),
    Crec(Crec),
}

/// The pieces of a `crec` body `λr f. λv1..vk. t`.
pub struct CrecParts<'a> {
    pub fvar: &'a Name,
    pub params: Vec<(&'a Name, Option<&'a Type>)>,
    pub body: &'a TermRef,
}

impl Crec {
    pub fn parts(&self) -> CrecParts<'_> {
        let (fvar, mut cur) = match &self.body.kind {
            TermKind::AffineLambda(f, b) => (f, b),
            _ => panic!("crec body must be an affine abstraction"),
        };
        let mut params = Vec::new();
        while let TermKind::Lambda(v, ann, b) = &cur.kind {
            params.push((v, ann.as_ref()));
            cur = b;
        }
        CrecParts { fvar, params, body: cur }
    }

    /// Parameters limited to the annotated arity.
    pub fn split(&self) -> (Name, Vec<Name>, TermRef) {
        let k = self.ty.as_ref().map(|t| t.arity());
        let (fvar, mut cur) = match &self.body.kind {
            TermKind::AffineLambda(f, b) => (f.clone(), b.clone()),
            _ => panic!("crec body must be an affine abstraction"),
        };
        let mut params = Vec::new();
        loop {
            if Some(params.len()) == k {
                break;
            }
            let next = match &cur.kind {
                TermKind::Lambda(v, _, b) => {
                    params.push(v.clone());
                    b.clone()
                }
                _ => break,
            };
            cur = next;
        }
        (fvar, params, cur)
    }
}

impl Term {
    pub fn new(kind: TermKind) -> TermRef {
        Rc::new(Term { kind, span: Span::default() })
    }

    pub fn at(kind: TermKind, span: Span) -> TermRef {
        Rc::new(Term { kind, span })
    }

    pub fn var(name: &str) -> TermRef {
        Term::new(TermKind::Var(name.into()))
    }

    pub fn constant(s: &str) -> TermRef {
        Term::new(TermKind::Const(Bits::parse(s).expect("bit-string literal")))
    }

    pub fn eps() -> TermRef {
        Term::new(TermKind::Const(Bits::empty()))
    }

    pub fn lam(x: &str, body: TermRef) -> TermRef {
        Term::new(TermKind::Lambda(x.into(), None, body))
    }

    pub fn app(f: TermRef, a: TermRef) -> TermRef {
        Term::new(TermKind::App(f, a))
    }

    pub fn apps(f: TermRef, args: impl IntoIterator<Item = TermRef>) -> TermRef {
        args.into_iter().fold(f, Term::app)
    }

    pub fn op(o: BasicOp, a: TermRef) -> TermRef {
        Term::new(TermKind::Op(o, a))
    }

    pub fn cond(s: TermRef, t: TermRef, e: TermRef) -> TermRef {
        Term::new(TermKind::Cond(s, t, e))
    }

    pub fn down(s: TermRef, t: TermRef) -> TermRef {
        Term::new(TermKind::Down(s, t))
    }

    pub fn crec(seed: Bits, ty: Option<Type>, fvar: &str, params: &[&str], body: TermRef) -> TermRef {
        let inner = params.iter().rev().fold(body, |acc, p| Term::lam(p, acc));
        Term::new(TermKind::Crec(Crec {
            seed,
            ty,
            body: Term::new(TermKind::AffineLambda(fvar.into(), inner)),
            site: fresh_site(),
        }))
    }

    /// Head and arguments of an application spine.
    pub fn spine<'a>(self: &'a TermRef) -> (&'a TermRef, Vec<&'a TermRef>) {
        let mut args = Vec::new();
        let mut cur = self;
        while let TermKind::App(f, a) = &cur.kind {
            args.push(a);
            cur = f;
        }
        args.reverse();
        (cur, args)
    }

    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    pub fn children(&self) -> Vec<&TermRef> {
        match &self.kind {
            TermKind::Var(_) | TermKind::Oracle(..) | TermKind::Const(_) => vec![],
            TermKind::Lambda(_, _, b) | TermKind::AffineLambda(_, b) | TermKind::Op(_, b) => vec![b],
            TermKind::App(a, b) | TermKind::Down(a, b) => vec![a, b],
            TermKind::Cond(a, b, c) => vec![a, b, c],
            TermKind::Crec(c) => vec![&c.body],
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        collect_fv(self, &mut Vec::new(), &mut out);
        out
    }

    pub fn occurs_free(&self, x: &str) -> bool {
        match &self.kind {
            TermKind::Var(y) => &**y == x,
            TermKind::Lambda(y, _, b) | TermKind::AffineLambda(y, b) => &**y != x && b.occurs_free(x),
            _ => self.children().iter().any(|c| c.occurs_free(x)),
        }
    }

    /// Crec sites reachable in the term.
    pub fn crec_sites(&self) -> Vec<SiteId> {
        let mut out = Vec::new();
        self.walk(&mut |t| {
            if let TermKind::Crec(c) = &t.kind {
                out.push(c.site);
            }
        });
        out
    }

    pub fn walk(&self, visit: &mut dyn FnMut(&Term)) {
        visit(self);
        for c in self.children() {
            c.walk(visit);
        }
    }
}

fn collect_fv(t: &Term, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>) {
    match &t.kind {
        TermKind::Var(x) => {
            if !bound.contains(x) {
                out.insert(x.clone());
            }
        }
        TermKind::Lambda(x, _, b) | TermKind::AffineLambda(x, b) => {
            bound.push(x.clone());
            collect_fv(b, bound, out);
            bound.pop();
        }
        _ => {
            for c in t.children() {
                collect_fv(c, bound, out);
            }
        }
    }
}

/// A name based on `base` that avoids every name in `avoid`.
pub fn fresh_name(base: &str, avoid: &BTreeSet<Name>) -> Name {
    let stem = base.trim_end_matches(|c: char| c.is_ascii_digit() || c == '\'');
    let stem = if stem.is_empty() { "x" } else { stem };
    if !avoid.contains(base) {
        return base.into();
    }
    (1..)
        .map(|i| format!("{}{}", stem, i))
        .find(|n| !avoid.contains(n.as_str()))
        .unwrap()
        .into()
}

/// Capture-avoiding substitution of `s` for free `x` in `t`.
pub fn subst(t: &TermRef, x: &str, s: &TermRef) -> TermRef {
    let fv_s = s.free_vars();
    subst_inner(t, x, s, &fv_s)
}

fn subst_inner(t: &TermRef, x: &str, s: &TermRef, fv_s: &BTreeSet<Name>) -> TermRef {
    if !t.occurs_free(x) {
        return t.clone();
    }
    let span = t.span;
    let kind = match &t.kind {
        TermKind::Var(_) => return s.clone(),
        TermKind::Lambda(y, _, b) | TermKind::AffineLambda(y, b) => {
            let (y2, b2) = if fv_s.contains(y) {
                let mut avoid = fv_s.clone();
                avoid.extend(b.free_vars());
                avoid.insert(x.into());
                let y2 = fresh_name(y, &avoid);
                (y2.clone(), subst(b, y, &Term::at(TermKind::Var(y2), span)))
            } else {
                (y.clone(), b.clone())
            };
            let body = subst_inner(&b2, x, s, fv_s);
            match &t.kind {
                TermKind::Lambda(_, ann, _) => TermKind::Lambda(y2, ann.clone(), body),
                _ => TermKind::AffineLambda(y2, body),
            }
        }
        TermKind::App(a, b) => TermKind::App(subst_inner(a, x, s, fv_s), subst_inner(b, x, s, fv_s)),
        TermKind::Op(o, a) => TermKind::Op(*o, subst_inner(a, x, s, fv_s)),
        TermKind::Down(a, b) => TermKind::Down(subst_inner(a, x, s, fv_s), subst_inner(b, x, s, fv_s)),
        TermKind::Cond(a, b, c) => TermKind::Cond(
            subst_inner(a, x, s, fv_s),
            subst_inner(b, x, s, fv_s),
            subst_inner(c, x, s, fv_s),
        ),
        TermKind::Crec(c) => TermKind::Crec(Crec { body: subst_inner(&c.body, x, s, fv_s), ..c.clone() }),
        TermKind::Oracle(..) | TermKind::Const(_) => unreachable!("no free variables"),
    };
    Term::at(kind, span)
}

/// α-equivalence; spans, crec sites and lambda annotations of let-bound
/// variables are compared only where they carry meaning (annotations do).
pub fn alpha_eq(a: &Term, b: &Term) -> bool {
    alpha(a, b, &mut Vec::new())
}

fn alpha(a: &Term, b: &Term, env: &mut Vec<(Name, Name)>) -> bool {
    use TermKind::*;
    match (&a.kind, &b.kind) {
        (Var(x), Var(y)) => {
            for (l, r) in env.iter().rev() {
                if l == x || r == y {
                    return l == x && r == y;
                }
            }
            x == y
        }
        (Oracle(x, s), Oracle(y, t)) => x == y && s == t,
        (Const(x), Const(y)) => x == y,
        (Lambda(x, s, p), Lambda(y, t, q)) => {
            s == t && {
                env.push((x.clone(), y.clone()));
                let r = alpha(p, q, env);
                env.pop();
                r
            }
        }
        (AffineLambda(x, p), AffineLambda(y, q)) => {
            env.push((x.clone(), y.clone()));
            let r = alpha(p, q, env);
            env.pop();
            r
        }
        (App(f, x), App(g, y)) | (Down(f, x), Down(g, y)) => alpha(f, g, env) && alpha(x, y, env),
        (Op(o, x), Op(p, y)) => o == p && alpha(x, y, env),
        (Cond(x1, x2, x3), Cond(y1, y2, y3)) => {
            alpha(x1, y1, env) && alpha(x2, y2, env) && alpha(x3, y3, env)
        }
        (Crec(c), Crec(d)) => c.seed == d.seed && c.ty == d.ty && alpha(&c.body, &d.body, env),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn l(n: u32) -> Label {
        Label(n)
    }

    fn n(k: u32) -> Type {
        Type::Base(l(k))
    }

    #[test]
    fn label_words() {
        let words: Vec<String> = (0..6).map(|k| l(k).word()).collect();
        assert_eq!(words, ["eps", "d", "bd", "dbd", "bdbd", "dbdbd"]);
        for k in 0..12 {
            assert_eq!(Label::from_word(&l(k).word()), Some(l(k)));
        }
        assert_eq!(Label::from_word("db"), None);
        assert_eq!(Label::from_word("dd"), None);
    }

    #[test]
    fn label_order_and_parity() {
        assert!(label_le(Label::EPS, Label::D));
        assert!(!label_le(Label::D, Label::EPS));
        assert!(label_le(Label::BD, Label::DBD));
        assert!(is_oracular(Label::EPS));
        assert!(!is_oracular(Label::D));
        assert!(is_oracular(Label::BD));
    }

    #[test]
    fn subtyping_examples() {
        assert!(subtype(&n(0), &n(1)));
        assert!(subtype(&Type::arrow(n(1), n(1)), &Type::arrow(n(0), n(1))));
        assert!(!subtype(&n(1), &n(0)));
        assert!(!subtype(&n(1), &Type::arrow(n(0), n(1))));
    }

    #[test]
    fn classification_examples() {
        use Flatness::*;
        use Predicativity::*;
        assert_eq!(classify(&Type::arrow(n(0), n(1))), (Predicative, Strict));
        assert_eq!(classify(&Type::curried([n(2), n(0)], n(2))), (Predicative, Flat));
        assert_eq!(classify(&Type::arrow(Type::arrow(n(0), n(1)), n(0))), (Impredicative, Strict));
    }

    #[test]
    fn shift_examples() {
        assert_eq!(shift_type(&Type::arrow(n(0), n(1))).unwrap(), Type::arrow(n(2), n(3)));
        assert_eq!(shift_type(&n(0)).unwrap(), n(2));
        let lvl2 = Type::arrow(Type::arrow(n(0), n(1)), n(1));
        assert!(matches!(shift_type(&lvl2), Err(TypeAlgebraError::ShiftUnsupported(_))));
    }

    #[test]
    fn join_examples() {
        assert_eq!(type_join(&n(0), &n(1)).unwrap(), n(1));
        assert_eq!(type_join(&n(1), &n(1)).unwrap(), n(1));
        assert_eq!(type_join(&n(2), &n(1)).unwrap(), n(2));
        assert!(type_join(&Type::arrow(n(0), n(0)), &n(0)).is_err());
    }

    #[test]
    fn label_le_is_total_order() {
        for a in 0..=16 {
            assert!(label_le(l(a), l(a)));
            for b in 0..=16 {
                assert!(label_le(l(a), l(b)) || label_le(l(b), l(a)));
                if label_le(l(a), l(b)) && label_le(l(b), l(a)) {
                    assert_eq!(a, b);
                }
                for c in 0..=16 {
                    if label_le(l(a), l(b)) && label_le(l(b), l(c)) {
                        assert!(label_le(l(a), l(c)));
                    }
                }
            }
        }
    }

    #[test]
    fn base_subtype_matches_label_order() {
        for a in 0..=8 {
            for b in 0..=8 {
                assert_eq!(subtype(&n(a), &n(b)), label_le(l(a), l(b)));
            }
        }
    }

    fn first_order() -> impl Strategy<Value = Type> {
        (prop::collection::vec(0u32..=6, 0..=3), 0u32..=6)
            .prop_map(|(args, r)| Type::curried(args.into_iter().map(n), n(r)))
    }

    fn any_type() -> impl Strategy<Value = Type> {
        let leaf = (0u32..=5).prop_map(n);
        leaf.prop_recursive(3, 12, 2, |inner| {
            (inner.clone(), inner).prop_map(|(a, r)| Type::arrow(a, r))
        })
    }

    proptest! {
        #[test]
        fn shift_preserves_classification(t in first_order()) {
            let s = shift_type(&t).unwrap();
            prop_assert_eq!(classify(&s), classify(&t));
            prop_assert_eq!(Type::Base(s.tail()), shift_type(&Type::Base(t.tail())).unwrap());
        }

        #[test]
        fn subtype_is_partial_order(a in any_type(), b in any_type(), c in any_type()) {
            prop_assert!(subtype(&a, &a));
            if subtype(&a, &b) && subtype(&b, &a) {
                prop_assert_eq!(&a, &b);
            }
            if subtype(&a, &b) && subtype(&b, &c) {
                prop_assert!(subtype(&a, &c));
            }
        }
    }

    #[test]
    fn substitution_avoids_capture() {
        // (fn y => x)[x := y] must not capture y.
        let t = Term::lam("y", Term::var("x"));
        let r = subst(&t, "x", &Term::var("y"));
        match &r.kind {
            TermKind::Lambda(b, _, body) => {
                assert_ne!(&**b, "y");
                assert!(matches!(&body.kind, TermKind::Var(v) if &**v == "y"));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn alpha_equivalence() {
        let a = Term::lam("x", Term::app(Term::var("x"), Term::var("z")));
        let b = Term::lam("y", Term::app(Term::var("y"), Term::var("z")));
        let c = Term::lam("z", Term::app(Term::var("z"), Term::var("z")));
        assert!(alpha_eq(&a, &b));
        assert!(!alpha_eq(&a, &c));
    }
}
