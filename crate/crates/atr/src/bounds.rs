//! Time-complexity bound synthesis over typing derivations.
//!
//! Every typed term gets a t.c. polynomial pair `(cost, pot)`. Clocked
//! recursions are decomposed into one level of their body and either closed
//! symbolically or left as a numeric unfolding node.

pub mod check;

use std::collections::BTreeMap;
use std::rc::Rc;

use serde::Serialize;
use thiserror::Error;

use crate::eval::OracleTable;
use crate::scope::Scope;
use crate::syntax::{BasicOp, Label, Name, SiteId, TermKind, Type};
use crate::tcpoly::{
    classify_safety, eval_erased, pot_type_of, safe_join, safe_witness, Poly, PolyError, PolyValue, RecBound,
    SafetyClass, TcType, Valuation,
};
use crate::typecheck::{Derivation, Rule};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BoundError {
    #[error("recursion `{0}` is not in plain affine form: {1}")]
    NotPlainAffine(String, String),
    #[error("synthesis failed: {0}")]
    SynthesisFailed(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// `val p`: the t.c. of looking up a variable whose potential is `p`.
pub fn val(p: Poly, ty: &Type) -> Poly {
    if ty.is_base() {
        Poly::pair(Poly::add(Poly::nat(1), Poly::max(Poly::nat(1), p.clone())), p)
    } else {
        Poly::pair(Poly::nat(2), p)
    }
}

/// `dally(m, X)`: `X` with `m` added to its cost.
pub fn dally(m: Poly, x: Poly) -> Poly {
    Poly::pair(Poly::add(m, Poly::cost(x.clone())), Poly::pot(x))
}

/// Name of the length function of oracle `name` inside polynomials.
pub fn length_symbol(name: &str) -> String {
    format!("|{}|", name)
}

/// The curried length tower of an oracle type: `|a|(n1)..(nk)`.
fn length_type(args: &[&Type], result: Label) -> TcType {
    args.iter().rev().fold(TcType::Base(result), |acc, a| TcType::arrow(pot_type_of(a), TcType::pair(TcType::Cost, acc)))
}

/// `(1, fn n1 => (1, .. fn nk => (max(1, |a|(n..)), |a|(n..))))`.
pub fn oracle_tc(name: &str, ty: &Type) -> Poly {
    let (args, result) = ty.uncurry();
    let sym = Poly::oracle(&length_symbol(name), length_type(&args, result));
    let names: Vec<String> = (1..=args.len()).map(|i| format!("n{}", i)).collect();
    let vars: Vec<Poly> = names.iter().zip(&args).map(|(n, a)| Poly::var(n, pot_type_of(a))).collect();
    let len = vars.iter().fold(sym, |acc, v| Poly::pot(Poly::app(acc, v.clone())));
    let inner = Poly::pair(Poly::max(Poly::nat(1), len.clone()), len);
    let tower = names.iter().zip(&args).rev().fold(inner, |acc, (n, a)| {
        Poly::pair(Poly::nat(1), Poly::lam(n, pot_type_of(a), acc))
    });
    if args.is_empty() {
        Poly::pair(Poly::nat(1), Poly::pot(tower))
    } else {
        tower
    }
}

/// Values for the oracle length symbols, built from the declared lengths.
pub fn oracle_valuation(oracles: &OracleTable) -> Valuation {
    let mut v = Valuation::new();
    for b in oracles.iter() {
        let arity = b.arity();
        let len = b.length.clone();
        v = v.with_oracle(&length_symbol(&b.name), length_value(len, arity, Vec::new()));
    }
    v
}

fn length_value(len: crate::eval::LengthFn, arity: usize, got: Vec<u64>) -> PolyValue {
    PolyValue::fun(move |n| {
        let mut got = got.clone();
        got.push(u64::try_from(n.as_nat()?).unwrap_or(u64::MAX));
        let next = if got.len() >= arity {
            PolyValue::Nat(len(&got) as u128)
        } else {
            length_value(len.clone(), arity, got)
        };
        Ok(PolyValue::pair(PolyValue::Nat(0), next))
    })
}

/// The cost of the clock test at a first argument of potential `v1`.
pub fn clock_poly(v1: Poly) -> Poly {
    Poly::sum([Poly::nat(8), Poly::mul(Poly::nat(2), v1.clone()), Poly::max(Poly::nat(1), v1)])
}

/// One level of a plain affine recursion body: `t` is bounded by
/// `(cost[next := cost(f p..)], pot[w := pot(f p..)])`.
#[derive(Debug, Clone)]
pub struct DecompResult {
    pub fname: Name,
    pub site: SiteId,
    pub params: Vec<(Name, TcType)>,
    pub labels: Vec<Label>,
    pub result: Label,
    pub seed_len: u64,
    pub w: Name,
    pub next: Name,
    /// Cost of one level, including argument evaluation and call overhead,
    /// with the recursive call's cost as the variable `next`.
    pub cost_with_next: Poly,
    /// `cost_with_next` at `next = 0`, when `next` occurs affinely.
    pub cost: Option<Poly>,
    pub pot: Poly,
    /// Potentials of the next call's arguments, joined over call sites.
    pub args: Vec<Poly>,
    pub calls: usize,
}

impl DecompResult {
    fn param(&self, i: usize) -> Poly {
        Poly::Var(self.params[i].0.clone(), self.params[i].1.clone())
    }

    /// `xi`: each parameter to the bound of the next call's argument.
    pub fn xi(&self) -> BTreeMap<Name, Poly> {
        self.params.iter().map(|(x, _)| x.clone()).zip(self.args.iter().cloned()).collect()
    }

    pub fn termination_bound(&self) -> Poly {
        Poly::add(Poly::nat(2), self.args[0].clone())
    }

    /// Whether the clock argument is a fixed point of `xi`.
    pub fn clock_fixed(&self) -> bool {
        self.args[0].substitute(&self.xi()) == self.args[0]
    }

    /// Argument potentials after `n` further levels, from concrete parameter
    /// lengths; entry 0 is `entry` itself.
    pub fn iterate_args(&self, entry: &[u128], n: usize, base: &Valuation) -> Result<Vec<Vec<u128>>, PolyError> {
        let mut out = vec![entry.to_vec()];
        for _ in 0..n {
            let cur = out.last().unwrap();
            let mut v = base.clone();
            for ((x, _), n) in self.params.iter().zip(cur) {
                v = v.with_nat(x, *n);
            }
            let next = self.args.iter().map(|a| eval_erased(a, &v)?.as_nat()).collect::<Result<Vec<_>, _>>()?;
            out.push(next);
        }
        Ok(out)
    }

    /// The closed-form cost of `d` unfoldings from `entry`: each level pays
    /// the clock test and, with every parameter at its largest value over
    /// the levels, its own cost with the recursive result at `d q + r0`.
    pub fn unfolding_formula(&self, entry: &[u128], d: u64, base: &Valuation) -> Result<u128, BoundError> {
        let levels = self.iterate_args(entry, d as usize, base)?;
        let top: Vec<u128> =
            (0..entry.len()).map(|i| levels.iter().map(|l| l[i]).max().unwrap_or(0)).collect();
        let mut v = base.clone();
        for ((x, _), n) in self.params.iter().zip(&top) {
            v = v.with_nat(x, *n);
        }
        let (q, r0) = split_potential(self)
            .ok_or_else(|| BoundError::SynthesisFailed(format!("potential {} has no usable safe split", self.pot)))?;
        let (q, r0) = (eval_erased(&q, &v)?.as_nat()?, eval_erased(&r0, &v)?.as_nat()?);
        let w = if self.result.is_oracular() { q.max(r0) } else { d as u128 * q + r0 };
        let cost = self.cost.as_ref().ok_or_else(|| {
            BoundError::NotPlainAffine(self.fname.to_string(), "recursive call cost does not occur affinely".into())
        })?;
        let per_level = eval_erased(cost, &v.with_nat(&self.w, w))?.as_nat()?;
        let k = self.params.len() as u128;
        let d = d as u128;
        Ok(d * (10 + 3 * top[0]) + (d + 1) * (2 * k + per_level))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CrecMode {
    Symbolic,
    Numeric,
}

#[derive(Debug, Clone)]
pub struct CrecReport {
    pub site: SiteId,
    pub name: Name,
    pub mode: CrecMode,
    /// Why the symbolic closure was not used.
    pub fallback: Option<String>,
    pub decomposition: DecompResult,
    /// The unfolded bound `phi` over the parameters, in symbolic mode.
    pub phi: Option<Poly>,
    /// The t.c. of the recursion term.
    pub tc: Poly,
    pub safety: Option<SafetyClass>,
}

impl CrecReport {
    pub fn termination_bound(&self) -> Poly {
        self.decomposition.termination_bound()
    }
}

/// Builds t.c. polynomials from derivations.
#[derive(Default)]
pub struct Synthesizer {
    fresh: u32,
    pub crecs: Vec<CrecReport>,
}

type Env = Scope<Poly>;

fn tc_split(x: &Poly) -> (Poly, Poly) {
    (Poly::cost(x.clone()), Poly::pot(x.clone()))
}

fn apply(x: &Poly, y: &Poly) -> Poly {
    let chi = Poly::app(Poly::pot(x.clone()), Poly::pot(y.clone()));
    Poly::pair(
        Poly::sum([Poly::cost(x.clone()), Poly::cost(y.clone()), Poly::cost(chi.clone()), Poly::nat(1)]),
        Poly::pot(chi),
    )
}

fn join(p: &Poly, q: &Poly, b: Label) -> Poly {
    safe_join(p, q, b).unwrap_or_else(|_| Poly::max(p.clone(), q.clone()))
}

impl Synthesizer {
    pub fn new() -> Self {
        Self::default()
    }

    fn fresh(&mut self, base: &str) -> Name {
        self.fresh += 1;
        format!("{}'{}", base, self.fresh).into()
    }

    pub fn synthesize(&mut self, d: &Derivation) -> Result<Poly, BoundError> {
        self.synth(d, &Env::new())
    }

    fn synth(&mut self, d: &Derivation, env: &Env) -> Result<Poly, BoundError> {
        stacker::maybe_grow(64 * 1024, 2 * 1024 * 1024, || self.synth_inner(d, env))
    }

    fn synth_inner(&mut self, d: &Derivation, env: &Env) -> Result<Poly, BoundError> {
        let one = || Poly::nat(1);
        match d.rule {
            Rule::Subsumption | Rule::Shift => self.synth(&d.premises[0], env),
            Rule::ZeroI | Rule::ConstI => match &d.term.kind {
                TermKind::Const(b) => Ok(Poly::pair(one(), Poly::nat(b.len() as u64))),
                _ => Err(BoundError::SynthesisFailed("constant rule on a non-constant".into())),
            },
            Rule::OracleI => match &d.term.kind {
                TermKind::Oracle(a, ty) => Ok(oracle_tc(a, ty)),
                _ => Err(BoundError::SynthesisFailed("oracle rule on a non-oracle".into())),
            },
            Rule::IntId | Rule::AffId => match &d.term.kind {
                TermKind::Var(x) => env.get(x).cloned().ok_or_else(|| PolyError::Unbound(x.clone()).into()),
                _ => Err(BoundError::SynthesisFailed("variable rule on a non-variable".into())),
            },
            Rule::OpC | Rule::OpD | Rule::OpT => {
                let (c, p) = tc_split(&self.synth(&d.premises[0], env)?);
                let TermKind::Op(op, _) = &d.term.kind else {
                    return Err(BoundError::SynthesisFailed("operator rule on a non-operator".into()));
                };
                let pot = match op {
                    BasicOp::C0 | BasicOp::C1 => Poly::add(one(), p),
                    BasicOp::D => p,
                    BasicOp::T0 | BasicOp::T1 => one(),
                };
                Ok(Poly::pair(Poly::add(one(), c), pot))
            }
            Rule::IfI => {
                let (cs, _) = tc_split(&self.synth(&d.premises[0], env)?);
                let (ca, pa) = tc_split(&self.synth(&d.premises[1], env)?);
                let (cb, pb) = tc_split(&self.synth(&d.premises[2], env)?);
                let l = d.ty.tail();
                Ok(Poly::pair(Poly::sum([one(), cs, Poly::max(ca, cb)]), join(&pa, &pb, l)))
            }
            Rule::DownI => {
                let (cs, _) = tc_split(&self.synth(&d.premises[0], env)?);
                let (cr, pr) = tc_split(&self.synth(&d.premises[1], env)?);
                Ok(Poly::pair(Poly::sum([one(), cs, cr, Poly::mul(Poly::nat(2), pr.clone())]), pr))
            }
            Rule::ArrowI => self.lambda(d, env),
            Rule::ArrowE => self.application(d, env),
            Rule::CrecI => self.crec(d, env),
        }
    }

    fn lambda(&mut self, d: &Derivation, env: &Env) -> Result<Poly, BoundError> {
        let (TermKind::Lambda(x, _, _), Type::Arrow(a, _)) = (&d.term.kind, &d.ty) else {
            return Err(BoundError::SynthesisFailed("abstraction rule on a non-abstraction".into()));
        };
        let v = self.fresh(x);
        let pt = pot_type_of(a);
        let inner = env.extend(x.clone(), val(Poly::Var(v.clone(), pt.clone()), a));
        let body = self.synth(&d.premises[0], &inner)?;
        Ok(Poly::pair(Poly::nat(1), Poly::Lam(v, pt, Rc::new(body))))
    }

    /// Applications; a redex binds its parameters to the arguments' bounds
    /// directly so recursions in its body see them.
    fn application(&mut self, d: &Derivation, env: &Env) -> Result<Poly, BoundError> {
        let mut args = Vec::new();
        let mut head = d;
        while head.rule == Rule::ArrowE {
            args.push(&head.premises[1]);
            head = head.premises[0].core();
        }
        args.reverse();
        if head.rule != Rule::ArrowI {
            let x = self.synth(&d.premises[0], env)?;
            let y = self.synth(&d.premises[1], env)?;
            return Ok(apply(&x, &y));
        }
        let mut cost = Vec::new();
        let mut inner = env.clone();
        let mut cur = head;
        let mut used = 0;
        while used < args.len() && cur.rule == Rule::ArrowI {
            let (TermKind::Lambda(x, _, _), Type::Arrow(a, _)) = (&cur.term.kind, &cur.ty) else { break };
            let y = self.synth(args[used], env)?;
            cost.extend([Poly::nat(2), Poly::cost(y.clone())]);
            inner = inner.extend(x.clone(), val(Poly::pot(y), a));
            cur = cur.premises[0].core();
            used += 1;
        }
        let b = self.synth(cur, &inner)?;
        cost.push(Poly::cost(b.clone()));
        let mut acc = Poly::pair(Poly::sum(cost), Poly::pot(b));
        for a in &args[used..] {
            let y = self.synth(a, env)?;
            acc = apply(&acc, &y);
        }
        Ok(acc)
    }

    fn crec(&mut self, d: &Derivation, env: &Env) -> Result<Poly, BoundError> {
        let TermKind::Crec(c) = &d.term.kind else {
            return Err(BoundError::SynthesisFailed("crec rule on a non-crec".into()));
        };
        let (fvar, pnames, _) = c.split();
        let (arg_tys, result) = d.ty.uncurry();
        let fc = self.fresh(&format!("{}_c", fvar));
        let fp = self.fresh(&fvar);
        let mut inner = env.extend(fvar.clone(), Poly::pair(Poly::var(&fc, TcType::Cost), Poly::var(&fp, pot_type_of(&d.ty))));
        let mut params = Vec::new();
        let mut labels = Vec::new();
        for (x, a) in pnames.iter().zip(&arg_tys) {
            let v = self.fresh(x);
            let pt = pot_type_of(a);
            inner = inner.extend(x.clone(), val(Poly::Var(v.clone(), pt.clone()), a));
            params.push((v, pt));
            labels.push(a.tail());
        }
        let body = self.synth(&d.premises[1], &inner)?;
        let w = self.fresh("w");
        let next = self.fresh("next");
        let dr = decompose(&body, &fc, &fp, DecompShape {
            fname: fvar.clone(),
            site: c.site,
            params,
            labels,
            result,
            seed_len: c.seed.len() as u64,
            w,
            next,
        })?;
        let report = close_recursion(dr);
        let tc = report.tc.clone();
        if !self.crecs.iter().any(|r| r.site == report.site) {
            self.crecs.push(report);
        }
        Ok(tc)
    }
}

struct DecompShape {
    fname: Name,
    site: SiteId,
    params: Vec<(Name, TcType)>,
    labels: Vec<Label>,
    result: Label,
    seed_len: u64,
    w: Name,
    next: Name,
}

/// Arguments of `pot(..pot(F a1)..) ak` style chains headed by `f`.
fn f_spine(p: &Poly, f: &Name) -> Option<Vec<Poly>> {
    match p {
        Poly::App(g, a) => {
            let mut args = match &**g {
                Poly::Var(x, _) if x == f => Vec::new(),
                Poly::Pot(inner) => f_spine(inner, f)?,
                _ => return None,
            };
            args.push((**a).clone());
            Some(args)
        }
        _ => None,
    }
}

struct Calls<'a> {
    f: &'a Name,
    k: usize,
    w: Poly,
    next: Poly,
    found: Vec<Vec<Poly>>,
    bound: Vec<Name>,
    error: Option<String>,
}

impl Calls<'_> {
    fn record(&mut self, args: Vec<Poly>) {
        for a in &args {
            let fv = a.free_vars();
            if fv.contains(self.f) {
                self.error = Some("recursive call inside an argument of a recursive call".into());
            } else if let Some(x) = self.bound.iter().find(|x| fv.contains(*x)) {
                self.error = Some(format!("call argument depends on the local bound variable {}", x));
            }
        }
        self.found.push(args);
    }

    fn replace(&mut self, p: &Poly) -> Poly {
        match p {
            Poly::Cost(inner) => match f_spine(inner, self.f) {
                Some(args) if args.len() < self.k => Poly::nat(1),
                Some(args) if args.len() == self.k => {
                    self.record(args);
                    self.next.clone()
                }
                _ => Poly::cost(self.replace(inner)),
            },
            Poly::Pot(inner) => match f_spine(inner, self.f) {
                Some(args) if args.len() == self.k => {
                    self.record(args);
                    self.w.clone()
                }
                _ => Poly::pot(self.replace(inner)),
            },
            Poly::Nat(_) | Poly::Var(..) | Poly::Oracle(..) | Poly::Rec(_) => p.clone(),
            Poly::Sum(xs) => Poly::sum(xs.iter().map(|x| self.replace(x))),
            Poly::Prod(xs) => xs.iter().map(|x| self.replace(x)).fold(Poly::nat(1), Poly::mul),
            Poly::Max(xs) => Poly::max_all(xs.iter().map(|x| self.replace(x)).collect::<Vec<_>>()),
            Poly::Lam(x, t, b) => {
                self.bound.push(x.clone());
                let b2 = self.replace(b);
                self.bound.pop();
                Poly::Lam(x.clone(), t.clone(), Rc::new(b2))
            }
            Poly::App(g, a) => Poly::app(self.replace(g), self.replace(a)),
            Poly::Pair(c, q) => Poly::pair(self.replace(c), self.replace(q)),
        }
    }
}

/// Whether `p <= p[x := 0] + x` follows from the syntax: `x` occurs only
/// additively with coefficient 1 along every max branch.
fn affine_in(p: &Poly, x: &Name) -> bool {
    if !p.free_vars().contains(x) {
        return true;
    }
    match p {
        Poly::Var(y, _) => y == x,
        Poly::Sum(xs) => {
            let with: Vec<&Poly> = xs.iter().filter(|s| s.free_vars().contains(x)).collect();
            with.len() == 1 && affine_in(with[0], x)
        }
        Poly::Max(xs) => xs.iter().all(|s| affine_in(s, x)),
        _ => false,
    }
}

fn decompose(body: &Poly, fc: &Name, fp: &Name, shape: DecompShape) -> Result<DecompResult, BoundError> {
    let fail = |msg: String| BoundError::NotPlainAffine(shape.fname.to_string(), msg);
    let mut fixed = BTreeMap::new();
    fixed.insert(fc.clone(), Poly::nat(2));
    let body = body.substitute(&fixed);
    let mut calls = Calls {
        f: fp,
        k: shape.params.len(),
        w: Poly::var(&shape.w, TcType::Base(shape.result)),
        next: Poly::var(&shape.next, TcType::Cost),
        found: Vec::new(),
        bound: Vec::new(),
        error: None,
    };
    let cost_with_next = calls.replace(&Poly::cost(body.clone()));
    let pot = calls.replace(&Poly::pot(body));
    if let Some(e) = calls.error {
        return Err(fail(e));
    }
    if cost_with_next.free_vars().contains(fp) || pot.free_vars().contains(fp) {
        return Err(fail("the recursive function is used other than by complete application".into()));
    }
    if pot.free_vars().contains(&shape.next) {
        return Err(fail("a recursive call's cost flows into the potential".into()));
    }
    let args: Vec<Poly> = if calls.found.is_empty() {
        shape.params.iter().map(|(x, t)| Poly::Var(x.clone(), t.clone())).collect()
    } else {
        (0..shape.params.len())
            .map(|i| {
                let mut it = calls.found.iter().map(|c| c[i].clone());
                let first = it.next().unwrap();
                it.fold(first, |acc, a| join(&acc, &a, shape.labels[i]))
            })
            .collect()
    };
    if args.iter().any(|a| a.free_vars().contains(&shape.w) || a.free_vars().contains(&shape.next)) {
        return Err(fail("a recursive result flows into a recursive call's argument".into()));
    }
    let cost = affine_in(&cost_with_next, &shape.next).then(|| {
        let mut m = BTreeMap::new();
        m.insert(shape.next.clone(), Poly::zero());
        cost_with_next.substitute(&m)
    });
    Ok(DecompResult {
        fname: shape.fname,
        site: shape.site,
        params: shape.params,
        labels: shape.labels,
        result: shape.result,
        seed_len: shape.seed_len,
        w: shape.w,
        next: shape.next,
        cost_with_next,
        cost,
        pot,
        args,
        calls: calls.found.len(),
    })
}

/// `a - v` when `a` is `v + delta` syntactically.
fn minus_var(a: &Poly, v: &Poly) -> Option<Poly> {
    let Poly::Sum(xs) = a else { return None };
    let pos = xs.iter().position(|x| x == v)?;
    let delta = Poly::sum(xs.iter().enumerate().filter(|(i, _)| *i != pos).map(|(_, x)| x.clone()));
    (Poly::add(v.clone(), delta.clone()) == *a).then_some(delta)
}

/// A bound on parameter `i` over any `d` levels, when the argument
/// sequence stabilizes or grows by a fixed increment.
fn close_param(dr: &DecompResult, i: usize, depth: Option<&Poly>) -> Option<Poly> {
    let xi = dr.xi();
    let v = dr.param(i);
    let a = &dr.args[i];
    if *a == v {
        return Some(v);
    }
    let a1 = a.substitute(&xi);
    if a1 == *a {
        return Some(Poly::max(v, a.clone()));
    }
    let a2 = a1.substitute(&xi);
    if a2 == a1 {
        return Some(Poly::max_all([v, a.clone(), a1]));
    }
    let delta = minus_var(a, &v)?;
    if delta.free_vars().contains(&dr.params[i].0) || delta.substitute(&xi) != delta {
        return None;
    }
    Some(Poly::add(v, Poly::mul(depth?.clone(), delta)))
}

/// `(q, r0)` with `p <= q (+) max(r0, w)`.
fn split_potential(dr: &DecompResult) -> Option<(Poly, Poly)> {
    let (q, r) = safe_witness(&dr.pot, dr.result)?;
    if q.free_vars().contains(&dr.w) {
        return None;
    }
    let w = Poly::var(&dr.w, TcType::Base(dr.result));
    let atoms: Vec<Poly> = match &r {
        Poly::Max(xs) => xs.to_vec(),
        other => vec![other.clone()],
    };
    if atoms.iter().any(|x| *x != w && x.free_vars().contains(&dr.w)) {
        return None;
    }
    Some((q, Poly::max_all(atoms.into_iter().filter(|x| *x != w).collect::<Vec<_>>())))
}

/// The unfolded bound over the parameters, closing the argument sequence.
pub fn symbolic_phi(dr: &DecompResult) -> Result<Poly, String> {
    if !dr.clock_fixed() {
        return Err(format!("clock argument {} is not a fixed point of the call", dr.args[0]));
    }
    let clock = close_param(dr, 0, None).ok_or("clock argument sequence does not close")?;
    let depth = Poly::add(clock.clone(), Poly::nat(1));
    let mut sigma = BTreeMap::new();
    for i in 0..dr.params.len() {
        let c = close_param(dr, i, Some(&depth))
            .ok_or_else(|| format!("argument sequence for parameter {} does not close", dr.params[i].0))?;
        sigma.insert(dr.params[i].0.clone(), c);
    }
    let cost = dr.cost.as_ref().ok_or("recursive call cost does not occur affinely")?;
    let (q, r0) = split_potential(dr).ok_or_else(|| format!("potential {} has no usable safe split", dr.pot))?;
    let (q, r0) = (q.substitute(&sigma), r0.substitute(&sigma));
    let pot = if dr.result.is_oracular() {
        Poly::max(q, r0)
    } else {
        Poly::add(Poly::mul(depth.clone(), q), r0)
    };
    let mut at = sigma.clone();
    at.insert(dr.w.clone(), pot.clone());
    let cost = Poly::sum([
        Poly::mul(Poly::add(depth.clone(), Poly::nat(1)), clock_poly(sigma[&dr.params[0].0].clone())),
        Poly::mul(depth, cost.substitute(&at)),
        Poly::nat(1),
    ]);
    Ok(Poly::pair(cost, pot))
}

/// Curries `phi` over the parameters, each partial application costing 1.
fn recursion_tc(dr: &DecompResult, phi: Poly) -> Poly {
    dr.params.iter().rev().fold(phi, |acc, (x, t)| Poly::pair(Poly::nat(1), Poly::Lam(x.clone(), t.clone(), Rc::new(acc))))
}

fn numeric_tc(dr: &DecompResult) -> Poly {
    Poly::Rec(Rc::new(RecBound {
        label: format!("{}@{}", dr.fname, dr.site.0).into(),
        params: dr.params.clone(),
        result: dr.result,
        seed_len: dr.seed_len,
        w: dr.w.clone(),
        next: dr.next.clone(),
        cost: dr.cost_with_next.clone(),
        pot: dr.pot.clone(),
        args: dr.args.clone(),
    }))
}

fn close_recursion(dr: DecompResult) -> CrecReport {
    let symbolic = symbolic_phi(&dr).and_then(|phi| {
        let tc = recursion_tc(&dr, phi.clone());
        match classify_safety(&tc, dr.result) {
            s if s.is_safe() => Ok((phi, tc, s)),
            SafetyClass::Unsafe(why) => Err(why),
            _ => unreachable!(),
        }
    });
    match symbolic {
        Ok((phi, tc, s)) => CrecReport {
            site: dr.site,
            name: dr.fname.clone(),
            mode: CrecMode::Symbolic,
            fallback: None,
            phi: Some(phi),
            tc,
            safety: Some(s),
            decomposition: dr,
        },
        Err(why) => CrecReport {
            site: dr.site,
            name: dr.fname.clone(),
            mode: CrecMode::Numeric,
            fallback: Some(why),
            phi: None,
            tc: numeric_tc(&dr),
            safety: None,
            decomposition: dr,
        },
    }
}

/// Bounds of a whole program applied to base-type inputs `n1..nk`.
#[derive(Debug, Clone)]
pub struct ProgramBound {
    pub tc: Poly,
    pub inputs: Vec<(Name, TcType)>,
    pub cost: Poly,
    pub pot: Poly,
    pub result: Label,
    pub crecs: Vec<CrecReport>,
}

impl ProgramBound {
    pub fn is_symbolic(&self) -> bool {
        self.crecs.iter().all(|c| c.mode == CrecMode::Symbolic)
    }

    pub fn valuation(&self, lengths: &[u64], oracles: &OracleTable) -> Valuation {
        let mut v = oracle_valuation(oracles);
        for ((x, _), n) in self.inputs.iter().zip(lengths) {
            v = v.with_nat(x, *n as u128);
        }
        v
    }

    /// `(cost, pot)` at the given input lengths.
    pub fn eval_at(&self, lengths: &[u64], oracles: &OracleTable) -> Result<(u128, u128), PolyError> {
        let v = self.valuation(lengths, oracles);
        Ok((eval_erased(&self.cost, &v)?.as_nat()?, eval_erased(&self.pot, &v)?.as_nat()?))
    }

    pub fn crec(&self, name: &str) -> Option<&CrecReport> {
        self.crecs.iter().find(|c| &*c.name == name)
    }
}

/// Synthesizes the t.c. of a program of type `b1 -> .. -> bk -> b` and
/// applies it to input potentials `n1..nk`.
pub fn program_bound(d: &Derivation) -> Result<ProgramBound, BoundError> {
    let mut s = Synthesizer::new();
    let tc = s.synthesize(d)?;
    let (args, result) = d.ty.uncurry();
    if args.iter().any(|a| !a.is_base()) {
        return Err(BoundError::SynthesisFailed(format!("program type {} has higher-type inputs", d.ty)));
    }
    let inputs: Vec<(Name, TcType)> =
        args.iter().enumerate().map(|(i, a)| (Name::from(format!("n{}", i + 1)), pot_type_of(a))).collect();
    let mut acc = tc.clone();
    for (x, t) in &inputs {
        acc = apply(&acc, &Poly::pair(Poly::nat(1), Poly::Var(x.clone(), t.clone())));
    }
    let (cost, pot) = tc_split(&acc);
    Ok(ProgramBound { tc, inputs, cost, pot, result, crecs: s.crecs })
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CrecSummary {
    pub site: u32,
    pub name: String,
    pub mode: CrecMode,
    pub termination_poly: String,
    /// Absent in numeric mode.
    pub phi_poly: Option<String>,
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CheckCounts {
    pub trials: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundReport {
    pub program: String,
    /// `symbolic`, `numeric`, or `failed: <reason>`.
    pub mode: String,
    pub cost_poly: String,
    pub pot_poly: String,
    pub per_crec: Vec<CrecSummary>,
    pub checks: CheckCounts,
}

impl BoundReport {
    pub fn new(program: &str, bound: &ProgramBound, checks: CheckCounts) -> Self {
        BoundReport {
            program: program.to_string(),
            mode: if bound.is_symbolic() { "symbolic" } else { "numeric" }.to_string(),
            cost_poly: bound.cost.to_string(),
            pot_poly: bound.pot.to_string(),
            per_crec: bound
                .crecs
                .iter()
                .map(|c| CrecSummary {
                    site: c.site.0,
                    name: c.name.to_string(),
                    mode: c.mode,
                    termination_poly: c.termination_bound().to_string(),
                    phi_poly: c.phi.as_ref().map(|p| p.to_string()),
                    fallback: c.fallback.clone(),
                })
                .collect(),
            checks,
        }
    }

    pub fn failed(program: &str, reason: &str) -> Self {
        BoundReport {
            program: program.to_string(),
            mode: format!("failed: {}", reason),
            cost_poly: String::new(),
            pot_poly: String::new(),
            per_crec: Vec::new(),
            checks: CheckCounts::default(),
        }
    }
}

/// The potential of a program over input lengths and oracle length
/// functions: a second-order length polynomial.
pub fn length_bound(d: &Derivation) -> Result<Poly, BoundError> {
    Ok(program_bound(d)?.pot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::Bits;
    use crate::corpus::{corpus_program, encode_list};
    use crate::eval::evaluate_applied;
    use crate::parser::parse_program;
    use crate::typecheck::{infer, TypeContext};

    fn bound_of(src: &str) -> ProgramBound {
        let (_, t) = parse_program(src).unwrap();
        let d = infer(&t, &TypeContext::new()).unwrap();
        program_bound(&d).unwrap()
    }

    fn measured(src: &str, args: &[&str]) -> (u64, usize) {
        let (_, t) = parse_program(src).unwrap();
        let args: Vec<Bits> = args.iter().map(|a| Bits::parse(a).unwrap()).collect();
        let r = evaluate_applied(&t, &args, &OracleTable::new(), None).unwrap();
        (r.total_cost, r.value.as_bits().unwrap().len())
    }

    #[test]
    fn constant_is_one_and_its_length() {
        let b = bound_of("\"\"");
        assert_eq!(b.eval_at(&[], &OracleTable::new()).unwrap(), (1, 0));
        let b = bound_of("\"0110\"");
        assert_eq!(b.eval_at(&[], &OracleTable::new()).unwrap(), (1, 4));
    }

    #[test]
    fn c0_bound_dominates_every_short_input() {
        let src = "fn (x : N_eps) => c0 x";
        let b = bound_of(src);
        for w in crate::corpus::strings_up_to(8) {
            let (cost, len) = measured(src, &[&w.to_string()]);
            let (bc, bp) = b.eval_at(&[w.len() as u64], &OracleTable::new()).unwrap();
            assert!(cost as u128 <= bc && len as u128 <= bp, "{}: {} {}", w, cost, len);
            assert_eq!(bp, w.len() as u128 + 1);
        }
    }

    #[test]
    fn unary_identity_oracle_tc() {
        let tc = oracle_tc("a", &Type::arrow(Type::base(Label::EPS), Type::base(Label::BD)));
        let oracles = OracleTable::new().with(crate::eval::OracleBinding::builtin(
            "a",
            Type::arrow(Type::base(Label::EPS), Type::base(Label::BD)),
            crate::eval::Builtin::Identity,
        ));
        let v = oracle_valuation(&oracles);
        let applied = Poly::app(Poly::pot(tc.clone()), Poly::nat(5));
        let r = eval_erased(&applied, &v).unwrap();
        assert_eq!((r.cost().unwrap().as_nat().unwrap(), r.pot().unwrap().as_nat().unwrap()), (5, 5));
        let zero = eval_erased(&Poly::app(Poly::pot(tc), Poly::zero()), &v).unwrap();
        assert_eq!(zero.cost().unwrap().as_nat().unwrap(), 1);
    }

    #[test]
    fn binary_oracle_has_two_levels() {
        let ty = Type::curried([Type::base(Label::EPS), Type::base(Label::BD)], Type::base(Label::BD));
        let tc = oracle_tc("g", &ty);
        let Poly::Pair(_, inner) = &tc else { panic!("{}", tc) };
        let Poly::Lam(_, _, body) = &**inner else { panic!("{}", tc) };
        assert!(matches!(&**body, Poly::Pair(_, l) if matches!(&**l, Poly::Lam(..))));
    }

    #[test]
    fn val_adds_lookup_cost() {
        let p = Poly::var("x", TcType::Base(Label::EPS));
        assert_eq!(Poly::cost(val(p.clone(), &Type::base(Label::EPS))).to_string(), "1 + max(1, x)");
        assert_eq!(Poly::cost(val(p, &Type::arrow(Type::base(Label::EPS), Type::base(Label::EPS)))), Poly::nat(2));
    }

    #[test]
    fn cons_is_symbolic_and_sound() {
        let p = corpus_program("cons").unwrap();
        let b = program_bound(&p.derivation).unwrap();
        assert!(b.is_symbolic(), "{:?}", b.crecs.iter().map(|c| &c.fallback).collect::<Vec<_>>());
        let f = b.crec("f").unwrap();
        assert_eq!(f.decomposition.calls, 2);
        for n in 0..6 {
            let w = Bits::from_vec(vec![1; n]);
            let l = encode_list(&[Bits::parse("01").unwrap()]);
            let r = evaluate_applied(&p.term, &[w.clone(), l.clone()], &p.oracles, None).unwrap();
            let (c, q) = b.eval_at(&[w.len() as u64, l.len() as u64], &p.oracles).unwrap();
            assert!(r.total_cost as u128 <= c);
            assert!(r.value.as_bits().unwrap().len() as u128 <= q);
        }
    }

    #[test]
    fn crec_cost_includes_clock_and_lookup() {
        let p = corpus_program("tail").unwrap();
        let b = program_bound(&p.derivation).unwrap();
        let g = b.crec("g").unwrap();
        let phi = g.phi.as_ref().expect("tail closes symbolically");
        let mut v = Valuation::new();
        for (x, _) in &g.decomposition.params {
            v = v.with_nat(x, 0);
        }
        let c = eval_erased(&Poly::cost(phi.clone()), &v).unwrap().as_nat().unwrap();
        assert!(c >= 9, "{}", c);
    }

    #[test]
    fn nonaffine_cost_falls_back_to_numeric() {
        let dr = DecompResult {
            fname: "f".into(),
            site: SiteId(0),
            params: vec![("v".into(), TcType::Base(Label::EPS))],
            labels: vec![Label::EPS],
            result: Label::D,
            seed_len: 0,
            w: "w".into(),
            next: "next".into(),
            cost_with_next: Poly::mul(Poly::nat(2), Poly::var("next", TcType::Cost)),
            cost: None,
            pot: Poly::var("w", TcType::Base(Label::D)),
            args: vec![Poly::var("v", TcType::Base(Label::EPS))],
            calls: 1,
        };
        assert!(!affine_in(&dr.cost_with_next, &dr.next));
        let r = close_recursion(dr);
        assert_eq!(r.mode, CrecMode::Numeric);
    }

    #[test]
    fn growing_clock_is_not_fixed() {
        let v = Poly::var("v", TcType::Base(Label::EPS));
        let dr = DecompResult {
            fname: "f".into(),
            site: SiteId(0),
            params: vec![("v".into(), TcType::Base(Label::EPS))],
            labels: vec![Label::EPS],
            result: Label::D,
            seed_len: 0,
            w: "w".into(),
            next: "next".into(),
            cost_with_next: Poly::var("next", TcType::Cost),
            cost: Some(Poly::zero()),
            pot: Poly::zero(),
            args: vec![Poly::add(v, Poly::nat(1))],
            calls: 1,
        };
        assert!(!dr.clock_fixed());
        assert!(symbolic_phi(&dr).is_err());
    }
}
