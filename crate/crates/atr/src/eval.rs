//! Big-step call-by-value evaluation with derivation-sum costs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::rc::Rc;

use serde::Serialize;
use thiserror::Error;

use crate::bits::Bits;
use crate::scope::Scope;
use crate::syntax::{BasicOp, Crec, Name, SiteId, Term, TermKind, TermRef, Type};

/// Host implementation of an oracle; receives all arguments at once.
pub type OracleFn = Rc<dyn Fn(&[Bits]) -> Bits>;
/// Declared length bound over argument lengths.
pub type LengthFn = Rc<dyn Fn(&[u64]) -> u64>;

/// Host functions available to oracle configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    /// Returns the last argument.
    Identity,
    ConstEps,
    /// Appends a `1` to the last argument.
    AppendBit,
    /// `1^n` where n is the length of the last argument.
    LengthUnary,
}

impl Builtin {
    pub fn from_id(id: &str) -> Option<Builtin> {
        Some(match id {
            "identity" => Builtin::Identity,
            "const-eps" | "constε" | "const_eps" => Builtin::ConstEps,
            "append-bit" | "append_bit" => Builtin::AppendBit,
            "length-unary" | "length_unary" => Builtin::LengthUnary,
            _ => return None,
        })
    }

    pub fn id(self) -> &'static str {
        match self {
            Builtin::Identity => "identity",
            Builtin::ConstEps => "const-eps",
            Builtin::AppendBit => "append-bit",
            Builtin::LengthUnary => "length-unary",
        }
    }

    pub fn run(self, args: &[Bits]) -> Bits {
        let last = args.last().cloned().unwrap_or_default();
        match self {
            Builtin::Identity => last,
            Builtin::ConstEps => Bits::empty(),
            Builtin::AppendBit => last.push_back(1),
            Builtin::LengthUnary => Bits::from_vec(vec![1; last.len()]),
        }
    }

    /// Declared length as a polynomial text over `n1..nk`.
    pub fn length_text(self, arity: usize) -> String {
        let last = format!("n{}", arity.max(1));
        match self {
            Builtin::Identity | Builtin::LengthUnary => last,
            Builtin::ConstEps => "0".to_string(),
            Builtin::AppendBit => format!("{} + 1", last),
        }
    }

    pub fn length(self, lens: &[u64]) -> u64 {
        let last = lens.last().copied().unwrap_or(0);
        match self {
            Builtin::Identity | Builtin::LengthUnary => last,
            Builtin::ConstEps => 0,
            Builtin::AppendBit => last + 1,
        }
    }
}

#[derive(Clone)]
pub struct OracleBinding {
    pub name: Name,
    pub ty: Type,
    pub imp: OracleFn,
    pub length: LengthFn,
    /// Polynomial text of `length` over `n1..nk`, for symbolic bounds.
    pub length_text: String,
    /// The builtin this binding was made from, if any.
    pub builtin: Option<Builtin>,
}

impl fmt::Debug for OracleBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OracleBinding({} : {}, |{}| <= {})", self.name, self.ty, self.name, self.length_text)
    }
}

impl OracleBinding {
    pub fn builtin(name: &str, ty: Type, b: Builtin) -> OracleBinding {
        let arity = ty.arity();
        OracleBinding {
            name: name.into(),
            ty,
            imp: Rc::new(move |a: &[Bits]| b.run(a)),
            length: Rc::new(move |l: &[u64]| b.length(l)),
            length_text: b.length_text(arity),
            builtin: Some(b),
        }
    }

    pub fn arity(&self) -> usize {
        self.ty.arity()
    }

    /// Checks `|imp(v)| <= length(|v|)` on the given sample inputs.
    pub fn validate_on(&self, samples: &[Vec<Bits>]) -> Result<(), String> {
        for s in samples {
            let out = (self.imp)(s);
            let lens: Vec<u64> = s.iter().map(|b| b.len() as u64).collect();
            let bound = (self.length)(&lens);
            if out.len() as u64 > bound {
                return Err(format!(
                    "oracle {} returned {} bits on inputs of lengths {:?}, declared bound {}",
                    self.name,
                    out.len(),
                    lens,
                    bound
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct OracleTable {
    bindings: HashMap<Name, Rc<OracleBinding>>,
}

impl OracleTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, b: OracleBinding) {
        self.bindings.insert(b.name.clone(), Rc::new(b));
    }

    pub fn with(mut self, b: OracleBinding) -> Self {
        self.insert(b);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Rc<OracleBinding>> {
        self.bindings.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Rc<OracleBinding>> {
        self.bindings.values()
    }
}

#[derive(Clone)]
pub enum Value {
    Str(Bits),
    /// A curried oracle with the arguments supplied so far.
    Oracle(Rc<OracleBinding>, Rc<[Bits]>),
    Closure { param: Name, body: TermRef, env: Env },
}

impl Value {
    pub fn as_bits(&self) -> Option<&Bits> {
        match self {
            Value::Str(b) => Some(b),
            _ => None,
        }
    }
}

impl PartialEq for Value {
    /// Strings compare by content; functions by identity of code and oracle.
    fn eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::Oracle(a, xs), Value::Oracle(b, ys)) => a.name == b.name && xs == ys,
            (Value::Closure { param: p, body: a, .. }, Value::Closure { param: q, body: b, .. }) => {
                p == q && crate::syntax::alpha_eq(a, b)
            }
            _ => false,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(b) => write!(f, "{}", b),
            Value::Oracle(o, args) => write!(f, "<oracle {}/{}>", o.name, args.len()),
            Value::Closure { param, .. } => write!(f, "<fn {}>", param),
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Environment entries: values, or a pending recursion with its clock.
#[derive(Clone)]
pub enum Extended {
    Value(Value),
    /// `chain` indexes the recursion this binding belongs to once it has
    /// recursed at least once.
    Crec { crec: TermRef, clock: Bits, env: Env, chain: Option<usize> },
}

pub type Env = Scope<Extended>;

pub fn env_of_strings<'a>(bindings: impl IntoIterator<Item = (&'a str, Bits)>) -> Env {
    bindings
        .into_iter()
        .fold(Env::new(), |env, (x, b)| env.extend(x.into(), Extended::Value(Value::Str(b))))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("fuel exhausted after {0} rule instances")]
    FuelExhausted(u64),
    #[error("no implementation bound for oracle `{0}`")]
    OracleMissing(String),
    #[error("stuck term: {0}")]
    StuckTerm(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SiteStats {
    /// crec axiom instances at this site over the whole evaluation.
    pub unfoldings: u64,
    /// Deepest unfolding of a single recursion started at this site.
    pub max_depth: u64,
}

/// One recursion started at a crec site: parameter lengths on entry (at the
/// first recursive call) and the deepest unfolding reached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecursionChain {
    pub site: SiteId,
    pub entry: Vec<u64>,
    pub depth: u64,
}

#[derive(Debug, Clone)]
pub struct CostReport {
    pub value: Value,
    pub total_cost: u64,
    pub rule_count: u64,
    pub rdp_by_site: BTreeMap<SiteId, SiteStats>,
    pub chains: Vec<RecursionChain>,
}

impl CostReport {
    pub fn max_depth(&self) -> u64 {
        self.rdp_by_site.values().map(|s| s.max_depth).max().unwrap_or(0)
    }
}

pub fn truthy(v: &Value) -> bool {
    matches!(v, Value::Str(b) if !b.is_empty())
}

/// One application step of an oracle: returns the next value and the rule cost.
pub fn apply_oracle(binding: &Rc<OracleBinding>, args: &[Bits], next: Bits) -> (Value, u64) {
    let mut all = args.to_vec();
    all.push(next);
    if all.len() >= binding.arity() {
        let out = (binding.imp)(&all);
        let cost = (out.len() as u64).max(1);
        (Value::Str(out), cost)
    } else {
        (Value::Oracle(binding.clone(), all.into()), 1)
    }
}

/// The term a crec closure rewrites to: `λv⃗. if down (c0 a) (c0 v1) then t else eps`.
pub fn unfold_term(c: &Crec, clock: &Bits, span: crate::syntax::Span) -> (Name, TermRef) {
    let (fvar, params, body) = c.split();
    let v1 = params.first().cloned().unwrap_or_else(|| "_".into());
    let test = Term::at(
        TermKind::Down(
            Term::at(TermKind::Op(BasicOp::C0, Term::at(TermKind::Const(clock.clone()), span)), span),
            Term::at(TermKind::Op(BasicOp::C0, Term::at(TermKind::Var(v1), span)), span),
        ),
        span,
    );
    let guarded = Term::at(TermKind::Cond(test, body, Term::at(TermKind::Const(Bits::empty()), span)), span);
    let lam = params
        .iter()
        .rev()
        .fold(guarded, |acc, p| Term::at(TermKind::Lambda(p.clone(), None, acc), span));
    (fvar, lam)
}

/// The value of the crec axiom for a recursion at `clock` closed over `env`.
pub fn crec_closure(crec: &TermRef, clock: &Bits, env: &Env, chain: Option<usize>) -> Result<Value, EvalError> {
    let TermKind::Crec(c) = &crec.kind else { unreachable!("crec closure over a non-crec term") };
    let (fvar, lam) = unfold_term(c, clock, crec.span);
    let next = Extended::Crec { crec: crec.clone(), clock: clock.cons(0), env: env.clone(), chain };
    let env2 = env.extend(fvar, next);
    match &lam.kind {
        TermKind::Lambda(p, _, b) => Ok(Value::Closure { param: p.clone(), body: b.clone(), env: env2 }),
        _ => Err(EvalError::StuckTerm("crec without parameters".into())),
    }
}

pub struct Evaluator<'o> {
    oracles: &'o OracleTable,
    fuel: Option<u64>,
    cost: u64,
    rules: u64,
    sites: BTreeMap<SiteId, SiteStats>,
    chains: Vec<RecursionChain>,
}

impl<'o> Evaluator<'o> {
    pub fn new(oracles: &'o OracleTable, fuel: Option<u64>) -> Self {
        Evaluator { oracles, fuel, cost: 0, rules: 0, sites: BTreeMap::new(), chains: Vec::new() }
    }

    fn charge(&mut self, c: u64) -> Result<(), EvalError> {
        self.cost += c;
        self.rules += 1;
        match self.fuel {
            Some(f) if self.rules > f => Err(EvalError::FuelExhausted(f)),
            _ => Ok(()),
        }
    }

    /// The crec axiom: rewrite to a guarded abstraction.
    /// `caller` is the environment of the recursive call site, used to record
    /// the parameters of the first level when a new chain starts.
    fn unfold(&mut self, crec: &TermRef, clock: &Bits, env: &Env, chain: Option<usize>, caller: Option<&Env>) -> Result<Value, EvalError> {
        self.charge(1)?;
        let TermKind::Crec(c) = &crec.kind else { unreachable!("crec closure over a non-crec term") };
        let stats = self.sites.entry(c.site).or_default();
        stats.unfoldings += 1;
        let depth = (clock.len() - c.seed.len()) as u64 + 1;
        stats.max_depth = stats.max_depth.max(depth);
        let chain = match (chain, caller) {
            (Some(i), _) => Some(i),
            (None, Some(cenv)) => {
                let (_, params, _) = c.split();
                let entry = params
                    .iter()
                    .map(|p| match cenv.get(p) {
                        Some(Extended::Value(Value::Str(b))) => b.len() as u64,
                        _ => 0,
                    })
                    .collect();
                self.chains.push(RecursionChain { site: c.site, entry, depth });
                Some(self.chains.len() - 1)
            }
            (None, None) => None,
        };
        if let Some(i) = chain {
            self.chains[i].depth = self.chains[i].depth.max(depth);
        }
        crec_closure(crec, clock, env, chain)
    }

    pub fn eval(&mut self, t: &TermRef, env: &Env) -> Result<Value, EvalError> {
        stacker::maybe_grow(128 * 1024, 4 * 1024 * 1024, || self.eval_inner(t, env))
    }

    fn eval_inner(&mut self, t: &TermRef, env: &Env) -> Result<Value, EvalError> {
        match &t.kind {
            TermKind::Const(b) => {
                self.charge(1)?;
                Ok(Value::Str(b.clone()))
            }
            TermKind::Oracle(name, _) => {
                self.charge(1)?;
                let b = self.oracles.get(name).ok_or_else(|| EvalError::OracleMissing(name.to_string()))?;
                Ok(Value::Oracle(b.clone(), Rc::from(Vec::new())))
            }
            TermKind::Lambda(x, _, body) => {
                self.charge(1)?;
                Ok(Value::Closure { param: x.clone(), body: body.clone(), env: env.clone() })
            }
            TermKind::Crec(c) => {
                let seed = c.seed.clone();
                self.unfold(t, &seed, env, None, None)
            }
            TermKind::AffineLambda(..) => Err(EvalError::StuckTerm("bare affine abstraction".into())),
            TermKind::Var(x) => {
                let v = match env.get(x) {
                    Some(Extended::Value(v)) => {
                        self.charge(1)?;
                        v.clone()
                    }
                    Some(Extended::Crec { crec, clock, env: cenv, chain }) => {
                        let (crec, clock, cenv, chain) = (crec.clone(), clock.clone(), cenv.clone(), *chain);
                        self.unfold(&crec, &clock, &cenv, chain, Some(env))?
                    }
                    None => return Err(EvalError::StuckTerm(format!("unbound variable `{}`", x))),
                };
                let c = match &v {
                    Value::Str(b) => (b.len() as u64).max(1),
                    _ => 1,
                };
                self.charge(c)?;
                Ok(v)
            }
            TermKind::Op(op, s) => {
                let v = self.eval(s, env)?;
                let Value::Str(a) = v else { return Err(EvalError::StuckTerm(format!("{} of a non-string", op.keyword()))) };
                self.charge(1)?;
                Ok(Value::Str(op.apply(&a)))
            }
            TermKind::Cond(s, a, b) => {
                let v = self.eval(s, env)?;
                if !matches!(v, Value::Str(_)) {
                    return Err(EvalError::StuckTerm("if on a non-string".into()));
                }
                let r = if truthy(&v) { self.eval(a, env)? } else { self.eval(b, env)? };
                self.charge(1)?;
                Ok(r)
            }
            TermKind::Down(s, r) => {
                let vs = self.eval(s, env)?;
                let vr = self.eval(r, env)?;
                let (Value::Str(a_s), Value::Str(a_t)) = (vs, vr) else {
                    return Err(EvalError::StuckTerm("down on non-strings".into()));
                };
                self.charge(2 * a_t.len() as u64 + 1)?;
                Ok(if a_s.len() <= a_t.len() { Value::Str(a_s) } else { Value::Str(Bits::empty()) })
            }
            TermKind::App(f, a) => {
                let vf = self.eval(f, env)?;
                let va = self.eval(a, env)?;
                match vf {
                    Value::Closure { param, body, env: cenv } => {
                        self.charge(1)?;
                        let env2 = cenv.extend(param, Extended::Value(va));
                        self.eval(&body, &env2)
                    }
                    Value::Oracle(b, args) => {
                        let Value::Str(bits) = va else {
                            return Err(EvalError::StuckTerm("oracle applied to a non-string".into()));
                        };
                        let (v, c) = apply_oracle(&b, &args, bits);
                        self.charge(c)?;
                        Ok(v)
                    }
                    Value::Str(_) => Err(EvalError::StuckTerm("application of a string".into())),
                }
            }
        }
    }

    pub fn finish(self, value: Value) -> CostReport {
        CostReport { value, total_cost: self.cost, rule_count: self.rules, rdp_by_site: self.sites, chains: self.chains }
    }
}

pub fn evaluate(t: &TermRef, env: &Env, oracles: &OracleTable, fuel: Option<u64>) -> Result<CostReport, EvalError> {
    let mut ev = Evaluator::new(oracles, fuel);
    let v = ev.eval(t, env)?;
    Ok(ev.finish(v))
}

/// Evaluates `t a1 .. ak` with the arguments as string constants.
pub fn evaluate_applied(t: &TermRef, args: &[Bits], oracles: &OracleTable, fuel: Option<u64>) -> Result<CostReport, EvalError> {
    let term = Term::apps(t.clone(), args.iter().map(|a| Term::at(TermKind::Const(a.clone()), t.span)));
    evaluate(&term, &Env::new(), oracles, fuel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;
    use crate::syntax::Label;

    fn b(s: &str) -> Bits {
        Bits::parse(s).unwrap()
    }

    fn run(t: &TermRef, env: &Env) -> CostReport {
        evaluate(t, env, &OracleTable::new(), None).unwrap()
    }

    #[test]
    fn eps_costs_one() {
        let r = run(&Term::eps(), &Env::new());
        assert_eq!((r.value.as_bits().unwrap().len(), r.total_cost), (0, 1));
    }

    #[test]
    fn c0_of_one() {
        let r = run(&Term::op(BasicOp::C0, Term::constant("1")), &Env::new());
        assert_eq!(r.value, Value::Str(b("01")));
        assert_eq!(r.total_cost, 2);
    }

    #[test]
    fn down_longer_left_is_eps() {
        let r = run(&Term::down(Term::constant("11"), Term::constant("0")), &Env::new());
        assert_eq!(r.value, Value::Str(Bits::empty()));
        assert_eq!(r.total_cost, 5);
    }

    #[test]
    fn env_lookup_cost() {
        let env = env_of_strings([("x", b("101"))]);
        let r = run(&Term::var("x"), &env);
        assert_eq!(r.value, Value::Str(b("101")));
        assert_eq!(r.total_cost, 4);
        assert_eq!(r.rule_count, 2);
    }

    #[test]
    fn truthiness() {
        assert!(truthy(&Value::Str(b("0"))));
        assert!(!truthy(&Value::Str(Bits::empty())));
        assert!(truthy(&Value::Str(b("10"))));
    }

    #[test]
    fn oracle_costs() {
        let n = |l| Type::Base(Label(l));
        let id = Rc::new(OracleBinding::builtin("id", Type::arrow(n(0), n(0)), Builtin::Identity));
        assert_eq!(apply_oracle(&id, &[], b("11")).1, 2);
        let bin = Rc::new(OracleBinding::builtin("p", Type::curried([n(0), n(0)], n(0)), Builtin::Identity));
        let (v, c) = apply_oracle(&bin, &[], b("1"));
        assert!(matches!(v, Value::Oracle(_, _)));
        assert_eq!(c, 1);
        let ce = Rc::new(OracleBinding::builtin("z", Type::arrow(n(0), n(0)), Builtin::ConstEps));
        assert_eq!(apply_oracle(&ce, &[], b("0101")), (Value::Str(Bits::empty()), 1));
    }

    #[test]
    fn crec_clock_extends_by_one_bit() {
        // Copies its argument bit by bit, recursing once per bit.
        let src = "fn (x : N_eps) => letrec f : N_eps -> N_eps -> N_d =
            fn b u => if u then (if t0 u then c0 (f b (d u)) else c1 (f b (d u))) else eps in f x x end";
        let (_, t) = parse_program(src).unwrap();
        let r = evaluate_applied(&t, &[b("0110")], &OracleTable::new(), None).unwrap();
        assert_eq!(r.value, Value::Str(b("0110")));
        let stats: Vec<_> = r.rdp_by_site.values().collect();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].unfoldings, 5);
        assert_eq!(stats[0].max_depth, 5);
        assert!(r.total_cost >= r.rule_count);
    }

    #[test]
    fn fuel_stops_evaluation() {
        let src = "fn (x : N_eps) => letrec f : N_eps -> N_eps -> N_d =
            fn b u => if u then c0 (f b (d u)) else eps in f x x end";
        let (_, t) = parse_program(src).unwrap();
        let e = evaluate_applied(&t, &[b("0101010101")], &OracleTable::new(), Some(10)).unwrap_err();
        assert_eq!(e, EvalError::FuelExhausted(10));
    }

    #[test]
    fn missing_oracle_reported() {
        let t = Term::new(TermKind::Oracle("alpha".into(), Type::arrow(Type::Base(Label(0)), Type::Base(Label(0)))));
        assert!(matches!(evaluate(&t, &Env::new(), &OracleTable::new(), None), Err(EvalError::OracleMissing(_))));
    }
}
