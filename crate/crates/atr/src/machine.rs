//! CEK-style abstract machine with defunctionalized continuations.
//!
//! Every big-step rule instance is simulated by at most three transitions,
//! and every rule costs at least one, so a run of cost `n` halts within
//! `3n` steps.

use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::eval::{apply_oracle, crec_closure, truthy, CostReport, Env, EvalError, Extended, OracleTable, Value};
use crate::syntax::{BasicOp, TermKind, TermRef};

#[derive(Clone)]
pub enum Frame {
    /// Evaluate the argument next, then apply.
    ArgOf(TermRef, Env),
    /// The operator is known; apply it to the value being returned.
    ApplyTo(Value),
    OpK(BasicOp),
    CondK(TermRef, TermRef, Env),
    DownLeftK(TermRef, Env),
    DownRightK(Value),
}

impl Frame {
    pub fn tag(&self) -> &'static str {
        match self {
            Frame::ArgOf(..) => "ArgOf",
            Frame::ApplyTo(..) => "ApplyTo",
            Frame::OpK(..) => "OpK",
            Frame::CondK(..) => "CondK",
            Frame::DownLeftK(..) => "DownLeftK",
            Frame::DownRightK(..) => "DownRightK",
        }
    }
}

/// A continuation: a stack of frames terminated by `Halt`.
#[derive(Clone)]
pub enum Kont {
    Halt,
    Push(Rc<(Frame, Kont)>, usize),
}

impl Kont {
    pub fn push(self, f: Frame) -> Kont {
        let depth = self.depth() + 1;
        Kont::Push(Rc::new((f, self)), depth)
    }

    /// Number of frames above `Halt`.
    pub fn depth(&self) -> usize {
        match self {
            Kont::Halt => 0,
            Kont::Push(_, d) => *d,
        }
    }

    pub fn frames(&self) -> Vec<Frame> {
        let mut out = Vec::new();
        let mut cur = self;
        while let Kont::Push(node, _) = cur {
            out.push(node.0.clone());
            cur = &node.1;
        }
        out
    }

    /// `self` with its `Halt` replaced by `rest`.
    pub fn concat(&self, rest: &Kont) -> Kont {
        self.frames().into_iter().rev().fold(rest.clone(), |k, f| k.push(f))
    }

    pub fn halts_once(&self) -> bool {
        // Halt is a distinguished variant, so it can only sit at the tail.
        self.frames().len() == self.depth()
    }
}

#[derive(Clone)]
pub enum Control {
    Eval(TermRef, Env),
    Ret(Value),
}

#[derive(Clone)]
pub struct Configuration {
    pub control: Control,
    pub kont: Kont,
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.control {
            Control::Eval(t, _) => {
                let s = crate::parser::pretty_term(t).split_whitespace().collect::<Vec<_>>().join(" ");
                let short: String = s.chars().take(60).collect();
                write!(f, "eval {}", short)?;
            }
            Control::Ret(v) => write!(f, "ret {}", v)?,
        }
        write!(f, " | depth {}", self.kont.depth())
    }
}

pub fn inject(t: &TermRef, env: &Env) -> Configuration {
    Configuration { control: Control::Eval(t.clone(), env.clone()), kont: Kont::Halt }
}

impl Configuration {
    pub fn is_terminal(&self) -> bool {
        matches!((&self.control, &self.kont), (Control::Ret(_), Kont::Halt))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MachineError {
    #[error("step budget of {0} exhausted")]
    StepBudgetExhausted(u64),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn stuck(msg: &str) -> MachineError {
    MachineError::Eval(EvalError::StuckTerm(msg.to_string()))
}

/// One transition. Returns the rule tag and the next configuration, or
/// `None` on a terminal configuration.
pub fn step(c: &Configuration, oracles: &OracleTable) -> Result<Option<(&'static str, Configuration)>, MachineError> {
    let k = c.kont.clone();
    let next = |tag, control, kont| Ok(Some((tag, Configuration { control, kont })));
    match &c.control {
        Control::Eval(t, env) => match &t.kind {
            TermKind::Const(b) => next("Val", Control::Ret(Value::Str(b.clone())), k),
            TermKind::Lambda(x, _, body) => next(
                "Val",
                Control::Ret(Value::Closure { param: x.clone(), body: body.clone(), env: env.clone() }),
                k,
            ),
            TermKind::Oracle(name, _) => {
                let b = oracles.get(name).ok_or_else(|| EvalError::OracleMissing(name.to_string()))?;
                next("Val", Control::Ret(Value::Oracle(b.clone(), Rc::from(Vec::new()))), k)
            }
            TermKind::Crec(c0) => {
                let v = crec_closure(t, &c0.seed, env, None)?;
                next("crec", Control::Ret(v), k)
            }
            TermKind::Var(x) => {
                let v = match env.get(x) {
                    Some(Extended::Value(v)) => v.clone(),
                    Some(Extended::Crec { crec, clock, env: cenv, .. }) => crec_closure(crec, clock, cenv, None)?,
                    None => return Err(stuck(&format!("unbound variable `{}`", x))),
                };
                next("Env", Control::Ret(v), k)
            }
            TermKind::AffineLambda(..) => Err(stuck("bare affine abstraction")),
            TermKind::Op(op, s) => next("Op", Control::Eval(s.clone(), env.clone()), k.push(Frame::OpK(*op))),
            TermKind::Cond(s, a, b) => next(
                "if",
                Control::Eval(s.clone(), env.clone()),
                k.push(Frame::CondK(a.clone(), b.clone(), env.clone())),
            ),
            TermKind::Down(s, r) => next(
                "down",
                Control::Eval(s.clone(), env.clone()),
                k.push(Frame::DownLeftK(r.clone(), env.clone())),
            ),
            TermKind::App(f, a) => next(
                "App",
                Control::Eval(f.clone(), env.clone()),
                k.push(Frame::ArgOf(a.clone(), env.clone())),
            ),
        },
        Control::Ret(v) => {
            let Kont::Push(node, _) = &c.kont else { return Ok(None) };
            let (frame, rest) = (&node.0, node.1.clone());
            match frame {
                Frame::OpK(op) => {
                    let Value::Str(a) = v else { return Err(stuck("basic operation on a non-string")) };
                    next("OpK", Control::Ret(Value::Str(op.apply(a))), rest)
                }
                Frame::CondK(a, b, env) => {
                    let branch = if truthy(v) { a } else { b };
                    next("CondK", Control::Eval(branch.clone(), env.clone()), rest)
                }
                Frame::DownLeftK(r, env) => {
                    next("DownLeftK", Control::Eval(r.clone(), env.clone()), rest.push(Frame::DownRightK(v.clone())))
                }
                Frame::DownRightK(left) => {
                    let (Value::Str(a_s), Value::Str(a_t)) = (left, v) else {
                        return Err(stuck("down on non-strings"));
                    };
                    let out = if a_s.len() <= a_t.len() { a_s.clone() } else { crate::Bits::empty() };
                    next("DownRightK", Control::Ret(Value::Str(out)), rest)
                }
                Frame::ArgOf(a, env) => {
                    next("ArgOf", Control::Eval(a.clone(), env.clone()), rest.push(Frame::ApplyTo(v.clone())))
                }
                Frame::ApplyTo(f) => match f {
                    Value::Closure { param, body, env } => {
                        let env2 = env.extend(param.clone(), Extended::Value(v.clone()));
                        next("ApplyTo", Control::Eval(body.clone(), env2), rest)
                    }
                    Value::Oracle(b, args) => {
                        let Value::Str(bits) = v else { return Err(stuck("oracle applied to a non-string")) };
                        let (out, _) = apply_oracle(b, args, bits.clone());
                        next("ApplyTo", Control::Ret(out), rest)
                    }
                    Value::Str(_) => Err(stuck("application of a string")),
                },
            }
        }
    }
}

/// Runs to a terminal configuration; `trace` receives one line per step.
pub fn run_traced(
    c: Configuration,
    oracles: &OracleTable,
    max_steps: Option<u64>,
    mut trace: Option<&mut dyn FnMut(&str)>,
) -> Result<(Value, u64), MachineError> {
    let mut cur = c;
    let mut steps = 0u64;
    loop {
        match step(&cur, oracles)? {
            None => {
                let Control::Ret(v) = cur.control else { unreachable!() };
                return Ok((v, steps));
            }
            Some((tag, next)) => {
                steps += 1;
                if let Some(limit) = max_steps {
                    if steps > limit {
                        return Err(MachineError::StepBudgetExhausted(limit));
                    }
                }
                if let Some(tr) = trace.as_deref_mut() {
                    tr(&format!("{:>8} {:<10} {}", steps, tag, next));
                }
                cur = next;
            }
        }
    }
}

pub fn run(c: Configuration, oracles: &OracleTable, max_steps: Option<u64>) -> Result<(Value, u64), MachineError> {
    run_traced(c, oracles, max_steps, None)
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub values_equal: bool,
    pub machine_value: Value,
    pub bigstep: CostReport,
    /// Machine transitions.
    pub m: u64,
    /// Big-step cost.
    pub n: u64,
}

impl Comparison {
    pub fn ratio(&self) -> f64 {
        self.m as f64 / self.n.max(1) as f64
    }

    pub fn within_bound(&self) -> bool {
        self.m <= 3 * self.n
    }
}

pub fn compare_with_bigstep(t: &TermRef, env: &Env, oracles: &OracleTable) -> Result<Comparison, MachineError> {
    let big = crate::eval::evaluate(t, env, oracles, None)?;
    let (v, m) = run(inject(t, env), oracles, Some(3 * big.total_cost + 3))?;
    Ok(Comparison { values_equal: v == big.value, machine_value: v, n: big.total_cost, m, bigstep: big })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::Bits;
    use crate::parser::parse_program;
    use crate::syntax::Term;

    #[test]
    fn eps_in_one_step() {
        let (v, m) = run(inject(&Term::eps(), &Env::new()), &OracleTable::new(), None).unwrap();
        assert_eq!(v, Value::Str(Bits::empty()));
        assert!(m <= 3);
        assert!(inject(&Term::eps(), &Env::new()).kont.halts_once());
    }

    #[test]
    fn recursion_agrees_with_bigstep() {
        let src = "fn (x : N_eps) => letrec f : N_eps -> N_eps -> N_d =
            fn b u => if u then (if t0 u then c0 (f b (d u)) else c1 (f b (d u))) else eps in f x x end";
        let (_, t) = parse_program(src).unwrap();
        let app = Term::app(t, Term::constant("01101"));
        let c = compare_with_bigstep(&app, &Env::new(), &OracleTable::new()).unwrap();
        assert!(c.values_equal);
        assert!(c.within_bound(), "m = {}, n = {}", c.m, c.n);
    }

    #[test]
    fn step_budget() {
        let t = Term::down(Term::constant("1"), Term::constant("11"));
        let e = run(inject(&t, &Env::new()), &OracleTable::new(), Some(2)).unwrap_err();
        assert_eq!(e, MachineError::StepBudgetExhausted(2));
    }

    #[test]
    fn concat_is_associative_with_halt_identity() {
        let k1 = Kont::Halt.push(Frame::OpK(BasicOp::C0)).push(Frame::OpK(BasicOp::D));
        let k2 = Kont::Halt.push(Frame::OpK(BasicOp::T1));
        let k3 = Kont::Halt.push(Frame::OpK(BasicOp::C1));
        let tags = |k: &Kont| k.frames().iter().map(|f| format!("{}", matches!(f, Frame::OpK(_)))).count();
        let a = k1.concat(&k2).concat(&k3);
        let b = k1.concat(&k2.concat(&k3));
        let ops = |k: &Kont| {
            k.frames()
                .iter()
                .map(|f| match f {
                    Frame::OpK(o) => o.keyword(),
                    _ => "",
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(ops(&a), ops(&b));
        assert_eq!(tags(&a), 4);
        assert_eq!(ops(&k1.concat(&Kont::Halt)), ops(&k1));
        assert!(a.halts_once());
    }
}
