//! Random terms: closed base-typed programs for the machine comparison, and
//! recursion bodies whose recursive variable needs normalizing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bits::Bits;
use crate::syntax::{BasicOp, Label, Name, Term, TermRef, Type};
use crate::typecheck::{infer, Derivation, TypeContext};

const OPS: [BasicOp; 5] = [BasicOp::C0, BasicOp::C1, BasicOp::D, BasicOp::T0, BasicOp::T1];

fn random_const(rng: &mut impl Rng) -> TermRef {
    let n = rng.gen_range(0..4);
    Term::at(crate::syntax::TermKind::Const(Bits::from_vec((0..n).map(|_| rng.gen_range(0..2)).collect())), Default::default())
}

fn fresh(counter: &mut u32) -> Name {
    *counter += 1;
    format!("x{}", counter).into()
}

/// A term without the recursive variable over the string variables `scope`.
fn plain(rng: &mut impl Rng, scope: &[Name], depth: u32, counter: &mut u32) -> TermRef {
    if depth == 0 || rng.gen_bool(0.3) {
        return match scope.choose(rng) {
            Some(x) if rng.gen_bool(0.6) => Term::var(x),
            _ => random_const(rng),
        };
    }
    match rng.gen_range(0..5) {
        0 | 1 => Term::op(*OPS.choose(rng).unwrap(), plain(rng, scope, depth - 1, counter)),
        2 => Term::cond(
            plain(rng, scope, depth - 1, counter),
            plain(rng, scope, depth - 1, counter),
            plain(rng, scope, depth - 1, counter),
        ),
        3 => Term::down(plain(rng, scope, depth - 1, counter), plain(rng, scope, depth - 1, counter)),
        _ => {
            let x = fresh(counter);
            let arg = plain(rng, scope, depth - 1, counter);
            let mut inner = scope.to_vec();
            inner.push(x.clone());
            Term::app(Term::lam(&x, plain(rng, &inner, depth - 1, counter)), arg)
        }
    }
}

/// A base-typed term with exactly one complete or let-partial use of `f`
/// (arity 2), in positions the normalizer can rewrite.
pub fn random_body(rng: &mut impl Rng, f: &str, scope: &[Name], depth: u32, counter: &mut u32) -> TermRef {
    let call = |rng: &mut ChaCha8Rng, counter: &mut u32| {
        Term::apps(Term::var(f), [plain(rng, scope, 1, counter), plain(rng, scope, 1, counter)])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let rng = &mut rng;
    if depth == 0 {
        return call(rng, counter);
    }
    let sub = |rng: &mut ChaCha8Rng, counter: &mut u32| random_body(rng, f, scope, depth - 1, counter);
    match rng.gen_range(0..8) {
        0 => call(rng, counter),
        1 => Term::op(*OPS.choose(rng).unwrap(), sub(rng, counter)),
        2 => {
            let s = plain(rng, scope, 1, counter);
            let other = plain(rng, scope, 1, counter);
            if rng.gen_bool(0.5) {
                Term::cond(s, sub(rng, counter), other)
            } else {
                Term::cond(s, other, sub(rng, counter))
            }
        }
        3 => Term::down(sub(rng, counter), plain(rng, scope, 1, counter)),
        4 => {
            // A let whose body mentions the bound variable.
            let x = fresh(counter);
            let arg = plain(rng, scope, 1, counter);
            let mut inner = scope.to_vec();
            inner.push(x.clone());
            Term::app(Term::lam(&x, random_body(rng, f, &inner, depth - 1, counter)), arg)
        }
        5 => {
            // f in argument position of an abstraction.
            let x = fresh(counter);
            let y = fresh(counter);
            let mut inner = scope.to_vec();
            inner.extend([x.clone(), y.clone()]);
            let body = plain(rng, &inner, 1, counter);
            Term::apps(Term::lam(&x, Term::lam(&y, body)), [plain(rng, scope, 1, counter), sub(rng, counter)])
        }
        6 => {
            // Partial application of f let-bound and completed by the caller.
            let x = fresh(counter);
            let arg = plain(rng, scope, 1, counter);
            let mut inner = scope.to_vec();
            inner.push(x.clone());
            let partial = Term::app(Term::var(f), plain(rng, &inner, 1, counter));
            Term::apps(Term::lam(&x, partial), [arg, plain(rng, scope, 1, counter)])
        }
        _ => {
            // A two-argument let with one binder and the recursion in the body.
            let x = fresh(counter);
            let y = fresh(counter);
            let with_y = Term::lam(&y, Term::op(BasicOp::C1, Term::apps(Term::var(f), [Term::var(&y), Term::var(&x)])));
            Term::apps(Term::lam(&x, with_y), [plain(rng, scope, 1, counter), plain(rng, scope, 1, counter)])
        }
    }
}

/// Recursion bodies over parameters `c` and `u` with recursive variable `f`.
pub fn recursion_bodies(seed: u64, count: usize) -> Vec<TermRef> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scope: Vec<Name> = vec!["c".into(), "u".into()];
    (0..count)
        .map(|_| {
            let mut counter = 0;
            let depth = rng.gen_range(1..5);
            random_body(&mut rng, "f", &scope, depth, &mut counter)
        })
        .collect()
}

/// `(fn f => fn c u => body) impl`: the body as a closed two-argument
/// function, with `f` instantiated by `imp`.
pub fn close_body(body: &TermRef, imp: &TermRef) -> TermRef {
    Term::app(Term::lam("f", Term::lam("c", Term::lam("u", body.clone()))), imp.clone())
}

/// Stand-ins for the recursive variable when comparing bodies.
pub fn recursion_stand_ins() -> Vec<TermRef> {
    vec![
        Term::lam("p", Term::lam("q", Term::op(BasicOp::C0, Term::var("q")))),
        Term::lam("p", Term::lam("q", Term::down(Term::var("p"), Term::var("q")))),
        Term::lam("p", Term::lam("q", Term::cond(Term::var("p"), Term::constant("1"), Term::var("q")))),
    ]
}

/// A clocked recursion over a random step, applied to two strings.
fn random_recursion(rng: &mut impl Rng, scope: &[Name], depth: u32, counter: &mut u32) -> TermRef {
    let step = if rng.gen_bool(0.5) { BasicOp::C0 } else { BasicOp::C1 };
    let rec = Term::apps(Term::var("g"), [Term::var("b"), Term::op(BasicOp::D, Term::var("v"))]);
    let body = Term::cond(Term::var("v"), Term::op(step, rec), plain(rng, &["b".into(), "v".into()], 1, counter));
    let ty = Type::curried([Type::base(Label::EPS), Type::base(Label::EPS)], Type::base(Label::D));
    let crec = Term::crec(Bits::empty(), Some(ty), "g", &["b", "v"], body);
    Term::apps(crec, [plain(rng, scope, depth, counter), plain(rng, scope, depth, counter)])
}

fn closed(rng: &mut impl Rng, scope: &[Name], depth: u32, counter: &mut u32) -> TermRef {
    if depth > 0 && rng.gen_bool(0.2) {
        return random_recursion(rng, scope, depth - 1, counter);
    }
    if depth > 0 && rng.gen_bool(0.3) {
        let x = fresh(counter);
        let arg = closed(rng, scope, depth - 1, counter);
        let mut inner = scope.to_vec();
        inner.push(x.clone());
        return Term::app(Term::lam(&x, closed(rng, &inner, depth - 1, counter)), arg);
    }
    plain(rng, scope, depth, counter)
}

/// `count` closed terms that typecheck, with their derivations.
pub fn typed_terms(seed: u64, count: usize) -> Vec<(TermRef, Derivation)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut counter = 0;
        let depth = rng.gen_range(1..6);
        let t = closed(&mut rng, &[], depth, &mut counter);
        if let Ok(d) = infer(&t, &TypeContext::new()) {
            out.push((t, d));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{evaluate, Env, OracleTable};
    use crate::normalize::{dagger, plain_affine_position};

    #[test]
    fn generated_terms_are_closed_and_typed() {
        let ts = typed_terms(5, 40);
        assert_eq!(ts.len(), 40);
        assert!(ts.iter().all(|(t, d)| t.free_vars().is_empty() && d.ty.is_base()));
        assert!(ts.iter().any(|(t, _)| !t.crec_sites().is_empty()));
    }

    #[test]
    fn generated_bodies_normalize() {
        for b in recursion_bodies(9, 50) {
            assert!(b.occurs_free("f"));
            let n = dagger(&b, "f", 2).unwrap();
            assert!(plain_affine_position(&n, "f", 2), "{}", crate::parser::pretty_term(&n));
        }
    }

    #[test]
    fn bodies_evaluate_under_stand_ins() {
        let o = OracleTable::new();
        for b in recursion_bodies(3, 20) {
            for imp in recursion_stand_ins() {
                let t = Term::apps(close_body(&b, &imp), [Term::constant("01"), Term::constant("110")]);
                assert!(evaluate(&t, &Env::new(), &o, Some(100_000)).is_ok());
            }
        }
    }
}
