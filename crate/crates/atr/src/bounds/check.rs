//! Empirical checks of synthesized bounds against measured evaluation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ProgramBound;
use crate::bits::Bits;
use crate::corpus::CorpusProgram;
use crate::eval::{evaluate_applied, CostReport, EvalError};
use crate::tcpoly::{eval_erased, PolyError, Valuation};

/// Input sizes used by the cost soundness check.
pub const GRID: [u64; 6] = [1, 2, 4, 8, 16, 32];

/// How random inputs of a given length are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InputShape {
    Bits,
    /// A valid self-delimiting list encoding, or plain bits half the time.
    List,
}

/// The shapes of a corpus program's inputs, by name; unknown programs get
/// plain bits everywhere.
pub fn input_shapes(name: &str, arity: usize) -> Vec<InputShape> {
    use InputShape::*;
    match name {
        "cons" | "insert" => vec![Bits, List],
        "head" | "tail" | "ins_sort" | "sel_sort" | "reverse" => vec![List],
        _ => vec![Bits; arity],
    }
}

pub fn random_bits(rng: &mut impl Rng, n: usize) -> Bits {
    Bits::from_vec((0..n).map(|_| rng.gen_range(0..2)).collect())
}

/// A random list encoding of exactly `n` bits.
pub fn random_encoding(rng: &mut impl Rng, n: usize) -> Bits {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // A `1b` pair needs room for the terminating `0` after it.
        if n - out.len() >= 3 && rng.gen_bool(0.7) {
            out.push(1);
            out.push(rng.gen_range(0..2));
        } else {
            out.push(0);
        }
    }
    Bits::from_vec(out)
}

pub fn random_input(rng: &mut impl Rng, shape: InputShape, n: usize) -> Bits {
    match shape {
        InputShape::List if rng.gen_bool(0.5) => random_encoding(rng, n),
        _ => random_bits(rng, n),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Violation {
    pub inputs: Vec<String>,
    pub measured_cost: u64,
    pub measured_length: usize,
    pub bound_cost: u128,
    pub bound_length: u128,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CheckSummary {
    pub trials: usize,
    pub violations: Vec<Violation>,
}

impl CheckSummary {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("program result is not a string")]
    NotAString,
}

/// Compares one measured run against the bound at the inputs' lengths.
pub fn check_run(
    program: &CorpusProgram,
    bound: &ProgramBound,
    args: &[Bits],
    fuel: Option<u64>,
) -> Result<(CostReport, Option<Violation>), CheckError> {
    let lens: Vec<u64> = args.iter().map(|a| a.len() as u64).collect();
    let (bc, bp) = bound.eval_at(&lens, &program.oracles)?;
    let run = evaluate_applied(&program.term, args, &program.oracles, fuel)?;
    let len = run.value.as_bits().ok_or(CheckError::NotAString)?.len();
    let violation = (run.total_cost as u128 > bc || len as u128 > bp).then(|| Violation {
        inputs: args.iter().map(|a| a.to_string()).collect(),
        measured_cost: run.total_cost,
        measured_length: len,
        bound_cost: bc,
        bound_length: bp,
    });
    Ok((run, violation))
}

/// Runs `trials` random inputs at each grid size, every input of that length.
pub fn check_bounding(
    program: &CorpusProgram,
    bound: &ProgramBound,
    grid: &[u64],
    trials: usize,
    seed: u64,
) -> Result<CheckSummary, CheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = input_shapes(&program.name, program.arity());
    let mut summary = CheckSummary::default();
    for &n in grid {
        for _ in 0..trials {
            let args: Vec<Bits> = shapes.iter().map(|s| random_input(&mut rng, *s, n as usize)).collect();
            let (_, v) = check_run(program, bound, &args, None)?;
            summary.trials += 1;
            summary.violations.extend(v);
        }
    }
    Ok(summary)
}

/// A recursion whose depth exceeded its termination bound.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DepthViolation {
    pub site: u32,
    pub entry: Vec<u64>,
    pub depth: u64,
    pub bound: Option<u128>,
}

/// Checks every recursion chain of `run` against `2 + a1` at its entry lengths.
pub fn check_termination(bound: &ProgramBound, run: &CostReport, base: &Valuation) -> Vec<DepthViolation> {
    let by_site: BTreeMap<_, _> = bound.crecs.iter().map(|c| (c.site, c)).collect();
    let mut out = Vec::new();
    for chain in &run.chains {
        let Some(c) = by_site.get(&chain.site) else {
            out.push(DepthViolation { site: chain.site.0, entry: chain.entry.clone(), depth: chain.depth, bound: None });
            continue;
        };
        let mut v = base.clone();
        for ((x, _), n) in c.decomposition.params.iter().zip(&chain.entry) {
            v = v.with_nat(x, *n as u128);
        }
        let b = eval_erased(&c.termination_bound(), &v).and_then(|p| p.as_nat()).ok();
        if b.map_or(true, |b| chain.depth as u128 > b) {
            out.push(DepthViolation { site: chain.site.0, entry: chain.entry.clone(), depth: chain.depth, bound: b });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::program_bound;
    use crate::corpus::{corpus_program, decode_list};
    use crate::tcpoly::Poly;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn encodings_have_exact_length_and_decode(n in 0usize..64, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = random_encoding(&mut rng, n);
            prop_assert_eq!(e.len(), n);
            prop_assert!(decode_list(&e).is_ok());
        }
    }

    #[test]
    fn reverse_bound_holds_on_a_small_grid() {
        let p = corpus_program("reverse").unwrap();
        let b = program_bound(&p.derivation).unwrap();
        let s = check_bounding(&p, &b, &[1, 4, 9], 10, 7).unwrap();
        assert_eq!(s.trials, 30);
        assert!(s.passed(), "{:?}", s.violations);
    }

    #[test]
    fn halved_bound_is_caught() {
        let p = corpus_program("tail").unwrap();
        let mut b = program_bound(&p.derivation).unwrap();
        b.cost = Poly::mul(Poly::nat(0), b.cost.clone());
        let s = check_bounding(&p, &b, &[4], 5, 1).unwrap();
        assert_eq!(s.violations.len(), 5);
    }

    #[test]
    fn termination_holds_for_reverse() {
        let p = corpus_program("reverse").unwrap();
        let b = program_bound(&p.derivation).unwrap();
        let l = crate::corpus::encode_list(&[Bits::parse("1").unwrap(), Bits::parse("").unwrap()]);
        let run = evaluate_applied(&p.term, &[l], &p.oracles, None).unwrap();
        assert!(!run.chains.is_empty());
        assert!(check_termination(&b, &run, &Valuation::new()).is_empty());
    }
}
