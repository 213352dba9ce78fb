//! Programs the typechecker must reject, each with the error it must report.

use crate::parser::parse_program;
use crate::typecheck::{infer, ErrorCode, TypeContext};

#[derive(Debug, Clone, Copy)]
pub struct NegativeCase {
    pub name: &'static str,
    pub source: &'static str,
    pub expected: ErrorCode,
}

pub const NEGATIVE_CASES: &[NegativeCase] = &[
    NegativeCase {
        name: "down_bound_reuses_call",
        source: "fn (b : N_eps) => letrec f : N_eps -> N_eps -> N_eps =
            fn c u => if u then down (f c (d u)) (f c (d u)) else u in f b b end",
        expected: ErrorCode::AffineReuse,
    },
    NegativeCase {
        name: "two_calls_under_one_operator",
        source: "fn (b : N_eps) => letrec f : N_eps -> N_eps -> N_eps =
            fn c u => if u then down (c0 (f c (d u))) (c1 (f c (d u))) else u in f b b end",
        expected: ErrorCode::AffineReuse,
    },
    NegativeCase {
        name: "nested_call_in_argument",
        source: "fn (b : N_eps) => letrec f : N_eps -> N_eps -> N_eps =
            fn c u => if u then f c (f c (d u)) else u in f b b end",
        expected: ErrorCode::AffineInOperatorAndArgument,
    },
    NegativeCase {
        name: "call_as_its_own_clock",
        source: "fn (b : N_eps) => letrec f : N_eps -> N_eps -> N_eps =
            fn c u => if u then f (f c (d u)) u else u in f b b end",
        expected: ErrorCode::AffineInOperatorAndArgument,
    },
    NegativeCase {
        name: "recursive_result_as_test",
        source: "fn (b : N_eps) => letrec f : N_eps -> N_eps -> N_d =
            fn c u => if f c (d u) then \"1\" else eps in f b b end",
        expected: ErrorCode::AffineInCondTest,
    },
    NegativeCase {
        name: "recursive_result_under_test_operator",
        source: "fn (b : N_eps) => letrec f : N_eps -> N_eps -> N_d =
            fn c u => if u then (if t1 (f c (d u)) then \"1\" else \"0\") else eps in f b b end",
        expected: ErrorCode::AffineInCondTest,
    },
    NegativeCase {
        name: "clock_above_computational_result",
        source: "letrec f : N_d -> N_d = fn u => if u then c0 (f (d u)) else u in f end",
        expected: ErrorCode::CrecClockCondition,
    },
    NegativeCase {
        name: "second_argument_below_clock",
        source: "letrec f : N_bd -> N_d -> N_eps -> N_eps = fn c u v => if u then f c (d u) v else v in f end",
        expected: ErrorCode::CrecClockCondition,
    },
    NegativeCase {
        name: "oracle_output_fed_back_as_argument",
        source: "oracle alpha : N_eps -> N_bd;
            fn (b : N_eps) => letrec f : N_eps -> N_d = fn u => if u then f (alpha u) else eps in f b end",
        expected: ErrorCode::ShiftNonEmptyAffine,
    },
    NegativeCase {
        name: "binary_oracle_output_as_argument",
        source: "oracle beta : N_eps -> N_eps -> N_bd;
            fn (b : N_eps) => letrec f : N_eps -> N_eps -> N_d =
            fn c u => if u then c1 (f c (beta c (d u))) else eps in f b b end",
        expected: ErrorCode::ShiftNonEmptyAffine,
    },
];

/// The code `infer` reports for a case, or `None` when it is accepted.
pub fn rejection(case: &NegativeCase) -> Result<Option<ErrorCode>, String> {
    let (_, term) = parse_program(case.source).map_err(|e| e.to_string())?;
    Ok(infer(&term, &TypeContext::new()).err().map(|e| e.code))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn every_case_is_rejected_with_its_code() {
        for case in NEGATIVE_CASES {
            assert_eq!(rejection(case).unwrap(), Some(case.expected), "{}", case.name);
        }
    }

    #[test]
    fn each_required_code_has_two_cases() {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for case in NEGATIVE_CASES {
            *counts.entry(case.expected.to_string()).or_default() += 1;
        }
        assert_eq!(counts.len(), 5);
        assert!(counts.values().all(|&n| n >= 2), "{:?}", counts);
    }
}
