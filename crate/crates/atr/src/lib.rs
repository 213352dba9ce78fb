//! Affine tiered recursion: syntax, typing, cost-instrumented evaluation and
//! polynomial time-bound synthesis.

pub mod bits;
pub mod bounds;
pub mod cli;
pub mod corpus;
pub mod eval;
pub mod machine;
pub mod normalize;
pub mod parser;
pub mod scope;
pub mod syntax;
pub mod tcpoly;
pub mod typecheck;

pub use bits::Bits;
pub use syntax::{Label, Term, TermKind, Type};
