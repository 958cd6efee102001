//! Exact dynamic-programming engines for generalized policy iteration and
//! its value-improved extension, together with a catalog of greedification
//! operators and numeric certification suites that classify them.
//!
//! Everything operates on small, fully enumerated MDPs: evaluation is exact
//! (backward induction on layered DAGs, linear solves or fixed-point
//! iteration on discounted stationary MDPs), improvement is a pure function
//! of `(policy, q)`, and every sampled quantity is driven by an explicit
//! seed. All types are immutable values after construction.

// Negated float comparisons (`!(x > 0.0)`) are deliberate: they reject NaN
// where the suggested rewrite would accept it. Indexed loops over states and
// actions are the tabular idiom here; most walk several tensors in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod dp;
pub mod engine;
pub mod error;
pub mod expectile;
pub mod instances;
pub mod io;
pub mod mdp;
pub mod operators;
pub mod policy;
pub mod value;
pub mod verify;

pub use engine::{EngineConfig, EvalMode, IterationRecord, PiInit, QInit, RunTrace, StoppingCheck};
pub use error::{DpError, EngineError, MdpError, OperatorError};
pub use instances::{Counterexample, QSequence};
pub use mdp::{time_augment, validate_mdp, FiniteMdp, ValidationReport, Violation};
pub use operators::{BetaSchedule, OperatorConfig, OperatorKind};
pub use policy::TabularPolicy;
pub use verify::{AssertionOutcome, CertificationReport, CheckOutcome, SuiteReport, Verdict, Witness};
pub use value::{QTable, ValueVector};
