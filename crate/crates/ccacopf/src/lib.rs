//! Chance-constrained AC optimal power flow (CC-ACOPF) toolkit.
//!
//! The pipeline implemented here replaces the nonconvex AC power-flow
//! equations with a learned convex quadratic surrogate and solves the
//! resulting chance-constrained dispatch problem with scenario
//! optimization, either by the conventional one-shot scenario method or
//! by the two-stage FAST technique (solve with a small initial batch,
//! then detune against a validation batch).
//!
//! Modules, in pipeline order:
//!
//! * [`grid`] — MATPOWER-subset case parsing and bus admittance matrices.
//! * [`acpf`] — exact rectangular-coordinates power flow: injection and
//!   branch-flow evaluation, the equivalent quadratic forms, a Newton
//!   solver, and labeled training-set generation.
//! * [`surrogate`] — boosted convexity-constrained quadratic regression
//!   of the power-flow maps, plus model (de)serialization.
//! * [`sizing`] — scenario-count arithmetic: exact confidence tails and
//!   the closed-form sample bounds for both solution methods.
//! * [`scenario`] — the convex scenario program, a block-structured
//!   barrier solver, the FAST/CSM drivers, and violation estimation.
//!
//! Everything numeric is generic over [`scalar::Scalar`]; the aliases
//! below fix `f64`, which is what the CLI and the test suites use.

pub mod acpf;
pub mod grid;
pub mod scalar;
pub mod scenario;
pub mod sizing;
pub mod surrogate;
pub mod util;

pub use scalar::Scalar;

// f64 aliases are appended as modules land.









