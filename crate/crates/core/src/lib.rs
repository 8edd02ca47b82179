//! Robust battery dispatch toolkit.
//!
//! A battery that cannot charge and discharge at the same time has a
//! non-convex feasible set. This crate works around that by simulating the
//! battery under three related models (standard two-input, complementarity-
//! relaxed, and simplified single-input) whose trajectories provably sandwich
//! the true state of charge, then dispatching against the two envelope models
//! with a plain convex QP. The resulting schedule is guaranteed to keep the
//! realized state of charge within its limits; a branch-and-bound baseline
//! with exact complementarity is included for optimality-gap measurements.
//!
//! Modules:
//! * [`battery`] — battery models, input splitting, mismatch bounds
//! * [`qp`] — self-contained convex QP solver (operator splitting)
//! * [`dispatch`] — the robust dispatch problem: assembly, solve, certification
//! * [`bnb`] — exact baseline: branch-and-bound over charge/discharge modes
//! * [`harness`] — scenarios, metrics, benchmark orchestration, CSV IO

pub mod battery;
pub mod bnb;
pub mod dispatch;
pub mod harness;
pub mod linalg;
pub mod qp;
