//! Quantum-trajectory unravellings of a Lindblad master equation, and the
//! total, dynamical and geometric phases they assign to each trajectory.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod lindblad;
pub mod phase;
pub mod quantum;
pub mod rng;
pub mod sse;
pub mod tol;
pub mod verify;

pub use error::{Error, Result};
