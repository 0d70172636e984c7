//! Free-boundary simulation of the porous medium equation by transforming
//! the moving-front problem to a fixed domain, plus solvers and diagnostics
//! for the degenerate linear parabolic equations that arise.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod domain;
pub mod error;
pub mod expr;
pub mod fichera;
pub mod fields;
pub mod linsolve;
pub mod numeric;
pub mod oracle;
pub mod pme;
pub mod taylor;
pub mod transform;

pub use error::{Error, ErrorClass, Result};
