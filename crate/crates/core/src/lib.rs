//! Numerical verification of the sharp stability estimate for critical points
//! of the p-Sobolev inequality near a single Talenti bubble.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bubble;
pub mod dualnorm;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod linalg;
pub mod projection;
pub mod spectrum;
pub mod vectorial;

pub use bubble::{Branch, Bubble, Exponents, Params};
pub use error::{Error, Result};
pub use grid::{make_grid, ModeEntry, ModeFn, RadialGrid};
