//! Numerical laboratory for weighted Hardy, Sobolev and
//! Caffarelli–Kohn–Nirenberg inequalities on submanifolds of
//! rotationally symmetric model spaces.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod constants;
pub mod error;
pub mod geometry;
pub mod inequalities;
pub mod search;
pub mod warp;

pub use error::{LabError, Result};
