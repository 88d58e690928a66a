//! Stokes flow through periodically perforated domains on a staggered grid.
//!
//! The crate builds `ε`-periodic perforations of a cube, solves the discrete
//! Stokes problem on them, computes unit-cell correctors and permeability,
//! compares against the Darcy limit and measures the large-scale regularity
//! quantities (excess decay, Caccioppoli, reverse Hölder, `W^{1,p}` bounds).

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cell;
pub mod config;
pub mod darcy;
pub mod error;
pub mod experiments;
pub mod extension;
pub mod forcing;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod regularity;
pub mod stokes;

pub use error::{Error, Result};
pub use nalgebra;
