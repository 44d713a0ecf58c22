#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Simulation and analysis of Hong-Ou-Mandel interference between heralded
//! photons from two independent, electronically synchronized pulsed
//! down-conversion sources.

pub mod analytic;
pub mod error;
pub mod fit;
pub mod oracle;
pub mod quadrature;
pub mod scan;
pub mod sync;
pub mod units;

pub use error::{Error, Result};
