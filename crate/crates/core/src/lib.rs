//! User-lifetime prediction toolkit for community interaction logs.
//!
//! The pipeline runs in stages: [`events`] parses and labels a log,
//! [`features`] turns it into a windowed feature matrix, [`forest`] trains
//! CART-based random forests, and [`eval`] runs the cross-validation
//! experiments. [`synth`] generates seeded logs to exercise all of it.

pub mod error;
pub mod eval;
pub mod events;
pub mod features;
pub mod forest;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
