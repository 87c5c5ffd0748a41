//! SLOPE pattern recovery toolkit: pattern algebra, sorted-l1 geometry, a
//! certified proximal-gradient solver, exact recovery certificates,
//! irrepresentability diagnostics, tuning-sequence generation and a
//! reproducible Monte-Carlo harness.

pub mod error;
pub mod experiments;
pub mod lambda_seq;
pub mod numerics;
pub mod pattern;
pub mod recovery;
pub mod solver;
pub mod sorted_l1;

pub use error::{Result, SlopeError};
pub use numerics::{Matrix, SeededRng, Tolerances, Vector};
pub use pattern::{patt, patt_with_tol, SlopePattern};
pub use sorted_l1::TuningSequence;
