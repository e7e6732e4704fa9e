//! Numerical free probability and random-matrix laboratory.
//!
//! The crate computes additive free convolutions through the subordination
//! system, evaluates the single ring limit law (annulus support and radial
//! density), and checks matrix-subordination identities, local laws and
//! delocalization statistics by seeded Monte Carlo simulation at desk scale.

pub mod freeconv;
pub mod measures;
pub mod quad;
pub mod rmt;

pub use measures::{Measure, NamedLaw, UpperHalfPoint};
