//! Interval attacks on feedforward ReLU networks.
//!
//! Symbolic interval analysis ([`symbolic`]) bounds a network's logits over
//! an input box with lower and upper linear equations. The slope of those
//! equations, the interval gradient, summarizes the loss landscape over the
//! whole box and steers [`attacks::interval_attack`] toward sub-regions that
//! may contain violations; PGD then refines the reached point.

pub mod attacks;
pub mod data;
pub mod error;
pub mod nn;
pub mod symbolic;

pub use attacks::{AttackConfig, AttackKind, AttackOutcome, StepRule};
pub use error::{Error, Result};
pub use nn::{LabeledExample, Loss, Network};
pub use symbolic::{GradientMode, InputRegion, SymbolicBounds};
