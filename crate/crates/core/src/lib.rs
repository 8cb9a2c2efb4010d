//! Truncated Wigner simulation of hybrid spin-squeezing state preparation.
//!
//! A two-mode Bose condensate is represented by an ensemble of stochastic
//! amplitude pairs `(α₁, α₂)`. The crate evolves that ensemble through a
//! quantum nondemolition (QND) measurement with homodyne feedback, a rotation
//! about `J_x`, one-axis twisting (OAT) and a final variance-minimising
//! rotation, and reports the Wineland squeezing parameter of the result.
//!
//! Module map:
//!
//! * [`phase_space`]: ensembles, rotations, spin moments, squeezing metrics.
//! * [`physics`]: laboratory-to-dimensionless parameter conversions.
//! * [`qnd`]: measurement stage with spontaneous-emission loss and feedback.
//! * [`oat`]: twisting stage and the exact Dicke-basis reference in [`oat::dicke`].
//! * [`hybrid`]: the full pipeline including shot-to-shot imperfections.
//! * [`optimize`]: common-random-number search over `(η, θ_QND)`.
//! * [`scenarios`]: configuration, tables and the command-line front end.

// `!(x > 0.0)` is used deliberately so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hybrid;
pub mod oat;
pub mod optimize;
pub mod phase_space;
pub mod physics;
pub mod qnd;
pub mod rng;
pub mod scenarios;
pub mod stats;

pub use error::{Error, Result};
pub use phase_space::{SpinMoments, SqueezingEstimate, TrajectoryEnsemble};
