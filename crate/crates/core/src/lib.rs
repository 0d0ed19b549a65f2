//! Testbed for measuring simplicity bias in small fully-connected networks.
//!
//! The crate is organised around the experiment pipeline:
//!
//! * [`datagen`] builds the synthetic slab / linear / noise distributions,
//!   applies random rotations and persists datasets.
//! * [`mlp`] is a from-scratch multilayer perceptron with analytic gradients,
//!   optimizers, dropout, ensembling and weight interpolation.
//! * [`metrics`] computes standard, randomized and robust metrics.
//! * [`attacks`] contains PGD, universal perturbations and adversarial training.
//! * [`theory`] evaluates the closed-form population gradients on the
//!   linear-slab-noise distribution and checks trained weights against the
//!   predicted trajectory.
//! * [`harness`] orchestrates full experiments and writes reports.

pub mod attacks;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod mlp;
pub mod seed;
pub mod theory;

pub use error::{Error, Result};
