//! Stochastic bricklaying from point-cloud surveys.
//!
//! The crate is organised as a staged pipeline:
//!
//! - [`ingest`]: parse labeled point clouds, fit the wall plane, project to 2D.
//! - [`extract`]: cluster brick points, fit rectangles, group rows, measure joints.
//! - [`stats`]: per-parameter distributions, persistence and seeded sampling.
//! - [`grammar`]: the seven labeled shape rules and the state they rewrite.
//! - [`generate`]: derivations, wall files, validation and synthetic clouds.
//! - [`render`]: SVG output and generated-vs-source comparison.
//!
//! All lengths are millimeters.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod extract;
pub mod generate;
pub mod grammar;
pub mod ingest;
pub mod render;
pub mod stats;

pub use error::{Error, Result};
