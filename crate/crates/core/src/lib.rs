//! Head-pose-conditioned prediction of a walking person's 3D head position.
//!
//! A constant-velocity Kalman filter tracks the head; its one-step
//! displacement is rotated by the filtered head-pose angle (nose yaw relative
//! to waist yaw), blended with the unrotated displacement and extrapolated
//! over the horizon. The crate also ships a synthetic walker simulator and
//! the evaluation harness used to compare against plain Kalman
//! extrapolation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod kalman;
pub mod predictor;
pub mod stats;
pub mod stream;
pub mod walker_sim;

pub use error::{Error, Result};
