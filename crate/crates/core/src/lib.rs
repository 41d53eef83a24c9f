//! Preoperative planning for robot-assisted vitreoretinal surgery.
//!
//! The pipeline turns a target picked on a fundus image into a 3D retinal
//! position, proposes an eye tilt that brings the microscope's visible area
//! onto it, selects a trocar and the robot's initial tilt, shifts the PCJM
//! initial position so the working angle is centred on the approach, and
//! finally solves the joint targets (θ₂, θ₄, depth) that put the instrument
//! tip on the retina.
//!
//! Module map:
//!
//! * [`geometry`] – frames, rotations, spherical coordinates, RCM line and the
//!   tip-on-sphere constraint.
//! * [`fundus`] – boundary detection on fundus rasters, pixel → polar
//!   conversion and visual-axis compensation.
//! * [`posture`] – eye tilt proposal.
//! * [`trocar`] – trocar layout, selection, robot initial tilt and Y-axis
//!   refinement angle.
//! * [`robot`] – reduced PCJM model, initial-position sweep, joint solve and
//!   RCM-constrained instrument pose.
//! * [`pipeline`] – composition of the above for a batch of targets, plus the
//!   simulated execution used as a closed-loop check.
//! * [`access`] – sampled visible / accessible retinal regions.
//! * [`errorlab`] – error-source injection, sweeps and Monte Carlo.
//! * [`workflow`] – scenes, plan records and the flat-file workspace.

pub mod access;
pub mod error;
pub mod errorlab;
pub mod fundus;
pub mod geometry;
pub mod pipeline;
pub mod posture;
pub mod robot;
pub mod trocar;
pub mod workflow;

pub use error::{Error, Result};

/// Engine version stamped into every plan record.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
