//! Lightweight visual-inertial odometry with online test-time adaptation
//! through a dictionary of BatchNorm affine parameters.
//!
//! Module map:
//! - [`geometry`]: pose deltas, SE(3) utilities, trajectory metrics
//! - [`sensorsim`]: synthetic camera + IMU sequences, KITTI-layout ingestion
//! - [`corruption`]: visual corruptions and noise schedules
//! - [`vionet`]: the network, its BN dictionary and manual gradients
//! - [`training`]: two-stage supervised training
//! - [`adaptation`]: proxies, domain matching and the online TTA loop
//! - [`harness`]: experiment configs, protocols, reports and artifacts

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positives
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod checkpoint;
pub mod corruption;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod harness;
pub mod image;
pub mod nn;
pub mod sensorsim;
pub mod training;
pub mod vionet;

pub use error::{Error, Result};
pub use exec::Exec;
