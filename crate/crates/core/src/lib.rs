//! Camera-trajectory geometry rewards, metric-aware trajectory rescaling and
//! group-relative policy optimization of a small flow-matching trajectory
//! generator.

pub mod bank;
pub mod config;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod grpo;
pub mod metrics;
pub mod rescale;
pub mod se3;
pub mod seed;
pub mod traj_io;

pub use error::{Error, Result};
