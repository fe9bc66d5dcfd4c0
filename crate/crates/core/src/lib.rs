//! Spiking line-detection preprocessing for event-camera streams.
//!
//! Events from a DVS sensor are routed into small banks of leaky
//! integrate-and-fire neurons that detect straight lines crossing square
//! regions of the sensor. The much sparser detector output then feeds a
//! spiking classifier. The crate also carries the dataset tooling, energy
//! accounting, classical baselines and a sweep harness used to compare the
//! two.

pub mod baselines;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod event;
pub mod format;
pub mod harness;
pub mod lif;
pub mod line_detect;
pub mod metrics;
pub mod parallel;
pub mod strategies;
pub mod synth;

pub use error::{Error, Result};
