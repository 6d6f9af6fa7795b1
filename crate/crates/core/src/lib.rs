//! Vital-sign estimation from multi-beam mmWave OFDM channel state information.
//!
//! The pipeline runs calibration ([`calib`]), phase preprocessing ([`prep`]),
//! beam and subcarrier selection ([`beams`]) and rate estimation ([`vitals`]).
//! [`synth`] generates captures with known ground truth.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod beams;
pub mod calib;
pub mod capture;
pub mod config;
pub mod dsp;
mod error;
pub mod pipeline;
pub mod prep;
pub mod synth;
pub mod vitals;

pub use capture::{read_capture, write_capture, BeamPair, CaptureMeta, CsiCapture, PairMatrix};
pub use config::Config;
pub use error::{Error, Result};
pub use prep::PhaseSeries;
pub use vitals::{Band, Method, VitalEstimate, VitalKind};
