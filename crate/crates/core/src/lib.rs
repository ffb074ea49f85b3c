//! Joint classification and prediction of sleep stages from epoch-based
//! multichannel physiological recordings.

pub mod aggregate;
mod binio;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod network;
pub mod numeric;
pub mod signal_io;
pub mod synth;
pub mod tfr;
pub mod training;

pub use error::{Error, Result};
