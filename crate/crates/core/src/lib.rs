//! Match/mismatch classification of (EEG, speech envelope) segments.
//!
//! The crate holds everything the `envtrack` binary wires together:
//!
//! * [`ndcore`]: tensors and a reverse-mode tape
//! * [`model`]: the dual-path CNN/LSTM embedding network
//! * [`training`]: Adam, early stopping, SD/SI/TL scenarios
//! * [`sigproc`]: envelope extraction and EEG conditioning
//! * [`dataio`]: containers, windowing, mismatch sampling
//! * [`synthgen`]: forward-model synthetic subjects
//! * [`baseline`]: lagged ridge decoder with Spearman scoring
//! * [`stats`]: accuracy summaries and significance tests

pub mod baseline;
pub mod dataio;
pub mod error;
pub mod model;
pub mod ndcore;
pub mod sigproc;
pub mod stats;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
