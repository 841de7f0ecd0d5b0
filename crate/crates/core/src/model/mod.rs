//! Dual-path embedding network.
//!
//! EEG path: strided conv, two time-distributed dense layers, unit-norm
//! columns. Envelope path: strided conv, LSTM, unit-norm columns. The two
//! embedding sequences are compared step by step with a dot product and
//! trained with per-step binary cross entropy.

mod config;
mod network;
mod params;

pub use config::{is_envelope_path, NetworkConfig};
pub use network::{
    bce_loss, classify_segment, decide, eeg_path, eeg_path_forward, env_path_forward,
    envelope_path, lstm_forward, lstm_sequence, match_probability, segment_forward, segment_loss,
    similarity_scores, Decision, EmbeddingSequence, Label, LstmVars, LstmWeights,
    SegmentForward, SimilarityScores,
};
pub use params::{NetworkParams, ParamVars};
