use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::conv_output_len;

/// Shape hyperparameters of the dual-path network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Window length in samples (10 s at 64 Hz).
    pub window_samples: usize,
    pub eeg_channels: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    /// Filters of the convolution in each path.
    pub conv_filters: usize,
    pub dense1_units: usize,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            window_samples: 640,
            eeg_channels: 64,
            conv_kernel: 10,
            conv_stride: 3,
            conv_filters: 8,
            dense1_units: 16,
            embed_dim: 16,
            lstm_hidden: 16,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window_samples", self.window_samples),
            ("eeg_channels", self.eeg_channels),
            ("conv_kernel", self.conv_kernel),
            ("conv_stride", self.conv_stride),
            ("conv_filters", self.conv_filters),
            ("dense1_units", self.dense1_units),
            ("embed_dim", self.embed_dim),
            ("lstm_hidden", self.lstm_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.conv_kernel > self.window_samples {
            return Err(Error::InvalidConfig(format!(
                "conv_kernel {} exceeds window_samples {}",
                self.conv_kernel, self.window_samples
            )));
        }
        if self.lstm_hidden != self.embed_dim {
            return Err(Error::InvalidConfig(format!(
                "lstm_hidden ({}) must equal embed_dim ({})",
                self.lstm_hidden, self.embed_dim
            )));
        }
        Ok(())
    }

    /// Embedding columns produced per window by either path.
    pub fn steps(&self) -> usize {
        conv_output_len(self.window_samples, self.conv_kernel, self.conv_stride)
            .expect("validated config")
    }

    /// Shapes of all trainable tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (c, k, f) = (self.eeg_channels, self.conv_kernel, self.conv_filters);
        let (d1, e, h) = (self.dense1_units, self.embed_dim, self.lstm_hidden);
        vec![
            ("eeg_conv.W", vec![f, c, k]),
            ("eeg_conv.b", vec![f]),
            ("eeg_dense1.W", vec![d1, f]),
            ("eeg_dense1.b", vec![d1]),
            ("eeg_dense2.W", vec![e, d1]),
            ("eeg_dense2.b", vec![e]),
            ("env_conv.W", vec![f, 1, k]),
            ("env_conv.b", vec![f]),
            ("lstm.W_i", vec![h, f]),
            ("lstm.W_f", vec![h, f]),
            ("lstm.W_c", vec![h, f]),
            ("lstm.W_o", vec![h, f]),
            ("lstm.U_i", vec![h, h]),
            ("lstm.U_f", vec![h, h]),
            ("lstm.U_c", vec![h, h]),
            ("lstm.U_o", vec![h, h]),
            ("lstm.b_i", vec![h]),
            ("lstm.b_f", vec![h]),
            ("lstm.b_c", vec![h]),
            ("lstm.b_o", vec![h]),
        ]
    }
}

/// Tensors of the envelope path (frozen during transfer learning).
pub fn is_envelope_path(name: &str) -> bool {
    name.starts_with("env_conv.") || name.starts_with("lstm.")
}
