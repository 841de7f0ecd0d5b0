use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use envtrack::baseline::BaselineConfig;
use envtrack::dataio::DataConfig;
use envtrack::model::NetworkConfig;
use envtrack::synthgen::SynthConfig;
use envtrack::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Every knob of an experiment; missing sections and fields take defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub baseline: BaselineConfig,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.network.validate()?;
        Ok(cfg)
    }

    /// The data window must equal the network's input length.
    pub fn check_window(&self, sample_rate_hz: u32) -> Result<()> {
        let window = self.data.windowing(sample_rate_hz)?.window;
        if window != self.network.window_samples {
            bail!(
                "data window of {} s is {window} samples at {sample_rate_hz} Hz but the network expects {} samples",
                self.data.window_s,
                self.network.window_samples
            );
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// `dir/model.nmw` → `dir/model.<suffix>`
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// What `train` records next to the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCard {
    pub scenario: String,
    pub subjects: Vec<String>,
    pub init: Option<String>,
    pub config: ExperimentConfig,
}

impl ModelCard {
    pub fn read(model: &Path) -> Result<Self> {
        let path = sidecar(model, "config.json");
        let text = fs::read_to_string(&path)
            .with_context(|| format!("reading model config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, model: &Path) -> Result<()> {
        let path = sidecar(model, "config.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
