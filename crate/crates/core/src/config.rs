//! Run configuration: one TOML document with a section per component.
//! Unknown keys anywhere are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::model::{Fusion, ModelConfig};
use crate::training::TrainingConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_units: usize,
    pub num_categories: usize,
    pub time_step: usize,
    pub fusion: Fusion,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            hidden_units: m.hidden_units,
            num_categories: m.num_categories,
            time_step: m.time_step,
            fusion: m.fusion,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub flow: FlowParams,
    pub backbone: BackboneConfig,
    pub model: ModelSection,
    pub training: TrainingConfig,
}

/// `(section, key, description)` for every configuration key.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "synth",
        "num_motion_categories",
        "categories that differ only by sprite trajectory",
    ),
    (
        "synth",
        "num_appearance_categories",
        "categories that differ only by static sprite",
    ),
    (
        "synth",
        "train_clips_per_category",
        "training clips generated per category",
    ),
    (
        "synth",
        "test_clips_per_category",
        "test clips generated per category",
    ),
    ("synth", "frame_size", "side of the square frames in pixels"),
    (
        "synth",
        "frames_per_clip",
        "frames per generated clip (at least 4)",
    ),
    (
        "synth",
        "noise_std",
        "standard deviation of additive pixel noise, intensities in [0, 1]",
    ),
    ("synth", "fps", "nominal frame rate stored with each clip"),
    (
        "synth",
        "seed",
        "generator seed; train and test use disjoint derived streams",
    ),
    (
        "flow",
        "alpha",
        "Horn-Schunck smoothness weight on the 0-255 intensity scale",
    ),
    ("flow", "iterations", "Jacobi sweeps per warp"),
    (
        "flow",
        "pyramid_levels",
        "coarse-to-fine levels, each half the previous size",
    ),
    (
        "flow",
        "warps_per_level",
        "re-linearisations per pyramid level",
    ),
    (
        "backbone",
        "input_size",
        "side of the square image fed to each stream",
    ),
    (
        "backbone",
        "stage_channels",
        "output channels per stage; each stage ends in 2x2 max pooling",
    ),
    (
        "backbone",
        "convs_per_stage",
        "3x3 conv + ReLU layers per stage",
    ),
    ("model", "hidden_units", "units of both LSTMs"),
    ("model", "num_categories", "number of activity categories"),
    (
        "model",
        "time_step",
        "(frame, flow) pairs per clip; clips are subsampled to time_step + 1 frames",
    ),
    (
        "model",
        "fusion",
        "per-frame fusion of the pooled vectors: \"lstm\" or \"sum\"",
    ),
    (
        "training",
        "lambda_weight",
        "weight of the clip loss against the summed frame losses",
    ),
    (
        "training",
        "rmsprop_lr",
        "learning rate of the first (rmsprop) phase",
    ),
    ("training", "sgd_lr", "learning rate after switching to SGD"),
    (
        "training",
        "fuzz",
        "constant added to the rmsprop denominator",
    ),
    ("training", "decay_rho", "rmsprop squared-gradient decay"),
    (
        "training",
        "batch_size",
        "clips per gradient step; the batch gradient is the mean",
    ),
    ("training", "max_epochs", "number of epochs"),
    (
        "training",
        "switch_patience",
        "consecutive stalled epochs before switching to SGD",
    ),
    (
        "training",
        "switch_threshold",
        "relative improvement of the smoothed loss counted as stalled",
    ),
    (
        "training",
        "ema_beta",
        "weight of the previous value in the smoothed loss",
    ),
    (
        "training",
        "seed",
        "seed for parameter initialisation and shuffling",
    ),
];

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.flow.validate()?;
        self.training.validate()?;
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            hidden_units: self.model.hidden_units,
            num_categories: self.model.num_categories,
            time_step: self.model.time_step,
            fusion: self.model.fusion,
        }
    }

    /// Overrides every seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.training.seed = seed;
    }
}

/// The default configuration with every key preceded by a comment
/// describing it.
pub fn reference() -> String {
    let defaults = RunConfig::default().to_toml_string();
    let mut out = String::from("# Configuration reference; every value shown is the default.\n");
    let mut section = "";
    for line in defaults.lines() {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = KEYS
                .iter()
                .find(|(s, _, _)| *s == name)
                .map_or("", |(s, _, _)| s);
        } else if let Some((key, _)) = line.split_once(" = ") {
            if let Some((_, _, doc)) = KEYS.iter().find(|(s, k, _)| *s == section && *k == key) {
                out.push_str(&format!("# {doc}\n"));
            }
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}
