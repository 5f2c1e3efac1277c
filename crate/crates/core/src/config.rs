//! Dataset presets and the resolved experiment configuration recorded in
//! every run manifest.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dvae::HyperParams;
use crate::error::{Error, Result};
use crate::kbembed::TransEConfig;
use crate::synth::SynthSpec;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Nyt122,
    Nyt71,
    Nyt27,
    Synth,
    Custom,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Nyt122 => "nyt122",
            Preset::Nyt71 => "nyt71",
            Preset::Nyt27 => "nyt27",
            Preset::Synth => "synth",
            Preset::Custom => "custom",
        }
    }

    /// Model hyperparameters of the preset. `custom` starts from the
    /// library defaults, which equal the nyt122 setting.
    pub fn hyper(&self) -> HyperParams {
        let base = HyperParams::default();
        match self {
            Preset::Nyt122 | Preset::Custom => HyperParams {
                n_clusters: 40,
                alpha0: 4.0,
                alpha_final: 1e-5,
                beta: 0.6,
                gamma: 0.9,
                ..base
            },
            Preset::Nyt71 => HyperParams {
                n_clusters: 30,
                alpha0: 2.0,
                alpha_final: 1e-4,
                beta: 0.8,
                gamma: 0.95,
                ..base
            },
            Preset::Nyt27 => HyperParams {
                n_clusters: 20,
                alpha0: 2.0,
                alpha_final: 1e-4,
                beta: 0.8,
                gamma: 0.3,
                ..base
            },
            Preset::Synth => HyperParams {
                n_clusters: 5,
                alpha0: 4.0,
                alpha_final: 1e-5,
                beta: 0.005,
                gamma: 0.9,
                dim: 16,
                ..base
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hyper: self.hyper(),
            ..TrainConfig::default()
        }
    }

    pub fn transe_config(&self) -> TransEConfig {
        match self {
            Preset::Synth => TransEConfig {
                dim: 16,
                ..TransEConfig::default()
            },
            _ => TransEConfig::default(),
        }
    }

    /// Synthetic data the `synth` preset is tuned for: the default
    /// generator with a KB that links each head to half of its tail type.
    pub fn synth_spec() -> SynthSpec {
        SynthSpec {
            kb_coverage: 0.5,
            ..SynthSpec::default()
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Preset::Nyt122, Preset::Nyt71, Preset::Nyt27, Preset::Synth, Preset::Custom]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset `{s}`")))
    }
}
