//! TOML run configuration shared by every CLI subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdr_recon::{MergeConfig, MergeMethod, TonemapParams};
use crate::imaging::DEFAULT_EVS;
use crate::masking::MaskConfig;
use crate::quality::SsimParams;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides `train.seed` when set.
    pub seed: Option<u64>,
    pub synth: SynthSection,
    pub train: TrainConfig,
    pub infer: InferSection,
    pub merge: MergeSection,
    pub tonemap: TonemapParams,
    pub evaluate: EvaluateSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub dorf: Option<PathBuf>,
    /// Strided pick of this many curves; all curves when unset.
    pub curve_count: Option<usize>,
    pub curve_names: Vec<String>,
    pub evs: Vec<f64>,
    pub bit_depth: u32,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            dorf: None,
            curve_count: None,
            curve_names: Vec::new(),
            evs: DEFAULT_EVS.to_vec(),
            bit_depth: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    pub evs: Vec<f64>,
    /// EV assigned to the input image.
    pub input_ev: f64,
    /// Output PNG depth; the input's depth when unset.
    pub bit_depth: Option<u32>,
    /// Mask applied before encoding; the checkpoint's training mask when unset.
    pub mask: Option<MaskConfig>,
}

impl Default for InferSection {
    fn default() -> Self {
        InferSection {
            evs: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            input_ev: 0.0,
            bit_depth: None,
            mask: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeSection {
    pub method: MergeMethod,
    pub saturation_epsilon: f64,
    pub dorf: Option<PathBuf>,
    /// Response used for every stack; the manifest's curve name when unset.
    pub curve: Option<String>,
}

impl Default for MergeSection {
    fn default() -> Self {
        let m = MergeConfig::default();
        MergeSection {
            method: m.method,
            saturation_epsilon: m.saturation_epsilon,
            dorf: None,
            curve: None,
        }
    }
}

impl MergeSection {
    pub fn merge_config(&self) -> MergeConfig {
        MergeConfig {
            method: self.method,
            saturation_epsilon: self.saturation_epsilon,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub ssim: SsimParams,
    pub tonemap: TonemapParams,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Apply the global seed to the sections that use one.
    pub fn resolve(mut self) -> Self {
        if let Some(s) = self.seed {
            self.train.seed = s;
        }
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
