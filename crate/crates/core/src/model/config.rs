use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sub-network widths and structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub levels: usize,
    pub base_features_encoder: usize,
    pub base_features_exposure: usize,
    pub max_features_encoder: usize,
    pub max_features_exposure: usize,
    /// Route both exposure directions through one network (ablation).
    pub share_exposure_nets: bool,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Initialize sub-pixel convolutions so they start as nearest-neighbour upsampling.
    pub icnr_init: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            levels: 7,
            base_features_encoder: 16,
            base_features_exposure: 32,
            max_features_encoder: 256,
            max_features_exposure: 512,
            share_exposure_nets: false,
            leaky_slope: 0.2,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            icnr_init: false,
        }
    }
}

impl NetConfig {
    /// Four levels, 8/16 base features; small enough for CPU smoke runs.
    pub fn toy() -> Self {
        NetConfig {
            levels: 4,
            base_features_encoder: 8,
            base_features_exposure: 16,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.levels < 2 {
            return bad(format!("levels must be >= 2, got {}", self.levels));
        }
        if self.levels > 12 {
            return bad(format!("levels must be <= 12, got {}", self.levels));
        }
        for (name, v) in [
            ("base_features_encoder", self.base_features_encoder),
            ("base_features_exposure", self.base_features_exposure),
            ("max_features_encoder", self.max_features_encoder),
            ("max_features_exposure", self.max_features_exposure),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.max_features_encoder < self.base_features_encoder
            || self.max_features_exposure < self.base_features_exposure
        {
            return bad("feature caps must not be below the base widths".into());
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky_slope must lie in [0, 1), got {}", self.leaky_slope));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_eps > 0.0) {
            return bad("batch-norm momentum must lie in (0, 1] and eps be positive".into());
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        widths(self.levels, self.base_features_encoder, self.max_features_encoder)
    }

    pub fn exposure_widths(&self) -> Vec<usize> {
        widths(self.levels, self.base_features_exposure, self.max_features_exposure)
    }
}

fn widths(levels: usize, base: usize, max: usize) -> Vec<usize> {
    (0..levels).map(|k| (base << k).min(max)).collect()
}
