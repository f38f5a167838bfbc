//! Merging a bracket into scene radiance with a known response, and
//! Reinhard's global tone mapping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{luma_of, RgbImage};
use crate::imaging::{Crf, ExposureMeta, ExposureStack, LdrImage, RadianceMap};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMethod {
    /// Weighted mean of log radiance estimates.
    #[default]
    DebevecWeighted,
    /// Maximum-likelihood linear estimate.
    RobertsonMl,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeConfig {
    pub method: MergeMethod,
    /// Total weight at or below this counts as "no usable exposure".
    pub saturation_epsilon: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            method: MergeMethod::DebevecWeighted,
            saturation_epsilon: 1e-8,
        }
    }
}

/// Hat weight `2·min(z, 1−z)`: 0 at the ends, 1 at mid-gray.
#[inline]
pub fn hat_weight(z: f64) -> f64 {
    (2.0 * z.min(1.0 - z)).max(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeOutput {
    pub radiance: RadianceMap,
    /// Per pixel: at least one channel had no usable exposure and took the fallback.
    pub fallback: Vec<bool>,
}

impl MergeOutput {
    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().filter(|&&f| f).count()
    }
}

/// Merge with the inverse of `crf`. Channels whose weights all vanish take the
/// shortest exposure's estimate when bright and the longest's when dark.
pub fn merge(stack: &ExposureStack, crf: &Crf, cfg: &MergeConfig) -> Result<MergeOutput> {
    let imgs = stack.images();
    if imgs.len() < 2 {
        return Err(Error::Invalid(format!("merge needs at least 2 exposures, got {}", imgs.len())));
    }
    let (w, h) = imgs[0].dims();
    for im in imgs {
        if im.dims() != (w, h) {
            return Err(Error::Shape(format!("stack images differ: {:?} vs {:?}", im.dims(), (w, h))));
        }
    }
    // Inverse response per image, computed once.
    let linear: Vec<Vec<f64>> = imgs.iter().map(|im| crf.invert_slice(im.pixels.data())).collect();
    let dts: Vec<f64> = imgs.iter().map(|im| im.meta.delta_t()).collect();
    let (shortest, longest) = (0, imgs.len() - 1);
    let n = w * h * 3;
    let mut out = vec![0.0; n];
    let mut fallback = vec![false; w * h];
    for i in 0..n {
        let (mut num, mut den) = (0.0, 0.0);
        for (k, im) in imgs.iter().enumerate() {
            let z = im.pixels.data()[i];
            let x = linear[k][i];
            let wt = hat_weight(z);
            if wt <= 0.0 || x <= 0.0 {
                continue;
            }
            match cfg.method {
                MergeMethod::DebevecWeighted => {
                    num += wt * (x.ln() - dts[k].ln());
                    den += wt;
                }
                MergeMethod::RobertsonMl => {
                    num += wt * x * dts[k];
                    den += wt * dts[k] * dts[k];
                }
            }
        }
        out[i] = if den > cfg.saturation_epsilon {
            match cfg.method {
                MergeMethod::DebevecWeighted => (num / den).exp(),
                MergeMethod::RobertsonMl => num / den,
            }
        } else {
            fallback[i / 3] = true;
            let bright = imgs.iter().map(|im| im.pixels.data()[i]).sum::<f64>() / imgs.len() as f64 >= 0.5;
            let k = if bright { shortest } else { longest };
            linear[k][i] / dts[k]
        };
    }
    Ok(MergeOutput {
        radiance: RadianceMap::from_clamped(RgbImage::from_vec(w, h, out)?),
        fallback,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TonemapParams {
    pub key_a: f64,
    /// Burn-out luminance in scaled units; the scene maximum when `None`.
    pub l_white: Option<f64>,
    pub delta: f64,
}

impl Default for TonemapParams {
    fn default() -> Self {
        TonemapParams {
            key_a: 0.18,
            l_white: None,
            delta: 1e-6,
        }
    }
}

impl TonemapParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.key_a > 0.0 && self.key_a.is_finite()) {
            return Err(Error::Config(format!("key_a must be positive, got {}", self.key_a)));
        }
        if let Some(l) = self.l_white {
            if !(l > 0.0) {
                return Err(Error::Config(format!("l_white must be positive, got {l}")));
            }
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

/// `L_d = L_m (1 + L_m / L_white²) / (1 + L_m)`.
#[inline]
pub fn reinhard_curve(l_m: f64, l_white: f64) -> f64 {
    l_m * (1.0 + l_m / (l_white * l_white)) / (1.0 + l_m)
}

/// Log-average luminance `exp(mean ln(L + δ))`.
pub fn log_average_luminance(e: &RadianceMap, delta: f64) -> f64 {
    let img = e.pixels();
    let s: f64 = img.pixels().map(|p| (luma_of(p) + delta).ln()).sum();
    (s / img.pixel_count() as f64).exp()
}

/// Global photographic operator; output clipped to `[0,1]`, tagged EV 0.
pub fn tonemap_reinhard(e: &RadianceMap, p: &TonemapParams) -> Result<LdrImage> {
    p.validate()?;
    let img = e.pixels();
    let scale = p.key_a / log_average_luminance(e, p.delta);
    let lum: Vec<f64> = img.pixels().map(luma_of).collect();
    let max_lm = lum.iter().fold(0.0f64, |m, &l| m.max(scale * l));
    let l_white = p.l_white.unwrap_or(max_lm);
    let mut out = img.clone();
    for (px, &l) in out.data_mut().chunks_exact_mut(3).zip(&lum) {
        let k = if l > 0.0 && l_white > 0.0 {
            reinhard_curve(scale * l, l_white) / l
        } else {
            0.0
        };
        px.iter_mut().for_each(|c| *c = (*c * k).clamp(0.0, 1.0));
    }
    Ok(LdrImage::new(out, ExposureMeta::default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::BitDepth;

    fn stack_of(values: &[(f64, f64)]) -> ExposureStack {
        let imgs = values
            .iter()
            .map(|&(z, dt)| LdrImage {
                pixels: RgbImage::filled(2, 2, z),
                meta: ExposureMeta::from_delta_t(dt).unwrap(),
                crf_name: Some("identity".into()),
                bit_depth: BitDepth::Sixteen,
            })
            .collect();
        ExposureStack::new("t", imgs).unwrap()
    }

    #[test]
    fn consistent_linear_pair() {
        let s = stack_of(&[(0.2, 1.0), (0.4, 2.0)]);
        for method in [MergeMethod::DebevecWeighted, MergeMethod::RobertsonMl] {
            let cfg = MergeConfig { method, ..Default::default() };
            let m = merge(&s, &Crf::identity(), &cfg).unwrap();
            assert!(m.radiance.pixels().data().iter().all(|&v| (v - 0.2).abs() < 1e-12), "{method:?}");
            assert_eq!(m.fallback_count(), 0);
        }
    }

    #[test]
    fn saturated_falls_back_to_shortest() {
        let s = stack_of(&[(1.0, 0.5), (1.0, 2.0)]);
        let m = merge(&s, &Crf::identity(), &MergeConfig::default()).unwrap();
        assert_eq!(m.fallback_count(), 4);
        assert!(m.radiance.pixels().data().iter().all(|&v| v == 2.0));
        let dark = stack_of(&[(0.0, 0.5), (0.0, 2.0)]);
        let m = merge(&dark, &Crf::identity(), &MergeConfig::default()).unwrap();
        assert!(m.radiance.pixels().data().iter().all(|&v| v == 0.0));
        assert_eq!(m.fallback_count(), 4);
    }

    #[test]
    fn reinhard_scalar_cases() {
        assert!((reinhard_curve(1.0, f64::INFINITY) - 0.5).abs() < 1e-15);
        assert!((reinhard_curve(0.18, f64::INFINITY) - 0.18 / 1.18).abs() < 1e-15);
        assert!((reinhard_curve(0.18, f64::INFINITY) - 0.1526).abs() < 1e-4);
    }

    #[test]
    fn black_stays_black() {
        let e = RadianceMap::new(RgbImage::filled(3, 3, 0.0)).unwrap();
        let t = tonemap_reinhard(&e, &TonemapParams::default()).unwrap();
        assert!(t.pixels.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_gray_maps_to_key() {
        let e = RadianceMap::new(RgbImage::filled(4, 4, 0.7)).unwrap();
        let p = TonemapParams {
            l_white: Some(f64::INFINITY),
            delta: 1e-12,
            ..Default::default()
        };
        let t = tonemap_reinhard(&e, &p).unwrap();
        for &v in t.pixels.data() {
            assert!((v - 0.18 / 1.18).abs() < 1e-9, "{v}");
        }
    }
}
