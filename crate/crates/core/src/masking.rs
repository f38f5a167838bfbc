//! Soft well-exposedness masks applied to images before they reach the encoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{luma_of, RgbImage};

/// How the dark-side and bright-side ramps are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskVariant {
    /// `max(Λ₁, Λ₂)`, the formula exactly as printed. Evaluates to 1 at both extremes.
    PaperLiteralMax,
    /// `min(Λ₁, Λ₂)`: zero at black and at white, peak at mid-gray.
    #[default]
    MinCombination,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub gamma: f64,
    pub variant: MaskVariant,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            gamma: 0.05,
            variant: MaskVariant::MinCombination,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return Err(Error::Config(format!(
                "mask gamma must lie in (0, 0.5), got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Dark-side ramp `Λ₁`.
    #[inline]
    pub fn lambda_dark(&self, y: f64) -> f64 {
        let g = self.gamma;
        1.0 - f64::max(0.0, (1.0 - g) - y) / (1.0 - g)
    }

    /// Bright-side ramp `Λ₂`.
    #[inline]
    pub fn lambda_bright(&self, y: f64) -> f64 {
        let g = self.gamma;
        1.0 - f64::max(0.0, y - g) / (1.0 - g)
    }

    /// Combined weight for a luma value.
    #[inline]
    pub fn weight(&self, y: f64) -> f64 {
        let (a, b) = (self.lambda_dark(y), self.lambda_bright(y));
        let w = match self.variant {
            MaskVariant::PaperLiteralMax => a.max(b),
            MaskVariant::MinCombination => a.min(b),
        };
        w.clamp(0.0, 1.0)
    }
}

/// Per-pixel soft weights in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Mask {
    pub fn constant(width: usize, height: usize, v: f64) -> Self {
        Mask {
            width,
            height,
            values: vec![v.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Mask from BT.601 luma.
pub fn well_exposed_mask(img: &RgbImage, cfg: &MaskConfig) -> Mask {
    Mask {
        width: img.width(),
        height: img.height(),
        values: img.pixels().map(|p| cfg.weight(luma_of(p))).collect(),
    }
}

pub fn apply_mask(img: &RgbImage, mask: &Mask) -> Result<RgbImage> {
    if img.dims() != mask.dims() {
        return Err(Error::Shape(format!(
            "image {:?} vs mask {:?}",
            img.dims(),
            mask.dims()
        )));
    }
    let mut out = img.clone();
    for (px, &m) in out.data_mut().chunks_exact_mut(3).zip(&mask.values) {
        for c in px {
            *c *= m;
        }
    }
    Ok(out)
}

/// `I ⊙ Λ(I)`.
pub fn mask_image(img: &RgbImage, cfg: &MaskConfig) -> RgbImage {
    apply_mask(img, &well_exposed_mask(img, cfg)).expect("mask shares the image shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(variant: MaskVariant) -> MaskConfig {
        MaskConfig { gamma: 0.05, variant }
    }

    #[test]
    fn mid_gray_both_variants() {
        for v in [MaskVariant::PaperLiteralMax, MaskVariant::MinCombination] {
            let c = cfg(v);
            assert!((c.lambda_dark(0.5) - 0.5263).abs() < 1e-4);
            assert!((c.lambda_bright(0.5) - 0.5263).abs() < 1e-4);
            assert!((c.weight(0.5) - 0.5263).abs() < 1e-4);
        }
    }

    #[test]
    fn extremes_expose_variant_difference() {
        let max = cfg(MaskVariant::PaperLiteralMax);
        let min = cfg(MaskVariant::MinCombination);
        assert_eq!(max.weight(0.0), 1.0);
        assert_eq!(min.weight(0.0), 0.0);
        assert_eq!(max.weight(1.0), 1.0);
        assert_eq!(min.weight(1.0), 0.0);
    }

    #[test]
    fn min_variant_peaks_at_half() {
        let c = cfg(MaskVariant::MinCombination);
        let peak = c.weight(0.5);
        for i in 0..=100 {
            assert!(c.weight(i as f64 / 100.0) <= peak + 1e-15);
        }
    }

    #[test]
    fn identity_and_zero_masks() {
        let img = RgbImage::from_fn(3, 2, |x, y| [x as f64 * 0.2, y as f64 * 0.3, 0.9]);
        assert_eq!(apply_mask(&img, &Mask::constant(3, 2, 1.0)).unwrap(), img);
        let zero = apply_mask(&img, &Mask::constant(3, 2, 0.0)).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_product() {
        let img = RgbImage::filled(2, 2, 0.8);
        let out = apply_mask(&img, &Mask::constant(2, 2, 0.5263)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.4210).abs() < 1e-4));
    }

    #[test]
    fn shape_mismatch() {
        let img = RgbImage::filled(2, 2, 0.8);
        assert!(apply_mask(&img, &Mask::constant(3, 2, 1.0)).is_err());
    }

    #[test]
    fn gamma_validation() {
        assert!(MaskConfig { gamma: 0.5, ..Default::default() }.validate().is_err());
        assert!(MaskConfig::default().validate().is_ok());
    }
}
