//! Training objectives: latent transformation/HDR representation, L1
//! reconstruction, perceptual feature distance and total variation.
//!
//! Pixel terms are means over every element. Tensor-level functions return the
//! loss together with gradients for the trainer; image-level wrappers serve
//! evaluation and tests.

pub mod perceptual;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::model::LatentExposure;
use crate::nn::{Element, Tensor};

pub use perceptual::{perceptual_term, FeatureExtractor, STAGES};
use perceptual::sign;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_h: f64,
    pub lambda_r: f64,
    pub lambda_p: f64,
    pub lambda_tv: f64,
    pub epsilon: f64,
    pub vgg_layers: Vec<String>,
    /// Pretrained VGG-19 `features` weights (safetensors); random pyramid when absent.
    pub vgg_weights: Option<PathBuf>,
    pub extractor_seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_h: 1.0,
            lambda_r: 1.0,
            lambda_p: 0.05,
            lambda_tv: 1e-4,
            epsilon: 1e-6,
            vgg_layers: STAGES.iter().map(|s| s.to_string()).collect(),
            vgg_weights: None,
            extractor_seed: 0x5eed,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_h", self.lambda_h),
            ("lambda_r", self.lambda_r),
            ("lambda_p", self.lambda_p),
            ("lambda_tv", self.lambda_tv),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite nonnegative weight, got {v}")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn extractor<T: Element>(&self) -> Result<FeatureExtractor<T>> {
        let fx = match &self.vgg_weights {
            Some(p) => FeatureExtractor::from_vgg19(p)?,
            None => FeatureExtractor::seeded_random(self.extractor_seed),
        };
        fx.stage_indices(&self.vgg_layers)?;
        Ok(fx)
    }
}

/// Unweighted loss terms plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_h: f64,
    pub l_r: f64,
    pub l_p: f64,
    pub l_tv: f64,
    pub total: f64,
}

/// Weighted sum of the four terms.
pub fn combined_loss(cfg: &LossConfig, l_h: f64, l_r: f64, l_p: f64, l_tv: f64) -> LossBreakdown {
    LossBreakdown {
        l_h,
        l_r,
        l_p,
        l_tv,
        total: cfg.lambda_h * l_h + cfg.lambda_r * l_r + cfg.lambda_p * l_p + cfg.lambda_tv * l_tv,
    }
}

/// Directed term `mean|log(x1·r + ε) − log(x2 + ε)|` where `r[n]` is the
/// `Δt₂/Δt₁` ratio of batch item `n`. Returns loss, `∂/∂x1`, `∂/∂x2`.
pub fn transformation_term<T: Element>(
    x1: &Tensor<T>,
    x2: &Tensor<T>,
    ratio: &[f64],
    eps: f64,
) -> Result<(f64, Tensor<T>, Tensor<T>)> {
    x1.ensure_same_shape(x2)?;
    if ratio.len() != x1.n() {
        return Err(Error::Shape(format!("{} ratios for batch of {}", ratio.len(), x1.n())));
    }
    let inv = 1.0 / x1.len() as f64;
    let e = T::lit(eps);
    let mut d1 = Tensor::zeros(x1.shape());
    let mut d2 = Tensor::zeros(x1.shape());
    let mut sum = 0.0;
    for (n, &r) in ratio.iter().enumerate() {
        let rt = T::lit(r);
        let (a, b) = (x1.item(n), x2.item(n));
        let (g1, g2) = (d1.item_mut(n), d2.item_mut(n));
        for i in 0..a.len() {
            let u = a[i] * rt + e;
            let v = b[i] + e;
            let diff = u.ln() - v.ln();
            sum += diff.abs().as_f64();
            let s = T::lit(sign(diff) * inv);
            g1[i] = s * rt / u;
            g2[i] = -s / v;
        }
    }
    Ok((sum * inv, d1, d2))
}

/// Symmetric HDR representation loss `L_t(x1,x2) + L_t(x2,x1)`; `ratio` is `Δt₂/Δt₁`.
pub fn hdr_term<T: Element>(
    x1: &Tensor<T>,
    x2: &Tensor<T>,
    ratio: &[f64],
    eps: f64,
) -> Result<(f64, Tensor<T>, Tensor<T>)> {
    let (la, mut d1, mut d2) = transformation_term(x1, x2, ratio, eps)?;
    let back: Vec<f64> = ratio.iter().map(|r| 1.0 / r).collect();
    let (lb, e2, e1) = transformation_term(x2, x1, &back, eps)?;
    d1.add_assign(&e1);
    d2.add_assign(&e2);
    Ok((la + lb, d1, d2))
}

/// `mean|pred − gt|` and its gradient.
pub fn l1_term<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    pred.ensure_same_shape(gt)?;
    let inv = 1.0 / pred.len() as f64;
    let mut d = Tensor::zeros(pred.shape());
    let mut sum = 0.0;
    for ((o, &p), &g) in d.data_mut().iter_mut().zip(pred.data()).zip(gt.data()) {
        sum += (p - g).abs().as_f64();
        *o = T::lit(sign(p - g) * inv);
    }
    Ok((sum * inv, d))
}

/// Anisotropic L1 total variation of one plane.
pub fn total_variation_plane(values: &[f64], width: usize, height: usize) -> f64 {
    assert_eq!(values.len(), width * height);
    let mut tv = 0.0;
    for y in 0..height {
        for x in 0..width {
            let v = values[y * width + x];
            if x + 1 < width {
                tv += (values[y * width + x + 1] - v).abs();
            }
            if y + 1 < height {
                tv += (values[(y + 1) * width + x] - v).abs();
            }
        }
    }
    tv
}

/// Total variation summed over channels.
pub fn total_variation(img: &RgbImage) -> f64 {
    let (w, h) = img.dims();
    (0..3)
        .map(|c| {
            let plane: Vec<f64> = img.pixels().map(|p| p[c]).collect();
            total_variation_plane(&plane, w, h)
        })
        .sum()
}

/// Total variation of a batch divided by `N·H·W`, with gradient.
pub fn tv_term<T: Element>(x: &Tensor<T>) -> (f64, Tensor<T>) {
    let [n, c, h, w] = x.shape();
    let inv = 1.0 / (n * h * w) as f64;
    let mut d = Tensor::zeros(x.shape());
    let mut sum = 0.0;
    let plane = h * w;
    for b in 0..n {
        let src = x.item(b);
        let dst = d.item_mut(b);
        for ch in 0..c {
            let o = ch * plane;
            for y in 0..h {
                for xx in 0..w {
                    let i = o + y * w + xx;
                    let mut step = |j: usize| {
                        let diff = src[j] - src[i];
                        sum += diff.abs().as_f64();
                        let s = T::lit(sign(diff) * inv);
                        dst[j] += s;
                        dst[i] -= s;
                    };
                    if xx + 1 < w {
                        step(i + 1);
                    }
                    if y + 1 < h {
                        step(i + w);
                    }
                }
            }
        }
    }
    (sum * inv, d)
}

fn single<T: Element>(img: &RgbImage) -> Tensor<T> {
    Tensor::from_images(&[img]).expect("one image")
}

/// `mean|log(x1·Δt₂/Δt₁ + ε) − log(x2 + ε)|`.
pub fn transformation_loss(x1: &LatentExposure, x2: &LatentExposure, eps: f64) -> Result<f64> {
    x1.values.ensure_same_shape(&x2.values)?;
    let r = x1.meta.ratio_to(&x2.meta);
    Ok(transformation_term::<f64>(&single(&x1.values), &single(&x2.values), &[r], eps)?.0)
}

pub fn hdr_representation_loss(x1: &LatentExposure, x2: &LatentExposure, eps: f64) -> Result<f64> {
    Ok(transformation_loss(x1, x2, eps)? + transformation_loss(x2, x1, eps)?)
}

pub fn reconstruction_loss(pred1: &RgbImage, gt1: &RgbImage, pred2: &RgbImage, gt2: &RgbImage) -> Result<f64> {
    pred1.ensure_same_shape(gt1)?;
    pred2.ensure_same_shape(gt2)?;
    Ok(l1_term::<f64>(&single(pred1), &single(gt1))?.0 + l1_term::<f64>(&single(pred2), &single(gt2))?.0)
}

pub fn perceptual_loss(
    fx: &FeatureExtractor<f64>,
    stages: &[String],
    pred1: &RgbImage,
    gt1: &RgbImage,
    pred2: &RgbImage,
    gt2: &RgbImage,
) -> Result<f64> {
    pred1.ensure_same_shape(gt1)?;
    pred2.ensure_same_shape(gt2)?;
    let idx = fx.stage_indices(stages)?;
    let a = perceptual_term(fx, &idx, &single(pred1), &single(gt1), false).0;
    let b = perceptual_term(fx, &idx, &single(pred2), &single(gt2), false).0;
    Ok(a + b)
}

/// `V(pred1) + V(pred2)`, each normalized by its pixel count.
pub fn tv_loss(pred1: &RgbImage, pred2: &RgbImage) -> f64 {
    let norm = |i: &RgbImage| total_variation(i) / i.pixel_count() as f64;
    norm(pred1) + norm(pred2)
}
