//! Paired geometric augmentation: one random transform applied to both images.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{reflect_index, RgbImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// When false every sample is a plain aligned random crop.
    pub enabled: bool,
    pub rotate90: bool,
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Maximum shift as a fraction of the crop size.
    pub max_shift: f64,
    pub flip_h_prob: f64,
    pub flip_v_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            rotate90: true,
            max_rotation_deg: 10.0,
            scale_min: 0.9,
            scale_max: 1.1,
            max_shift: 0.1,
            flip_h_prob: 0.5,
            flip_v_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_rotation_deg >= 0.0
            && self.scale_min > 0.0
            && self.scale_min <= self.scale_max
            && self.max_shift >= 0.0
            && (0.0..=1.0).contains(&self.flip_h_prob)
            && (0.0..=1.0).contains(&self.flip_v_prob);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation ranges: {self:?}")))
        }
    }
}

/// One sampled transform. Output pixel `(u, v)` of the crop is read from the
/// source at `origin + crop/2 + shift + R(angle)·rot90(flip(p)) / scale − ½`,
/// where `p` is the pixel centre relative to the crop centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub origin: (usize, usize),
    pub flip_h: bool,
    pub flip_v: bool,
    pub quarter_turns: u8,
    pub angle_deg: f64,
    pub scale: f64,
    pub shift: (f64, f64),
}

impl AugmentDraw {
    pub fn identity(origin: (usize, usize)) -> Self {
        AugmentDraw {
            origin,
            flip_h: false,
            flip_v: false,
            quarter_turns: 0,
            angle_deg: 0.0,
            scale: 1.0,
            shift: (0.0, 0.0),
        }
    }

    pub fn sample<R: Rng>(cfg: &AugmentConfig, dims: (usize, usize), crop: usize, rng: &mut R) -> Self {
        let origin = (rng.random_range(0..=dims.0 - crop), rng.random_range(0..=dims.1 - crop));
        if !cfg.enabled {
            return AugmentDraw::identity(origin);
        }
        let a = cfg.max_rotation_deg;
        let s = cfg.max_shift * crop as f64;
        AugmentDraw {
            origin,
            flip_h: rng.random_bool(cfg.flip_h_prob),
            flip_v: rng.random_bool(cfg.flip_v_prob),
            quarter_turns: if cfg.rotate90 { rng.random_range(0..4) } else { 0 },
            angle_deg: if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 },
            scale: if cfg.scale_max > cfg.scale_min {
                rng.random_range(cfg.scale_min..=cfg.scale_max)
            } else {
                cfg.scale_min
            },
            shift: if s > 0.0 {
                (rng.random_range(-s..=s), rng.random_range(-s..=s))
            } else {
                (0.0, 0.0)
            },
        }
    }

    fn is_plain_crop(&self) -> bool {
        !self.flip_h
            && !self.flip_v
            && self.quarter_turns == 0
            && self.angle_deg == 0.0
            && self.scale == 1.0
            && self.shift == (0.0, 0.0)
    }

    /// Resample `img` into a `crop × crop` window.
    pub fn apply(&self, img: &RgbImage, crop: usize) -> RgbImage {
        let (ox, oy) = self.origin;
        if self.is_plain_crop() {
            return RgbImage::from_fn(crop, crop, |x, y| img.pixel(ox + x, oy + y));
        }
        let half = crop as f64 / 2.0;
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let (cx, cy) = (ox as f64 + half + self.shift.0, oy as f64 + half + self.shift.1);
        RgbImage::from_fn(crop, crop, |u, v| {
            let mut px = u as f64 + 0.5 - half;
            let mut py = v as f64 + 0.5 - half;
            if self.flip_h {
                px = -px;
            }
            if self.flip_v {
                py = -py;
            }
            for _ in 0..self.quarter_turns {
                (px, py) = (-py, px);
            }
            let rx = (cos * px - sin * py) / self.scale;
            let ry = (sin * px + cos * py) / self.scale;
            bilinear(img, cx + rx - 0.5, cy + ry - 0.5)
        })
    }
}

/// Bilinear sample at continuous pixel coordinates with reflected borders.
pub fn bilinear(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = img.dims();
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |dx: isize, dy: isize| img.pixel(reflect_index(x0 + dx, w), reflect_index(y0 + dy, h));
    let (a, b, c, d) = (at(0, 0), at(1, 0), at(0, 1), at(1, 1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] + (b[k] - a[k]) * fx;
        let bot = c[k] + (d[k] - c[k]) * fx;
        out[k] = top + (bot - top) * fy;
    }
    out
}

pub fn flip_horizontal(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dims();
    RgbImage::from_fn(w, h, |x, y| img.pixel(w - 1 - x, y))
}

pub fn resize_bilinear(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    let (w, h) = img.dims();
    let (sx, sy) = (w as f64 / width as f64, h as f64 / height as f64);
    RgbImage::from_fn(width, height, |x, y| {
        bilinear(img, (x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5)
    })
}

/// Crop (and, when `cfg.enabled`, transform) both images of a pair identically.
/// Images smaller than the crop are upscaled first.
pub fn augment<R: Rng>(
    pair: (&RgbImage, &RgbImage),
    crop: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(RgbImage, RgbImage)> {
    pair.0.ensure_same_shape(pair.1)?;
    let (w, h) = pair.0.dims();
    let (a, b) = if w < crop || h < crop {
        let k = crop as f64 / w.min(h) as f64;
        let (nw, nh) = (((w as f64 * k).ceil() as usize).max(crop), ((h as f64 * k).ceil() as usize).max(crop));
        log::warn!("image {w}x{h} smaller than crop {crop}; upscaling to {nw}x{nh}");
        (resize_bilinear(pair.0, nw, nh), resize_bilinear(pair.1, nw, nh))
    } else {
        (pair.0.clone(), pair.1.clone())
    };
    let draw = AugmentDraw::sample(cfg, a.dims(), crop, rng);
    Ok((draw.apply(&a, crop), draw.apply(&b, crop)))
}
