//! Image formation: `I = quantize(f(clip(E·Δt)))`.

use crate::error::{Error, Result};
use crate::image::RgbImage;

use super::crf::Crf;

/// Reference exposure time; EV 0 corresponds to `Δt = 1`.
pub const DELTA_T_REF: f64 = 1.0;

/// Exposure time and its EV offset relative to [`DELTA_T_REF`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExposureMeta {
    delta_t: f64,
    ev_offset: f64,
}

impl ExposureMeta {
    pub fn from_ev(ev_offset: f64) -> Self {
        ExposureMeta {
            delta_t: ev_offset.exp2() * DELTA_T_REF,
            ev_offset,
        }
    }

    pub fn from_delta_t(delta_t: f64) -> Result<Self> {
        if !(delta_t > 0.0 && delta_t.is_finite()) {
            return Err(Error::Invalid(format!("exposure time must be positive, got {delta_t}")));
        }
        Ok(ExposureMeta {
            delta_t,
            ev_offset: (delta_t / DELTA_T_REF).log2(),
        })
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn ev(&self) -> f64 {
        self.ev_offset
    }

    /// `Δt_target / Δt_self`.
    pub fn ratio_to(&self, target: &ExposureMeta) -> f64 {
        target.delta_t / self.delta_t
    }
}

impl Default for ExposureMeta {
    fn default() -> Self {
        ExposureMeta::from_ev(0.0)
    }
}

/// Linear scene irradiance `E`, nonnegative and finite.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceMap {
    pixels: RgbImage,
}

impl RadianceMap {
    pub fn new(pixels: RgbImage) -> Result<Self> {
        if let Some(v) = pixels.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Invalid(format!(
                "radiance must be finite and nonnegative, found {v}"
            )));
        }
        Ok(RadianceMap { pixels })
    }

    /// Build without validation; negative or non-finite samples are clamped to zero.
    pub fn from_clamped(mut pixels: RgbImage) -> Self {
        for v in pixels.data_mut() {
            if !(v.is_finite() && *v >= 0.0) {
                *v = 0.0;
            }
        }
        RadianceMap { pixels }
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn into_pixels(self) -> RgbImage {
        self.pixels
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dims()
    }

    pub fn scaled(&self, k: f64) -> RadianceMap {
        RadianceMap {
            pixels: self.pixels.map(|v| v * k),
        }
    }
}

/// Quantization depth of a display-referred image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::Invalid(format!("bit depth must be 8 or 16, got {other}"))),
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    pub fn max_level(self) -> f64 {
        ((1u32 << self.bits()) - 1) as f64
    }

    /// Round to the nearest representable level.
    #[inline]
    pub fn quantize(self, v: f64) -> f64 {
        let m = self.max_level();
        (v.clamp(0.0, 1.0) * m).round() / m
    }
}

/// Display-referred image in `[0,1]` with its exposure.
///
/// Images produced by [`simulate_ldr`] or decoded from PNG sit exactly on the
/// levels of `bit_depth`; network outputs are continuous until written.
#[derive(Clone, Debug, PartialEq)]
pub struct LdrImage {
    pub pixels: RgbImage,
    pub meta: ExposureMeta,
    pub crf_name: Option<String>,
    pub bit_depth: BitDepth,
}

impl LdrImage {
    pub fn new(pixels: RgbImage, meta: ExposureMeta) -> Self {
        LdrImage {
            pixels,
            meta,
            crf_name: None,
            bit_depth: BitDepth::Sixteen,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dims()
    }

    pub fn ev(&self) -> f64 {
        self.meta.ev()
    }
}

/// Images of one scene under one response curve, sorted by exposure time.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureStack {
    images: Vec<LdrImage>,
    scene_id: String,
}

impl ExposureStack {
    pub fn new(scene_id: impl Into<String>, mut images: Vec<LdrImage>) -> Result<Self> {
        images.sort_by(|a, b| a.meta.delta_t().total_cmp(&b.meta.delta_t()));
        if let Some(w) = images
            .windows(2)
            .find(|w| w[1].meta.delta_t() <= w[0].meta.delta_t())
        {
            return Err(Error::Invalid(format!(
                "duplicate exposure EV {} in stack",
                w[0].ev()
            )));
        }
        if let Some(first) = images.first() {
            for img in &images[1..] {
                if img.dims() != first.dims() {
                    return Err(Error::Shape(format!(
                        "stack images differ in size: {:?} vs {:?}",
                        first.dims(),
                        img.dims()
                    )));
                }
                if img.crf_name != first.crf_name {
                    return Err(Error::Invalid(format!(
                        "stack mixes response curves {:?} and {:?}",
                        first.crf_name, img.crf_name
                    )));
                }
            }
        }
        Ok(ExposureStack {
            images,
            scene_id: scene_id.into(),
        })
    }

    pub fn images(&self) -> &[LdrImage] {
        &self.images
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn evs(&self) -> Vec<f64> {
        self.images.iter().map(LdrImage::ev).collect()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.images.first().map(LdrImage::dims)
    }

    pub fn crf_name(&self) -> Option<&str> {
        self.images.first().and_then(|i| i.crf_name.as_deref())
    }

    /// Image whose EV is within `1e-9` of `ev`.
    pub fn at_ev(&self, ev: f64) -> Option<&LdrImage> {
        self.images.iter().find(|i| (i.ev() - ev).abs() < 1e-9)
    }
}

/// Render one exposure of a radiance map through a response curve.
pub fn simulate_ldr(e: &RadianceMap, meta: ExposureMeta, crf: &Crf, bit_depth: BitDepth) -> LdrImage {
    let dt = meta.delta_t();
    let pixels = e.pixels().map(|v| bit_depth.quantize(crf.apply(v * dt)));
    LdrImage {
        pixels,
        meta,
        crf_name: Some(crf.name().to_string()),
        bit_depth,
    }
}

/// Render one image per EV offset. Offsets must be ascending and distinct.
pub fn synth_stack(
    e: &RadianceMap,
    ev_offsets: &[f64],
    crf: &Crf,
    bit_depth: BitDepth,
    scene_id: &str,
) -> Result<ExposureStack> {
    if let Some(w) = ev_offsets.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Invalid(format!(
            "EV offsets must be strictly ascending; found {} then {}",
            w[0], w[1]
        )));
    }
    let images = ev_offsets
        .iter()
        .map(|&ev| simulate_ldr(e, ExposureMeta::from_ev(ev), crf, bit_depth))
        .collect();
    ExposureStack::new(scene_id, images)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> RadianceMap {
        RadianceMap::new(RgbImage::filled(4, 3, v)).unwrap()
    }

    #[test]
    fn ev_meta_is_exact_power_of_two() {
        assert_eq!(ExposureMeta::from_ev(3.0).delta_t(), 8.0);
        assert_eq!(ExposureMeta::from_ev(-2.0).delta_t(), 0.25);
        assert_eq!(ExposureMeta::from_delta_t(0.5).unwrap().ev(), -1.0);
        assert!(ExposureMeta::from_delta_t(0.0).is_err());
    }

    #[test]
    fn clipped_ceiling_is_white() {
        let img = simulate_ldr(&constant(1.0), ExposureMeta::from_ev(0.0), &Crf::identity(), BitDepth::Eight);
        assert!(img.pixels.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn quarter_rounds_to_level_64() {
        let meta = ExposureMeta::from_delta_t(0.5).unwrap();
        let img = simulate_ldr(&constant(0.5), meta, &Crf::identity(), BitDepth::Eight);
        assert!(img.pixels.data().iter().all(|&v| v == 64.0 / 255.0));
    }

    #[test]
    fn gamma_sixteen_bit_matches_interpolated_curve() {
        let meta = ExposureMeta::from_delta_t(0.5).unwrap();
        let img = simulate_ldr(&constant(0.5), meta, &Crf::gamma(2.2), BitDepth::Sixteen);
        // piecewise-linear curve between samples 255 and 256 of a 1024-point grid
        let g = |i: f64| (i / 1023.0).powf(1.0 / 2.2);
        let t = 0.25 * 1023.0 - 255.0;
        let interp = g(255.0) + t * (g(256.0) - g(255.0));
        let want = (interp * 65535.0).round() / 65535.0;
        for &v in img.pixels.data() {
            assert!((v - want).abs() < 1e-12, "{v} vs {want}");
        }
        assert!((want - 0.25f64.powf(1.0 / 2.2)).abs() <= 1.0 / (2.0 * 65535.0));
    }

    #[test]
    fn single_ev_stack() {
        let e = constant(0.3);
        let s = synth_stack(&e, &[0.0], &Crf::identity(), BitDepth::Eight, "s").unwrap();
        assert_eq!(s.len(), 1);
        let direct = simulate_ldr(&e, ExposureMeta::from_ev(0.0), &Crf::identity(), BitDepth::Eight);
        assert_eq!(s.images()[0], direct);
    }

    #[test]
    fn stack_brightness_nondecreasing() {
        let e = constant(0.4);
        let s = synth_stack(&e, &[-1.0, 0.0, 1.0], &Crf::gamma(2.2), BitDepth::Eight, "s").unwrap();
        let means: Vec<f64> = s.images().iter().map(|i| i.pixels.mean()).collect();
        assert!(means.windows(2).all(|w| w[1] >= w[0]), "{means:?}");
    }

    #[test]
    fn duplicate_evs_rejected() {
        let e = constant(0.4);
        assert!(synth_stack(&e, &[0.0, 0.0], &Crf::identity(), BitDepth::Eight, "s").is_err());
        assert!(synth_stack(&e, &[1.0, 0.0], &Crf::identity(), BitDepth::Eight, "s").is_err());
    }
}
