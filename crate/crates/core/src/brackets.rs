//! Inference: synthesize exposures at arbitrary EV offsets from one LDR image.

use crate::error::{Error, Result};
use crate::imaging::{ExposureMeta, ExposureStack, LdrImage};
use crate::masking::{mask_image, MaskConfig};
use crate::model::{scale_latent, Direction, LatentExposure, ModelWeights};

/// Which network produces an exposure, given input and output EVs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Route {
    Identity,
    Up { ratio: f64 },
    Down { ratio: f64 },
}

pub fn plan_route(ev_in: f64, ev_out: f64) -> Route {
    let ratio = (ev_out - ev_in).exp2();
    if ev_out == ev_in {
        Route::Identity
    } else if ratio > 1.0 {
        Route::Up { ratio }
    } else {
        Route::Down { ratio }
    }
}

fn render(w: &ModelWeights<f32>, input: &LdrImage, latent: &LatentExposure, ev_out: f64) -> Result<LdrImage> {
    let target = ExposureMeta::from_ev(ev_out);
    let dir = match plan_route(input.ev(), ev_out) {
        Route::Identity => return Ok(input.clone()),
        Route::Up { .. } => Direction::Up,
        Route::Down { .. } => Direction::Down,
    };
    let scaled = scale_latent(latent, target)?;
    let pixels = w.exposure_forward(&scaled, dir);
    Ok(LdrImage {
        pixels,
        meta: target,
        crf_name: input.crf_name.clone(),
        bit_depth: input.bit_depth,
    })
}

fn encode(w: &ModelWeights<f32>, input: &LdrImage, mask: &MaskConfig) -> LatentExposure {
    w.encode_irradiance(&mask_image(&input.pixels, mask), input.meta)
}

/// Predict the image `input` would have recorded at `ev_out`.
pub fn generate_exposure(w: &ModelWeights<f32>, input: &LdrImage, ev_out: f64, mask: &MaskConfig) -> Result<LdrImage> {
    if ev_out == input.ev() {
        return Ok(input.clone());
    }
    render(w, input, &encode(w, input, mask), ev_out)
}

/// One exposure per EV (encoding once); the input itself fills its own EV slot.
pub fn generate_stack(
    w: &ModelWeights<f32>,
    input: &LdrImage,
    ev_offsets: &[f64],
    mask: &MaskConfig,
    scene_id: &str,
) -> Result<ExposureStack> {
    let mut evs = ev_offsets.to_vec();
    if evs.is_empty() {
        return Err(Error::Empty("no EV offsets requested".into()));
    }
    if let Some(v) = evs.iter().find(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("EV offset {v} is not finite")));
    }
    evs.sort_by(f64::total_cmp);
    if let Some(d) = evs.windows(2).find(|p| p[0] == p[1]) {
        return Err(Error::Invalid(format!("duplicate EV offset {}", d[0])));
    }
    let needs_net = evs.iter().any(|&e| e != input.ev());
    let latent = needs_net.then(|| encode(w, input, mask));
    let images = evs
        .iter()
        .map(|&ev| match &latent {
            Some(l) => render(w, input, l, ev),
            None => Ok(input.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    ExposureStack::new(scene_id, images)
}
