//! The three sub-networks (HDR encoder, up-exposure, down-exposure) and the
//! latent exposure scaling that links them.

pub mod checkpoint;
pub mod config;
pub mod unet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{reflect_index, RgbImage};
use crate::imaging::ExposureMeta;
use crate::nn::{Element, Param, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::NetConfig;
pub use unet::{UNet, UNetTape};

/// Which exposure network to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    /// Up when the target exposure is longer than the source.
    pub fn between(from: &ExposureMeta, to: &ExposureMeta) -> Direction {
        if to.delta_t() >= from.delta_t() {
            Direction::Up
        } else {
            Direction::Down
        }
    }
}

/// Exposure representation produced by the encoder, tied to its exposure time.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentExposure {
    pub values: RgbImage,
    pub meta: ExposureMeta,
}

/// Multiply by `target.Δt / x.Δt` and re-reference to `target`.
pub fn scale_latent(x: &LatentExposure, target: ExposureMeta) -> Result<LatentExposure> {
    let (from, to) = (x.meta.delta_t(), target.delta_t());
    if !(to > 0.0 && to.is_finite()) {
        return Err(Error::Invalid(format!("target exposure time must be positive, got {to}")));
    }
    if !(from > 0.0 && from.is_finite()) {
        return Err(Error::Invalid(format!("source exposure time must be positive, got {from}")));
    }
    let r = to / from;
    Ok(LatentExposure {
        values: x.values.map(|v| v * r),
        meta: target,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExposureNets<T> {
    Separate { up: UNet<T>, down: UNet<T> },
    Shared(UNet<T>),
}

/// Parameters of all sub-networks plus the configuration that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T = f32> {
    pub config: NetConfig,
    pub seed: u64,
    pub encoder: UNet<T>,
    pub exposure: ExposureNets<T>,
}

fn net_rng(seed: u64, net: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(net);
    rng
}

/// Build freshly initialized networks; identical seeds give identical bytes.
pub fn build_model<T: Element>(config: &NetConfig, seed: u64) -> Result<ModelWeights<T>> {
    config.validate()?;
    let c = config;
    let make = |widths: &[usize], stream: u64| {
        UNet::init(widths, c.leaky_slope, c.bn_momentum, c.bn_eps, c.icnr_init, &mut net_rng(seed, stream))
    };
    let encoder = make(&c.encoder_widths(), 0);
    let ew = c.exposure_widths();
    let exposure = if c.share_exposure_nets {
        ExposureNets::Shared(make(&ew, 1))
    } else {
        ExposureNets::Separate {
            up: make(&ew, 1),
            down: make(&ew, 2),
        }
    };
    Ok(ModelWeights {
        config: config.clone(),
        seed,
        encoder,
        exposure,
    })
}

/// `(tanh F + I + 1) / 3`; also returns `tanh F` for the backward pass.
pub fn encoder_head<T: Element>(f: &Tensor<T>, input: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let t = f.map(|v| v.tanh());
    let third = T::lit(1.0 / 3.0);
    let mut out = t.clone();
    for (o, &i) in out.data_mut().iter_mut().zip(input.data()) {
        *o = (*o + i + T::one()) * third;
    }
    (out, t)
}

pub fn encoder_head_backward<T: Element>(tanh_f: &Tensor<T>, d_out: &Tensor<T>) -> Tensor<T> {
    head_backward(tanh_f, d_out, 1.0 / 3.0)
}

/// `(tanh F + 1) / 2`; also returns `tanh F`.
pub fn exposure_head<T: Element>(f: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let t = f.map(|v| v.tanh());
    let half = T::lit(0.5);
    let out = t.map(|v| (v + T::one()) * half);
    (out, t)
}

pub fn exposure_head_backward<T: Element>(tanh_f: &Tensor<T>, d_out: &Tensor<T>) -> Tensor<T> {
    head_backward(tanh_f, d_out, 0.5)
}

fn head_backward<T: Element>(t: &Tensor<T>, d: &Tensor<T>, scale: f64) -> Tensor<T> {
    let s = T::lit(scale);
    let mut out = d.clone();
    for (o, &tv) in out.data_mut().iter_mut().zip(t.data()) {
        *o = *o * (T::one() - tv * tv) * s;
    }
    out
}

/// Reflect-pad height and width up to the next multiple of `m`.
pub fn pad_reflect<T: Element>(x: &Tensor<T>, m: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return x.clone();
    }
    let mut out = Tensor::zeros([n, c, ph, pw]);
    let rows: Vec<usize> = (0..ph).map(|y| reflect_index(y as isize, h)).collect();
    let cols: Vec<usize> = (0..pw).map(|x| reflect_index(x as isize, w)).collect();
    for b in 0..n {
        let src = x.item(b);
        let dst = out.item_mut(b);
        for ch in 0..c {
            for (y, &sy) in rows.iter().enumerate() {
                let s = &src[ch * h * w + sy * w..];
                let d = &mut dst[ch * ph * pw + y * pw..ch * ph * pw + (y + 1) * pw];
                for (dv, &sx) in d.iter_mut().zip(&cols) {
                    *dv = s[sx];
                }
            }
        }
    }
    out
}

/// Keep the top-left `h × w` window.
pub fn crop<T: Element>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let [n, c, xh, xw] = x.shape();
    if (xh, xw) == (h, w) {
        return x.clone();
    }
    let mut out = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        let src = x.item(b);
        let dst = out.item_mut(b);
        for ch in 0..c {
            for y in 0..h {
                let s = ch * xh * xw + y * xw;
                dst[ch * h * w + y * w..ch * h * w + (y + 1) * w].copy_from_slice(&src[s..s + w]);
            }
        }
    }
    out
}

impl<T: Element> ModelWeights<T> {
    pub fn exposure_net(&self, dir: Direction) -> &UNet<T> {
        match (&self.exposure, dir) {
            (ExposureNets::Shared(n), _) => n,
            (ExposureNets::Separate { up, .. }, Direction::Up) => up,
            (ExposureNets::Separate { down, .. }, Direction::Down) => down,
        }
    }

    fn run_padded(&self, net: &UNet<T>, x: &Tensor<T>) -> Tensor<T> {
        let [_, _, h, w] = x.shape();
        let padded = pad_reflect(x, self.config.size_multiple());
        crop(&net.forward_eval(&padded), h, w)
    }

    /// Encoder on a batch of masked inputs (inference mode).
    pub fn encode_tensor(&self, masked: &Tensor<T>) -> Tensor<T> {
        let f = self.run_padded(&self.encoder, masked);
        encoder_head(&f, masked).0
    }

    /// Exposure network on a batch of scaled latents (inference mode).
    pub fn expose_tensor(&self, x_scaled: &Tensor<T>, dir: Direction) -> Tensor<T> {
        let f = self.run_padded(self.exposure_net(dir), x_scaled);
        exposure_head(&f).0
    }

    /// Latent exposure for a masked LDR image taken with `meta`.
    pub fn encode_irradiance(&self, masked: &RgbImage, meta: ExposureMeta) -> LatentExposure {
        let x = Tensor::from_images(&[masked]).expect("single image");
        LatentExposure {
            values: self.encode_tensor(&x).to_image(0),
            meta,
        }
    }

    /// Predicted LDR image for an already-scaled latent.
    pub fn exposure_forward(&self, x_scaled: &LatentExposure, dir: Direction) -> RgbImage {
        let x = Tensor::from_images(&[&x_scaled.values]).expect("single image");
        self.expose_tensor(&x, dir).to_image(0)
    }

    /// All trainable parameters with stable prefixed names.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = prefixed("encoder", self.encoder.params_mut());
        match &mut self.exposure {
            ExposureNets::Shared(n) => out.extend(prefixed("exposure", n.params_mut())),
            ExposureNets::Separate { up, down } => {
                out.extend(prefixed("up", up.params_mut()));
                out.extend(prefixed("down", down.params_mut()));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = prefixed("encoder", self.encoder.buffers_mut());
        match &mut self.exposure {
            ExposureNets::Shared(n) => out.extend(prefixed("exposure", n.buffers_mut())),
            ExposureNets::Separate { up, down } => {
                out.extend(prefixed("up", up.buffers_mut()));
                out.extend(prefixed("down", down.buffers_mut()));
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&mut self) -> usize {
        self.params_mut().iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn cast<U: Element>(&self) -> ModelWeights<U> {
        ModelWeights {
            config: self.config.clone(),
            seed: self.seed,
            encoder: self.encoder.cast(),
            exposure: match &self.exposure {
                ExposureNets::Shared(n) => ExposureNets::Shared(n.cast()),
                ExposureNets::Separate { up, down } => ExposureNets::Separate {
                    up: up.cast(),
                    down: down.cast(),
                },
            },
        }
    }
}

fn prefixed<V>(prefix: &str, items: Vec<(String, V)>) -> Vec<(String, V)> {
    items.into_iter().map(|(n, v)| (format!("{prefix}.{n}"), v)).collect()
}
