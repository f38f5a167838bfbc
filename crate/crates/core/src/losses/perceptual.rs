//! Frozen convolutional feature pyramid for the perceptual loss.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{max_pool2, max_pool2_backward};
use crate::nn::{Conv2d, Element, Param, Tensor};

/// Stage names exposed by every extractor, shallowest first.
pub const STAGES: [&str; 3] = ["pool1", "pool2", "pool3"];

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Convolution indices of the first three blocks of a VGG-19 `features` stack.
const VGG19_CONVS: [&[usize]; 3] = [&[0, 2], &[5, 7], &[10, 12, 14, 16]];

#[derive(Clone, Debug, PartialEq)]
struct Stage<T> {
    convs: Vec<Conv2d<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<T> {
    stages: Vec<Stage<T>>,
    mean: [f64; 3],
    std: [f64; 3],
}

struct StageTape<T> {
    conv_in: Vec<Tensor<T>>,
    relu_out: Vec<Tensor<T>>,
    pool_shape: [usize; 4],
    pool_arg: Vec<u32>,
}

/// Forward record needed to push feature gradients back to the input.
pub struct FeatureTape<T> {
    stages: Vec<StageTape<T>>,
}

impl<T: Element> FeatureExtractor<T> {
    /// Fixed random pyramid with 8/16/32 channels and two convolutions per stage.
    pub fn seeded_random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [8, 16, 32];
        let mut cin = 3;
        let stages = widths
            .iter()
            .map(|&w| {
                let convs = (0..2)
                    .map(|i| Conv2d::init(if i == 0 { cin } else { w }, w, 3, true, 1.0, &mut rng))
                    .collect();
                cin = w;
                Stage { convs }
            })
            .collect();
        FeatureExtractor {
            stages,
            mean: [0.5; 3],
            std: [0.25; 3],
        }
    }

    /// Load `features.{i}.weight` / `features.{i}.bias` (f32) from a safetensors file.
    pub fn from_vgg19(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let st = safetensors::SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::codec(path, format!("safetensors: {e}")))?;
        let fetch = |name: &str| -> Result<(Vec<usize>, Vec<T>)> {
            let view = st
                .tensor(name)
                .map_err(|e| Error::codec(path, format!("{name}: {e}")))?;
            if view.dtype() != safetensors::Dtype::F32 {
                return Err(Error::codec(path, format!("{name}: expected f32, got {:?}", view.dtype())));
            }
            let data = view
                .data()
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect();
            Ok((view.shape().to_vec(), data))
        };
        let mut stages = Vec::new();
        for idx in VGG19_CONVS {
            let mut convs = Vec::new();
            for &i in idx {
                let (ws, w) = fetch(&format!("features.{i}.weight"))?;
                let (bs, b) = fetch(&format!("features.{i}.bias"))?;
                if ws.len() != 4 || ws[2] != 3 || ws[3] != 3 || bs != [ws[0]] {
                    return Err(Error::codec(path, format!("features.{i}: unexpected shape {ws:?}")));
                }
                convs.push(Conv2d {
                    cin: ws[1],
                    cout: ws[0],
                    k: 3,
                    weight: Param::new(ws, w),
                    bias: Some(Param::new(bs, b)),
                });
            }
            stages.push(Stage { convs });
        }
        Ok(FeatureExtractor {
            stages,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        })
    }

    /// Resolve stage names to indices, rejecting unknown ones.
    pub fn stage_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                STAGES[..self.stages.len()]
                    .iter()
                    .position(|s| s == n)
                    .ok_or_else(|| Error::UnknownStage {
                        requested: n.clone(),
                        available: STAGES[..self.stages.len()].iter().map(|s| s.to_string()).collect(),
                    })
            })
            .collect()
    }

    fn normalize(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut out = x.clone();
        let plane = x.plane();
        for n in 0..x.n() {
            for (c, chunk) in out.item_mut(n).chunks_mut(plane).enumerate() {
                let (m, s) = (T::lit(self.mean[c]), T::lit(1.0 / self.std[c]));
                chunk.iter_mut().for_each(|v| *v = (*v - m) * s);
            }
        }
        out
    }

    /// Features after each stage up to `depth` (exclusive), with a backward tape.
    pub fn forward(&self, x: &Tensor<T>, depth: usize) -> (Vec<Tensor<T>>, FeatureTape<T>) {
        assert_eq!(x.c(), 3, "extractor expects RGB input");
        let mut h = self.normalize(x);
        let mut feats = Vec::with_capacity(depth);
        let mut tapes = Vec::with_capacity(depth);
        for stage in &self.stages[..depth] {
            let mut conv_in = Vec::new();
            let mut relu_out = Vec::new();
            for conv in &stage.convs {
                let y = conv.forward(&h).map(|v| v.max(T::zero()));
                conv_in.push(h);
                relu_out.push(y.clone());
                h = y;
            }
            let pool_shape = h.shape();
            let (p, arg) = max_pool2(&h);
            tapes.push(StageTape {
                conv_in,
                relu_out,
                pool_shape,
                pool_arg: arg,
            });
            feats.push(p.clone());
            h = p;
        }
        (feats, FeatureTape { stages: tapes })
    }

    /// Input gradient given per-stage feature gradients (`None` for unused stages).
    pub fn backward(&self, tape: &FeatureTape<T>, d_feats: &[Option<Tensor<T>>]) -> Tensor<T> {
        let mut d: Option<Tensor<T>> = None;
        for (s, st) in tape.stages.iter().enumerate().rev() {
            if let Some(g) = &d_feats[s] {
                match d.as_mut() {
                    Some(acc) => acc.add_assign(g),
                    None => d = Some(g.clone()),
                }
            }
            let Some(dp) = d.take() else { continue };
            let mut dh = max_pool2_backward(st.pool_shape, &st.pool_arg, &dp);
            for (conv, y) in self.stages[s].convs.iter().zip(&st.relu_out).rev() {
                for (g, &yv) in dh.data_mut().iter_mut().zip(y.data()) {
                    if yv <= T::zero() {
                        *g = T::zero();
                    }
                }
                dh = conv.input_grad(&dh);
            }
            debug_assert_eq!(dh.shape(), st.conv_in[0].shape());
            d = Some(dh);
        }
        let mut dx = d.expect("at least one stage gradient");
        let plane = dx.plane();
        for n in 0..dx.n() {
            for (c, chunk) in dx.item_mut(n).chunks_mut(plane).enumerate() {
                let s = T::lit(1.0 / self.std[c]);
                chunk.iter_mut().for_each(|v| *v = *v * s);
            }
        }
        dx
    }

    pub fn cast<U: Element>(&self) -> FeatureExtractor<U> {
        FeatureExtractor {
            stages: self
                .stages
                .iter()
                .map(|s| Stage {
                    convs: s.convs.iter().map(Conv2d::cast).collect(),
                })
                .collect(),
            mean: self.mean,
            std: self.std,
        }
    }
}

/// `Σ_stages mean|φ(pred) − φ(gt)|` and its gradient with respect to `pred`.
pub fn perceptual_term<T: Element>(
    fx: &FeatureExtractor<T>,
    stages: &[usize],
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    want_grad: bool,
) -> (f64, Option<Tensor<T>>) {
    let Some(&deepest) = stages.iter().max() else {
        return (0.0, want_grad.then(|| Tensor::zeros(pred.shape())));
    };
    let depth = deepest + 1;
    let (fp, tape) = fx.forward(pred, depth);
    let (fg, _) = fx.forward(gt, depth);
    let mut loss = 0.0;
    let mut grads: Vec<Option<Tensor<T>>> = (0..depth).map(|_| None).collect();
    for &s in stages {
        let (a, b) = (&fp[s], &fg[s]);
        let inv = 1.0 / a.len() as f64;
        loss += a.data().iter().zip(b.data()).map(|(&p, &g)| (p - g).abs().as_f64()).sum::<f64>() * inv;
        if want_grad {
            let mut g = Tensor::zeros(a.shape());
            for ((o, &p), &q) in g.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                *o = T::lit(sign(p - q) * inv);
            }
            match grads[s].as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => grads[s] = Some(g),
            }
        }
    }
    let dx = want_grad.then(|| fx.backward(&tape, &grads));
    (loss, dx)
}

pub(crate) fn sign<T: Element>(v: T) -> f64 {
    if v > T::zero() {
        1.0
    } else if v < T::zero() {
        -1.0
    } else {
        0.0
    }
}
