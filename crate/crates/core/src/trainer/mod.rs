//! Pair sampling, the joint encoder/exposure-net training step, plateau
//! learning-rate schedule and the checkpointing training loop.

pub mod augment;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::LUMA_BT601;
use crate::imaging::{ExposureStack, LdrImage};
use crate::losses::{combined_loss, hdr_term, l1_term, perceptual_term, tv_term, FeatureExtractor, LossBreakdown, LossConfig};
use crate::masking::MaskConfig;
use crate::model::checkpoint::NamedTensor;
use crate::model::{
    build_model, encoder_head, encoder_head_backward, exposure_head, exposure_head_backward, save_checkpoint,
    Checkpoint, ExposureNets, ModelWeights, NetConfig,
};
use crate::nn::{Adam, AdamConfig, Element, Tensor};

pub use augment::{augment, AugmentConfig, AugmentDraw};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub plateau_factor: f64,
    pub plateau_patience: u64,
    /// Smoothing of the running loss watched by the plateau schedule.
    pub plateau_ema: f64,
    /// Relative improvement of the running loss that resets the patience counter.
    pub plateau_threshold: f64,
    pub crop_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Restrict pairs to (anchor, other) when set, e.g. EV 0 with every other EV.
    pub pair_anchor_ev: Option<f64>,
    pub loss: LossConfig,
    pub net: NetConfig,
    pub mask: MaskConfig,
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-4,
            plateau_factor: 0.5,
            plateau_patience: 2000,
            plateau_ema: 0.98,
            plateau_threshold: 1e-4,
            crop_size: 256,
            max_steps: 200_000,
            seed: 0,
            checkpoint_every: 1000,
            pair_anchor_ev: None,
            loss: LossConfig::default(),
            net: NetConfig::default(),
            mask: MaskConfig::default(),
            augment: AugmentConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.loss.validate()?;
        self.mask.validate()?;
        self.augment.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.crop_size == 0 {
            return bad("batch_size and crop_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and nonnegative, got {}", self.learning_rate));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad(format!("plateau_factor must lie in (0, 1], got {}", self.plateau_factor));
        }
        if !(0.0..1.0).contains(&self.plateau_ema) || self.plateau_threshold < 0.0 {
            return bad("plateau_ema must lie in [0, 1) and plateau_threshold be nonnegative".into());
        }
        let m = self.net.size_multiple();
        if self.crop_size % m != 0 {
            return bad(format!("crop_size {} is not divisible by {m}", self.crop_size));
        }
        Ok(())
    }
}

/// Halve-on-plateau schedule driven by an exponential moving average of the loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub factor: f64,
    pub patience: u64,
    pub ema_decay: f64,
    pub threshold: f64,
    pub running: Option<f64>,
    pub best: f64,
    pub since_best: u64,
    pub reductions: u32,
}

impl PlateauSchedule {
    pub fn new(factor: f64, patience: u64, ema_decay: f64, threshold: f64) -> Self {
        PlateauSchedule {
            factor,
            patience,
            ema_decay,
            threshold,
            running: None,
            best: f64::INFINITY,
            since_best: 0,
            reductions: 0,
        }
    }

    /// Feed one loss value; returns the (possibly reduced) learning rate.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        let r = match self.running {
            None => loss,
            Some(prev) => self.ema_decay * prev + (1.0 - self.ema_decay) * loss,
        };
        self.running = Some(r);
        if r < self.best * (1.0 - self.threshold) {
            self.best = r;
            self.since_best = 0;
            return lr;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            self.since_best = 0;
            self.reductions += 1;
            return lr * self.factor;
        }
        lr
    }
}

/// Random source for batch item `index` of `step`, independent of any other draw.
pub fn sample_rng(seed: u64, step: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(b"hdrbpair");
    ChaCha8Rng::from_seed(key)
}

/// Two distinct images of one stack, shorter exposure first.
pub fn sample_pair<'a, R: Rng>(stack: &'a ExposureStack, rng: &mut R) -> Result<(&'a LdrImage, &'a LdrImage)> {
    sample_pair_anchored(stack, None, rng)
}

/// Like [`sample_pair`], optionally forcing one member to the image at `anchor_ev`.
pub fn sample_pair_anchored<'a, R: Rng>(
    stack: &'a ExposureStack,
    anchor_ev: Option<f64>,
    rng: &mut R,
) -> Result<(&'a LdrImage, &'a LdrImage)> {
    let n = stack.len();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "stack {} has {n} image(s); a pair needs at least 2",
            stack.scene_id()
        )));
    }
    let (i, j) = match anchor_ev {
        Some(ev) => {
            let a = stack
                .images()
                .iter()
                .position(|im| (im.ev() - ev).abs() < 1e-9)
                .ok_or_else(|| Error::Invalid(format!("stack {} has no image at EV {ev}", stack.scene_id())))?;
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            (a, b)
        }
        None => {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            (a, b)
        }
    };
    let (lo, hi) = (i.min(j), i.max(j));
    Ok((&stack.images()[lo], &stack.images()[hi]))
}

/// A batch of aligned pairs: `i1` shorter, `i2` longer exposure, `ratio = Δt₂/Δt₁`.
#[derive(Clone, Debug)]
pub struct PairBatch<T> {
    pub i1: Tensor<T>,
    pub i2: Tensor<T>,
    pub ratio: Vec<f64>,
    /// `(stack index, ev1, ev2)` per item, for diagnostics.
    pub origin: Vec<(usize, f64, f64)>,
}

impl<T: Element> PairBatch<T> {
    pub fn len(&self) -> usize {
        self.ratio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratio.is_empty()
    }
}

/// Deterministic batch for `step`: item `k` draws its stack, pair and transform
/// from [`sample_rng`]`(seed, step, k)`.
pub fn make_batch<T: Element>(stacks: &[ExposureStack], cfg: &TrainConfig, step: u64) -> Result<PairBatch<T>> {
    if stacks.is_empty() {
        return Err(Error::Empty("no training stacks".into()));
    }
    let mut a = Vec::with_capacity(cfg.batch_size);
    let mut b = Vec::with_capacity(cfg.batch_size);
    let mut ratio = Vec::with_capacity(cfg.batch_size);
    let mut origin = Vec::with_capacity(cfg.batch_size);
    for k in 0..cfg.batch_size {
        let mut rng = sample_rng(cfg.seed, step, k as u64);
        let si = rng.random_range(0..stacks.len());
        let (l1, l2) = sample_pair_anchored(&stacks[si], cfg.pair_anchor_ev, &mut rng)?;
        let (p1, p2) = augment(
            (&l1.pixels, &l2.pixels),
            cfg.crop_size,
            &cfg.augment,
            &mut rng,
        )?;
        a.push(p1);
        b.push(p2);
        ratio.push(l1.meta.ratio_to(&l2.meta));
        origin.push((si, l1.ev(), l2.ev()));
    }
    Ok(PairBatch {
        i1: Tensor::from_images(&a.iter().collect::<Vec<_>>())?,
        i2: Tensor::from_images(&b.iter().collect::<Vec<_>>())?,
        ratio,
        origin,
    })
}

/// `x ⊙ Λ(luma(x))` on a batch of RGB tensors.
pub fn mask_tensor<T: Element>(x: &Tensor<T>, cfg: &MaskConfig) -> Tensor<T> {
    let plane = x.plane();
    let mut out = x.clone();
    for n in 0..x.n() {
        let src = x.item(n);
        let dst = out.item_mut(n);
        for i in 0..plane {
            let y = LUMA_BT601[0] * src[i].as_f64()
                + LUMA_BT601[1] * src[plane + i].as_f64()
                + LUMA_BT601[2] * src[2 * plane + i].as_f64();
            let m = T::lit(cfg.weight(y));
            for c in 0..3 {
                dst[c * plane + i] = dst[c * plane + i] * m;
            }
        }
    }
    out
}

fn scale_items<T: Element>(x: &Tensor<T>, k: &[f64]) -> Tensor<T> {
    let mut out = x.clone();
    for (n, &s) in k.iter().enumerate() {
        let s = T::lit(s);
        out.item_mut(n).iter_mut().for_each(|v| *v = *v * s);
    }
    out
}

/// Everything the loss needs besides the model.
pub struct Objective<'a, T> {
    pub loss: &'a LossConfig,
    pub mask: &'a MaskConfig,
    pub extractor: &'a FeatureExtractor<T>,
    pub stages: &'a [usize],
}

/// Forward both directions, evaluate the combined loss and accumulate
/// parameter gradients (callers zero them first).
pub fn loss_and_grad<T: Element>(
    model: &mut ModelWeights<T>,
    obj: &Objective<'_, T>,
    batch: &PairBatch<T>,
) -> Result<LossBreakdown> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::Empty("empty batch".into()));
    }
    let lc = obj.loss;
    let m1 = mask_tensor(&batch.i1, obj.mask);
    let m2 = mask_tensor(&batch.i2, obj.mask);
    let enc_in = Tensor::concat_batch(&[&m1, &m2]);
    let (f, enc_tape) = model.encoder.forward_train(&enc_in);
    let (x, tanh_e) = encoder_head(&f, &enc_in);
    let x1 = x.slice_batch(0, b);
    let x2 = x.slice_batch(b, 2 * b);
    let inv_ratio: Vec<f64> = batch.ratio.iter().map(|r| 1.0 / r).collect();
    let up_in = scale_items(&x1, &batch.ratio);
    let down_in = scale_items(&x2, &inv_ratio);

    // Exposure nets: up predicts the longer exposure, down the shorter one.
    enum Tapes<T> {
        Separate(crate::model::UNetTape<T>, crate::model::UNetTape<T>),
        Shared(crate::model::UNetTape<T>),
    }
    let (p2, t2, p1, t1, tapes) = match &mut model.exposure {
        ExposureNets::Separate { up, down } => {
            let (fu, tu) = up.forward_train(&up_in);
            let (fd, td) = down.forward_train(&down_in);
            let (p2, t2) = exposure_head(&fu);
            let (p1, t1) = exposure_head(&fd);
            (p2, t2, p1, t1, Tapes::Separate(tu, td))
        }
        ExposureNets::Shared(net) => {
            let (fs, ts) = net.forward_train(&Tensor::concat_batch(&[&up_in, &down_in]));
            let (p, t) = exposure_head(&fs);
            (p.slice_batch(0, b), t.slice_batch(0, b), p.slice_batch(b, 2 * b), t.slice_batch(b, 2 * b), Tapes::Shared(ts))
        }
    };

    let (l_h, mut dx1, mut dx2) = hdr_term(&x1, &x2, &batch.ratio, lc.epsilon)?;
    let (r1, dr1) = l1_term(&p1, &batch.i1)?;
    let (r2, dr2) = l1_term(&p2, &batch.i2)?;
    let want_p = lc.lambda_p > 0.0;
    let (pp1, dp1) = perceptual_term(obj.extractor, obj.stages, &p1, &batch.i1, want_p);
    let (pp2, dp2) = perceptual_term(obj.extractor, obj.stages, &p2, &batch.i2, want_p);
    let (v1, dv1) = tv_term(&p1);
    let (v2, dv2) = tv_term(&p2);
    let terms = combined_loss(lc, l_h, r1 + r2, pp1 + pp2, v1 + v2);

    let weighted = |dr: Tensor<T>, dp: Option<Tensor<T>>, dv: Tensor<T>| {
        let (wr, wp, wv) = (T::lit(lc.lambda_r), T::lit(lc.lambda_p), T::lit(lc.lambda_tv));
        let mut g = dr.map(|v| v * wr);
        if let Some(dp) = dp {
            g.data_mut().iter_mut().zip(dp.data()).for_each(|(o, &v)| *o += v * wp);
        }
        g.data_mut().iter_mut().zip(dv.data()).for_each(|(o, &v)| *o += v * wv);
        g
    };
    let dp1 = weighted(dr1, dp1, dv1);
    let dp2 = weighted(dr2, dp2, dv2);
    let df1 = exposure_head_backward(&t1, &dp1);
    let df2 = exposure_head_backward(&t2, &dp2);
    let (d_up, d_down) = match (&mut model.exposure, &tapes) {
        (ExposureNets::Separate { up, down }, Tapes::Separate(tu, td)) => (
            up.backward(tu, &df2, true).expect("dx requested"),
            down.backward(td, &df1, true).expect("dx requested"),
        ),
        (ExposureNets::Shared(net), Tapes::Shared(ts)) => {
            let d = net.backward(ts, &Tensor::concat_batch(&[&df2, &df1]), true).expect("dx requested");
            (d.slice_batch(0, b), d.slice_batch(b, 2 * b))
        }
        _ => unreachable!("tapes follow the network layout"),
    };

    let wh = T::lit(lc.lambda_h);
    dx1.data_mut().iter_mut().for_each(|v| *v = *v * wh);
    dx2.data_mut().iter_mut().for_each(|v| *v = *v * wh);
    dx1.add_assign(&scale_items(&d_up, &batch.ratio));
    dx2.add_assign(&scale_items(&d_down, &inv_ratio));
    let dx = Tensor::concat_batch(&[&dx1, &dx2]);
    let df = encoder_head_backward(&tanh_e, &dx);
    model.encoder.backward(&enc_tape, &df, false);
    Ok(terms)
}

/// Model, optimizer and schedule state; everything needed to resume exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: ModelWeights<f32>,
    pub adam: Adam<f32>,
    pub lr: f64,
    pub step: u64,
    pub plateau: PlateauSchedule,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StateExtra {
    train: TrainConfig,
    lr: f64,
    adam_t: u64,
    plateau: PlateauSchedule,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut model = build_model::<f32>(&config.net, config.seed)?;
        let sizes: Vec<usize> = model.params_mut().iter().map(|(_, p)| p.value.len()).collect();
        Ok(TrainState {
            adam: Adam::new(config.adam, &sizes),
            lr: config.learning_rate,
            step: 0,
            plateau: PlateauSchedule::new(
                config.plateau_factor,
                config.plateau_patience,
                config.plateau_ema,
                config.plateau_threshold,
            ),
            model,
            config,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model, self.step);
        let mut model = self.model.clone();
        for (((name, p), m), v) in model.params_mut().into_iter().zip(&self.adam.m).zip(&self.adam.v) {
            for (kind, data) in [("m", m), ("v", v)] {
                ck.tensors.insert(
                    format!("adam.{kind}.{name}"),
                    NamedTensor {
                        shape: p.shape.clone(),
                        data: data.clone(),
                    },
                );
            }
        }
        let extra = StateExtra {
            train: self.config.clone(),
            lr: self.lr,
            adam_t: self.adam.t,
            plateau: self.plateau.clone(),
        };
        ck.extra = Some(serde_json::to_value(extra).expect("state serializes"));
        ck
    }

    /// Restore a state written by [`TrainState::to_checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let extra: StateExtra = serde_json::from_value(
            ck.extra
                .clone()
                .ok_or_else(|| Error::Checkpoint("checkpoint carries no training state".into()))?,
        )
        .map_err(|e| Error::Checkpoint(format!("training state: {e}")))?;
        let mut model = ck.to_model()?;
        let mut adam = Adam::new(extra.train.adam, &[]);
        adam.t = extra.adam_t;
        for (name, _) in model.params_mut() {
            adam.m.push(ck.get(&format!("adam.m.{name}"))?.data.clone());
            adam.v.push(ck.get(&format!("adam.v.{name}"))?.data.clone());
        }
        Ok(TrainState {
            config: extra.train,
            model,
            adam,
            lr: extra.lr,
            step: ck.step,
            plateau: extra.plateau,
        })
    }
}

/// One optimization step. Returns the loss breakdown and the learning rate used.
pub fn train_step(
    state: &mut TrainState,
    extractor: &FeatureExtractor<f32>,
    stages: &[usize],
    batch: &PairBatch<f32>,
) -> Result<(LossBreakdown, f64)> {
    state.model.zero_grad();
    let obj = Objective {
        loss: &state.config.loss,
        mask: &state.config.mask,
        extractor,
        stages,
    };
    let terms = loss_and_grad(&mut state.model, &obj, batch)?;
    let grads_finite = state
        .model
        .params_mut()
        .iter()
        .all(|(_, p)| p.grad.iter().all(|g| g.is_finite()));
    if !terms.total.is_finite() || !grads_finite {
        return Err(Error::NonFinite {
            step: state.step,
            batch: (0..batch.len()).collect(),
            detail: format!("loss terms {terms:?}; pairs (stack, ev1, ev2) {:?}", batch.origin),
        });
    }
    let lr = state.lr;
    let mut params: Vec<_> = state.model.params_mut().into_iter().map(|(_, p)| p).collect();
    state.adam.step(&mut params, lr);
    state.step += 1;
    state.lr = state.plateau.observe(terms.total, lr);
    Ok((terms, lr))
}

pub const METRICS_HEADER: &str = "step\tl_h\tl_r\tl_p\tl_tv\ttotal\tlr";

/// One metrics-log row; floats use shortest round-trip formatting.
pub fn metrics_row(step: u64, t: &LossBreakdown, lr: f64) -> String {
    format!("{step}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}", t.l_h, t.l_r, t.l_p, t.l_tv, t.total, lr)
}

/// Where [`fit`] writes its outputs.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub out_dir: PathBuf,
}

impl RunPaths {
    pub fn metrics(&self) -> PathBuf {
        self.out_dir.join("metrics.tsv")
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.out_dir.join(format!("ckpt_{step:08}.hdrb"))
    }

    pub fn latest(&self) -> PathBuf {
        self.out_dir.join("latest.hdrb")
    }
}

/// Train until `config.max_steps`, appending to `metrics.tsv` and writing
/// checkpoints every `checkpoint_every` steps and at the end.
pub fn fit(state: &mut TrainState, stacks: &[ExposureStack], out_dir: &Path) -> Result<Checkpoint> {
    let usable: Vec<ExposureStack> = stacks.iter().filter(|s| s.len() >= 2).cloned().collect();
    if usable.is_empty() {
        return Err(Error::Empty("manifest has no stack with two or more exposures".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths = RunPaths {
        out_dir: out_dir.to_path_buf(),
    };
    let cfg = state.config.clone();
    let extractor = cfg.loss.extractor::<f32>()?;
    let stages = extractor.stage_indices(&cfg.loss.vgg_layers)?;
    let metrics_path = paths.metrics();
    let fresh = state.step == 0 || !metrics_path.exists();
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    if fresh {
        log.set_len(0).map_err(|e| Error::io(&metrics_path, e))?;
        writeln!(log, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
    }
    while state.step < cfg.max_steps {
        let batch = make_batch::<f32>(&usable, &cfg, state.step)?;
        let (terms, lr) = train_step(state, &extractor, &stages, &batch)?;
        writeln!(log, "{}", metrics_row(state.step, &terms, lr)).map_err(|e| Error::io(&metrics_path, e))?;
        if state.step % 50 == 0 || state.step == 1 {
            log::info!(
                "step {} total {:.5} (h {:.4} r {:.4} p {:.4} tv {:.4}) lr {lr:e}",
                state.step,
                terms.total,
                terms.l_h,
                terms.l_r,
                terms.l_p,
                terms.l_tv
            );
        }
        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < cfg.max_steps {
            save_checkpoint(&paths.checkpoint(state.step), &state.to_checkpoint())?;
        }
    }
    log.flush().map_err(|e| Error::io(&metrics_path, e))?;
    let ck = state.to_checkpoint();
    save_checkpoint(&paths.checkpoint(state.step), &ck)?;
    save_checkpoint(&paths.latest(), &ck)?;
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_plateaus_quarter_the_rate() {
        let mut p = PlateauSchedule::new(0.5, 3, 0.0, 0.0);
        let mut lr = 1e-4;
        lr = p.observe(1.0, lr);
        for _ in 0..6 {
            lr = p.observe(1.0, lr);
        }
        assert_eq!(p.reductions, 2);
        assert_eq!(lr, 2.5e-5);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut p = PlateauSchedule::new(0.5, 2, 0.0, 0.0);
        let mut lr = 1.0;
        for v in [5.0, 4.0, 3.0, 2.0, 1.0] {
            lr = p.observe(v, lr);
        }
        assert_eq!(lr, 1.0);
    }

    #[test]
    fn sample_rng_depends_on_every_key() {
        let draw = |s, t, i| sample_rng(s, t, i).random::<u64>();
        let base = draw(1, 2, 3);
        assert_eq!(base, draw(1, 2, 3));
        assert_ne!(base, draw(0, 2, 3));
        assert_ne!(base, draw(1, 0, 3));
        assert_ne!(base, draw(1, 2, 0));
    }
}
