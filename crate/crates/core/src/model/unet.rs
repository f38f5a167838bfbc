//! U-shaped encoder–decoder: per level two 3×3 conv + BN + ReLU on the way down,
//! sub-pixel upsampling, skip concatenation and two 3×3 conv + BN + leaky ReLU
//! on the way up, then a 1×1 projection to three channels.

use rand::Rng;

use crate::nn::layers::{
    leaky_relu, leaky_relu_backward, max_pool2, max_pool2_backward, pixel_shuffle2, pixel_unshuffle2,
};
use crate::nn::{BatchNorm2d, BnCache, Conv2d, Element, Param, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

struct BlockTape<T> {
    x: Tensor<T>,
    bn: BnCache<T>,
    y: Tensor<T>,
}

impl<T: Element> ConvBn<T> {
    fn forward_train(&mut self, x: Tensor<T>, slope: f64) -> (Tensor<T>, BlockTape<T>) {
        let z = self.conv.forward(&x);
        let (n, bn) = self.bn.forward_train(&z);
        let y = leaky_relu(&n, slope);
        (y.clone(), BlockTape { x, bn, y })
    }

    fn forward_eval(&self, x: &Tensor<T>, slope: f64) -> Tensor<T> {
        leaky_relu(&self.bn.forward_eval(&self.conv.forward(x)), slope)
    }

    fn backward(&mut self, tape: &BlockTape<T>, dy: &Tensor<T>, slope: f64, need_dx: bool) -> Option<Tensor<T>> {
        let dn = leaky_relu_backward(&tape.y, dy, slope);
        let dz = self.bn.backward(&tape.bn, &dn);
        self.conv.backward(&tape.x, &dz, need_dx)
    }

    fn cast<U: Element>(&self) -> ConvBn<U> {
        ConvBn {
            conv: self.conv.cast(),
            bn: self.bn.cast(),
        }
    }
}

/// Activations saved by [`UNet::forward_train`].
pub struct UNetTape<T> {
    enc: Vec<[BlockTape<T>; 2]>,
    pools: Vec<([usize; 4], Vec<u32>)>,
    up_in: Vec<Tensor<T>>,
    dec: Vec<[BlockTape<T>; 2]>,
    head_in: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNet<T> {
    pub widths: Vec<usize>,
    pub slope: f64,
    pub enc: Vec<[ConvBn<T>; 2]>,
    /// `up[k]`: level `k+1` features to `4·widths[k]` channels before the shuffle.
    pub up: Vec<Conv2d<T>>,
    pub dec: Vec<[ConvBn<T>; 2]>,
    pub head: Conv2d<T>,
}

impl<T: Element> UNet<T> {
    pub fn init<R: Rng>(widths: &[usize], slope: f64, bn_momentum: f64, bn_eps: f64, icnr: bool, rng: &mut R) -> Self {
        let levels = widths.len();
        let block = |cin: usize, cout: usize, rng: &mut R| ConvBn {
            conv: Conv2d::init(cin, cout, 3, false, 1.0, rng),
            bn: BatchNorm2d::new(cout, bn_momentum, bn_eps),
        };
        let mut enc = Vec::with_capacity(levels);
        for k in 0..levels {
            let cin = if k == 0 { 3 } else { widths[k - 1] };
            enc.push([block(cin, widths[k], rng), block(widths[k], widths[k], rng)]);
        }
        let mut up = Vec::with_capacity(levels - 1);
        let mut dec = Vec::with_capacity(levels - 1);
        for k in 0..levels - 1 {
            let mut conv = Conv2d::init(widths[k + 1], 4 * widths[k], 3, true, 1.0, rng);
            if icnr {
                icnr_fill(&mut conv);
            }
            up.push(conv);
            dec.push([block(2 * widths[k], widths[k], rng), block(widths[k], widths[k], rng)]);
        }
        let head = Conv2d::init(widths[0], 3, 1, true, 0.5, rng);
        UNet {
            widths: widths.to_vec(),
            slope,
            enc,
            up,
            dec,
            head,
        }
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    /// Training-mode forward; returns the 3-channel pre-activation output.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, UNetTape<T>) {
        let levels = self.levels();
        let slope = self.slope;
        let mut enc_t = Vec::with_capacity(levels);
        let mut pools = Vec::with_capacity(levels - 1);
        let mut skips = Vec::with_capacity(levels);
        let mut h = x.clone();
        for k in 0..levels {
            if k > 0 {
                let (p, arg) = max_pool2(&h);
                pools.push((h.shape(), arg));
                h = p;
            }
            let [b0, b1] = &mut self.enc[k];
            let (y0, t0) = b0.forward_train(h, 0.0);
            let (y1, t1) = b1.forward_train(y0, 0.0);
            enc_t.push([t0, t1]);
            skips.push(y1.clone());
            h = y1;
        }
        let mut up_in: Vec<Option<Tensor<T>>> = (0..levels - 1).map(|_| None).collect();
        let mut dec_t: Vec<Option<[BlockTape<T>; 2]>> = (0..levels - 1).map(|_| None).collect();
        for k in (0..levels - 1).rev() {
            let u = pixel_shuffle2(&self.up[k].forward(&h));
            up_in[k] = Some(h);
            let cat = Tensor::concat_channels(&u, &skips[k]);
            let [b0, b1] = &mut self.dec[k];
            let (y0, t0) = b0.forward_train(cat, slope);
            let (y1, t1) = b1.forward_train(y0, slope);
            dec_t[k] = Some([t0, t1]);
            h = y1;
        }
        let out = self.head.forward(&h);
        let tape = UNetTape {
            enc: enc_t,
            pools,
            up_in: up_in.into_iter().map(Option::unwrap).collect(),
            dec: dec_t.into_iter().map(Option::unwrap).collect(),
            head_in: h,
        };
        (out, tape)
    }

    /// Backpropagate `d_out`; parameter gradients accumulate, input gradient returned on request.
    pub fn backward(&mut self, tape: &UNetTape<T>, d_out: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let levels = self.levels();
        let slope = self.slope;
        let mut dh = self.head.backward(&tape.head_in, d_out, true).expect("dx requested");
        let mut dskip: Vec<Option<Tensor<T>>> = (0..levels).map(|_| None).collect();
        for k in 0..levels - 1 {
            let [b0, b1] = &mut self.dec[k];
            let [t0, t1] = &tape.dec[k];
            let d1 = b1.backward(t1, &dh, slope, true).expect("dx requested");
            let dcat = b0.backward(t0, &d1, slope, true).expect("dx requested");
            let (du, ds) = dcat.split_channels(self.widths[k]);
            dskip[k] = Some(ds);
            let du = pixel_unshuffle2(&du);
            dh = self.up[k].backward(&tape.up_in[k], &du, true).expect("dx requested");
        }
        for k in (0..levels).rev() {
            if let Some(ds) = dskip[k].take() {
                dh.add_assign(&ds);
            }
            let [b0, b1] = &mut self.enc[k];
            let [t0, t1] = &tape.enc[k];
            let d1 = b1.backward(t1, &dh, 0.0, true).expect("dx requested");
            let first_needs_dx = k > 0 || need_dx;
            let d0 = b0.backward(t0, &d1, 0.0, first_needs_dx);
            if k == 0 {
                return d0;
            }
            let (shape, arg) = &tape.pools[k - 1];
            dh = max_pool2_backward(*shape, arg, &d0.expect("dx requested"));
        }
        unreachable!("loop returns at level 0")
    }

    /// Inference forward using running batch-norm statistics.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let levels = self.levels();
        let mut skips = Vec::with_capacity(levels);
        let mut h = x.clone();
        for k in 0..levels {
            if k > 0 {
                h = max_pool2(&h).0;
            }
            let [b0, b1] = &self.enc[k];
            h = b1.forward_eval(&b0.forward_eval(&h, 0.0), 0.0);
            skips.push(h.clone());
        }
        for k in (0..levels - 1).rev() {
            let u = pixel_shuffle2(&self.up[k].forward(&h));
            let cat = Tensor::concat_channels(&u, &skips[k]);
            let [b0, b1] = &self.dec[k];
            h = b1.forward_eval(&b0.forward_eval(&cat, self.slope), self.slope);
        }
        self.head.forward(&h)
    }

    /// Trainable parameters in a fixed order, with stable names.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (k, blocks) in self.enc.iter_mut().enumerate() {
            for (j, b) in blocks.iter_mut().enumerate() {
                out.push((format!("enc{k}.{j}.conv.weight"), &mut b.conv.weight));
                out.push((format!("enc{k}.{j}.bn.gamma"), &mut b.bn.gamma));
                out.push((format!("enc{k}.{j}.bn.beta"), &mut b.bn.beta));
            }
        }
        for (k, (up, blocks)) in self.up.iter_mut().zip(self.dec.iter_mut()).enumerate() {
            out.push((format!("up{k}.weight"), &mut up.weight));
            if let Some(b) = &mut up.bias {
                out.push((format!("up{k}.bias"), b));
            }
            for (j, b) in blocks.iter_mut().enumerate() {
                out.push((format!("dec{k}.{j}.conv.weight"), &mut b.conv.weight));
                out.push((format!("dec{k}.{j}.bn.gamma"), &mut b.bn.gamma));
                out.push((format!("dec{k}.{j}.bn.beta"), &mut b.bn.beta));
            }
        }
        out.push(("head.weight".into(), &mut self.head.weight));
        if let Some(b) = &mut self.head.bias {
            out.push(("head.bias".into(), b));
        }
        out
    }

    /// Batch-norm running statistics, named like the parameters.
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        let blocks = self
            .enc
            .iter_mut()
            .enumerate()
            .map(|(k, b)| (format!("enc{k}"), b))
            .chain(self.dec.iter_mut().enumerate().map(|(k, b)| (format!("dec{k}"), b)));
        for (prefix, pair) in blocks {
            for (j, b) in pair.iter_mut().enumerate() {
                out.push((format!("{prefix}.{j}.bn.running_mean"), &mut b.bn.running_mean));
                out.push((format!("{prefix}.{j}.bn.running_var"), &mut b.bn.running_var));
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn cast<U: Element>(&self) -> UNet<U> {
        UNet {
            widths: self.widths.clone(),
            slope: self.slope,
            enc: self.enc.iter().map(|[a, b]| [a.cast(), b.cast()]).collect(),
            up: self.up.iter().map(Conv2d::cast).collect(),
            dec: self.dec.iter().map(|[a, b]| [a.cast(), b.cast()]).collect(),
            head: self.head.cast(),
        }
    }
}

/// Copy the first sub-kernel of every output group onto its three siblings.
fn icnr_fill<T: Element>(conv: &mut Conv2d<T>) {
    let per_out = conv.cin * conv.k * conv.k;
    let groups = conv.cout / 4;
    for g in 0..groups {
        let base = 4 * g * per_out;
        let (src, rest) = conv.weight.value[base..base + 4 * per_out].split_at_mut(per_out);
        for s in 0..3 {
            rest[s * per_out..(s + 1) * per_out].copy_from_slice(src);
        }
    }
}
