//! Convolution, batch normalization, pooling, pixel shuffle and pointwise
//! activations, each with an explicit backward pass.

use rand::Rng;

use super::{gemm, Element, Tensor};

/// A trainable array and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub shape: Vec<usize>,
}

impl<T: Element> Param<T> {
    pub fn new(shape: Vec<usize>, value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        Param {
            grad: vec![T::zero(); value.len()],
            value,
            shape,
        }
    }

    pub fn filled(shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Param::new(shape, vec![v; n])
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn cast<U: Element>(&self) -> Param<U> {
        Param {
            value: self.value.iter().map(|v| U::lit(v.as_f64())).collect(),
            grad: self.grad.iter().map(|v| U::lit(v.as_f64())).collect(),
            shape: self.shape.clone(),
        }
    }
}

/// Stride-1 "same" convolution with square kernel `k ∈ {1, 3, 5, ...}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Element> Conv2d<T> {
    /// He-uniform initialization scaled by `gain`.
    pub fn init<R: Rng>(cin: usize, cout: usize, k: usize, bias: bool, gain: f64, rng: &mut R) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        let fan_in = (cin * k * k) as f64;
        let bound = gain * (6.0 / fan_in).sqrt();
        let weight = (0..cout * cin * k * k)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        Conv2d {
            cin,
            cout,
            k,
            weight: Param::new(vec![cout, cin, k, k], weight),
            bias: bias.then(|| Param::filled(vec![cout], T::zero())),
        }
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c(), self.cin, "conv input channels");
        let [n, _, h, w] = x.shape();
        let hw = h * w;
        let mut y = Tensor::zeros([n, self.cout, h, w]);
        let mut col = if self.k == 1 { Vec::new() } else { vec![T::zero(); self.patch() * hw] };
        for i in 0..n {
            let src: &[T] = if self.k == 1 {
                x.item(i)
            } else {
                im2col(x.item(i), self.cin, h, w, self.k, &mut col);
                &col
            };
            let dst = y.item_mut(i);
            gemm(false, false, self.cout, hw, self.patch(), T::one(), &self.weight.value, src, T::zero(), dst);
            if let Some(b) = &self.bias {
                for (o, &bv) in b.value.iter().enumerate() {
                    dst[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        y
    }

    /// Accumulate parameter gradients; return `dx` when requested.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let [n, _, h, w] = x.shape();
        let hw = h * w;
        let patch = self.patch();
        let mut rows = if self.k == 1 { Vec::new() } else { vec![T::zero(); patch * hw] };
        let mut xt = if self.k == 1 { vec![T::zero(); patch * hw] } else { Vec::new() };
        for i in 0..n {
            let g = dy.item(i);
            // dW = dy · colᵀ, with colᵀ built directly in row layout
            let src: &[T] = if self.k == 1 {
                transpose(x.item(i), self.cin, hw, &mut xt);
                &xt
            } else {
                im2row(x.item(i), self.cin, h, w, self.k, &mut rows);
                &rows
            };
            gemm(false, false, self.cout, patch, hw, T::one(), g, src, T::one(), &mut self.weight.grad);
            if let Some(b) = &mut self.bias {
                for (o, bg) in b.grad.iter_mut().enumerate() {
                    *bg += g[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
                }
            }
        }
        need_dx.then(|| self.input_grad(dy))
    }

    /// Input gradient only: a "same" convolution of `dy` with the flipped, transposed kernel.
    pub fn input_grad(&self, dy: &Tensor<T>) -> Tensor<T> {
        let [n, _, h, w] = dy.shape();
        let hw = h * w;
        let mut dx = Tensor::zeros([n, self.cin, h, w]);
        if self.k == 1 {
            for i in 0..n {
                gemm(true, false, self.cin, hw, self.cout, T::one(), &self.weight.value, dy.item(i), T::zero(), dx.item_mut(i));
            }
            return dx;
        }
        let kk = self.k * self.k;
        let mut flipped = vec![T::zero(); self.cin * self.cout * kk];
        for co in 0..self.cout {
            for ci in 0..self.cin {
                let src = &self.weight.value[(co * self.cin + ci) * kk..][..kk];
                let dst = &mut flipped[(ci * self.cout + co) * kk..][..kk];
                for (j, v) in src.iter().enumerate() {
                    dst[kk - 1 - j] = *v;
                }
            }
        }
        let mut col = vec![T::zero(); self.cout * kk * hw];
        for i in 0..n {
            im2col(dy.item(i), self.cout, h, w, self.k, &mut col);
            gemm(false, false, self.cin, hw, self.cout * kk, T::one(), &flipped, &col, T::zero(), dx.item_mut(i));
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    pub fn cast<U: Element>(&self) -> Conv2d<U> {
        Conv2d {
            cin: self.cin,
            cout: self.cout,
            k: self.k,
            weight: self.weight.cast(),
            bias: self.bias.as_ref().map(Param::cast),
        }
    }
}

/// Blocked transpose of a row-major `rows × cols` matrix into `cols × rows`.
fn transpose<T: Element>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Unfold `C×H×W` into `(H·W)×(C·k·k)`, the transpose of [`im2col`].
fn im2row<T: Element>(x: &[T], c: usize, h: usize, w: usize, k: usize, out: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let patch = c * k * k;
    let mut shifted = vec![T::zero(); w];
    for y in 0..h {
        let block = &mut out[y * w * patch..(y + 1) * w * patch];
        let mut r = 0;
        for ch in 0..c {
            let plane = &x[ch * hw..(ch + 1) * hw];
            for ky in 0..k {
                let sy = y as isize + ky as isize - pad;
                for kx in 0..k {
                    if sy < 0 || sy >= h as isize {
                        shifted.iter_mut().for_each(|v| *v = T::zero());
                    } else {
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        shifted_copy(src, &mut shifted, kx as isize - pad);
                    }
                    for (j, &v) in shifted.iter().enumerate() {
                        block[j * patch + r] = v;
                    }
                    r += 1;
                }
            }
        }
    }
}

/// Unfold `C×H×W` into `(C·k·k)×(H·W)` with zero padding `k/2`.
fn im2col<T: Element>(x: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut row = 0;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    shifted_copy(src, out, dx);
                }
                row += 1;
            }
        }
    }
}

/// `out[x] = src[x + dx]`, zero outside.
#[inline]
fn shifted_copy<T: Element>(src: &[T], out: &mut [T], dx: isize) {
    let w = src.len() as isize;
    let lo = (-dx).clamp(0, w) as usize;
    let hi = (w - dx).clamp(0, w) as usize;
    out[..lo].iter_mut().for_each(|v| *v = T::zero());
    out[hi..].iter_mut().for_each(|v| *v = T::zero());
    if hi > lo {
        out[lo..hi].copy_from_slice(&src[(lo as isize + dx) as usize..(hi as isize + dx) as usize]);
    }
}

/// Per-channel batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

/// Saved activations of a training-mode batch-norm forward.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(c: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm2d {
            gamma: Param::filled(vec![c], T::one()),
            beta: Param::filled(vec![c], T::zero()),
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
            momentum,
            eps,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// Normalize with batch statistics and fold them into the running estimates.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, BnCache<T>) {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels(), "batch-norm channels");
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut y = Tensor::zeros(x.shape());
        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_std = vec![T::zero(); c];
        let mom = T::lit(self.momentum);
        for ch in 0..c {
            let mut sum = 0.0f64;
            for i in 0..n {
                sum += x.item(i)[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0f64;
            for i in 0..n {
                sq += x.item(i)[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|v| (v.as_f64() - mean).powi(2))
                    .sum::<f64>();
            }
            let var = sq / count;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = T::lit(istd);
            let (m, s) = (T::lit(mean), T::lit(istd));
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            for i in 0..n {
                let src = &x.item(i)[ch * plane..(ch + 1) * plane];
                let xh = &mut xhat.item_mut(i)[ch * plane..(ch + 1) * plane];
                for (d, &v) in xh.iter_mut().zip(src) {
                    *d = (v - m) * s;
                }
                let xh = &xhat.item(i)[ch * plane..(ch + 1) * plane];
                let out = &mut y.item_mut(i)[ch * plane..(ch + 1) * plane];
                for (o, &v) in out.iter_mut().zip(xh) {
                    *o = g * v + b;
                }
            }
            let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
            self.running_mean[ch] = (T::one() - mom) * self.running_mean[ch] + mom * m;
            self.running_var[ch] = (T::one() - mom) * self.running_var[ch] + mom * T::lit(unbiased);
        }
        (y, BnCache { xhat, inv_std })
    }

    /// Normalize with the running statistics.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels(), "batch-norm channels");
        let plane = h * w;
        let mut y = x.clone();
        let eps = T::lit(self.eps);
        for ch in 0..c {
            let s = self.gamma.value[ch] / (self.running_var[ch] + eps).sqrt();
            let b = self.beta.value[ch] - self.running_mean[ch] * s;
            for i in 0..n {
                for v in &mut y.item_mut(i)[ch * plane..(ch + 1) * plane] {
                    *v = *v * s + b;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = dy.shape();
        let plane = h * w;
        let count = T::lit((n * plane) as f64);
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xh = T::zero();
            for i in 0..n {
                let g = &dy.item(i)[ch * plane..(ch + 1) * plane];
                let xh = &cache.xhat.item(i)[ch * plane..(ch + 1) * plane];
                for (&gv, &xv) in g.iter().zip(xh) {
                    sum_dy += gv;
                    sum_dy_xh += gv * xv;
                }
            }
            self.gamma.grad[ch] += sum_dy_xh;
            self.beta.grad[ch] += sum_dy;
            let k = self.gamma.value[ch] * cache.inv_std[ch] / count;
            for i in 0..n {
                let g = &dy.item(i)[ch * plane..(ch + 1) * plane];
                let xh = &cache.xhat.item(i)[ch * plane..(ch + 1) * plane];
                let out = &mut dx.item_mut(i)[ch * plane..(ch + 1) * plane];
                for ((o, &gv), &xv) in out.iter_mut().zip(g).zip(xh) {
                    *o = k * (count * gv - sum_dy - xv * sum_dy_xh);
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn cast<U: Element>(&self) -> BatchNorm2d<U> {
        BatchNorm2d {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.iter().map(|v| U::lit(v.as_f64())).collect(),
            running_var: self.running_var.iter().map(|v| U::lit(v.as_f64())).collect(),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

/// Leaky rectifier; `slope = 0` gives a plain ReLU.
pub fn leaky_relu<T: Element>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::lit(slope);
    x.map(|v| if v > T::zero() { v } else { v * s })
}

/// Backward of [`leaky_relu`] given its output.
pub fn leaky_relu_backward<T: Element>(y: &Tensor<T>, dy: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::lit(slope);
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&o, &g)| if o > T::zero() { g } else { g * s })
        .collect();
    Tensor::from_vec(dy.shape(), data).expect("same shape")
}

/// 2×2 max pooling, stride 2, ceil mode (odd edges pool a partial window).
pub fn max_pool2<T: Element>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for i in 0..n {
        let src = x.item(i);
        let dst = y.item_mut(i);
        for ch in 0..c {
            let p = &src[ch * h * w..(ch + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let (yy, xx) = (2 * oy + dy, 2 * ox + dx);
                        if yy < h && xx < w && p[yy * w + xx] > p[best] {
                            best = yy * w + xx;
                        }
                    }
                    dst[(ch * oh + oy) * ow + ox] = p[best];
                    arg.push(best as u32);
                }
            }
        }
    }
    (y, arg)
}

pub fn max_pool2_backward<T: Element>(in_shape: [usize; 4], arg: &[u32], dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = in_shape;
    let out_plane = dy.plane();
    let mut dx = Tensor::zeros(in_shape);
    let mut k = 0;
    for i in 0..n {
        let g = dy.item(i);
        let dst = dx.item_mut(i);
        for ch in 0..c {
            for o in 0..out_plane {
                dst[ch * h * w + arg[k] as usize] += g[ch * out_plane + o];
                k += 1;
            }
        }
    }
    dx
}

/// Rearrange `N×(4C)×H×W` into `N×C×2H×2W`; channel `4c + 2i + j` lands at offset `(i, j)`.
pub fn pixel_shuffle2<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c4, h, w] = x.shape();
    assert_eq!(c4 % 4, 0, "pixel shuffle needs a multiple of 4 channels");
    let c = c4 / 4;
    let mut y = Tensor::zeros([n, c, 2 * h, 2 * w]);
    for b in 0..n {
        let src = x.item(b);
        let dst = y.item_mut(b);
        for ch in 0..c {
            for sub in 0..4 {
                let (i, j) = (sub / 2, sub % 2);
                let plane = &src[(4 * ch + sub) * h * w..(4 * ch + sub + 1) * h * w];
                for yy in 0..h {
                    let row = &mut dst[(ch * 2 * h + 2 * yy + i) * 2 * w..][..2 * w];
                    for xx in 0..w {
                        row[2 * xx + j] = plane[yy * w + xx];
                    }
                }
            }
        }
    }
    y
}

pub fn pixel_unshuffle2<T: Element>(y: &Tensor<T>) -> Tensor<T> {
    let [n, c, h2, w2] = y.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut x = Tensor::zeros([n, 4 * c, h, w]);
    for b in 0..n {
        let src = y.item(b);
        let dst = x.item_mut(b);
        for ch in 0..c {
            for sub in 0..4 {
                let (i, j) = (sub / 2, sub % 2);
                let plane = &mut dst[(4 * ch + sub) * h * w..(4 * ch + sub + 1) * h * w];
                for yy in 0..h {
                    let row = &src[(ch * h2 + 2 * yy + i) * w2..][..w2];
                    for xx in 0..w {
                        plane[yy * w + xx] = row[2 * xx + j];
                    }
                }
            }
        }
    }
    x
}
