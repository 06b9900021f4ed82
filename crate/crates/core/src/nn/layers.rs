//! Forward and backward kernels for the fixed layer set.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Zero-padded "same" convolution (cross-correlation) with an odd square kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `(out, in, k, k)`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 || kernel == 0 {
            return Err(Error::InvalidArgument(format!("kernel size must be odd, got {kernel}")));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        })
    }

    /// Kaiming (fan-in) normal initialisation scaled by `gain`, zero bias.
    pub fn kaiming<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut conv = Self::zeros(in_channels, out_channels, kernel)?;
        let fan_in = (in_channels * kernel * kernel) as f64;
        let normal = Normal::new(0.0, gain * (2.0 / fan_in).sqrt())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for w in conv.weight.iter_mut() {
            *w = normal.sample(rng);
        }
        Ok(conv)
    }

    #[inline]
    fn w_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_channels + ic) * self.kernel + ky) * self.kernel + kx
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        let [n, _, h, w] = input.shape();
        let mut out = Tensor::zeros([n, self.out_channels, h, w]);
        let pad = (self.kernel / 2) as isize;
        for b in 0..n {
            for oc in 0..self.out_channels {
                let dst = out.plane_mut(b, oc);
                dst.fill(self.bias[oc]);
                for ic in 0..self.in_channels {
                    let src = input.plane(b, ic);
                    for ky in 0..self.kernel {
                        let dy = ky as isize - pad;
                        let (y0, y1) = valid_range(h, dy);
                        for kx in 0..self.kernel {
                            let dx = kx as isize - pad;
                            let (x0, x1) = valid_range(w, dx);
                            if x0 >= x1 {
                                continue;
                            }
                            let wv = self.weight[self.w_index(oc, ic, ky, kx)];
                            for y in y0..y1 {
                                let sy = (y as isize + dy) as usize;
                                let sx0 = (x0 as isize + dx) as usize;
                                let d = &mut dst[y * w + x0..y * w + x1];
                                let s = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                                for (o, i) in d.iter_mut().zip(s) {
                                    *o += wv * i;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`.
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
        let [n, _, h, w] = input.shape();
        if grad_out.shape() != [n, self.out_channels, h, w] {
            return Err(Error::Shape(format!(
                "conv gradient {:?} does not match output {:?}",
                grad_out.shape(),
                [n, self.out_channels, h, w]
            )));
        }
        let mut grad_in = Tensor::zeros(input.shape());
        let mut grad_w = vec![0.0; self.weight.len()];
        let mut grad_b = vec![0.0; self.out_channels];
        let pad = (self.kernel / 2) as isize;
        for b in 0..n {
            for oc in 0..self.out_channels {
                let go = grad_out.plane(b, oc);
                grad_b[oc] += go.iter().sum::<f64>();
                for ic in 0..self.in_channels {
                    let src = input.plane(b, ic);
                    for ky in 0..self.kernel {
                        let dy = ky as isize - pad;
                        let (y0, y1) = valid_range(h, dy);
                        for kx in 0..self.kernel {
                            let dx = kx as isize - pad;
                            let (x0, x1) = valid_range(w, dx);
                            if x0 >= x1 {
                                continue;
                            }
                            let wi = self.w_index(oc, ic, ky, kx);
                            let wv = self.weight[wi];
                            let mut acc = 0.0;
                            let gi = grad_in.plane_mut(b, ic);
                            for y in y0..y1 {
                                let sy = (y as isize + dy) as usize;
                                let sx0 = (x0 as isize + dx) as usize;
                                let g = &go[y * w + x0..y * w + x1];
                                let s = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                                let d = &mut gi[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                                for ((gv, sv), dv) in g.iter().zip(s).zip(d.iter_mut()) {
                                    acc += gv * sv;
                                    *dv += wv * gv;
                                }
                            }
                            grad_w[wi] += acc;
                        }
                    }
                }
            }
        }
        Ok((grad_in, grad_w, grad_b))
    }
}

/// Output rows `y` for which `y + d` stays inside `0..len`.
#[inline]
fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d.max(0)).max(0) as usize;
    (lo.min(len), hi.min(len))
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, x) in g.data_mut().iter_mut().zip(input.data()) {
        if *x <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalisation over `(batch, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
        }
    }

    /// In train mode normalises with batch statistics and updates the running
    /// estimates; in eval mode uses the running estimates.
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
        if input.channels() != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm expects {} channels, got {}",
                self.channels,
                input.channels()
            )));
        }
        let [n, c, _, _] = input.shape();
        let count = n * input.plane_len();
        if mode == Mode::Train && count < 2 {
            return Err(Error::InvalidArgument(
                "train-mode batch normalisation needs at least two values per channel".into(),
            ));
        }
        let mut xhat = Tensor::zeros(input.shape());
        let mut out = Tensor::zeros(input.shape());
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0;
                    for b in 0..n {
                        sum += input.plane(b, ch).iter().sum::<f64>();
                    }
                    let mean = sum / count as f64;
                    let mut sq = 0.0;
                    for b in 0..n {
                        sq += input.plane(b, ch).iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
                    }
                    let var = sq / count as f64;
                    let unbiased = sq / (count - 1) as f64;
                    self.running_mean[ch] = (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean;
                    self.running_var[ch] = (1.0 - self.momentum) * self.running_var[ch] + self.momentum * unbiased;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean[ch], self.running_var[ch]),
            };
            let is = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = is;
            let (g, bt) = (self.gamma[ch], self.beta[ch]);
            for b in 0..n {
                let src = input.plane(b, ch);
                let xh = xhat.plane_mut(b, ch);
                for (d, s) in xh.iter_mut().zip(src) {
                    *d = (s - mean) * is;
                }
                let xh = xhat.plane(b, ch).to_vec();
                for (o, x) in out.plane_mut(b, ch).iter_mut().zip(&xh) {
                    *o = g * x + bt;
                }
            }
        }
        Ok((out, BatchNormCache { xhat, inv_std, mode }))
    }

    /// Returns `(grad_input, grad_gamma, grad_beta)`.
    pub fn backward(&self, cache: &BatchNormCache, grad_out: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
        if grad_out.shape() != cache.xhat.shape() {
            return Err(Error::Shape("batchnorm gradient shape mismatch".into()));
        }
        let [n, c, _, _] = grad_out.shape();
        let m = (n * grad_out.plane_len()) as f64;
        let mut grad_in = Tensor::zeros(grad_out.shape());
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for b in 0..n {
                for (dy, xh) in grad_out.plane(b, ch).iter().zip(cache.xhat.plane(b, ch)) {
                    sum_dy += dy;
                    sum_dy_xhat += dy * xh;
                }
            }
            dgamma[ch] = sum_dy_xhat;
            dbeta[ch] = sum_dy;
            let scale = self.gamma[ch] * cache.inv_std[ch];
            for b in 0..n {
                let dy = grad_out.plane(b, ch);
                let xh = cache.xhat.plane(b, ch).to_vec();
                let gi = grad_in.plane_mut(b, ch);
                match cache.mode {
                    Mode::Train => {
                        for ((g, d), x) in gi.iter_mut().zip(dy).zip(&xh) {
                            *g = scale / m * (m * d - sum_dy - x * sum_dy_xhat);
                        }
                    }
                    Mode::Eval => {
                        for (g, d) in gi.iter_mut().zip(dy) {
                            *g = scale * d;
                        }
                    }
                }
            }
        }
        Ok((grad_in, dgamma, dbeta))
    }
}

/// 2×2, stride-2 max pooling. Returns the pooled tensor and, per output
/// value, the flat in-plane index of the selected input. Ties go to the first
/// element in row-major order.
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("max pooling needs even dimensions, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = (2 * y) * w + 2 * x;
                    for idx in [(2 * y) * w + 2 * x + 1, (2 * y + 1) * w + 2 * x, (2 * y + 1) * w + 2 * x + 1] {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    dst[y * ow + x] = src[best];
                    argmax.push(best);
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2x2_backward(input_shape: [usize; 4], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input_shape;
    if grad_out.shape() != [n, c, h / 2, w / 2] || argmax.len() != grad_out.len() {
        return Err(Error::Shape("max pooling gradient shape mismatch".into()));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let per = grad_out.plane_len();
    for b in 0..n {
        for ch in 0..c {
            let k = b * c + ch;
            let go = grad_out.plane(b, ch).to_vec();
            let gi = grad_in.plane_mut(b, ch);
            for (i, g) in go.iter().enumerate() {
                gi[argmax[k * per + i]] += g;
            }
        }
    }
    Ok(grad_in)
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2x(input: &Tensor) -> Tensor {
    let [n, c, h, w] = input.shape();
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch).to_vec();
            let dst = out.plane_mut(b, ch);
            for y in 0..2 * h {
                for x in 0..2 * w {
                    dst[y * 2 * w + x] = src[(y / 2) * w + x / 2];
                }
            }
        }
    }
    out
}

/// Sums each 2×2 block of the incoming gradient.
pub fn upsample2x_backward(grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h2, w2] = grad_out.shape();
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::Shape("upsampling gradient must have even dimensions".into()));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut grad_in = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let go = grad_out.plane(b, ch).to_vec();
            let gi = grad_in.plane_mut(b, ch);
            for y in 0..h2 {
                for x in 0..w2 {
                    gi[(y / 2) * w + x / 2] += go[y * w2 + x];
                }
            }
        }
    }
    Ok(grad_in)
}

/// Channel concatenation in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
    let [n, _, h, w] = first.shape();
    for p in parts {
        if p.batch() != n || p.height() != h || p.width() != w {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} with {:?}",
                first.shape(),
                p.shape()
            )));
        }
    }
    let c: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for p in parts {
            data.extend_from_slice(p.item(b));
        }
    }
    Tensor::from_vec([n, c, h, w], data)
}

/// Splits a gradient back into per-part channel blocks.
pub fn split_channels(grad: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let [n, c, h, w] = grad.shape();
    if channels.iter().sum::<usize>() != c {
        return Err(Error::Shape("channel split does not cover the gradient".into()));
    }
    let plane = h * w;
    let mut out: Vec<Vec<f64>> = channels.iter().map(|k| Vec::with_capacity(n * k * plane)).collect();
    for b in 0..n {
        let item = grad.item(b);
        let mut off = 0;
        for (i, k) in channels.iter().enumerate() {
            out[i].extend_from_slice(&item[off..off + k * plane]);
            off += k * plane;
        }
    }
    out.into_iter()
        .zip(channels)
        .map(|(d, &k)| Tensor::from_vec([n, k, h, w], d))
        .collect()
}
