//! Central finite-difference checks of the analytic gradients.
//!
//! Each check contracts the layer output with a fixed random tensor to get a
//! scalar loss and compares `∂loss/∂x` against `(f(x + h) − f(x − h)) / 2h`.
//! Relative error is `|a − n| / max(|a|, |n|, REL_FLOOR)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Network, ParamKind};
use super::layers::{self, BatchNorm, Conv2d, Mode};
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor for the relative error, so that entries whose true
/// derivative is zero are judged by absolute error.
pub const REL_FLOOR: f64 = 1e-3;
pub const LAYER_TOL: f64 = 1e-5;
pub const UPSAMPLE_TOL: f64 = 1e-6;
pub const NETWORK_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Deliberate faults used to confirm the checks can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultInjection {
    /// Scale conv weight gradients by 1.01 before comparison.
    pub corrupt_conv_backward: bool,
}

impl FaultInjection {
    fn conv_weight(&self, g: &mut [f64]) {
        if self.corrupt_conv_backward {
            g.iter_mut().for_each(|v| *v *= 1.01);
        }
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences of `f` at `x` for the listed coordinates.
pub fn numeric_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], indices: &[usize], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    indices
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn max_error(analytic: &[f64], numeric: &[f64], indices: &[usize]) -> f64 {
    indices
        .iter()
        .zip(numeric)
        .map(|(&i, &n)| rel_error(analytic[i], n))
        .fold(0.0, f64::max)
}

fn uniform(shape: [usize; 4], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn result(name: impl Into<String>, errors: &[(f64, usize)], tolerance: f64) -> CheckResult {
    CheckResult {
        name: name.into(),
        max_rel_error: errors.iter().map(|e| e.0).fold(0.0, f64::max),
        tolerance,
        checked: errors.iter().map(|e| e.1).sum(),
    }
}

pub fn check_conv(seed: u64, faults: FaultInjection) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform([2, 3, 5, 5], -1.0, 1.0, &mut rng);
    let mut conv = Conv2d::kaiming(3, 2, 3, 1.0, &mut rng)?;
    conv.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    let r = uniform([2, 2, 5, 5], -1.0, 1.0, &mut rng);
    let h = 1e-4;
    let (gi, mut gw, gb) = conv.backward(&x, &r)?;
    faults.conv_weight(&mut gw);

    let mut errs = Vec::new();
    let idx = all(x.len());
    let num = numeric_grad(
        &mut |v| dot(&conv.forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()).unwrap(), &r),
        x.data(),
        &idx,
        h,
    );
    errs.push((max_error(gi.data(), &num, &idx), idx.len()));

    let idx = all(conv.weight.len());
    let num = numeric_grad(
        &mut |v| {
            let mut c = conv.clone();
            c.weight.copy_from_slice(v);
            dot(&c.forward(&x).unwrap(), &r)
        },
        &conv.weight,
        &idx,
        h,
    );
    errs.push((max_error(&gw, &num, &idx), idx.len()));

    let idx = all(conv.bias.len());
    let num = numeric_grad(
        &mut |v| {
            let mut c = conv.clone();
            c.bias.copy_from_slice(v);
            dot(&c.forward(&x).unwrap(), &r)
        },
        &conv.bias,
        &idx,
        h,
    );
    errs.push((max_error(&gb, &num, &idx), idx.len()));
    Ok(result("conv2d", &errs, LAYER_TOL))
}

pub fn check_batch_norm(seed: u64, mode: Mode) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform([4, 2, 3, 3], -2.0, 2.0, &mut rng);
    let mut bn = BatchNorm::new(2);
    for c in 0..2 {
        bn.gamma[c] = rng.random_range(0.5..1.5);
        bn.beta[c] = rng.random_range(-0.5..0.5);
        bn.running_mean[c] = rng.random_range(-0.5..0.5);
        bn.running_var[c] = rng.random_range(0.5..2.0);
    }
    let r = uniform(x.shape(), -1.0, 1.0, &mut rng);
    let h = 1e-4;
    let eval = |bn: &BatchNorm, x: &Tensor| dot(&bn.clone().forward(x, mode).unwrap().0, &r);
    let (_, cache) = bn.clone().forward(&x, mode)?;
    let (gi, gg, gb) = bn.backward(&cache, &r)?;

    let mut errs = Vec::new();
    let idx = all(x.len());
    let num = numeric_grad(
        &mut |v| eval(&bn, &Tensor::from_vec(x.shape(), v.to_vec()).unwrap()),
        x.data(),
        &idx,
        h,
    );
    errs.push((max_error(gi.data(), &num, &idx), idx.len()));
    let idx = all(2);
    let num = numeric_grad(
        &mut |v| {
            let mut b = bn.clone();
            b.gamma.copy_from_slice(v);
            eval(&b, &x)
        },
        &bn.gamma,
        &idx,
        h,
    );
    errs.push((max_error(&gg, &num, &idx), 2));
    let num = numeric_grad(
        &mut |v| {
            let mut b = bn.clone();
            b.beta.copy_from_slice(v);
            eval(&b, &x)
        },
        &bn.beta,
        &idx,
        h,
    );
    errs.push((max_error(&gb, &num, &idx), 2));
    let name = match mode {
        Mode::Train => "batchnorm (train)",
        Mode::Eval => "batchnorm (eval)",
    };
    Ok(result(name, &errs, LAYER_TOL))
}

pub fn check_relu(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Keep inputs away from the kink so the difference quotient is exact.
    let mut x = uniform([2, 2, 4, 4], 0.1, 1.0, &mut rng);
    for v in x.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    let r = uniform(x.shape(), -1.0, 1.0, &mut rng);
    let g = layers::relu_backward(&x, &r);
    let idx = all(x.len());
    let num = numeric_grad(
        &mut |v| dot(&layers::relu(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()), &r),
        x.data(),
        &idx,
        1e-4,
    );
    Ok(result("relu", &[(max_error(g.data(), &num, &idx), idx.len())], LAYER_TOL))
}

pub fn check_maxpool(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // A shuffled ramp spaced far wider than the step keeps every window tie-free.
    let shape = [2, 2, 4, 6];
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let x = Tensor::from_vec(shape, vals)?;
    let r = uniform([2, 2, 2, 3], -1.0, 1.0, &mut rng);
    let (_, arg) = layers::maxpool2x2(&x)?;
    let g = layers::maxpool2x2_backward(shape, &arg, &r)?;
    let idx = all(n);
    let num = numeric_grad(
        &mut |v| dot(&layers::maxpool2x2(&Tensor::from_vec(shape, v.to_vec()).unwrap()).unwrap().0, &r),
        x.data(),
        &idx,
        1e-4,
    );
    Ok(result("maxpool2x2", &[(max_error(g.data(), &num, &idx), n)], LAYER_TOL))
}

pub fn check_upsample(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform([2, 2, 3, 3], -1.0, 1.0, &mut rng);
    let r = uniform([2, 2, 6, 6], -1.0, 1.0, &mut rng);
    let g = layers::upsample2x_backward(&r)?;
    let idx = all(x.len());
    let num = numeric_grad(
        &mut |v| dot(&layers::upsample2x(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()), &r),
        x.data(),
        &idx,
        1e-4,
    );
    Ok(result("upsample2x", &[(max_error(g.data(), &num, &idx), idx.len())], UPSAMPLE_TOL))
}

pub fn check_concat(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform([2, 2, 3, 3], -1.0, 1.0, &mut rng);
    let b = uniform([2, 3, 3, 3], -1.0, 1.0, &mut rng);
    let r = uniform([2, 5, 3, 3], -1.0, 1.0, &mut rng);
    let parts = layers::split_channels(&r, &[2, 3])?;
    let mut errs = Vec::new();
    let idx = all(a.len());
    let num = numeric_grad(
        &mut |v| {
            let t = Tensor::from_vec(a.shape(), v.to_vec()).unwrap();
            dot(&layers::concat_channels(&[&t, &b]).unwrap(), &r)
        },
        a.data(),
        &idx,
        1e-4,
    );
    errs.push((max_error(parts[0].data(), &num, &idx), idx.len()));
    let idx = all(b.len());
    let num = numeric_grad(
        &mut |v| {
            let t = Tensor::from_vec(b.shape(), v.to_vec()).unwrap();
            dot(&layers::concat_channels(&[&a, &t]).unwrap(), &r)
        },
        b.data(),
        &idx,
        1e-4,
    );
    errs.push((max_error(parts[1].data(), &num, &idx), idx.len()));
    Ok(result("concat", &errs, LAYER_TOL))
}

/// Every layer-level suite.
pub fn layer_suites(seed: u64, faults: FaultInjection) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_conv(seed, faults)?,
        check_batch_norm(seed + 1, Mode::Train)?,
        check_batch_norm(seed + 2, Mode::Eval)?,
        check_relu(seed + 3)?,
        check_maxpool(seed + 4)?,
        check_upsample(seed + 5)?,
        check_concat(seed + 6)?,
    ])
}

/// Whole-network check on a random `batch × C × side × side` input. Batch
/// norm running statistics and affine parameters are randomised so that eval
/// mode is not an identity. At most `per_tensor` coordinates of each
/// parameter tensor are probed, plus a sample of input coordinates.
pub fn check_network(
    name: &str,
    net: &Network,
    mode: Mode,
    batch: usize,
    side: usize,
    per_tensor: usize,
    seed: u64,
    faults: FaultInjection,
) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = net.clone();
    net.set_mode(mode);
    for (mean, var) in net.buffers_mut() {
        mean.iter_mut().for_each(|m| *m = rng.random_range(-0.3..0.3));
        var.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
    }
    let kinds = net.param_kinds();
    for (p, k) in net.params_mut().into_iter().zip(&kinds) {
        match k {
            ParamKind::BnGamma => p.iter_mut().for_each(|g| *g = rng.random_range(0.7..1.3)),
            ParamKind::BnBeta | ParamKind::ConvBias => p.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2)),
            ParamKind::ConvWeight => {}
        }
    }
    let x = uniform([batch, net.in_channels(), side, side], -1.0, 1.0, &mut rng);
    let r = uniform([batch, 1, side, side], -1.0, 1.0, &mut rng);
    let h = 1e-5;

    let cache = net.clone().forward(&x)?;
    let mut grads = net.backward(&cache, &r)?;
    for (g, k) in grads.params.iter_mut().zip(&kinds) {
        if *k == ParamKind::ConvWeight {
            faults.conv_weight(g);
        }
    }

    let mut errs = Vec::new();
    let n_params = grads.params.len();
    for t in 0..n_params {
        let len = grads.params[t].len();
        let idx: Vec<usize> = if len <= per_tensor {
            all(len)
        } else {
            rand::seq::index::sample(&mut rng, len, per_tensor).into_vec()
        };
        let base = net.params()[t].to_vec();
        let num = numeric_grad(
            &mut |v| {
                let mut probe = net.clone();
                probe.params_mut()[t].copy_from_slice(v);
                dot(&probe.predict(&x).unwrap(), &r)
            },
            &base,
            &idx,
            h,
        );
        errs.push((max_error(&grads.params[t], &num, &idx), idx.len()));
    }
    let idx = rand::seq::index::sample(&mut rng, x.len(), per_tensor.min(x.len())).into_vec();
    let num = numeric_grad(
        &mut |v| dot(&net.clone().predict(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()).unwrap(), &r),
        x.data(),
        &idx,
        h,
    );
    errs.push((max_error(grads.input.data(), &num, &idx), idx.len()));
    Ok(result(name, &errs, NETWORK_TOL))
}
