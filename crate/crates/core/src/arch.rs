//! The three cost-map networks and receptive-field bookkeeping.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, Network, NetworkBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureId {
    StandardFcn,
    PoolingFcn,
    MsFcn,
}

impl ArchitectureId {
    pub const ALL: [ArchitectureId; 3] = [Self::StandardFcn, Self::PoolingFcn, Self::MsFcn];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::StandardFcn => "standard_fcn",
            Self::PoolingFcn => "pooling_fcn",
            Self::MsFcn => "ms_fcn",
        }
    }
}

impl fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchitectureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown architecture '{s}' (expected standard_fcn, pooling_fcn or ms_fcn)"
                ))
            })
    }
}

/// Vehicle footprint the receptive field has to cover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Footprint {
    pub vehicle_diameter_m: f64,
    pub margin_m: f64,
}

impl Default for Footprint {
    fn default() -> Self {
        Self {
            vehicle_diameter_m: 2.0,
            margin_m: 0.5,
        }
    }
}

impl Footprint {
    pub fn required_m(&self) -> f64 {
        self.vehicle_diameter_m + 2.0 * self.margin_m
    }
}

/// Five conv layers, batch norm after every hidden ReLU.
pub fn build_standard_fcn(in_channels: usize) -> Result<Network> {
    let mut b = NetworkBuilder::new(in_channels);
    let x = b.conv_block(b.input(), in_channels, 16, 5)?;
    let x = b.conv_block(x, 16, 16, 5)?;
    let x = b.conv_block(x, 16, 16, 3)?;
    let x = b.conv_block(x, 16, 8, 3)?;
    b.conv(x, 8, 1, 1)?;
    b.build()
}

/// One max-pooling stage in the middle, upsampled back before the output conv.
pub fn build_pooling_fcn(in_channels: usize) -> Result<Network> {
    let mut b = NetworkBuilder::new(in_channels);
    let x = b.conv_block(b.input(), in_channels, 16, 5)?;
    let x = b.max_pool(x);
    let x = b.conv_block(x, 16, 16, 5)?;
    let x = b.conv_block(x, 16, 8, 3)?;
    let x = b.upsample(x);
    b.conv(x, 8, 1, 1)?;
    b.build()
}

/// Full-resolution branch and a pooled branch, concatenated (full first).
pub fn build_ms_fcn(in_channels: usize) -> Result<Network> {
    let mut b = NetworkBuilder::new(in_channels);
    let a = b.conv_block(b.input(), in_channels, 12, 5)?;
    let a = b.conv_block(a, 12, 12, 3)?;
    let p = b.max_pool(b.input());
    let p = b.conv_block(p, in_channels, 12, 5)?;
    let p = b.conv_block(p, 12, 12, 3)?;
    let p = b.upsample(p);
    let x = b.concat(&[a, p]);
    let x = b.conv_block(x, 24, 8, 3)?;
    b.conv(x, 8, 1, 1)?;
    b.build()
}

pub fn build(id: ArchitectureId, in_channels: usize) -> Result<Network> {
    match id {
        ArchitectureId::StandardFcn => build_standard_fcn(in_channels),
        ArchitectureId::PoolingFcn => build_pooling_fcn(in_channels),
        ArchitectureId::MsFcn => build_ms_fcn(in_channels),
    }
}

/// Builds `id` and rejects it if its receptive field does not cover the
/// vehicle footprint at `resolution_m`.
pub fn build_checked(id: ArchitectureId, in_channels: usize, resolution_m: f64, footprint: Footprint) -> Result<Network> {
    let net = build(id, in_channels)?;
    check_receptive_field(&net, resolution_m, footprint)?;
    Ok(net)
}

pub fn check_receptive_field(net: &Network, resolution_m: f64, footprint: Footprint) -> Result<()> {
    let rf = receptive_field(net)?;
    let covered = rf as f64 * resolution_m;
    if covered + 1e-9 < footprint.required_m() {
        return Err(Error::InvalidSpec(format!(
            "receptive field of {rf} cells covers {covered:.2} m, footprint needs {:.2} m",
            footprint.required_m()
        )));
    }
    Ok(())
}

/// Receptive field in input cells: conv adds `(k − 1)·jump`, 2×2 pooling adds
/// `jump` and doubles it, upsampling halves it. Maximum over all paths.
pub fn receptive_field(net: &Network) -> Result<usize> {
    // Each node keeps the (rf, log2 jump) pairs of every path reaching it.
    let nodes = net.nodes();
    let mut states: Vec<Vec<(usize, i32)>> = Vec::with_capacity(nodes.len());
    for node in nodes {
        let inherited: Vec<(usize, i32)> = node.inputs.iter().flat_map(|&j| states[j].clone()).collect();
        let next: Vec<(usize, i32)> = match &node.layer {
            Layer::Input { .. } => vec![(1, 0)],
            Layer::Conv(c) => inherited
                .into_iter()
                .map(|(rf, e)| Ok((rf + (c.kernel - 1) * jump(e)?, e)))
                .collect::<Result<_>>()?,
            Layer::Relu | Layer::BatchNorm(_) | Layer::Concat => inherited,
            Layer::MaxPool2x2 => inherited
                .into_iter()
                .map(|(rf, e)| Ok((rf + jump(e)?, e + 1)))
                .collect::<Result<_>>()?,
            Layer::Upsample2x => inherited.into_iter().map(|(rf, e)| (rf, e - 1)).collect(),
        };
        let mut next = next;
        next.sort_unstable();
        next.dedup();
        states.push(next);
    }
    Ok(states.last().unwrap().iter().map(|s| s.0).max().unwrap_or(1))
}

fn jump(exp: i32) -> Result<usize> {
    if exp < 0 {
        return Err(Error::InvalidSpec("upsampling above input resolution is not supported".into()));
    }
    Ok(1usize << exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mode, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(id: ArchitectureId, seed: u64) -> Network {
        let mut net = build(id, 3).unwrap();
        net.initialize(&mut ChaCha8Rng::seed_from_u64(seed), 1.0, 0.0).unwrap();
        net.set_mode(Mode::Eval);
        net
    }

    fn random_input(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn names_round_trip() {
        for id in ArchitectureId::ALL {
            assert_eq!(id.to_string().parse::<ArchitectureId>().unwrap(), id);
        }
        assert!("resnet".parse::<ArchitectureId>().is_err());
    }

    #[test]
    fn shape_contract() {
        let x = random_input([1, 3, 100, 100], 3);
        for id in ArchitectureId::ALL {
            let y = random_net(id, 1).predict(&x).unwrap();
            assert_eq!(y.shape(), [1, 1, 100, 100], "{id}");
        }
    }

    #[test]
    fn receptive_fields() {
        assert_eq!(receptive_field(&build_standard_fcn(3).unwrap()).unwrap(), 13);
        assert_eq!(receptive_field(&build_pooling_fcn(3).unwrap()).unwrap(), 18);
        assert_eq!(receptive_field(&build_ms_fcn(3).unwrap()).unwrap(), 16);

        let mut b = NetworkBuilder::new(1);
        b.conv(0, 1, 1, 3).unwrap();
        assert_eq!(receptive_field(&b.build().unwrap()).unwrap(), 3);
        let mut b = NetworkBuilder::new(1);
        let c = b.conv(0, 1, 1, 3).unwrap();
        b.conv(c, 1, 1, 3).unwrap();
        assert_eq!(receptive_field(&b.build().unwrap()).unwrap(), 5);
    }

    #[test]
    fn ms_receptive_field_covers_both_branches() {
        // Branch A alone: 5x5 then 3x3 = 7; branch B alone: pool, 5x5, 3x3 = 14.
        let mut a = NetworkBuilder::new(3);
        let x = a.conv_block(0, 3, 12, 5).unwrap();
        let x = a.conv_block(x, 12, 12, 3).unwrap();
        a.conv(x, 12, 1, 1).unwrap();
        let mut bb = NetworkBuilder::new(3);
        let p = bb.max_pool(0);
        let p = bb.conv_block(p, 3, 12, 5).unwrap();
        let p = bb.conv_block(p, 12, 12, 3).unwrap();
        let p = bb.upsample(p);
        bb.conv(p, 12, 1, 1).unwrap();
        let ra = receptive_field(&a.build().unwrap()).unwrap();
        let rb = receptive_field(&bb.build().unwrap()).unwrap();
        assert_eq!((ra, rb), (7, 14));
        let rf = receptive_field(&build_ms_fcn(3).unwrap()).unwrap();
        assert!(rf >= ra && rf >= rb);
    }

    #[test]
    fn standard_parameter_count() {
        let conv = |i: usize, o: usize, k: usize| i * o * k * k + o;
        let expected = conv(3, 16, 5) + conv(16, 16, 5) + conv(16, 16, 3) + conv(16, 8, 3) + conv(8, 1, 1)
            + 2 * (16 + 16 + 16 + 8);
        assert_eq!(expected, 11233);
        assert_eq!(build_standard_fcn(3).unwrap().param_count(), expected);
    }

    #[test]
    fn footprint_constraint() {
        let fp = Footprint::default();
        for id in ArchitectureId::ALL {
            assert!(build_checked(id, 3, 0.25, fp).is_ok());
        }
        assert!(build_checked(ArchitectureId::StandardFcn, 3, 0.2, fp).is_err());
    }

    /// Bounding box of input cells whose gradient w.r.t. one output cell is
    /// non-zero, in rows and columns.
    fn gradient_support(net: &Network, side: usize, at: (usize, usize)) -> (usize, usize) {
        let x = random_input([1, 3, side, side], 9);
        let mut probe = net.clone();
        let cache = probe.forward(&x).unwrap();
        let mut g = Tensor::zeros([1, 1, side, side]);
        g.data_mut()[at.0 * side + at.1] = 1.0;
        let grads = net.backward(&cache, &g).unwrap();
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        for ch in 0..3 {
            for (i, v) in grads.input.plane(0, ch).iter().enumerate() {
                if *v != 0.0 {
                    let (r, c) = (i / side, i % side);
                    r0 = r0.min(r);
                    r1 = r1.max(r);
                    c0 = c0.min(c);
                    c1 = c1.max(c);
                }
            }
        }
        (r1 + 1 - r0, c1 + 1 - c0)
    }

    #[test]
    fn gradient_vanishes_outside_receptive_field() {
        for id in ArchitectureId::ALL {
            let net = random_net(id, 4);
            let rf = receptive_field(&net).unwrap();
            for at in [(15, 15), (16, 17)] {
                let (h, w) = gradient_support(&net, 32, at);
                assert!(h <= rf && w <= rf, "{id}: support {h}x{w} exceeds {rf}");
                if id == ArchitectureId::StandardFcn {
                    assert_eq!((h, w), (rf, rf));
                }
            }
        }
    }

    #[test]
    fn pooling_shift_probe() {
        let net = random_net(ArchitectureId::PoolingFcn, 5);
        let pool = net
            .nodes()
            .iter()
            .position(|n| matches!(n.layer, Layer::MaxPool2x2))
            .unwrap();
        let side = 32;
        let x = random_input([1, 3, side, side + 2], 6);
        let crop = |off: usize| {
            let mut t = Tensor::zeros([1, 3, side, side]);
            for ch in 0..3 {
                let src = x.plane(0, ch).to_vec();
                let dst = t.plane_mut(0, ch);
                for r in 0..side {
                    dst[r * side..(r + 1) * side].copy_from_slice(&src[r * (side + 2) + off..r * (side + 2) + off + side]);
                }
            }
            t
        };
        let pooled = |t: &Tensor| net.clone().forward(t).unwrap().activation(pool).clone();
        let base = pooled(&crop(0));
        let dist = |o: &Tensor| base.data().iter().zip(o.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let d1 = dist(&pooled(&crop(1)));
        let d2 = dist(&pooled(&crop(2)));
        assert!(d1 < d2, "shift 1: {d1}, shift 2: {d2}");
    }

    #[test]
    fn ms_branch_b_zeroed_leaves_branch_a() {
        let mut net = random_net(ArchitectureId::MsFcn, 7);
        let pool = net
            .nodes()
            .iter()
            .position(|n| matches!(n.layer, Layer::MaxPool2x2))
            .unwrap();
        let up = net
            .nodes()
            .iter()
            .position(|n| matches!(n.layer, Layer::Upsample2x))
            .unwrap();
        for node in &mut net.nodes_mut()[pool..=up] {
            match &mut node.layer {
                Layer::Conv(c) => {
                    c.weight.fill(0.0);
                    c.bias.fill(0.0);
                }
                Layer::BatchNorm(b) => {
                    b.gamma.fill(0.0);
                    b.beta.fill(0.0);
                }
                _ => {}
            }
        }
        let x = random_input([1, 3, 16, 16], 1);
        let cache = net.forward(&x).unwrap();
        assert!(cache.activation(up).data().iter().all(|&v| v == 0.0));
        let before = net.predict(&x).unwrap();
        // Weights reading the pooled branch's channels no longer matter.
        let head = up + 2;
        if let Layer::Conv(c) = &mut net.nodes_mut()[head].layer {
            assert_eq!(c.in_channels, 24);
            for oc in 0..c.out_channels {
                for ic in 12..24 {
                    for k in 0..9 {
                        c.weight[(oc * 24 + ic) * 9 + k] += 0.5;
                    }
                }
            }
        } else {
            panic!("expected the head conv after concat");
        }
        assert_eq!(net.predict(&x).unwrap(), before);
    }
}
