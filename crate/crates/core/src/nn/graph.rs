//! Layer DAG with forward evaluation and reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, BatchNorm, BatchNormCache, Conv2d, Mode};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Parameter-free description of one node, as stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerSpec {
    Input { channels: usize },
    Conv { in_channels: usize, out_channels: usize, kernel: usize },
    Relu,
    BatchNorm { channels: usize },
    MaxPool2x2,
    Upsample2x,
    Concat,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Input { channels: usize },
    Conv(Conv2d),
    Relu,
    BatchNorm(BatchNorm),
    MaxPool2x2,
    Upsample2x,
    Concat,
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Input { channels } => LayerSpec::Input { channels: *channels },
            Layer::Conv(c) => LayerSpec::Conv {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::BatchNorm(b) => LayerSpec::BatchNorm { channels: b.channels },
            Layer::MaxPool2x2 => LayerSpec::MaxPool2x2,
            Layer::Upsample2x => LayerSpec::Upsample2x,
            Layer::Concat => LayerSpec::Concat,
        }
    }

    /// Layer with zeroed (conv) or identity (batch norm) parameters.
    pub fn from_spec(spec: LayerSpec) -> Result<Self> {
        Ok(match spec {
            LayerSpec::Input { channels } => Layer::Input { channels },
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => Layer::Conv(Conv2d::zeros(in_channels, out_channels, kernel)?),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm::new(channels)),
            LayerSpec::MaxPool2x2 => Layer::MaxPool2x2,
            LayerSpec::Upsample2x => Layer::Upsample2x,
            LayerSpec::Concat => Layer::Concat,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub layer: Layer,
    pub inputs: Vec<usize>,
}

/// What a trainable parameter tensor is; used to decide regularisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
}

/// A network is a list of nodes in topological order. Node 0 is the input,
/// the last node is the output and must produce one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<Node>,
    mode: Mode,
}

enum NodeCache {
    None,
    Bn(BatchNormCache),
    Pool(Vec<usize>),
}

/// Activations kept from a forward pass for use by [`Network::backward`].
pub struct ForwardCache {
    activations: Vec<Tensor>,
    extra: Vec<NodeCache>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("network has nodes")
    }

    pub fn activation(&self, node: usize) -> &Tensor {
        &self.activations[node]
    }
}

pub struct Gradients {
    /// One vector per parameter tensor, in [`Network::params`] order.
    pub params: Vec<Vec<f64>>,
    pub input: Tensor,
}

impl Network {
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        let net = Self {
            nodes,
            mode: Mode::Train,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn from_specs(specs: &[(LayerSpec, Vec<usize>)]) -> Result<Self> {
        let nodes = specs
            .iter()
            .map(|(s, inputs)| {
                Ok(Node {
                    layer: Layer::from_spec(*s)?,
                    inputs: inputs.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_nodes(nodes)
    }

    pub fn specs(&self) -> Vec<(LayerSpec, Vec<usize>)> {
        self.nodes.iter().map(|n| (n.layer.spec(), n.inputs.clone())).collect()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [Node] {
        &mut self.nodes
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn in_channels(&self) -> usize {
        match self.nodes[0].layer {
            Layer::Input { channels } => channels,
            _ => unreachable!("validated"),
        }
    }

    /// Checks topology and channel bookkeeping. Returns per-node channel
    /// counts and spatial scale exponents.
    fn validate(&self) -> Result<Vec<(usize, i32)>> {
        let bad = |i: usize, msg: String| Error::InvalidSpec(format!("node {i}: {msg}"));
        if self.nodes.is_empty() {
            return Err(Error::InvalidSpec("network has no nodes".into()));
        }
        let mut info: Vec<(usize, i32)> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            if node.inputs.iter().any(|&j| j >= i) {
                return Err(bad(i, "inputs must refer to earlier nodes".into()));
            }
            let arity = match node.layer {
                Layer::Input { .. } => 0,
                Layer::Concat => node.inputs.len().max(1),
                _ => 1,
            };
            if node.inputs.len() != arity {
                return Err(bad(i, format!("expected {arity} inputs, got {}", node.inputs.len())));
            }
            if i == 0 && !matches!(node.layer, Layer::Input { .. }) {
                return Err(bad(i, "first node must be the input".into()));
            }
            if i > 0 && matches!(node.layer, Layer::Input { .. }) {
                return Err(bad(i, "only the first node may be an input".into()));
            }
            let src = node.inputs.first().map(|&j| info[j]);
            let out = match &node.layer {
                Layer::Input { channels } => (*channels, 0),
                Layer::Conv(c) => {
                    let (ch, sc) = src.unwrap();
                    if ch != c.in_channels {
                        return Err(bad(i, format!("conv expects {} channels, gets {ch}", c.in_channels)));
                    }
                    (c.out_channels, sc)
                }
                Layer::BatchNorm(b) => {
                    let (ch, sc) = src.unwrap();
                    if ch != b.channels {
                        return Err(bad(i, format!("batch norm expects {} channels, gets {ch}", b.channels)));
                    }
                    (ch, sc)
                }
                Layer::Relu => src.unwrap(),
                Layer::MaxPool2x2 => {
                    let (ch, sc) = src.unwrap();
                    (ch, sc + 1)
                }
                Layer::Upsample2x => {
                    let (ch, sc) = src.unwrap();
                    (ch, sc - 1)
                }
                Layer::Concat => {
                    let sc = src.unwrap().1;
                    if node.inputs.iter().any(|&j| info[j].1 != sc) {
                        return Err(bad(i, "concatenated inputs have different resolutions".into()));
                    }
                    (node.inputs.iter().map(|&j| info[j].0).sum(), sc)
                }
            };
            info.push(out);
        }
        let last = *info.last().unwrap();
        if last != (1, 0) {
            return Err(Error::InvalidSpec(format!(
                "output must be one channel at input resolution, got {} channels at scale 2^{}",
                last.0, last.1
            )));
        }
        Ok(info)
    }

    /// Largest pooling depth; input sides must be divisible by `2^depth`.
    pub fn pooling_depth(&self) -> u32 {
        self.validate()
            .map(|info| info.iter().map(|&(_, s)| s.max(0) as u32).max().unwrap_or(0))
            .unwrap_or(0)
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.layer {
                Layer::Conv(c) => {
                    out.push(c.weight.as_slice());
                    out.push(c.bias.as_slice());
                }
                Layer::BatchNorm(b) => {
                    out.push(b.gamma.as_slice());
                    out.push(b.beta.as_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            match &mut node.layer {
                Layer::Conv(c) => {
                    out.push(c.weight.as_mut_slice());
                    out.push(c.bias.as_mut_slice());
                }
                Layer::BatchNorm(b) => {
                    out.push(b.gamma.as_mut_slice());
                    out.push(b.beta.as_mut_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.layer {
                Layer::Conv(_) => out.extend([ParamKind::ConvWeight, ParamKind::ConvBias]),
                Layer::BatchNorm(_) => out.extend([ParamKind::BnGamma, ParamKind::BnBeta]),
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Batch-norm running statistics, `(mean, var)` per batch-norm node.
    pub fn buffers(&self) -> Vec<(&[f64], &[f64])> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.layer {
                Layer::BatchNorm(b) => Some((b.running_mean.as_slice(), b.running_var.as_slice())),
                _ => None,
            })
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(&mut [f64], &mut [f64])> {
        self.nodes
            .iter_mut()
            .filter_map(|n| match &mut n.layer {
                Layer::BatchNorm(b) => Some((b.running_mean.as_mut_slice(), b.running_var.as_mut_slice())),
                _ => None,
            })
            .collect()
    }

    /// Kaiming fan-in initialisation of every conv; the last conv's weights
    /// are scaled by `output_gain` and its bias set to `output_bias`.
    pub fn initialize<R: Rng + ?Sized>(&mut self, rng: &mut R, output_gain: f64, output_bias: f64) -> Result<()> {
        let last_conv = self
            .nodes
            .iter()
            .rposition(|n| matches!(n.layer, Layer::Conv(_)));
        for (i, node) in self.nodes.iter_mut().enumerate() {
            match &mut node.layer {
                Layer::Conv(c) => {
                    let last = Some(i) == last_conv;
                    let gain = if last { output_gain } else { 1.0 };
                    let mut fresh = Conv2d::kaiming(c.in_channels, c.out_channels, c.kernel, gain, rng)?;
                    if last {
                        fresh.bias.fill(output_bias);
                    }
                    *c = fresh;
                }
                Layer::BatchNorm(b) => *b = BatchNorm::new(b.channels),
                _ => {}
            }
        }
        Ok(())
    }

    /// Runs the network. In train mode batch-norm running statistics are
    /// updated, which is why this takes `&mut self`.
    pub fn forward(&mut self, input: &Tensor) -> Result<ForwardCache> {
        if input.channels() != self.in_channels() {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {}",
                self.in_channels(),
                input.channels()
            )));
        }
        let depth = self.pooling_depth();
        let m = 1usize << depth;
        if input.height() % m != 0 || input.width() % m != 0 {
            return Err(Error::Shape(format!(
                "input {}x{} is not divisible by {m} as pooling requires",
                input.height(),
                input.width()
            )));
        }
        let mode = self.mode;
        let mut activations: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut extra = Vec::with_capacity(self.nodes.len());
        for node in self.nodes.iter_mut() {
            let x = node.inputs.first().map(|&j| &activations[j]);
            let (y, cache) = match &mut node.layer {
                Layer::Input { .. } => (input.clone(), NodeCache::None),
                Layer::Conv(c) => (c.forward(x.unwrap())?, NodeCache::None),
                Layer::Relu => (layers::relu(x.unwrap()), NodeCache::None),
                Layer::BatchNorm(b) => {
                    let (y, c) = b.forward(x.unwrap(), mode)?;
                    (y, NodeCache::Bn(c))
                }
                Layer::MaxPool2x2 => {
                    let (y, arg) = layers::maxpool2x2(x.unwrap())?;
                    (y, NodeCache::Pool(arg))
                }
                Layer::Upsample2x => (layers::upsample2x(x.unwrap()), NodeCache::None),
                Layer::Concat => {
                    let parts: Vec<&Tensor> = node.inputs.iter().map(|&j| &activations[j]).collect();
                    (layers::concat_channels(&parts)?, NodeCache::None)
                }
            };
            if !y.all_finite() {
                return Err(Error::Numerical("non-finite activation in forward pass".into()));
            }
            activations.push(y);
            extra.push(cache);
        }
        Ok(ForwardCache { activations, extra })
    }

    /// Convenience forward that returns only the output.
    pub fn predict(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut cache = self.forward(input)?;
        Ok(cache.activations.pop().unwrap())
    }

    /// Back-propagates `grad_output` (shaped like the output) through the
    /// cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Tensor) -> Result<Gradients> {
        if grad_output.shape() != cache.output().shape() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_output.shape(),
                cache.output().shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[n - 1] = Some(grad_output.clone());
        let mut param_grads: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let x = node.inputs.first().map(|&j| &cache.activations[j]);
            let push = |grads: &mut Vec<Option<Tensor>>, j: usize, t: Tensor| match &mut grads[j] {
                Some(acc) => acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(t),
            };
            match (&node.layer, &cache.extra[i]) {
                (Layer::Input { .. }, _) => {
                    grads[0] = Some(g);
                }
                (Layer::Conv(c), _) => {
                    let (gi, gw, gb) = c.backward(x.unwrap(), &g)?;
                    param_grads[i] = vec![gw, gb];
                    push(&mut grads, node.inputs[0], gi);
                }
                (Layer::Relu, _) => push(&mut grads, node.inputs[0], layers::relu_backward(x.unwrap(), &g)),
                (Layer::BatchNorm(b), NodeCache::Bn(bc)) => {
                    let (gi, gg, gbeta) = b.backward(bc, &g)?;
                    param_grads[i] = vec![gg, gbeta];
                    push(&mut grads, node.inputs[0], gi);
                }
                (Layer::MaxPool2x2, NodeCache::Pool(arg)) => {
                    let gi = layers::maxpool2x2_backward(x.unwrap().shape(), arg, &g)?;
                    push(&mut grads, node.inputs[0], gi);
                }
                (Layer::Upsample2x, _) => push(&mut grads, node.inputs[0], layers::upsample2x_backward(&g)?),
                (Layer::Concat, _) => {
                    let chans: Vec<usize> = node.inputs.iter().map(|&j| cache.activations[j].channels()).collect();
                    for (&j, part) in node.inputs.iter().zip(layers::split_channels(&g, &chans)?) {
                        push(&mut grads, j, part);
                    }
                }
                _ => return Err(Error::InvalidArgument("forward cache does not match network".into())),
            }
        }

        let mut params = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.layer {
                Layer::Conv(c) => {
                    if param_grads[i].is_empty() {
                        params.push(vec![0.0; c.weight.len()]);
                        params.push(vec![0.0; c.bias.len()]);
                    } else {
                        params.append(&mut param_grads[i]);
                    }
                }
                Layer::BatchNorm(b) => {
                    if param_grads[i].is_empty() {
                        params.push(vec![0.0; b.channels]);
                        params.push(vec![0.0; b.channels]);
                    } else {
                        params.append(&mut param_grads[i]);
                    }
                }
                _ => {}
            }
        }
        let input = grads[0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(cache.activations[0].shape()));
        Ok(Gradients { params, input })
    }
}

/// Incremental construction of a [`Network`].
#[derive(Debug, Default)]
pub struct NetworkBuilder {
    nodes: Vec<Node>,
}

impl NetworkBuilder {
    /// Starts a network whose input node (id 0) has `channels` channels.
    pub fn new(channels: usize) -> Self {
        Self {
            nodes: vec![Node {
                layer: Layer::Input { channels },
                inputs: vec![],
            }],
        }
    }

    pub fn input(&self) -> usize {
        0
    }

    fn push(&mut self, layer: Layer, inputs: Vec<usize>) -> usize {
        self.nodes.push(Node { layer, inputs });
        self.nodes.len() - 1
    }

    pub fn conv(&mut self, from: usize, in_channels: usize, out_channels: usize, kernel: usize) -> Result<usize> {
        let c = Conv2d::zeros(in_channels, out_channels, kernel)?;
        Ok(self.push(Layer::Conv(c), vec![from]))
    }

    pub fn relu(&mut self, from: usize) -> usize {
        self.push(Layer::Relu, vec![from])
    }

    pub fn batch_norm(&mut self, from: usize, channels: usize) -> usize {
        self.push(Layer::BatchNorm(BatchNorm::new(channels)), vec![from])
    }

    /// conv, ReLU, then batch norm.
    pub fn conv_block(&mut self, from: usize, in_channels: usize, out_channels: usize, kernel: usize) -> Result<usize> {
        let c = self.conv(from, in_channels, out_channels, kernel)?;
        let r = self.relu(c);
        Ok(self.batch_norm(r, out_channels))
    }

    pub fn max_pool(&mut self, from: usize) -> usize {
        self.push(Layer::MaxPool2x2, vec![from])
    }

    pub fn upsample(&mut self, from: usize) -> usize {
        self.push(Layer::Upsample2x, vec![from])
    }

    pub fn concat(&mut self, parts: &[usize]) -> usize {
        self.push(Layer::Concat, parts.to_vec())
    }

    pub fn build(self) -> Result<Network> {
        Network::from_nodes(self.nodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_network_passes_first_channel() {
        let mut b = NetworkBuilder::new(3);
        b.conv(0, 3, 1, 1).unwrap();
        let mut net = b.build().unwrap();
        if let Layer::Conv(c) = &mut net.nodes_mut()[1].layer {
            c.weight[0] = 1.0;
        }
        let x = Tensor::from_vec([1, 3, 2, 2], (0..12).map(f64::from).collect()).unwrap();
        let y = net.predict(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_param_gradients() {
        let mut b = NetworkBuilder::new(3);
        let h = b.conv_block(0, 3, 4, 3).unwrap();
        b.conv(h, 4, 1, 1).unwrap();
        let mut net = b.build().unwrap();
        net.initialize(&mut ChaCha8Rng::seed_from_u64(1), 1.0, 0.0).unwrap();
        let x = Tensor::from_vec([2, 3, 4, 4], (0..96).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let cache = net.forward(&x).unwrap();
        let g = net.backward(&cache, &Tensor::zeros([2, 1, 4, 4])).unwrap();
        assert!(g.params.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(g.params.len(), net.params().len());
    }

    #[test]
    fn validation_rejects_bad_graphs() {
        let mut b = NetworkBuilder::new(3);
        b.conv(0, 3, 2, 1).unwrap();
        assert!(b.build().is_err(), "two output channels");

        let mut b = NetworkBuilder::new(3);
        b.conv(0, 4, 1, 1).unwrap();
        assert!(b.build().is_err(), "channel mismatch");

        let mut b = NetworkBuilder::new(3);
        let p = b.max_pool(0);
        b.conv(p, 3, 1, 1).unwrap();
        assert!(b.build().is_err(), "output at half resolution");
    }

    #[test]
    fn specs_round_trip() {
        let mut b = NetworkBuilder::new(3);
        let a = b.conv_block(0, 3, 4, 3).unwrap();
        let p = b.max_pool(0);
        let u = b.upsample(p);
        let c = b.concat(&[a, u]);
        b.conv(c, 7, 1, 1).unwrap();
        let net = b.build().unwrap();
        let again = Network::from_specs(&net.specs()).unwrap();
        assert_eq!(again.specs(), net.specs());
        assert_eq!(again.pooling_depth(), 1);
    }
}
