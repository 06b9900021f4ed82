//! Small dense-tensor network engine: layers, graph, optimizers and
//! finite-difference gradient checks. All arithmetic is 64-bit.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use graph::{ForwardCache, Gradients, Layer, LayerSpec, Network, NetworkBuilder, Node, ParamKind};
pub use layers::{BatchNorm, Conv2d, Mode};
pub use optim::{elastic_net_grad, elastic_net_penalty, Optimizer, OptimizerKind};
pub use tensor::Tensor;
