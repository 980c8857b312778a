//! Tensors, a reverse-mode autodiff tape and SGD.

pub mod graph;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use graph::{BatchStats, Gradients, Graph, Mode, NodeId, BATCHNORM_EPS};
pub use layers::{conv2d_forward, layer_forward, softmax_cross_entropy, LayerKind};
pub use optim::{sgd_step, Sgd, SgdConfig};
pub use tensor::Tensor;
