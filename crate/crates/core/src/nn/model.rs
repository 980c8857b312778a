use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{BatchStats, Graph, Mode, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::nn::preset::{
    BackbonePreset, Family, PROJECTION_DIM, RES_BASE_WIDTH, VGG_BASE_CONVS_PER_STAGE, VGG_BASE_WIDTHS,
};
use crate::rng_stream;
use crate::scalar::Scalar;

pub const NUM_CLASSES: usize = 2;
const RUNNING_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    Conv {
        weight: usize,
        bias: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        gamma: usize,
        beta: usize,
        slot: usize,
    },
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Flatten,
    Dense {
        weight: usize,
        bias: usize,
    },
    /// `x + body(x)`.
    Residual(Vec<Layer>),
}

/// Training bookkeeping persisted with checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub losses: Vec<f64>,
}

/// Backbone, two-way classifier and optional contrastive projection head.
#[derive(Debug, Clone)]
pub struct Model<T> {
    preset: BackbonePreset,
    seed: u64,
    params: Vec<Tensor<T>>,
    names: Vec<String>,
    backbone: Vec<Layer>,
    classifier: Layer,
    projection: Option<[Layer; 3]>,
    /// Running (mean, var) per batchnorm slot.
    running: Vec<(Vec<T>, Vec<T>)>,
    pub meta: TrainingMeta,
}

struct Builder<'r, T> {
    rng: &'r mut crate::rng::Rng,
    params: Vec<Tensor<T>>,
    names: Vec<String>,
    running: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Builder<'_, T> {
    fn push(&mut self, name: String, t: Tensor<T>) -> usize {
        self.params.push(t.with_requires_grad(true));
        self.names.push(name);
        self.params.len() - 1
    }

    fn kaiming(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(self.rng.random_range(-bound..bound)))
            .collect();
        let t = Tensor::new(shape, data).expect("shape matches data");
        self.push(name, t)
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Layer {
        let weight = self.kaiming(format!("{name}.weight"), vec![cout, cin, k, k], cin * k * k);
        let bias = self.push(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        Layer::Conv {
            weight,
            bias,
            stride,
            pad: k / 2,
        }
    }

    fn dense(&mut self, name: &str, din: usize, dout: usize) -> Layer {
        let weight = self.kaiming(format!("{name}.weight"), vec![dout, din], din);
        let bias = self.push(format!("{name}.bias"), Tensor::zeros(vec![dout]));
        Layer::Dense { weight, bias }
    }

    fn batchnorm(&mut self, name: &str, c: usize) -> Layer {
        let gamma = self.push(format!("{name}.gamma"), Tensor::full(vec![c], T::one()));
        let beta = self.push(format!("{name}.beta"), Tensor::zeros(vec![c]));
        self.running.push((vec![T::zero(); c], vec![T::one(); c]));
        Layer::BatchNorm {
            gamma,
            beta,
            slot: self.running.len() - 1,
        }
    }
}

fn residual_backbone<T: Scalar>(b: &mut Builder<'_, T>, p: &BackbonePreset) -> Vec<Layer> {
    let (_, _, cin) = p.input_size;
    let width = p.scaled_width(RES_BASE_WIDTH);
    let mut layers = vec![
        b.conv("stem.conv", cin, width, 5, 2),
        b.batchnorm("stem.bn", width),
        Layer::Relu,
        Layer::MaxPool2,
    ];
    // Pre-activation blocks: the shortcut is a pure identity and nothing
    // follows the addition, so zeroed convolutions reproduce the input.
    for i in 0..p.residual_blocks() {
        let body = vec![
            b.batchnorm(&format!("block{i}.bn1"), width),
            Layer::Relu,
            b.conv(&format!("block{i}.conv1"), width, width, 3, 1),
            b.batchnorm(&format!("block{i}.bn2"), width),
            Layer::Relu,
            b.conv(&format!("block{i}.conv2"), width, width, 3, 1),
        ];
        layers.push(Layer::Residual(body));
    }
    layers.extend([
        b.batchnorm("head.bn", width),
        Layer::Relu,
        Layer::GlobalAvgPool,
        b.dense("embed", width, p.embedding_dim),
        Layer::Relu,
    ]);
    layers
}

fn vgg_backbone<T: Scalar>(b: &mut Builder<'_, T>, p: &BackbonePreset) -> Vec<Layer> {
    let (mut h, mut w, mut c) = p.input_size;
    let convs = p.scaled_depth(VGG_BASE_CONVS_PER_STAGE);
    let mut layers = Vec::new();
    for (s, &base) in VGG_BASE_WIDTHS.iter().enumerate() {
        let width = p.scaled_width(base);
        for j in 0..convs {
            layers.push(b.conv(&format!("stage{s}.conv{j}"), c, width, 3, 1));
            layers.push(Layer::Relu);
            c = width;
        }
        layers.push(Layer::MaxPool2);
        h /= 2;
        w /= 2;
    }
    layers.push(Layer::Flatten);
    layers.push(b.dense("embed", c * h * w, p.embedding_dim));
    layers.push(Layer::Relu);
    layers
}

/// Builds a freshly initialised model; deterministic in `(preset, seed)`.
pub fn build_backbone<T: Scalar>(preset: &BackbonePreset, seed: u64) -> Result<Model<T>> {
    preset.validate()?;
    let mut rng = rng_stream!(seed, "init", preset.family.name());
    let mut b = Builder {
        rng: &mut rng,
        params: Vec::new(),
        names: Vec::new(),
        running: Vec::new(),
    };
    let backbone = match preset.family {
        Family::MiniRes | Family::MiniEff => residual_backbone(&mut b, preset),
        Family::MiniVgg => vgg_backbone(&mut b, preset),
    };
    let emb = preset.embedding_dim;
    let classifier = b.dense("classifier", emb, NUM_CLASSES);
    let projection = [
        b.dense("projection.0", emb, emb),
        Layer::Relu,
        b.dense("projection.1", emb, PROJECTION_DIM),
    ];
    Ok(Model {
        preset: *preset,
        seed,
        params: b.params,
        names: b.names,
        backbone,
        classifier,
        projection: Some(projection),
        running: b.running,
        meta: TrainingMeta::default(),
    })
}

impl<T: Scalar> Model<T> {
    pub fn preset(&self) -> &BackbonePreset {
        &self.preset
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn has_projection_head(&self) -> bool {
        self.projection.is_some()
    }

    /// Removes the projection head and its parameters.
    pub fn drop_projection_head(&mut self) {
        let Some(head) = self.projection.take() else {
            return;
        };
        let mut drop = Vec::new();
        for layer in &head {
            if let Layer::Dense { weight, bias } = layer {
                drop.extend([*weight, *bias]);
            }
        }
        // Projection parameters are allocated last, so truncation is enough.
        let first = *drop.iter().min().expect("head has parameters");
        debug_assert_eq!(first + drop.len(), self.params.len());
        self.params.truncate(first);
        self.names.truncate(first);
    }

    pub(crate) fn running_stats(&self) -> &[(Vec<T>, Vec<T>)] {
        &self.running
    }

    pub(crate) fn running_stats_mut(&mut self) -> &mut [(Vec<T>, Vec<T>)] {
        &mut self.running
    }

    /// Number of residual blocks in the backbone.
    pub fn residual_block_count(&self) -> usize {
        self.backbone.iter().filter(|l| matches!(l, Layer::Residual(_))).count()
    }

    /// Parameter indices of the convolution weights and biases of block `i`.
    pub fn residual_block_conv_params(&self, i: usize) -> Option<Vec<usize>> {
        let body = self
            .backbone
            .iter()
            .filter_map(|l| match l {
                Layer::Residual(b) => Some(b),
                _ => None,
            })
            .nth(i)?;
        Some(
            body.iter()
                .filter_map(|l| match l {
                    Layer::Conv { weight, bias, .. } => Some([*weight, *bias]),
                    _ => None,
                })
                .flatten()
                .collect(),
        )
    }

    /// Runs residual block `i` alone on a `[n, c, h, w]` feature map.
    pub fn residual_block_forward(&self, i: usize, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let layer = self
            .backbone
            .iter()
            .filter(|l| matches!(l, Layer::Residual(_)))
            .nth(i)
            .ok_or_else(|| Error::Usage(format!("no residual block {i}")))?;
        let mut g = Graph::new();
        let nodes = self.bind(&mut g);
        let x = g.input(x.clone());
        let y = self.apply(&mut g, &nodes, layer, x, mode)?;
        Ok(g.value(y).clone())
    }

    /// Adds every parameter to `g` as a leaf; the returned ids are indexed
    /// like [`Model::params`].
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<NodeId> {
        self.params.iter().enumerate().map(|(i, p)| g.param(p, i)).collect()
    }

    fn check_batch(&self, shape: &[usize]) -> Result<()> {
        let (h, w, c) = self.preset.input_size;
        if shape.len() != 4 || shape[1] != c || shape[2] != h || shape[3] != w {
            return Err(Error::Input(format!(
                "batch shape {shape:?} does not match [n, {c}, {h}, {w}]"
            )));
        }
        Ok(())
    }

    fn apply(&self, g: &mut Graph<T>, nodes: &[NodeId], layer: &Layer, x: NodeId, mode: Mode) -> Result<NodeId> {
        Ok(match layer {
            Layer::Conv {
                weight,
                bias,
                stride,
                pad,
            } => {
                let y = g.conv2d(x, nodes[*weight], *stride, *pad)?;
                g.add_bias(y, nodes[*bias])?
            }
            Layer::BatchNorm { gamma, beta, slot } => {
                let (mean, var) = &self.running[*slot];
                g.batchnorm(x, nodes[*gamma], nodes[*beta], *slot, mode, (mean, var))?
            }
            Layer::Relu => g.relu(x),
            Layer::MaxPool2 => g.maxpool2(x)?,
            Layer::GlobalAvgPool => g.global_avg_pool(x)?,
            Layer::Flatten => g.flatten(x)?,
            Layer::Dense { weight, bias } => {
                let y = g.matmul_nt(x, nodes[*weight])?;
                g.add_bias(y, nodes[*bias])?
            }
            Layer::Residual(body) => {
                let mut h = x;
                for l in body {
                    h = self.apply(g, nodes, l, h, mode)?;
                }
                g.add(x, h)?
            }
        })
    }

    /// Backbone embedding `[n, embedding_dim]`.
    pub fn embed_node(&self, g: &mut Graph<T>, nodes: &[NodeId], x: NodeId, mode: Mode) -> Result<NodeId> {
        self.check_batch(g.shape(x))?;
        let mut h = x;
        for l in &self.backbone {
            h = self.apply(g, nodes, l, h, mode)?;
        }
        Ok(h)
    }

    /// Classifier logits `[n, 2]`.
    pub fn logits_node(&self, g: &mut Graph<T>, nodes: &[NodeId], x: NodeId, mode: Mode) -> Result<NodeId> {
        let e = self.embed_node(g, nodes, x, mode)?;
        self.apply(g, nodes, &self.classifier, e, mode)
    }

    /// Unit-norm projection `[n, 64]`.
    pub fn projection_node(&self, g: &mut Graph<T>, nodes: &[NodeId], x: NodeId, mode: Mode) -> Result<NodeId> {
        let head = self
            .projection
            .as_ref()
            .ok_or_else(|| Error::Usage("model has no projection head".into()))?;
        let mut h = self.embed_node(g, nodes, x, mode)?;
        for l in head {
            h = self.apply(g, nodes, l, h, mode)?;
        }
        g.l2_normalize(h)
    }

    pub fn forward_logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(batch.shape())?;
        let mut g = Graph::new();
        let nodes = self.bind(&mut g);
        let x = g.input(batch.clone());
        let y = self.logits_node(&mut g, &nodes, x, Mode::Eval)?;
        Ok(g.value(y).clone())
    }

    /// Class probabilities `[n, 2]` in evaluation mode.
    pub fn forward_classify(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(batch.shape())?;
        let mut g = Graph::new();
        let nodes = self.bind(&mut g);
        let x = g.input(batch.clone());
        let y = self.logits_node(&mut g, &nodes, x, Mode::Eval)?;
        let p = g.softmax(y)?;
        Ok(g.value(p).clone())
    }

    /// Unit-norm contrastive embeddings in evaluation mode.
    pub fn forward_embed(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        if self.projection.is_none() {
            return Err(Error::Usage("model has no projection head".into()));
        }
        self.check_batch(batch.shape())?;
        let mut g = Graph::new();
        let nodes = self.bind(&mut g);
        let x = g.input(batch.clone());
        let y = self.projection_node(&mut g, &nodes, x, Mode::Eval)?;
        Ok(g.value(y).clone())
    }

    /// Folds batch statistics from a training pass into the running averages.
    pub fn commit_batch_stats(&mut self, stats: &[BatchStats<T>]) {
        let keep = T::from_f64_lossy(RUNNING_MOMENTUM);
        let take = T::one() - keep;
        for s in stats {
            let (mean, var) = &mut self.running[s.slot];
            for (r, &b) in mean.iter_mut().zip(&s.mean) {
                *r = keep * *r + take * b;
            }
            for (r, &b) in var.iter_mut().zip(&s.var) {
                *r = keep * *r + take * b;
            }
        }
    }
}
