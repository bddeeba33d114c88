use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{BatchNormMode, DeepSupervisionSpec, Padding, Real, Tape, Tensor, Var};

pub type NodeId = usize;
pub type ParamId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Architecture {
    UNet,
    MultiResUNet { alpha: f64 },
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::UNet => "unet",
            Architecture::MultiResUNet { .. } => "multires",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    pub architecture: Architecture,
    pub in_channels: usize,
    pub base_filters: usize,
    /// Input side length; must be divisible by 16.
    pub input_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Input,
    Conv { input: NodeId, kernel: ParamId, bias: Option<ParamId>, stride: usize, padding: Padding },
    BatchNorm { input: NodeId, scale: ParamId, shift: ParamId, mean: ParamId, var: ParamId },
    Relu(NodeId),
    Sigmoid(NodeId),
    MaxPool(NodeId),
    Upsample(NodeId),
    Concat(NodeId, NodeId),
    Add(NodeId, NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Running statistics are stored and persisted but never optimized.
    pub trainable: bool,
}

/// A prediction output and its spatial side length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Head {
    pub node: NodeId,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T> {
    config: GraphConfig,
    layers: Vec<Layer>,
    channels: Vec<usize>,
    sizes: Vec<usize>,
    params: Vec<Parameter<T>>,
    heads: Vec<Head>,
    /// Feature nodes ordered final decoder stage → bottleneck.
    stages: Vec<NodeId>,
    supervision: Option<DeepSupervisionSpec>,
}

/// Result of a recorded forward pass.
pub struct Forward {
    /// One var per head, ordered like [`Graph::heads`].
    pub outputs: Vec<Var>,
    /// Tape var for each trainable parameter (None for running statistics).
    pub params: Vec<Option<Var>>,
}

impl<T: Real> Graph<T> {
    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn head_sizes(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.size).collect()
    }

    pub fn stages(&self) -> &[NodeId] {
        &self.stages
    }

    pub fn node_size(&self, node: NodeId) -> usize {
        self.sizes[node]
    }

    pub fn node_channels(&self, node: NodeId) -> usize {
        self.channels[node]
    }

    pub fn supervision(&self) -> Option<&DeepSupervisionSpec> {
        self.supervision.as_ref()
    }

    pub(crate) fn set_supervision(&mut self, spec: DeepSupervisionSpec) {
        self.supervision = Some(spec);
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Names and dims of every stored tensor, in storage order.
    pub fn inventory(&self) -> Vec<(String, Vec<usize>)> {
        self.params.iter().map(|p| (p.name.clone(), p.tensor.dims().to_vec())).collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.tensor.len()).sum()
    }

    /// Convolution layers whose kernel name starts with `prefix`.
    pub fn conv_count(&self, prefix: &str) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Conv { kernel, .. } if self.params[*kernel].name.starts_with(prefix)))
            .count()
    }

    /// Replaces every parameter; fails without modifying anything when the
    /// names or dims differ from the current inventory.
    pub fn replace_parameters(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
        if entries.len() != self.params.len() {
            return Err(Error::InventoryMismatch(format!(
                "{} entries for {} parameters",
                entries.len(),
                self.params.len()
            )));
        }
        for ((name, t), p) in entries.iter().zip(&self.params) {
            if *name != p.name || t.dims() != p.tensor.dims() {
                return Err(Error::InventoryMismatch(format!(
                    "entry {name} {:?} where {} {:?} is expected",
                    t.dims(),
                    p.name,
                    p.tensor.dims()
                )));
            }
        }
        for ((_, t), p) in entries.into_iter().zip(self.params.iter_mut()) {
            p.tensor = t;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Graph<U> {
        Graph {
            config: self.config,
            layers: self.layers.clone(),
            channels: self.channels.clone(),
            sizes: self.sizes.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter { name: p.name.clone(), tensor: p.tensor.cast(), trainable: p.trainable })
                .collect(),
            heads: self.heads.clone(),
            stages: self.stages.clone(),
            supervision: self.supervision.clone(),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let (_, h, w, c) = input.nhwc()?;
        let want = self.sizes[0];
        if h != want || w != want || c != self.channels[0] {
            return Err(Error::ShapeMismatch(format!(
                "input {:?}, graph expects N×{want}×{want}×{}",
                input.dims(),
                self.channels[0]
            )));
        }
        Ok(())
    }

    /// Records the forward pass of every layer on `tape`. In training mode
    /// the batch-norm running statistics are updated in place.
    pub fn forward(&mut self, tape: &mut Tape<T>, input: Tensor<T>, mode: Mode) -> Result<Forward> {
        self.check_input(&input)?;
        let params: Vec<Option<Var>> =
            self.params.iter().map(|p| p.trainable.then(|| tape.leaf(p.tensor.clone()))).collect();
        let mut vars: Vec<Var> = Vec::with_capacity(self.layers.len());
        let mut input = Some(input);
        let pv = |id: ParamId| params[id].expect("trainable parameter");
        for layer in &self.layers {
            let v = match *layer {
                Layer::Input => tape.constant(input.take().expect("single input layer")),
                Layer::Conv { input, kernel, bias, stride, padding } => {
                    let y = tape.conv2d(vars[input], pv(kernel), stride, padding)?;
                    match bias {
                        Some(b) => tape.add_bias(y, pv(b))?,
                        None => y,
                    }
                }
                Layer::BatchNorm { input, scale, shift, mean, var } => match mode {
                    Mode::Train => {
                        let mut rm = self.params[mean].tensor.values().to_vec();
                        let mut rv = self.params[var].tensor.values().to_vec();
                        let y = tape.batchnorm(
                            vars[input],
                            pv(scale),
                            pv(shift),
                            BatchNormMode::Train { running_mean: &mut rm, running_var: &mut rv },
                        )?;
                        self.params[mean].tensor.values_mut().copy_from_slice(&rm);
                        self.params[var].tensor.values_mut().copy_from_slice(&rv);
                        y
                    }
                    Mode::Infer => tape.batchnorm(
                        vars[input],
                        pv(scale),
                        pv(shift),
                        BatchNormMode::Infer {
                            mean: self.params[mean].tensor.values(),
                            var: self.params[var].tensor.values(),
                        },
                    )?,
                },
                Layer::Relu(x) => tape.relu(vars[x]),
                Layer::Sigmoid(x) => tape.sigmoid(vars[x]),
                Layer::MaxPool(x) => tape.maxpool2(vars[x])?,
                Layer::Upsample(x) => tape.upsample2(vars[x])?,
                Layer::Concat(a, b) => tape.concat_channels(vars[a], vars[b])?,
                Layer::Add(a, b) => tape.add(vars[a], vars[b])?,
            };
            vars.push(v);
        }
        Ok(Forward { outputs: self.heads.iter().map(|h| vars[h.node]).collect(), params })
    }

    /// Inference-mode values of every head.
    pub fn predict_heads(&self, input: Tensor<T>) -> Result<Vec<Tensor<T>>> {
        // inference never touches running statistics, so a scratch copy of
        // the layer walk over &self is enough
        let mut tape = Tape::new();
        let out = self.forward_infer(&mut tape, input)?;
        Ok(out.into_iter().map(|v| tape.take_value(v)).collect())
    }

    /// Inference-mode prediction of the final (full resolution) head.
    pub fn predict(&self, input: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let out = self.forward_infer(&mut tape, input)?;
        Ok(tape.take_value(out[0]))
    }

    fn forward_infer(&self, tape: &mut Tape<T>, input: Tensor<T>) -> Result<Vec<Var>> {
        self.check_input(&input)?;
        let params: Vec<Option<Var>> =
            self.params.iter().map(|p| p.trainable.then(|| tape.constant(p.tensor.clone()))).collect();
        let pv = |id: ParamId| params[id].expect("trainable parameter");
        let mut vars: Vec<Var> = Vec::with_capacity(self.layers.len());
        let mut input = Some(input);
        for layer in &self.layers {
            let v = match *layer {
                Layer::Input => tape.constant(input.take().expect("single input layer")),
                Layer::Conv { input, kernel, bias, stride, padding } => {
                    let y = tape.conv2d(vars[input], pv(kernel), stride, padding)?;
                    match bias {
                        Some(b) => tape.add_bias(y, pv(b))?,
                        None => y,
                    }
                }
                Layer::BatchNorm { input, scale, shift, mean, var } => tape.batchnorm(
                    vars[input],
                    pv(scale),
                    pv(shift),
                    BatchNormMode::Infer { mean: self.params[mean].tensor.values(), var: self.params[var].tensor.values() },
                )?,
                Layer::Relu(x) => tape.relu(vars[x]),
                Layer::Sigmoid(x) => tape.sigmoid(vars[x]),
                Layer::MaxPool(x) => tape.maxpool2(vars[x])?,
                Layer::Upsample(x) => tape.upsample2(vars[x])?,
                Layer::Concat(a, b) => tape.concat_channels(vars[a], vars[b])?,
                Layer::Add(a, b) => tape.add(vars[a], vars[b])?,
            };
            vars.push(v);
        }
        Ok(self.heads.iter().map(|h| vars[h.node]).collect())
    }
}

/// Incremental graph construction with He-uniform kernel initialization.
pub struct GraphBuilder<T> {
    graph: Graph<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> GraphBuilder<T> {
    pub fn new(config: GraphConfig) -> Self {
        let graph = Graph {
            config,
            layers: vec![Layer::Input],
            channels: vec![config.in_channels],
            sizes: vec![config.input_size],
            params: Vec::new(),
            heads: Vec::new(),
            stages: Vec::new(),
            supervision: None,
        };
        GraphBuilder { graph, rng: ChaCha8Rng::seed_from_u64(config.seed) }
    }

    /// Continue building on a finished graph; `salt` decorrelates the new
    /// initializations from the original ones.
    pub fn resume(graph: Graph<T>, salt: u64) -> Self {
        let seed = graph.config.seed ^ salt;
        GraphBuilder { graph, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub const INPUT: NodeId = 0;

    pub fn channels(&self, node: NodeId) -> usize {
        self.graph.channels[node]
    }

    pub fn size(&self, node: NodeId) -> usize {
        self.graph.sizes[node]
    }

    pub(crate) fn graph_heads(&self) -> &[Head] {
        &self.graph.heads
    }

    fn push(&mut self, layer: Layer, channels: usize, size: usize) -> NodeId {
        self.graph.layers.push(layer);
        self.graph.channels.push(channels);
        self.graph.sizes.push(size);
        self.graph.layers.len() - 1
    }

    fn param(&mut self, name: String, tensor: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.graph.params.iter().any(|p| p.name == name) {
            return Err(Error::InventoryMismatch(format!("duplicate parameter name {name}")));
        }
        self.graph.params.push(Parameter { name, tensor, trainable });
        Ok(self.graph.params.len() - 1)
    }

    /// Same-padded, stride-1 `k×k` convolution named `{name}.weight`
    /// (and `{name}.bias`).
    pub fn conv(&mut self, input: NodeId, out_channels: usize, k: usize, name: &str, bias: bool) -> Result<NodeId> {
        let cin = self.channels(input);
        if out_channels == 0 {
            return Err(Error::InvalidConfig(format!("{name}: zero output channels")));
        }
        let fan_in = (k * k * cin) as f64;
        let limit = libm::sqrt(6.0 / fan_in);
        let n = k * k * cin * out_channels;
        let values: Vec<T> = (0..n).map(|_| T::from_f64(self.rng.gen_range(-limit..limit))).collect();
        let kernel = self.param(format!("{name}.weight"), Tensor::from_vec(&[k, k, cin, out_channels], values)?, true)?;
        let bias = if bias {
            Some(self.param(format!("{name}.bias"), Tensor::zeros(&[out_channels]), true)?)
        } else {
            None
        };
        let size = self.size(input);
        Ok(self.push(Layer::Conv { input, kernel, bias, stride: 1, padding: Padding::Same }, out_channels, size))
    }

    pub fn batchnorm(&mut self, input: NodeId, name: &str) -> Result<NodeId> {
        let c = self.channels(input);
        let scale = self.param(format!("{name}.gamma"), Tensor::full(&[c], T::ONE), true)?;
        let shift = self.param(format!("{name}.beta"), Tensor::zeros(&[c]), true)?;
        let mean = self.param(format!("{name}.running_mean"), Tensor::zeros(&[c]), false)?;
        let var = self.param(format!("{name}.running_var"), Tensor::full(&[c], T::ONE), false)?;
        let size = self.size(input);
        Ok(self.push(Layer::BatchNorm { input, scale, shift, mean, var }, c, size))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let (c, s) = (self.channels(x), self.size(x));
        self.push(Layer::Relu(x), c, s)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let (c, s) = (self.channels(x), self.size(x));
        self.push(Layer::Sigmoid(x), c, s)
    }

    pub fn maxpool(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, s) = (self.channels(x), self.size(x));
        if s % 2 != 0 {
            return Err(Error::OddDimension { rows: s, cols: s });
        }
        Ok(self.push(Layer::MaxPool(x), c, s / 2))
    }

    pub fn upsample(&mut self, x: NodeId) -> NodeId {
        let (c, s) = (self.channels(x), self.size(x));
        self.push(Layer::Upsample(x), c, 2 * s)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.size(a) != self.size(b) {
            return Err(Error::ShapeMismatch(format!("concat of {} and {} sized maps", self.size(a), self.size(b))));
        }
        let (c, s) = (self.channels(a) + self.channels(b), self.size(a));
        Ok(self.push(Layer::Concat(a, b), c, s))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.size(a) != self.size(b) || self.channels(a) != self.channels(b) {
            return Err(Error::ShapeMismatch("add of differently shaped maps".into()));
        }
        let (c, s) = (self.channels(a), self.size(a));
        Ok(self.push(Layer::Add(a, b), c, s))
    }

    /// conv → batchnorm → relu.
    pub fn conv_bn_relu(&mut self, input: NodeId, out_channels: usize, k: usize, name: &str) -> Result<NodeId> {
        let c = self.conv(input, out_channels, k, name, false)?;
        let b = self.batchnorm(c, &format!("{name}.bn"))?;
        Ok(self.relu(b))
    }

    pub(crate) fn set_stages(&mut self, stages: Vec<NodeId>) {
        self.graph.stages = stages;
    }

    /// Finishes with the given heads (the first one is the prediction).
    pub fn into_graph(mut self, heads: Vec<Head>) -> Graph<T> {
        self.graph.heads = heads;
        self.graph
    }

    /// Finishes with a single head on `node`.
    pub fn finish(self, node: NodeId) -> Graph<T> {
        let size = self.size(node);
        self.into_graph(vec![Head { node, size }])
    }
}

pub(crate) fn check_config(cfg: &GraphConfig) -> Result<()> {
    if cfg.in_channels == 0 {
        return Err(Error::InvalidConfig("in_channels must be positive".into()));
    }
    if cfg.base_filters < 4 {
        return Err(Error::InvalidConfig(format!("base_filters {} must be at least 4", cfg.base_filters)));
    }
    if cfg.input_size == 0 || !cfg.input_size.is_multiple_of(16) {
        return Err(Error::InvalidConfig(format!("input_size {} must be a positive multiple of 16", cfg.input_size)));
    }
    Ok(())
}
