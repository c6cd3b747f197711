//! Sequential networks built from a small set of layer descriptors.

use rand::Rng;

use super::tape::{BatchStats, Gradients, Tape, Var};
use super::tensor::{numel, Real, Tensor};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Relu,
    Tanh,
    BatchNorm {
        channels: usize,
    },
    Flatten,
    /// Per-sample target shape.
    Reshape {
        shape: Vec<usize>,
    },
    Upsample2x,
    /// Joins several `[N, w]` inputs; only valid as the first layer.
    Concat {
        widths: Vec<usize>,
    },
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::Tanh => "tanh",
            Layer::BatchNorm { .. } => "batchnorm",
            Layer::Flatten => "flatten",
            Layer::Reshape { .. } => "reshape",
            Layer::Upsample2x => "upsample2x",
            Layer::Concat { .. } => "concat",
        }
    }

    /// Per-sample output shape, or None if `input` is not accepted.
    fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match self {
            Layer::Dense { inputs, outputs } => (input == [*inputs]).then(|| vec![*outputs]),
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                if input.len() != 3 || input[0] != *in_channels || *stride == 0 {
                    return None;
                }
                let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
                if h < *kernel || w < *kernel {
                    return None;
                }
                Some(vec![
                    *out_channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ])
            }
            Layer::Relu | Layer::Tanh => Some(input.to_vec()),
            Layer::BatchNorm { channels } => {
                (input.first() == Some(channels)).then(|| input.to_vec())
            }
            Layer::Flatten => Some(vec![numel(input)]),
            Layer::Reshape { shape } => (numel(shape) == numel(input)).then(|| shape.clone()),
            Layer::Upsample2x => {
                (input.len() == 3).then(|| vec![input[0], input[1] * 2, input[2] * 2])
            }
            Layer::Concat { widths } => Some(vec![widths.iter().sum()]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses batch statistics and stages them for [`Network::commit_batch_stats`].
    Train,
    /// Batch norm uses running statistics; samples are independent.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Running statistics are stored alongside weights but never receive gradients.
    pub trainable: bool,
}

/// Parameter leaves of one network on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, param: usize) -> Option<Var> {
        self.vars.get(param).copied().flatten()
    }
}

#[derive(Clone, Debug)]
pub struct Network<T = f32> {
    name: String,
    input_shapes: Vec<Vec<usize>>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Param<T>>,
    layer_params: Vec<Vec<usize>>,
    pending: Vec<Option<BatchStats<T>>>,
}

impl<T: Real> PartialEq for Network<T> {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.input_shapes == other.input_shapes
            && self.layers == other.layers
            && self.params == other.params
    }
}

pub struct NetworkBuilder {
    name: String,
    input_shapes: Vec<Vec<usize>>,
    layers: Vec<Layer>,
}

impl NetworkBuilder {
    /// Single input with the given per-sample shape.
    pub fn new(name: impl Into<String>, input_shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            input_shapes: vec![input_shape.to_vec()],
            layers: Vec::new(),
        }
    }

    /// Several flat inputs joined by a leading concat layer.
    pub fn concat(name: impl Into<String>, widths: &[usize]) -> Self {
        Self {
            name: name.into(),
            input_shapes: widths.iter().map(|&w| vec![w]).collect(),
            layers: vec![Layer::Concat {
                widths: widths.to_vec(),
            }],
        }
    }

    pub fn layer(mut self, layer: Layer) -> Self {
        self.layers.push(layer);
        self
    }

    fn current(&self) -> Vec<usize> {
        let mut shape = self.input_shapes[0].clone();
        for l in &self.layers {
            match l.output_shape(&shape) {
                Some(s) => shape = s,
                None => return Vec::new(),
            }
        }
        shape
    }

    pub fn dense(self, outputs: usize) -> Self {
        let inputs = numel(&self.current());
        self.layer(Layer::Dense { inputs, outputs })
    }

    pub fn conv2d(
        self,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        let in_channels = self.current().first().copied().unwrap_or(0);
        self.layer(Layer::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            bias,
        })
    }

    pub fn batch_norm(self) -> Self {
        let channels = self.current().first().copied().unwrap_or(0);
        self.layer(Layer::BatchNorm { channels })
    }

    pub fn relu(self) -> Self {
        self.layer(Layer::Relu)
    }

    pub fn tanh(self) -> Self {
        self.layer(Layer::Tanh)
    }

    pub fn flatten(self) -> Self {
        self.layer(Layer::Flatten)
    }

    pub fn reshape(self, shape: &[usize]) -> Self {
        self.layer(Layer::Reshape {
            shape: shape.to_vec(),
        })
    }

    pub fn upsample2x(self) -> Self {
        self.layer(Layer::Upsample2x)
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero, batch norm at identity.
    pub fn build<T: Real, R: Rng + ?Sized>(self, rng: &mut R) -> Result<Network<T>> {
        let NetworkBuilder {
            name,
            input_shapes,
            layers,
        } = self;
        if input_shapes.iter().any(|s| s.is_empty() || s.contains(&0)) {
            return Err(Error::shape(format!("{name}.input"), &[1], &[0]));
        }
        let mut shape = input_shapes[0].clone();
        let mut shapes = Vec::with_capacity(layers.len());
        let mut params = Vec::new();
        let mut layer_params = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            let label = format!("{name}.{i}.{}", layer.kind());
            if matches!(layer, Layer::Concat { .. }) && i != 0 {
                return Err(Error::shape(label, &[], &shape));
            }
            let out = layer
                .output_shape(&shape)
                .ok_or_else(|| Error::shape(&label, &[], &shape))?;
            let mut idx = Vec::new();
            let mut add = |suffix: &str, tensor: Tensor<T>, trainable: bool| {
                idx.push(params.len());
                params.push(Param {
                    name: format!("{name}.{i}.{suffix}"),
                    tensor,
                    trainable,
                });
            };
            match layer {
                Layer::Dense { inputs, outputs } => {
                    add(
                        "weight",
                        uniform(vec![*outputs, *inputs], *inputs, rng)?,
                        true,
                    );
                    add("bias", Tensor::zeros(vec![*outputs])?, true);
                }
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    bias,
                    ..
                } => {
                    let fan_in = in_channels * kernel * kernel;
                    add(
                        "weight",
                        uniform(
                            vec![*out_channels, *in_channels, *kernel, *kernel],
                            fan_in,
                            rng,
                        )?,
                        true,
                    );
                    if *bias {
                        add("bias", Tensor::zeros(vec![*out_channels])?, true);
                    }
                }
                Layer::BatchNorm { channels } => {
                    add("gamma", Tensor::full(vec![*channels], T::one())?, true);
                    add("beta", Tensor::zeros(vec![*channels])?, true);
                    add("running_mean", Tensor::zeros(vec![*channels])?, false);
                    add(
                        "running_var",
                        Tensor::full(vec![*channels], T::one())?,
                        false,
                    );
                }
                _ => {}
            }
            layer_params.push(idx);
            shapes.push(out.clone());
            shape = out;
        }
        let pending = vec![None; layers.len()];
        Ok(Network {
            name,
            input_shapes,
            layers,
            shapes,
            params,
            layer_params,
            pending,
        })
    }
}

fn uniform<T: Real, R: Rng + ?Sized>(
    shape: Vec<usize>,
    fan_in: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let values = (0..numel(&shape))
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, values)
}

impl<T: Real> Network<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shapes(&self) -> &[Vec<usize>] {
        &self.input_shapes
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> &[usize] {
        self.shapes
            .last()
            .map(Vec::as_slice)
            .unwrap_or(&self.input_shapes[0])
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Number of trainable scalars.
    pub fn trainable_len(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Indices of the parameters owned by `layer`.
    pub fn layer_params(&self, layer: usize) -> &[usize] {
        &self.layer_params[layer]
    }

    /// Registers trainable parameters as gradient-requiring leaves.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        self.bind_with(tape, true)
    }

    /// Registers parameters as constants (no gradients are computed for them).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| p.trainable.then(|| tape.param(&p.tensor, trainable)))
            .collect();
        Bound { vars }
    }

    fn check_inputs(&self, tape: &Tape<T>, inputs: &[Var]) -> Result<usize> {
        let label = format!("{}.input", self.name);
        if inputs.len() != self.input_shapes.len() {
            return Err(Error::shape(
                label,
                &[self.input_shapes.len()],
                &[inputs.len()],
            ));
        }
        let batch = tape.shape(inputs[0])[0];
        for (v, expected) in inputs.iter().zip(&self.input_shapes) {
            let got = tape.shape(*v);
            if got.len() != expected.len() + 1 || got[0] != batch || got[1..] != expected[..] {
                let mut want = vec![batch];
                want.extend_from_slice(expected);
                return Err(Error::shape(label, &want, got));
            }
        }
        Ok(batch)
    }

    /// Records the network on `tape`. Inputs carry a leading batch axis.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        bound: &Bound,
        inputs: &[Var],
        mode: Mode,
    ) -> Result<Var> {
        let batch = self.check_inputs(tape, inputs)?;
        let mut x = inputs[0];
        let eps = T::of(BN_EPS);
        for i in 0..self.layers.len() {
            let pidx = &self.layer_params[i];
            let var = |k: usize| {
                bound.var(pidx[k]).ok_or_else(|| {
                    Error::ParamMismatch(format!(
                        "{}.{i}: parameter not bound on this tape",
                        self.name
                    ))
                })
            };
            let label = || format!("{}.{i}.{}", self.name, self.layers[i].kind());
            let wrap = |e: Error| match e {
                Error::Shape { expected, got, .. } => Error::Shape {
                    layer: label(),
                    expected,
                    got,
                },
                other => other,
            };
            x = match &self.layers[i] {
                Layer::Dense { .. } => tape.dense(x, var(0)?, var(1)?).map_err(wrap)?,
                Layer::Conv2d {
                    stride,
                    padding,
                    bias,
                    ..
                } => {
                    let b = if *bias { Some(var(1)?) } else { None };
                    tape.conv2d(x, var(0)?, b, *stride, *padding)
                        .map_err(wrap)?
                }
                Layer::Relu => tape.relu(x),
                Layer::Tanh => tape.tanh(x),
                Layer::BatchNorm { .. } => match mode {
                    Mode::Train => {
                        let (y, stats) = tape
                            .batch_norm_train(x, var(0)?, var(1)?, eps)
                            .map_err(wrap)?;
                        self.pending[i] = Some(stats);
                        y
                    }
                    Mode::Eval => {
                        let mean = self.params[pidx[2]].tensor.values().to_vec();
                        let var_ = self.params[pidx[3]].tensor.values().to_vec();
                        tape.batch_norm_eval(x, var(0)?, var(1)?, &mean, &var_, eps)
                            .map_err(wrap)?
                    }
                },
                Layer::Flatten => {
                    let n = numel(&tape.shape(x)[1..]);
                    tape.reshape(x, vec![batch, n]).map_err(wrap)?
                }
                Layer::Reshape { shape } => {
                    let mut s = vec![batch];
                    s.extend_from_slice(shape);
                    tape.reshape(x, s).map_err(wrap)?
                }
                Layer::Upsample2x => tape.upsample2x(x).map_err(wrap)?,
                Layer::Concat { .. } => tape.concat(inputs).map_err(wrap)?,
            };
        }
        Ok(x)
    }

    /// Inference on concrete tensors (eval mode, throwaway tape).
    pub fn predict(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t)).collect();
        let bound = self.bind_frozen(&mut tape);
        let y = self.forward(&mut tape, &bound, &vars, Mode::Eval)?;
        Ok(tape.tensor(y))
    }

    /// Copies adjoints from a backward pass into the parameter grad buffers.
    /// Parameters that did not participate get zero gradients.
    pub fn absorb_grads(&mut self, bound: &Bound, grads: &Gradients<T>) {
        for (i, p) in self.params.iter_mut().enumerate() {
            let g = bound.var(i).and_then(|v| grads.get(v));
            match g {
                Some(g) => p.tensor.grad_mut().copy_from_slice(g),
                None => p.tensor.zero_grad(),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Name -> gradient view over the trainable parameters.
    pub fn grad_map(&self) -> Vec<(&str, &[T])> {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| (p.name.as_str(), p.tensor.grad()))
            .collect()
    }

    /// Folds batch statistics staged by the last training forward into the
    /// running statistics.
    pub fn commit_batch_stats(&mut self) {
        let m = T::of(BN_MOMENTUM);
        for i in 0..self.layers.len() {
            if let Some(stats) = self.pending[i].take() {
                let pidx = self.layer_params[i].clone();
                let rm = self.params[pidx[2]].tensor.values_mut();
                for (r, &b) in rm.iter_mut().zip(&stats.mean) {
                    *r = m * *r + (T::one() - m) * b;
                }
                let rv = self.params[pidx[3]].tensor.values_mut();
                for (r, &b) in rv.iter_mut().zip(&stats.var) {
                    *r = m * *r + (T::one() - m) * b;
                }
            }
        }
    }

    pub fn discard_batch_stats(&mut self) {
        self.pending.iter_mut().for_each(|p| *p = None);
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.tensor.values().iter().all(|v| v.is_finite()))
    }

    /// Same architecture and values in another element type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            name: self.name.clone(),
            input_shapes: self.input_shapes.clone(),
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            layer_params: self.layer_params.clone(),
            pending: vec![None; self.layers.len()],
        }
    }

    /// Overwrites all parameter values from a flat buffer in parameter order.
    pub fn load_flat(&mut self, flat: &[T]) -> Result<()> {
        let total: usize = self.params.iter().map(|p| p.tensor.len()).sum();
        if flat.len() != total {
            return Err(Error::ParamMismatch(format!(
                "{}: expected {total} values, got {}",
                self.name,
                flat.len()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.tensor.len();
            p.tensor.values_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn flat_values(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|p| p.tensor.values().iter().copied())
            .collect()
    }

    /// Number of values across all parameters and running statistics.
    pub fn value_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }
}
