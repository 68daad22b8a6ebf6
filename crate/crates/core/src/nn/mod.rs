//! Small dense network engine.
//!
//! Activations are `batch x features` matrices. A [`Sequential`] chain runs
//! fully connected, batch-norm, ReLU, dropout, sigmoid and concat layers; a
//! [`Network`] feeds several chains ("branches") into an optional head whose
//! input is the column-wise concatenation of the branch outputs.
//!
//! Forward passes take `&self`: batch-norm running statistics are only
//! touched by [`Network::commit_running_stats`], so a forward pass can be
//! repeated (finite differences) without side effects.

mod adam;
mod gradcheck;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{analytic_gradient, grad_check, max_relative_error, numeric_gradient};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    FullyConnected,
    BatchNorm,
    Relu,
    Dropout,
    Sigmoid,
    /// Joins the branch outputs of a [`Network`]; identity inside a chain.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    #[serde(default)]
    pub dropout_p: f64,
}

impl LayerSpec {
    fn same(kind: LayerKind, dim: usize) -> Self {
        Self {
            kind,
            in_dim: dim,
            out_dim: dim,
            dropout_p: 0.0,
        }
    }

    pub fn fc(in_dim: usize, out_dim: usize) -> Self {
        Self {
            kind: LayerKind::FullyConnected,
            in_dim,
            out_dim,
            dropout_p: 0.0,
        }
    }

    pub fn batch_norm(dim: usize) -> Self {
        Self::same(LayerKind::BatchNorm, dim)
    }

    pub fn relu(dim: usize) -> Self {
        Self::same(LayerKind::Relu, dim)
    }

    pub fn sigmoid(dim: usize) -> Self {
        Self::same(LayerKind::Sigmoid, dim)
    }

    pub fn dropout(dim: usize, p: f64) -> Self {
        Self {
            dropout_p: p,
            ..Self::same(LayerKind::Dropout, dim)
        }
    }

    /// Concatenation of two inputs of widths `a` and `b`.
    pub fn concat(a: usize, b: usize) -> Self {
        Self::same(LayerKind::Concat, a + b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config(format!("{:?} layer with zero width", self.kind)));
        }
        if self.kind != LayerKind::FullyConnected && self.in_dim != self.out_dim {
            return Err(Error::Config(format!(
                "{:?} layer must keep its width ({} -> {})",
                self.kind, self.in_dim, self.out_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout probability {} not in [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerParams {
    None,
    /// `y = x W + b` with `weight` of shape `in x out`.
    Dense { weight: Array2<f64>, bias: Array1<f64> },
    BatchNorm {
        gamma: Array1<f64>,
        beta: Array1<f64>,
        running_mean: Array1<f64>,
        running_var: Array1<f64>,
        momentum: f64,
    },
}

impl LayerParams {
    fn init(spec: &LayerSpec, rng: &mut dyn RngCore) -> Self {
        match spec.kind {
            LayerKind::FullyConnected => {
                let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((spec.in_dim, spec.out_dim), || rng.random_range(-limit..=limit));
                LayerParams::Dense {
                    weight,
                    bias: Array1::zeros(spec.out_dim),
                }
            }
            LayerKind::BatchNorm => LayerParams::BatchNorm {
                gamma: Array1::ones(spec.out_dim),
                beta: Array1::zeros(spec.out_dim),
                running_mean: Array1::zeros(spec.out_dim),
                running_var: Array1::ones(spec.out_dim),
                momentum: BN_MOMENTUM,
            },
            _ => LayerParams::None,
        }
    }

    fn matches(&self, spec: &LayerSpec) -> bool {
        match (self, spec.kind) {
            (LayerParams::Dense { weight, bias }, LayerKind::FullyConnected) => {
                weight.dim() == (spec.in_dim, spec.out_dim) && bias.len() == spec.out_dim
            }
            (
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    ..
                },
                LayerKind::BatchNorm,
            ) => {
                [gamma, beta, running_mean, running_var].iter().all(|a| a.len() == spec.out_dim)
                    && running_var.iter().all(|&v| v >= 0.0)
            }
            (LayerParams::None, k) => !matches!(k, LayerKind::FullyConnected | LayerKind::BatchNorm),
            _ => false,
        }
    }
}

/// Gradients of the trainable tensors of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    None,
    Dense { weight: Array2<f64>, bias: Array1<f64> },
    BatchNorm { gamma: Array1<f64>, beta: Array1<f64> },
}

impl LayerGrad {
    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            LayerGrad::None => vec![],
            LayerGrad::Dense { weight, bias } => vec![weight.as_slice().unwrap(), bias.as_slice().unwrap()],
            LayerGrad::BatchNorm { gamma, beta } => vec![gamma.as_slice().unwrap(), beta.as_slice().unwrap()],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            LayerGrad::None => vec![],
            LayerGrad::Dense { weight, bias } => vec![weight.as_slice_mut().unwrap(), bias.as_slice_mut().unwrap()],
            LayerGrad::BatchNorm { gamma, beta } => vec![gamma.as_slice_mut().unwrap(), beta.as_slice_mut().unwrap()],
        }
    }
}

pub enum Mode<'a> {
    Eval,
    /// Batch statistics for batch norm, random masks for dropout.
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Debug, Clone)]
enum Cache {
    None,
    BatchNorm {
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
        mean: Array1<f64>,
        var: Array1<f64>,
    },
    Mask(Array2<f64>),
}

/// Every activation of a chain (`acts[0]` is the input) plus what backprop needs.
#[derive(Debug, Clone)]
pub struct Trace {
    pub acts: Vec<Array2<f64>>,
    caches: Vec<Cache>,
    train: bool,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("trace holds the input")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: LayerParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

fn check_chain(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("empty layer chain".into()));
    }
    for s in specs {
        s.validate()?;
    }
    for w in specs.windows(2) {
        if w[0].out_dim != w[1].in_dim {
            return Err(Error::Config(format!(
                "{:?} outputs {} features but {:?} expects {}",
                w[0].kind, w[0].out_dim, w[1].kind, w[1].in_dim
            )));
        }
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Sequential {
    /// Fresh chain: uniform `+-sqrt(6 / (fan_in + fan_out))` weights, zero biases,
    /// unit batch-norm scale.
    pub fn new(specs: &[LayerSpec], rng: &mut dyn RngCore) -> Result<Self> {
        check_chain(specs)?;
        let layers = specs
            .iter()
            .map(|spec| Layer {
                spec: *spec,
                params: LayerParams::init(spec, rng),
            })
            .collect();
        Ok(Self { layers })
    }

    /// Checks a deserialized chain.
    pub fn validate(&self) -> Result<()> {
        let specs = self.specs();
        check_chain(&specs)?;
        for l in &self.layers {
            if !l.params.matches(&l.spec) {
                return Err(Error::Config(format!("{:?} parameters do not fit their layer spec", l.spec.kind)));
            }
        }
        Ok(())
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn forward(&self, input: ArrayView2<f64>, mode: &mut Mode) -> Result<Trace> {
        if input.ncols() != self.in_dim() {
            return Err(Error::dim("layer input width", self.in_dim(), input.ncols()));
        }
        let batch = input.nrows();
        if batch == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let train = mode.is_train();
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        acts.push(input.to_owned());
        for layer in &self.layers {
            let x = acts.last().unwrap();
            let (y, cache) = match (&layer.params, layer.spec.kind) {
                (LayerParams::Dense { weight, bias }, _) => (x.dot(weight) + bias, Cache::None),
                (
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                        ..
                    },
                    _,
                ) => {
                    if train {
                        if batch < 2 {
                            return Err(Error::InvalidInput("batch norm in training needs a batch of at least 2".into()));
                        }
                        let mean = x.mean_axis(Axis(0)).unwrap();
                        let centered = x - &mean;
                        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
                        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                        let xhat = centered * &inv_std;
                        let y = &xhat * gamma + beta;
                        (
                            y,
                            Cache::BatchNorm {
                                xhat,
                                inv_std,
                                mean,
                                var,
                            },
                        )
                    } else {
                        let inv_std = running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                        let y = (x - running_mean) * &(&inv_std * gamma) + beta;
                        (
                            y,
                            Cache::BatchNorm {
                                xhat: Array2::zeros((0, 0)),
                                inv_std,
                                mean: Array1::zeros(0),
                                var: Array1::zeros(0),
                            },
                        )
                    }
                }
                (_, LayerKind::Relu) => (x.mapv(|v| v.max(0.0)), Cache::None),
                (_, LayerKind::Sigmoid) => (x.mapv(sigmoid), Cache::None),
                (_, LayerKind::Dropout) => match mode {
                    Mode::Train(rng) if layer.spec.dropout_p > 0.0 => {
                        let p = layer.spec.dropout_p;
                        let keep = 1.0 / (1.0 - p);
                        let mask = Array2::from_shape_simple_fn(x.dim(), || if rng.random::<f64>() < p { 0.0 } else { keep });
                        (x * &mask, Cache::Mask(mask))
                    }
                    _ => (x.clone(), Cache::None),
                },
                (_, LayerKind::Concat) => (x.clone(), Cache::None),
                (_, LayerKind::FullyConnected | LayerKind::BatchNorm) => unreachable!("validated chain"),
            };
            acts.push(y);
            caches.push(cache);
        }
        Ok(Trace { acts, caches, train })
    }

    /// Backprop of `grad_out` (dL/d output) through a trace of this chain.
    pub fn backward(&self, trace: &Trace, grad_out: &Array2<f64>) -> Result<(Array2<f64>, Vec<LayerGrad>)> {
        if grad_out.dim() != trace.output().dim() {
            return Err(Error::dim("output gradient width", trace.output().ncols(), grad_out.ncols()));
        }
        let mut g = grad_out.clone();
        let mut grads = vec![LayerGrad::None; self.layers.len()];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.acts[l];
            let y = &trace.acts[l + 1];
            g = match (&layer.params, &trace.caches[l], layer.spec.kind) {
                (LayerParams::Dense { weight, .. }, _, _) => {
                    grads[l] = LayerGrad::Dense {
                        weight: x.t().dot(&g).as_standard_layout().into_owned(),
                        bias: g.sum_axis(Axis(0)),
                    };
                    g.dot(&weight.t())
                }
                (LayerParams::BatchNorm { gamma, .. }, Cache::BatchNorm { xhat, inv_std, .. }, _) => {
                    if trace.train {
                        let n = g.nrows() as f64;
                        let dbeta = g.sum_axis(Axis(0));
                        let dgamma = (&g * xhat).sum_axis(Axis(0));
                        // dx = gamma * inv_std / n * (n g - sum g - xhat * sum(g xhat))
                        let scale = gamma * inv_std / n;
                        let dx = (&g * n - &dbeta - xhat * &dgamma) * &scale;
                        grads[l] = LayerGrad::BatchNorm {
                            gamma: dgamma,
                            beta: dbeta,
                        };
                        dx
                    } else {
                        let dbeta = g.sum_axis(Axis(0));
                        let pre = (x - &layer_running_mean(&layer.params)) * inv_std;
                        grads[l] = LayerGrad::BatchNorm {
                            gamma: (&g * &pre).sum_axis(Axis(0)),
                            beta: dbeta,
                        };
                        g * &(gamma * inv_std)
                    }
                }
                (_, _, LayerKind::Relu) => {
                    let mut g = g;
                    g.zip_mut_with(y, |gv, &yv| {
                        if yv <= 0.0 {
                            *gv = 0.0
                        }
                    });
                    g
                }
                (_, _, LayerKind::Sigmoid) => {
                    let mut g = g;
                    g.zip_mut_with(y, |gv, &s| *gv *= s * (1.0 - s));
                    g
                }
                (_, Cache::Mask(mask), LayerKind::Dropout) => g * mask,
                (_, _, LayerKind::Dropout | LayerKind::Concat) => g,
                _ => unreachable!("trace does not belong to this chain"),
            };
        }
        Ok((g, grads))
    }

    /// Moves batch-norm running statistics toward the batch statistics of a
    /// training trace (unbiased variance).
    pub fn commit_running_stats(&mut self, trace: &Trace) {
        if !trace.train {
            return;
        }
        let n = trace.acts[0].nrows() as f64;
        for (layer, cache) in self.layers.iter_mut().zip(&trace.caches) {
            if let (
                LayerParams::BatchNorm {
                    running_mean,
                    running_var,
                    momentum,
                    ..
                },
                Cache::BatchNorm { mean, var, .. },
            ) = (&mut layer.params, cache)
            {
                let m = *momentum;
                running_mean.zip_mut_with(mean, |r, &b| *r = (1.0 - m) * *r + m * b);
                running_var.zip_mut_with(var, |r, &b| *r = (1.0 - m) * *r + m * b * n / (n - 1.0));
            }
        }
    }

    /// Eval-mode forward of a single sample. Zero inputs of fully connected
    /// layers are skipped, which pays off on the sparse encoded features.
    pub fn infer(&self, input: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(Error::dim("layer input width", self.in_dim(), input.len()));
        }
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            match &layer.params {
                LayerParams::Dense { weight, bias } => {
                    next.clear();
                    next.extend(bias.iter());
                    for (k, &xk) in cur.iter().enumerate() {
                        if xk != 0.0 {
                            let row = weight.row(k);
                            for (o, &w) in next.iter_mut().zip(row.as_slice().unwrap()) {
                                *o += xk * w;
                            }
                        }
                    }
                    std::mem::swap(&mut cur, &mut next);
                }
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    ..
                } => {
                    for (i, v) in cur.iter_mut().enumerate() {
                        *v = (*v - running_mean[i]) / (running_var[i] + BN_EPS).sqrt() * gamma[i] + beta[i];
                    }
                }
                LayerParams::None => match layer.spec.kind {
                    LayerKind::Relu => cur.iter_mut().for_each(|v| *v = v.max(0.0)),
                    LayerKind::Sigmoid => cur.iter_mut().for_each(|v| *v = sigmoid(*v)),
                    _ => {}
                },
            }
        }
        *out = cur;
        Ok(())
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match &mut l.params {
                LayerParams::Dense { weight, bias } => {
                    out.push(weight.as_slice_mut().unwrap());
                    out.push(bias.as_slice_mut().unwrap());
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma.as_slice_mut().unwrap());
                    out.push(beta.as_slice_mut().unwrap());
                }
                LayerParams::None => {}
            }
        }
        out
    }
}

fn layer_running_mean(p: &LayerParams) -> Array1<f64> {
    match p {
        LayerParams::BatchNorm { running_mean, .. } => running_mean.clone(),
        _ => unreachable!(),
    }
}

/// Branch chains whose outputs are concatenated into an optional head chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub branches: Vec<Sequential>,
    pub head: Option<Sequential>,
}

#[derive(Debug, Clone)]
pub struct NetTrace {
    pub branches: Vec<Trace>,
    pub head: Option<Trace>,
}

impl NetTrace {
    pub fn output(&self) -> &Array2<f64> {
        match &self.head {
            Some(h) => h.output(),
            None => self.branches[0].output(),
        }
    }
}

/// Gradients in the order of [`Network::params_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrad>,
}

impl NetGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}

impl Network {
    pub fn new(branches: Vec<Sequential>, head: Option<Sequential>) -> Result<Self> {
        let net = Self { branches, head };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::Config("network without branches".into()));
        }
        for b in &self.branches {
            b.validate()?;
        }
        match &self.head {
            Some(h) => {
                h.validate()?;
                let width: usize = self.branches.iter().map(Sequential::out_dim).sum();
                if h.in_dim() != width {
                    return Err(Error::dim("head input width", width, h.in_dim()));
                }
            }
            None if self.branches.len() != 1 => {
                return Err(Error::Config("several branches need a head to join them".into()));
            }
            None => {}
        }
        Ok(())
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.branches.iter().map(Sequential::in_dim).collect()
    }

    pub fn out_dim(&self) -> usize {
        match &self.head {
            Some(h) => h.out_dim(),
            None => self.branches[0].out_dim(),
        }
    }

    fn chains(&self) -> impl Iterator<Item = &Sequential> {
        self.branches.iter().chain(self.head.iter())
    }

    pub fn n_params(&self) -> usize {
        self.chains()
            .flat_map(|c| &c.layers)
            .map(|l| match &l.params {
                LayerParams::Dense { weight, bias } => weight.len() + bias.len(),
                LayerParams::BatchNorm { gamma, beta, .. } => gamma.len() + beta.len(),
                LayerParams::None => 0,
            })
            .sum()
    }

    pub fn forward(&self, inputs: &[ArrayView2<f64>], mode: &mut Mode) -> Result<NetTrace> {
        if inputs.len() != self.branches.len() {
            return Err(Error::dim("network inputs", self.branches.len(), inputs.len()));
        }
        let batch = inputs[0].nrows();
        let mut traces = Vec::with_capacity(inputs.len());
        for (b, x) in self.branches.iter().zip(inputs) {
            if x.nrows() != batch {
                return Err(Error::dim("branch batch size", batch, x.nrows()));
            }
            traces.push(b.forward(x.view(), mode)?);
        }
        let head = match &self.head {
            Some(h) => {
                let views: Vec<_> = traces.iter().map(|t| t.output().view()).collect();
                let joined = concatenate(Axis(1), &views).expect("equal batch sizes");
                Some(h.forward(joined.view(), mode)?)
            }
            None => None,
        };
        Ok(NetTrace { branches: traces, head })
    }

    pub fn predict(&self, inputs: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
        Ok(self.forward(inputs, &mut Mode::Eval)?.output().clone())
    }

    pub fn backward(&self, trace: &NetTrace, grad_out: &Array2<f64>) -> Result<NetGrads> {
        let mut head_grads = Vec::new();
        let branch_out: Vec<Array2<f64>> = match (&self.head, &trace.head) {
            (Some(h), Some(ht)) => {
                let (g, grads) = h.backward(ht, grad_out)?;
                head_grads = grads;
                let mut start = 0;
                self.branches
                    .iter()
                    .map(|b| {
                        let w = b.out_dim();
                        let part = g.slice(s![.., start..start + w]).to_owned();
                        start += w;
                        part
                    })
                    .collect()
            }
            (None, None) => vec![grad_out.clone()],
            _ => return Err(Error::InvalidInput("trace does not belong to this network".into())),
        };
        let mut layers = Vec::new();
        for ((b, t), g) in self.branches.iter().zip(&trace.branches).zip(&branch_out) {
            layers.extend(b.backward(t, g)?.1);
        }
        layers.extend(head_grads);
        Ok(NetGrads { layers })
    }

    pub fn commit_running_stats(&mut self, trace: &NetTrace) {
        for (b, t) in self.branches.iter_mut().zip(&trace.branches) {
            b.commit_running_stats(t);
        }
        if let (Some(h), Some(t)) = (&mut self.head, &trace.head) {
            h.commit_running_stats(t);
        }
    }

    /// Trainable tensors: per layer weight then bias, or scale then shift.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for b in &mut self.branches {
            out.extend(b.tensors_mut());
        }
        if let Some(h) = &mut self.head {
            out.extend(h.tensors_mut());
        }
        out
    }

    pub fn param_sizes(&mut self) -> Vec<usize> {
        self.params_mut().iter().map(|t| t.len()).collect()
    }

    /// Batch-1 eval inference; see [`Sequential::infer`].
    pub fn infer_one(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        if inputs.len() != self.branches.len() {
            return Err(Error::dim("network inputs", self.branches.len(), inputs.len()));
        }
        let mut joined = Vec::new();
        let mut buf = Vec::new();
        for (b, x) in self.branches.iter().zip(inputs) {
            b.infer(x, &mut buf)?;
            joined.extend_from_slice(&buf);
        }
        match &self.head {
            Some(h) => {
                h.infer(&joined, &mut buf)?;
                Ok(buf)
            }
            None => Ok(joined),
        }
    }
}

/// Mean of squared differences over every sample and output, and its gradient
/// `2 (pred - label) / count`.
pub fn mse_loss(pred: &Array2<f64>, label: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != label.dim() {
        return Err(Error::InvalidInput(format!("prediction {:?} vs label {:?}", pred.dim(), label.dim())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let n = pred.len() as f64;
    let diff = pred - label;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}
