//! Dense feedforward classifier: forward pass with optional inverted
//! dropout, softmax cross-entropy, exact backpropagation of the weighted
//! empirical risk, and SGD/Adam parameter updates.
//!
//! Everything is double precision and a pure function of explicit inputs
//! plus explicit seeds; evaluation mode is deterministic by contract so
//! that weight estimation can treat the current model as fixed.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// One affine layer; `weights` is `[out x in]`, `bias` is `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn zeros_like(&self) -> DenseLayer {
        DenseLayer {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn all_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite()) && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Layered dense parameters plus the optimizer step counter that indexes
/// parameter snapshots over training time.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub step_count: u64,
}

impl NetworkParams {
    /// Seeded init: weights uniform on `±sqrt(6 / fan_in)`, biases zero.
    pub fn init(dims: &[usize], activation: Activation, dropout_rate: f64, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(
                "network needs at least an input and an output dimension".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-limit..limit));
                DenseLayer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(NetworkParams {
            layers,
            activation,
            dropout_rate,
            step_count: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("network has layers").out_dim()
    }

    /// Width of the penultimate layer, the hidden-feature dimension.
    pub fn penultimate_dim(&self) -> Result<usize> {
        if self.layers.len() < 2 {
            return Err(Error::Config(
                "hidden features need a network with at least two layers".into(),
            ));
        }
        Ok(self.layers[self.layers.len() - 2].out_dim())
    }

    /// Checks that consecutive layer dimensions chain and entries are finite.
    pub fn validate(&self) -> Result<()> {
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Config(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    i,
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if !layer.all_finite() {
                return Err(Error::Numeric(format!("nonfinite parameter in layer {i}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Evaluation,
}

/// Per-layer intermediates of one forward pass, consumed by backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: Mode,
    /// Input actually fed to layer `l` (post-dropout for hidden layers).
    pub layer_inputs: Vec<Array2<f64>>,
    /// Pre-activation `z_l` of layer `l`.
    pub pre_activations: Vec<Array2<f64>>,
    /// Inverted-dropout mask applied after hidden layer `l` (training mode
    /// with a positive rate only; identity otherwise).
    pub dropout_masks: Vec<Option<Array2<f64>>>,
}

/// Runs the network on a batch; returns logits and the cache for backprop.
///
/// Evaluation mode is deterministic: equal params and inputs produce
/// bit-identical logits. Training mode applies inverted dropout seeded by
/// `rng_seed`.
pub fn forward(
    params: &NetworkParams,
    inputs: &Array2<f64>,
    mode: Mode,
    rng_seed: u64,
) -> Result<(Array2<f64>, ForwardCache)> {
    if inputs.ncols() != params.input_dim() {
        return Err(Error::Config(format!(
            "input width {} does not match first layer width {}",
            inputs.ncols(),
            params.input_dim()
        )));
    }
    let num_layers = params.layers.len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut layer_inputs = Vec::with_capacity(num_layers);
    let mut pre_activations = Vec::with_capacity(num_layers);
    let mut dropout_masks = Vec::with_capacity(num_layers.saturating_sub(1));

    let mut current = inputs.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let z = current.dot(&layer.weights.t()) + &layer.bias;
        layer_inputs.push(current);
        if l + 1 == num_layers {
            pre_activations.push(z.clone());
            current = z;
        } else {
            let mut activated = z.mapv(|v| params.activation.apply(v));
            let mask = if mode == Mode::Training && params.dropout_rate > 0.0 {
                let keep = 1.0 - params.dropout_rate;
                let mask = Array2::from_shape_fn(activated.raw_dim(), |_| {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                activated *= &mask;
                Some(mask)
            } else {
                None
            };
            pre_activations.push(z);
            dropout_masks.push(mask);
            current = activated;
        }
    }
    let logits = current;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("forward pass produced nonfinite logits".into()));
    }
    Ok((
        logits,
        ForwardCache {
            mode,
            layer_inputs,
            pre_activations,
            dropout_masks,
        },
    ))
}

/// Per-example nonnegative surrogate losses for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossVector(pub Vec<f64>);

impl LossVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }
}

/// Row-wise softmax with max-subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// `loss_i = -log softmax(logits_i)[labels_i]`, stable under large logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<LossVector> {
    let (n, k) = (logits.nrows(), logits.ncols());
    if labels.len() != n {
        return Err(Error::Input(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    let mut losses = Vec::with_capacity(n);
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        if label >= k {
            return Err(Error::Input(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum_exp = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        losses.push(log_sum_exp - row[label]);
    }
    Ok(LossVector(losses))
}

/// The weighted empirical risk `(1/n) sum_i w_i * loss_i`.
pub fn weighted_risk(losses: &LossVector, weights: &[f64]) -> f64 {
    assert_eq!(losses.len(), weights.len(), "loss/weight length mismatch");
    losses
        .values()
        .iter()
        .zip(weights)
        .map(|(&l, &w)| w * l)
        .sum::<f64>()
        / losses.len() as f64
}

/// Gradients matching the layer shapes of a `NetworkParams`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

/// Backpropagates the weighted mean cross-entropy `(1/n) sum_i w_i loss_i`.
///
/// Weights are treated as constants: no gradient flows into them.
pub fn backward_weighted(
    params: &NetworkParams,
    cache: &ForwardCache,
    labels: &[usize],
    weights: &[f64],
) -> Result<Gradients> {
    let num_layers = params.layers.len();
    if cache.pre_activations.len() != num_layers || cache.layer_inputs.len() != num_layers {
        return Err(Error::Internal(
            "forward cache does not match network depth".into(),
        ));
    }
    let logits = &cache.pre_activations[num_layers - 1];
    let (n, k) = (logits.nrows(), logits.ncols());
    if labels.len() != n || weights.len() != n {
        return Err(Error::Input(format!(
            "batch size {n} but {} labels and {} weights",
            labels.len(),
            weights.len()
        )));
    }
    if labels.iter().any(|&y| y >= k) {
        return Err(Error::Input(format!("label out of range for {k} classes")));
    }

    // d(risk)/d(logits_i) = (w_i / n) * (softmax_i - onehot(y_i))
    let mut delta = softmax_rows(logits);
    for (i, mut row) in delta.rows_mut().into_iter().enumerate() {
        row[labels[i]] -= 1.0;
        let scale = weights[i] / n as f64;
        row.mapv_inplace(|v| v * scale);
    }

    let mut grads: Vec<DenseLayer> = params.layers.iter().map(|l| l.zeros_like()).collect();
    for l in (0..num_layers).rev() {
        grads[l].weights = delta.t().dot(&cache.layer_inputs[l]);
        grads[l].bias = delta.sum_axis(Axis(0));
        if l == 0 {
            break;
        }
        let mut upstream = delta.dot(&params.layers[l].weights);
        if let Some(mask) = &cache.dropout_masks[l - 1] {
            upstream *= mask;
        }
        let z = &cache.pre_activations[l - 1];
        delta = upstream * z.mapv(|v| params.activation.derivative(v));
    }
    Ok(Gradients { layers: grads })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerHyper {
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerHyper {
    pub fn new(learning_rate: f64) -> Self {
        OptimizerHyper {
            learning_rate,
            weight_decay: 0.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

/// Adam moment estimates; unused (but kept zeroed) for plain SGD.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    first_moment: Vec<DenseLayer>,
    second_moment: Vec<DenseLayer>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &NetworkParams) -> Self {
        OptimizerState {
            first_moment: params.layers.iter().map(|l| l.zeros_like()).collect(),
            second_moment: params.layers.iter().map(|l| l.zeros_like()).collect(),
            step: 0,
        }
    }
}

/// One SGD or Adam update in place.
///
/// SGD: `p <- p - lr * (g + decay * p)`. Adam: bias-corrected moments on the
/// decay-augmented gradient with the usual `(0.9, 0.999, 1e-8)` defaults.
pub fn optimizer_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    kind: OptimizerKind,
    hyper: &OptimizerHyper,
) -> Result<()> {
    if grads.layers.len() != params.layers.len() {
        return Err(Error::Internal("gradient/parameter layer count mismatch".into()));
    }
    for (i, g) in grads.layers.iter().enumerate() {
        if !g.all_finite() {
            return Err(Error::Numeric(format!("nonfinite gradient in layer {i}")));
        }
        if g.weights.raw_dim() != params.layers[i].weights.raw_dim()
            || g.bias.raw_dim() != params.layers[i].bias.raw_dim()
        {
            return Err(Error::Internal(format!(
                "gradient shape mismatch in layer {i}"
            )));
        }
    }

    match kind {
        OptimizerKind::Sgd => {
            for (layer, g) in params.layers.iter_mut().zip(&grads.layers) {
                ndarray::Zip::from(&mut layer.weights)
                    .and(&g.weights)
                    .for_each(|p, &gr| *p -= hyper.learning_rate * (gr + hyper.weight_decay * *p));
                ndarray::Zip::from(&mut layer.bias)
                    .and(&g.bias)
                    .for_each(|p, &gr| *p -= hyper.learning_rate * (gr + hyper.weight_decay * *p));
            }
        }
        OptimizerKind::Adam => {
            state.step += 1;
            let t = state.step as i32;
            let bc1 = 1.0 - hyper.beta1.powi(t);
            let bc2 = 1.0 - hyper.beta2.powi(t);
            for (((layer, g), m), v) in params
                .layers
                .iter_mut()
                .zip(&grads.layers)
                .zip(&mut state.first_moment)
                .zip(&mut state.second_moment)
            {
                let update = |p: &mut f64, gr: f64, m: &mut f64, v: &mut f64| {
                    let gr = gr + hyper.weight_decay * *p;
                    *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * gr;
                    *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * gr * gr;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
                };
                ndarray::Zip::from(&mut layer.weights)
                    .and(&g.weights)
                    .and(&mut m.weights)
                    .and(&mut v.weights)
                    .for_each(|p, &gr, m, v| update(p, gr, m, v));
                ndarray::Zip::from(&mut layer.bias)
                    .and(&g.bias)
                    .and(&mut m.bias)
                    .and(&mut v.bias)
                    .for_each(|p, &gr, m, v| update(p, gr, m, v));
            }
        }
    }
    params.step_count += 1;
    Ok(())
}

/// Penultimate-layer activations in evaluation mode.
pub fn hidden_features(params: &NetworkParams, inputs: &Array2<f64>) -> Result<Array2<f64>> {
    params.penultimate_dim()?;
    let (_, cache) = forward(params, inputs, Mode::Evaluation, 0)?;
    Ok(cache
        .layer_inputs
        .last()
        .expect("network has layers")
        .clone())
}
