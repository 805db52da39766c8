//! Fully connected regressor with hand-rolled reverse-mode gradients.
//!
//! The network maps unit-square coordinates to one normalized RSSI value
//! through `hidden_layers` dense ReLU layers of `width` neurons with
//! inverted dropout, followed by a linear output layer. Forward and backward
//! passes are batched: a whole set of evaluation points moves through each
//! layer as one matrix product, which is what keeps full-batch training with
//! a five-point stencil per observation inside the runtime budget.
//!
//! Gradients are exact reverse-mode derivatives of a scalar loss supplied by
//! the caller as a function of the network outputs; dropout masks are drawn
//! once per gradient evaluation and held fixed through the backward pass.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation tag for the hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// Architecture and optimizer constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub output_dim: usize,
    pub learning_rate: f64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden_layers: 3,
            width: 304,
            activation: Activation::Relu,
            dropout_rate: 0.2,
            output_dim: 1,
            learning_rate: 0.00369,
        }
    }
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 || self.output_dim == 0 || self.hidden_layers == 0
        {
            return Err(Error::InvalidParameter(
                "network dimensions must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidParameter(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for each dense layer, hidden layers first, output last.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.width));
            fan_in = self.width;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }
}

/// One dense layer; weights stored `(fan_in, fan_out)` so a batch forward is
/// `x.dot(w) + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Network parameters plus their spec.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

/// Per-point forward mode.
#[derive(Debug, Clone, Copy)]
pub enum ForwardMode {
    /// No dropout, fully deterministic.
    Eval,
    /// Inverted dropout with masks drawn from the given seed.
    Train { dropout_seed: u64 },
}

/// Inverted-dropout masks for one batch: entries are `0` or `1 / keep_prob`,
/// one matrix per hidden layer.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    per_layer: Vec<Array2<f64>>,
}

impl DropoutMasks {
    pub fn batch_size(&self) -> usize {
        self.per_layer.first().map_or(0, |m| m.nrows())
    }
}

/// Cached activations from a batch forward pass, consumed by the backward pass.
#[derive(Debug)]
pub struct BatchTrace {
    /// Layer inputs: `acts[0]` is the batch input, `acts[l]` the (dropped-out)
    /// output of hidden layer `l - 1`.
    acts: Vec<Array2<f64>>,
    /// d(activation)/d(pre-activation) per hidden layer: ReLU gate times the
    /// dropout scale.
    act_derivs: Vec<Array2<f64>>,
    out: Array2<f64>,
}

impl BatchTrace {
    /// Network outputs, `(batch, output_dim)`.
    pub fn outputs(&self) -> &Array2<f64> {
        &self.out
    }

    /// Convenience column view for scalar-output networks.
    pub fn output_column(&self) -> Array1<f64> {
        self.out.column(0).to_owned()
    }
}

/// Parameter gradients, mirroring the model's layer shapes.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub layers: Vec<Layer>,
}

impl MlpGradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer {
                    w: Array2::zeros(l.w.dim()),
                    b: Array1::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
    }

    pub fn as_flat(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.w.iter());
        out.extend(l.b.iter());
    }
    out
}

impl MlpModel {
    /// He-uniform initialization: weights from `U(-sqrt(6/fan_in), +sqrt(6/fan_in))`
    /// (variance `2 / fan_in`), biases zero. Deterministic per seed.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_dims()
            .iter()
            .map(|&(fan_in, fan_out)| {
                let limit = (6.0 / fan_in as f64).sqrt();
                let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                    limit * (2.0 * rng.gen::<f64>() - 1.0)
                });
                Layer {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Builds a model from explicit layers, checking shapes against the spec.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if layers.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} layers provided, spec wants {}",
                layers.len(),
                dims.len()
            )));
        }
        for (l, &(fan_in, fan_out)) in layers.iter().zip(&dims) {
            if l.w.dim() != (fan_in, fan_out) || l.b.len() != fan_out {
                return Err(Error::ShapeMismatch(format!(
                    "layer shape {:?}/{} does not match ({fan_in}, {fan_out})",
                    l.w.dim(),
                    l.b.len()
                )));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in a fixed flat order: per layer, weights row-major then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.n_params()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = flat[off];
                off += 1;
            }
            for v in l.b.iter_mut() {
                *v = flat[off];
                off += 1;
            }
        }
        Ok(())
    }

    pub fn validate_finite(&self) -> Result<()> {
        for (idx, l) in self.layers.iter().enumerate() {
            if l.w.iter().any(|v| !v.is_finite()) || l.b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of layer {idx}")));
            }
        }
        Ok(())
    }

    /// Draws inverted-dropout masks for a batch. A zero dropout rate yields
    /// all-ones masks without consuming randomness.
    pub fn draw_masks(&self, batch: usize, rng: &mut ChaCha8Rng) -> DropoutMasks {
        let rate = self.spec.dropout_rate;
        let keep = 1.0 - rate;
        let per_layer = (0..self.spec.hidden_layers)
            .map(|_| {
                if rate == 0.0 {
                    Array2::ones((batch, self.spec.width))
                } else {
                    Array2::from_shape_fn((batch, self.spec.width), |_| {
                        if rng.gen::<f64>() < rate {
                            0.0
                        } else {
                            1.0 / keep
                        }
                    })
                }
            })
            .collect();
        DropoutMasks { per_layer }
    }

    /// Batch forward pass. `masks = None` is eval mode; `Some` applies the
    /// given inverted-dropout masks to every hidden layer.
    pub fn forward_batch(&self, x: &Array2<f64>, masks: Option<&DropoutMasks>) -> Result<BatchTrace> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, network wants {}",
                x.ncols(),
                self.spec.input_dim
            )));
        }
        if let Some(m) = masks {
            if m.per_layer.len() != self.spec.hidden_layers || m.batch_size() != x.nrows() {
                return Err(Error::ShapeMismatch(
                    "dropout masks do not match batch/layers".into(),
                ));
            }
        }
        let batch = x.nrows();
        let mut acts = Vec::with_capacity(self.spec.hidden_layers + 1);
        let mut act_derivs = Vec::with_capacity(self.spec.hidden_layers);
        acts.push(x.to_owned());

        for (l, layer) in self.layers[..self.spec.hidden_layers].iter().enumerate() {
            let mut z = acts[l].dot(&layer.w);
            z += &layer.b;
            let mut deriv = Array2::zeros((batch, layer.b.len()));
            // ReLU gate; the comparison also zeroes NaN pre-activations
            ndarray::Zip::from(&mut z).and(&mut deriv).for_each(|zv, dv| {
                if *zv > 0.0 {
                    *dv = 1.0;
                } else {
                    *zv = 0.0;
                }
            });
            if let Some(m) = masks {
                z *= &m.per_layer[l];
                deriv *= &m.per_layer[l];
            }
            act_derivs.push(deriv);
            acts.push(z);
        }

        let last = self.layers.last().expect("at least one layer");
        let mut out = acts[self.spec.hidden_layers].dot(&last.w);
        out += &last.b;
        Ok(BatchTrace {
            acts,
            act_derivs,
            out,
        })
    }

    /// Accumulates parameter gradients for `d_loss/d_outputs` into `grads`.
    pub fn backward_batch(
        &self,
        trace: &BatchTrace,
        d_out: &Array2<f64>,
        grads: &mut MlpGradients,
    ) -> Result<()> {
        if d_out.dim() != trace.out.dim() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} vs outputs {:?}",
                d_out.dim(),
                trace.out.dim()
            )));
        }
        let h = self.spec.hidden_layers;
        let out_layer = &self.layers[h];

        grads.layers[h]
            .w
            .scaled_add(1.0, &trace.acts[h].t().dot(d_out));
        grads.layers[h].b.scaled_add(1.0, &d_out.sum_axis(Axis(0)));

        let mut d_act = d_out.dot(&out_layer.w.t());
        for l in (0..h).rev() {
            let d_z = &d_act * &trace.act_derivs[l];
            grads.layers[l]
                .w
                .scaled_add(1.0, &trace.acts[l].t().dot(&d_z));
            grads.layers[l].b.scaled_add(1.0, &d_z.sum_axis(Axis(0)));
            if l > 0 {
                d_act = d_z.dot(&self.layers[l].w.t());
            }
        }
        Ok(())
    }

    /// Single-point forward pass with parameter validation; the spec-level
    /// entry point for ad-hoc evaluation.
    pub fn forward(&self, x: f64, y: f64, mode: ForwardMode) -> Result<f64> {
        self.validate_finite()?;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::NonFinite("network input".into()));
        }
        let input = Array2::from_shape_vec((1, 2), vec![x, y])
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let trace = match mode {
            ForwardMode::Eval => self.forward_batch(&input, None)?,
            ForwardMode::Train { dropout_seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
                let masks = self.draw_masks(1, &mut rng);
                self.forward_batch(&input, Some(&masks))?
            }
        };
        Ok(trace.out[[0, 0]])
    }

    /// Eval-mode outputs at many points, `(n, input_dim)` in, length-n out.
    pub fn eval_batch(&self, points: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.forward_batch(points, None)?.out.column(0).to_vec())
    }
}

/// One forward group inside a gradient evaluation.
#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub points: Array2<f64>,
    pub mode: ForwardMode,
}

/// Exact reverse-mode gradient of a scalar loss defined over network outputs.
///
/// `loss_fn` receives one output matrix per request and returns the loss with
/// its partial derivatives w.r.t. every output entry. Dropout masks for
/// train-mode requests are drawn from their seeds and held fixed, so the
/// returned gradient is the exact derivative of the masked network.
pub fn grad<F>(model: &MlpModel, requests: &[EvalRequest], loss_fn: F) -> Result<(f64, MlpGradients)>
where
    F: FnOnce(&[Array2<f64>]) -> (f64, Vec<Array2<f64>>),
{
    model.validate_finite()?;
    let mut traces = Vec::with_capacity(requests.len());
    for req in requests {
        let trace = match req.mode {
            ForwardMode::Eval => model.forward_batch(&req.points, None)?,
            ForwardMode::Train { dropout_seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
                let masks = model.draw_masks(req.points.nrows(), &mut rng);
                model.forward_batch(&req.points, Some(&masks))?
            }
        };
        traces.push(trace);
    }
    let outputs: Vec<Array2<f64>> = traces.iter().map(|t| t.out.clone()).collect();
    let (loss, d_outputs) = loss_fn(&outputs);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss value {loss}")));
    }
    if d_outputs.len() != traces.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} output gradients for {} requests",
            d_outputs.len(),
            traces.len()
        )));
    }
    let mut grads = MlpGradients::zeros_like(model);
    for (trace, d_out) in traces.iter().zip(&d_outputs) {
        model.backward_batch(trace, d_out, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Adam moment accumulators over the flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_model(model: &MlpModel) -> Self {
        Self::new(model.n_params())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over flat parameter/gradient slices.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam state holds {} parameters, got {}/{}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Applies one Adam step to the model from accumulated gradients.
pub fn adam_step(
    model: &mut MlpModel,
    grads: &MlpGradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.layers.len() != model.layers.len() {
        return Err(Error::ShapeMismatch("gradient layer count".into()));
    }
    for (l, g) in model.layers.iter().zip(&grads.layers) {
        if l.w.dim() != g.w.dim() || l.b.len() != g.b.len() {
            return Err(Error::ShapeMismatch("gradient layer shapes".into()));
        }
    }
    let mut params = model.params_flat();
    let flat_grads = grads.as_flat();
    state.update(&mut params, &flat_grads, lr)?;
    model.set_params_flat(&params)
}
