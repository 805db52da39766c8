//! Physics-constrained training.
//!
//! The trainer minimizes
//!
//! ```text
//! L_total = (1 - lambda) * L_d + lambda * L_p
//! ```
//!
//! where `L_d` is the mean squared data error at the training sensors and
//! `L_p` is the mean squared mismatch between the Laplacian of the network
//! prediction and the Laplacian of the observed field. The mean received
//! power decomposes into a log-distance term, harmonic away from the
//! transmitter, plus shadowing; taking second spatial derivatives cancels
//! the log-distance term, so the field's Laplacian carries exactly the
//! shadowing structure. Matching Laplacians therefore steers the network
//! toward physically consistent spatial variation without knowing the
//! transmitter at all.
//!
//! Two discrete estimators feed the physics term:
//!
//! * the network's Laplacian via a five-point central stencil on eval-mode
//!   forwards (ReLU second derivatives vanish almost everywhere, so an
//!   autodiff Laplacian would be identically zero; the stencil measures
//!   curvature at the grid's own resolution instead), falling back to a
//!   second-order one-sided stencil within one step of the domain edge;
//! * the observations' Laplacian via a moving-least-squares quadratic fit
//!   over the nearest sensors.
//!
//! Everything operates in unit-square coordinates with targets standardized
//! to the training set; predictions denormalize on the way out.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};
use crate::mlp::{adam_step, AdamState, DropoutMasks, MlpGradients, MlpModel};
use crate::scene::{ObservationSet, Scene};

/// Weighting and schedule of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Physics weight in `[0, 1]`; 0 is the plain data-driven network.
    pub lambda: f64,
    /// Stencil step in normalized coordinates; `None` uses one grid cell pitch.
    pub stencil_h: Option<f64>,
    /// Neighbors in the moving-least-squares Laplacian fit (>= 6).
    pub mls_neighbors: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Minimum decrease of the validation data loss that counts as improvement.
    pub tolerance: f64,
    pub early_stopping: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            stencil_h: None,
            mls_neighbors: 8,
            epochs: 2000,
            patience: 150,
            tolerance: 1e-6,
            early_stopping: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if let Some(h) = self.stencil_h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "stencil step {h} must be positive"
                )));
            }
        }
        if self.mls_neighbors < 6 {
            return Err(Error::InvalidParameter(format!(
                "mls neighborhood {} below the 6 coefficients of a 2-D quadratic",
                self.mls_neighbors
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epoch budget must be positive".into()));
        }
        Ok(())
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }
}

/// Discrete Laplacian estimate with a flag for edge handling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilValue {
    pub value: f64,
    /// True when at least one axis used the one-sided variant.
    pub one_sided: bool,
}

/// Five-point central-stencil Laplacian of `f` at `(x, y)` with step `h`.
pub fn fd_laplacian<F: FnMut(f64, f64) -> f64>(mut f: F, x: f64, y: f64, h: f64) -> Result<StencilValue> {
    let v = (f(x + h, y) + f(x - h, y) + f(x, y + h) + f(x, y - h) - 4.0 * f(x, y)) / (h * h);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("stencil at ({x}, {y})")));
    }
    Ok(StencilValue {
        value: v,
        one_sided: false,
    })
}

/// Laplacian of `f` at `(x, y)` inside `[lo, hi]^2`, switching to a
/// second-order one-sided second-derivative stencil on axes within one step
/// of the boundary.
pub fn fd_laplacian_bounded<F: FnMut(f64, f64) -> f64>(
    mut f: F,
    x: f64,
    y: f64,
    h: f64,
    lo: f64,
    hi: f64,
) -> Result<StencilValue> {
    let plan = stencil_plan(x, y, h, lo, hi)?;
    let v: f64 = plan
        .nodes
        .iter()
        .map(|&(px, py, c)| c * f(px, py))
        .sum::<f64>();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("stencil at ({x}, {y})")));
    }
    Ok(StencilValue {
        value: v,
        one_sided: plan.one_sided,
    })
}

/// Evaluation nodes and coefficients of one Laplacian stencil; coefficients
/// already include the `1/h^2` factor.
#[derive(Debug, Clone)]
struct StencilPlan {
    nodes: Vec<(f64, f64, f64)>,
    one_sided: bool,
}

fn stencil_plan(x: f64, y: f64, h: f64, lo: f64, hi: f64) -> Result<StencilPlan> {
    let inv_h2 = 1.0 / (h * h);
    let mut center_coeff = 0.0;
    let mut nodes: Vec<(f64, f64, f64)> = Vec::with_capacity(6);
    let mut one_sided = false;

    for axis in 0..2 {
        let pos = if axis == 0 { x } else { y };
        let make = |q: f64| if axis == 0 { (q, y) } else { (x, q) };
        if pos - h >= lo && pos + h <= hi {
            center_coeff += -2.0 * inv_h2;
            for q in [pos - h, pos + h] {
                let (px, py) = make(q);
                nodes.push((px, py, inv_h2));
            }
        } else {
            let dir = if pos + 3.0 * h <= hi {
                1.0
            } else if pos - 3.0 * h >= lo {
                -1.0
            } else {
                return Err(Error::InvalidParameter(format!(
                    "stencil step {h} does not fit the domain at coordinate {pos}"
                )));
            };
            one_sided = true;
            center_coeff += 2.0 * inv_h2;
            for (steps, c) in [(1.0, -5.0), (2.0, 4.0), (3.0, -1.0)] {
                let (px, py) = make(pos + dir * steps * h);
                nodes.push((px, py, c * inv_h2));
            }
        }
    }
    nodes.insert(0, (x, y, center_coeff));
    Ok(StencilPlan { nodes, one_sided })
}

/// Laplacian of the observed field at `p` from a weighted least-squares fit
/// of a full 2-D quadratic over the `k` nearest samples (Gaussian weights
/// with bandwidth equal to the k-th neighbor distance). Returns
/// `2 * (a_xx + a_yy)` of the fitted surface.
pub fn mls_laplacian(points: &[Point], values: &[f64], p: Point, k: usize) -> Result<f64> {
    if points.len() != values.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points vs {} values",
            points.len(),
            values.len()
        )));
    }
    if k < 6 {
        return Err(Error::InvalidParameter(format!(
            "quadratic fit needs at least 6 neighbors, requested {k}"
        )));
    }
    if points.len() < 6 {
        return Err(Error::InvalidParameter(format!(
            "quadratic fit needs at least 6 samples, got {}",
            points.len()
        )));
    }
    let k = k.min(points.len());

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let da = points[a].distance(&p);
        let db = points[b].distance(&p);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let selected = &order[..k];
    let bandwidth = points[selected[k - 1]].distance(&p);
    if bandwidth == 0.0 {
        return Err(Error::DegenerateNeighborhood(
            "all nearest samples coincide with the query point".into(),
        ));
    }

    // scale offsets by the bandwidth for conditioning; unscale at the end
    let mut a = nalgebra::DMatrix::<f64>::zeros(k, 6);
    let mut rhs = nalgebra::DVector::<f64>::zeros(k);
    for (row, &idx) in selected.iter().enumerate() {
        let u = (points[idx].x - p.x) / bandwidth;
        let v = (points[idx].y - p.y) / bandwidth;
        let d = points[idx].distance(&p) / bandwidth;
        let w = (-d * d).exp().sqrt();
        a[(row, 0)] = w;
        a[(row, 1)] = w * u;
        a[(row, 2)] = w * v;
        a[(row, 3)] = w * u * u;
        a[(row, 4)] = w * v * v;
        a[(row, 5)] = w * u * v;
        rhs[row] = w * values[idx];
    }

    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if !(max_sv > 0.0) || min_sv < 1e-10 * max_sv {
        return Err(Error::DegenerateNeighborhood(
            "sensor layout does not determine a quadratic (collinear or clustered points)".into(),
        ));
    }
    let coeffs = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::SingularSystem(e.to_string()))?;
    Ok(2.0 * (coeffs[3] + coeffs[4]) / (bandwidth * bandwidth))
}

/// [`mls_laplacian`] over an observation set.
pub fn mls_laplacian_obs(obs: &ObservationSet, p: Point, k: usize) -> Result<f64> {
    mls_laplacian(obs.points(), obs.rssi_dbm(), p, k)
}

/// Laplacian targets at the training points, in normalized units, computed
/// once per observation set.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianTargets {
    pub values: Vec<f64>,
}

impl LaplacianTargets {
    /// Moving-least-squares Laplacian of the (normalized) observed field at
    /// every observation point.
    ///
    /// Gridded sensor layouts can put a point's `k` nearest neighbors on two
    /// lines, leaving the quadratic underdetermined; the neighborhood is then
    /// widened one sensor at a time until the fit is identified.
    pub fn from_observations(
        grid: &Grid,
        obs: &ObservationSet,
        scaler: &TargetScaler,
        k: usize,
    ) -> Result<Self> {
        let pts: Vec<Point> = obs.points().iter().map(|p| grid.normalize(*p)).collect();
        let vals: Vec<f64> = obs.rssi_dbm().iter().map(|v| scaler.normalize(*v)).collect();
        let mut values = Vec::with_capacity(pts.len());
        for p in &pts {
            let mut k_try = k.min(pts.len());
            let v = loop {
                match mls_laplacian(&pts, &vals, *p, k_try) {
                    Ok(v) => break v,
                    Err(Error::DegenerateNeighborhood(_)) if k_try < pts.len() => k_try += 1,
                    Err(e) => return Err(e),
                }
            };
            if !v.is_finite() {
                return Err(Error::NonFinite("laplacian target".into()));
            }
            values.push(v);
        }
        Ok(Self { values })
    }
}

/// Affine map between dBm targets and the normalized values the network sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean_dbm: f64,
    pub std_db: f64,
}

impl TargetScaler {
    /// Zero-mean/unit-variance statistics of the training targets; a constant
    /// training set degenerates to a pure shift.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("scaler targets".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Ok(Self {
            mean_dbm: mean,
            std_db: if std > 0.0 { std } else { 1.0 },
        })
    }

    pub fn normalize(&self, dbm: f64) -> f64 {
        (dbm - self.mean_dbm) / self.std_db
    }

    pub fn denormalize(&self, norm: f64) -> f64 {
        self.mean_dbm + norm * self.std_db
    }
}

/// Mean squared data error at the given normalized points/targets.
pub fn data_loss(
    model: &MlpModel,
    points_norm: &Array2<f64>,
    targets_norm: &[f64],
    masks: Option<&DropoutMasks>,
) -> Result<f64> {
    if points_norm.nrows() != targets_norm.len() || targets_norm.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} points vs {} targets",
            points_norm.nrows(),
            targets_norm.len()
        )));
    }
    let trace = model.forward_batch(points_norm, masks)?;
    let out = trace.outputs().column(0);
    let n = targets_norm.len() as f64;
    Ok(out
        .iter()
        .zip(targets_norm)
        .map(|(o, t)| (o - t) * (o - t))
        .sum::<f64>()
        / n)
}

/// Mean squared mismatch between the model's stencil Laplacian and the
/// targets at the given normalized points.
pub fn physics_loss(
    model: &MlpModel,
    points_norm: &[(f64, f64)],
    targets: &LaplacianTargets,
    h: f64,
) -> Result<f64> {
    if points_norm.len() != targets.values.len() || points_norm.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} points vs {} laplacian targets",
            points_norm.len(),
            targets.values.len()
        )));
    }
    let batch = PhysicsBatch::build(points_norm, h)?;
    let outputs = model.eval_batch(&batch.eval_points)?;
    let laplacians = batch.laplacians(&outputs);
    let n = laplacians.len() as f64;
    let loss = laplacians
        .iter()
        .zip(&targets.values)
        .map(|(l, t)| (l - t) * (l - t))
        .sum::<f64>()
        / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("physics loss".into()));
    }
    Ok(loss)
}

/// Concatenated stencil evaluations for a batch of points, so the whole
/// physics term runs as one matrix forward pass.
struct PhysicsBatch {
    eval_points: Array2<f64>,
    /// span of each point's nodes inside `eval_points`/`coeffs`
    spans: Vec<(usize, usize)>,
    coeffs: Vec<f64>,
}

impl PhysicsBatch {
    fn build(points: &[(f64, f64)], h: f64) -> Result<Self> {
        let mut flat = Vec::new();
        let mut spans = Vec::with_capacity(points.len());
        let mut coeffs = Vec::new();
        for &(x, y) in points {
            let plan = stencil_plan(x, y, h, 0.0, 1.0)?;
            let start = coeffs.len();
            for (px, py, c) in plan.nodes {
                flat.push(px);
                flat.push(py);
                coeffs.push(c);
            }
            spans.push((start, coeffs.len() - start));
        }
        let eval_points = Array2::from_shape_vec((coeffs.len(), 2), flat)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(Self {
            eval_points,
            spans,
            coeffs,
        })
    }

    fn laplacians(&self, outputs: &[f64]) -> Vec<f64> {
        self.spans
            .iter()
            .map(|&(start, len)| {
                (start..start + len)
                    .map(|e| self.coeffs[e] * outputs[e])
                    .sum()
            })
            .collect()
    }

    /// Chain rule from per-point Laplacian gradients to per-evaluation output
    /// gradients.
    fn d_outputs(&self, d_laplacians: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.coeffs.len()];
        for (i, &(start, len)) in self.spans.iter().enumerate() {
            for e in start..start + len {
                d[e] = d_laplacians[i] * self.coeffs[e];
            }
        }
        d
    }
}

/// Physics term used by the trainer.
pub enum PhysicsTerm<'a> {
    /// Match the network Laplacian to targets estimated from the observations.
    PdeResidual,
    /// Match the network prediction to a reference field (dBm at metric
    /// points); used by the statistical-model-constrained variants.
    FieldMatch(&'a dyn Fn(Point) -> f64),
}

/// Trained network together with the target scaling that maps its outputs
/// back to dBm.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: MlpModel,
    pub scaler: TargetScaler,
}

/// Per-epoch losses and the stopping point of one training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub data_loss: Vec<f64>,
    /// Recorded as 0 for epochs where `lambda = 0` (the term is not evaluated).
    pub physics_loss: Vec<f64>,
    pub total_loss: Vec<f64>,
    pub val_data_loss: Vec<f64>,
    /// Last epoch actually run, 1-based.
    pub stopped_epoch: usize,
    pub wall_time_s: f64,
}

impl TrainReport {
    /// CSV with columns `epoch,L_d,L_p,L_total,val_L_d`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,L_d,L_p,L_total,val_L_d\n");
        for e in 0..self.total_loss.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e + 1,
                self.data_loss[e],
                self.physics_loss[e],
                self.total_loss[e],
                self.val_data_loss[e]
            ));
        }
        out
    }
}

/// Trains the physics-constrained network on the given observations.
///
/// Full-batch Adam over the composite loss; dropout masks are redrawn every
/// epoch from the training seed; early stopping watches the validation data
/// loss. Deterministic per `(initial model, observations, config, seed)`.
pub fn train(
    m0: MlpModel,
    grid: &Grid,
    obs_train: &ObservationSet,
    obs_val: &ObservationSet,
    cfg: &LossConfig,
    seed: u64,
) -> Result<(TrainedModel, TrainReport)> {
    train_with_physics(m0, grid, obs_train, obs_val, cfg, seed, PhysicsTerm::PdeResidual)
}

/// [`train`] with a caller-chosen physics term.
pub fn train_with_physics(
    m0: MlpModel,
    grid: &Grid,
    obs_train: &ObservationSet,
    obs_val: &ObservationSet,
    cfg: &LossConfig,
    seed: u64,
    physics: PhysicsTerm<'_>,
) -> Result<(TrainedModel, TrainReport)> {
    cfg.validate()?;
    m0.validate_finite()?;
    for p in obs_train.points() {
        for q in obs_val.points() {
            if p == q {
                return Err(Error::InvalidParameter(format!(
                    "training and validation sets share the point ({}, {})",
                    p.x, p.y
                )));
            }
        }
    }

    let start = std::time::Instant::now();
    let lambda = cfg.lambda;
    let n_train = obs_train.len();
    let h = cfg.stencil_h.unwrap_or_else(|| grid.normalized_pitch());

    let scaler = TargetScaler::fit(obs_train.rssi_dbm())?;
    let x_train = normalized_matrix(grid, obs_train.points());
    let y_train: Vec<f64> = obs_train
        .rssi_dbm()
        .iter()
        .map(|v| scaler.normalize(*v))
        .collect();
    let x_val = normalized_matrix(grid, obs_val.points());
    let y_val: Vec<f64> = obs_val
        .rssi_dbm()
        .iter()
        .map(|v| scaler.normalize(*v))
        .collect();

    // physics-side constants, fixed for the whole run
    enum Prepared {
        None,
        Pde {
            batch: PhysicsBatch,
            targets: Vec<f64>,
        },
        Field {
            reference: Vec<f64>,
        },
    }
    let prepared = if lambda == 0.0 {
        Prepared::None
    } else {
        match physics {
            PhysicsTerm::PdeResidual => {
                let targets =
                    LaplacianTargets::from_observations(grid, obs_train, &scaler, cfg.mls_neighbors)?;
                let pts: Vec<(f64, f64)> = obs_train
                    .points()
                    .iter()
                    .map(|p| {
                        let q = grid.normalize(*p);
                        (q.x, q.y)
                    })
                    .collect();
                Prepared::Pde {
                    batch: PhysicsBatch::build(&pts, h)?,
                    targets: targets.values,
                }
            }
            PhysicsTerm::FieldMatch(f) => Prepared::Field {
                reference: obs_train
                    .points()
                    .iter()
                    .map(|p| scaler.normalize(f(*p)))
                    .collect(),
            },
        }
    };

    let mut model = m0;
    let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::for_model(&model);
    let lr = model.spec().learning_rate;
    let mut grads = MlpGradients::zeros_like(&model);

    let mut report = TrainReport {
        data_loss: Vec::with_capacity(cfg.epochs),
        physics_loss: Vec::with_capacity(cfg.epochs),
        total_loss: Vec::with_capacity(cfg.epochs),
        val_data_loss: Vec::with_capacity(cfg.epochs),
        stopped_epoch: 0,
        wall_time_s: 0.0,
    };
    let mut best_val = f64::INFINITY;
    let mut stale_epochs = 0usize;

    for epoch in 1..=cfg.epochs {
        let masks = model.draw_masks(n_train, &mut mask_rng);
        let trace_d = model.forward_batch(&x_train, Some(&masks))?;
        let residuals: Vec<f64> = trace_d
            .outputs()
            .column(0)
            .iter()
            .zip(&y_train)
            .map(|(o, t)| o - t)
            .collect();
        let l_d = residuals.iter().map(|r| r * r).sum::<f64>() / n_train as f64;

        let mut physics_backward: Option<(crate::mlp::BatchTrace, Array2<f64>)> = None;
        let l_p = match &prepared {
            Prepared::None => 0.0,
            Prepared::Pde { batch, targets } => {
                let trace_p = model.forward_batch(&batch.eval_points, None)?;
                let outputs: Vec<f64> = trace_p.outputs().column(0).to_vec();
                let laplacians = batch.laplacians(&outputs);
                let diffs: Vec<f64> = laplacians
                    .iter()
                    .zip(targets)
                    .map(|(l, t)| l - t)
                    .collect();
                let l_p = diffs.iter().map(|d| d * d).sum::<f64>() / n_train as f64;
                let d_lap: Vec<f64> = diffs
                    .iter()
                    .map(|d| lambda * 2.0 * d / n_train as f64)
                    .collect();
                let d_out = batch.d_outputs(&d_lap);
                let d_out = Array2::from_shape_vec((d_out.len(), 1), d_out)
                    .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
                physics_backward = Some((trace_p, d_out));
                l_p
            }
            Prepared::Field { reference } => {
                let trace_p = model.forward_batch(&x_train, None)?;
                let diffs: Vec<f64> = trace_p
                    .outputs()
                    .column(0)
                    .iter()
                    .zip(reference)
                    .map(|(o, t)| o - t)
                    .collect();
                let l_p = diffs.iter().map(|d| d * d).sum::<f64>() / n_train as f64;
                let d_out = Array2::from_shape_vec(
                    (diffs.len(), 1),
                    diffs
                        .iter()
                        .map(|d| lambda * 2.0 * d / n_train as f64)
                        .collect(),
                )
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
                physics_backward = Some((trace_p, d_out));
                l_p
            }
        };

        let l_total = (1.0 - lambda) * l_d + lambda * l_p;
        if !l_total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: format!("L_d = {l_d}, L_p = {l_p}"),
            });
        }

        grads.zero();
        if lambda < 1.0 {
            let d_data = Array2::from_shape_vec(
                (n_train, 1),
                residuals
                    .iter()
                    .map(|r| (1.0 - lambda) * 2.0 * r / n_train as f64)
                    .collect(),
            )
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            model.backward_batch(&trace_d, &d_data, &mut grads)?;
        }
        if let Some((trace_p, d_out)) = &physics_backward {
            model.backward_batch(trace_p, d_out, &mut grads)?;
        }
        adam_step(&mut model, &grads, &mut adam, lr)?;

        let val_out = model.eval_batch(&x_val)?;
        let val_l_d = val_out
            .iter()
            .zip(&y_val)
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>()
            / y_val.len() as f64;
        if !val_l_d.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: format!("validation loss {val_l_d}"),
            });
        }

        report.data_loss.push(l_d);
        report.physics_loss.push(l_p);
        report.total_loss.push(l_total);
        report.val_data_loss.push(val_l_d);
        report.stopped_epoch = epoch;

        if cfg.early_stopping {
            if val_l_d < best_val - cfg.tolerance {
                best_val = val_l_d;
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= cfg.patience {
                    break;
                }
            }
        }
    }

    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((TrainedModel { model, scaler }, report))
}

fn normalized_matrix(grid: &Grid, points: &[Point]) -> Array2<f64> {
    let mut flat = Vec::with_capacity(points.len() * 2);
    for p in points {
        let q = grid.normalize(*p);
        flat.push(q.x);
        flat.push(q.y);
    }
    Array2::from_shape_vec((points.len(), 2), flat).expect("consistent shape")
}

/// Predicted RSSI over a grid, with an optional per-cell absolute error
/// layer against a known truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RemMap {
    grid: Grid,
    values_dbm: Vec<f64>,
    abs_err_db: Option<Vec<f64>>,
}

impl RemMap {
    pub fn new(grid: Grid, values_dbm: Vec<f64>) -> Result<Self> {
        if values_dbm.len() != grid.n_cells() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} cells",
                values_dbm.len(),
                grid.n_cells()
            )));
        }
        if values_dbm.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rem map values".into()));
        }
        Ok(Self {
            grid,
            values_dbm,
            abs_err_db: None,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values_dbm(&self) -> &[f64] {
        &self.values_dbm
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values_dbm[self.grid.cell_index(i, j)]
    }

    pub fn abs_err_db(&self) -> Option<&[f64]> {
        self.abs_err_db.as_deref()
    }

    /// Attaches `|prediction - truth|` per cell.
    pub fn with_abs_error(mut self, scene: &Scene) -> Result<Self> {
        if scene.grid() != &self.grid {
            return Err(Error::GridMismatch("error layer grid".into()));
        }
        self.abs_err_db = Some(
            self.values_dbm
                .iter()
                .zip(scene.truth_dbm())
                .map(|(p, t)| (p - t).abs())
                .collect(),
        );
        Ok(self)
    }

    pub fn set_abs_error_from(&mut self, truth: &[f64]) -> Result<()> {
        if truth.len() != self.values_dbm.len() {
            return Err(Error::ShapeMismatch("error layer length".into()));
        }
        self.abs_err_db = Some(
            self.values_dbm
                .iter()
                .zip(truth)
                .map(|(p, t)| (p - t).abs())
                .collect(),
        );
        Ok(())
    }
}

/// Eval-mode prediction at every cell center, denormalized to dBm.
pub fn predict_rem(trained: &TrainedModel, grid: &Grid) -> Result<RemMap> {
    let centers = grid.cell_centers();
    let x = normalized_matrix(grid, &centers);
    let out = trained.model.eval_batch(&x)?;
    let values = out.iter().map(|o| trained.scaler.denormalize(*o)).collect();
    RemMap::new(*grid, values)
}

/// Eval-mode prediction at arbitrary metric points, denormalized to dBm.
pub fn predict_at_points(trained: &TrainedModel, grid: &Grid, points: &[Point]) -> Result<Vec<f64>> {
    let x = normalized_matrix(grid, points);
    let out = trained.model.eval_batch(&x)?;
    Ok(out.iter().map(|o| trained.scaler.denormalize(*o)).collect())
}
