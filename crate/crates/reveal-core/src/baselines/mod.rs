//! Comparison methods: statistical path loss models, ordinary Kriging, the
//! plain data-driven network, and the variants whose physics term regresses
//! onto a statistical model instead of the observed field's Laplacian.
//!
//! Every baseline consumes the same observation set and grid and emits the
//! same map type, so one harness scores them all side by side.

pub mod kriging;
pub mod statmodel;

pub use kriging::{fit_variogram, kriging_predict, kriging_rem, KrigingSystem, Variogram, VariogramModel};
pub use statmodel::{pl_3gpp_rma, pl_itu_rma, PathLossValue, Scenario, StatModelParams};

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};
use crate::mlp::{MlpModel, MlpSpec};
use crate::physics::{train_with_physics, LossConfig, PhysicsTerm, RemMap, TrainReport, TrainedModel};
use crate::scene::{ObservationSet, Transmitter};

/// Least-squares calibration of the log-distance model from observations:
/// regresses RSSI on `-10 log10(d / d0)` and returns `(P_T, eta)`.
pub fn fit_log_distance(
    obs: &ObservationSet,
    tx_location: Point,
    d0_m: f64,
) -> Result<(f64, f64)> {
    if !(d0_m > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "reference distance {d0_m} must be positive"
        )));
    }
    if obs.len() < 2 {
        return Err(Error::InvalidParameter(
            "log-distance fit needs at least 2 observations".into(),
        ));
    }
    let mut g = Vec::with_capacity(obs.len());
    for (idx, p) in obs.points().iter().enumerate() {
        let d = p.distance(&tx_location);
        if d == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "observation {idx} coincides with the transmitter"
            )));
        }
        g.push(-10.0 * (d / d0_m).log10());
    }
    let y = obs.rssi_dbm();
    let n = g.len() as f64;
    let g_mean = g.iter().sum::<f64>() / n;
    let y_mean = y.iter().sum::<f64>() / n;
    let var_g: f64 = g.iter().map(|v| (v - g_mean).powi(2)).sum();
    if var_g < 1e-12 * g_mean.powi(2).max(1.0) {
        return Err(Error::SingularSystem(
            "all observations are equidistant from the transmitter".into(),
        ));
    }
    let cov: f64 = g
        .iter()
        .zip(y)
        .map(|(gv, yv)| (gv - g_mean) * (yv - y_mean))
        .sum();
    let eta = cov / var_g;
    let p_t = y_mean - eta * g_mean;
    Ok((p_t, eta))
}

/// Transmit site of a statistical model run: the non-blind variants know
/// where the transmitter is and how strongly it radiates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxSite {
    pub location: Point,
    pub tx_power_dbm: f64,
}

/// A reference path loss surface used by the model-constrained variants and
/// as a standalone baseline.
#[derive(Debug, Clone)]
pub enum StatModel {
    ThreeGpp { params: StatModelParams, site: TxSite },
    Itu { params: StatModelParams, site: TxSite },
    /// The generative log-distance model itself; useful as a sanity lane on
    /// zero-shadow scenes.
    LogDistance { tx: Transmitter, d_min_m: f64 },
}

impl StatModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            StatModel::ThreeGpp { params, .. } => params.validate(),
            StatModel::Itu { params, .. } => {
                params.validate()?;
                if params.carrier_ghz > 7.0 {
                    return Err(Error::InvalidParameter(
                        "IMT-2020 rural-macro carrier must be <= 7 GHz".into(),
                    ));
                }
                Ok(())
            }
            StatModel::LogDistance { d_min_m, .. } => {
                if !(d_min_m > &0.0) {
                    return Err(Error::InvalidParameter(
                        "clamp distance must be positive".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Predicted RSSI; parameters must have been validated.
    pub fn rssi_at(&self, p: Point) -> f64 {
        match self {
            StatModel::ThreeGpp { params, site } => {
                let d = site.location.distance(&p);
                let pl = pl_3gpp_rma(params, d).expect("validated parameters");
                site.tx_power_dbm - pl.loss_db
            }
            StatModel::Itu { params, site } => {
                let d = site.location.distance(&p);
                let pl = pl_itu_rma(params, d).expect("validated parameters");
                site.tx_power_dbm - pl.loss_db
            }
            StatModel::LogDistance { tx, d_min_m } => {
                crate::scene::path_loss_rssi(tx, p, *d_min_m)
                    .expect("clamped evaluation")
                    .rssi_dbm
            }
        }
    }

    /// The model evaluated at every cell center.
    pub fn rem(&self, grid: &Grid) -> Result<RemMap> {
        self.validate()?;
        let values = grid.cell_centers().iter().map(|c| self.rssi_at(*c)).collect();
        RemMap::new(*grid, values)
    }
}

/// Plain data-driven network: identical to the physics trainer with the
/// physics weight forced to zero, so the loss trace coincides with a
/// `lambda = 0` run under the same seed.
pub fn train_fcnn(
    grid: &Grid,
    obs_train: &ObservationSet,
    obs_val: &ObservationSet,
    spec: MlpSpec,
    cfg: &LossConfig,
    seed: u64,
) -> Result<(TrainedModel, TrainReport)> {
    let m0 = MlpModel::init(spec, seed)?;
    crate::physics::train(m0, grid, obs_train, obs_val, &cfg.with_lambda(0.0), seed)
}

/// Model-constrained variant: the physics term is the mean squared deviation
/// between the network prediction and the statistical model's RSSI at the
/// training points; everything else matches the main trainer.
pub fn train_pinn_statmodel(
    grid: &Grid,
    obs_train: &ObservationSet,
    obs_val: &ObservationSet,
    stat: &StatModel,
    spec: MlpSpec,
    cfg: &LossConfig,
    seed: u64,
) -> Result<(TrainedModel, TrainReport)> {
    stat.validate()?;
    let m0 = MlpModel::init(spec, seed)?;
    let reference = |p: Point| stat.rssi_at(p);
    train_with_physics(
        m0,
        grid,
        obs_train,
        obs_val,
        cfg,
        seed,
        PhysicsTerm::FieldMatch(&reference),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::path_loss_rssi;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn tx() -> Transmitter {
        Transmitter::new(Point::new(0.0, 0.0), 30.0, 2.0, 1.0).unwrap()
    }

    fn obs_from_model(tx: &Transmitter, n: usize, noise: f64, seed: u64) -> ObservationSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::with_capacity(n);
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            let r = 50.0 + 4000.0 * rng.gen::<f64>();
            let t = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
            let p = Point::new(r * t.cos(), r * t.sin());
            let mut v = path_loss_rssi(tx, p, 1.0).unwrap().rssi_dbm;
            if noise > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                v += noise * z;
            }
            pts.push(p);
            vals.push(v);
        }
        ObservationSet::new(pts, vals, "C0").unwrap()
    }

    #[test]
    fn fit_recovers_exact_parameters_from_noise_free_data() {
        let tx = tx();
        let obs = obs_from_model(&tx, 40, 0.0, 2);
        let (p_t, eta) = fit_log_distance(&obs, tx.location, 1.0).unwrap();
        assert_relative_eq!(p_t, 30.0, epsilon = 1e-9);
        assert_relative_eq!(eta, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn fit_tolerates_noise() {
        let tx = tx();
        let obs = obs_from_model(&tx, 200, 2.0, 5);
        let (_, eta) = fit_log_distance(&obs, tx.location, 1.0).unwrap();
        assert!(
            (eta - 2.0).abs() < 0.15,
            "eta {eta} too far from 2.0 with 2 dB noise"
        );
    }

    #[test]
    fn equidistant_ring_rejected() {
        let tx = tx();
        let pts: Vec<Point> = (0..12)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / 12.0;
                Point::new(500.0 * t.cos(), 500.0 * t.sin())
            })
            .collect();
        let vals = vec![-30.0; 12];
        let obs = ObservationSet::new(pts, vals, "C0").unwrap();
        assert!(matches!(
            fit_log_distance(&obs, tx.location, 1.0),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn stat_model_rem_has_grid_shape() {
        let grid = Grid::new(-3000.0, 3000.0, -3000.0, 3000.0, 16, 16).unwrap();
        let model = StatModel::ThreeGpp {
            params: StatModelParams {
                carrier_ghz: 0.6,
                h_bs_m: 25.0,
                h_ut_m: 1.5,
                building_height_m: 5.0,
                scenario: Scenario::RmaLos,
            },
            site: TxSite {
                location: Point::new(0.0, 0.0),
                tx_power_dbm: 43.0,
            },
        };
        let rem = model.rem(&grid).unwrap();
        assert_eq!(rem.values_dbm().len(), 256);
        // closer cell sees more power
        let near = rem.value(8, 8);
        let far = rem.value(0, 0);
        assert!(near > far);
    }
}
