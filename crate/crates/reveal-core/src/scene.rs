//! Synthetic ground-truth scenes.
//!
//! A scene is the sum of a deterministic log-distance path loss surface and a
//! correlated shadowing field:
//!
//! ```text
//! rssi(x, y) = P_T - 10 * eta * log10(dist((x, y), tx) / d0) + shadow(x, y)
//! ```
//!
//! The log-distance term is harmonic away from the transmitter (its 2-D
//! Laplacian vanishes), which is what the physics-constrained trainer leans
//! on; the shadowing term carries all the spatial curvature. Scenes double as
//! the oracle for every end-to-end test: observations are bilinear reads of
//! the truth raster plus optional i.i.d. measurement noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};
use crate::shadow::ShadowField;

/// Transmit site and propagation constants of the log-distance model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transmitter {
    pub location: Point,
    /// Transmit power at the reference distance, dBm.
    pub tx_power_dbm: f64,
    /// Path loss exponent (slope of decay per decade of distance).
    pub path_loss_exponent: f64,
    /// Reference distance d0, meters.
    pub reference_distance_m: f64,
}

impl Transmitter {
    pub fn new(
        location: Point,
        tx_power_dbm: f64,
        path_loss_exponent: f64,
        reference_distance_m: f64,
    ) -> Result<Self> {
        if !location.is_finite() || !tx_power_dbm.is_finite() {
            return Err(Error::InvalidParameter(
                "transmitter location and power must be finite".into(),
            ));
        }
        if !(reference_distance_m > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "reference distance must be > 0, got {reference_distance_m}"
            )));
        }
        if !(1.5..=6.0).contains(&path_loss_exponent) {
            return Err(Error::InvalidParameter(format!(
                "path loss exponent {path_loss_exponent} outside sanity range [1.5, 6]"
            )));
        }
        Ok(Self {
            location,
            tx_power_dbm,
            path_loss_exponent,
            reference_distance_m,
        })
    }
}

/// Mean received power (no shadowing) with a clamp flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossSample {
    pub rssi_dbm: f64,
    /// True when the evaluation point fell inside the clamp radius and the
    /// distance was floored to `d_min`.
    pub clamped: bool,
}

/// Deterministic log-distance RSSI at `p`.
///
/// Distances below `d_min_m` are floored to `d_min_m` (the model is singular
/// at the transmitter); an exact zero distance is an error.
pub fn path_loss_rssi(tx: &Transmitter, p: Point, d_min_m: f64) -> Result<PathLossSample> {
    let dist = tx.location.distance(&p);
    if dist == 0.0 {
        return Err(Error::TransmitterSingularity);
    }
    let (d, clamped) = if dist < d_min_m {
        (d_min_m, true)
    } else {
        (dist, false)
    };
    let rssi = tx.tx_power_dbm
        - 10.0 * tx.path_loss_exponent * (d / tx.reference_distance_m).log10();
    Ok(PathLossSample {
        rssi_dbm: rssi,
        clamped,
    })
}

/// Ground truth over a grid: path loss plus shadowing, cell by cell.
#[derive(Debug, Clone)]
pub struct Scene {
    grid: Grid,
    tx: Transmitter,
    shadow: ShadowField,
    truth_dbm: Vec<f64>,
}

impl Scene {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn tx(&self) -> &Transmitter {
        &self.tx
    }

    pub fn shadow(&self) -> &ShadowField {
        &self.shadow
    }

    /// Truth raster, row-major, dBm.
    pub fn truth_dbm(&self) -> &[f64] {
        &self.truth_dbm
    }

    pub fn truth_at_cell(&self, i: usize, j: usize) -> f64 {
        self.truth_dbm[self.grid.cell_index(i, j)]
    }

    /// Bilinear interpolation of the truth raster at an arbitrary point
    /// inside the extent. Between the outermost cell centers and the domain
    /// edge the nearest-cell value is used.
    pub fn truth_at_point(&self, p: Point) -> Result<f64> {
        if !self.grid.contains(p) {
            return Err(Error::OutsideExtent(format!("({}, {})", p.x, p.y)));
        }
        let u = ((p.x - self.grid.x_min()) / self.grid.pitch_x() - 0.5)
            .clamp(0.0, (self.grid.cols() - 1) as f64);
        let v = ((p.y - self.grid.y_min()) / self.grid.pitch_y() - 0.5)
            .clamp(0.0, (self.grid.rows() - 1) as f64);
        let j0 = u.floor() as usize;
        let i0 = v.floor() as usize;
        let j1 = (j0 + 1).min(self.grid.cols() - 1);
        let i1 = (i0 + 1).min(self.grid.rows() - 1);
        let fu = u - j0 as f64;
        let fv = v - i0 as f64;
        let f00 = self.truth_at_cell(i0, j0);
        let f01 = self.truth_at_cell(i0, j1);
        let f10 = self.truth_at_cell(i1, j0);
        let f11 = self.truth_at_cell(i1, j1);
        Ok(f00 * (1.0 - fu) * (1.0 - fv)
            + f01 * fu * (1.0 - fv)
            + f10 * (1.0 - fu) * fv
            + f11 * fu * fv)
    }
}

/// Assembles truth = path loss + shadowing over the shadow field's grid.
pub fn build_scene(grid: &Grid, tx: &Transmitter, shadow: &ShadowField) -> Result<Scene> {
    if shadow.grid() != grid {
        return Err(Error::GridMismatch(
            "shadow field was generated on a different grid".into(),
        ));
    }
    let d_min = grid.min_pitch();
    let mut truth = Vec::with_capacity(grid.n_cells());
    for i in 0..grid.rows() {
        for j in 0..grid.cols() {
            let c = grid.cell_center(i, j)?;
            let pl = path_loss_rssi(tx, c, d_min)?;
            truth.push(pl.rssi_dbm + shadow.value(i, j));
        }
    }
    Ok(Scene {
        grid: *grid,
        tx: *tx,
        shadow: shadow.clone(),
        truth_dbm: truth,
    })
}

/// Sparse RSSI measurements at known sensor locations, single channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    points: Vec<Point>,
    rssi_dbm: Vec<f64>,
    channel: String,
}

impl ObservationSet {
    /// Validates: equal lengths, at least one observation, finite entries,
    /// no duplicate locations.
    pub fn new(points: Vec<Point>, rssi_dbm: Vec<f64>, channel: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("observation set".into()));
        }
        if points.len() != rssi_dbm.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points vs {} rssi values",
                points.len(),
                rssi_dbm.len()
            )));
        }
        for (idx, p) in points.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("observation point {idx}")));
            }
        }
        for (idx, v) in rssi_dbm.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("rssi value {idx}")));
            }
        }
        let mut sorted: Vec<(u64, u64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.x.to_bits(), p.y.to_bits(), i))
            .collect();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::InvalidParameter(format!(
                    "duplicate observation points at indices {} and {}",
                    w[0].2, w[1].2
                )));
            }
        }
        Ok(Self {
            points,
            rssi_dbm,
            channel: channel.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn rssi_dbm(&self) -> &[f64] {
        &self.rssi_dbm
    }

    pub fn channel(&self) -> &str {
        &self.channel
    }
}

/// Reads the scene at the given sensor locations and adds i.i.d. Gaussian
/// measurement noise. `noise_sigma_db = 0` returns exact field reads.
pub fn observe(
    scene: &Scene,
    points: &[Point],
    noise_sigma_db: f64,
    seed: u64,
    channel: &str,
) -> Result<ObservationSet> {
    if !(noise_sigma_db >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be >= 0, got {noise_sigma_db}"
        )));
    }
    let mut outside = Vec::new();
    for (idx, p) in points.iter().enumerate() {
        if !scene.grid.contains(*p) {
            outside.push(idx);
        }
    }
    if !outside.is_empty() {
        return Err(Error::OutsideExtent(format!(
            "observation indices {outside:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rssi = Vec::with_capacity(points.len());
    for p in points {
        let mut v = scene.truth_at_point(*p)?;
        if noise_sigma_db > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            v += noise_sigma_db * z;
        }
        rssi.push(v);
    }
    ObservationSet::new(points.to_vec(), rssi, channel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shadow::gen_shadow_field;
    use approx::assert_relative_eq;

    fn tx_at(x: f64, y: f64, power: f64, eta: f64) -> Transmitter {
        Transmitter::new(Point::new(x, y), power, eta, 1.0).unwrap()
    }

    #[test]
    fn path_loss_reference_values() {
        let tx = tx_at(0.0, 0.0, 30.0, 2.0);
        let s = path_loss_rssi(&tx, Point::new(100.0, 0.0), 1.0).unwrap();
        assert_relative_eq!(s.rssi_dbm, -10.0, max_relative = 1e-12);
        assert!(!s.clamped);

        let s = path_loss_rssi(&tx, Point::new(1.0, 0.0), 1.0).unwrap();
        assert_relative_eq!(s.rssi_dbm, 30.0, max_relative = 1e-12);
    }

    #[test]
    fn path_loss_high_precision_spot_value() {
        // 43 - 32 * log10(2500), evaluated independently via natural logs
        let tx = tx_at(0.0, 0.0, 43.0, 3.2);
        let s = path_loss_rssi(&tx, Point::new(2500.0, 0.0), 1.0).unwrap();
        let oracle = 43.0 - 32.0 * (2500.0f64.ln() / std::f64::consts::LN_10);
        assert_relative_eq!(s.rssi_dbm, oracle, epsilon = 1e-9);
        assert_relative_eq!(s.rssi_dbm, -65.73408027750520, epsilon = 1e-9);
    }

    #[test]
    fn path_loss_clamp_and_singularity() {
        let tx = tx_at(0.0, 0.0, 30.0, 2.0);
        let s = path_loss_rssi(&tx, Point::new(0.5, 0.0), 2.0).unwrap();
        assert!(s.clamped);
        assert_relative_eq!(s.rssi_dbm, 30.0 - 20.0 * 2.0f64.log10());
        assert!(matches!(
            path_loss_rssi(&tx, Point::new(0.0, 0.0), 2.0),
            Err(Error::TransmitterSingularity)
        ));
    }

    #[test]
    fn bad_transmitter_params_rejected() {
        assert!(Transmitter::new(Point::new(0.0, 0.0), 30.0, 1.0, 1.0).is_err());
        assert!(Transmitter::new(Point::new(0.0, 0.0), 30.0, 2.0, 0.0).is_err());
        assert!(Transmitter::new(Point::new(f64::NAN, 0.0), 30.0, 2.0, 1.0).is_err());
    }

    fn small_scene(sigma: f64, seed: u64) -> Scene {
        let grid = Grid::new(0.0, 6400.0, 0.0, 6400.0, 32, 32).unwrap();
        let tx = tx_at(2458.0, 3371.0, 43.0, 3.2);
        let shadow = gen_shadow_field(&grid, sigma, 500.0, seed).unwrap();
        build_scene(&grid, &tx, &shadow).unwrap()
    }

    #[test]
    fn zero_shadow_truth_equals_path_loss() {
        let scene = small_scene(0.0, 1);
        let d_min = scene.grid().min_pitch();
        for i in [0usize, 13, 31] {
            for j in [0usize, 7, 31] {
                let c = scene.grid().cell_center(i, j).unwrap();
                let pl = path_loss_rssi(scene.tx(), c, d_min).unwrap();
                assert_relative_eq!(scene.truth_at_cell(i, j), pl.rssi_dbm);
            }
        }
    }

    #[test]
    fn constant_shadow_shifts_truth() {
        let grid = Grid::new(0.0, 6400.0, 0.0, 6400.0, 32, 32).unwrap();
        let tx = tx_at(2458.0, 3371.0, 43.0, 3.2);
        let zero = gen_shadow_field(&grid, 0.0, 500.0, 1).unwrap();
        let plus5 = ShadowField::from_values(grid, vec![5.0; grid.n_cells()], 5.0, 500.0, 1).unwrap();
        let base = build_scene(&grid, &tx, &zero).unwrap();
        let shifted = build_scene(&grid, &tx, &plus5).unwrap();
        for (a, b) in base.truth_dbm().iter().zip(shifted.truth_dbm()) {
            assert_relative_eq!(b - a, 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn truth_is_pathloss_plus_shadow_cellwise() {
        let scene = small_scene(8.0, 42);
        let d_min = scene.grid().min_pitch();
        let c = scene.grid().cell_center(20, 9).unwrap();
        let pl = path_loss_rssi(scene.tx(), c, d_min).unwrap();
        let expect = pl.rssi_dbm + scene.shadow().value(20, 9);
        assert_relative_eq!(scene.truth_at_cell(20, 9), expect, epsilon = 1e-12);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let grid = Grid::new(0.0, 6400.0, 0.0, 6400.0, 32, 32).unwrap();
        let other = Grid::new(0.0, 6400.0, 0.0, 6400.0, 16, 16).unwrap();
        let tx = tx_at(2458.0, 3371.0, 43.0, 3.2);
        let shadow = gen_shadow_field(&other, 8.0, 500.0, 1).unwrap();
        assert!(matches!(
            build_scene(&grid, &tx, &shadow),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn observe_exact_at_cell_center() {
        let scene = small_scene(8.0, 3);
        let c = scene.grid().cell_center(5, 17).unwrap();
        let obs = observe(&scene, &[c], 0.0, 9, "C0").unwrap();
        assert_relative_eq!(obs.rssi_dbm()[0], scene.truth_at_cell(5, 17), epsilon = 1e-12);
    }

    #[test]
    fn observe_midpoint_is_mean_of_adjacent_cells() {
        let scene = small_scene(8.0, 3);
        let a = scene.grid().cell_center(10, 10).unwrap();
        let b = scene.grid().cell_center(10, 11).unwrap();
        let mid = Point::new(0.5 * (a.x + b.x), a.y);
        let obs = observe(&scene, &[mid], 0.0, 9, "C0").unwrap();
        let want = 0.5 * (scene.truth_at_cell(10, 10) + scene.truth_at_cell(10, 11));
        assert_relative_eq!(obs.rssi_dbm()[0], want, epsilon = 1e-12);
    }

    #[test]
    fn observe_noise_has_requested_spread() {
        let scene = small_scene(8.0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let pts: Vec<Point> = (0..1000)
            .map(|_| {
                Point::new(
                    100.0 + 6200.0 * rng.gen::<f64>(),
                    100.0 + 6200.0 * rng.gen::<f64>(),
                )
            })
            .collect();
        let clean = observe(&scene, &pts, 0.0, 5, "C0").unwrap();
        let noisy = observe(&scene, &pts, 2.0, 5, "C0").unwrap();
        let resid: Vec<f64> = noisy
            .rssi_dbm()
            .iter()
            .zip(clean.rssi_dbm())
            .map(|(a, b)| a - b)
            .collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let sd =
            (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / resid.len() as f64).sqrt();
        assert!((1.8..=2.2).contains(&sd), "noise sd {sd}");
    }

    #[test]
    fn observe_rejects_outside_points() {
        let scene = small_scene(0.0, 1);
        let err = observe(&scene, &[Point::new(-10.0, 50.0)], 0.0, 1, "C0").unwrap_err();
        assert!(matches!(err, Error::OutsideExtent(_)));
        assert!(err.to_string().contains('0'));
    }

    #[test]
    fn observation_set_invariants() {
        let p = vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)];
        assert!(ObservationSet::new(p.clone(), vec![1.0], "C0").is_err());
        assert!(ObservationSet::new(vec![], vec![], "C0").is_err());
        let dup = vec![Point::new(0.0, 0.0), Point::new(0.0, 0.0)];
        assert!(ObservationSet::new(dup, vec![1.0, 2.0], "C0").is_err());
        assert!(ObservationSet::new(p, vec![1.0, 2.0], "C0").is_ok());
    }

    #[test]
    fn observations_reproducible_per_seed() {
        let scene = small_scene(8.0, 3);
        let pts = vec![
            scene.grid().cell_center(4, 4).unwrap(),
            scene.grid().cell_center(9, 22).unwrap(),
        ];
        let a = observe(&scene, &pts, 2.0, 77, "C0").unwrap();
        let b = observe(&scene, &pts, 2.0, 77, "C0").unwrap();
        assert_eq!(a.rssi_dbm(), b.rssi_dbm());
    }
}
