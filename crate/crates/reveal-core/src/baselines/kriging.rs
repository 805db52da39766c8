//! Ordinary Kriging with an exponential variogram.
//!
//! The variogram is fitted by weighted least squares on a binned empirical
//! semivariogram (weights = pair counts per bin, range profiled over a log
//! grid). Prediction solves the ordinary-Kriging system with a Lagrange
//! multiplier enforcing weights that sum to one, so the estimator is unbiased
//! for any constant mean. With a zero nugget the predictor interpolates the
//! observations exactly; a positive nugget is treated as measurement error
//! and smooths instead.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};
use crate::physics::RemMap;
use crate::scene::ObservationSet;

/// Variogram family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramModel {
    Exponential,
}

/// Fitted spatial-structure parameters. `range_m` is the e-folding distance
/// of the correlation, matching the generator's convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variogram {
    pub model: VariogramModel,
    pub nugget: f64,
    pub sill: f64,
    pub range_m: f64,
}

impl Variogram {
    pub fn validate(&self) -> Result<()> {
        if !(self.nugget >= 0.0) || !(self.sill >= self.nugget) || !(self.range_m > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "variogram (nugget {}, sill {}, range {}) violates 0 <= nugget <= sill, range > 0",
                self.nugget, self.sill, self.range_m
            )));
        }
        Ok(())
    }

    /// Semivariance at lag `d` (zero at the origin, `nugget` just above it).
    pub fn gamma(&self, d: f64) -> f64 {
        if d == 0.0 {
            return 0.0;
        }
        self.nugget + (self.sill - self.nugget) * (1.0 - (-d / self.range_m).exp())
    }

    /// Covariance at lag `d`; the nugget is excluded for `d > 0`.
    pub fn covariance(&self, d: f64) -> f64 {
        if d == 0.0 {
            return self.sill;
        }
        (self.sill - self.nugget) * (-d / self.range_m).exp()
    }
}

/// One bin of the empirical semivariogram.
#[derive(Debug, Clone, Copy)]
struct VariogramBin {
    mean_dist: f64,
    mean_semivariance: f64,
    pairs: usize,
}

fn empirical_bins(obs: &ObservationSet, n_bins: usize) -> Vec<VariogramBin> {
    let pts = obs.points();
    let vals = obs.rssi_dbm();
    let mut max_d = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            max_d = max_d.max(pts[i].distance(&pts[j]));
        }
    }
    // semivariances past half the maximum separation are dominated by edge
    // pairs; the standard cutoff drops them
    let cutoff = 0.5 * max_d;
    let width = cutoff / n_bins as f64;
    let mut dist_sum = vec![0.0; n_bins];
    let mut semi_sum = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = pts[i].distance(&pts[j]);
            if d > cutoff || d == 0.0 {
                continue;
            }
            let b = ((d / width) as usize).min(n_bins - 1);
            dist_sum[b] += d;
            semi_sum[b] += 0.5 * (vals[i] - vals[j]).powi(2);
            count[b] += 1;
        }
    }
    (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| VariogramBin {
            mean_dist: dist_sum[b] / count[b] as f64,
            mean_semivariance: semi_sum[b] / count[b] as f64,
            pairs: count[b],
        })
        .collect()
}

/// Weight of one semivariogram bin in the fit: pair count over squared lag,
/// so the short lags that carry the range information dominate.
fn bin_weight(b: &VariogramBin) -> f64 {
    b.pairs as f64 / (b.mean_dist * b.mean_dist)
}

/// Weighted least-squares residual of `gamma(d) = nugget + partial * (1 - exp(-d/r))`
/// for a fixed range, with nonnegativity clamps on both linear coefficients.
fn fit_linear_at_range(bins: &[VariogramBin], range: f64) -> (f64, f64, f64) {
    // design: [1, g_b] with g_b = 1 - exp(-d_b / range)
    let (mut sw, mut sg, mut sgg, mut sy, mut sgy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for b in bins {
        let w = bin_weight(b);
        let g = 1.0 - (-b.mean_dist / range).exp();
        sw += w;
        sg += w * g;
        sgg += w * g * g;
        sy += w * b.mean_semivariance;
        sgy += w * g * b.mean_semivariance;
    }
    let det = sw * sgg - sg * sg;
    let (mut nugget, mut partial) = if det.abs() > 1e-12 * sw * sgg.max(1e-300) {
        (
            (sgg * sy - sg * sgy) / det,
            (sw * sgy - sg * sy) / det,
        )
    } else {
        (0.0, if sgg > 0.0 { sgy / sgg } else { 0.0 })
    };
    if nugget < 0.0 {
        nugget = 0.0;
        partial = if sgg > 0.0 { (sgy / sgg).max(0.0) } else { 0.0 };
    }
    if partial < 0.0 {
        partial = 0.0;
        nugget = (sy / sw).max(0.0);
    }
    let wss: f64 = bins
        .iter()
        .map(|b| {
            let g = 1.0 - (-b.mean_dist / range).exp();
            let r = b.mean_semivariance - nugget - partial * g;
            bin_weight(b) * r * r
        })
        .sum();
    (nugget, partial, wss)
}

/// Fits an exponential variogram to the empirical semivariogram of the
/// observations (12 distance bins, pair-count weights).
pub fn fit_variogram(obs: &ObservationSet) -> Result<Variogram> {
    if obs.len() < 10 {
        return Err(Error::InvalidParameter(format!(
            "variogram fit needs at least 10 observations, got {}",
            obs.len()
        )));
    }
    let bins = empirical_bins(obs, 12);
    if bins.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "only {} nonempty semivariogram bins; need at least 3",
            bins.len()
        )));
    }
    let d_max = bins.last().expect("nonempty").mean_dist;
    let d_min = bins[0].mean_dist;

    // profile the range over a log grid, then refine around the winner;
    // ranges past twice the binned support are not identifiable from the data
    let mut best = (f64::INFINITY, 0.0, 0.0, d_min); // (wss, nugget, partial, range)
    let lo = (d_min / 4.0).max(1e-9);
    let hi = 2.0 * d_max;
    let coarse = 80;
    for k in 0..=coarse {
        let r = lo * (hi / lo).powf(k as f64 / coarse as f64);
        let (n, p, wss) = fit_linear_at_range(&bins, r);
        if wss < best.0 {
            best = (wss, n, p, r);
        }
    }
    let refine_lo = best.3 / 1.3;
    let refine_hi = best.3 * 1.3;
    for k in 0..=40 {
        let r = refine_lo + (refine_hi - refine_lo) * k as f64 / 40.0;
        let (n, p, wss) = fit_linear_at_range(&bins, r);
        if wss < best.0 {
            best = (wss, n, p, r);
        }
    }

    let v = Variogram {
        model: VariogramModel::Exponential,
        nugget: best.1,
        sill: best.1 + best.2,
        range_m: best.3,
    };
    v.validate()?;
    Ok(v)
}

/// Factorized ordinary-Kriging system over a fixed observation set, reusable
/// across prediction points.
pub struct KrigingSystem<'a> {
    obs: &'a ObservationSet,
    variogram: Variogram,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> KrigingSystem<'a> {
    pub fn build(obs: &'a ObservationSet, variogram: &Variogram) -> Result<Self> {
        variogram.validate()?;
        let n = obs.len();
        let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                let d = obs.points()[i].distance(&obs.points()[j]);
                a[(i, j)] = variogram.covariance(d);
            }
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
        }
        let lu = a.lu();
        if lu.determinant().abs() < 1e-300 {
            return Err(Error::SingularSystem(
                "kriging matrix is singular (coincident sensors or zero sill)".into(),
            ));
        }
        Ok(Self {
            obs,
            variogram: *variogram,
            lu,
        })
    }

    /// Kriging weights and the Lagrange multiplier for a prediction point.
    pub fn weights(&self, p: Point) -> Result<(Vec<f64>, f64)> {
        let n = self.obs.len();
        let mut rhs = DVector::<f64>::zeros(n + 1);
        for i in 0..n {
            rhs[i] = self
                .variogram
                .covariance(self.obs.points()[i].distance(&p));
        }
        rhs[n] = 1.0;
        let sol = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::SingularSystem("kriging solve failed".into()))?;
        let weights = sol.as_slice()[..n].to_vec();
        Ok((weights, sol[n]))
    }

    /// Predicted mean and Kriging variance at `p`.
    pub fn predict(&self, p: Point) -> Result<(f64, f64)> {
        let (weights, mu) = self.weights(p)?;
        let mut mean = 0.0;
        let mut wc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            mean += w * self.obs.rssi_dbm()[i];
            wc += w * self.variogram.covariance(self.obs.points()[i].distance(&p));
        }
        let variance = (self.variogram.sill - wc - mu).max(0.0);
        Ok((mean, variance))
    }
}

/// Ordinary-Kriging prediction at a single point.
pub fn kriging_predict(obs: &ObservationSet, v: &Variogram, p: Point) -> Result<(f64, f64)> {
    KrigingSystem::build(obs, v)?.predict(p)
}

/// Kriging evaluated at every cell center of a grid.
pub fn kriging_rem(obs: &ObservationSet, v: &Variogram, grid: &Grid) -> Result<RemMap> {
    let system = KrigingSystem::build(obs, v)?;
    let mut values = Vec::with_capacity(grid.n_cells());
    for c in grid.cell_centers() {
        values.push(system.predict(c)?.0);
    }
    RemMap::new(*grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::srs_select;
    use crate::shadow::gen_shadow_field;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scattered_obs(seed: u64, n: usize, values: impl Fn(Point) -> f64) -> ObservationSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            pts.push(Point::new(
                5000.0 * rng.gen::<f64>(),
                5000.0 * rng.gen::<f64>(),
            ));
        }
        let vals = pts.iter().map(|p| values(*p)).collect();
        ObservationSet::new(pts, vals, "C0").unwrap()
    }

    fn test_variogram() -> Variogram {
        Variogram {
            model: VariogramModel::Exponential,
            nugget: 0.0,
            sill: 64.0,
            range_m: 500.0,
        }
    }

    #[test]
    fn exact_interpolation_with_zero_nugget() {
        let obs = scattered_obs(3, 12, |p| -60.0 + 0.002 * p.x - 0.001 * p.y);
        let v = test_variogram();
        for (i, p) in obs.points().iter().enumerate() {
            let (mean, var) = kriging_predict(&obs, &v, *p).unwrap();
            assert_relative_eq!(mean, obs.rssi_dbm()[i], epsilon = 1e-8);
            assert!(var.abs() < 1e-8, "variance {var} at observed point");
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let obs = scattered_obs(7, 15, |p| -50.0 - 0.004 * p.x);
        let v = test_variogram();
        let system = KrigingSystem::build(&obs, &v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p = Point::new(5000.0 * rng.gen::<f64>(), 5000.0 * rng.gen::<f64>());
            let (w, _) = system.weights(p).unwrap();
            let sum: f64 = w.iter().sum();
            assert!(
                (sum - 1.0).abs() < 1e-9,
                "weights sum {sum} at ({}, {})",
                p.x,
                p.y
            );
        }
    }

    #[test]
    fn symmetric_pair_predicts_arithmetic_mean() {
        // two observations, prediction point equidistant from both: by
        // symmetry of the 3x3 system the weights are (1/2, 1/2)
        let obs = ObservationSet::new(
            vec![Point::new(0.0, 0.0), Point::new(100.0, 0.0)],
            vec![-40.0, -60.0],
            "C0",
        )
        .unwrap();
        let v = test_variogram();
        let (mean, _) = kriging_predict(&obs, &v, Point::new(50.0, 30.0)).unwrap();
        assert_relative_eq!(mean, -50.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_sill_system_is_singular() {
        let obs = scattered_obs(3, 8, |_| -50.0);
        let v = Variogram {
            model: VariogramModel::Exponential,
            nugget: 0.0,
            sill: 0.0,
            range_m: 500.0,
        };
        assert!(matches!(
            kriging_predict(&obs, &v, Point::new(1.0, 1.0)),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn variogram_validation() {
        let mut v = test_variogram();
        v.nugget = -1.0;
        assert!(v.validate().is_err());
        let mut v = test_variogram();
        v.sill = -0.5;
        assert!(v.validate().is_err());
        let mut v = test_variogram();
        v.range_m = 0.0;
        assert!(v.validate().is_err());
    }

    #[test]
    fn fit_on_iid_noise_finds_no_spatial_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs = scattered_obs(5, 120, |_| 0.0);
        let noisy: Vec<f64> = obs.rssi_dbm().iter().map(|_| 3.0 * rng.gen::<f64>() - 1.5 + {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            2.0 * z
        }).collect();
        let obs = ObservationSet::new(obs.points().to_vec(), noisy.clone(), "C0").unwrap();
        let n = noisy.len() as f64;
        let mean = noisy.iter().sum::<f64>() / n;
        let sample_var = noisy.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;

        let v = fit_variogram(&obs).unwrap();
        assert!(
            (v.sill - sample_var).abs() < 0.3 * sample_var,
            "sill {} vs sample variance {sample_var}",
            v.sill
        );
        // spatial correlation share at the shortest observed lag is small
        let bins = empirical_bins(&obs, 12);
        let d1 = bins[0].mean_dist;
        let corr_share = (v.sill - v.gamma(d1)) / v.sill;
        assert!(
            corr_share <= 0.4,
            "iid data fitted with correlation share {corr_share} at lag {d1}"
        );
    }

    #[test]
    fn fit_on_constant_field_gives_zero_sill() {
        let obs = scattered_obs(5, 40, |_| -55.0);
        let v = fit_variogram(&obs).unwrap();
        assert!(v.sill.abs() < 1e-12, "sill {}", v.sill);
    }

    #[test]
    fn fit_recovers_shadow_field_structure() {
        // Monte-Carlo over seeds: fitted sill near sigma^2 = 64 dB^2 and
        // range near the 500 m correlation length. Medians, because the
        // range estimator is heavy-tailed at n = 100 (occasional seeds trade
        // nugget against a long range when the first bin sits high).
        let grid = Grid::new(0.0, 12800.0, 0.0, 12800.0, 64, 64).unwrap();
        let mut sills = Vec::new();
        let mut ranges = Vec::new();
        for seed in 0..16u64 {
            let f = gen_shadow_field(&grid, 8.0, 500.0, seed).unwrap();
            let centers = grid.cell_centers();
            let idx = srs_select(centers.len(), 100, seed + 1000).unwrap();
            let pts: Vec<Point> = idx.iter().map(|&i| centers[i]).collect();
            let vals: Vec<f64> = idx.iter().map(|&i| f.values()[i]).collect();
            let obs = ObservationSet::new(pts, vals, "C0").unwrap();
            let v = fit_variogram(&obs).unwrap();
            sills.push(v.sill);
            ranges.push(v.range_m);
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
        };
        let med_sill = median(&mut sills);
        let med_range = median(&mut ranges);
        assert!(
            (med_sill - 64.0).abs() < 0.4 * 64.0,
            "median fitted sill {med_sill}"
        );
        assert!(
            (med_range - 500.0).abs() < 0.6 * 500.0,
            "median fitted range {med_range}"
        );
    }

    #[test]
    fn too_few_points_rejected() {
        let obs = scattered_obs(3, 9, |p| p.x);
        assert!(fit_variogram(&obs).is_err());
    }
}
