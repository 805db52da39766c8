//! Scoring of predicted maps against ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Root mean squared error.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let n = pred.len() as f64;
    let ss: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((ss / n).sqrt())
}

/// Mean absolute error.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n)
}

/// Coefficient of determination `1 - SS_res / SS_tot`; negative when the
/// prediction is worse than the truth mean.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidParameter(
            "r-squared undefined for zero truth variance".into(),
        ));
    }
    let ss_res: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::EmptyInput("metric input".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} truth values",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Empirical CDF of a sample, as the right-continuous step function through
/// the sorted values.
#[derive(Debug, Clone)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("ecdf sample".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ecdf sample".into()));
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        Ok(Self { sorted: values })
    }

    /// Step points `(value, cumulative fraction)` in ascending order.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        self.sorted
            .iter()
            .enumerate()
            .map(|(k, &v)| (v, (k + 1) as f64 / n))
            .collect()
    }

    /// Percentile by linear interpolation between order statistics
    /// (`q` in [0, 100]); the median of (1,2,3,4) is 2.5.
    pub fn percentile(&self, q: f64) -> f64 {
        let n = self.sorted.len();
        if n == 1 {
            return self.sorted[0];
        }
        let rank = (q / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
        let lo = rank.floor() as usize;
        let hi = rank.ceil() as usize;
        let frac = rank - lo as f64;
        self.sorted[lo] * (1.0 - frac) + self.sorted[hi] * frac
    }
}

/// One row of percentile summary inside an [`EvalReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileEntry {
    pub pct: f64,
    pub abs_err_db: f64,
}

/// Scores of one predicted map against truth at a common set of points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse_db: f64,
    pub mae_db: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub abs_err_percentiles: Vec<PercentileEntry>,
    /// Wall time of the computation being scored, when the caller carries
    /// one through. Not measured here; kept out of deterministic artifacts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl EvalReport {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        let abs_errors: Vec<f64> = pred
            .iter()
            .zip(truth)
            .map(|(p, t)| (p - t).abs())
            .collect();
        let rmse_db = rmse(pred, truth)?;
        let mae_db = mae(pred, truth)?;
        let r_squared = r_squared(pred, truth)?;
        let ecdf = Ecdf::new(abs_errors)?;
        let abs_err_percentiles = [25.0, 50.0, 75.0, 90.0]
            .iter()
            .map(|&pct| PercentileEntry {
                pct,
                abs_err_db: ecdf.percentile(pct),
            })
            .collect();
        Ok(Self {
            rmse_db,
            mae_db,
            r_squared,
            n_points: pred.len(),
            abs_err_percentiles,
            wall_time_s: None,
        })
    }

    /// Header and single row for table assembly.
    pub fn csv_row(&self, label: &str) -> (String, String) {
        let header = "model,rmse_db,mae_db,r_squared,n_points".to_string();
        let row = format!(
            "{label},{},{},{},{}",
            self.rmse_db, self.mae_db, self.r_squared, self.n_points
        );
        (header, row)
    }
}
