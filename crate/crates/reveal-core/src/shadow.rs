//! Correlated shadowing fields.
//!
//! Shadowing is modeled as a zero-mean Gaussian random field with the
//! exponential (Gudmundson) covariance
//!
//! ```text
//! C(d) = sigma^2 * exp(-d / corr_len)
//! ```
//!
//! sampled on the grid cell centers by circulant embedding: the covariance
//! kernel is wrapped onto an enlarged torus, diagonalized by a 2-D FFT, and a
//! complex white-noise vector is colored by the square root of the spectrum.
//! The draw reproduces the target covariance exactly whenever the embedding
//! is nonnegative definite; padding is grown until the residual negative mass
//! is negligible, then clamped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Zero-mean correlated shadowing values (dB), one per grid cell, row-major.
#[derive(Debug, Clone)]
pub struct ShadowField {
    grid: Grid,
    values: Vec<f64>,
    sigma_db: f64,
    corr_len_m: f64,
    seed: u64,
}

impl ShadowField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.cell_index(i, j)]
    }

    pub fn sigma_db(&self) -> f64 {
        self.sigma_db
    }

    pub fn corr_len_m(&self) -> f64 {
        self.corr_len_m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Field with the given per-cell values; used by scene deserialization
    /// and tests that need hand-built shadowing.
    pub fn from_values(
        grid: Grid,
        values: Vec<f64>,
        sigma_db: f64,
        corr_len_m: f64,
        seed: u64,
    ) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::ShapeMismatch(format!(
                "{} shadow values for {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        Ok(Self {
            grid,
            values,
            sigma_db,
            corr_len_m,
            seed,
        })
    }
}

/// Draws one shadowing realization. Deterministic per `(grid, sigma, corr_len, seed)`.
pub fn gen_shadow_field(
    grid: &Grid,
    sigma_db: f64,
    corr_len_m: f64,
    seed: u64,
) -> Result<ShadowField> {
    if !(sigma_db >= 0.0 && sigma_db.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "shadowing sigma must be >= 0 dB, got {sigma_db}"
        )));
    }
    if !(corr_len_m > 0.0 && corr_len_m.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "correlation length must be > 0 m, got {corr_len_m}"
        )));
    }

    if sigma_db == 0.0 {
        return ShadowField::from_values(
            *grid,
            vec![0.0; grid.n_cells()],
            sigma_db,
            corr_len_m,
            seed,
        );
    }

    let rows = grid.rows();
    let cols = grid.cols();
    let py = grid.pitch_y();
    let px = grid.pitch_x();

    // Padding of several correlation lengths keeps the torus wrap-around
    // correlation (and hence the negative spectral mass) negligible.
    let pad_y = (6.0 * corr_len_m / py).ceil() as usize;
    let pad_x = (6.0 * corr_len_m / px).ceil() as usize;
    let mut m = next_fast_size(2 * rows + pad_y);
    let mut n = next_fast_size(2 * cols + pad_x);

    let mut attempt = 0;
    loop {
        let mut spectrum = embedded_spectrum(m, n, py, px, sigma_db, corr_len_m);
        let max_eig = spectrum.iter().cloned().fold(0.0f64, f64::max);
        let min_eig = spectrum.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < -1e-6 * max_eig && attempt < 3 {
            // embedding not close enough to nonnegative definite; enlarge
            m = next_fast_size(m * 2);
            n = next_fast_size(n * 2);
            attempt += 1;
            continue;
        }
        for v in spectrum.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let values = draw_field(&spectrum, m, n, rows, cols, seed);
        return ShadowField::from_values(*grid, values, sigma_db, corr_len_m, seed);
    }
}

/// Eigenvalues of the circulant embedding: the 2-D DFT of the covariance
/// kernel evaluated at torus distances. Returned row-major, length `m * n`.
fn embedded_spectrum(
    m: usize,
    n: usize,
    pitch_y: f64,
    pitch_x: f64,
    sigma: f64,
    corr_len: f64,
) -> Vec<f64> {
    let var = sigma * sigma;
    let mut kernel = vec![Complex64::new(0.0, 0.0); m * n];
    for a in 0..m {
        let wrap_a = a.min(m - a) as f64 * pitch_y;
        for b in 0..n {
            let wrap_b = b.min(n - b) as f64 * pitch_x;
            let d = wrap_a.hypot(wrap_b);
            kernel[a * n + b] = Complex64::new(var * (-d / corr_len).exp(), 0.0);
        }
    }
    fft2_in_place(&mut kernel, m, n);
    // kernel is symmetric under negation on the torus, so the DFT is real
    kernel.iter().map(|c| c.re).collect()
}

/// Colors complex white noise by `sqrt(spectrum / (m n))` and transforms
/// back; the real part has exactly the embedded covariance.
fn draw_field(
    spectrum: &[f64],
    m: usize,
    n: usize,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (m as f64 * n as f64);
    let mut field = Vec::with_capacity(m * n);
    for &lambda in spectrum {
        let amp = (lambda * scale).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        field.push(Complex64::new(amp * re, amp * im));
    }
    fft2_in_place(&mut field, m, n);

    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(field[i * n + j].re);
        }
    }
    out
}

/// Unnormalized forward 2-D FFT, rows then columns.
fn fft2_in_place(data: &mut [Complex64], m: usize, n: usize) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(n);
    for r in 0..m {
        row_fft.process(&mut data[r * n..(r + 1) * n]);
    }
    let col_fft = planner.plan_fft_forward(m);
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for c in 0..n {
        for r in 0..m {
            col[r] = data[r * n + c];
        }
        col_fft.process(&mut col);
        for r in 0..m {
            data[r * n + c] = col[r];
        }
    }
}

/// Smallest integer >= `n` whose prime factors are all in {2, 3, 5}.
fn next_fast_size(n: usize) -> usize {
    let mut candidate = n.max(2);
    loop {
        let mut r = candidate;
        for p in [2usize, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return candidate;
        }
        candidate += 1;
    }
}

/// Empirical covariance of a field against itself at a row/col cell offset.
#[cfg(test)]
fn lagged_products(field: &ndarray::Array2<f64>, di: usize, dj: usize) -> Vec<f64> {
    let (rows, cols) = field.dim();
    let mut out = Vec::new();
    for i in 0..rows - di {
        for j in 0..cols - dj {
            out.push(field[[i, j]] * field[[i + di, j + dj]]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn field_as_array(f: &ShadowField) -> Array2<f64> {
        Array2::from_shape_vec((f.grid().rows(), f.grid().cols()), f.values().to_vec()).unwrap()
    }

    #[test]
    fn zero_sigma_gives_zero_field() {
        let g = Grid::new(0.0, 6400.0, 0.0, 6400.0, 32, 32).unwrap();
        let f = gen_shadow_field(&g, 0.0, 500.0, 7).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nonpositive_corr_len_rejected() {
        let g = Grid::new(0.0, 6400.0, 0.0, 6400.0, 32, 32).unwrap();
        assert!(gen_shadow_field(&g, 8.0, 0.0, 7).is_err());
        assert!(gen_shadow_field(&g, 8.0, -5.0, 7).is_err());
        assert!(gen_shadow_field(&g, -1.0, 500.0, 7).is_err());
    }

    #[test]
    fn same_seed_is_bit_identical_and_seeds_differ() {
        let g = Grid::new(0.0, 12800.0, 0.0, 12800.0, 64, 64).unwrap();
        let a = gen_shadow_field(&g, 8.0, 500.0, 11).unwrap();
        let b = gen_shadow_field(&g, 8.0, 500.0, 11).unwrap();
        let c = gen_shadow_field(&g, 8.0, 500.0, 12).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(a.values().iter().zip(c.values()).any(|(x, y)| x != y));
    }

    #[test]
    fn moments_within_sanity_bounds() {
        let g = Grid::new(0.0, 12800.0, 0.0, 12800.0, 64, 64).unwrap();
        for seed in [1u64, 7] {
            let f = gen_shadow_field(&g, 8.0, 500.0, seed).unwrap();
            let n = f.values().len() as f64;
            let mean = f.values().iter().sum::<f64>() / n;
            let var = f.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1.0, "seed {seed}: |mean| = {}", mean.abs());
            let sd = var.sqrt();
            assert!((6.0..=10.0).contains(&sd), "seed {seed}: sd = {sd}");
        }
    }

    #[test]
    fn covariance_at_corr_len_matches_exponential_model() {
        // 128x128 grid, pitch 100 m, corr_len 500 m: cells 5 apart in a row
        // should covary at exp(-1) * sigma^2. Monte-Carlo over 20 seeds.
        let g = Grid::new(0.0, 12800.0, 0.0, 12800.0, 128, 128).unwrap();
        let sigma = 8.0f64;
        let expected = (-1.0f64).exp() * sigma * sigma;
        let mut sum = 0.0;
        let mut count = 0usize;
        for seed in 0..20u64 {
            let f = gen_shadow_field(&g, sigma, 500.0, seed).unwrap();
            let arr = field_as_array(&f);
            for p in lagged_products(&arr, 0, 5) {
                sum += p;
                count += 1;
            }
        }
        let cov = sum / count as f64;
        assert!(
            (cov - expected).abs() < 0.3 * expected,
            "covariance at corr_len: got {cov}, want ~{expected}"
        );
    }

    #[test]
    fn variance_matches_sigma_squared() {
        let g = Grid::new(0.0, 12800.0, 0.0, 12800.0, 128, 128).unwrap();
        let sigma = 8.0f64;
        let mut sum = 0.0;
        let mut count = 0usize;
        for seed in 100..120u64 {
            let f = gen_shadow_field(&g, sigma, 500.0, seed).unwrap();
            for v in f.values() {
                sum += v * v;
                count += 1;
            }
        }
        let var = sum / count as f64;
        assert!(
            (var - 64.0).abs() < 0.15 * 64.0,
            "field variance: got {var}, want ~64"
        );
    }

    #[test]
    fn fast_sizes_are_smooth() {
        assert_eq!(next_fast_size(17), 18);
        assert_eq!(next_fast_size(128), 128);
        assert_eq!(next_fast_size(129), 135);
    }
}
