//! Spatially balanced sensor-location selection.
//!
//! The local pivotal method walks through the candidate set transferring
//! inclusion probability between nearby pairs: a random unresolved unit and
//! its nearest unresolved neighbor compete until one of them resolves to 0
//! or 1. Nearby units thus rarely end up selected together, which spreads
//! the sample across the domain while preserving every unit's inclusion
//! probability exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Point;

/// Probability below which a unit counts as excluded, and above `1 - RESOLVE_EPS`
/// as included. Absorbs float drift in the pairwise transfers.
const RESOLVE_EPS: f64 = 1e-9;

/// Candidate locations with per-unit inclusion probabilities.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    points: Vec<Point>,
    inclusion_prob: Vec<f64>,
}

impl CandidateSet {
    /// Validates probabilities in (0, 1] and that they sum to an integer
    /// sample size within 1e-9.
    pub fn new(points: Vec<Point>, inclusion_prob: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("candidate set".into()));
        }
        if points.len() != inclusion_prob.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points vs {} probabilities",
                points.len(),
                inclusion_prob.len()
            )));
        }
        for (i, &p) in inclusion_prob.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "inclusion probability {p} at index {i} outside (0, 1]"
                )));
            }
        }
        let sum: f64 = inclusion_prob.iter().sum();
        if (sum - sum.round()).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "inclusion probabilities sum to {sum}, expected an integer sample size"
            )));
        }
        Ok(Self {
            points,
            inclusion_prob,
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

    pub fn inclusion_prob(&self) -> &[f64] {
        &self.inclusion_prob
    }
}

/// Equal inclusion probabilities `n / count` over the given points.
pub fn uniform_probs(points: Vec<Point>, n: usize) -> Result<CandidateSet> {
    if n == 0 || n > points.len() {
        return Err(Error::InvalidParameter(format!(
            "sample size {n} out of range 1..={}",
            points.len()
        )));
    }
    let p = n as f64 / points.len() as f64;
    let probs = vec![p; points.len()];
    CandidateSet::new(points, probs)
}

/// Local pivotal method selection. Returns the indices whose probability
/// resolved to 1, in ascending order. Deterministic per seed.
pub fn lpm_select(candidates: &CandidateSet, seed: u64) -> Result<Vec<usize>> {
    if candidates.len() < 2 {
        // a single certain candidate is still a valid degenerate draw
        if candidates.len() == 1 && candidates.inclusion_prob()[0] >= 1.0 - RESOLVE_EPS {
            return Ok(vec![0]);
        }
        return Err(Error::InvalidParameter(
            "local pivotal selection needs at least 2 candidates".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = candidates.len();
    let mut prob = candidates.inclusion_prob().to_vec();
    // indices still strictly between 0 and 1
    let mut unresolved: Vec<usize> = (0..n).collect();
    unresolved.retain(|&i| prob[i] < 1.0 - RESOLVE_EPS && prob[i] > RESOLVE_EPS);

    while unresolved.len() >= 2 {
        let pick = rng.gen_range(0..unresolved.len());
        let i = unresolved[pick];
        let j = nearest_unresolved(candidates.points(), &unresolved, i);
        pivotal_transfer(&mut prob, i, j, &mut rng);
        unresolved.retain(|&u| prob[u] < 1.0 - RESOLVE_EPS && prob[u] > RESOLVE_EPS);
    }
    // a lone fractional unit (non-integer probability mass remainder)
    if let [i] = unresolved[..] {
        let u: f64 = rng.gen();
        prob[i] = if u < prob[i] { 1.0 } else { 0.0 };
    }

    Ok((0..n).filter(|&i| prob[i] >= 1.0 - RESOLVE_EPS).collect())
}

/// Nearest unresolved neighbor of `i`, ties broken by lowest index.
fn nearest_unresolved(points: &[Point], unresolved: &[usize], i: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_d = f64::INFINITY;
    for &u in unresolved {
        if u == i {
            continue;
        }
        let dx = points[u].x - points[i].x;
        let dy = points[u].y - points[i].y;
        let d = dx * dx + dy * dy;
        if d < best_d || (d == best_d && u < best) {
            best_d = d;
            best = u;
        }
    }
    best
}

/// One pivotal step between units `i` and `j`: moves probability mass so one
/// of the pair resolves, preserving both marginal inclusion probabilities.
fn pivotal_transfer(prob: &mut [f64], i: usize, j: usize, rng: &mut ChaCha8Rng) {
    let (pi, pj) = (prob[i], prob[j]);
    let sum = pi + pj;
    let u: f64 = rng.gen();
    if sum < 1.0 {
        if u < pj / sum {
            prob[i] = 0.0;
            prob[j] = sum;
        } else {
            prob[i] = sum;
            prob[j] = 0.0;
        }
    } else if u < (1.0 - pj) / (2.0 - sum) {
        prob[i] = 1.0;
        prob[j] = sum - 1.0;
    } else {
        prob[i] = sum - 1.0;
        prob[j] = 1.0;
    }
}

/// Simple random sampling without replacement; the spread baseline that
/// balanced designs are judged against.
pub fn srs_select(count: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || n > count {
        return Err(Error::InvalidParameter(format!(
            "sample size {n} out of range 1..={count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..count).collect();
    // partial Fisher-Yates: first n entries become the sample
    for k in 0..n {
        let swap = rng.gen_range(k..count);
        idx.swap(k, swap);
    }
    let mut sample = idx[..n].to_vec();
    sample.sort_unstable();
    Ok(sample)
}

/// Mean distance from each selected point to its nearest selected neighbor.
pub fn mean_nn_distance(points: &[Point], selected: &[usize]) -> f64 {
    if selected.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for &a in selected {
        let mut best = f64::INFINITY;
        for &b in selected {
            if a != b {
                best = best.min(points[a].distance(&points[b]));
            }
        }
        total += best;
    }
    total / selected.len() as f64
}
