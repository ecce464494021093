//! Distance-generating geometries.
//!
//! [`EuclideanSetup`] uses `r = ½‖·‖²` on all of ℝⁿ. [`EntropySimplexSetup`]
//! uses negative entropy on the simplex, optionally with box bounds that
//! restrict the dual feasible set (the aggregation set stays the full simplex).

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{ensure, Error, Result};

/// Values below this are treated as zero in entropy terms.
pub const ZERO_FLOOR: f64 = 1e-300;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of times a simplex output had to be floored at [`ZERO_FLOOR`].
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeasibleSet {
    UnitBall,
    Simplex,
    TruncatedSimplex { lo: f64, hi: f64 },
    EuclideanBall { center: Vec<f64>, radius: f64 },
    AllSpace,
}

/// A dgf geometry: sets, `r`, `∇r`, the conjugate map onto U and `V`.
pub trait DgfSetup: Sync {
    fn dim(&self) -> usize;

    /// Description of the dual feasible set Y.
    fn feasible_set(&self) -> FeasibleSet;

    /// Strong convexity of `r` in the setup's norm.
    fn mu_r(&self) -> f64;

    fn r_value(&self, u: &[f64]) -> Result<f64>;

    fn r_grad(&self, u: &[f64]) -> Result<Vec<f64>>;

    /// `∇r*_U(θ) = argmax_{u ∈ U} ⟨θ,u⟩ − r(u)`.
    fn conjugate_grad(&self, theta: &[f64]) -> Result<Vec<f64>>;

    /// Bregman divergence `V_center(point)`.
    fn divergence(&self, center: &[f64], point: &[f64]) -> Result<f64>;

    /// Whether `u` lies in the interior of the dgf domain.
    fn is_interior(&self, u: &[f64]) -> bool {
        u.iter().all(|v| v.is_finite())
    }

    /// `∇r*_U((1/Λ) Σ λ_j ∇r(y_j))`, the minimizer of `Σ λ_j V_{y_j}(·)` over U.
    fn aggregate_center(&self, centers: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
        let theta = weighted_mean_map(self.dim(), centers, weights, |y| self.r_grad(y))?;
        self.conjugate_grad(&theta)
    }
}

fn weighted_mean_map<F>(dim: usize, centers: &[Vec<f64>], weights: &[f64], map: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    ensure(!centers.is_empty(), || "no centers".into())?;
    ensure(centers.len() == weights.len(), || {
        format!("{} centers but {} weights", centers.len(), weights.len())
    })?;
    ensure(weights.iter().all(|&w| w > 0.0 && w.is_finite()), || {
        "weights must be positive".into()
    })?;
    let total: f64 = weights.iter().sum();
    let mut acc = vec![0.0; dim];
    for (c, &w) in centers.iter().zip(weights) {
        ensure(c.len() == dim, || format!("center of length {} in dimension {dim}", c.len()))?;
        let g = map(c)?;
        for (a, gi) in acc.iter_mut().zip(&g) {
            *a += (w / total) * gi;
        }
    }
    Ok(acc)
}

/// Free function form of [`DgfSetup::aggregate_center`].
pub fn aggregate_center<S: DgfSetup + ?Sized>(
    setup: &S,
    centers: &[Vec<f64>],
    weights: &[f64],
) -> Result<Vec<f64>> {
    setup.aggregate_center(centers, weights)
}

#[derive(Clone, Debug)]
pub struct EuclideanSetup {
    pub dim: usize,
}

impl EuclideanSetup {
    pub fn new(dim: usize) -> Self {
        EuclideanSetup { dim }
    }
}

impl DgfSetup for EuclideanSetup {
    fn dim(&self) -> usize {
        self.dim
    }

    fn feasible_set(&self) -> FeasibleSet {
        FeasibleSet::AllSpace
    }

    fn mu_r(&self) -> f64 {
        1.0
    }

    fn r_value(&self, u: &[f64]) -> Result<f64> {
        Ok(0.5 * crate::linalg::dot(u, u))
    }

    fn r_grad(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(u.to_vec())
    }

    fn conjugate_grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(theta.to_vec())
    }

    fn divergence(&self, center: &[f64], point: &[f64]) -> Result<f64> {
        ensure(center.len() == point.len(), || "dimension mismatch".into())?;
        let d = crate::linalg::dist2(center, point);
        Ok(0.5 * d * d)
    }

    fn aggregate_center(&self, centers: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
        weighted_mean_map(self.dim, centers, weights, |y| Ok(y.to_vec()))
    }
}

/// Negative entropy on the n-simplex, with optional box bounds on Y.
#[derive(Clone, Debug)]
pub struct EntropySimplexSetup {
    pub dim: usize,
    pub bounds: Option<(f64, f64)>,
}

impl EntropySimplexSetup {
    pub fn new(dim: usize) -> Result<Self> {
        ensure(dim >= 1, || "simplex dimension must be positive".into())?;
        Ok(EntropySimplexSetup { dim, bounds: None })
    }

    /// Simplex with `lo ≤ y_i ≤ hi`; requires `n·lo ≤ 1 ≤ n·hi`.
    pub fn truncated(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        ensure(dim >= 1, || "simplex dimension must be positive".into())?;
        let n = dim as f64;
        ensure(0.0 <= lo && lo <= hi, || format!("bad box [{lo}, {hi}]"))?;
        ensure(n * lo <= 1.0 + 1e-12 && n * hi >= 1.0 - 1e-12, || {
            format!("box [{lo}, {hi}] does not meet the simplex in dimension {dim}")
        })?;
        Ok(EntropySimplexSetup {
            dim,
            bounds: Some((lo, hi)),
        })
    }

    pub fn uniform(&self) -> Vec<f64> {
        vec![1.0 / self.dim as f64; self.dim]
    }
}

impl DgfSetup for EntropySimplexSetup {
    fn dim(&self) -> usize {
        self.dim
    }

    fn feasible_set(&self) -> FeasibleSet {
        match self.bounds {
            Some((lo, hi)) => FeasibleSet::TruncatedSimplex { lo, hi },
            None => FeasibleSet::Simplex,
        }
    }

    fn mu_r(&self) -> f64 {
        1.0
    }

    fn r_value(&self, u: &[f64]) -> Result<f64> {
        Ok(u.iter()
            .map(|&v| if v < ZERO_FLOOR { 0.0 } else { v * v.ln() })
            .sum())
    }

    fn r_grad(&self, u: &[f64]) -> Result<Vec<f64>> {
        u.iter()
            .map(|&v| {
                if v > 0.0 && v.is_finite() {
                    Ok(v.ln() + 1.0)
                } else {
                    Err(Error::Domain(format!("entropy gradient undefined at coordinate {v}")))
                }
            })
            .collect()
    }

    fn conjugate_grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        softmax(theta)
    }

    fn divergence(&self, center: &[f64], point: &[f64]) -> Result<f64> {
        kl_divergence(center, point)
    }

    fn is_interior(&self, u: &[f64]) -> bool {
        u.len() == self.dim && u.iter().all(|&v| v > 0.0 && v.is_finite())
    }

    fn aggregate_center(&self, centers: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
        weighted_geometric_center(centers, weights)
    }
}

fn check_finite(theta: &[f64]) -> Result<()> {
    ensure(!theta.is_empty(), || "empty vector".into())?;
    if theta.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN entry"));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("infinite entry"));
    }
    Ok(())
}

/// `ln Σ exp θ_i`, max-shifted.
pub fn log_sum_exp(theta: &[f64]) -> Result<f64> {
    check_finite(theta)?;
    let m = crate::linalg::max(theta);
    let s: f64 = theta.iter().map(|t| (t - m).exp()).sum();
    Ok(m + s.ln())
}

/// `exp θ_i / Σ exp θ_j`, max-shifted and floored at [`ZERO_FLOOR`].
pub fn softmax(theta: &[f64]) -> Result<Vec<f64>> {
    check_finite(theta)?;
    let m = crate::linalg::max(theta);
    let mut p: Vec<f64> = theta.iter().map(|t| (t - m).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    floor_and_renormalize(&mut p);
    Ok(p)
}

fn floor_and_renormalize(p: &mut [f64]) {
    let mut clamped = false;
    for v in p.iter_mut() {
        if *v < ZERO_FLOOR {
            *v = ZERO_FLOOR;
            clamped = true;
        }
    }
    if clamped {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
    }
}

/// `[q]_i ∝ Π_j [y_j]_i^{λ_j/Λ}`, computed in log space.
pub fn weighted_geometric_center(ys: &[Vec<f64>], lambdas: &[f64]) -> Result<Vec<f64>> {
    let dim = ys.first().map(|y| y.len()).unwrap_or(0);
    let theta = weighted_mean_map(dim, ys, lambdas, |y| {
        y.iter()
            .map(|&v| {
                if v > 0.0 {
                    Ok(v.ln())
                } else {
                    Err(Error::Domain("center has a zero coordinate".into()))
                }
            })
            .collect()
    })?;
    softmax(&theta)
}

/// `KL(w‖u) = Σ w_i ln(w_i/u_i)` with `0 ln 0 = 0`.
pub fn kl_divergence(u: &[f64], w: &[f64]) -> Result<f64> {
    ensure(u.len() == w.len(), || {
        format!("dimension mismatch: {} vs {}", u.len(), w.len())
    })?;
    let mut s = 0.0;
    for (&ui, &wi) in u.iter().zip(w) {
        if ui <= 0.0 {
            return Err(Error::Domain("divergence center has a zero coordinate".into()));
        }
        if wi >= ZERO_FLOOR {
            s += wi * (wi / ui).ln();
        }
    }
    Ok(s.max(0.0))
}
