//! Approximate critical points of smooth convex functions through the
//! Fenchel game `⟨x, y⟩ − f*(y)`, where `f` is `h` plus a small quadratic
//! anchored at the start point.
//!
//! [`find_critical_point`] runs the ball-shrinking scheme: at round `k` it
//! minimizes `f` over `B(w_k, R/(1+Λ_k))` to accuracy `ε_k/(1+Λ_k)`, with
//! `w_k` a weighted average of the previous iterates.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::accel::{self, AccelOptions, Geometry};
use crate::error::{ensure, Error, Result};
use crate::linalg::{self, dot, norm2};
use crate::setups::{DgfSetup, FeasibleSet};

pub type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A β-smooth convex function with a counted gradient oracle.
///
/// Clones share the counter.
#[derive(Clone)]
pub struct SmoothFnOracle {
    dim: usize,
    value: ValueFn,
    grad: GradFn,
    /// Smoothness in the Euclidean norm.
    pub beta: f64,
    /// Known strong convexity modulus (0 when none is known).
    pub strong_convexity: f64,
    counter: Arc<AtomicU64>,
}

impl fmt::Debug for SmoothFnOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothFnOracle")
            .field("dim", &self.dim)
            .field("beta", &self.beta)
            .field("strong_convexity", &self.strong_convexity)
            .field("queries", &self.queries())
            .finish()
    }
}

impl SmoothFnOracle {
    pub fn new<V, G>(dim: usize, beta: f64, value: V, grad: G) -> Result<Self>
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        ensure(dim >= 1, || "dimension must be positive".into())?;
        ensure(beta > 0.0 && beta.is_finite(), || format!("smoothness must be positive, got {beta}"))?;
        Ok(SmoothFnOracle {
            dim,
            value: Arc::new(value),
            grad: Arc::new(grad),
            beta,
            strong_convexity: 0.0,
            counter: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn with_strong_convexity(mut self, mu: f64) -> Self {
        self.strong_convexity = mu;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    /// Counted gradient call.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.counter.fetch_add(1, Ordering::Relaxed);
        (self.grad)(x)
    }

    pub fn queries(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }
}

/// Target, start point and suboptimality bound for [`find_critical_point`].
#[derive(Clone, Debug, PartialEq)]
pub struct CritConfig {
    pub gamma: f64,
    pub x0: Vec<f64>,
    /// Upper bound on `h(x₀) − inf h`.
    pub delta: f64,
}

impl CritConfig {
    /// Requires `0 < γ < √(2βΔ)`.
    pub fn new(h: &SmoothFnOracle, gamma: f64, x0: Vec<f64>, delta: f64) -> Result<Self> {
        ensure(x0.len() == h.dim(), || "start point has the wrong dimension".into())?;
        ensure(delta > 0.0 && delta.is_finite(), || format!("Delta must be positive, got {delta}"))?;
        let ceiling = (2.0 * h.beta * delta).sqrt();
        ensure(gamma > 0.0 && gamma < ceiling, || {
            format!("gamma must lie in (0, {ceiling}), got {gamma}")
        })?;
        Ok(CritConfig { gamma, x0, delta })
    }

    /// `R = 5Δ/γ`.
    pub fn radius(&self) -> f64 {
        5.0 * self.delta / self.gamma
    }

    /// Weight `γ²/(8Δ)` of the added quadratic (its strong convexity).
    pub fn regularization(&self) -> f64 {
        self.gamma * self.gamma / (8.0 * self.delta)
    }

    /// Smallest `K ≥ 1` with `2√(βΔ)/1.5^K ≤ γ/8`.
    pub fn rounds(&self, beta: f64) -> usize {
        let ratio = 16.0 * (beta * self.delta).sqrt() / self.gamma;
        let k = ratio.ln() / 1.5f64.ln();
        let snapped = if (k - k.round()).abs() <= 1e-9 * k.abs().max(1.0) {
            k.round()
        } else {
            k.ceil()
        };
        (snapped.max(1.0)) as usize
    }
}

/// `f(x) = h(x) + γ²/(16Δ)‖x − x₀‖²`; every gradient call on `f` makes
/// exactly one gradient call on `h`.
pub fn build_regularized(h: &SmoothFnOracle, cfg: &CritConfig) -> SmoothFnOracle {
    let mu = cfg.regularization();
    let (hv, hg) = (h.clone(), h.clone());
    let (x0v, x0g) = (cfg.x0.clone(), cfg.x0.clone());
    let value = move |x: &[f64]| {
        let d = linalg::dist2(x, &x0v);
        hv.value(x) + 0.5 * mu * d * d
    };
    let grad = move |x: &[f64]| {
        let mut g = hg.grad(x);
        for ((gi, xi), oi) in g.iter_mut().zip(x).zip(&x0g) {
            *gi += mu * (xi - oi);
        }
        g
    };
    SmoothFnOracle {
        dim: h.dim,
        value: Arc::new(value),
        grad: Arc::new(grad),
        beta: h.beta + mu,
        strong_convexity: h.strong_convexity + mu,
        counter: Arc::new(AtomicU64::new(0)),
    }
}

/// Result of one ball-constrained solve.
#[derive(Clone, Debug)]
pub struct CgmOutcome {
    pub z: Vec<f64>,
    pub value: f64,
    pub gap: f64,
    pub queries: u64,
}

/// Default multiplier of the subsolver query budget.
pub const DEFAULT_C_CGM: f64 = 50.0;

/// `⌊c·(1 + √(βζ²/ε))⌋`.
pub fn cgm_budget(c_cgm: f64, beta: f64, zeta: f64, eps: f64) -> u64 {
    (c_cgm * (1.0 + (beta * zeta * zeta / eps).sqrt())).floor() as u64
}

/// ε-minimizer of `f` over `B(w, ζ)` by the accelerated method, stopped by its
/// certified gap and held to at most `cgm_budget(c_cgm, β, ζ, ε)` gradient calls.
pub fn cgm(f: &SmoothFnOracle, zeta: f64, w: &[f64], eps: f64, c_cgm: f64) -> Result<CgmOutcome> {
    ensure(zeta > 0.0 && eps > 0.0, || "radius and accuracy must be positive".into())?;
    ensure(w.len() == f.dim(), || "center has the wrong dimension".into())?;
    let budget = cgm_budget(c_cgm, f.beta, zeta, eps);
    let before = f.queries();
    let geom = Geometry::Ball {
        center: w.to_vec(),
        radius: zeta,
    };
    let mut opts = AccelOptions::new(f.beta, eps);
    opts.strong_convexity = f.strong_convexity;
    opts.max_grads = Some(budget);
    opts.start = Some(w.to_vec());
    let mut obj = (
        |x: &[f64]| f.value(x),
        |x: &[f64]| {
            let g = f.grad(x);
            (f.value(x), g)
        },
    );
    match accel::minimize(&mut obj, &geom, &opts) {
        Ok(out) => Ok(CgmOutcome {
            z: out.x,
            value: out.value,
            gap: out.gap,
            queries: f.queries() - before,
        }),
        Err(Error::Budget {
            best_gap, best_point, ..
        }) => Err(Error::Budget {
            what: "ball subsolver",
            budget,
            best_gap,
            best_point,
        }),
        Err(e) => Err(e),
    }
}

/// Minimizes `f` over a ball to a given accuracy.
pub trait BallSubsolver {
    fn solve(&mut self, f: &SmoothFnOracle, zeta: f64, w: &[f64], eps: f64) -> Result<Vec<f64>>;
}

/// [`cgm`] with a fixed budget multiplier.
#[derive(Clone, Copy, Debug)]
pub struct Cgm {
    pub c_cgm: f64,
}

impl Default for Cgm {
    fn default() -> Self {
        Cgm { c_cgm: DEFAULT_C_CGM }
    }
}

impl BallSubsolver for Cgm {
    fn solve(&mut self, f: &SmoothFnOracle, zeta: f64, w: &[f64], eps: f64) -> Result<Vec<f64>> {
        cgm(f, zeta, w, eps, self.c_cgm).map(|o| o.z)
    }
}

impl<F> BallSubsolver for F
where
    F: FnMut(&SmoothFnOracle, f64, &[f64], f64) -> Result<Vec<f64>>,
{
    fn solve(&mut self, f: &SmoothFnOracle, zeta: f64, w: &[f64], eps: f64) -> Result<Vec<f64>> {
        self(f, zeta, w, eps)
    }
}

#[derive(Clone, Debug)]
pub struct CritRound {
    pub k: usize,
    pub center: Vec<f64>,
    pub radius: f64,
    pub eps: f64,
    pub queries: u64,
}

#[derive(Clone, Debug)]
pub struct CritResult {
    pub z: Vec<f64>,
    /// `‖∇h(z)‖₂`, evaluated at return.
    pub grad_norm: f64,
    /// Gradient calls on `h`, including the final check.
    pub queries: u64,
    pub rounds: Vec<CritRound>,
    /// All iterates `z_0, …, z_K`.
    pub iterates: Vec<Vec<f64>>,
}

/// `λ_j = 2^j/32`.
pub fn crit_lambda(j: usize) -> f64 {
    2f64.powi(j as i32) / 32.0
}

/// `ε_k = Δ/(64·1.5^k)`.
pub fn crit_eps(delta: f64, k: usize) -> f64 {
    delta / (64.0 * 1.5f64.powi(k as i32))
}

pub fn find_critical_point(h: &SmoothFnOracle, cfg: &CritConfig) -> Result<CritResult> {
    find_critical_point_with(h, cfg, &mut Cgm::default())
}

/// Ball-shrinking scheme with a caller-supplied subsolver.
pub fn find_critical_point_with<S: BallSubsolver + ?Sized>(
    h: &SmoothFnOracle,
    cfg: &CritConfig,
    subsolver: &mut S,
) -> Result<CritResult> {
    ensure(cfg.x0.len() == h.dim(), || "start point has the wrong dimension".into())?;
    let before = h.queries();
    let f = build_regularized(h, cfg);
    let r = cfg.radius();
    let k_total = cfg.rounds(h.beta);
    let mut zs = vec![cfg.x0.clone()];
    let mut weighted = vec![0.0; h.dim()];
    let mut big_lambda = 0.0;
    let mut rounds = Vec::with_capacity(k_total);
    for k in 1..=k_total {
        linalg::axpy(&mut weighted, crit_lambda(k - 1), &zs[k - 1]);
        big_lambda += crit_lambda(k - 1);
        let w: Vec<f64> = weighted
            .iter()
            .zip(&cfg.x0)
            .map(|(s, o)| (o + s) / (1.0 + big_lambda))
            .collect();
        let zeta = r / (1.0 + big_lambda);
        let eps = crit_eps(cfg.delta, k) / (1.0 + big_lambda);
        let start = h.queries();
        let z = subsolver.solve(&f, zeta, &w, eps).map_err(|e| e.at_round(k))?;
        rounds.push(CritRound {
            k,
            center: w,
            radius: zeta,
            eps,
            queries: h.queries() - start,
        });
        zs.push(z);
    }
    let z = zs.last().expect("at least one round").clone();
    let grad_norm = norm2(&h.grad(&z));
    Ok(CritResult {
        z,
        grad_norm,
        queries: h.queries() - before,
        rounds,
        iterates: zs,
    })
}

/// `∇g((x + λ∇g*(q))/(1+λ))`, the maximizer of
/// `⟨x, y⟩ − g*(y) − λV^{g*}_q(y)`.
pub fn fenchel_drbr<G, C>(g_grad: G, g_conj_grad: C, q: &[f64], lambda: f64, x: &[f64]) -> Vec<f64>
where
    G: Fn(&[f64]) -> Vec<f64>,
    C: Fn(&[f64]) -> Vec<f64>,
{
    let c = g_conj_grad(q);
    let p: Vec<f64> = x
        .iter()
        .zip(&c)
        .map(|(xi, ci)| (xi + lambda * ci) / (1.0 + lambda))
        .collect();
    g_grad(&p)
}

/// `‖y‖ ≤ εγ/Δ + 1e-9`, which every ε-optimal dual point satisfies.
pub fn verify_dual_norm_bound(y: &[f64], eps: f64, cfg: &CritConfig) -> bool {
    norm2(y) <= eps * cfg.gamma / cfg.delta + 1e-9
}

/// The dgf `f*` on all of ℝᵈ: `∇r = ∇f*` and the conjugate map is `∇f`.
#[derive(Clone)]
pub struct FenchelSetup {
    pub dim: usize,
    /// Strong convexity of `f*`, i.e. `1/β` for β-smooth `f`.
    pub mu: f64,
    pub conj_value: ValueFn,
    pub conj_grad: GradFn,
    pub grad: GradFn,
}

impl fmt::Debug for FenchelSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FenchelSetup")
            .field("dim", &self.dim)
            .field("mu", &self.mu)
            .finish()
    }
}

impl DgfSetup for FenchelSetup {
    fn dim(&self) -> usize {
        self.dim
    }

    fn feasible_set(&self) -> FeasibleSet {
        FeasibleSet::AllSpace
    }

    fn mu_r(&self) -> f64 {
        self.mu
    }

    fn r_value(&self, u: &[f64]) -> Result<f64> {
        Ok((self.conj_value)(u))
    }

    fn r_grad(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok((self.conj_grad)(u))
    }

    fn conjugate_grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok((self.grad)(theta))
    }

    fn divergence(&self, center: &[f64], point: &[f64]) -> Result<f64> {
        ensure(center.len() == point.len(), || "dimension mismatch".into())?;
        let g = (self.conj_grad)(center);
        let v = (self.conj_value)(point) - (self.conj_value)(center) - dot(&g, &linalg::sub(point, center));
        Ok(v.max(0.0))
    }
}

/// `q(x) = ½(x − m)ᵀP(x − m) + c` with symmetric positive definite `P`.
#[derive(Clone, Debug)]
pub struct QuadraticFn {
    pub p: DMatrix<f64>,
    pub center: Vec<f64>,
    pub offset: f64,
    p_inv: DMatrix<f64>,
    max_eig: f64,
    min_eig: f64,
}

impl QuadraticFn {
    pub fn new(p: DMatrix<f64>, center: Vec<f64>, offset: f64) -> Result<Self> {
        let d = center.len();
        ensure(p.nrows() == d && p.ncols() == d, || "matrix and center disagree on dimension".into())?;
        ensure((&p - p.transpose()).amax() <= 1e-10 * (1.0 + p.amax()), || "matrix must be symmetric".into())?;
        let eig = p.clone().symmetric_eigen().eigenvalues;
        let (min_eig, max_eig) = (eig.min(), eig.max());
        ensure(min_eig > 0.0, || format!("matrix must be positive definite, smallest eigenvalue {min_eig}"))?;
        let p_inv = p
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("Cholesky factorization failed".into()))?
            .inverse();
        Ok(QuadraticFn {
            p,
            center,
            offset,
            p_inv,
            max_eig,
            min_eig,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn beta(&self) -> f64 {
        self.max_eig
    }

    pub fn min_eig(&self) -> f64 {
        self.min_eig
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let d = linalg::sub(x, &self.center);
        0.5 * dot(&d, &linalg::mat_vec(&self.p, &d)) + self.offset
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        linalg::mat_vec(&self.p, &linalg::sub(x, &self.center))
    }

    /// `q*(y) = ⟨m, y⟩ + ½yᵀP⁻¹y − c`.
    pub fn conj_value(&self, y: &[f64]) -> f64 {
        dot(&self.center, y) + 0.5 * dot(y, &linalg::mat_vec(&self.p_inv, y)) - self.offset
    }

    pub fn conj_grad(&self, y: &[f64]) -> Vec<f64> {
        linalg::add(&self.center, &linalg::mat_vec(&self.p_inv, y))
    }

    /// Counted oracle with `β = λ_max(P)`.
    pub fn oracle(&self) -> SmoothFnOracle {
        let (a, b) = (self.clone(), self.clone());
        SmoothFnOracle::new(self.dim(), self.beta(), move |x| a.value(x), move |x| b.grad(x))
            .expect("positive definite quadratic")
            .with_strong_convexity(self.min_eig)
    }

    /// `q + (μ/2)‖· − x₀‖²` in closed form.
    pub fn plus_proximal(&self, mu: f64, x0: &[f64]) -> Result<QuadraticFn> {
        let d = self.dim();
        let p2 = &self.p + DMatrix::identity(d, d) * mu;
        let rhs = DVector::from_vec(linalg::add(&linalg::mat_vec(&self.p, &self.center), &linalg::scale(x0, mu)));
        let m2 = p2
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("Cholesky factorization failed".into()))?
            .solve(&rhs);
        let m2: Vec<f64> = m2.iter().copied().collect();
        let d0 = linalg::dist2(&m2, x0);
        let offset = self.value(&m2) + 0.5 * mu * d0 * d0;
        QuadraticFn::new(p2, m2, offset)
    }

    /// The Fenchel dgf `q*`.
    pub fn fenchel_setup(&self) -> FenchelSetup {
        let (a, b, c) = (self.clone(), self.clone(), self.clone());
        FenchelSetup {
            dim: self.dim(),
            mu: 1.0 / self.max_eig,
            conj_value: Arc::new(move |y| a.conj_value(y)),
            conj_grad: Arc::new(move |y| b.conj_grad(y)),
            grad: Arc::new(move |x| c.grad(x)),
        }
    }
}

/// `h(x) = (1/m) Σ ln(1 + exp(−l_i⟨a_i, x⟩)) + (ρ/2)‖x‖²`.
#[derive(Clone, Debug)]
pub struct LogisticSum {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub ridge: f64,
}

impl LogisticSum {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>, ridge: f64) -> Result<Self> {
        ensure(!features.is_empty() && features.len() == labels.len(), || {
            "need one label per data row".into()
        })?;
        let d = features[0].len();
        ensure(d >= 1 && features.iter().all(|r| r.len() == d), || "ragged feature matrix".into())?;
        ensure(ridge >= 0.0, || "ridge must be nonnegative".into())?;
        Ok(LogisticSum {
            features,
            labels,
            ridge,
        })
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    /// `‖A‖²/(4m) + ρ`, using the Frobenius norm.
    pub fn beta(&self) -> f64 {
        let fro: f64 = self.features.iter().map(|r| dot(r, r)).sum();
        fro / (4.0 * self.features.len() as f64) + self.ridge
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let m = self.features.len() as f64;
        let loss: f64 = self
            .features
            .iter()
            .zip(&self.labels)
            .map(|(a, l)| softplus(-l * dot(a, x)))
            .sum();
        loss / m + 0.5 * self.ridge * dot(x, x)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let m = self.features.len() as f64;
        let mut g = linalg::scale(x, self.ridge);
        for (a, l) in self.features.iter().zip(&self.labels) {
            let s = -l * sigmoid(-l * dot(a, x));
            linalg::axpy(&mut g, s / m, a);
        }
        g
    }

    pub fn oracle(&self) -> Result<SmoothFnOracle> {
        let (a, b) = (self.clone(), self.clone());
        Ok(SmoothFnOracle::new(self.dim(), self.beta(), move |x| a.value(x), move |x| b.grad(x))?
            .with_strong_convexity(self.ridge))
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}
