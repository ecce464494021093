//! CVaR-at-level-α distributionally robust optimization.
//!
//! The dual player weights the `n` losses with `y` in the truncated set
//! `{y ∈ Δⁿ : lo ≤ y_i ≤ hi}`, `lo = ε/(4nM)`, `hi = 1/(αn)`. The primal
//! oracle is projected SGD driven by a multilevel Monte Carlo estimate of the
//! gradient of a batch surrogate of `f_{λ,q}`; the best response is an exact
//! entropic projection onto the box-constrained simplex.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use rand_distr::{Binomial, Distribution};

use crate::accel::{self, AccelOptions, Geometry};
use crate::error::{ensure, Error, Result};
use crate::exec::Rng;
use crate::framework::{
    run_dual_extraction_with, schedule_log_rounds, DualOracles, ExtractionResult, Retention,
};
use crate::linalg::{self, dot, norm2};
use crate::setups::{log_sum_exp, EntropySimplexSetup};

/// First-order access to the losses `f_1, …, f_n`.
pub trait LossOracle: Sync {
    fn n(&self) -> usize;
    fn dim(&self) -> usize;
    /// `(f_i(x), a subgradient of f_i at x)`.
    fn eval(&self, i: usize, x: &[f64]) -> (f64, Vec<f64>);
    /// Smoothness constant shared by all losses, if they are smooth.
    fn smoothness(&self) -> Option<f64> {
        None
    }
    /// Closed form of `min_{x ∈ X} Σ y_i f_i(x)`, if one exists.
    fn weighted_min(&self, _y: &[f64], _set: &PrimalSet) -> Option<f64> {
        None
    }
}

/// `f_i(x) = ⟨a_i, x⟩ + b_i`.
#[derive(Clone, Debug)]
pub struct AffineLosses {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl AffineLosses {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        ensure(!a.is_empty() && a.len() == b.len(), || "need one offset per loss".into())?;
        let d = a[0].len();
        ensure(a.iter().all(|r| r.len() == d), || "ragged loss matrix".into())?;
        Ok(AffineLosses { a, b })
    }

    /// `Σ y_i a_i`.
    pub fn combination(&self, y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for (yi, ai) in y.iter().zip(&self.a) {
            linalg::axpy(&mut g, *yi, ai);
        }
        g
    }

    pub fn lipschitz(&self) -> f64 {
        self.a.iter().map(|r| norm2(r)).fold(0.0, f64::max)
    }
}

impl LossOracle for AffineLosses {
    fn n(&self) -> usize {
        self.a.len()
    }

    fn dim(&self) -> usize {
        self.a[0].len()
    }

    fn eval(&self, i: usize, x: &[f64]) -> (f64, Vec<f64>) {
        (dot(&self.a[i], x) + self.b[i], self.a[i].clone())
    }

    fn smoothness(&self) -> Option<f64> {
        Some(0.0)
    }

    fn weighted_min(&self, y: &[f64], set: &PrimalSet) -> Option<f64> {
        let g = self.combination(y);
        let offset = dot(y, &self.b);
        Some(match set {
            PrimalSet::Ball { center, radius } => offset + dot(&g, center) - radius * norm2(&g),
            PrimalSet::Box { lo, hi } => {
                offset
                    + g.iter()
                        .zip(lo.iter().zip(hi))
                        .map(|(gk, (l, h))| (gk * l).min(gk * h))
                        .sum::<f64>()
            }
        })
    }
}

/// `f_i(x) = (c_i/2)‖x − z_i‖² + o_i`.
#[derive(Clone, Debug)]
pub struct QuadraticLosses {
    pub centers: Vec<Vec<f64>>,
    pub curvatures: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl LossOracle for QuadraticLosses {
    fn n(&self) -> usize {
        self.centers.len()
    }

    fn dim(&self) -> usize {
        self.centers[0].len()
    }

    fn eval(&self, i: usize, x: &[f64]) -> (f64, Vec<f64>) {
        let diff = linalg::sub(x, &self.centers[i]);
        let c = self.curvatures[i];
        (0.5 * c * dot(&diff, &diff) + self.offsets[i], linalg::scale(&diff, c))
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.curvatures.iter().copied().fold(0.0, f64::max))
    }
}

/// Primal feasible set.
#[derive(Clone, Debug, PartialEq)]
pub enum PrimalSet {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl PrimalSet {
    pub fn dim(&self) -> usize {
        match self {
            PrimalSet::Ball { center, .. } => center.len(),
            PrimalSet::Box { lo, .. } => lo.len(),
        }
    }

    /// Euclidean diameter `R`.
    pub fn diameter(&self) -> f64 {
        match self {
            PrimalSet::Ball { radius, .. } => 2.0 * radius,
            PrimalSet::Box { lo, hi } => linalg::dist2(lo, hi),
        }
    }

    pub fn center(&self) -> Vec<f64> {
        match self {
            PrimalSet::Ball { center, .. } => center.clone(),
            PrimalSet::Box { lo, hi } => linalg::lerp(lo, hi, 0.5),
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        match self {
            PrimalSet::Ball { center, radius } => linalg::project_ball(x, center, *radius),
            PrimalSet::Box { lo, hi } => linalg::project_box(x, lo, hi),
        }
    }

    pub fn geometry(&self) -> Geometry {
        match self {
            PrimalSet::Ball { center, radius } => Geometry::Ball {
                center: center.clone(),
                radius: *radius,
            },
            PrimalSet::Box { lo, hi } => Geometry::Box {
                lo: lo.clone(),
                hi: hi.clone(),
            },
        }
    }
}

/// A CVaR instance. Every loss evaluation goes through [`CvarProblem::query`]
/// and is counted.
#[derive(Debug)]
pub struct CvarProblem<L> {
    pub losses: L,
    pub alpha: f64,
    pub set: PrimalSet,
    /// Range bound: `f_i(x) ∈ [0, M]` on the primal set.
    pub m: f64,
    /// Lipschitz constant of every loss.
    pub g: f64,
    pub eps: f64,
    queries: AtomicU64,
}

impl<L: LossOracle> CvarProblem<L> {
    pub fn new(losses: L, alpha: f64, set: PrimalSet, m: f64, g: f64, eps: f64) -> Result<Self> {
        let n = losses.n();
        ensure(n >= 1, || "need at least one loss".into())?;
        ensure(set.dim() == losses.dim(), || "primal set and losses disagree on dimension".into())?;
        ensure(m > 0.0 && g >= 0.0, || "M must be positive and G nonnegative".into())?;
        ensure(alpha >= 1.0 / n as f64 - 1e-12 && alpha <= 1.0, || {
            format!("alpha must lie in [1/n, 1], got {alpha}")
        })?;
        ensure(eps > 0.0 && eps < 4.0 * m, || format!("eps must lie in (0, 4M), got {eps}"))?;
        Ok(CvarProblem {
            losses,
            alpha,
            set,
            m,
            g,
            eps,
            queries: AtomicU64::new(0),
        })
    }

    pub fn n(&self) -> usize {
        self.losses.n()
    }

    /// `ε/(4nM)`.
    pub fn lo(&self) -> f64 {
        self.eps / (4.0 * self.n() as f64 * self.m)
    }

    /// `1/(αn)`.
    pub fn hi(&self) -> f64 {
        1.0 / (self.alpha * self.n() as f64)
    }

    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn query(&self, i: usize, x: &[f64]) -> (f64, Vec<f64>) {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.losses.eval(i, x)
    }

    /// All loss values at `x` (`n` queries).
    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|i| self.query(i, x).0).collect()
    }

    /// CVaR of the losses at `x`: `max Σ y_i f_i(x)` over `{y ∈ Δ : y_i ≤ 1/(αn)}`.
    pub fn primal_value(&self, x: &[f64]) -> f64 {
        linalg::max_linear_box_simplex(&self.values(x), 0.0, self.hi()).1
    }

    pub fn in_truncated_set(&self, y: &[f64], tol: f64) -> bool {
        let (lo, hi) = (self.lo(), self.hi());
        y.len() == self.n()
            && (y.iter().sum::<f64>() - 1.0).abs() <= tol
            && y.iter().all(|&v| v >= lo - tol && v <= hi + tol)
    }
}

/// Unique maximizer of `Σ y_i v_i − λ Σ y_i ln(y_i/q_i)` over
/// `{y ∈ Δⁿ : lo ≤ y_i ≤ hi}`.
pub fn truncated_entropic_response(v: &[f64], lambda: f64, q: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    let n = v.len();
    ensure(lo <= hi && n as f64 * lo <= 1.0 + 1e-12 && n as f64 * hi >= 1.0 - 1e-12, || {
        format!("box [{lo}, {hi}] does not meet the {n}-simplex")
    })?;
    boxed_entropic_response(v, lambda, q, &vec![lo; n], &vec![hi; n]).map(|(y, _)| y)
}

/// Per-coordinate box version of [`truncated_entropic_response`]; also
/// returns the multiplier `μ` of the simplex constraint.
///
/// With `s_i = ln q_i + v_i/λ − 1`, the solution is
/// `y_i = clip(exp(s_i − ν), lo_i, hi_i)` with `μ = λν`. The total mass is
/// monotone in `ν` and piecewise of the form `c + e^{−ν} C` between the
/// clipping breakpoints, so the root is located among the sorted breakpoints
/// and then solved in closed form.
pub fn boxed_entropic_response(
    v: &[f64],
    lambda: f64,
    q: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let n = v.len();
    ensure(n >= 1, || "empty loss vector".into())?;
    ensure(q.len() == n && lo.len() == n && hi.len() == n, || "dimension mismatch".into())?;
    ensure(lambda > 0.0 && lambda.is_finite(), || format!("lambda must be positive, got {lambda}"))?;
    ensure(q.iter().all(|&x| x > 0.0), || "center must be strictly positive".into())?;
    ensure(v.iter().all(|x| x.is_finite()), || "non-finite loss value".into())?;
    ensure(lo.iter().zip(hi).all(|(l, h)| 0.0 <= *l && l <= h && *h > 0.0), || "bad box".into())?;
    let lo_sum: f64 = lo.iter().sum();
    let hi_sum: f64 = hi.iter().sum();
    ensure(lo_sum <= 1.0 + 1e-12 && hi_sum >= 1.0 - 1e-12, || "box does not meet the simplex".into())?;

    let s: Vec<f64> = v.iter().zip(q).map(|(vi, qi)| qi.ln() + vi / lambda - 1.0).collect();
    let at = |nu: f64| -> Vec<f64> {
        s.iter()
            .zip(lo.iter().zip(hi))
            .map(|(si, (l, h))| (si - nu).exp().clamp(*l, *h))
            .collect()
    };
    let mass = |nu: f64| -> f64 { at(nu).iter().sum() };

    // y_i sits at hi_i for ν ≤ s_i − ln hi_i and at lo_i for ν ≥ s_i − ln lo_i
    let mut bps: Vec<f64> = Vec::with_capacity(2 * n);
    for i in 0..n {
        bps.push(s[i] - hi[i].ln());
        if lo[i] > 0.0 {
            bps.push(s[i] - lo[i].ln());
        }
    }
    bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bps.dedup();
    // largest breakpoint with mass ≥ 1 (the first one always qualifies)
    let (mut a, mut b) = (0usize, bps.len());
    while b - a > 1 {
        let mid = (a + b) / 2;
        if mass(bps[mid]) >= 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let left = bps[a];
    let right = bps.get(a + 1).copied();
    let probe = match right {
        Some(r) => 0.5 * (left + r),
        None => left + 1.0,
    };
    let mut fixed = 0.0;
    let mut free = Vec::new();
    for i in 0..n {
        let t = s[i] - probe;
        if t >= hi[i].ln() {
            fixed += hi[i];
        } else if lo[i] > 0.0 && t <= lo[i].ln() {
            fixed += lo[i];
        } else {
            free.push(i);
        }
    }
    let nu = if free.is_empty() || fixed >= 1.0 {
        left
    } else {
        let sf: Vec<f64> = free.iter().map(|&i| s[i]).collect();
        let nu = log_sum_exp(&sf)? - (1.0 - fixed).ln();
        match right {
            Some(r) => nu.clamp(left, r),
            None => nu.max(left),
        }
    };
    let mut y = at(nu);
    let total: f64 = y.iter().sum();
    let free_mass: f64 = free.iter().map(|&i| y[i]).sum();
    if free_mass > 0.0 {
        let scale = 1.0 + (1.0 - total) / free_mass;
        for &i in &free {
            y[i] = (y[i] * scale).clamp(lo[i], hi[i]);
        }
    }
    let total: f64 = y.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Convergence {
            what: "entropic response",
            iterations: bps.len(),
            best_gap: (total - 1.0).abs(),
        });
    }
    Ok((y, lambda * nu))
}

/// Regularization of the primal oracle: center `q` and weight `λ`.
#[derive(Clone, Copy, Debug)]
pub struct Regularization<'a> {
    pub q: &'a [f64],
    pub lambda: f64,
}

/// Multinomial counts of `m` uniform draws from `0..n`, as sorted
/// `(index, count)` pairs with positive counts.
pub fn sample_counts(n: usize, m: u64, rng: &mut Rng) -> Vec<(usize, u64)> {
    if m <= 4 * n as u64 {
        let mut c: BTreeMap<usize, u64> = BTreeMap::new();
        for _ in 0..m {
            *c.entry(rng.gen_range(0..n)).or_default() += 1;
        }
        return c.into_iter().collect();
    }
    let mut out = Vec::new();
    let mut rem = m;
    for i in 0..n {
        if rem == 0 {
            break;
        }
        let left = (n - i) as f64;
        let c = if i + 1 == n {
            rem
        } else {
            Binomial::new(rem, 1.0 / left).expect("valid binomial").sample(rng)
        };
        if c > 0 {
            out.push((i, c));
        }
        rem -= c;
    }
    out
}

/// Cached first-order information for one estimator draw.
struct EvalCache {
    entries: Vec<Option<(f64, Vec<f64>)>>,
}

impl EvalCache {
    fn new(n: usize) -> Self {
        EvalCache {
            entries: vec![None; n],
        }
    }

    fn get<L: LossOracle>(&mut self, problem: &CvarProblem<L>, i: usize, x: &[f64]) -> &(f64, Vec<f64>) {
        if self.entries[i].is_none() {
            self.entries[i] = Some(problem.query(i, x));
        }
        self.entries[i].as_ref().expect("filled above")
    }
}

fn batch_gradient_cached<L: LossOracle>(
    problem: &CvarProblem<L>,
    reg: Regularization<'_>,
    x: &[f64],
    counts: &[(usize, u64)],
    cache: &mut EvalCache,
) -> Result<Vec<f64>> {
    let m: u64 = counts.iter().map(|c| c.1).sum();
    let floor = problem.eps / (4.0 * problem.m);
    let cap = 1.0 / problem.alpha;
    let mut v = Vec::with_capacity(counts.len());
    let mut prior = Vec::with_capacity(counts.len());
    for &(i, c) in counts {
        let fi = cache.get(problem, i, x).0;
        v.push(fi + reg.lambda * reg.q[i].ln());
        prior.push(c as f64 / m as f64);
    }
    let lo: Vec<f64> = prior.iter().map(|p| p * floor).collect();
    let hi: Vec<f64> = prior.iter().map(|p| p * cap).collect();
    let (w, _) = boxed_entropic_response(&v, reg.lambda, &prior, &lo, &hi)?;
    let mut g = vec![0.0; x.len()];
    for (&(i, _), wi) in counts.iter().zip(&w) {
        let gi = &cache.get(problem, i, x).1;
        linalg::axpy(&mut g, *wi, gi);
    }
    Ok(g)
}

/// Gradient of the batch objective
/// `max_w Σ_s w_s f̃_{i_s}(x) − λ Σ_s w_s ln(m w_s)` for the multiset given by
/// `counts`, with per-sample box `[ε/(4Mm), 1/(αm)]`, `f̃_i = f_i + λ ln q_i`.
pub fn batch_gradient<L: LossOracle>(
    problem: &CvarProblem<L>,
    reg: Regularization<'_>,
    x: &[f64],
    counts: &[(usize, u64)],
) -> Result<Vec<f64>> {
    let mut cache = EvalCache::new(problem.n());
    batch_gradient_cached(problem, reg, x, counts, &mut cache)
}

/// Base batch size of the estimator.
pub const MLMC_BASE_BATCH: u64 = 2;

/// Multilevel Monte Carlo estimate of the gradient of the size-`n_prime`
/// batch surrogate: a base batch of 2 plus one level `J ∈ {1..log₂(n′/2)}`,
/// `P(J = j) ∝ 2^{−j}`, contributing the reweighted difference between the
/// full batch of size `2^{J+1}` and the mean of its two halves.
pub fn mlmc_gradient<L: LossOracle>(
    problem: &CvarProblem<L>,
    reg: Regularization<'_>,
    x: &[f64],
    n_prime: u64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    ensure(n_prime >= MLMC_BASE_BATCH && n_prime.is_power_of_two(), || {
        format!("batch size must be a power of two at least 2, got {n_prime}")
    })?;
    ensure(reg.q.len() == problem.n(), || "center has the wrong length".into())?;
    let n = problem.n();
    let mut cache = EvalCache::new(n);
    let base = sample_counts(n, MLMC_BASE_BATCH, rng);
    let mut g = batch_gradient_cached(problem, reg, x, &base, &mut cache)?;
    let levels = (n_prime / MLMC_BASE_BATCH).trailing_zeros();
    if levels == 0 {
        return Ok(g);
    }
    let norm = 1.0 - 0.5f64.powi(levels as i32);
    let u: f64 = rng.gen::<f64>() * norm;
    let mut acc = 0.0;
    let mut j = levels;
    for l in 1..=levels {
        acc += 0.5f64.powi(l as i32);
        if u < acc {
            j = l;
            break;
        }
    }
    let p_j = 0.5f64.powi(j as i32) / norm;
    let half = MLMC_BASE_BATCH << (j - 1);
    let first = sample_counts(n, half, rng);
    let second = sample_counts(n, half, rng);
    let mut merged: BTreeMap<usize, u64> = BTreeMap::new();
    for &(i, c) in first.iter().chain(&second) {
        *merged.entry(i).or_default() += c;
    }
    let full: Vec<(usize, u64)> = merged.into_iter().collect();
    let g_full = batch_gradient_cached(problem, reg, x, &full, &mut cache)?;
    let g_a = batch_gradient_cached(problem, reg, x, &first, &mut cache)?;
    let g_b = batch_gradient_cached(problem, reg, x, &second, &mut cache)?;
    for k in 0..g.len() {
        g[k] += (g_full[k] - 0.5 * (g_a[k] + g_b[k])) / p_j;
    }
    Ok(g)
}

/// Knobs of the stochastic primal oracle.
#[derive(Clone, Debug)]
pub struct DrpoCvarConfig {
    /// Multiplier on the surrogate batch-size rule.
    pub n_prime_multiplier: f64,
    /// Upper bound on `log₂ n′`.
    pub max_log2_n_prime: u32,
    /// Second-moment bound `σ̂`; estimated from pilot draws when `None`.
    pub sigma: Option<f64>,
    pub pilot_draws: usize,
    /// Cap on SGD steps; the rate-derived count is truncated to this.
    pub max_iters: usize,
    pub min_iters: usize,
    /// Fail instead of truncating when the rate asks for more than `max_iters`.
    pub strict_budget: bool,
    /// Largest allowed `1/q_i`; defaults to `4n²M/ε`.
    pub q_inv_cap: Option<f64>,
    /// Largest allowed `λ`; unchecked when `None`.
    pub lambda_cap: Option<f64>,
}

impl Default for DrpoCvarConfig {
    fn default() -> Self {
        DrpoCvarConfig {
            n_prime_multiplier: 1.0,
            max_log2_n_prime: 62,
            sigma: None,
            pilot_draws: 32,
            max_iters: 4000,
            min_iters: 50,
            strict_budget: false,
            q_inv_cap: None,
            lambda_cap: None,
        }
    }
}

/// `M′ = M + λ max_i ln(1/q_i)`, the range of the shifted losses.
pub fn shifted_range(m: f64, reg: Regularization<'_>) -> f64 {
    let worst = reg.q.iter().map(|q| (1.0 / q).ln()).fold(0.0, f64::max);
    m + reg.lambda * worst
}

/// Surrogate batch size: the next power of two at least
/// `c·16 M′² ln(2 + n′₀)/(α ε′²)` with `n′₀ = 16 M′²/(α ε′²)`.
pub fn n_prime_rule(m_shift: f64, alpha: f64, eps_prime: f64, multiplier: f64, max_log2: u32) -> u64 {
    let base = 16.0 * m_shift * m_shift / (alpha * eps_prime * eps_prime);
    let target = multiplier * base * (2.0 + base).ln();
    let cap = 1u64 << max_log2.min(62);
    if !target.is_finite() || target >= cap as f64 {
        return cap;
    }
    (target.ceil().max(MLMC_BASE_BATCH as f64) as u64)
        .next_power_of_two()
        .min(cap)
}

#[derive(Clone, Debug)]
pub struct DrpoCvarReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Steps the rate bound asked for before truncation.
    pub requested_iterations: f64,
    pub n_prime: u64,
    pub sigma_hat: f64,
    pub queries: u64,
}

/// Stochastic primal oracle with the default configuration, started at the
/// center of the primal set.
pub fn drpo_cvar<L: LossOracle>(
    problem: &CvarProblem<L>,
    q: &[f64],
    lambda: f64,
    eps_prime: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    drpo_cvar_with(problem, q, lambda, eps_prime, rng, &DrpoCvarConfig::default(), None).map(|r| r.x)
}

/// Projected SGD on the surrogate with step `R/(σ̂√T)`, `T = ⌈(Rσ̂/ε′)²⌉`
/// (truncated to the configured cap); returns the average iterate.
pub fn drpo_cvar_with<L: LossOracle>(
    problem: &CvarProblem<L>,
    q: &[f64],
    lambda: f64,
    eps_prime: f64,
    rng: &mut Rng,
    cfg: &DrpoCvarConfig,
    start: Option<&[f64]>,
) -> Result<DrpoCvarReport> {
    let n = problem.n();
    ensure(q.len() == n, || "center has the wrong length".into())?;
    ensure(lambda > 0.0 && eps_prime > 0.0, || "lambda and eps must be positive".into())?;
    let q_cap = cfg
        .q_inv_cap
        .unwrap_or(4.0 * (n * n) as f64 * problem.m / problem.eps);
    let q_inv = q.iter().map(|v| 1.0 / v).fold(0.0, f64::max);
    if q_inv > q_cap * (1.0 + 1e-9) {
        return Err(Error::Contract(format!("max 1/q_i = {q_inv:e} exceeds the cap {q_cap:e}")));
    }
    if let Some(cap) = cfg.lambda_cap {
        if lambda > cap * (1.0 + 1e-9) {
            return Err(Error::Contract(format!("lambda = {lambda:e} exceeds the cap {cap:e}")));
        }
    }
    let before = problem.queries();
    let reg = Regularization { q, lambda };
    let n_prime = n_prime_rule(
        shifted_range(problem.m, reg),
        problem.alpha,
        eps_prime,
        cfg.n_prime_multiplier,
        cfg.max_log2_n_prime,
    );
    let mut x = match start {
        Some(s) => problem.set.project(s),
        None => problem.set.center(),
    };
    let r = problem.set.diameter();
    let sigma = match cfg.sigma {
        Some(s) => s,
        None => {
            let mut sq = 0.0;
            for _ in 0..cfg.pilot_draws.max(1) {
                let g = mlmc_gradient(problem, reg, &x, n_prime, rng)?;
                sq += dot(&g, &g);
            }
            (sq / cfg.pilot_draws.max(1) as f64).sqrt()
        }
    };
    let requested = (r * sigma / eps_prime).powi(2).ceil();
    if cfg.strict_budget && requested > cfg.max_iters as f64 {
        return Err(Error::Convergence {
            what: "stochastic primal oracle",
            iterations: cfg.max_iters,
            best_gap: r * sigma / (cfg.max_iters as f64).sqrt(),
        });
    }
    let t = (requested.min(cfg.max_iters as f64) as usize).max(cfg.min_iters.max(1));
    if sigma == 0.0 || r == 0.0 {
        // the gradient vanishes identically at the start; one exact step suffices
        return Ok(DrpoCvarReport {
            x,
            iterations: 0,
            requested_iterations: 0.0,
            n_prime,
            sigma_hat: sigma,
            queries: problem.queries() - before,
        });
    }
    let step = r / (sigma * (t as f64).sqrt());
    let mut avg = vec![0.0; x.len()];
    for _ in 0..t {
        let g = mlmc_gradient(problem, reg, &x, n_prime, rng)?;
        let moved: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
        x = problem.set.project(&moved);
        linalg::axpy(&mut avg, 1.0 / t as f64, &x);
    }
    Ok(DrpoCvarReport {
        x: problem.set.project(&avg),
        iterations: t,
        requested_iterations: requested,
        n_prime,
        sigma_hat: sigma,
        queries: problem.queries() - before,
    })
}

/// `f_{λ,q}(x)` with full information (`n` queries).
pub fn regularized_value<L: LossOracle>(problem: &CvarProblem<L>, reg: Regularization<'_>, x: &[f64]) -> Result<f64> {
    let v = problem.values(x);
    let y = truncated_entropic_response(&v, reg.lambda, reg.q, problem.lo(), problem.hi())?;
    let kl: f64 = y.iter().zip(reg.q).map(|(yi, qi)| yi * (yi / qi).ln()).sum();
    Ok(dot(&y, &v) - reg.lambda * kl)
}

/// `φ(y) = min_{x ∈ X} Σ y_i f_i(x)`.
///
/// Uses the loss family's closed form when there is one, otherwise an
/// accelerated (smooth losses) or subgradient method stopped by a certified
/// gap of at most `inner_tol`; the returned value is the best upper bound.
pub fn dual_value_cvar<L: LossOracle>(problem: &CvarProblem<L>, y: &[f64], inner_tol: f64) -> Result<f64> {
    ensure(y.len() == problem.n() && linalg::is_on_simplex(y, 1e-9), || {
        "dual point is not on the simplex".into()
    })?;
    ensure(inner_tol > 0.0, || "inner tolerance must be positive".into())?;
    if let Some(v) = problem.losses.weighted_min(y, &problem.set) {
        return Ok(v);
    }
    let weighted = |x: &[f64]| -> (f64, Vec<f64>) {
        let mut val = 0.0;
        let mut g = vec![0.0; x.len()];
        for (i, yi) in y.iter().enumerate() {
            if *yi == 0.0 {
                continue;
            }
            let (fi, gi) = problem.query(i, x);
            val += yi * fi;
            linalg::axpy(&mut g, *yi, &gi);
        }
        (val, g)
    };
    match problem.losses.smoothness() {
        Some(beta) => {
            let mut obj = (|x: &[f64]| weighted(x).0, |x: &[f64]| weighted(x));
            let out = accel::minimize(&mut obj, &problem.set.geometry(), &AccelOptions::new(beta.max(1e-12), inner_tol))?;
            Ok(out.value)
        }
        None => subgradient_min(&weighted, &problem.set, problem.g, inner_tol, 1_000_000),
    }
}

/// Projected subgradient descent with the aggregated linear lower model as
/// the stopping certificate.
fn subgradient_min<F: Fn(&[f64]) -> (f64, Vec<f64>)>(
    f: &F,
    set: &PrimalSet,
    lipschitz: f64,
    tol: f64,
    max_iters: usize,
) -> Result<f64> {
    let r = set.diameter();
    let mut x = set.center();
    let mut best = f64::INFINITY;
    let mut s = 0.0;
    let mut gsum = vec![0.0; x.len()];
    let mut wsum = 0.0;
    let mut lb = f64::NEG_INFINITY;
    for t in 1..=max_iters {
        let (v, g) = f(&x);
        best = best.min(v);
        let w = 1.0 / (t as f64).sqrt();
        s += w * (v - dot(&g, &x));
        linalg::axpy(&mut gsum, w, &g);
        wsum += w;
        let model_min = match set {
            PrimalSet::Ball { center, radius } => s + dot(&gsum, center) - radius * norm2(&gsum),
            PrimalSet::Box { lo, hi } => {
                s + gsum
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(gk, (l, h))| (gk * l).min(gk * h))
                    .sum::<f64>()
            }
        };
        lb = lb.max(model_min / wsum);
        if best - lb <= tol {
            return Ok(best);
        }
        let gn = norm2(&g).max(lipschitz).max(1e-300);
        let step = r / (gn * (t as f64).sqrt());
        x = set.project(&linalg::sub(&x, &linalg::scale(&g, step)));
    }
    Err(Error::Convergence {
        what: "dual evaluation",
        iterations: max_iters,
        best_gap: best - lb,
    })
}

/// Per-round diagnostics of the CVaR dual solve.
#[derive(Clone, Debug)]
pub struct CvarRoundStat {
    pub max_q_inv: f64,
    pub sgd_iterations: usize,
    pub requested_iterations: f64,
    pub n_prime: u64,
    pub queries: u64,
}

struct CvarOracles<'a, L> {
    problem: &'a CvarProblem<L>,
    cfg: DrpoCvarConfig,
    warm: Option<Vec<f64>>,
    best_upper: f64,
    stats: Vec<CvarRoundStat>,
}

impl<L: LossOracle> DualOracles for CvarOracles<'_, L> {
    fn drpo(&mut self, q: &[f64], lambda: f64, eps: f64, rng: &mut Rng) -> Result<Vec<f64>> {
        let max_q_inv = q.iter().map(|v| 1.0 / v).fold(0.0, f64::max);
        let bound = self.problem.n() as f64 / self.problem.lo();
        if max_q_inv > bound * (1.0 + 1e-9) {
            return Err(Error::Contract(format!(
                "center violates 1/q_i ≤ n/lo: {max_q_inv:e} > {bound:e}"
            )));
        }
        let r = drpo_cvar_with(self.problem, q, lambda, eps, rng, &self.cfg, self.warm.as_deref())?;
        self.stats.push(CvarRoundStat {
            max_q_inv,
            sgd_iterations: r.iterations,
            requested_iterations: r.requested_iterations,
            n_prime: r.n_prime,
            queries: r.queries,
        });
        self.warm = Some(r.x.clone());
        Ok(r.x)
    }

    fn drbr(&mut self, q: &[f64], lambda: f64, x: &[f64]) -> Result<Vec<f64>> {
        let v = self.problem.values(x);
        let upper = linalg::max_linear_box_simplex(&v, 0.0, self.problem.hi()).1;
        self.best_upper = self.best_upper.min(upper);
        if let Some(s) = self.stats.last_mut() {
            s.queries += v.len() as u64;
        }
        truncated_entropic_response(&v, lambda, q, self.problem.lo(), self.problem.hi())
    }
}

#[derive(Clone, Debug)]
pub struct CvarSolveConfig {
    pub drpo: DrpoCvarConfig,
    pub retention: Retention,
    /// Tolerance of the final dual evaluation (closed form for affine losses).
    pub dual_tol: f64,
}

impl Default for CvarSolveConfig {
    fn default() -> Self {
        CvarSolveConfig {
            drpo: DrpoCvarConfig::default(),
            retention: Retention::Auto,
            dual_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CvarDualResult {
    pub y: Vec<f64>,
    pub phi_estimate: f64,
    /// `min_k CVaR(x_k) − φ(y)`, an upper bound on the suboptimality of `y`.
    pub estimated_suboptimality: f64,
    pub queries: u64,
    pub rounds: Vec<CvarRoundStat>,
    pub extraction: ExtractionResult,
}

pub fn solve_dual_cvar<L: LossOracle>(problem: &CvarProblem<L>, rng: &mut Rng) -> Result<CvarDualResult> {
    solve_dual_cvar_with(problem, rng, &CvarSolveConfig::default())
}

/// Dual extraction from `y₀` uniform with the doubling schedule for target
/// `ε/2` (`B = ln n`, `L = M`).
pub fn solve_dual_cvar_with<L: LossOracle>(
    problem: &CvarProblem<L>,
    rng: &mut Rng,
    cfg: &CvarSolveConfig,
) -> Result<CvarDualResult> {
    let n = problem.n();
    let before = problem.queries();
    let setup = EntropySimplexSetup::truncated(n, problem.lo(), problem.hi())?;
    if n == 1 {
        let y = vec![1.0];
        let phi = dual_value_cvar(problem, &y, cfg.dual_tol)?;
        return Ok(CvarDualResult {
            y: y.clone(),
            phi_estimate: phi,
            estimated_suboptimality: 0.0,
            queries: problem.queries() - before,
            rounds: Vec::new(),
            extraction: ExtractionResult {
                y_final: y,
                rounds: Vec::new(),
                certified_divergence_budget: 0.0,
                calls: Default::default(),
            },
        });
    }
    let schedule = schedule_log_rounds(problem.eps / 2.0, (n as f64).ln(), problem.m, 1.0)?;
    let mut drpo_cfg = cfg.drpo.clone();
    if drpo_cfg.lambda_cap.is_none() {
        drpo_cfg.lambda_cap = Some(schedule.total());
    }
    let mut oracles = CvarOracles {
        problem,
        cfg: drpo_cfg,
        warm: None,
        best_upper: f64::INFINITY,
        stats: Vec::new(),
    };
    let ext = run_dual_extraction_with(&setup, &mut oracles, &setup.uniform(), &schedule, rng, cfg.retention)?;
    let y = ext.y_final.clone();
    let phi = dual_value_cvar(problem, &y, cfg.dual_tol)?;
    Ok(CvarDualResult {
        estimated_suboptimality: oracles.best_upper - phi,
        y,
        phi_estimate: phi,
        queries: problem.queries() - before,
        rounds: oracles.stats,
        extraction: ext,
    })
}
