//! The dual-extraction loop, its schedules and success-probability boosting.
//!
//! Each round aggregates the previous best responses into a center `q_k`,
//! asks the primal oracle for an `ε_k`-minimizer of the `Λ_k`-regularized
//! primal objective, and takes the regularized best response to it.

use crate::error::{ensure, Error, Result};
use crate::exec::Rng;
use crate::linalg::norm2;
use crate::setups::DgfSetup;

/// Dual-regularization weights `λ_0..λ_{K-1}` and primal accuracies `ε_1..ε_K`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    lambdas: Vec<f64>,
    eps_primal: Vec<f64>,
}

impl Schedule {
    pub fn new(lambdas: Vec<f64>, eps_primal: Vec<f64>) -> Result<Self> {
        ensure(!lambdas.is_empty(), || "schedule needs at least one round".into())?;
        ensure(lambdas.len() == eps_primal.len(), || {
            format!("{} weights but {} accuracies", lambdas.len(), eps_primal.len())
        })?;
        ensure(
            lambdas
                .iter()
                .chain(&eps_primal)
                .all(|v| *v > 0.0 && v.is_finite()),
            || "schedule entries must be positive and finite".into(),
        )?;
        Ok(Schedule { lambdas, eps_primal })
    }

    pub fn rounds(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn eps_primal(&self) -> &[f64] {
        &self.eps_primal
    }

    /// `ε_k` for `k = 1..=K`.
    pub fn eps(&self, k: usize) -> f64 {
        self.eps_primal[k - 1]
    }

    /// `Λ_k = Σ_{j<k} λ_j` for `k = 1..=K`.
    pub fn cumulative(&self, k: usize) -> f64 {
        self.lambdas[..k].iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.cumulative(self.rounds())
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    ensure(v > 0.0 && v.is_finite(), || format!("{name} must be positive, got {v}"))
}

/// Round count for the doubling schedule with uniform accuracies.
pub fn log_rounds_count(eps: f64, b: f64, l: f64, mu_r: f64) -> usize {
    let t = (l * l * b / (mu_r * eps * eps)).log2().max(1.0);
    t.ceil() as usize + 10
}

/// `λ_k = 2^k ε/(4B)`, `ε_k = ε/(4K)`, `K = ⌈max{log₂(L²B/(μ_r ε²)), 1}⌉ + 10`.
pub fn schedule_log_rounds(eps: f64, b: f64, l: f64, mu_r: f64) -> Result<Schedule> {
    for (n, v) in [("eps", eps), ("B", b), ("L", l), ("mu_r", mu_r)] {
        positive(n, v)?;
    }
    let k = log_rounds_count(eps, b, l, mu_r);
    let lambdas = (0..k).map(|j| 2f64.powi(j as i32) * eps / (4.0 * b)).collect();
    Schedule::new(lambdas, vec![eps / (4.0 * k as f64); k])
}

/// `λ_k = 2^k ε/(4B)`, `ε_k = ε/(8·1.5^k)`.
pub fn schedule_geometric_accuracy(eps: f64, b: f64, k: usize) -> Result<Schedule> {
    positive("eps", eps)?;
    positive("B", b)?;
    ensure(k >= 1, || "K must be positive".into())?;
    let lambdas = (0..k).map(|j| 2f64.powi(j as i32) * eps / (4.0 * b)).collect();
    let accs = (1..=k).map(|j| eps / (8.0 * 1.5f64.powi(j as i32))).collect();
    Schedule::new(lambdas, accs)
}

/// The two oracles a dual extraction needs.
pub trait DualOracles {
    /// A point whose `λ`-regularized primal value around `q` is within `eps` of optimal.
    fn drpo(&mut self, q: &[f64], lambda: f64, eps: f64, rng: &mut Rng) -> Result<Vec<f64>>;

    /// `argmax_y ψ(x, y) − λ V_q(y)`.
    fn drbr(&mut self, q: &[f64], lambda: f64, x: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Retention {
    /// Store every `q_k`, `x_k`, `y_k`.
    Full,
    /// Store norms only.
    Summary,
    /// Full up to dimension 1000, summary above.
    #[default]
    Auto,
}

impl Retention {
    fn keep(self, len: usize) -> bool {
        match self {
            Retention::Full => true,
            Retention::Summary => false,
            Retention::Auto => len <= 1000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub k: usize,
    pub cumulative_lambda: f64,
    pub eps: f64,
    pub q: Option<Vec<f64>>,
    pub x: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
    pub q_norm: f64,
    pub x_norm: f64,
    pub y_norm: f64,
    /// `ε_k/Λ_k`, the divergence budget of this round.
    pub divergence_budget: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub drpo: usize,
    pub drbr: usize,
}

#[derive(Clone, Debug)]
pub struct ExtractionResult {
    pub y_final: Vec<f64>,
    pub rounds: Vec<RoundRecord>,
    pub certified_divergence_budget: f64,
    pub calls: CallCounts,
}

pub fn run_dual_extraction<S, O>(
    setup: &S,
    oracles: &mut O,
    y0: &[f64],
    schedule: &Schedule,
    rng: &mut Rng,
) -> Result<ExtractionResult>
where
    S: DgfSetup + ?Sized,
    O: DualOracles + ?Sized,
{
    run_dual_extraction_with(setup, oracles, y0, schedule, rng, Retention::Auto)
}

pub fn run_dual_extraction_with<S, O>(
    setup: &S,
    oracles: &mut O,
    y0: &[f64],
    schedule: &Schedule,
    rng: &mut Rng,
    retention: Retention,
) -> Result<ExtractionResult>
where
    S: DgfSetup + ?Sized,
    O: DualOracles + ?Sized,
{
    ensure(y0.len() == setup.dim(), || {
        format!("y0 has length {} but the setup has dimension {}", y0.len(), setup.dim())
    })?;
    ensure(setup.is_interior(y0), || "y0 must be interior".into())?;
    let k_total = schedule.rounds();
    let mut ys = vec![y0.to_vec()];
    let mut rounds = Vec::with_capacity(k_total);
    let mut calls = CallCounts::default();
    for k in 1..=k_total {
        let at = |e: Error| e.at_round(k);
        let big_lambda = schedule.cumulative(k);
        let eps_k = schedule.eps(k);
        let q = setup
            .aggregate_center(&ys, &schedule.lambdas()[..k])
            .map_err(at)?;
        if !setup.is_interior(&q) {
            return Err(at(Error::Domain("center left the interior".into())));
        }
        calls.drpo += 1;
        let x = oracles.drpo(&q, big_lambda, eps_k, rng).map_err(at)?;
        calls.drbr += 1;
        let y = oracles.drbr(&q, big_lambda, &x).map_err(at)?;
        if !setup.is_interior(&y) {
            return Err(at(Error::Domain("best response left the interior".into())));
        }
        let keep_dual = retention.keep(y.len());
        let keep_primal = retention.keep(x.len());
        rounds.push(RoundRecord {
            k,
            cumulative_lambda: big_lambda,
            eps: eps_k,
            q_norm: norm2(&q),
            x_norm: norm2(&x),
            y_norm: norm2(&y),
            q: keep_dual.then(|| q.clone()),
            x: keep_primal.then(|| x.clone()),
            y: keep_dual.then(|| y.clone()),
            divergence_budget: eps_k / big_lambda,
        });
        ys.push(y);
    }
    let last = rounds.last().expect("at least one round");
    let budget = last.divergence_budget;
    Ok(ExtractionResult {
        y_final: ys.pop().expect("at least one round"),
        rounds,
        certified_divergence_budget: budget,
        calls,
    })
}

/// `⌈log₂(1/δ)/log₂(1/p)⌉`, the number of independent calls needed.
///
/// The ratio is snapped to the nearest integer when within 1e-9, so that
/// exact powers (p = 0.1, δ = 0.01) are not pushed up by round-off.
pub fn boost_count(p: f64, delta: f64) -> Result<usize> {
    ensure(0.0 < p && p < 1.0, || format!("p must lie in (0,1), got {p}"))?;
    ensure(0.0 < delta && delta <= p, || format!("delta must lie in (0, p], got {delta}"))?;
    let ratio = (1.0 / delta).ln() / (1.0 / p).ln();
    let snapped = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
        ratio.round()
    } else {
        ratio.ceil()
    };
    Ok((snapped as usize).max(1))
}

/// Calls a base oracle `N` times and keeps the output with the smallest
/// objective value. Base calls returning an error count as failed draws.
pub struct Boosted<B, E> {
    base: B,
    eval: E,
    calls: usize,
}

impl<B, E> Boosted<B, E>
where
    B: FnMut(&mut Rng) -> Result<Vec<f64>>,
    E: FnMut(&[f64]) -> Result<f64>,
{
    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn call(&mut self, rng: &mut Rng) -> Result<Vec<f64>> {
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut last_err = None;
        for _ in 0..self.calls {
            match (self.base)(rng) {
                Ok(x) => {
                    let v = (self.eval)(&x)?;
                    if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                        best = Some((v, x));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        match (best, last_err) {
            (Some((_, x)), _) => Ok(x),
            (None, Some(e)) => Err(e),
            (None, None) => Err(Error::invalid("boosting made no calls")),
        }
    }
}

/// Wrap an oracle that succeeds with probability at least `1 − p` so that it
/// succeeds with probability at least `1 − δ`.
pub fn boost_success_probability<B, E>(base: B, p: f64, delta: f64, f_eval: E) -> Result<Boosted<B, E>>
where
    B: FnMut(&mut Rng) -> Result<Vec<f64>>,
    E: FnMut(&[f64]) -> Result<f64>,
{
    Ok(Boosted {
        base,
        eval: f_eval,
        calls: boost_count(p, delta)?,
    })
}

/// Boosts the primal oracle of a [`DualOracles`] implementation using an
/// evaluator of the regularized primal objective `f_{λ,q}(x)`.
pub struct BoostedDrpo<O, E> {
    pub inner: O,
    pub eval: E,
    pub calls: usize,
}

impl<O, E> BoostedDrpo<O, E>
where
    O: DualOracles,
    E: FnMut(&[f64], &[f64], f64) -> Result<f64>,
{
    pub fn new(inner: O, p: f64, delta: f64, eval: E) -> Result<Self> {
        Ok(BoostedDrpo {
            inner,
            eval,
            calls: boost_count(p, delta)?,
        })
    }
}

impl<O, E> DualOracles for BoostedDrpo<O, E>
where
    O: DualOracles,
    E: FnMut(&[f64], &[f64], f64) -> Result<f64>,
{
    fn drpo(&mut self, q: &[f64], lambda: f64, eps: f64, rng: &mut Rng) -> Result<Vec<f64>> {
        let inner = &mut self.inner;
        let eval = &mut self.eval;
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut last_err = None;
        for _ in 0..self.calls {
            match inner.drpo(q, lambda, eps, rng) {
                Ok(x) => {
                    let v = eval(&x, q, lambda)?;
                    if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                        best = Some((v, x));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        match (best, last_err) {
            (Some((_, x)), _) => Ok(x),
            (None, Some(e)) => Err(e),
            (None, None) => Err(Error::invalid("boosting made no calls")),
        }
    }

    fn drbr(&mut self, q: &[f64], lambda: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.inner.drbr(q, lambda, x)
    }
}
