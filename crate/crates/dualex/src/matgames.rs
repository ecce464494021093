//! Bilinear matrix games `ψ(x, y) = xᵀAy` with `y` on the n-simplex.
//!
//! The primal player lives on the unit Euclidean ball (columns of `A` have
//! norm at most 1) or on the d-simplex (entries bounded by 1 in magnitude).

use nalgebra::DMatrix;

use crate::accel::{self, AccelOptions, Geometry};
use crate::error::{ensure, Error, Result};
use crate::exec::Rng;
use crate::framework::{run_dual_extraction, schedule_log_rounds, DualOracles, ExtractionResult};
use crate::linalg::{self, mat_t_vec, mat_vec, norm2};
use crate::setups::{log_sum_exp, softmax, EntropySimplexSetup};

/// Tolerance used when validating normalization and feasibility.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimalDomain {
    UnitBall,
    Simplex,
}

#[derive(Clone, Debug)]
pub struct MatrixGame {
    a: DMatrix<f64>,
    domain: PrimalDomain,
}

/// Largest column norm (ball) or largest absolute entry (simplex).
pub fn normalization_bound(a: &DMatrix<f64>, domain: PrimalDomain) -> f64 {
    match domain {
        PrimalDomain::UnitBall => linalg::max_column_norm(a),
        PrimalDomain::Simplex => a.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

impl MatrixGame {
    /// `a` is d-by-n: rows index the primal coordinates.
    pub fn new(a: DMatrix<f64>, domain: PrimalDomain) -> Result<Self> {
        ensure(a.nrows() >= 1 && a.ncols() >= 1, || "empty matrix".into())?;
        ensure(a.iter().all(|v| v.is_finite()), || "matrix has non-finite entries".into())?;
        let b = normalization_bound(&a, domain);
        ensure(b <= 1.0 + 1e-12, || match domain {
            PrimalDomain::UnitBall => format!("largest column norm is {b}, must be at most 1"),
            PrimalDomain::Simplex => format!("largest entry magnitude is {b}, must be at most 1"),
        })?;
        Ok(MatrixGame { a, domain })
    }

    /// Scale `a` uniformly so that it satisfies the domain's bound with
    /// equality (matrices already inside the bound are scaled up).
    /// Returns the game and the factor applied.
    pub fn normalized(a: DMatrix<f64>, domain: PrimalDomain) -> Result<(Self, f64)> {
        let mut a = a;
        let mut factor = 1.0;
        for _ in 0..3 {
            let b = normalization_bound(&a, domain);
            if b == 0.0 || b <= 1.0 && factor != 1.0 {
                break;
            }
            a /= b;
            factor /= b;
        }
        Ok((MatrixGame::new(a, domain)?, factor))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn domain(&self) -> PrimalDomain {
        self.domain
    }

    /// Primal dimension.
    pub fn d(&self) -> usize {
        self.a.nrows()
    }

    /// Dual dimension.
    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn primal_feasible(&self, x: &[f64]) -> bool {
        x.len() == self.d()
            && match self.domain {
                PrimalDomain::UnitBall => norm2(x) <= 1.0 + FEAS_TOL,
                PrimalDomain::Simplex => linalg::is_on_simplex(x, FEAS_TOL),
            }
    }

    fn check_primal(&self, x: &[f64]) -> Result<()> {
        ensure(self.primal_feasible(x), || "infeasible primal point".into())
    }

    fn check_dual(&self, y: &[f64]) -> Result<()> {
        ensure(y.len() == self.n() && linalg::is_on_simplex(y, FEAS_TOL), || {
            "dual point is not on the simplex".into()
        })
    }

    /// `f(x) = max_i [Aᵀx]_i`.
    pub fn primal_value(&self, x: &[f64]) -> Result<f64> {
        self.check_primal(x)?;
        let v = mat_t_vec(&self.a, x);
        Ok(v[linalg::argmax(&v)])
    }

    /// `φ(y) = min_{x ∈ X} xᵀAy`.
    pub fn dual_value(&self, y: &[f64]) -> Result<f64> {
        self.check_dual(y)?;
        let ay = mat_vec(&self.a, y);
        Ok(match self.domain {
            PrimalDomain::UnitBall => -norm2(&ay),
            PrimalDomain::Simplex => ay[linalg::argmin(&ay)],
        })
    }

    /// Primal minimizer of `xᵀAy` for fixed `y`.
    pub fn primal_best_response(&self, y: &[f64]) -> Vec<f64> {
        let ay = mat_vec(&self.a, y);
        match self.domain {
            PrimalDomain::UnitBall => {
                let n = norm2(&ay);
                if n == 0.0 {
                    vec![0.0; self.d()]
                } else {
                    linalg::scale(&ay, -1.0 / n)
                }
            }
            PrimalDomain::Simplex => {
                let mut x = vec![0.0; self.d()];
                x[linalg::argmin(&ay)] = 1.0;
                x
            }
        }
    }

    /// `f_{λ,q}(x) = λ ln Σ q_i exp([Aᵀx]_i/λ)`.
    pub fn regularized_primal_value(&self, x: &[f64], q: &[f64], lambda: f64) -> Result<f64> {
        ensure(lambda > 0.0, || format!("lambda must be positive, got {lambda}"))?;
        check_center(q, self.n())?;
        self.check_primal(x)?;
        Ok(lambda * log_sum_exp(&shifted_logits(&mat_t_vec(&self.a, x), q, lambda))?)
    }

    /// The same game with primal and dual roles exchanged: matrix `−Aᵀ`.
    pub fn negated_transpose(&self) -> Result<Self> {
        ensure(self.domain == PrimalDomain::Simplex, || {
            "only simplex games can be transposed".into()
        })?;
        Ok(MatrixGame {
            a: -self.a.transpose(),
            domain: PrimalDomain::Simplex,
        })
    }

    fn geometry(&self) -> Geometry {
        match self.domain {
            PrimalDomain::UnitBall => Geometry::Ball {
                center: vec![0.0; self.d()],
                radius: 1.0,
            },
            PrimalDomain::Simplex => Geometry::Simplex { dim: self.d() },
        }
    }

    /// Smoothness of `f_{λ,q}` in the primal norm, times λ.
    fn curvature(&self) -> f64 {
        let b = normalization_bound(&self.a, self.domain);
        b * b
    }
}

fn check_center(q: &[f64], n: usize) -> Result<()> {
    ensure(q.len() == n, || format!("center has length {} but n = {n}", q.len()))?;
    ensure(q.iter().all(|&v| v > 0.0), || "center must be strictly positive".into())
}

fn shifted_logits(atx: &[f64], q: &[f64], lambda: f64) -> Vec<f64> {
    atx.iter().zip(q).map(|(v, qi)| qi.ln() + v / lambda).collect()
}

/// `softmax(ln q + Aᵀx/Λ)`.
pub fn drbr_matgame(q: &[f64], lambda: f64, atx: &[f64]) -> Result<Vec<f64>> {
    ensure(lambda > 0.0, || format!("lambda must be positive, got {lambda}"))?;
    check_center(q, atx.len())?;
    softmax(&shifted_logits(atx, q, lambda))
}

/// Output of one regularized primal solve.
#[derive(Clone, Debug)]
pub struct DrpoReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub gap: f64,
    pub iterations: usize,
}

/// Deterministic certified solve of `min_x f_{λ,q}(x)` to gap `eps_prime`.
pub fn drpo_matgame_report(
    game: &MatrixGame,
    q: &[f64],
    lambda: f64,
    eps_prime: f64,
) -> Result<DrpoReport> {
    ensure(lambda > 0.0 && eps_prime > 0.0, || "lambda and eps must be positive".into())?;
    check_center(q, game.n())?;
    let ln_q: Vec<f64> = q.iter().map(|v| v.ln()).collect();
    let a = &game.a;
    let value = |x: &[f64]| -> f64 {
        let logits: Vec<f64> = mat_t_vec(a, x)
            .iter()
            .zip(&ln_q)
            .map(|(v, lq)| lq + v / lambda)
            .collect();
        lambda * log_sum_exp(&logits).expect("finite logits")
    };
    let value_grad = |x: &[f64]| -> (f64, Vec<f64>) {
        let logits: Vec<f64> = mat_t_vec(a, x)
            .iter()
            .zip(&ln_q)
            .map(|(v, lq)| lq + v / lambda)
            .collect();
        let f = lambda * log_sum_exp(&logits).expect("finite logits");
        let y = softmax(&logits).expect("finite logits");
        (f, mat_vec(a, &y))
    };
    let mut obj = (value, value_grad);
    let mut opts = AccelOptions::new((game.curvature() / lambda).max(1e-12), eps_prime);
    opts.max_iters = 1_000_000;
    let out = accel::minimize(&mut obj, &game.geometry(), &opts).map_err(|e| match e {
        Error::Convergence {
            iterations,
            best_gap,
            ..
        } => Error::Convergence {
            what: "matrix-game primal oracle",
            iterations,
            best_gap,
        },
        e => e,
    })?;
    Ok(DrpoReport {
        x: out.x,
        value: out.value,
        gap: out.gap,
        iterations: out.iterations,
    })
}

/// Regularized primal oracle; deterministic, so `rng` is unused.
pub fn drpo_matgame(
    game: &MatrixGame,
    q: &[f64],
    lambda: f64,
    eps_prime: f64,
    _rng: &mut Rng,
) -> Result<Vec<f64>> {
    Ok(drpo_matgame_report(game, q, lambda, eps_prime)?.x)
}

/// Oracle pair for the dual extraction on a matrix game.
pub struct MatGameOracles<'a> {
    pub game: &'a MatrixGame,
    pub solver_iterations: usize,
    /// Lowest primal value among the oracle's outputs, with its point.
    pub best_primal: Option<(f64, Vec<f64>)>,
}

impl<'a> MatGameOracles<'a> {
    pub fn new(game: &'a MatrixGame) -> Self {
        MatGameOracles {
            game,
            solver_iterations: 0,
            best_primal: None,
        }
    }
}

impl DualOracles for MatGameOracles<'_> {
    fn drpo(&mut self, q: &[f64], lambda: f64, eps: f64, _rng: &mut Rng) -> Result<Vec<f64>> {
        let r = drpo_matgame_report(self.game, q, lambda, eps)?;
        self.solver_iterations += r.iterations;
        let x = r.x;
        let f = self.game.primal_value(&x)?;
        if self.best_primal.as_ref().is_none_or(|(bf, _)| f < *bf) {
            self.best_primal = Some((f, x.clone()));
        }
        Ok(x)
    }

    fn drbr(&mut self, q: &[f64], lambda: f64, x: &[f64]) -> Result<Vec<f64>> {
        drbr_matgame(q, lambda, &mat_t_vec(&self.game.a, x))
    }
}

#[derive(Clone, Debug)]
pub struct MatGameDualResult {
    pub y: Vec<f64>,
    pub dual_value: f64,
    /// Best primal point produced along the way, with its value.
    pub best_primal: Vec<f64>,
    pub best_primal_value: f64,
    /// `f(x̂) − φ(y)`, an upper bound on the dual suboptimality of `y`.
    pub duality_gap_certificate: f64,
    pub rounds_used: usize,
    pub solver_iterations: usize,
    pub extraction: Option<ExtractionResult>,
}

/// Dual extraction with `λ_k = 2^k ε/(4 ln n)`, `ε_k = ε/(4K)` from `y₀` uniform.
pub fn solve_dual_matgame(game: &MatrixGame, eps: f64, rng: &mut Rng) -> Result<MatGameDualResult> {
    ensure(eps > 0.0, || format!("eps must be positive, got {eps}"))?;
    let n = game.n();
    if n == 1 {
        let y = vec![1.0];
        let x = game.primal_best_response(&y);
        let fx = game.primal_value(&x)?;
        let phi = game.dual_value(&y)?;
        return Ok(MatGameDualResult {
            y,
            dual_value: phi,
            best_primal: x,
            best_primal_value: fx,
            duality_gap_certificate: (fx - phi).max(0.0),
            rounds_used: 0,
            solver_iterations: 0,
            extraction: None,
        });
    }
    let setup = EntropySimplexSetup::new(n)?;
    let schedule = schedule_log_rounds(eps, (n as f64).ln(), 1.0, 1.0)?;
    let mut oracles = MatGameOracles::new(game);
    let ext = run_dual_extraction(&setup, &mut oracles, &setup.uniform(), &schedule, rng)?;
    let y = ext.y_final.clone();
    let phi = game.dual_value(&y)?;
    // the primal best response to y is a free extra candidate
    let xr = game.primal_best_response(&y);
    let fr = game.primal_value(&xr)?;
    let (mut fx, mut x) = oracles.best_primal.take().expect("at least one round");
    if fr < fx {
        fx = fr;
        x = xr;
    }
    Ok(MatGameDualResult {
        y,
        dual_value: phi,
        best_primal: x,
        best_primal_value: fx,
        duality_gap_certificate: fx - phi,
        rounds_used: schedule.rounds(),
        solver_iterations: oracles.solver_iterations,
        extraction: Some(ext),
    })
}

#[derive(Clone, Debug)]
pub struct MatGamePrimalResult {
    pub x: Vec<f64>,
    pub primal_value: f64,
    /// The dual run on the transposed game.
    pub transposed: MatGameDualResult,
}

/// Primal solution of a simplex game as the dual solution of `−Aᵀ`.
pub fn solve_primal_simplex_matgame(
    game: &MatrixGame,
    eps: f64,
    rng: &mut Rng,
) -> Result<MatGamePrimalResult> {
    if game.domain() != PrimalDomain::Simplex {
        return Err(Error::Unsupported(
            "the primal solver needs a simplex primal domain".into(),
        ));
    }
    let t = game.negated_transpose()?;
    let r = solve_dual_matgame(&t, eps, rng)?;
    let x = r.y.clone();
    Ok(MatGamePrimalResult {
        primal_value: game.primal_value(&x)?,
        x,
        transposed: r,
    })
}
