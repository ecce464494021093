//! Instance construction and the experiment runners behind each subcommand.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use dualex::critpoint::{find_critical_point, CritConfig, CritResult, LogisticSum, QuadraticFn, SmoothFnOracle};
use dualex::cvar::{solve_dual_cvar, AffineLosses, CvarProblem, PrimalSet};
use dualex::exec::{stream_rng, Rng};
use dualex::formats;
use dualex::instances::{random_affine_losses, random_matrix_game, random_spd};
use dualex::linalg::{self, norm2};
use dualex::matgames::{solve_dual_matgame, solve_primal_simplex_matgame, MatrixGame, PrimalDomain};
use dualex::reference::{cvar_affine_saddle, mirror_prox_matgame};
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Map, Value};

use crate::report::Record;

/// Stream used for instance generation, shared by `gen` and the runners so
/// that `gen --seed s` writes the instance a run with `--seed s` solves.
pub fn instance_rng(seed: u64) -> Rng {
    stream_rng(seed, 0)
}

fn solver_rng(seed: u64) -> Rng {
    stream_rng(seed, 1)
}

fn gaussian(d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn domain_of(variant: &str) -> Result<PrimalDomain> {
    match variant {
        "ball" => Ok(PrimalDomain::UnitBall),
        "simplex" => Ok(PrimalDomain::Simplex),
        other => bail!("unknown matrix-game variant {other:?} (expected ball or simplex)"),
    }
}

pub fn matgame_instance(domain: PrimalDomain, d: usize, n: usize, seed: u64, input: Option<&Path>) -> Result<MatrixGame> {
    match input {
        Some(p) => Ok(MatrixGame::new(formats::read_matrix(p, false)?, domain)
            .with_context(|| format!("matrix in {}", p.display()))?),
        None => Ok(random_matrix_game(d, n, domain, &mut instance_rng(seed))?),
    }
}

#[derive(Debug, Clone)]
pub struct CvarParams {
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    pub eps: f64,
    pub radius: f64,
    pub g: f64,
    pub m: f64,
}

pub fn cvar_losses(p: &CvarParams, seed: u64, input: Option<&Path>) -> Result<AffineLosses> {
    match input {
        Some(path) => {
            let l = formats::read_affine_csv(path, false)?;
            // affine losses attain their extremes b ± ‖a‖r on the ball
            for (i, (a, b)) in l.a.iter().zip(&l.b).enumerate() {
                let span = norm2(a) * p.radius;
                ensure!(
                    b - span >= -1e-12 && b + span <= p.m + 1e-12,
                    "{}: loss {i} leaves [0, {}] on the ball of radius {}",
                    path.display(),
                    p.m,
                    p.radius
                );
            }
            Ok(l)
        }
        None => Ok(random_affine_losses(p.n, p.d, p.radius, p.g, p.m, &mut instance_rng(seed))?),
    }
}

pub fn random_spd_matrix(d: usize, cond: f64, seed: u64) -> Result<DMatrix<f64>> {
    Ok(random_spd(d, cond, 1.0, &mut instance_rng(seed))?)
}

/// Labelled data from a noisy linear separator; labels are ±1.
pub fn random_logistic_data(rows: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = instance_rng(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut features = Vec::with_capacity(rows);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0) / (d as f64).sqrt()).collect();
        let noise = 0.3 * (rng.gen::<f64>() - 0.5);
        labels.push(if linalg::dot(&a, &w) + noise >= 0.0 { 1.0 } else { -1.0 });
        features.push(a);
    }
    (features, labels)
}

fn millis(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

fn base_record(task: &str, seed: u64, params: Map<String, Value>) -> Record {
    Record {
        task: task.to_string(),
        seed,
        n: None,
        d: None,
        alpha: None,
        eps: None,
        gamma: None,
        metric_kind: String::new(),
        metric: f64::NAN,
        bound: f64::NAN,
        tolerance: 0.0,
        queries: 0,
        millis: 0,
        pass: false,
        reference: false,
        params,
        details: Value::Null,
    }
}

pub struct MatgameRun<'a> {
    pub seed: u64,
    pub variant: &'a str,
    pub primal: bool,
    pub n: usize,
    pub d: usize,
    pub eps: f64,
    pub reference: bool,
    pub ref_tol: f64,
    pub input: Option<PathBuf>,
}

pub fn run_matgame(r: &MatgameRun, params: Map<String, Value>) -> Result<(Record, Vec<f64>)> {
    let domain = domain_of(r.variant)?;
    let game = matgame_instance(domain, r.d, r.n, r.seed, r.input.as_deref())?;
    let task = if r.primal { "matgame-primal" } else { "matgame-dual" };
    let mut rec = base_record(task, r.seed, params);
    rec.n = Some(game.n());
    rec.d = Some(game.d());
    rec.eps = Some(r.eps);
    rec.bound = r.eps;
    rec.reference = r.reference;
    let start = Instant::now();
    let mut rng = solver_rng(r.seed);
    let point;
    if r.primal {
        let res = solve_primal_simplex_matgame(&game, r.eps, &mut rng)?;
        // without a reference, a certified dual value serves as the lower bound
        let (lower, kind, extra) = if r.reference {
            let sref = mirror_prox_matgame(&game, r.ref_tol, 5_000_000);
            (sref.lower, "primal_suboptimality_vs_reference", json!({"reference_gap": sref.gap()}))
        } else {
            let dual = solve_dual_matgame(&game, r.eps, &mut rng)?;
            (dual.dual_value, "primal_dual_gap_certificate", json!({"dual_value": dual.dual_value}))
        };
        rec.metric = res.primal_value - lower;
        rec.metric_kind = kind.into();
        rec.queries = res.transposed.solver_iterations as u64;
        rec.details = json!({
            "primal_value": res.primal_value,
            "lower_bound": lower,
            "rounds": res.transposed.rounds_used,
            "extra": extra,
        });
        point = res.x;
    } else {
        let res = solve_dual_matgame(&game, r.eps, &mut rng)?;
        let mut details = json!({
            "dual_value": res.dual_value,
            "best_primal_value": res.best_primal_value,
            "duality_gap_certificate": res.duality_gap_certificate,
            "rounds": res.rounds_used,
        });
        if r.reference {
            let sref = mirror_prox_matgame(&game, r.ref_tol, 5_000_000);
            rec.metric = sref.upper - res.dual_value;
            rec.metric_kind = "dual_suboptimality_vs_reference".into();
            details["reference_upper"] = json!(sref.upper);
            details["reference_gap"] = json!(sref.gap());
        } else {
            rec.metric = res.duality_gap_certificate;
            rec.metric_kind = "duality_gap_certificate".into();
        }
        rec.queries = res.solver_iterations as u64;
        rec.details = details;
        point = res.y;
    }
    rec.millis = millis(start);
    rec.set_pass();
    Ok((rec, point))
}

pub struct CvarRun {
    pub seed: u64,
    pub params: CvarParams,
    pub reference: bool,
    pub ref_tol: f64,
    pub input: Option<PathBuf>,
}

pub fn run_cvar(r: &CvarRun, params: Map<String, Value>) -> Result<(Record, Vec<f64>)> {
    let p = &r.params;
    let losses = cvar_losses(p, r.seed, r.input.as_deref())?;
    let d = losses.a[0].len();
    let g = match r.input {
        Some(_) => losses.lipschitz(),
        None => p.g,
    };
    let set = PrimalSet::Ball {
        center: vec![0.0; d],
        radius: p.radius,
    };
    let problem = CvarProblem::new(losses, p.alpha, set, p.m, g, p.eps)?;
    let mut rec = base_record("cvar-dual", r.seed, params);
    rec.n = Some(problem.n());
    rec.d = Some(d);
    rec.alpha = Some(p.alpha);
    rec.eps = Some(p.eps);
    rec.bound = p.eps;
    rec.reference = r.reference;
    let start = Instant::now();
    let res = solve_dual_cvar(&problem, &mut solver_rng(r.seed))?;
    let mut details = json!({
        "phi_estimate": res.phi_estimate,
        "estimated_suboptimality": res.estimated_suboptimality,
        "rounds": res.rounds.len(),
        "sgd_iterations": res.rounds.iter().map(|s| s.sgd_iterations).sum::<usize>(),
    });
    if r.reference {
        let sref = cvar_affine_saddle(
            &problem.losses.a,
            &problem.losses.b,
            &vec![0.0; d],
            p.radius,
            0.0,
            problem.hi(),
            r.ref_tol,
            1_000_000,
        );
        rec.metric = sref.upper - res.phi_estimate;
        rec.metric_kind = "dual_suboptimality_vs_reference".into();
        details["reference_upper"] = json!(sref.upper);
        details["reference_gap"] = json!(sref.gap());
    } else {
        rec.metric = res.estimated_suboptimality;
        rec.metric_kind = "primal_dual_gap_estimate".into();
    }
    rec.queries = res.queries;
    rec.details = details;
    rec.millis = millis(start);
    rec.set_pass();
    Ok((rec, res.y))
}

pub struct CritRun<'a> {
    pub seed: u64,
    pub family: &'a str,
    pub d: usize,
    pub rows: usize,
    pub cond: f64,
    pub gamma: Option<f64>,
    pub gamma_frac: f64,
    pub delta: Option<f64>,
    pub ridge: f64,
    pub input: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

/// The oracle, the start point and `h(x0) − min h` (or an upper bound on it).
fn crit_problem(r: &CritRun) -> Result<(SmoothFnOracle, Vec<f64>, f64)> {
    match r.family {
        "quadratic" => {
            let p = match &r.input {
                Some(path) => formats::read_matrix_csv(path, false)?,
                None => random_spd_matrix(r.d, r.cond, r.seed)?,
            };
            let d = p.nrows();
            let mut rng = stream_rng(r.seed, 2);
            let center = gaussian(d, &mut rng);
            let q = QuadraticFn::new(p, center.clone(), 0.0)?;
            let dir = gaussian(d, &mut rng);
            let scale = (1.0 / q.value(&linalg::add(&center, &dir))).sqrt();
            let x0 = linalg::add(&center, &linalg::scale(&dir, scale));
            let gap = q.value(&x0);
            Ok((q.oracle(), x0, gap))
        }
        "logistic" => {
            let (features, labels) = match &r.input {
                Some(path) => formats::read_labelled_csv(path, false)?,
                None => random_logistic_data(r.rows, r.d, r.seed),
            };
            let f = LogisticSum::new(features, labels, r.ridge)?;
            let x0 = vec![0.0; f.dim()];
            // the loss is nonnegative, so h(x0) bounds the initial gap
            let gap = f.value(&x0);
            Ok((f.oracle()?, x0, gap))
        }
        other => bail!("unknown function family {other:?} (expected quadratic or logistic)"),
    }
}

pub fn run_critpoint(r: &CritRun, params: Map<String, Value>) -> Result<(Record, Vec<f64>)> {
    let (h, x0, gap) = crit_problem(r)?;
    let delta = match r.delta {
        Some(dl) => {
            ensure!(dl >= gap || r.family == "logistic", "delta {dl} is below h(x0) - min h = {gap}");
            dl
        }
        None => gap,
    };
    let gamma = r.gamma.unwrap_or(r.gamma_frac * (2.0 * h.beta * delta).sqrt());
    let cfg = CritConfig::new(&h, gamma, x0, delta)?;
    let mut rec = base_record("critpoint", r.seed, params);
    rec.d = Some(h.dim());
    rec.gamma = Some(gamma);
    rec.bound = gamma;
    rec.metric_kind = "gradient_norm".into();
    let start = Instant::now();
    let res: CritResult = find_critical_point(&h, &cfg)?;
    rec.millis = millis(start);
    rec.metric = res.grad_norm;
    rec.queries = res.queries;
    let rounds: Vec<Value> = res
        .rounds
        .iter()
        .map(|c| json!({"k": c.k, "radius": c.radius, "eps": c.eps, "queries": c.queries}))
        .collect();
    if let Some(path) = &r.trace {
        let _ = std::fs::remove_file(path);
        for (c, z) in res.rounds.iter().zip(res.iterates.iter().skip(1)) {
            let line = json!({
                "k": c.k,
                "center": c.center,
                "radius": c.radius,
                "eps": c.eps,
                "queries": c.queries,
                "z": z,
                "grad_norm": norm2(&h.grad(z)),
            });
            crate::report::append_json(path, &line)?;
        }
    }
    rec.details = json!({
        "family": r.family,
        "beta": h.beta,
        "delta": delta,
        "rounds": rounds,
        "query_envelope": 500.0 * (h.beta * delta).sqrt() / gamma,
    });
    rec.set_pass();
    Ok((rec, res.z))
}
