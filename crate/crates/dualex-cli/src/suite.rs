//! Quick invariant checks across the library, aggregated into one record.

use dualex::critpoint::{find_critical_point, CritConfig, QuadraticFn};
use dualex::cvar::{sample_counts, truncated_entropic_response};
use dualex::exec::{stream_rng, Rng};
use dualex::framework::{boost_count, schedule_log_rounds};
use dualex::instances::{random_matrix_game, random_spd};
use dualex::matgames::{solve_dual_matgame, PrimalDomain};
use dualex::reference::mirror_prox_matgame;
use dualex::setups::{kl_divergence, log_sum_exp, softmax, DgfSetup, EuclideanSetup};
use rand::Rng as _;
use serde_json::{json, Value};

pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

type CheckFn = fn(&mut Rng) -> dualex::Result<(bool, String)>;

fn softmax_shift(rng: &mut Rng) -> dualex::Result<(bool, String)> {
    let grid = 2f64.powi(-20);
    let mut ok = true;
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        let t: Vec<f64> = (0..n).map(|_| (rng.gen_range(-1e4..1e4) / grid).round() * grid).collect();
        let c = (rng.gen_range(-1e4..1e4) / grid).round() * grid;
        let s: Vec<f64> = t.iter().map(|v| v + c).collect();
        ok &= softmax(&t)? == softmax(&s)? && log_sum_exp(&t)?.is_finite();
    }
    Ok((ok, "200 dyadic shifts".into()))
}

fn kl_from_uniform(rng: &mut Rng) -> dualex::Result<(bool, String)> {
    let mut worst = f64::NEG_INFINITY;
    for n in [2usize, 10, 100] {
        let u = vec![1.0 / n as f64; n];
        for _ in 0..1000 {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(4)).collect();
            let s: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
            worst = worst.max(kl_divergence(&u, &w)? - (n as f64).ln());
        }
    }
    Ok((worst <= 1e-12, format!("max KL - ln n = {worst:.2e}")))
}

fn boosting_count(_: &mut Rng) -> dualex::Result<(bool, String)> {
    let n = boost_count(0.5, 0.01)?;
    Ok((n == 7, format!("N = {n}")))
}

fn truncated_response(rng: &mut Rng) -> dualex::Result<(bool, String)> {
    let mut ok = true;
    for _ in 0..200 {
        let n = rng.gen_range(2..30);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let q = vec![1.0 / n as f64; n];
        let (lo, hi) = (0.1 / n as f64, 2.0 / n as f64);
        let y = truncated_entropic_response(&v, rng.gen_range(0.01..3.0), &q, lo, hi)?;
        ok &= (y.iter().sum::<f64>() - 1.0).abs() <= 1e-12 && y.iter().all(|&t| t >= lo && t <= hi);
    }
    Ok((ok, "200 random responses feasible".into()))
}

fn euclidean_aggregate(rng: &mut Rng) -> dualex::Result<(bool, String)> {
    let s = EuclideanSetup::new(3);
    let y0: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y1: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c = s.aggregate_center(&[y0.clone(), y1.clone()], &[1.0, 3.0])?;
    let err = (0..3).map(|i| (c[i] - (y0[i] + 3.0 * y1[i]) / 4.0).abs()).fold(0.0, f64::max);
    Ok((err <= 1e-15, format!("error {err:.1e}")))
}

fn counts(rng: &mut Rng) -> dualex::Result<(bool, String)> {
    let ok = (0..100).all(|_| {
        let m = rng.gen_range(1..10_000);
        sample_counts(50, m, rng).iter().map(|c| c.1).sum::<u64>() == m
    });
    Ok((ok, "100 batches".into()))
}

fn schedule(_: &mut Rng) -> dualex::Result<(bool, String)> {
    let s = schedule_log_rounds(0.1, 1.0, 1.0, 1.0)?;
    let k = s.rounds();
    let eps_sum: f64 = s.eps_primal().iter().sum();
    Ok(((eps_sum - 0.025).abs() < 1e-15 && k >= 11, format!("K = {k}")))
}

fn small_matgame(rng: &mut Rng) -> dualex::Result<(bool, String)> {
    let g = random_matrix_game(8, 8, PrimalDomain::Simplex, rng)?;
    let r = solve_dual_matgame(&g, 0.1, rng)?;
    let sref = mirror_prox_matgame(&g, 1e-5, 1_000_000);
    let sub = sref.upper - r.dual_value;
    Ok((sub <= 0.1, format!("8x8 dual suboptimality {sub:.2e}")))
}

fn small_critpoint(rng: &mut Rng) -> dualex::Result<(bool, String)> {
    let p = random_spd(10, 100.0, 1.0, rng)?;
    let q = QuadraticFn::new(p, vec![0.0; 10], 0.0)?;
    let x0 = vec![1.0; 10];
    let h = q.oracle();
    let delta = q.value(&x0);
    let gamma = 0.01 * (2.0 * h.beta * delta).sqrt();
    let r = find_critical_point(&h, &CritConfig::new(&h, gamma, x0, delta)?)?;
    Ok((r.grad_norm <= gamma, format!("|grad| {:.2e} <= {gamma:.2e}", r.grad_norm)))
}

const CHECKS: [(&str, CheckFn); 9] = [
    ("softmax_shift_invariance", softmax_shift),
    ("kl_from_uniform", kl_from_uniform),
    ("boost_count", boosting_count),
    ("truncated_response_feasible", truncated_response),
    ("euclidean_aggregate_center", euclidean_aggregate),
    ("sample_counts_total", counts),
    ("log_round_schedule", schedule),
    ("matgame_dual_small", small_matgame),
    ("critpoint_small", small_critpoint),
];

pub fn run(seed: u64) -> Vec<Check> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let mut rng = stream_rng(seed, 100 + i as u64);
            match f(&mut rng) {
                Ok((pass, detail)) => Check { name, pass, detail },
                Err(e) => Check {
                    name,
                    pass: false,
                    detail: format!("error: {e}"),
                },
            }
        })
        .collect()
}

pub fn to_json(checks: &[Check]) -> Value {
    Value::Array(
        checks
            .iter()
            .map(|c| json!({"name": c.name, "pass": c.pass, "detail": c.detail}))
            .collect(),
    )
}
