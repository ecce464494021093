//! `dualex`: generate instances, run solvers, certify their guarantees.

mod config;
mod report;
mod suite;
mod tasks;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dualex::formats;
use dualex::matgames::PrimalDomain;
use serde_json::{json, Map, Value};

use config::Config;
use report::Record;
use tasks::CvarParams;

#[derive(Parser, Debug)]
#[command(name = "dualex", version, about = "Dual extraction solvers with certified guarantees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Random seed (required here or in the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Instance file (gen) or solution file (runs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Compare against the brute-force reference oracle (default).
    #[arg(long = "ref", global = true, conflicts_with = "no_ref")]
    with_ref: bool,
    /// Skip the reference oracle and report the solver's own certificate.
    #[arg(long = "no-ref", global = true)]
    no_ref: bool,
    /// Append the JSON record to this file (one object per line).
    #[arg(long, global = true)]
    json: Option<PathBuf>,
    /// Append a CSV row to this file, writing the header if it is new.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// `key = value` file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded instance file.
    Gen(GenArgs),
    /// Matrix game, dual or (simplex variant) primal.
    Matgame(MatgameArgs),
    /// CVaR dual over the Euclidean ball with affine losses.
    Cvar(CvarArgs),
    /// Critical point of a smooth convex function.
    Critpoint(CritArgs),
    /// Invariant checks across all modules.
    Suite(SuiteArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// matgame-ball, matgame-simplex, cvar, quadratic or logistic.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// csv or bin (matrix games only).
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    cond: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct MatgameArgs {
    /// ball or simplex.
    #[arg(long)]
    variant: Option<String>,
    /// Solve for the primal point (simplex variant only).
    #[arg(long)]
    primal: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Matrix file (CSV or binary) instead of a random instance.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    ref_tol: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct CvarArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    /// Affine-loss CSV (`b, a_1, ..., a_d` per row).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    ref_tol: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct CritArgs {
    /// quadratic or logistic.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    /// Data rows for the random logistic family.
    #[arg(long)]
    rows: Option<usize>,
    /// Condition number of the random quadratic.
    #[arg(long)]
    cond: Option<f64>,
    /// Target gradient norm.
    #[arg(long)]
    gamma: Option<f64>,
    /// Target as a fraction of sqrt(2 beta delta), used when --gamma is absent.
    #[arg(long)]
    gamma_frac: Option<f64>,
    /// Upper bound on h(x0) - min h.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
    /// Q matrix CSV (quadratic) or labelled data CSV (logistic).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Per-round JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SuiteArgs {
    #[command(flatten)]
    common: Common,
}

struct Resolved {
    cfg: Config,
    seed: u64,
    reference: bool,
    params: Map<String, Value>,
}

impl Resolved {
    fn new(c: &Common) -> Result<Self> {
        let cfg = Config::load(c.config.as_deref())?;
        let Some(seed) = cfg.pick(c.seed, "seed")? else {
            bail!("a seed is required (--seed or `seed = ...` in the config file)");
        };
        let reference = if c.with_ref {
            true
        } else if c.no_ref {
            false
        } else {
            cfg.pick_or(None, "ref", true)?
        };
        let mut params = Map::new();
        params.insert("seed".into(), json!(seed));
        Ok(Resolved {
            cfg,
            seed,
            reference,
            params,
        })
    }

    fn get<T>(&mut self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: std::str::FromStr + serde::Serialize,
        T::Err: std::fmt::Display,
    {
        let v = self.cfg.pick_or(flag, key, default)?;
        self.params.insert(key.into(), json!(v));
        Ok(v)
    }

    fn opt<T>(&mut self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: std::str::FromStr + serde::Serialize,
        T::Err: std::fmt::Display,
    {
        let v = self.cfg.pick(flag, key)?;
        if let Some(x) = &v {
            self.params.insert(key.into(), json!(x));
        }
        Ok(v)
    }

    fn path(&mut self, flag: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
        let v = flag.or_else(|| self.cfg.raw(key).map(PathBuf::from));
        if let Some(p) = &v {
            self.params.insert(key.into(), json!(p.display().to_string()));
        }
        Ok(v)
    }
}

fn write_point(path: &Path, task: &str, point: &[f64]) -> Result<()> {
    let v = json!({"task": task, "point": point});
    std::fs::write(path, serde_json::to_string_pretty(&v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn emit(rec: &Record, common: &Common, cfg_json: Option<PathBuf>, cfg_csv: Option<PathBuf>) -> Result<()> {
    let value = serde_json::to_value(rec)?;
    if let Some(p) = common.json.clone().or(cfg_json) {
        report::append_json(&p, &value)?;
    }
    if let Some(p) = common.csv.clone().or(cfg_csv) {
        report::append_csv(&p, rec)?;
    }
    print_line(&serde_json::to_string(&value)?);
    Ok(())
}

/// Stdout write that tolerates a closed pipe.
fn print_line(s: &str) {
    let _ = writeln!(std::io::stdout(), "{s}");
}

fn output_paths(common: &Common) -> (Option<PathBuf>, Option<PathBuf>) {
    let cfg = Config::load(common.config.as_deref()).unwrap_or_default();
    (cfg.raw("json").map(PathBuf::from), cfg.raw("csv").map(PathBuf::from))
}

fn task_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Gen(_) => "gen",
        Command::Matgame(a) if a.primal => "matgame-primal",
        Command::Matgame(_) => "matgame-dual",
        Command::Cvar(_) => "cvar-dual",
        Command::Critpoint(_) => "critpoint",
        Command::Suite(_) => "property-suite",
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Gen(a) => &a.common,
        Command::Matgame(a) => &a.common,
        Command::Cvar(a) => &a.common,
        Command::Critpoint(a) => &a.common,
        Command::Suite(a) => &a.common,
    }
}

fn gen(a: GenArgs) -> Result<bool> {
    let mut r = Resolved::new(&a.common)?;
    let kind = r.get(a.kind, "kind", "matgame-simplex".to_string())?;
    let Some(out) = r.path(a.common.out.clone(), "out")? else {
        bail!("gen needs --out");
    };
    let seed = r.seed;
    match kind.as_str() {
        "matgame-ball" | "matgame-simplex" => {
            let n = r.get(a.n, "n", 32)?;
            let d = r.get(a.d, "d", 32)?;
            let format = r.get(a.format, "format", "csv".to_string())?;
            let domain = if kind == "matgame-ball" {
                PrimalDomain::UnitBall
            } else {
                PrimalDomain::Simplex
            };
            let game = tasks::matgame_instance(domain, d, n, seed, None)?;
            match format.as_str() {
                "csv" => formats::write_matrix_csv(&out, game.matrix())?,
                "bin" => formats::write_matrix_bin(&out, game.matrix())?,
                other => bail!("unknown format {other:?} (expected csv or bin)"),
            }
        }
        "cvar" => {
            let p = CvarParams {
                n: r.get(a.n, "n", 20)?,
                d: r.get(a.d, "d", 5)?,
                alpha: 1.0,
                eps: 1.0,
                radius: r.get(a.radius, "radius", 1.0)?,
                g: r.get(a.g, "g", 0.5)?,
                m: r.get(a.m, "m", 1.0)?,
            };
            formats::write_affine_csv(&out, &tasks::cvar_losses(&p, seed, None)?)?;
        }
        "quadratic" => {
            let d = r.get(a.d, "d", 50)?;
            let cond = r.get(a.cond, "cond", 10.0)?;
            formats::write_matrix_csv(&out, &tasks::random_spd_matrix(d, cond, seed)?)?;
        }
        "logistic" => {
            let n = r.get(a.n, "n", 200)?;
            let d = r.get(a.d, "d", 10)?;
            let (features, labels) = tasks::random_logistic_data(n, d, seed);
            let rows: Vec<Vec<f64>> = features
                .iter()
                .zip(&labels)
                .map(|(f, l)| std::iter::once(*l).chain(f.iter().copied()).collect())
                .collect();
            formats::write_csv_rows(&out, None, &rows)?;
        }
        other => bail!("unknown instance kind {other:?}"),
    }
    print_line(&json!({"task": "gen", "kind": kind, "path": out.display().to_string(), "params": r.params}).to_string());
    Ok(true)
}

fn matgame(a: MatgameArgs) -> Result<bool> {
    let mut r = Resolved::new(&a.common)?;
    let variant = r.get(a.variant, "variant", "simplex".to_string())?;
    let primal = a.primal || r.cfg.pick_or(None, "primal", false)?;
    r.params.insert("primal".into(), json!(primal));
    let run = tasks::MatgameRun {
        seed: r.seed,
        variant: &variant,
        primal,
        n: r.get(a.n, "n", 32)?,
        d: r.get(a.d, "d", 32)?,
        eps: r.get(a.common.eps, "eps", 0.1)?,
        reference: r.reference,
        ref_tol: r.get(a.ref_tol, "ref_tol", 1e-6)?,
        input: r.path(a.input, "input")?,
    };
    r.params.insert("ref".into(), json!(r.reference));
    let (rec, point) = tasks::run_matgame(&run, r.params.clone())?;
    finish(rec, point, &a.common)
}

fn cvar(a: CvarArgs) -> Result<bool> {
    let mut r = Resolved::new(&a.common)?;
    let params = CvarParams {
        n: r.get(a.n, "n", 20)?,
        d: r.get(a.d, "d", 5)?,
        alpha: r.get(a.alpha, "alpha", 0.25)?,
        eps: r.get(a.common.eps, "eps", 0.1)?,
        radius: r.get(a.radius, "radius", 1.0)?,
        g: r.get(a.g, "g", 0.5)?,
        m: r.get(a.m, "m", 1.0)?,
    };
    let run = tasks::CvarRun {
        seed: r.seed,
        params,
        reference: r.reference,
        ref_tol: r.get(a.ref_tol, "ref_tol", 1e-5)?,
        input: r.path(a.input, "input")?,
    };
    r.params.insert("ref".into(), json!(r.reference));
    let (rec, point) = tasks::run_cvar(&run, r.params.clone())?;
    finish(rec, point, &a.common)
}

fn critpoint(a: CritArgs) -> Result<bool> {
    let mut r = Resolved::new(&a.common)?;
    let family = r.get(a.family, "family", "quadratic".to_string())?;
    let run = tasks::CritRun {
        seed: r.seed,
        family: &family,
        d: r.get(a.d, "d", 50)?,
        rows: r.get(a.rows, "rows", 200)?,
        cond: r.get(a.cond, "cond", 10.0)?,
        gamma: r.opt(a.gamma, "gamma")?,
        gamma_frac: r.get(a.gamma_frac, "gamma_frac", 0.01)?,
        delta: r.opt(a.delta, "delta")?,
        ridge: r.get(a.ridge, "ridge", 1e-3)?,
        input: r.path(a.input, "input")?,
        trace: r.path(a.trace, "trace")?,
    };
    let (rec, point) = tasks::run_critpoint(&run, r.params.clone())?;
    finish(rec, point, &a.common)
}

fn suite(a: SuiteArgs) -> Result<bool> {
    let r = Resolved::new(&a.common)?;
    let start = Instant::now();
    let checks = suite::run(r.seed);
    let failures = checks.iter().filter(|c| !c.pass).count();
    let mut rec = Record {
        task: "property-suite".into(),
        seed: r.seed,
        n: None,
        d: None,
        alpha: None,
        eps: None,
        gamma: None,
        metric_kind: "failed_checks".into(),
        metric: failures as f64,
        bound: 0.0,
        tolerance: 0.0,
        queries: checks.len() as u64,
        millis: start.elapsed().as_millis() as u64,
        pass: false,
        reference: true,
        params: r.params.clone(),
        details: suite::to_json(&checks),
    };
    rec.set_pass();
    let (j, c) = output_paths(&a.common);
    emit(&rec, &a.common, j, c)?;
    Ok(rec.pass)
}

fn finish(rec: Record, point: Vec<f64>, common: &Common) -> Result<bool> {
    if let Some(out) = &common.out {
        write_point(out, &rec.task, &point)?;
    }
    let (j, c) = output_paths(common);
    emit(&rec, common, j, c)?;
    Ok(rec.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let task = task_name(&cli.command);
    let common = common(&cli.command).clone();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Matgame(a) => matgame(a),
        Command::Cvar(a) => cvar(a),
        Command::Critpoint(a) => critpoint(a),
        Command::Suite(a) => suite(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let v = report::error_value(task, &e);
            print_line(&v.to_string());
            if let Some(p) = common.json.clone().or(output_paths(&common).0) {
                let _ = report::append_json(&p, &v);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
