//! Run records and their JSON / CSV emission.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

pub const CSV_HEADER: [&str; 12] = [
    "task", "seed", "n", "d", "alpha", "eps", "gamma", "metric", "bound", "queries", "millis", "pass",
];

#[derive(Debug, Clone, Serialize)]
pub struct Record {
    pub task: String,
    pub seed: u64,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub alpha: Option<f64>,
    pub eps: Option<f64>,
    pub gamma: Option<f64>,
    /// What `metric` measures, e.g. `dual_suboptimality_vs_reference`.
    pub metric_kind: String,
    pub metric: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub queries: u64,
    pub millis: u64,
    pub pass: bool,
    pub reference: bool,
    /// Every resolved parameter, enough to replay the run.
    pub params: Map<String, Value>,
    pub details: Value,
}

impl Record {
    pub fn set_pass(&mut self) {
        self.pass = self.metric.is_finite() && self.metric <= self.bound + self.tolerance;
    }

    fn csv_fields(&self) -> Vec<String> {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        vec![
            self.task.clone(),
            self.seed.to_string(),
            opt(self.n),
            opt(self.d),
            opt(self.alpha),
            opt(self.eps),
            opt(self.gamma),
            self.metric.to_string(),
            self.bound.to_string(),
            self.queries.to_string(),
            self.millis.to_string(),
            self.pass.to_string(),
        ]
    }
}

/// Append one JSON object as a line.
pub fn append_json(path: &Path, value: &Value) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    writeln!(f, "{}", serde_json::to_string(value)?).with_context(|| format!("writing {}", path.display()))
}

/// Append one row, writing the header first if the file is new or empty.
pub fn append_csv(path: &Path, rec: &Record) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut w = csv::Writer::from_writer(f);
    if fresh {
        w.write_record(CSV_HEADER)?;
    }
    w.write_record(rec.csv_fields())?;
    w.flush().with_context(|| format!("writing {}", path.display()))
}

/// Structured error object for failed runs.
pub fn error_value(task: &str, err: &anyhow::Error) -> Value {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<dualex::Error>())
        .map(|e| error_kind(e.root()))
        .unwrap_or("cli");
    serde_json::json!({
        "task": task,
        "pass": false,
        "error": {
            "kind": kind,
            "message": format!("{err:#}"),
        }
    })
}

fn error_kind(e: &dualex::Error) -> &'static str {
    use dualex::Error as E;
    match e {
        E::InvalidInput(_) => "invalid_input",
        E::Domain(_) => "domain",
        E::Convergence { .. } => "convergence",
        E::Budget { .. } => "budget",
        E::Contract(_) => "contract",
        E::Unsupported(_) => "unsupported",
        E::Round { .. } => "round",
        E::Io { .. } => "io",
    }
}
