//! CSV and JSON reports and trace export.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use bgs_core::IterationTrace;
use serde::{Deserialize, Serialize};

use crate::experiment::{Aggregate, RunReport, Solver};
use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(HarnessError::Invalid(format!("unknown format `{s}`"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "solver", "problem", "n", "seed", "iters", "g_eval", "time_s", "E_final", "converged",
];

#[derive(Serialize)]
struct CsvRow<'a> {
    solver: Solver,
    problem: &'a str,
    n: usize,
    seed: u64,
    iters: usize,
    g_eval: usize,
    time_s: f64,
    #[serde(rename = "E_final")]
    e_final: f64,
    converged: bool,
}

/// One header line plus one row per report.
pub fn write_csv<W: Write>(reports: &[RunReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if reports.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    for r in reports {
        w.serialize(CsvRow {
            solver: r.solver,
            problem: &r.problem,
            n: r.n,
            seed: r.seed,
            iters: r.iters,
            g_eval: r.g_eval,
            time_s: r.time_s,
            e_final: r.e_final,
            converged: r.converged,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Aggregate rows in the same columns as [`write_csv`]; `seed` holds the
/// number of averaged runs and `converged` whether all of them converged.
pub fn write_aggregate_csv<W: Write>(rows: &[Aggregate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for a in rows {
        w.write_record([
            a.solver.to_string(),
            a.problem.clone(),
            a.n.to_string(),
            format!("mean of {}", a.runs - a.excluded),
            a.iters.map_or(String::new(), |v| format!("{v:.1}")),
            a.g_eval.map_or(String::new(), |v| format!("{v:.1}")),
            a.time_s.map_or(String::new(), |v| format!("{v:.4}")),
            a.e_final.map_or(String::new(), |v| format!("{v:.3e}")),
            (a.converged == a.runs - a.excluded).to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonReport {
    pub runs: Vec<RunReport>,
    pub aggregate: Option<Aggregate>,
}

pub fn write_json<W: Write>(reports: &[RunReport], aggregate: Option<&Aggregate>, out: W) -> Result<()> {
    let doc = JsonReport {
        runs: reports.to_vec(),
        aggregate: aggregate.cloned(),
    };
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, &doc)?;
    out.write_all(b"\n").map_err(|e| HarnessError::io("<json>", e))?;
    Ok(())
}

pub fn read_json(text: &str) -> Result<JsonReport> {
    Ok(serde_json::from_str(text)?)
}

/// Writes the report to `path` in `format`.
pub fn emit_report(reports: &[RunReport], aggregate: Option<&Aggregate>, format: Format, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(reports, &mut w)?,
        Format::Json => write_json(reports, aggregate, &mut w)?,
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Per-step rows `seed,k,i,err,radius,kind` with `err = f - f*`.
pub fn write_trace<W: Write>(traces: &[(u64, Vec<IterationTrace>)], f_star: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seed", "k", "i", "err", "radius", "kind"])?;
    for (seed, trace) in traces {
        for t in trace {
            w.write_record([
                seed.to_string(),
                t.k.to_string(),
                t.i.to_string(),
                format!("{:e}", t.f_val - f_star),
                format!("{:e}", t.radius),
                t.kind.as_str().to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
