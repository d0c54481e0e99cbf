use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::benchmark::simulate_linear;
use super::config::Experiment;
use super::disturbance::{DisturbanceSpec, DisturbanceStream};
use super::experiments::{regret_curve, RegretReport, REGRET_HORIZONS};
use super::{HarnessError, Result};
use crate::ogd::{RunOptions, RunTrace};
use crate::Vector;

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn write_rows<W: Write>(mut out: W, header: &str, columns: &[String], rows: &[Vec<String>]) -> Result<()> {
    out.write_all(header.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn indexed(prefix: &str, count: usize, first: usize) -> impl Iterator<Item = String> + '_ {
    (0..count).map(move |i| format!("{prefix}{}", i + first))
}

/// Columns `t, x0.., u0.., w0.., cost, cum_cost, safe_x, safe_u, step_norm, grad_norm`.
pub fn write_trace_csv<W: Write>(out: W, header: &str, trace: &RunTrace) -> Result<()> {
    let (n, m) = trace.steps.first().map_or((0, 0), |s| (s.x.len(), s.u.len()));
    let mut cols = vec!["t".to_string()];
    cols.extend(indexed("x", n, 0));
    cols.extend(indexed("u", m, 0));
    cols.extend(indexed("w", n, 0));
    for c in ["cost", "cum_cost", "safe_x", "safe_u", "step_norm", "grad_norm"] {
        cols.push(c.into());
    }
    let rows: Vec<Vec<String>> = trace
        .steps
        .iter()
        .map(|s| {
            let mut r = vec![s.t.to_string()];
            r.extend(s.x.iter().chain(&s.u).chain(&s.w).map(|&v| fmt_f64(v)));
            r.push(fmt_f64(s.cost));
            r.push(fmt_f64(s.cum_cost));
            r.push(s.safe_x.to_string());
            r.push(s.safe_u.to_string());
            r.push(fmt_f64(s.step_norm));
            r.push(fmt_f64(s.grad_norm));
            r
        })
        .collect();
    write_rows(out, header, &cols, &rows)
}

/// Reads the `w*` columns of a trace CSV back, in step order.
pub fn read_trace_disturbances(path: &Path) -> Result<Vec<Vector>> {
    let file = File::open(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    let body: String = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l + "\n")
        .collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.len() > 1 && h.starts_with('w') && h[1..].chars().all(|c| c.is_ascii_digit()))
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(HarnessError::Config(format!("{} has no disturbance columns", path.display())));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let w = idx
            .iter()
            .map(|&i| rec[i].parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| HarnessError::Config(format!("bad disturbance entry in {}: {e}", path.display())))?;
        out.push(Vector::from_vec(w));
    }
    Ok(out)
}

/// One trajectory for the figure CSVs.
pub struct Trajectory<'a> {
    pub controller: &'a str,
    /// `x_0 ..= x_T`
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub costs: Vec<f64>,
}

/// Columns `t, x1.., u (or u1..), cost, controller`. The last row of each
/// controller holds `x_T` with empty input and cost.
pub fn write_fig1_csv<W: Write>(out: W, header: &str, trajectories: &[Trajectory<'_>]) -> Result<()> {
    let n = trajectories.first().map_or(0, |t| t.states[0].len());
    let m = trajectories.first().and_then(|t| t.inputs.first()).map_or(1, |u| u.len());
    let mut cols = vec!["t".to_string()];
    cols.extend(indexed("x", n, 1));
    if m == 1 {
        cols.push("u".into());
    } else {
        cols.extend(indexed("u", m, 1));
    }
    cols.push("cost".into());
    cols.push("controller".into());
    let mut rows = Vec::new();
    for tr in trajectories {
        for (t, x) in tr.states.iter().enumerate() {
            let mut r = vec![t.to_string()];
            r.extend(x.iter().map(|&v| fmt_f64(v)));
            match tr.inputs.get(t) {
                Some(u) => {
                    r.extend(u.iter().map(|&v| fmt_f64(v)));
                    r.push(fmt_f64(tr.costs[t]));
                }
                None => r.extend(std::iter::repeat_n(String::new(), m + 1)),
            }
            r.push(tr.controller.to_string());
            rows.push(r);
        }
    }
    write_rows(out, header, &cols, &rows)
}

pub fn write_regret_csv<W: Write>(out: W, header: &str, report: &RegretReport) -> Result<()> {
    let cols: Vec<String> = [
        "T",
        "H",
        "eta",
        "epsilon",
        "alg_cost",
        "bench_cost",
        "regret",
        "avg_regret",
        "k_star",
        "k_star_safe",
        "max_state_norm",
        "grid_step",
        "safe_points",
        "total_points",
        "removed_unstable",
        "removed_unsafe",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<String>> = report
        .entries
        .iter()
        .map(|e| {
            vec![
                e.horizon.to_string(),
                e.h.to_string(),
                fmt_f64(e.eta),
                fmt_f64(e.epsilon),
                fmt_f64(e.alg_cost),
                fmt_f64(e.bench_cost),
                fmt_f64(e.regret),
                fmt_f64(e.avg_regret),
                e.k_star.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(" "),
                e.k_star_safe.to_string(),
                fmt_f64(e.max_state_norm),
                fmt_f64(report.grid_step),
                report.safe_points.to_string(),
                report.total_points.to_string(),
                report.removed_unstable.to_string(),
                report.removed_unsafe.to_string(),
            ]
        })
        .collect();
    write_rows(out, header, &cols, &rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Trajectories under i.i.d. uniform disturbances.
    Fig1a,
    /// Trajectories under the constant corner disturbance.
    Fig1b,
    /// Average regret against the best safe grid gain.
    Fig2,
}

impl FromStr for Figure {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fig1a" => Ok(Figure::Fig1a),
            "fig1b" => Ok(Figure::Fig1b),
            "fig2" => Ok(Figure::Fig2),
            other => Err(format!("unknown figure {other:?} (expected fig1a, fig1b or fig2)")),
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Figure::Fig1a => "fig1a",
            Figure::Fig1b => "fig1b",
            Figure::Fig2 => "fig2",
        })
    }
}

/// Horizon of the trajectory figures.
const FIG1_HORIZON: usize = 30;

const FIG1_SCRIPT: &str = r##"import csv
import math
import os

import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
NAME = "@NAME@"

with open(os.path.join(HERE, NAME + ".csv")) as f:
    rows = list(csv.DictReader(line for line in f if not line.startswith("#")))

fig, ax = plt.subplots(figsize=(5, 5))
th = [2 * math.pi * k / 400 for k in range(401)]
ax.plot([math.cos(t) for t in th], [math.sin(t) for t in th], "k--", lw=0.8, label="state constraint")
for name, style in (("ogd_bzc", "o-"), ("linear", "s-")):
    pts = [(float(r["x1"]), float(r["x2"])) for r in rows if r["controller"] == name]
    xs, ys = zip(*pts)
    ax.plot(xs, ys, style, ms=3, lw=1, label=name)
ax.set_aspect("equal")
ax.set_xlabel("x1")
ax.set_ylabel("x2")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(HERE, NAME + ".png"), dpi=150)
"##;

const FIG2_SCRIPT: &str = r##"import csv
import os

import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))

with open(os.path.join(HERE, "fig2.csv")) as f:
    rows = list(csv.DictReader(line for line in f if not line.startswith("#")))

ts = [int(r["T"]) for r in rows]
avg = [float(r["avg_regret"]) for r in rows]
fig, ax = plt.subplots(figsize=(5, 3.5))
ax.plot(ts, avg, "o-")
ax.axhline(0.0, color="k", lw=0.8)
ax.set_xscale("log")
ax.set_xlabel("T")
ax.set_ylabel("Reg_T / T")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "fig2.png"), dpi=150)
"##;

fn trajectories_for(exp: &Experiment, disturbance: &DisturbanceSpec) -> Result<(RunTrace, Vec<Vector>, Vec<Vector>, Vec<f64>)> {
    let trace = exp.run_with(FIG1_HORIZON, disturbance, exp.config.seed, RunOptions::default())?;
    // the linear controller sees exactly the disturbances OGD-BZC saw
    let mut replay = DisturbanceStream::replay(trace.disturbances(), exp.sys.w_bar())?;
    let lin = simulate_linear(&exp.sys, &exp.comparator, &exp.spec, &trace.costs, &mut replay)?;
    Ok((trace, lin.states, lin.inputs, lin.costs))
}

/// Writes `<figure>.csv` and `<figure>.py` into `out_dir` and returns their paths.
pub fn reproduce(exp: &Experiment, figure: Figure, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let name = figure.to_string();
    let csv_path = out_dir.join(format!("{name}.csv"));
    let py_path = out_dir.join(format!("{name}.py"));
    match figure {
        Figure::Fig1a | Figure::Fig1b => {
            let disturbance = if figure == Figure::Fig1a {
                DisturbanceSpec::IidUniform { seed: None }
            } else {
                DisturbanceSpec::Constant { value: None }
            };
            let (trace, lin_x, lin_u, lin_c) = trajectories_for(exp, &disturbance)?;
            let mut ogd_x: Vec<Vector> = trace.steps.iter().map(|s| Vector::from_column_slice(&s.x)).collect();
            ogd_x.push(Vector::from_column_slice(&trace.final_state));
            let ogd = Trajectory {
                controller: "ogd_bzc",
                states: ogd_x,
                inputs: trace.steps.iter().map(|s| Vector::from_column_slice(&s.u)).collect(),
                costs: trace.steps.iter().map(|s| s.cost).collect(),
            };
            let lin = Trajectory { controller: "linear", states: lin_x, inputs: lin_u, costs: lin_c };
            let header = exp.header(&[
                ("figure", name.clone()),
                ("T", FIG1_HORIZON.to_string()),
                ("disturbance", toml::to_string(&disturbance).unwrap_or_default().trim().replace('\n', ", ")),
                ("linear gain", fmt_gain(&exp.comparator)),
            ]);
            write_fig1_csv(File::create(&csv_path)?, &header, &[ogd, lin])?;
            std::fs::write(&py_path, FIG1_SCRIPT.replace("@NAME@", &name))?;
        }
        Figure::Fig2 => {
            let disturbance = DisturbanceSpec::Constant { value: None };
            let report = regret_curve(exp, &REGRET_HORIZONS, &disturbance)?;
            let header = exp.header(&[
                ("figure", name.clone()),
                ("disturbance", toml::to_string(&disturbance).unwrap_or_default().trim().replace('\n', ", ")),
            ]);
            write_regret_csv(File::create(&csv_path)?, &header, &report)?;
            std::fs::write(&py_path, FIG2_SCRIPT)?;
        }
    }
    Ok(vec![csv_path, py_path])
}

fn fmt_gain(k: &crate::Matrix) -> String {
    let rows: Vec<String> = k
        .row_iter()
        .map(|r| format!("[{}]", r.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(", ")))
        .collect();
    format!("[{}]", rows.join(", "))
}
