//! File formats: long-format CSV tables, per-cell settlement JSON, traces,
//! repair logs and payoff tensors.
//!
//! All CSV files use `,` between fields, `.` as decimal separator, LF line
//! endings and a header row. Floats are written in shortest round-trip form.

use std::fs;
use std::io::Write;
use std::path::Path;

use mechsim_core::distopt::SequenceSet;
use mechsim_core::filter::RepairRecord;
use serde::Serialize;

use crate::experiment::CellResult;

pub fn float(v: f64) -> String {
    format!("{v:?}")
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().delimiter(b',').terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn finish<W: Write>(w: csv::Writer<W>) -> std::io::Result<W> {
    w.into_inner().map_err(|e| e.into_error())
}

/// `cell, <coords…>, agent, payoff, payment, penalty`.
pub fn results_csv<W: Write>(out: W, coord_names: &[String], results: &[CellResult]) -> std::io::Result<W> {
    let mut w = writer(out);
    let mut header = vec!["cell".to_string()];
    header.extend(coord_names.iter().cloned());
    header.extend(["agent", "payoff", "payment", "penalty"].map(String::from));
    w.write_record(&header)?;
    for r in results {
        for agent in 0..r.report.n_agents() {
            let mut row = vec![r.record.index.to_string()];
            row.extend(r.record.coords.iter().map(|c| float(*c)));
            row.push(agent.to_string());
            row.push(float(r.report.payoffs[agent]));
            row.push(float(r.report.payments[agent]));
            row.push(float(r.report.penalties[agent]));
            w.write_record(&row)?;
        }
    }
    finish(w)
}

/// Per-cell seeds, filter starts and convergence diagnostics.
pub fn cells_csv<W: Write>(out: W, results: &[CellResult]) -> std::io::Result<W> {
    let mut w = writer(out);
    w.write_record(["cell", "seed", "k_s", "participants", "disagreement", "optimality_gap", "epsilon"])?;
    for r in results {
        let (dis, gap, eps) = match r.diagnostics {
            Some(d) => (float(d.disagreement), d.optimality_gap.map(float).unwrap_or_default(), float(d.epsilon)),
            None => Default::default(),
        };
        w.write_record([
            r.record.index.to_string(),
            r.record.seed.to_string(),
            r.record.k_s.to_string(),
            r.report.participants.len().to_string(),
            dis,
            gap,
            eps,
        ])?;
    }
    finish(w)
}

/// `s_0, …, s_{N−1}, agent, payoff`.
pub fn tensor_csv<W: Write>(out: W, n_agents: usize, rows: &[(Vec<usize>, usize, f64)]) -> std::io::Result<W> {
    let mut w = writer(out);
    let mut header: Vec<String> = (0..n_agents).map(|i| format!("s_{i}")).collect();
    header.extend(["agent", "payoff"].map(String::from));
    w.write_record(&header)?;
    for (idx, agent, u) in rows {
        let mut row: Vec<String> = idx.iter().map(|k| k.to_string()).collect();
        row.push(agent.to_string());
        row.push(float(*u));
        w.write_record(&row)?;
    }
    finish(w)
}

/// `sequence, step, agent, coordinate, state, gradient` for every sequence.
pub fn traces_csv<W: Write>(out: W, set: &SequenceSet) -> std::io::Result<W> {
    let mut w = writer(out);
    w.write_record(["sequence", "step", "agent", "coordinate", "state", "gradient"])?;
    for trace in set.iter() {
        let tag = trace.id.to_string();
        for (k, (states, grads)) in trace.states.iter().zip(&trace.gradients).enumerate() {
            for (p, &agent) in trace.participants.iter().enumerate() {
                for (c, (x, g)) in states[p].iter().zip(&grads[p]).enumerate() {
                    w.write_record([tag.clone(), k.to_string(), agent.to_string(), c.to_string(), float(*x), float(*g)])?;
                }
            }
        }
    }
    finish(w)
}

/// `agent, t, sequence, step, repair, passed`; `repair` is `‖ξ̃ − ξ‖²`.
pub fn repairs_csv<W: Write>(out: W, log: &[RepairRecord]) -> std::io::Result<W> {
    let mut w = writer(out);
    w.write_record(["agent", "t", "sequence", "step", "repair", "passed"])?;
    for r in log {
        w.write_record([
            r.agent.to_string(),
            r.t.to_string(),
            r.sequence.to_string(),
            r.step.to_string(),
            float(r.repair),
            r.passed.to_string(),
        ])?;
    }
    finish(w)
}

/// Pretty JSON with a trailing newline.
pub fn json_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn cell_dir(out: &Path, index: usize) -> std::path::PathBuf {
    out.join("cells").join(format!("cell-{index:05}"))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)
}
