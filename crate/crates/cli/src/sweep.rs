//! One scenario run per parameter value, merged into `sweep.csv` and
//! `sweep.json`.
//!
//! Parameters are dotted paths into the scenario JSON with `[i]` for array
//! elements, e.g. `kernel.blend.eps`, `model.ricker.kappa[0]` or
//! `initial.uniform.total`. The leaf must already exist and be a number.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::run::{run_scenario, Command, Outcome, EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION};
use crate::scenario;

/// Top-level sections a sweep may touch.
pub const SWEEPABLE_ROOTS: [&str; 3] = ["kernel", "model", "initial"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Key(String),
    Index(usize),
}

pub fn parse_param(param: &str) -> Result<Vec<Segment>, String> {
    let mut segs = Vec::new();
    for part in param.split('.') {
        let (key, mut rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if key.is_empty() {
            return Err(format!("parameter `{param}`: empty path segment"));
        }
        segs.push(Segment::Key(key.to_string()));
        while !rest.is_empty() {
            let close = rest.find(']').filter(|_| rest.starts_with('['));
            let idx = close.and_then(|c| rest[1..c].parse::<usize>().ok().map(|i| (i, c)));
            let Some((i, c)) = idx else {
                return Err(format!("parameter `{param}`: malformed index in `{part}`"));
            };
            segs.push(Segment::Index(i));
            rest = &rest[c + 1..];
        }
    }
    match segs.first() {
        Some(Segment::Key(k)) if SWEEPABLE_ROOTS.contains(&k.as_str()) => Ok(segs),
        _ => Err(format!("parameter `{param}`: must start with one of {}", SWEEPABLE_ROOTS.join(", "))),
    }
}

/// Replaces the numeric leaf at `path` with `x`.
pub fn apply(doc: &mut Value, path: &[Segment], x: f64) -> Result<(), String> {
    let mut cur = doc;
    for seg in path {
        cur = match seg {
            Segment::Key(k) => cur.get_mut(k.as_str()),
            Segment::Index(i) => cur.get_mut(*i),
        }
        .ok_or_else(|| format!("parameter path does not exist at `{}`", describe(seg)))?;
    }
    if !cur.is_number() {
        return Err("parameter does not name a numeric value".into());
    }
    *cur = json!(x);
    Ok(())
}

fn describe(seg: &Segment) -> String {
    match seg {
        Segment::Key(k) => k.clone(),
        Segment::Index(i) => format!("[{i}]"),
    }
}

pub fn parse_values(list: &str) -> Result<Vec<f64>, String> {
    let values: Vec<f64> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: `{s}`")))
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err("values list is empty".into());
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(format!("value {bad} is not finite"));
    }
    Ok(values)
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub exit_code: i32,
    /// Validation errors that stopped the sweep before any run.
    pub errors: Vec<String>,
    pub runs: Vec<Outcome>,
}

/// Validates the base scenario and the parameter, then runs every value in
/// parallel. Results keep input order. Per-run failures are recorded and do
/// not change the exit code.
pub fn run_sweep(cmd: Command, path: &Path, param: &str, values: &[f64], out: &Path, seed: u64) -> SweepOutcome {
    let stop = |errors: Vec<String>| SweepOutcome { exit_code: EXIT_VALIDATION, errors, runs: Vec::new() };
    if values.is_empty() {
        return stop(vec!["values list is empty".into()]);
    }
    let segs = match parse_param(param) {
        Ok(s) => s,
        Err(e) => return stop(vec![e]),
    };
    let base_dir = path.parent().unwrap_or(Path::new("."));
    let doc = match scenario::load(path).and_then(|(s, doc)| s.build(base_dir, seed).map(|_| doc)) {
        Ok(doc) => doc,
        Err(errors) => return stop(errors),
    };
    if let Err(e) = apply(&mut doc.clone(), &segs, values[0]) {
        return stop(vec![format!("parameter `{param}`: {e}")]);
    }
    if let Err(e) = fs::create_dir_all(out) {
        return SweepOutcome {
            exit_code: EXIT_NUMERIC,
            errors: vec![format!("cannot create {}: {e}", out.display())],
            runs: Vec::new(),
        };
    }

    let runs: Vec<Outcome> = values
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut d = doc.clone();
            let built = apply(&mut d, &segs, x)
                .map_err(|e| vec![e])
                .and_then(|_| scenario::parse_value(&d))
                .and_then(|s| s.build(base_dir, seed));
            match built {
                Ok(b) => run_scenario(cmd, &b, &out.join(format!("run_{i}")), seed),
                Err(errors) => Outcome { exit_code: EXIT_VALIDATION, report: Value::Null, errors },
            }
        })
        .collect();

    let mut errors = Vec::new();
    if let Err(e) = write_merged(out, param, values, &runs) {
        errors.push(format!("sweep output: {e}"));
    }
    let exit_code = if errors.is_empty() { EXIT_OK } else { EXIT_NUMERIC };
    SweepOutcome { exit_code, errors, runs }
}

/// Columns of `sweep.csv` after `index,value,exit_code`, as JSON pointers
/// into each run's report.
pub const SUMMARY_COLUMNS: [(&str, &str); 9] = [
    ("k_max", "/profile/k_max"),
    ("final_total", "/integration/final_total"),
    ("limsup_bound", "/permanence/limsup_bound"),
    ("tail_max_total", "/permanence/tail_max_total"),
    ("ass_converged", "/ass/converged"),
    ("ass_final_distance", "/ass/final_distance"),
    ("equilibrium_converged", "/equilibrium/converged"),
    ("equilibrium_anchor_l1", "/equilibrium/anchor_l1"),
    ("equilibrium_spectral_bound", "/equilibrium/spectral_bound"),
];

fn cell(v: Option<&Value>) -> String {
    match v {
        Some(Value::Number(n)) => n.as_f64().map(|x| format!("{x:.16e}")).unwrap_or_default(),
        Some(Value::Bool(b)) => b.to_string(),
        Some(Value::String(s)) => s.clone(),
        _ => String::new(),
    }
}

fn write_merged(out: &Path, param: &str, values: &[f64], runs: &[Outcome]) -> Result<(), Box<dyn std::error::Error>> {
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    let mut header = vec!["index", "value", "exit_code"];
    header.extend(SUMMARY_COLUMNS.iter().map(|(name, _)| *name));
    header.push("errors");
    w.write_record(&header)?;
    for (i, (x, run)) in values.iter().zip(runs).enumerate() {
        let mut row = vec![i.to_string(), format!("{x:.16e}"), run.exit_code.to_string()];
        row.extend(SUMMARY_COLUMNS.iter().map(|(_, ptr)| cell(run.report.pointer(ptr))));
        row.push(run.errors.join("; "));
        w.write_record(&row)?;
    }
    w.flush()?;

    let merged: Vec<Value> = values
        .iter()
        .zip(runs)
        .enumerate()
        .map(|(i, (x, run))| {
            json!({
                "index": i,
                "value": x,
                "dir": format!("run_{i}"),
                "exit_code": run.exit_code,
                "errors": run.errors,
                "report": run.report,
            })
        })
        .collect();
    let doc = json!({ "param": param, "values": values, "runs": merged });
    fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}
