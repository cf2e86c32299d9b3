//! Executes a validated scenario and writes its artifacts.
//!
//! Exit codes: 0 success, 2 validation error, 3 numeric failure. A numeric
//! failure still leaves every artifact produced before it on disk, and the
//! report lists what went wrong.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{json, Map, Value};
use selmut::analysis::{write_series_csv, TAIL_FRACTION};
use selmut::dynamics::total_mass_rate;
use selmut::{
    ass_verdict, choose_c, continuation, find_equilibrium, integrate, lyapunov_series, permanence_check,
    persistence_certificate, ratio_diagnostic, verify_integral_representation, CarryingProfile, Error,
    EquilibriumResult, LyapunovKind, StrategySpace, TestFunctionFamily, Trajectory,
};

use crate::scenario::{self, Built, LyapunovPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Integrate and write the trajectory; analyses are skipped.
    Simulate,
    /// Integrate, then run every requested analysis.
    Analyze,
    /// Only the equilibrium and continuation analyses; no integration.
    Equilibrium,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Analyze => "analyze",
            Command::Equilibrium => "equilibrium",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    /// `Value::Null` when validation failed and nothing ran.
    pub report: Value,
    pub errors: Vec<String>,
}

impl Outcome {
    fn invalid(errors: Vec<String>) -> Self {
        Outcome { exit_code: EXIT_VALIDATION, report: Value::Null, errors }
    }
}

/// Loads, validates and runs the scenario at `path`, writing into `out`.
pub fn run_file(cmd: Command, path: &Path, out: &Path, seed: u64) -> Outcome {
    let base_dir = path.parent().unwrap_or(Path::new("."));
    let built = scenario::load(path).and_then(|(s, _)| s.build(base_dir, seed));
    match built {
        Ok(b) => run_scenario(cmd, &b, out, seed),
        Err(errors) => Outcome::invalid(errors),
    }
}

fn ids(space: &StrategySpace, set: &[usize]) -> Vec<String> {
    set.iter().map(|&q| space.atoms()[q].id.clone()).collect()
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn profile_json(space: &StrategySpace, p: &CarryingProfile) -> Value {
    json!({
        "capacities": p.capacities,
        "k_max": p.k_max,
        "k_min": p.k_min,
        "optimal": ids(space, &p.optimal),
        "tol_q": p.tol_q,
        "warnings": p.warnings,
    })
}

fn anchor_l1(x: &[f64], profile: &CarryingProfile) -> Option<f64> {
    let q = profile.unique_optimum()?;
    Some(x.iter().enumerate().map(|(i, w)| (w - if i == q { profile.k_max } else { 0.0 }).abs()).sum())
}

fn equilibrium_json(r: &EquilibriumResult, profile: &CarryingProfile) -> Value {
    json!({
        "weights": r.x_star.weights(),
        "total": r.x_star.total(),
        "residual": r.residual,
        "spectral_bound": r.spectral_bound,
        "stable": r.spectral_bound < 0.0,
        "converged": r.converged,
        "iterations": r.iterations,
        "anchor_l1": anchor_l1(r.x_star.weights(), profile),
    })
}

struct Runner<'a> {
    b: &'a Built,
    out: &'a Path,
    report: Map<String, Value>,
    errors: Vec<String>,
}

impl Runner<'_> {
    fn fail(&mut self, what: &str, e: impl std::fmt::Display) {
        self.errors.push(format!("{what}: {e}"));
    }

    fn create(&self, name: &str) -> std::io::Result<BufWriter<File>> {
        File::create(self.out.join(name)).map(BufWriter::new)
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(BufWriter<File>) -> selmut::Result<()>) {
        let res = self.create(name).map_err(Error::from).and_then(f);
        if let Err(e) = res {
            self.fail(name, e);
        }
    }

    fn integrate(&mut self) -> Option<Trajectory> {
        let b = self.b;
        let (traj, err) = match integrate(&b.initial, &b.kernel, &b.model, &b.integrator) {
            Ok(t) => (t, None),
            Err(Error::Stiffness { t, dt, partial }) => {
                (*partial, Some(format!("step size {dt:e} fell below dt_min at t = {t}")))
            }
            Err(e) => {
                self.fail("integration", e);
                return None;
            }
        };
        self.write_with("trajectory.csv", |w| traj.write_csv(w));
        let last = traj.final_measure();
        let mut summary = json!({
            "completed": err.is_none(),
            "t_final": traj.times.last(),
            "snapshots": traj.len(),
            "final_total": last.total(),
            "final_weights": last.weights(),
            "pure_selection": traj.pure_selection,
            "stats": traj.stats,
            "config": traj.config,
        });
        if let Ok((rate, _)) = total_mass_rate(&last, &b.kernel, &b.model) {
            summary["final_total_rate"] = json!(rate);
        }
        self.report.insert("integration".into(), summary);
        match err {
            None => Some(traj),
            Some(msg) => {
                self.fail("integration", msg);
                None
            }
        }
    }

    fn trajectory_analyses(&mut self, traj: &Trajectory) {
        let b = self.b;
        let plan = &b.plan;
        let space = b.space.as_ref();

        if plan.permanence {
            match permanence_check(traj, &b.profile) {
                Ok(r) => {
                    self.write_with("permanence.csv", |w| write_envelope(w, traj, &r.lower_env, &r.upper_env));
                    self.report.insert(
                        "permanence".into(),
                        json!({
                            "holds": r.holds(),
                            "violations": r.violations.len(),
                            "first_violation": r.violations.first(),
                            "slack": r.slack,
                            "lower_bound": r.lower_env.first(),
                            "upper_bound": r.upper_env.first(),
                            "limsup_bound": r.k_max,
                            "tail_fraction": TAIL_FRACTION,
                            "tail_max_total": r.tail_max_total,
                            "tail_min_total": r.tail_min_total,
                        }),
                    );
                }
                Err(e) => self.fail("permanence", e),
            }
        }

        if let Some(lp) = &plan.lyapunov {
            let kind = match lp {
                LyapunovPlan::Total => Ok(LyapunovKind::Total),
                LyapunovPlan::Volterra { target, optimal, c } => match c {
                    Some(c) => Ok(*c),
                    None => choose_c(&b.model, &b.profile, optimal, *target),
                }
                .map(|c| LyapunovKind::Volterra { target: *target, optimal: optimal.clone(), c }),
            };
            match kind.and_then(|k| lyapunov_series(traj, &b.profile, &k)) {
                Ok(r) => {
                    self.write_with("lyapunov.csv", |w| write_series_csv(w, "value", &r.times, &r.values));
                    let mut v = json!({
                        "monotone": r.monotone(),
                        "mono_tol": r.mono_tol,
                        "checked_from_t": r.times.get(r.checked_from),
                        "first_increase_t": r.first_increase.map(|i| r.times[i]),
                        "initial_value": r.values.first(),
                        "final_value": r.values.last(),
                    });
                    match &r.kind {
                        LyapunovKind::Total => v["kind"] = json!("total"),
                        LyapunovKind::Volterra { target, optimal, c } => {
                            v["kind"] = json!("volterra");
                            v["target"] = json!(space.atoms()[*target].id);
                            v["optimal"] = json!(ids(space, optimal));
                            v["c"] = json!(c);
                        }
                    }
                    self.report.insert("lyapunov".into(), v);
                }
                Err(e) => self.fail("lyapunov", e),
            }
        }

        if let Some(tol) = plan.ass {
            let fam = TestFunctionFamily::atom_bumps(space);
            match ass_verdict(traj, &b.profile, &fam, tol) {
                Ok(v) => {
                    self.report.insert(
                        "ass".into(),
                        json!({
                            "converged": v.converged,
                            "target": v.target.map(|q| space.atoms()[q].id.clone()),
                            "k_max": v.k_max,
                            "final_distance": v.final_distance,
                            "mass_outside_optimal": v.mass_outside_optimal,
                            "total_gap": v.total_gap,
                            "tol": v.tol,
                        }),
                    );
                }
                Err(e) => self.fail("ass", e),
            }
        }

        if let Some((u, v, xi)) = &plan.ratio {
            match ratio_diagnostic(traj, u, v, *xi) {
                Ok(r) => {
                    self.write_with("ratio.csv", |w| write_series_csv(w, "z", &r.times, &r.z));
                    self.report.insert(
                        "ratio".into(),
                        json!({
                            "u": ids(space, u),
                            "v": ids(space, v),
                            "xi": r.xi,
                            "slope": r.slope,
                            "fit_from_t": r.times.get(r.fit_from),
                            "final_z": r.z.last(),
                        }),
                    );
                }
                Err(e) => self.fail("ratio", e),
            }
        }

        if plan.integral_representation {
            match verify_integral_representation(traj, &b.model) {
                Ok(err) => {
                    self.report.insert("integral_representation".into(), json!({ "max_rel_error": err }));
                }
                Err(e) => self.fail("integral_representation", e),
            }
        }
    }

    fn static_analyses(&mut self) {
        let b = self.b;
        let plan = &b.plan;
        if let Some((set, eps)) = &plan.persistence {
            match persistence_certificate(&b.model, &b.kernel, set, *eps, &b.profile) {
                Ok(c) => {
                    self.report.insert(
                        "persistence".into(),
                        json!({
                            "set": ids(&b.space, &c.set),
                            "eps": c.eps,
                            "value": c.value,
                            "certified": c.certified,
                            "irreducible": c.irreducible,
                        }),
                    );
                }
                Err(e) => self.fail("persistence", e),
            }
        }
    }

    fn equilibrium_analyses(&mut self, default_solve: bool) {
        let b = self.b;
        let plan = &b.plan;
        let solve = plan.equilibrium.clone().or_else(|| {
            (default_solve && plan.continuation.is_none()).then(|| scenario::EquilibriumPlan {
                x_init: b.initial.clone(),
                newton_tol: scenario::DEFAULT_NEWTON_TOL,
            })
        });
        if let Some(eq) = solve {
            match find_equilibrium(&b.kernel, &b.model, &eq.x_init, eq.newton_tol) {
                Ok(r) => {
                    if !r.converged {
                        self.fail("equilibrium", format!("no convergence, residual {:e}", r.residual));
                    }
                    self.report.insert("equilibrium".into(), equilibrium_json(&r, &b.profile));
                }
                Err(e) => self.fail("equilibrium", e),
            }
        }

        if let Some(c) = &plan.continuation {
            match continuation(&c.base, &c.target, &b.model, &c.eps, &c.x_init, c.newton_tol) {
                Ok(entries) => {
                    self.write_with("continuation.csv", |w| write_continuation(w, &b.space, &entries, &b.profile));
                    let rows: Vec<Value> = entries
                        .iter()
                        .map(|e| {
                            let mut v = equilibrium_json(&e.result, &b.profile);
                            v["eps"] = json!(e.eps);
                            v["kernel_distance"] = json!(e.kernel_distance);
                            v
                        })
                        .collect();
                    let failed = entries.iter().filter(|e| !e.result.converged).count();
                    if failed > 0 {
                        self.fail("continuation", format!("{failed} of {} solves did not converge", entries.len()));
                    }
                    self.report.insert("continuation".into(), Value::Array(rows));
                }
                Err(e) => self.fail("continuation", e),
            }
        }
    }
}

fn write_envelope<W: Write>(w: W, traj: &Trajectory, lower: &[f64], upper: &[f64]) -> selmut::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["t", "total", "lower", "upper"])?;
    for i in 0..traj.len() {
        w.write_record([fmt(traj.times[i]), fmt(traj.totals[i]), fmt(lower[i]), fmt(upper[i])])?;
    }
    w.flush()?;
    Ok(())
}

fn write_continuation<W: Write>(
    w: W,
    space: &StrategySpace,
    entries: &[selmut::ContinuationEntry],
    profile: &CarryingProfile,
) -> selmut::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let mut header: Vec<String> =
        ["eps", "kernel_distance", "converged", "residual", "spectral_bound", "anchor_l1"].map(String::from).into();
    header.extend(space.ids().map(str::to_string));
    w.write_record(&header)?;
    for e in entries {
        let x = e.result.x_star.weights();
        let mut row = vec![
            fmt(e.eps),
            fmt(e.kernel_distance),
            e.result.converged.to_string(),
            fmt(e.result.residual),
            fmt(e.result.spectral_bound),
            anchor_l1(x, profile).map(fmt).unwrap_or_default(),
        ];
        row.extend(x.iter().map(|v| fmt(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs a built scenario. `seed` is only recorded; it already shaped `b`.
pub fn run_scenario(cmd: Command, b: &Built, out: &Path, seed: u64) -> Outcome {
    if let Err(e) = fs::create_dir_all(out) {
        return Outcome {
            exit_code: EXIT_NUMERIC,
            report: Value::Null,
            errors: vec![format!("cannot create {}: {e}", out.display())],
        };
    }
    let mut report = Map::new();
    report.insert("schema".into(), json!(scenario::SCHEMA_VERSION));
    report.insert("name".into(), json!(b.name));
    report.insert("command".into(), json!(cmd.name()));
    report.insert("seed".into(), json!(seed));
    report.insert("atoms".into(), json!(b.space.ids().collect::<Vec<_>>()));
    report.insert("profile".into(), profile_json(&b.space, &b.profile));
    report.insert("initial_weights".into(), json!(b.initial.weights()));

    let mut r = Runner { b, out, report, errors: Vec::new() };
    match cmd {
        Command::Simulate => {
            r.integrate();
        }
        Command::Analyze => {
            r.static_analyses();
            if let Some(traj) = r.integrate() {
                r.trajectory_analyses(&traj);
            }
            r.equilibrium_analyses(false);
        }
        Command::Equilibrium => r.equilibrium_analyses(true),
    }

    let Runner { mut report, mut errors, .. } = r;
    report.insert("errors".into(), json!(errors));
    let report = Value::Object(report);
    let written = fs::write(out.join("report.json"), serde_json::to_string_pretty(&report).expect("report serializes"));
    if let Err(e) = written {
        errors.push(format!("report.json: {e}"));
    }
    let exit_code = if errors.is_empty() { EXIT_OK } else { EXIT_NUMERIC };
    Outcome { exit_code, report, errors }
}

