//! Checks of long-time behavior on integrated trajectories: permanence
//! envelopes, persistence certificates, Lyapunov series, convergence verdicts
//! and the quotient decay diagnostic.

use std::io::Write;

use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::kernel::{is_irreducible_into, MutationKernel};
use crate::measure::{distance_to_dirac, nearest_optimal_equilibrium, Subset, TestFunctionFamily};
use crate::vitals::{net_growth, reproduction_number, CarryingProfile, RateModel};

pub const VERDICT_TOL: f64 = 1e-3;
/// Fraction of a run treated as its long-time tail.
pub const TAIL_FRACTION: f64 = 0.2;
pub const CHOOSE_C_GRID: usize = 200;
pub const CHOOSE_C_FLOOR: f64 = 1e-8;

fn check_profile(traj: &Trajectory, profile: &CarryingProfile) -> Result<()> {
    if profile.capacities.len() != traj.space().len() {
        return Err(Error::input(format!(
            "profile covers {} atoms, trajectory has {}",
            profile.capacities.len(),
            traj.space().len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeViolation {
    pub t: f64,
    pub bound: Bound,
    pub bound_value: f64,
    pub value: f64,
    /// Distance past the bound, beyond the allowed slack.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermanenceReport {
    pub lower_env: Vec<f64>,
    pub upper_env: Vec<f64>,
    pub slack: f64,
    pub violations: Vec<EnvelopeViolation>,
    /// Largest total mass over the final fifth of the run.
    pub tail_max_total: f64,
    pub tail_min_total: f64,
    pub k_max: f64,
}

impl PermanenceReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `min(k_min, s(0)) <= s(t) <= max(s(0), k_max)` at every snapshot,
/// allowing `10 * rel_tol * max(s(0), k_max, 1)` for integration error.
pub fn permanence_check(traj: &Trajectory, profile: &CarryingProfile) -> Result<PermanenceReport> {
    check_profile(traj, profile)?;
    let s0 = traj.totals[0];
    let lower = profile.k_min.min(s0);
    let upper = profile.k_max.max(s0);
    let slack = 10.0 * traj.config.rel_tol * s0.max(profile.k_max).max(1.0);
    let mut violations = Vec::new();
    for (t, s) in traj.times.iter().zip(&traj.totals) {
        if *s < lower - slack {
            violations.push(EnvelopeViolation {
                t: *t,
                bound: Bound::Lower,
                bound_value: lower,
                value: *s,
                excess: lower - slack - s,
            });
        }
        if *s > upper + slack {
            violations.push(EnvelopeViolation {
                t: *t,
                bound: Bound::Upper,
                bound_value: upper,
                value: *s,
                excess: s - upper - slack,
            });
        }
    }
    Ok(PermanenceReport {
        lower_env: vec![lower; traj.len()],
        upper_env: vec![upper; traj.len()],
        slack,
        violations,
        tail_max_total: traj.tail_max_total(TAIL_FRACTION),
        tail_min_total: traj.tail_min_total(TAIL_FRACTION),
        k_max: profile.k_max,
    })
}

/// Outcome of the static reachability test into the certificate's set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Irreducibility {
    Irreducible,
    Reducible,
    /// Births vanish somewhere, so the reachability argument does not apply.
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersistenceCertificate {
    pub set: Vec<usize>,
    pub eps: f64,
    /// `min_{q in set} R(eps, q) * gamma(q)(set)`.
    pub value: f64,
    pub certified: bool,
    pub irreducible: Irreducibility,
}

/// Balance test on `set` at population level `eps`: certified when every atom
/// of `set` more than replaces itself inside `set`, i.e. the minimum of
/// `R(eps, q) * gamma(q)(set)` exceeds 1.
pub fn persistence_certificate<M: RateModel + ?Sized>(
    model: &M,
    k: &MutationKernel,
    set: &[usize],
    eps: f64,
    profile: &CarryingProfile,
) -> Result<PersistenceCertificate> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::input(format!("persistence eps must be positive, got {eps}")));
    }
    if set.is_empty() {
        return Err(Error::input("persistence set must be nonempty"));
    }
    if set.iter().any(|&q| q >= k.len()) {
        return Err(Error::input("persistence set index out of range"));
    }
    if model.n_atoms() != k.len() {
        return Err(Error::input("rate model and kernel sizes differ"));
    }
    let mut set = set.to_vec();
    set.sort_unstable();
    set.dedup();
    let mut value = f64::INFINITY;
    for &q in &set {
        value = value.min(reproduction_number(model, eps, q)? * k.mass_into(q, &set));
    }
    let irreducible = match is_irreducible_into(k, &set, model, 2.0 * profile.k_max + 1.0) {
        Ok(true) => Irreducibility::Irreducible,
        Ok(false) => Irreducibility::Reducible,
        Err(Error::CertificateUnavailable(_)) => Irreducibility::Unknown,
        Err(e) => return Err(e),
    };
    Ok(PersistenceCertificate { set, eps, value, certified: value > 1.0, irreducible })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LyapunovKind {
    /// `V = [s - k_max]_+^2`.
    Total,
    /// `L = w_t + k_max (ln k_max - ln w_t) + c * mass outside optimal`,
    /// with `w_t` the weight of the target atom.
    Volterra { target: usize, optimal: Vec<usize>, c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub kind: LyapunovKind,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub mono_tol: f64,
    /// Monotonicity is checked on `values[checked_from..]`.
    pub checked_from: usize,
    /// First index `i` with `values[i + 1] > values[i] + mono_tol`.
    pub first_increase: Option<usize>,
}

impl LyapunovReport {
    pub fn monotone(&self) -> bool {
        self.first_increase.is_none()
    }
}

/// Evaluates a Lyapunov function along `traj` and reports the first increase
/// beyond `mono_tol = 1e-8 (1 + max |value|)`.
///
/// `Total` is checked along the whole run. `Volterra` is only known to
/// decrease once the total mass stays at or below `k_max`, so it is checked on
/// the longest tail with `s(t) <= k_max + mono_tol`.
pub fn lyapunov_series(traj: &Trajectory, profile: &CarryingProfile, kind: &LyapunovKind) -> Result<LyapunovReport> {
    check_profile(traj, profile)?;
    let k_max = profile.k_max;
    let values: Vec<f64> = match kind {
        LyapunovKind::Total => traj.totals.iter().map(|s| (s - k_max).max(0.0).powi(2)).collect(),
        LyapunovKind::Volterra { target, optimal, c } => {
            let n = traj.space().len();
            if *target >= n || optimal.iter().any(|&q| q >= n) {
                return Err(Error::input("Volterra atom index out of range"));
            }
            if !optimal.contains(target) {
                return Err(Error::input("Volterra target must belong to the optimal set"));
            }
            if !(*c > 0.0) {
                return Err(Error::input("Volterra weight c must be positive"));
            }
            if !(k_max > 0.0) {
                return Err(Error::Domain("Volterra function needs a positive maximal capacity".into()));
            }
            let mut out = Vec::with_capacity(traj.len());
            for (t, w) in traj.times.iter().zip(&traj.states) {
                let wt = w[*target];
                if !(wt > 0.0) {
                    return Err(Error::Domain(format!("target atom has no mass at t = {t}; logarithm undefined")));
                }
                let outside: f64 = w.iter().enumerate().filter(|(q, _)| !optimal.contains(q)).map(|(_, v)| v).sum();
                out.push(wt + k_max * (k_max.ln() - wt.ln()) + c * outside);
            }
            out
        }
    };
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mono_tol = 1e-8 * (1.0 + scale);
    let checked_from = match kind {
        LyapunovKind::Total => 0,
        LyapunovKind::Volterra { .. } => {
            let limit = k_max + mono_tol;
            traj.totals.iter().rposition(|s| *s > limit).map_or(0, |i| i + 1)
        }
    };
    let first_increase = values
        .windows(2)
        .enumerate()
        .skip(checked_from)
        .find(|(_, w)| w[1] > w[0] + mono_tol)
        .map(|(i, _)| i);
    Ok(LyapunovReport {
        kind: kind.clone(),
        times: traj.times.clone(),
        values,
        mono_tol,
        checked_from,
        first_increase,
    })
}

/// Largest `c` in `1, 1/2, 1/4, ...` with `c G(x, q) < G(x, target)` for every
/// `q` outside `optimal` on a uniform grid of [`CHOOSE_C_GRID`] points over
/// `[0, k_max]`, where `G = B - D`.
pub fn choose_c<M: RateModel + ?Sized>(
    model: &M,
    profile: &CarryingProfile,
    optimal: &[usize],
    target: usize,
) -> Result<f64> {
    let n = model.n_atoms();
    if target >= n || optimal.iter().any(|&q| q >= n) {
        return Err(Error::input("atom index out of range"));
    }
    if !(profile.k_max > 0.0) {
        return Err(Error::Precondition("choosing c needs a positive maximal capacity".into()));
    }
    let grid: Vec<f64> =
        (0..CHOOSE_C_GRID).map(|i| profile.k_max * i as f64 / (CHOOSE_C_GRID - 1) as f64).collect();
    let others: Vec<usize> = (0..n).filter(|q| !optimal.contains(q)).collect();
    let mut c = 1.0;
    while c >= CHOOSE_C_FLOOR {
        let ok = grid.iter().all(|&x| {
            let g_target = net_growth(model, x, target);
            others.iter().all(|&q| c * net_growth(model, x, q) - g_target < 0.0)
        });
        if ok {
            return Ok(c);
        }
        c *= 0.5;
    }
    Err(Error::SearchFailure(format!(
        "no admissible c >= {CHOOSE_C_FLOOR:e}: c G(x, q) < G(x, target) fails on [0, {}]",
        profile.k_max
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceVerdict {
    /// The fittest atom when it is unique.
    pub target: Option<usize>,
    pub k_max: f64,
    /// Weak* distance from the final state to `k_max * delta_target`, or to
    /// the nearest optimal equilibrium when the fittest set has several atoms.
    pub final_distance: f64,
    pub mass_outside_optimal: f64,
    /// `|s(t_end) - k_max|`.
    pub total_gap: f64,
    pub tol: f64,
    pub converged: bool,
}

/// Whether the run ended at the Dirac equilibrium `k_max * delta_target`.
/// With several fittest atoms it reports convergence to the set of
/// equilibria supported on them instead.
pub fn ass_verdict(
    traj: &Trajectory,
    profile: &CarryingProfile,
    fam: &TestFunctionFamily,
    tol: f64,
) -> Result<ConvergenceVerdict> {
    check_profile(traj, profile)?;
    let last = traj.final_measure();
    let inside = last.mass(Subset::Indices(&profile.optimal))?;
    let mass_outside_optimal = (last.total() - inside).max(0.0);
    let target = profile.unique_optimum();
    let final_distance = match target {
        Some(q) => distance_to_dirac(&last, q, profile.k_max, fam)?,
        None => nearest_optimal_equilibrium(&last, &profile.optimal, profile.k_max, fam)?.1,
    };
    Ok(ConvergenceVerdict {
        target,
        k_max: profile.k_max,
        final_distance,
        mass_outside_optimal,
        total_gap: (last.total() - profile.k_max).abs(),
        tol,
        converged: final_distance <= tol && mass_outside_optimal <= tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    pub xi: f64,
    pub times: Vec<f64>,
    /// `z = mass(U)^xi / mass(V)`.
    pub z: Vec<f64>,
    /// Least-squares slope of `ln z` over the second half of the run; `None`
    /// when `z` vanishes there.
    pub slope: Option<f64>,
    pub fit_from: usize,
}

/// The quotient `z = y^xi / x` with `y = mass(U)`, `x = mass(V)`, and the
/// exponential rate at which it decays.
pub fn ratio_diagnostic(traj: &Trajectory, u: &[usize], v: &[usize], xi: f64) -> Result<RatioReport> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::input(format!("xi must be positive, got {xi}")));
    }
    if u.is_empty() || v.is_empty() {
        return Err(Error::input("U and V must be nonempty"));
    }
    let mut z = Vec::with_capacity(traj.len());
    for (t, w) in traj.times.iter().zip(&traj.states) {
        let pick = |set: &[usize]| -> Result<f64> {
            set.iter().map(|&q| w.get(q).copied().ok_or_else(|| Error::input("atom index out of range"))).sum()
        };
        let x = pick(v)?;
        if !(x > 0.0) {
            return Err(Error::Domain(format!("mass on V vanishes at t = {t}")));
        }
        z.push(pick(u)?.powf(xi) / x);
    }
    let fit_from = traj.len() / 2;
    let slope = fit_log_slope(&traj.times[fit_from..], &z[fit_from..]);
    Ok(RatioReport { xi, times: traj.times.clone(), z, slope, fit_from })
}

fn fit_log_slope(t: &[f64], z: &[f64]) -> Option<f64> {
    if t.len() < 2 || z.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let n = t.len() as f64;
    let logs: Vec<f64> = z.iter().map(|v| v.ln()).collect();
    let tm = t.iter().sum::<f64>() / n;
    let lm = logs.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (ti, li) in t.iter().zip(&logs) {
        num += (ti - tm) * (li - lm);
        den += (ti - tm) * (ti - tm);
    }
    (den > 0.0).then(|| num / den)
}

/// Writes a two-column series CSV with header `t,<name>`.
pub fn write_series_csv<W: Write>(writer: W, name: &str, times: &[f64], values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", name])?;
    for (t, v) in times.iter().zip(values) {
        w.write_record([format!("{t:.16e}"), format!("{v:.16e}")])?;
    }
    w.flush()?;
    Ok(())
}
