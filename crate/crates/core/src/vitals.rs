//! Birth and death rates, reproduction numbers, carrying capacities and the
//! fitness comparisons built on them.
//!
//! A model must have births nonincreasing and deaths nondecreasing in the total
//! population `s`, with `D(0, q)` bounded away from zero. Every strategy whose basic
//! reproduction number is at least one then has a carrying capacity `K(q)` with
//! `R(K(q), q) = 1`; otherwise `K(q) = 0`.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::StrategySpace;

/// Bracket expansion cap for carrying-capacity roots, in population units.
pub const S_MAX: f64 = 1e6;
/// Residual tolerance `|R(K(q), q) - 1|` for accepted carrying capacities.
pub const TOL_ROOT: f64 = 1e-10;
/// Default number of `s` samples per atom in the monotonicity audit.
pub const AUDIT_SAMPLES: usize = 100;

/// Per-strategy birth and death rates as functions of total population size.
pub trait RateModel: Send + Sync {
    fn n_atoms(&self) -> usize;
    fn birth(&self, s: f64, q: usize) -> f64;
    fn death(&self, s: f64, q: usize) -> f64;
}

impl<M: RateModel + ?Sized> RateModel for &M {
    fn n_atoms(&self) -> usize {
        (**self).n_atoms()
    }
    fn birth(&self, s: f64, q: usize) -> f64 {
        (**self).birth(s, q)
    }
    fn death(&self, s: f64, q: usize) -> f64 {
        (**self).death(s, q)
    }
}

/// `B = kappa_q exp(-eta_q s)`, `D = exp(theta s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ricker {
    pub kappa: Vec<f64>,
    pub eta: Vec<f64>,
    pub theta: f64,
}

impl Ricker {
    pub fn new(kappa: Vec<f64>, eta: Vec<f64>, theta: f64) -> Result<Self> {
        if kappa.len() != eta.len() || kappa.is_empty() {
            return Err(Error::InvalidModel(format!(
                "ricker: kappa has {} entries, eta has {}",
                kappa.len(),
                eta.len()
            )));
        }
        if kappa.iter().chain(&eta).chain([&theta]).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidModel("ricker parameters must be finite and nonnegative".into()));
        }
        Ok(Self { kappa, eta, theta })
    }

    /// Closed-form carrying capacity `ln(kappa) / (eta + theta)`, or 0 when `kappa <= 1`.
    pub fn closed_form_capacity(&self, q: usize) -> f64 {
        let k = self.kappa[q];
        if k <= 1.0 {
            0.0
        } else {
            k.ln() / (self.eta[q] + self.theta)
        }
    }
}

impl RateModel for Ricker {
    fn n_atoms(&self) -> usize {
        self.kappa.len()
    }
    fn birth(&self, s: f64, q: usize) -> f64 {
        self.kappa[q] * (-self.eta[q] * s).exp()
    }
    fn death(&self, s: f64, _q: usize) -> f64 {
        (self.theta * s).exp()
    }
}

/// `B = r_q`, `D = d_q + a_q s` with `d_q > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub r: Vec<f64>,
    pub d: Vec<f64>,
    pub a: Vec<f64>,
}

impl Logistic {
    pub fn new(r: Vec<f64>, d: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        if r.is_empty() || r.len() != d.len() || r.len() != a.len() {
            return Err(Error::InvalidModel("logistic: r, d, a must have equal nonzero length".into()));
        }
        if r.iter().chain(&a).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidModel("logistic: r and a must be finite and nonnegative".into()));
        }
        if d.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidModel(
                "logistic: baseline death d must be positive (density-independent mortality)".into(),
            ));
        }
        Ok(Self { r, d, a })
    }
}

impl RateModel for Logistic {
    fn n_atoms(&self) -> usize {
        self.r.len()
    }
    fn birth(&self, _s: f64, q: usize) -> f64 {
        self.r[q]
    }
    fn death(&self, s: f64, q: usize) -> f64 {
        self.d[q] + self.a[q] * s
    }
}

/// Rates sampled on a per-atom `s` grid, linearly interpolated and held constant
/// outside the sampled range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tabulated {
    /// `samples[q]` is sorted by `s`: `(s, B, D)`.
    samples: Vec<Vec<(f64, f64, f64)>>,
}

#[derive(Debug, Deserialize)]
struct TabulatedRow {
    s: f64,
    atom_id: String,
    #[serde(rename = "B")]
    birth: f64,
    #[serde(rename = "D")]
    death: f64,
}

impl Tabulated {
    pub fn new(samples: Vec<Vec<(f64, f64, f64)>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidModel("tabulated model has no atoms".into()));
        }
        let mut samples = samples;
        for (q, rows) in samples.iter_mut().enumerate() {
            if rows.is_empty() {
                return Err(Error::InvalidModel(format!("tabulated model has no samples for atom {q}")));
            }
            if rows.iter().any(|(s, b, d)| !(s.is_finite() && b.is_finite() && d.is_finite()) || *s < 0.0 || *b < 0.0) {
                return Err(Error::InvalidModel(format!("tabulated atom {q}: bad sample")));
            }
            rows.sort_by(|x, y| x.0.total_cmp(&y.0));
            if rows.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidModel(format!("tabulated atom {q}: repeated s value")));
            }
        }
        Ok(Self { samples })
    }

    /// Reads CSV with header `s,atom_id,B,D`; atom ids resolve against `space`.
    pub fn from_csv<R: Read>(reader: R, space: &StrategySpace) -> Result<Self> {
        let mut per_atom: BTreeMap<usize, Vec<(f64, f64, f64)>> = BTreeMap::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for row in rdr.deserialize() {
            let row: TabulatedRow = row?;
            let q = space
                .index_of(&row.atom_id)
                .ok_or_else(|| Error::input(format!("unknown atom id `{}` in rate table", row.atom_id)))?;
            per_atom.entry(q).or_default().push((row.s, row.birth, row.death));
        }
        let samples = (0..space.len())
            .map(|q| {
                per_atom
                    .remove(&q)
                    .ok_or_else(|| Error::input(format!("rate table has no rows for atom `{}`", space.atoms()[q].id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, space: &StrategySpace) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?, space)
    }

    fn interp(&self, s: f64, q: usize) -> (f64, f64) {
        let rows = &self.samples[q];
        let first = rows[0];
        let last = rows[rows.len() - 1];
        if s <= first.0 {
            return (first.1, first.2);
        }
        if s >= last.0 {
            return (last.1, last.2);
        }
        let hi = rows.partition_point(|r| r.0 <= s);
        let (s0, b0, d0) = rows[hi - 1];
        let (s1, b1, d1) = rows[hi];
        let t = (s - s0) / (s1 - s0);
        (b0 + t * (b1 - b0), d0 + t * (d1 - d0))
    }
}

impl RateModel for Tabulated {
    fn n_atoms(&self) -> usize {
        self.samples.len()
    }
    fn birth(&self, s: f64, q: usize) -> f64 {
        self.interp(s, q).0
    }
    fn death(&self, s: f64, q: usize) -> f64 {
        self.interp(s, q).1
    }
}

/// The built-in rate families behind one type.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Vitals {
    Ricker(Ricker),
    Logistic(Logistic),
    Tabulated(Tabulated),
}

impl RateModel for Vitals {
    fn n_atoms(&self) -> usize {
        match self {
            Vitals::Ricker(m) => m.n_atoms(),
            Vitals::Logistic(m) => m.n_atoms(),
            Vitals::Tabulated(m) => m.n_atoms(),
        }
    }
    fn birth(&self, s: f64, q: usize) -> f64 {
        match self {
            Vitals::Ricker(m) => m.birth(s, q),
            Vitals::Logistic(m) => m.birth(s, q),
            Vitals::Tabulated(m) => m.birth(s, q),
        }
    }
    fn death(&self, s: f64, q: usize) -> f64 {
        match self {
            Vitals::Ricker(m) => m.death(s, q),
            Vitals::Logistic(m) => m.death(s, q),
            Vitals::Tabulated(m) => m.death(s, q),
        }
    }
}

/// `R(s, q) = B(s, q) / D(s, q)`.
pub fn reproduction_number<M: RateModel + ?Sized>(model: &M, s: f64, q: usize) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::input(format!("population size must be nonnegative, got {s}")));
    }
    let d = model.death(s, q);
    if !(d > 0.0) {
        return Err(Error::InvalidModel(format!("death rate D({s}, {q}) = {d} is not positive")));
    }
    Ok(model.birth(s, q) / d)
}

/// `G(s, q) = B(s, q) - D(s, q)`, the per-capita net growth rate.
pub fn net_growth<M: RateModel + ?Sized>(model: &M, s: f64, q: usize) -> f64 {
    model.birth(s, q) - model.death(s, q)
}

/// Root of `R(., q) = 1` with the diagnostics gathered while finding it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityRoot {
    pub value: f64,
    pub residual: f64,
    /// Sign changes of `R - 1` seen while scanning the bracket; more than one
    /// means the root is not unique and `value` is the smallest.
    pub sign_changes: usize,
}

/// Carrying capacity of strategy `q`.
pub fn carrying_capacity<M: RateModel + ?Sized>(model: &M, q: usize) -> Result<f64> {
    carrying_capacity_root(model, q).map(|r| r.value)
}

pub fn carrying_capacity_root<M: RateModel + ?Sized>(model: &M, q: usize) -> Result<CapacityRoot> {
    if q >= model.n_atoms() {
        return Err(Error::input(format!("atom index {q} out of range")));
    }
    let g = |s: f64| reproduction_number(model, s, q).map(|r| r - 1.0);
    let g0 = g(0.0)?;
    if g0 <= 0.0 {
        // R_0 <= 1: capacity is zero by convention (or the root sits at s = 0).
        return Ok(CapacityRoot { value: 0.0, residual: 0.0, sign_changes: 0 });
    }

    let mut hi = 1.0;
    while g(hi)? > 0.0 {
        hi *= 2.0;
        if hi > S_MAX {
            return Err(Error::NoFiniteRoot { atom: q, s_max: S_MAX });
        }
    }

    // Scan past the bracket for sign changes so that a non-unique root resolves
    // to the smallest one and is counted.
    const SCAN: usize = 512;
    let span = 2.0 * hi + 1.0;
    let mut lo_b = 0.0;
    let mut hi_b = hi;
    let mut found = false;
    let mut changes = 0;
    let mut prev_pos = true;
    let mut prev_s = 0.0;
    for i in 1..=SCAN {
        let s = span * i as f64 / SCAN as f64;
        let pos = g(s)? > 0.0;
        if pos != prev_pos {
            changes += 1;
            if !found && !pos {
                lo_b = prev_s;
                hi_b = s;
                found = true;
            }
        }
        prev_pos = pos;
        prev_s = s;
    }

    for _ in 0..200 {
        let mid = 0.5 * (lo_b + hi_b);
        if mid <= lo_b || mid >= hi_b {
            break;
        }
        if g(mid)? > 0.0 {
            lo_b = mid;
        } else {
            hi_b = mid;
        }
        if hi_b - lo_b <= 1e-14 * hi_b.max(1.0) {
            break;
        }
    }
    let value = 0.5 * (lo_b + hi_b);
    let residual = g(value)?.abs();
    Ok(CapacityRoot { value, residual, sign_changes: changes.max(1) })
}

/// Sampled check of the rate assumptions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateAudit {
    /// `min_q D(0, q)`; must be positive.
    pub min_death_at_zero: f64,
    pub violations: Vec<String>,
}

impl RateAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `D(0, q) > 0`, `B >= 0`, `B` nonincreasing and `D` nondecreasing on
/// `samples` equispaced points of `[0, s_hi]` for every atom.
pub fn audit_rates<M: RateModel + ?Sized>(model: &M, s_hi: f64, samples: usize) -> RateAudit {
    let samples = samples.max(2);
    let mut violations = Vec::new();
    let mut min_death_at_zero = f64::INFINITY;
    for q in 0..model.n_atoms() {
        let d0 = model.death(0.0, q);
        min_death_at_zero = min_death_at_zero.min(d0);
        if !(d0 > 0.0) {
            violations.push(format!("atom {q}: D(0) = {d0} is not positive"));
        }
        let mut prev: Option<(f64, f64, f64)> = None;
        for i in 0..samples {
            let s = s_hi * i as f64 / (samples - 1) as f64;
            let (b, d) = (model.birth(s, q), model.death(s, q));
            if !(b >= 0.0) || !b.is_finite() || !d.is_finite() {
                violations.push(format!("atom {q}: rates B = {b}, D = {d} at s = {s}"));
                break;
            }
            if let Some((s0, b0, d0)) = prev {
                let slack = 1e-12 * (1.0 + b0.abs().max(d0.abs()));
                if b > b0 + slack {
                    violations.push(format!("atom {q}: B increases between s = {s0} and s = {s}"));
                    break;
                }
                if d < d0 - slack {
                    violations.push(format!("atom {q}: D decreases between s = {s0} and s = {s}"));
                    break;
                }
            }
            prev = Some((s, b, d));
        }
    }
    RateAudit { min_death_at_zero, violations }
}

/// Carrying capacity per atom together with its extremes and maximizers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarryingProfile {
    pub capacities: Vec<f64>,
    pub k_max: f64,
    pub k_min: f64,
    /// Atoms with `K(q) >= k_max - tol_q`.
    pub optimal: Vec<usize>,
    pub tol_q: f64,
    pub warnings: Vec<String>,
}

impl CarryingProfile {
    /// Groups capacities directly; `tol_q` defaults to `1e-9 * max(1, k_max)`.
    pub fn from_capacities(capacities: Vec<f64>, tol_q: Option<f64>) -> Result<Self> {
        if capacities.is_empty() {
            return Err(Error::input("no capacities"));
        }
        let k_max = capacities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let k_min = capacities.iter().copied().fold(f64::INFINITY, f64::min);
        let tol_q = tol_q.unwrap_or(1e-9 * k_max.max(1.0));
        let optimal = capacities
            .iter()
            .enumerate()
            .filter(|(_, k)| **k >= k_max - tol_q)
            .map(|(i, _)| i)
            .collect();
        Ok(Self { capacities, k_max, k_min, optimal, tol_q, warnings: Vec::new() })
    }

    pub fn is_optimal(&self, q: usize) -> bool {
        self.optimal.contains(&q)
    }

    /// The unique fittest atom, if there is exactly one.
    pub fn unique_optimum(&self) -> Option<usize> {
        match self.optimal.as_slice() {
            [q] => Some(*q),
            _ => None,
        }
    }
}

/// Carrying capacities for every atom of `space`, after auditing the model on
/// `[0, 2 k_max + 1]`.
pub fn build_profile<M: RateModel + ?Sized>(
    model: &M,
    space: &StrategySpace,
    tol_q: Option<f64>,
) -> Result<CarryingProfile> {
    if model.n_atoms() != space.len() {
        return Err(Error::input(format!(
            "model has {} atoms, space has {}",
            model.n_atoms(),
            space.len()
        )));
    }
    let mut warnings = Vec::new();
    let mut capacities = Vec::with_capacity(space.len());
    for q in 0..space.len() {
        let root = carrying_capacity_root(model, q)?;
        if root.sign_changes > 1 {
            warnings.push(format!(
                "atom `{}`: R(s) - 1 changes sign {} times; using the smallest root",
                space.atoms()[q].id,
                root.sign_changes
            ));
        }
        capacities.push(root.value);
    }
    let mut profile = CarryingProfile::from_capacities(capacities, tol_q)?;
    let audit = audit_rates(model, 2.0 * profile.k_max + 1.0, AUDIT_SAMPLES);
    if !audit.passed() {
        return Err(Error::InvalidModel(audit.violations.join("; ")));
    }
    profile.warnings = warnings;
    Ok(profile)
}

/// `lambda_R(q, qhat) = R(K(q), qhat) - 1`: growth factor of a rare `qhat`
/// in a resident population of `q` at its carrying capacity.
pub fn relative_fitness<M: RateModel + ?Sized>(
    model: &M,
    profile: &CarryingProfile,
    q: usize,
    qhat: usize,
) -> Result<f64> {
    Ok(reproduction_number(model, profile.capacities[q], qhat)? - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RivalReport {
    pub rival: usize,
    pub relative_fitness: f64,
    pub invasion_number: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EssReport {
    pub strategy: usize,
    pub is_ess: bool,
    pub rivals: Vec<RivalReport>,
}

/// `q` is an ESS when every rival has `lambda_R(q, rival) < -tol`.
pub fn is_ess<M: RateModel + ?Sized>(model: &M, profile: &CarryingProfile, q: usize, tol: f64) -> Result<EssReport> {
    let mut rivals = Vec::new();
    for rival in (0..model.n_atoms()).filter(|&r| r != q) {
        let lambda = relative_fitness(model, profile, q, rival)?;
        rivals.push(RivalReport { rival, relative_fitness: lambda, invasion_number: lambda + 1.0 });
    }
    let is_ess = rivals.iter().all(|r| r.relative_fitness < -tol);
    Ok(EssReport { strategy: q, is_ess, rivals })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuperiorityMargin {
    pub x: f64,
    pub optimal: usize,
    pub other: usize,
    /// `R(x, optimal) - R(x, other)`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperiorityReport {
    pub holds: bool,
    pub worst: Option<SuperiorityMargin>,
}

/// Whether every fittest strategy has a strictly larger reproduction number than
/// every other strategy at `grid_size` equispaced population sizes in
/// `[k_min, k_max]`.
pub fn check_superiority<M: RateModel + ?Sized>(
    model: &M,
    profile: &CarryingProfile,
    grid_size: usize,
) -> Result<SuperiorityReport> {
    if grid_size < 2 {
        return Err(Error::input("superiority grid needs at least two points"));
    }
    let mut worst: Option<SuperiorityMargin> = None;
    let others: Vec<usize> = (0..model.n_atoms()).filter(|q| !profile.is_optimal(*q)).collect();
    for i in 0..grid_size {
        let x = profile.k_min + (profile.k_max - profile.k_min) * i as f64 / (grid_size - 1) as f64;
        for &qd in &profile.optimal {
            let rd = reproduction_number(model, x, qd)?;
            for &q in &others {
                let margin = rd - reproduction_number(model, x, q)?;
                if worst.map_or(true, |w| margin < w.margin) {
                    worst = Some(SuperiorityMargin { x, optimal: qd, other: q, margin });
                }
            }
        }
    }
    Ok(SuperiorityReport { holds: worst.map_or(true, |w| w.margin > 0.0), worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_10;

    fn single() -> Ricker {
        Ricker::new(vec![10.0], vec![0.5], 0.5).unwrap()
    }

    pub(crate) fn three_atom() -> Ricker {
        Ricker::new(vec![20.0, 10.0, 1.0], vec![5.0, 0.5, 0.5], 0.5).unwrap()
    }

    #[test]
    fn reproduction_number_examples() {
        let m = single();
        assert!((reproduction_number(&m, 0.0, 0).unwrap() - 10.0).abs() < 1e-14);
        let k = carrying_capacity(&m, 0).unwrap();
        assert!((reproduction_number(&m, k, 0).unwrap() - 1.0).abs() <= TOL_ROOT);
        let l = Logistic::new(vec![2.0], vec![1.0], vec![1.0]).unwrap();
        assert_eq!(reproduction_number(&l, 1.0, 0).unwrap(), 1.0);
        assert!(reproduction_number(&m, -1.0, 0).is_err());
    }

    #[test]
    fn nonpositive_death_is_invalid_model() {
        let t = Tabulated::new(vec![vec![(0.0, 1.0, 0.0), (1.0, 1.0, 1.0)]]).unwrap();
        assert!(matches!(reproduction_number(&t, 0.0, 0), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn capacity_examples() {
        assert!((carrying_capacity(&single(), 0).unwrap() - LN_10).abs() < 1e-12);
        let weak = Ricker::new(vec![0.5], vec![0.5], 0.5).unwrap();
        assert_eq!(carrying_capacity(&weak, 0).unwrap(), 0.0);
        let neutral = Ricker::new(vec![1.0], vec![0.5], 0.5).unwrap();
        assert_eq!(carrying_capacity(&neutral, 0).unwrap(), 0.0);
    }

    #[test]
    fn capacity_without_root_fails() {
        // Births never fall below deaths.
        let m = Ricker::new(vec![10.0], vec![0.0], 0.0).unwrap();
        assert!(matches!(carrying_capacity(&m, 0), Err(Error::NoFiniteRoot { .. })));
    }

    #[test]
    fn logistic_capacity() {
        // r / (d + a K) = 1  =>  K = (r - d) / a
        let l = Logistic::new(vec![3.0, 0.5], vec![1.0, 1.0], vec![0.5, 1.0]).unwrap();
        assert!((carrying_capacity(&l, 0).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(carrying_capacity(&l, 1).unwrap(), 0.0);
        assert!(Logistic::new(vec![1.0], vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn profile_of_counterexample_family() {
        let sp = StrategySpace::labeled(3).unwrap();
        let p = build_profile(&three_atom(), &sp, None).unwrap();
        let expected = [20f64.ln() / 5.5, LN_10, 0.0];
        for (k, e) in p.capacities.iter().zip(expected) {
            assert!((k - e).abs() < 1e-12, "{k} vs {e}");
        }
        assert!((p.k_max - LN_10).abs() < 1e-12);
        assert_eq!(p.k_min, 0.0);
        assert_eq!(p.optimal, vec![1]);
        assert_eq!(p.unique_optimum(), Some(1));
    }

    #[test]
    fn identical_atoms_are_all_optimal() {
        let sp = StrategySpace::labeled(4).unwrap();
        let m = Ricker::new(vec![5.0; 4], vec![0.3; 4], 0.2).unwrap();
        let p = build_profile(&m, &sp, None).unwrap();
        assert_eq!(p.optimal, vec![0, 1, 2, 3]);
    }

    #[test]
    fn near_ties_group() {
        let p = CarryingProfile::from_capacities(vec![LN_10, LN_10 - 1e-12], Some(1e-9)).unwrap();
        assert_eq!(p.optimal, vec![0, 1]);
        let p = CarryingProfile::from_capacities(vec![LN_10, LN_10 - 1e-6], Some(1e-9)).unwrap();
        assert_eq!(p.optimal, vec![0]);
    }

    #[test]
    fn relative_fitness_examples() {
        let m = three_atom();
        let sp = StrategySpace::labeled(3).unwrap();
        let p = build_profile(&m, &sp, None).unwrap();
        for q in 0..3 {
            assert!(relative_fitness(&m, &p, q, q).unwrap().abs() < 1e-9);
        }
        let l21 = relative_fitness(&m, &p, 1, 0).unwrap();
        assert!((l21 - (20.0 * (-5.5 * LN_10).exp() - 1.0)).abs() < 1e-12);
        let l12 = relative_fitness(&m, &p, 0, 1).unwrap();
        assert!((l12 - (10.0 * 20f64.powf(-1.0 / 5.5) - 1.0)).abs() < 1e-10);
        assert!((l12 - 4.800282).abs() < 1e-6);
    }

    #[test]
    fn ess_examples() {
        let m = three_atom();
        let sp = StrategySpace::labeled(3).unwrap();
        let p = build_profile(&m, &sp, None).unwrap();
        let r = is_ess(&m, &p, 1, 0.0).unwrap();
        assert!(r.is_ess);
        assert_eq!(r.rivals.len(), 2);
        for rival in &r.rivals {
            assert!((rival.invasion_number - rival.relative_fitness - 1.0).abs() < 1e-15);
        }
        assert!(!is_ess(&m, &p, 0, 0.0).unwrap().is_ess);

        let one = single();
        let p1 = build_profile(&one, &StrategySpace::labeled(1).unwrap(), None).unwrap();
        assert!(is_ess(&one, &p1, 0, 0.0).unwrap().is_ess);
    }

    #[test]
    fn superiority_examples() {
        let sp2 = StrategySpace::labeled(2).unwrap();
        let fact = Ricker::new(vec![10.0, 5.0], vec![0.5, 0.5], 0.5).unwrap();
        let p = build_profile(&fact, &sp2, None).unwrap();
        assert!(check_superiority(&fact, &p, 50).unwrap().holds);

        let m = three_atom();
        let p = build_profile(&m, &StrategySpace::labeled(3).unwrap(), None).unwrap();
        let rep = check_superiority(&m, &p, 50).unwrap();
        assert!(!rep.holds);
        let w = rep.worst.unwrap();
        assert_eq!((w.x, w.optimal, w.other), (0.0, 1, 0));
        assert!((w.margin - (10.0 - 20.0)).abs() < 1e-12);

        let one = single();
        let p1 = build_profile(&one, &StrategySpace::labeled(1).unwrap(), None).unwrap();
        assert!(check_superiority(&one, &p1, 2).unwrap().holds);
    }

    #[test]
    fn net_growth_examples() {
        let m = single();
        assert!(net_growth(&m, LN_10, 0).abs() < 1e-12);
        let expected = 10.0 * (-0.5f64).exp() - 0.5f64.exp();
        assert!((net_growth(&m, 1.0, 0) - expected).abs() < 1e-14);
        assert!((net_growth(&m, 1.0, 0) - 4.41658).abs() < 1e-5);
    }

    #[test]
    fn tabulated_interpolation_and_csv() {
        let sp = StrategySpace::labeled(2).unwrap();
        let csv = "s,atom_id,B,D\n0,q1,4,1\n2,q1,2,1\n4,q1,0,1\n0,q2,1,2\n10,q2,1,2\n";
        let t = Tabulated::from_csv(csv.as_bytes(), &sp).unwrap();
        assert_eq!(t.birth(1.0, 0), 3.0);
        assert_eq!(t.birth(9.0, 0), 0.0);
        assert_eq!(t.death(5.0, 1), 2.0);
        // B = 4 - s on [0, 4], D = 1: root at s = 3.
        assert!((carrying_capacity(&t, 0).unwrap() - 3.0).abs() < 1e-9);
        assert_eq!(carrying_capacity(&t, 1).unwrap(), 0.0);

        let missing = "s,atom_id,B,D\n0,q1,4,1\n";
        assert!(Tabulated::from_csv(missing.as_bytes(), &sp).is_err());
        let unknown = "s,atom_id,B,D\n0,zz,4,1\n";
        assert!(Tabulated::from_csv(unknown.as_bytes(), &sp).is_err());
    }

    #[test]
    fn multiple_roots_pick_smallest_with_warning() {
        // R dips below one on (1, 2) and returns above it: not a valid model,
        // but the capacity search must still report the first crossing.
        let t = Tabulated::new(vec![vec![
            (0.0, 2.0, 1.0),
            (1.0, 0.5, 1.0),
            (2.0, 0.5, 1.0),
            (3.0, 2.0, 1.0),
            (4.0, 0.5, 1.0),
        ]])
        .unwrap();
        let root = carrying_capacity_root(&t, 0).unwrap();
        assert!((root.value - 2.0 / 3.0).abs() < 1e-9);
        assert!(root.sign_changes > 1);
        let sp = StrategySpace::labeled(1).unwrap();
        // The audit rejects the non-monotone births.
        assert!(matches!(build_profile(&t, &sp, None), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn audit_flags_increasing_birth() {
        let t = Tabulated::new(vec![vec![(0.0, 1.0, 1.0), (1.0, 2.0, 1.0)]]).unwrap();
        let a = audit_rates(&t, 2.0, 50);
        assert!(!a.passed());
        let ok = audit_rates(&three_atom(), 5.0, 100);
        assert!(ok.passed());
        assert_eq!(ok.min_death_at_zero, 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone_and_root_certified(
                kappa in prop::collection::vec(0.2f64..50.0, 1..6),
                theta in 0.05f64..2.0,
                eta_seed in 0.0f64..3.0,
            ) {
                let n = kappa.len();
                let eta: Vec<f64> = (0..n).map(|i| eta_seed * (1.0 + i as f64) / n as f64).collect();
                let m = Ricker::new(kappa, eta, theta).unwrap();
                let sp = StrategySpace::labeled(n).unwrap();
                let p = build_profile(&m, &sp, None).unwrap();
                prop_assert!(audit_rates(&m, 2.0 * p.k_max + 1.0, 100).passed());
                for q in 0..n {
                    if p.capacities[q] > 0.0 {
                        let r = reproduction_number(&m, p.capacities[q], q).unwrap();
                        prop_assert!((r - 1.0).abs() <= TOL_ROOT);
                    }
                    prop_assert!(p.k_min <= p.capacities[q] && p.capacities[q] <= p.k_max);
                }
            }

            #[test]
            fn ess_iff_unique_capacity_maximum(
                kappa in prop::collection::vec(1.5f64..30.0, 2..5),
                eta in prop::collection::vec(0.0f64..3.0, 5),
            ) {
                let n = kappa.len();
                let m = Ricker::new(kappa, eta[..n].to_vec(), 0.5).unwrap();
                let sp = StrategySpace::labeled(n).unwrap();
                let p = build_profile(&m, &sp, Some(1e-12)).unwrap();
                for q in 0..n {
                    let unique_max = (0..n).all(|o| o == q || p.capacities[o] < p.capacities[q]);
                    prop_assert_eq!(is_ess(&m, &p, q, 0.0).unwrap().is_ess, unique_max);
                }
            }

            #[test]
            fn factorized_models_maximize_kappa(
                kappa in prop::collection::vec(1.1f64..30.0, 1..6),
                eta in 0.0f64..2.0,
            ) {
                let n = kappa.len();
                let kmax = kappa.iter().copied().fold(f64::MIN, f64::max);
                let argmax: Vec<usize> = (0..n).filter(|&i| kappa[i] == kmax).collect();
                let m = Ricker::new(kappa, vec![eta; n], 0.3).unwrap();
                let p = build_profile(&m, &StrategySpace::labeled(n).unwrap(), Some(1e-12)).unwrap();
                prop_assert_eq!(p.optimal.clone(), argmax);
                prop_assert!(check_superiority(&m, &p, 20).unwrap().holds);
            }
        }
    }
}
