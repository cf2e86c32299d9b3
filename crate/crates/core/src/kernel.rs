//! Mutation kernels: row-stochastic matrices whose row `i` is the offspring
//! strategy distribution of a parent with strategy `i`.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{same_space, weak_norm, StrategySpace, TestFunctionFamily};
use crate::vitals::RateModel;

/// Row sums must match one to this tolerance after construction.
pub const TOL_ROW: f64 = 1e-12;
/// Row sums further than this from one are rejected rather than renormalized.
pub const TOL_ROW_INPUT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MutationKernel {
    #[serde(skip)]
    space: Arc<StrategySpace>,
    n: usize,
    /// Row-major; `gamma[i * n + j]` is the fraction of offspring of `i` born as `j`.
    gamma: Vec<f64>,
}

impl MutationKernel {
    /// Validates nonnegativity and row sums, then renormalizes every row exactly.
    pub fn from_rows(space: Arc<StrategySpace>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = space.len();
        if rows.len() != n {
            return Err(Error::input(format!("kernel has {} rows for {n} atoms", rows.len())));
        }
        let mut gamma = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::input(format!("kernel row {i} has {} entries for {n} atoms", row.len())));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::input(format!("kernel row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > TOL_ROW_INPUT {
                return Err(Error::input(format!("kernel row {i} sums to {sum}, not 1")));
            }
            gamma.extend(row.iter().map(|v| v / sum));
        }
        Ok(Self { space, n, gamma })
    }

    /// Builds rows from unnormalized nonnegative weights.
    fn from_weights(space: Arc<StrategySpace>, mut gamma: Vec<f64>) -> Self {
        let n = space.len();
        for row in gamma.chunks_mut(n) {
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Self { space, n, gamma }
    }

    /// Reads an `N x N` headerless CSV matrix.
    pub fn from_csv<R: Read>(space: Arc<StrategySpace>, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::input(format!("kernel CSV entry `{f}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::from_rows(space, rows)
    }

    /// Writes the matrix as headerless CSV with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for i in 0..self.n {
            w.write_record(self.row(i).iter().map(|v| format!("{v:.16e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn space(&self) -> &Arc<StrategySpace> {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.gamma[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// `gamma(i)(set)`.
    pub fn mass_into(&self, i: usize, set: &[usize]) -> f64 {
        set.iter().map(|&j| self.get(i, j)).sum()
    }

    pub fn is_identity(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == if i == j { 1.0 } else { 0.0 }))
    }
}

/// Pure selection: every offspring inherits the parent's strategy.
pub fn identity_kernel(space: Arc<StrategySpace>) -> MutationKernel {
    let n = space.len();
    let mut gamma = vec![0.0; n * n];
    for i in 0..n {
        gamma[i * n + i] = 1.0;
    }
    MutationKernel { space, n, gamma }
}

/// Every row uniform over all atoms.
pub fn uniform_kernel(space: Arc<StrategySpace>) -> MutationKernel {
    let n = space.len();
    MutationKernel { space, n, gamma: vec![1.0 / n as f64; n * n] }
}

/// `(1 - eps) base + eps target`.
pub fn blend_toward(base: &MutationKernel, target: &MutationKernel, eps: f64) -> Result<MutationKernel> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::input(format!("blend weight {eps} outside [0, 1]")));
    }
    if !same_space(&base.space, &target.space) {
        return Err(Error::input("kernels live on different strategy spaces"));
    }
    let gamma = base
        .gamma
        .iter()
        .zip(&target.gamma)
        .map(|(b, t)| (1.0 - eps) * b + eps * t)
        .collect();
    Ok(MutationKernel { space: base.space.clone(), n: base.n, gamma })
}

/// Gaussian mutation on the atom coordinates: `gamma[i][j] ∝ exp(-d(i, j)^2 / (2 sigma^2))`.
pub fn gaussian_grid_kernel(space: Arc<StrategySpace>, sigma: f64) -> Result<MutationKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::input(format!("gaussian kernel width must be positive, got {sigma}")));
    }
    let n = space.len();
    let mut gamma = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let d = space.distance(i, j);
            gamma.push((-d * d / (2.0 * sigma * sigma)).exp());
        }
    }
    Ok(MutationKernel::from_weights(space, gamma))
}

/// A kernel directed to `target` within `optimal`: `target` breeds true, the
/// other members of `optimal` send a fraction `inner` of their offspring to
/// `target` and keep the rest, and atoms outside `optimal` send a fraction
/// `outer` to `target`.
pub fn directed_kernel(
    space: Arc<StrategySpace>,
    target: usize,
    optimal: &[usize],
    inner: f64,
    outer: f64,
) -> Result<MutationKernel> {
    let n = space.len();
    if target >= n || !optimal.contains(&target) {
        return Err(Error::input("directed kernel target must belong to the optimal set"));
    }
    if !(inner > 0.0 && inner <= 1.0) || !(0.0..=1.0).contains(&outer) {
        return Err(Error::input("directed kernel fractions must satisfy 0 < inner <= 1, 0 <= outer <= 1"));
    }
    let mut gamma = vec![0.0; n * n];
    for i in 0..n {
        if i == target {
            gamma[i * n + i] = 1.0;
            continue;
        }
        let f = if optimal.contains(&i) { inner } else { outer };
        gamma[i * n + target] += f;
        gamma[i * n + i] += 1.0 - f;
    }
    Ok(MutationKernel { space, n, gamma })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimumPreservation {
    pub holds: bool,
    /// `max_{q in optimal} 1 - gamma(q)(optimal)`.
    pub worst_leak: f64,
}

/// Whether no offspring of an optimal strategy leaves the optimal set.
pub fn is_optimum_preserving(k: &MutationKernel, optimal: &[usize]) -> OptimumPreservation {
    let worst_leak = optimal
        .iter()
        .map(|&i| 1.0 - k.mass_into(i, optimal))
        .fold(0.0, f64::max);
    OptimumPreservation { holds: worst_leak <= TOL_ROW, worst_leak }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum DirectedFailure {
    TargetNotOptimal,
    /// `gamma(target)({target}) < 1`.
    TargetNotAbsorbing { retention: f64 },
    /// An optimal strategy sends nothing to the target.
    NoFlowToTarget { row: usize },
    /// An optimal strategy loses offspring outside the optimal set.
    Leak { row: usize, leak: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Directedness {
    pub holds: bool,
    pub failure: Option<DirectedFailure>,
}

pub fn is_directed(k: &MutationKernel, target: usize, optimal: &[usize]) -> Directedness {
    let fail = |f| Directedness { holds: false, failure: Some(f) };
    if !optimal.contains(&target) {
        return fail(DirectedFailure::TargetNotOptimal);
    }
    let retention = k.get(target, target);
    if (retention - 1.0).abs() > TOL_ROW {
        return fail(DirectedFailure::TargetNotAbsorbing { retention });
    }
    for &i in optimal {
        if !(k.get(i, target) > 0.0) {
            return fail(DirectedFailure::NoFlowToTarget { row: i });
        }
        let leak = 1.0 - k.mass_into(i, optimal);
        if leak.abs() > TOL_ROW {
            return fail(DirectedFailure::Leak { row: i, leak });
        }
    }
    Directedness { holds: true, failure: None }
}

/// Static certificate that every atom can feed mass into `set`: each atom has a
/// path into `set` along edges `i -> j` with `gamma[i][j] > 0`.
///
/// The certificate needs strictly positive births, checked on `samples` points of
/// `[0, s_hi]`.
pub fn is_irreducible_into<M: RateModel + ?Sized>(
    k: &MutationKernel,
    set: &[usize],
    model: &M,
    s_hi: f64,
) -> Result<bool> {
    const SAMPLES: usize = 100;
    for q in 0..k.n {
        for i in 0..SAMPLES {
            let s = s_hi * i as f64 / (SAMPLES - 1) as f64;
            if !(model.birth(s, q) > 0.0) {
                return Err(Error::CertificateUnavailable(format!(
                    "birth rate of atom {q} vanishes at s = {s}"
                )));
            }
        }
    }
    if set.iter().any(|&j| j >= k.n) {
        return Err(Error::input("set index out of range"));
    }
    // Reverse breadth-first search from the set.
    let mut reaches = vec![false; k.n];
    let mut queue: VecDeque<usize> = set.iter().copied().collect();
    for &j in set {
        reaches[j] = true;
    }
    while let Some(j) = queue.pop_front() {
        for i in 0..k.n {
            if !reaches[i] && k.get(i, j) > 0.0 {
                reaches[i] = true;
                queue.push_back(i);
            }
        }
    }
    Ok(reaches.into_iter().all(|r| r))
}

/// `max_i p(gamma1(i) - gamma2(i))` with the atom-bump weak* norm.
pub fn kernel_distance(k1: &MutationKernel, k2: &MutationKernel) -> Result<f64> {
    if !same_space(&k1.space, &k2.space) {
        return Err(Error::input("kernels live on different strategy spaces"));
    }
    let fam = TestFunctionFamily::atom_bumps(&k1.space);
    let mut worst: f64 = 0.0;
    let mut diff = vec![0.0; k1.n];
    for i in 0..k1.n {
        for (d, (a, b)) in diff.iter_mut().zip(k1.row(i).iter().zip(k2.row(i))) {
            *d = a - b;
        }
        worst = worst.max(weak_norm(&diff, &fam)?);
    }
    Ok(worst)
}
