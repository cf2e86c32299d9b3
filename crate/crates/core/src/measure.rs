//! Finite strategy spaces, atomic measures on them, and the weak* norm used to
//! measure how far a population is from an equilibrium measure.

use std::collections::HashSet;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub id: String,
    pub coords: Vec<f64>,
}

/// A finite set of distinct strategy points with the Euclidean metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategySpace {
    atoms: Vec<Atom>,
    min_separation: f64,
}

impl StrategySpace {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::input("strategy space needs at least one atom"));
        }
        let dim = atoms[0].coords.len();
        let mut seen = HashSet::new();
        for atom in &atoms {
            if !seen.insert(atom.id.as_str()) {
                return Err(Error::input(format!("duplicate atom id `{}`", atom.id)));
            }
            if atom.coords.len() != dim {
                return Err(Error::input(format!(
                    "atom `{}` has {} coordinates, expected {dim}",
                    atom.id,
                    atom.coords.len()
                )));
            }
            if atom.coords.iter().any(|c| !c.is_finite()) {
                return Err(Error::input(format!("atom `{}` has non-finite coordinates", atom.id)));
            }
        }
        let mut min_separation = f64::INFINITY;
        for i in 0..atoms.len() {
            for j in i + 1..atoms.len() {
                let d = euclid(&atoms[i].coords, &atoms[j].coords);
                if d <= 0.0 {
                    return Err(Error::input(format!(
                        "atoms `{}` and `{}` coincide",
                        atoms[i].id, atoms[j].id
                    )));
                }
                min_separation = min_separation.min(d);
            }
        }
        Ok(Self { atoms, min_separation })
    }

    /// `n` atoms labelled `q1..qn` placed at the integers `0..n` on a line.
    pub fn labeled(n: usize) -> Result<Self> {
        Self::new(
            (0..n)
                .map(|i| Atom { id: format!("q{}", i + 1), coords: vec![i as f64] })
                .collect(),
        )
    }

    /// Equispaced grid of `n` points on `[lo, hi]`.
    pub fn grid_1d(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 || !(hi > lo) && n > 1 {
            return Err(Error::input("grid_1d needs n >= 1 and hi > lo"));
        }
        let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
        Self::new(
            (0..n)
                .map(|i| Atom { id: format!("x{i}"), coords: vec![lo + step * i as f64] })
                .collect(),
        )
    }

    /// Tensor grid on `[lo.0, hi.0] x [lo.1, hi.1]`, ids `x{i}_{j}`, row-major in `i`.
    pub fn grid_2d(lo: (f64, f64), hi: (f64, f64), n: (usize, usize)) -> Result<Self> {
        let xs = Self::grid_1d(lo.0, hi.0, n.0)?;
        let ys = Self::grid_1d(lo.1, hi.1, n.1)?;
        let mut atoms = Vec::with_capacity(n.0 * n.1);
        for (i, a) in xs.atoms.iter().enumerate() {
            for (j, b) in ys.atoms.iter().enumerate() {
                atoms.push(Atom { id: format!("x{i}_{j}"), coords: vec![a.coords[0], b.coords[0]] });
            }
        }
        Self::new(atoms)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.atoms.iter().map(|a| a.id.as_str())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.atoms.iter().position(|a| a.id == id)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        euclid(&self.atoms[i].coords, &self.atoms[j].coords)
    }

    /// Smallest distance between two distinct atoms; infinite for a single atom.
    pub fn min_separation(&self) -> f64 {
        self.min_separation
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Selects atoms for [`AtomicMeasure::mass`].
#[derive(Debug, Clone, Copy)]
pub enum Subset<'a> {
    All,
    Indices(&'a [usize]),
}

/// A nonnegative weight per atom of a shared [`StrategySpace`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomicMeasure {
    #[serde(skip)]
    space: Arc<StrategySpace>,
    weights: Vec<f64>,
}

impl AtomicMeasure {
    pub fn new(space: Arc<StrategySpace>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != space.len() {
            return Err(Error::input(format!(
                "measure has {} weights for a space of {} atoms",
                weights.len(),
                space.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::input(format!("measure weight {w} is not finite and nonnegative")));
        }
        Ok(Self { space, weights })
    }

    pub fn zero(space: Arc<StrategySpace>) -> Self {
        let n = space.len();
        Self { space, weights: vec![0.0; n] }
    }

    /// `mass * delta_q`.
    pub fn dirac(space: Arc<StrategySpace>, q: usize, mass: f64) -> Result<Self> {
        if q >= space.len() {
            return Err(Error::input(format!("atom index {q} out of range")));
        }
        let mut weights = vec![0.0; space.len()];
        weights[q] = mass;
        Self::new(space, weights)
    }

    pub fn space(&self) -> &Arc<StrategySpace> {
        &self.space
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Total weight on `subset`.
    pub fn mass(&self, subset: Subset<'_>) -> Result<f64> {
        match subset {
            Subset::All => Ok(self.total()),
            Subset::Indices(idx) => idx.iter().try_fold(0.0, |acc, &i| {
                self.weights
                    .get(i)
                    .map(|w| acc + w)
                    .ok_or_else(|| Error::input(format!("atom index {i} out of range")))
            }),
        }
    }
}

pub(crate) fn same_space(a: &Arc<StrategySpace>, b: &Arc<StrategySpace>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// How a [`TestFunctionFamily`] was built; carried into reports so norms can be
/// reproduced.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FamilyRule {
    /// Lipschitz tent `max(0, 1 - d(x, q_k) / radius)` centred on atom `k`.
    AtomBumps { radius: f64 },
    Custom { label: String },
}

/// The truncated family `f_1..f_M` sampled on the atoms, each with `sup |f_k| <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFunctionFamily {
    rule: FamilyRule,
    n_atoms: usize,
    /// `values[k][j] = f_{k+1}(atom j)`.
    values: Vec<Vec<f64>>,
}

impl TestFunctionFamily {
    /// One tent per atom with radius half the minimum atom separation, so that
    /// `f_k(atom j)` is the Kronecker delta and the family separates atoms.
    pub fn atom_bumps(space: &StrategySpace) -> Self {
        let n = space.len();
        let radius = if n > 1 { space.min_separation() / 2.0 } else { 1.0 };
        let values = (0..n)
            .map(|k| {
                (0..n)
                    .map(|j| (1.0 - space.distance(k, j) / radius).max(0.0))
                    .collect()
            })
            .collect();
        Self { rule: FamilyRule::AtomBumps { radius }, n_atoms: n, values }
    }

    /// A user-supplied family; `values[k][j]` is `f_{k+1}` at atom `j`.
    pub fn from_samples(space: &StrategySpace, values: Vec<Vec<f64>>, label: impl Into<String>) -> Result<Self> {
        for (k, row) in values.iter().enumerate() {
            if row.len() != space.len() {
                return Err(Error::input(format!(
                    "test function {} has {} samples for {} atoms",
                    k + 1,
                    row.len(),
                    space.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
                return Err(Error::input(format!("test function {} leaves [-1, 1]", k + 1)));
            }
        }
        Ok(Self { rule: FamilyRule::Custom { label: label.into() }, n_atoms: space.len(), values })
    }

    pub fn rule(&self) -> &FamilyRule {
        &self.rule
    }

    /// Truncation length `M`.
    pub fn truncation(&self) -> usize {
        self.values.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// `|nu(Q)| + sum_k 2^-k |<f_k, nu>|` for a signed weight vector `nu`.
pub fn weak_norm(nu: &[f64], fam: &TestFunctionFamily) -> Result<f64> {
    if nu.len() != fam.n_atoms {
        return Err(Error::input(format!(
            "signed vector has {} entries, test family expects {}",
            nu.len(),
            fam.n_atoms
        )));
    }
    let mut norm = nu.iter().sum::<f64>().abs();
    let mut scale = 1.0;
    for f in &fam.values {
        scale *= 0.5;
        let pairing: f64 = f.iter().zip(nu).map(|(a, b)| a * b).sum();
        norm += scale * pairing.abs();
    }
    Ok(norm)
}

/// Weak* distance from `mu` to `k * delta_q`.
pub fn distance_to_dirac(mu: &AtomicMeasure, q: usize, k: f64, fam: &TestFunctionFamily) -> Result<f64> {
    if !(k >= 0.0) {
        return Err(Error::input(format!("Dirac mass must be nonnegative, got {k}")));
    }
    if q >= mu.weights.len() {
        return Err(Error::input(format!("atom index {q} out of range")));
    }
    let mut diff = mu.weights.clone();
    diff[q] -= k;
    weak_norm(&diff, fam)
}

/// A point of the equilibrium set `{nu : supp nu ⊆ optimal, nu(Q) = k_max}` near
/// `mu`, and its distance from `mu`.
///
/// The candidate is `mu` restricted to `optimal` and rescaled to total `k_max`
/// (uniform on `optimal` when `mu` puts no mass there), so the distance is an upper
/// bound on the distance to the set.
pub fn nearest_optimal_equilibrium(
    mu: &AtomicMeasure,
    optimal: &[usize],
    k_max: f64,
    fam: &TestFunctionFamily,
) -> Result<(AtomicMeasure, f64)> {
    if optimal.is_empty() {
        return Err(Error::input("optimal set is empty"));
    }
    if !(k_max > 0.0) {
        return Err(Error::input(format!("equilibrium mass must be positive, got {k_max}")));
    }
    let inside = mu.mass(Subset::Indices(optimal))?;
    let mut candidate = vec![0.0; mu.weights.len()];
    if inside > 0.0 {
        for &i in optimal {
            candidate[i] = mu.weights[i] * k_max / inside;
        }
    } else {
        for &i in optimal {
            candidate[i] = k_max / optimal.len() as f64;
        }
    }
    let diff: Vec<f64> = mu.weights.iter().zip(&candidate).map(|(a, b)| a - b).collect();
    let dist = weak_norm(&diff, fam)?;
    Ok((AtomicMeasure { space: mu.space.clone(), weights: candidate }, dist))
}
