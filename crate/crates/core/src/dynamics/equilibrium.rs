use serde::Serialize;

use super::{check_shapes, rhs};
use crate::error::{Error, Result};
use crate::kernel::{blend_toward, kernel_distance, MutationKernel};
use crate::linalg::{eigenvalues, DenseMatrix, Eigenvalue, Lu};
use crate::measure::AtomicMeasure;
use crate::vitals::RateModel;

pub const NEWTON_MAX_ITER: usize = 100;

// Initial pseudo-time step. Small enough that the first updates follow the
// flow rather than a raw Newton step, which from far away tends to jump onto
// the trivial equilibrium at the origin.
const TAU_INIT: f64 = 0.1;
const TAU_MAX: f64 = 1e15;

#[derive(Debug, Clone, Serialize)]
pub struct JacobianReport {
    /// `matrix[j][i] = d f_j / d x_i`.
    pub matrix: DenseMatrix,
    pub eigenvalues: Vec<Eigenvalue>,
    pub spectral_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumResult {
    #[serde(serialize_with = "ser_weights")]
    pub x_star: AtomicMeasure,
    /// Max-norm of the vector field at `x_star`.
    pub residual: f64,
    pub jacobian: DenseMatrix,
    pub spectral_bound: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn ser_weights<S: serde::Serializer>(mu: &AtomicMeasure, s: S) -> std::result::Result<S::Ok, S::Error> {
    mu.weights().serialize(s)
}

fn field(x: &[f64], k: &MutationKernel, model: &(impl RateModel + ?Sized)) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    rhs(x, k, model, &mut out);
    out
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn fd_jacobian<M: RateModel + ?Sized>(k: &MutationKernel, model: &M, x: &[f64]) -> DenseMatrix {
    let n = x.len();
    let h = 1e-6f64.max(1e-6 * max_abs(x));
    let f0 = field(x, k, model);
    let mut rows = vec![vec![0.0; n]; n];
    let mut xp = x.to_vec();
    for i in 0..n {
        let col: Vec<f64> = if x[i] >= h {
            xp[i] = x[i] + h;
            let fp = field(&xp, k, model);
            xp[i] = x[i] - h;
            let fm = field(&xp, k, model);
            fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        } else {
            // One-sided into the cone.
            xp[i] = x[i] + h;
            let fp = field(&xp, k, model);
            fp.iter().zip(&f0).map(|(a, b)| (a - b) / h).collect()
        };
        xp[i] = x[i];
        for (j, v) in col.into_iter().enumerate() {
            rows[j][i] = v;
        }
    }
    DenseMatrix::from_rows(&rows).expect("square by construction")
}

/// Finite-difference Jacobian of the vector field at weights `x`, with its
/// eigenvalues. Columns use central differences with step
/// `max(1e-6, 1e-6 |x|_inf)`, one-sided where `x_i` is closer to the boundary
/// than the step.
pub fn jacobian_at<M: RateModel + ?Sized>(k: &MutationKernel, model: &M, x: &AtomicMeasure) -> Result<JacobianReport> {
    check_shapes(x.space(), k, model)?;
    let matrix = fd_jacobian(k, model, x.weights());
    let eigenvalues = eigenvalues(&matrix)?;
    let spectral_bound = eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(JacobianReport { matrix, eigenvalues, spectral_bound })
}

/// Solves `f(x) = 0` for the vector field by damped Newton iteration.
///
/// Damping is pseudo-transient continuation: each update solves
/// `(I / tau - J) dx = f` and `tau` grows as the residual falls, so early
/// iterates follow the flow and late ones are plain Newton steps. Negative
/// components are projected to zero. Without convergence in
/// [`NEWTON_MAX_ITER`] iterations the best iterate is returned with
/// `converged = false`.
pub fn find_equilibrium<M: RateModel + ?Sized>(
    k: &MutationKernel,
    model: &M,
    x_init: &AtomicMeasure,
    newton_tol: f64,
) -> Result<EquilibriumResult> {
    check_shapes(x_init.space(), k, model)?;
    if !(newton_tol > 0.0) {
        return Err(Error::input("newton_tol must be positive"));
    }
    let n = x_init.weights().len();
    let mut x = x_init.weights().to_vec();
    let mut f = field(&x, k, model);
    let mut res = max_abs(&f);
    let mut best = (x.clone(), res);
    let mut tau = TAU_INIT;
    let mut iterations = 0;

    while res > newton_tol && iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let jac = fd_jacobian(k, model, &x);
        let mut rows = jac.to_rows();
        for (i, row) in rows.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v = -*v;
            }
            row[i] += 1.0 / tau;
        }
        let lhs = DenseMatrix::from_rows(&rows).expect("square");
        let Some(lu) = Lu::factor(&lhs) else {
            tau *= 0.25;
            continue;
        };
        let dx = lu.solve(&f);
        let x_new: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| (a + d).max(0.0)).collect();
        let f_new = field(&x_new, k, model);
        let res_new = max_abs(&f_new);
        if !res_new.is_finite() {
            tau *= 0.25;
            continue;
        }
        tau = (tau * res / res_new.max(f64::MIN_POSITIVE)).min(TAU_MAX);
        x = x_new;
        f = f_new;
        res = res_new;
        if res < best.1 {
            best = (x.clone(), res);
        }
    }

    let (x, residual) = if res <= best.1 { (x, res) } else { best };
    let x_star = AtomicMeasure::new(x_init.space().clone(), x)?;
    let report = jacobian_at(k, model, &x_star)?;
    debug_assert_eq!(report.matrix.dim(), n);
    Ok(EquilibriumResult {
        x_star,
        residual,
        jacobian: report.matrix,
        spectral_bound: report.spectral_bound,
        converged: residual <= newton_tol,
        iterations,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuationEntry {
    pub eps: f64,
    pub result: EquilibriumResult,
    /// Distance of the blended kernel from the base kernel.
    pub kernel_distance: f64,
}

/// Follows the equilibrium of `blend_toward(base, target, eps)` along a
/// decreasing `eps_list`, warm-starting each solve from the previous solution
/// (or from `x_init` after a failure).
pub fn continuation<M: RateModel + ?Sized>(
    base: &MutationKernel,
    target: &MutationKernel,
    model: &M,
    eps_list: &[f64],
    x_init: &AtomicMeasure,
    newton_tol: f64,
) -> Result<Vec<ContinuationEntry>> {
    if eps_list.is_empty() {
        return Err(Error::input("continuation needs at least one eps value"));
    }
    if eps_list.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::input("continuation eps values must lie in [0, 1]"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::input("continuation eps values must be strictly decreasing"));
    }
    let mut entries = Vec::with_capacity(eps_list.len());
    let mut start = x_init.clone();
    for &eps in eps_list {
        let k = blend_toward(base, target, eps)?;
        let result = find_equilibrium(&k, model, &start, newton_tol)?;
        start = if result.converged { result.x_star.clone() } else { x_init.clone() };
        entries.push(ContinuationEntry { eps, kernel_distance: kernel_distance(&k, base)?, result });
    }
    Ok(entries)
}
