//! The selection-mutation vector field
//!
//! ```text
//! dw_j/dt = sum_i B(s, i) w_i gamma[i][j] - D(s, j) w_j,    s = sum_k w_k
//! ```
//!
//! together with its time integration and equilibria.

mod equilibrium;
mod integrate;

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

pub use equilibrium::{
    continuation, find_equilibrium, jacobian_at, ContinuationEntry, EquilibriumResult, JacobianReport,
    NEWTON_MAX_ITER,
};
pub use integrate::{integrate, IntegratorConfig};

use crate::error::{Error, Result};
use crate::kernel::MutationKernel;
use crate::measure::{same_space, AtomicMeasure, StrategySpace};
use crate::vitals::{net_growth, RateModel};

/// Writes the right-hand side at weights `w` into `out`.
pub(crate) fn rhs<M: RateModel + ?Sized>(w: &[f64], k: &MutationKernel, model: &M, out: &mut [f64]) {
    let n = w.len();
    let total: f64 = w.iter().sum();
    for (j, o) in out.iter_mut().enumerate() {
        *o = -model.death(total, j) * w[j];
    }
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        let births = model.birth(total, i) * w[i];
        if births == 0.0 {
            continue;
        }
        for (o, g) in out.iter_mut().zip(k.row(i)) {
            if *g != 0.0 {
                *o += births * g;
            }
        }
    }
}

fn check_shapes<M: RateModel + ?Sized>(space: &Arc<StrategySpace>, k: &MutationKernel, model: &M) -> Result<()> {
    if !same_space(space, k.space()) {
        return Err(Error::input("measure and kernel live on different strategy spaces"));
    }
    if model.n_atoms() != space.len() {
        return Err(Error::input(format!(
            "rate model has {} atoms, strategy space has {}",
            model.n_atoms(),
            space.len()
        )));
    }
    Ok(())
}

/// Rate of change of every atom's weight at `mu`.
pub fn vector_field<M: RateModel + ?Sized>(mu: &AtomicMeasure, k: &MutationKernel, model: &M) -> Result<Vec<f64>> {
    check_shapes(mu.space(), k, model)?;
    let mut out = vec![0.0; mu.weights().len()];
    rhs(mu.weights(), k, model, &mut out);
    Ok(out)
}

/// The total-mass derivative computed two ways: as the sum of the vector field
/// and as `sum_q (R(s, q) - 1) D(s, q) w_q`. The two agree for any
/// row-stochastic kernel.
pub fn total_mass_rate<M: RateModel + ?Sized>(mu: &AtomicMeasure, k: &MutationKernel, model: &M) -> Result<(f64, f64)> {
    let field = vector_field(mu, k, model)?;
    let s = mu.total();
    let by_field = field.iter().sum();
    let by_reproduction = mu
        .weights()
        .iter()
        .enumerate()
        .map(|(q, w)| {
            let d = model.death(s, q);
            (model.birth(s, q) / d - 1.0) * d * w
        })
        .sum();
    Ok((by_field, by_reproduction))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub accepted: usize,
    /// Rejected by the local error test.
    pub rejected: usize,
    /// Rejected because some weight dropped below `-clamp_floor`.
    pub positivity_rejections: usize,
    pub rhs_evals: usize,
    /// Smallest raw weight produced by an accepted step, before snapping.
    pub min_weight_seen: f64,
}

/// Snapshots of an integration run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    #[serde(skip)]
    space: Arc<StrategySpace>,
    pub times: Vec<f64>,
    /// Weights per snapshot.
    pub states: Vec<Vec<f64>>,
    pub totals: Vec<f64>,
    pub stats: StepStats,
    /// Produced with the identity kernel.
    pub pure_selection: bool,
    pub config: IntegratorConfig,
}

impl Trajectory {
    pub fn space(&self) -> &Arc<StrategySpace> {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn measure(&self, idx: usize) -> AtomicMeasure {
        AtomicMeasure::new(self.space.clone(), self.states[idx].clone())
            .expect("trajectory states are nonnegative")
    }

    pub fn final_measure(&self) -> AtomicMeasure {
        self.measure(self.len() - 1)
    }

    /// Index of the first snapshot in the final `fraction` of the time span.
    pub fn tail_start(&self, fraction: f64) -> usize {
        let t0 = self.times[0];
        let t1 = *self.times.last().unwrap();
        let cut = t1 - fraction * (t1 - t0);
        self.times.partition_point(|t| *t < cut).min(self.len() - 1)
    }

    /// Maximum of the total mass over the final `fraction` of the run.
    pub fn tail_max_total(&self, fraction: f64) -> f64 {
        self.totals[self.tail_start(fraction)..].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn tail_min_total(&self, fraction: f64) -> f64 {
        self.totals[self.tail_start(fraction)..].iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV with header `t,total,<atom ids...>`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string(), "total".to_string()];
        header.extend(self.space.ids().map(str::to_string));
        w.write_record(&header)?;
        for ((t, total), state) in self.times.iter().zip(&self.totals).zip(&self.states) {
            let mut rec = vec![format!("{t:.16e}"), format!("{total:.16e}")];
            rec.extend(state.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Checks a pure-selection trajectory against
/// `w_j(t) = w_j(0) exp(int_0^t G(s(tau), j) dtau)`.
///
/// The exponent is integrated over the stored snapshots with the trapezoidal
/// rule plus its first Euler-Maclaurin end correction `-h^2/12 (G'(b) - G'(a))`,
/// where `G' = dG/ds * ds/dt` is evaluated from the model and the snapshot
/// itself. Returns the worst relative error over atoms with `w_j(0) > 0`.
pub fn verify_integral_representation<M: RateModel + ?Sized>(traj: &Trajectory, model: &M) -> Result<f64> {
    if !traj.pure_selection {
        return Err(Error::Precondition(
            "integral representation holds only for trajectories integrated with the identity kernel".into(),
        ));
    }
    if model.n_atoms() != traj.space.len() {
        return Err(Error::input("rate model does not match the trajectory's strategy space"));
    }
    let n = traj.space.len();
    let w0 = &traj.states[0];
    let active: Vec<usize> = (0..n).filter(|&j| w0[j] > 0.0).collect();

    // G_j and dG_j/dt at every snapshot.
    let growth_at = |idx: usize| -> (Vec<f64>, Vec<f64>) {
        let s = traj.totals[idx];
        let g: Vec<f64> = (0..n).map(|j| net_growth(model, s, j)).collect();
        let ds_dt: f64 = traj.states[idx].iter().zip(&g).map(|(w, g)| w * g).sum();
        let dg: Vec<f64> = (0..n).map(|j| growth_slope(model, s, j) * ds_dt).collect();
        (g, dg)
    };

    let mut exponent = vec![0.0; n];
    let mut worst: f64 = 0.0;
    let (mut g_prev, mut dg_prev) = growth_at(0);
    for idx in 1..traj.len() {
        let h = traj.times[idx] - traj.times[idx - 1];
        let (g, dg) = growth_at(idx);
        for &j in &active {
            exponent[j] += 0.5 * h * (g_prev[j] + g[j]) - h * h / 12.0 * (dg[j] - dg_prev[j]);
            let predicted = w0[j] * exponent[j].exp();
            let actual = traj.states[idx][j];
            let err = if predicted == 0.0 {
                if actual == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (actual - predicted).abs() / predicted
            };
            worst = worst.max(err);
        }
        g_prev = g;
        dg_prev = dg;
    }
    Ok(worst)
}

/// `dG/ds` by central differences (forward at `s` near zero).
fn growth_slope<M: RateModel + ?Sized>(model: &M, s: f64, q: usize) -> f64 {
    let h = 1e-5 * s.max(1.0);
    if s >= h {
        (net_growth(model, s + h, q) - net_growth(model, s - h, q)) / (2.0 * h)
    } else {
        (net_growth(model, s + h, q) - net_growth(model, s, q)) / h
    }
}
