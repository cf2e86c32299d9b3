use serde::{Deserialize, Serialize};

use super::{check_shapes, rhs, StepStats, Trajectory};
use crate::error::{Error, Result};
use crate::kernel::MutationKernel;
use crate::measure::AtomicMeasure;
use crate::vitals::RateModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    pub t_end: f64,
    /// Weights in `[-clamp_floor, 0]` are snapped to zero; anything lower
    /// rejects the step.
    pub clamp_floor: f64,
    /// Snapshot spacing. `None` stores every accepted step.
    pub dt_out: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            dt_init: 1e-3,
            dt_min: 1e-12,
            t_end: 100.0,
            clamp_floor: 1e-12,
            dt_out: None,
        }
    }
}

impl IntegratorConfig {
    pub fn with_t_end(mut self, t_end: f64) -> Self {
        self.t_end = t_end;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_dt_out(mut self, dt_out: f64) -> Self {
        self.dt_out = Some(dt_out);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("dt_init", self.dt_init),
            ("dt_min", self.dt_min),
            ("t_end", self.t_end),
            ("clamp_floor", self.clamp_floor),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::input(format!("integrator {name} must be positive and finite, got {v}")));
            }
        }
        if self.dt_min >= self.dt_init {
            return Err(Error::input("integrator dt_min must be smaller than dt_init"));
        }
        if let Some(d) = self.dt_out {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::input(format!("integrator dt_out must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau. The system is autonomous, so the nodes are unused.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order solution minus embedded fourth-order one.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - 0.75 * BETA;

/// Integrates from `mu0` over `[0, cfg.t_end]` with an adaptive Dormand-Prince
/// 5(4) pair under PI step control.
///
/// The error norm is the RMS of `err_i / (abs_tol + rel_tol * max(|y_i|, |y_new_i|))`.
/// A step that drives any weight below `-clamp_floor` is rejected and retried
/// at half the size. With `dt_out` set, steps are shortened to land exactly on
/// the output grid, so snapshots carry full step accuracy.
pub fn integrate<M: RateModel + ?Sized>(
    mu0: &AtomicMeasure,
    k: &MutationKernel,
    model: &M,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_shapes(mu0.space(), k, model)?;
    let n = mu0.weights().len();

    let mut traj = Trajectory {
        space: mu0.space().clone(),
        times: vec![0.0],
        states: vec![mu0.weights().to_vec()],
        totals: vec![mu0.total()],
        stats: StepStats { min_weight_seen: mu0.weights().iter().copied().fold(f64::INFINITY, f64::min), ..Default::default() },
        pure_selection: k.is_identity(),
        config: *cfg,
    };

    let mut y = mu0.weights().to_vec();
    let mut t = 0.0;
    let mut h = cfg.dt_init.min(cfg.t_end);
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;

    let mut ks = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    rhs(&y, k, model, &mut ks[0]);
    traj.stats.rhs_evals += 1;

    let mut out_idx: u64 = 1;
    let next_output = |idx: u64| -> f64 {
        match cfg.dt_out {
            Some(d) => {
                let t = idx as f64 * d;
                if cfg.t_end - t < 1e-9 * d {
                    cfg.t_end
                } else {
                    t
                }
            }
            None => cfg.t_end,
        }
    };

    while t < cfg.t_end {
        if h < cfg.dt_min {
            return Err(Error::Stiffness { t, dt: h, partial: Box::new(traj) });
        }
        let target = next_output(out_idx);
        let (step, lands) = if t + h >= target - 1e-12 * target.abs().max(1.0) {
            (target - t, true)
        } else {
            (h, false)
        };

        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (a, kk) in A[s].iter().zip(&ks).take(s) {
                    acc += a * kk[i];
                }
                stage[i] = y[i] + step * acc;
            }
            rhs(&stage, k, model, &mut ks[s]);
        }
        traj.stats.rhs_evals += 6;
        // The last stage was evaluated at the fifth-order solution.
        y_new.copy_from_slice(&stage);

        let mut sum = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (c, kk) in E.iter().zip(&ks) {
                e += c * kk[i];
            }
            let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y_new[i].abs());
            sum += (step * e / sc).powi(2);
        }
        let err = if n == 0 { 0.0 } else { (sum / n as f64).sqrt() };

        if !err.is_finite() {
            traj.stats.rejected += 1;
            h = step * FAC_MIN;
            last_rejected = true;
            continue;
        }

        if err > 1.0 {
            traj.stats.rejected += 1;
            h = step / (1.0 / FAC_MIN).min(err.powf(EXPO) / SAFETY);
            last_rejected = true;
            continue;
        }

        let raw_min = y_new.iter().copied().fold(f64::INFINITY, f64::min);
        if raw_min < -cfg.clamp_floor {
            traj.stats.positivity_rejections += 1;
            h = 0.5 * step;
            last_rejected = true;
            continue;
        }

        // Accepted.
        traj.stats.accepted += 1;
        traj.stats.min_weight_seen = traj.stats.min_weight_seen.min(raw_min);
        for v in y_new.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        std::mem::swap(&mut y, &mut y_new);
        t = if lands { target } else { t + step };
        // FSAL: reuse the last stage unless snapping changed the state.
        if raw_min < 0.0 {
            rhs(&y, k, model, &mut ks[0]);
            traj.stats.rhs_evals += 1;
        } else {
            ks.swap(0, 6);
        }

        if lands || cfg.dt_out.is_none() {
            traj.times.push(t);
            traj.totals.push(y.iter().sum());
            traj.states.push(y.clone());
            if lands {
                out_idx += 1;
            }
        }

        let fac11 = err.max(1e-16).powf(EXPO);
        let mut factor = (fac_old.powf(BETA) / fac11 * SAFETY).clamp(FAC_MIN, FAC_MAX);
        if last_rejected {
            factor = factor.min(1.0);
        }
        fac_old = err.max(1e-4);
        last_rejected = false;
        // A step shortened to hit an output time says little about the
        // admissible size; keep the longer proposal in that case.
        h = if lands && step < h { h.max(step * factor) } else { step * factor };
    }

    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{blend_toward, identity_kernel, uniform_kernel};
    use crate::measure::StrategySpace;
    use crate::vitals::Ricker;
    use std::f64::consts::LN_10;
    use std::sync::Arc;

    fn sp(n: usize) -> Arc<StrategySpace> {
        Arc::new(StrategySpace::labeled(n).unwrap())
    }

    fn single() -> (Arc<StrategySpace>, Ricker) {
        (sp(1), Ricker::new(vec![10.0], vec![0.5], 0.5).unwrap())
    }

    /// Classical RK4 with a fixed step, independent of the adaptive code.
    fn rk4_oracle(w0: f64, t_end: f64, dt: f64) -> f64 {
        let f = |w: f64| 10.0 * (-0.5 * w).exp() * w - (0.5 * w).exp() * w;
        let steps = (t_end / dt).round() as usize;
        let mut w = w0;
        for _ in 0..steps {
            let k1 = f(w);
            let k2 = f(w + 0.5 * dt * k1);
            let k3 = f(w + 0.5 * dt * k2);
            let k4 = f(w + dt * k3);
            w += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        w
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig::default().validate().is_ok());
        let bad = IntegratorConfig { dt_min: 1.0, dt_init: 0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = IntegratorConfig { rel_tol: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = IntegratorConfig { dt_out: Some(-1.0), ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_atom_reaches_capacity() {
        let (space, m) = single();
        let mu0 = AtomicMeasure::new(space.clone(), vec![1.0]).unwrap();
        let cfg = IntegratorConfig::default().with_t_end(50.0);
        let traj = integrate(&mu0, &identity_kernel(space), &m, &cfg).unwrap();
        let last = *traj.totals.last().unwrap();
        assert!((last - LN_10).abs() < 1e-4, "{last}");
        assert!((last - rk4_oracle(1.0, 50.0, 1e-4)).abs() < 1e-6);
    }

    #[test]
    fn matches_rk4_oracle_mid_transient() {
        let (space, m) = single();
        let mu0 = AtomicMeasure::new(space.clone(), vec![0.1]).unwrap();
        let cfg = IntegratorConfig { rel_tol: 1e-10, abs_tol: 1e-12, t_end: 1.0, ..Default::default() };
        let traj = integrate(&mu0, &identity_kernel(space), &m, &cfg).unwrap();
        let oracle = rk4_oracle(0.1, 1.0, 1e-4);
        assert!((traj.totals.last().unwrap() - oracle).abs() < 1e-8);
    }

    #[test]
    fn tightening_tolerance_reduces_error() {
        let (space, m) = single();
        let mu0 = AtomicMeasure::new(space.clone(), vec![0.1]).unwrap();
        let oracle = rk4_oracle(0.1, 2.0, 1e-4);
        let err_at = |rel_tol: f64| {
            let cfg = IntegratorConfig { rel_tol, abs_tol: rel_tol * 1e-2, t_end: 2.0, ..Default::default() };
            let traj = integrate(&mu0, &identity_kernel(space.clone()), &m, &cfg).unwrap();
            (traj.totals.last().unwrap() - oracle).abs()
        };
        let coarse = err_at(1e-4);
        let fine = err_at(1e-6);
        assert!(fine < coarse, "{fine} vs {coarse}");
    }

    #[test]
    fn zero_stays_zero() {
        let space = sp(3);
        let m = Ricker::new(vec![20.0, 10.0, 1.0], vec![5.0, 0.5, 0.5], 0.5).unwrap();
        let k = blend_toward(&identity_kernel(space.clone()), &uniform_kernel(space.clone()), 0.1).unwrap();
        let traj = integrate(&AtomicMeasure::zero(space), &k, &m, &IntegratorConfig::default()).unwrap();
        assert!(traj.states.iter().all(|s| s.iter().all(|w| *w == 0.0)));
        assert_eq!(*traj.times.last().unwrap(), 100.0);
    }

    #[test]
    fn three_atom_selection() {
        let space = sp(3);
        let m = Ricker::new(vec![20.0, 10.0, 1.0], vec![5.0, 0.5, 0.5], 0.5).unwrap();
        let mu0 = AtomicMeasure::new(space.clone(), vec![1.0; 3]).unwrap();
        let cfg = IntegratorConfig::default().with_t_end(200.0);
        let traj = integrate(&mu0, &identity_kernel(space), &m, &cfg).unwrap();
        let w = traj.states.last().unwrap();
        assert!(w[0].abs() < 1e-3 && (w[1] - LN_10).abs() < 1e-3 && w[2].abs() < 1e-3, "{w:?}");
        assert!(traj.pure_selection);
    }

    #[test]
    fn dense_output_hits_grid() {
        let (space, m) = single();
        let mu0 = AtomicMeasure::new(space.clone(), vec![1.0]).unwrap();
        let cfg = IntegratorConfig::default().with_t_end(1.0).with_dt_out(0.1);
        let traj = integrate(&mu0, &identity_kernel(space), &m, &cfg).unwrap();
        assert_eq!(traj.len(), 11);
        for (i, t) in traj.times.iter().enumerate() {
            assert!((t - 0.1 * i as f64).abs() < 1e-12);
        }
        assert_eq!(*traj.times.last().unwrap(), 1.0);
    }

    #[test]
    fn times_increase_and_totals_match() {
        let space = sp(3);
        let m = Ricker::new(vec![20.0, 10.0, 1.0], vec![5.0, 0.5, 0.5], 0.5).unwrap();
        let k = blend_toward(&identity_kernel(space.clone()), &uniform_kernel(space.clone()), 0.05).unwrap();
        let mu0 = AtomicMeasure::new(space, vec![0.5, 0.0, 2.0]).unwrap();
        let traj = integrate(&mu0, &k, &m, &IntegratorConfig::default().with_t_end(20.0)).unwrap();
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        for (s, tot) in traj.states.iter().zip(&traj.totals) {
            assert!(s.iter().all(|w| *w >= 0.0));
            assert!((s.iter().sum::<f64>() - tot).abs() == 0.0);
        }
        assert!(!traj.pure_selection);
    }

    #[test]
    fn stiffness_reports_partial() {
        let (space, m) = single();
        let mu0 = AtomicMeasure::new(space.clone(), vec![1.0]).unwrap();
        // Tolerances this tight cannot be met with steps above dt_min.
        let cfg = IntegratorConfig { rel_tol: 1e-300, abs_tol: 1e-300, dt_init: 1e-3, dt_min: 1e-4, t_end: 1.0, ..Default::default() };
        match integrate(&mu0, &identity_kernel(space), &m, &cfg) {
            Err(Error::Stiffness { partial, dt, .. }) => {
                assert!(dt < 1e-4);
                assert!(!partial.is_empty());
            }
            other => panic!("expected stiffness error, got {other:?}"),
        }
    }

    #[test]
    fn csv_export() {
        let (space, m) = single();
        let mu0 = AtomicMeasure::new(space.clone(), vec![1.0]).unwrap();
        let cfg = IntegratorConfig::default().with_t_end(0.2).with_dt_out(0.1);
        let traj = integrate(&mu0, &identity_kernel(space), &m, &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,total,q1");
        assert_eq!(lines.len(), 4);
    }
}
