//! Brute-force reference solution of the compartment ODE by classical
//! fixed-step fourth-order Runge–Kutta. Independent of every closed-form path
//! in [`crate::model`] and [`crate::polyexp`].

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::KineticParams;

/// Default integration step in minutes.
pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub cf: Vec<f64>,
    pub cb: Vec<f64>,
}

impl Trajectory {
    pub fn ct(&self) -> Vec<f64> {
        self.cf.iter().zip(&self.cb).map(|(f, b)| f + b).collect()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `time_min,cf,cb,ct`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time_min", "cf", "cb", "ct"])?;
        for l in 0..self.len() {
            let (f, b) = (self.cf[l], self.cb[l]);
            w.write_record([
                crate::io::fmt_f64(self.times[l]),
                crate::io::fmt_f64(f),
                crate::io::fmt_f64(b),
                crate::io::fmt_f64(f + b),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct State {
    cf: f64,
    cb: f64,
}

#[inline]
fn rhs(p: &KineticParams, cp: f64, s: State) -> State {
    State {
        cf: p.k1 * cp - (p.k2 + p.k3) * s.cf + p.k4 * s.cb,
        cb: p.k3 * s.cf - p.k4 * s.cb,
    }
}

#[inline]
fn rk4_step<F: Fn(f64) -> f64>(p: &KineticParams, cp: &F, t: f64, h: f64, s: State) -> State {
    let at = |s: State, k: State, c: f64| State {
        cf: s.cf + c * k.cf,
        cb: s.cb + c * k.cb,
    };
    let cp_mid = cp(t + 0.5 * h);
    let k1 = rhs(p, cp(t), s);
    let k2 = rhs(p, cp_mid, at(s, k1, 0.5 * h));
    let k3 = rhs(p, cp_mid, at(s, k2, 0.5 * h));
    let k4 = rhs(p, cp(t + h), at(s, k3, h));
    State {
        cf: s.cf + h / 6.0 * (k1.cf + 2.0 * k2.cf + 2.0 * k3.cf + k4.cf),
        cb: s.cb + h / 6.0 * (k1.cb + 2.0 * k2.cb + 2.0 * k3.cb + k4.cb),
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidInput(format!(
            "integration step must be positive, got {step}"
        )));
    }
    Ok(())
}

/// Integrates from the zero state to `t_end` with uniform steps of at most
/// `step`, recording every step.
pub fn integrate_system<F: Fn(f64) -> f64>(
    params: &KineticParams,
    cp: F,
    t_end: f64,
    step: f64,
) -> Result<Trajectory> {
    check_step(step)?;
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidInput(format!("t_end must be positive, got {t_end}")));
    }
    if step > t_end {
        return Err(Error::InvalidInput(format!(
            "step {step} exceeds t_end {t_end}"
        )));
    }
    let n = (t_end / step - 1e-9).ceil().max(1.0) as usize;
    let h = t_end / n as f64;
    let mut traj = Trajectory {
        times: Vec::with_capacity(n + 1),
        cf: Vec::with_capacity(n + 1),
        cb: Vec::with_capacity(n + 1),
    };
    let mut s = State { cf: 0.0, cb: 0.0 };
    traj.times.push(0.0);
    traj.cf.push(0.0);
    traj.cb.push(0.0);
    for i in 0..n {
        let t = i as f64 * h;
        s = rk4_step(params, &cp, t, h, s);
        let t_next = (i + 1) as f64 * h;
        if !s.cf.is_finite() || !s.cb.is_finite() {
            return Err(Error::NonFiniteState { t: t_next });
        }
        traj.times.push(t_next);
        traj.cf.push(s.cf);
        traj.cb.push(s.cb);
    }
    Ok(traj)
}

/// Integrates through the requested (non-decreasing, non-negative) times and
/// returns the state at each of them. Every interval between outputs is cut
/// into equal steps of at most `step`, so outputs land exactly on the grid.
pub fn integrate_at<F: Fn(f64) -> f64>(
    params: &KineticParams,
    cp: F,
    times: &[f64],
    step: f64,
) -> Result<Trajectory> {
    check_step(step)?;
    let mut traj = Trajectory {
        times: Vec::with_capacity(times.len()),
        cf: Vec::with_capacity(times.len()),
        cb: Vec::with_capacity(times.len()),
    };
    let mut s = State { cf: 0.0, cb: 0.0 };
    let mut t = 0.0;
    for &target in times {
        if !(target >= t) || !target.is_finite() {
            return Err(Error::InvalidInput(format!(
                "output times must be finite, non-negative and non-decreasing (got {target} after {t})"
            )));
        }
        let span = target - t;
        if span > 0.0 {
            let n = (span / step - 1e-9).ceil().max(1.0) as usize;
            let h = span / n as f64;
            for i in 0..n {
                s = rk4_step(params, &cp, t + i as f64 * h, h, s);
            }
            if !s.cf.is_finite() || !s.cb.is_finite() {
                return Err(Error::NonFiniteState { t: target });
            }
        }
        t = target;
        traj.times.push(target);
        traj.cf.push(s.cf);
        traj.cb.push(s.cb);
    }
    Ok(traj)
}

/// Largest pointwise `|a - b| / max(|a|, |b|)`; points where both vanish
/// count as 0 and a NaN anywhere makes the result NaN.
pub fn max_relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let scale = x.abs().max(y.abs());
            if scale == 0.0 {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, |m, d| if d.is_nan() || d > m { d } else { m })
}
