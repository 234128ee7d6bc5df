//! Levenberg–Marquardt on a residual function with a central-difference
//! Jacobian.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmSettings {
    pub max_iters: usize,
    /// Stop once the accepted step satisfies `‖δ‖∞ <= param_tol·(1 + ‖θ‖∞)`.
    pub param_tol: f64,
    /// Stop once the SSE drops to this value.
    pub sse_floor: f64,
    pub fd_step: f64,
    /// Largest allowed change of any single coordinate per iteration.
    pub max_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stop {
    SseFloor,
    SmallStep,
    Stalled,
    MaxIters,
    BadStart,
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub theta: Vec<f64>,
    pub sse: f64,
    pub iterations: usize,
    pub stop: Stop,
    /// SSE after each iteration, starting with the initial value.
    pub trace: Vec<f64>,
}

fn sse_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Central differences with absolute step `h` in every coordinate. `None` when
/// a perturbed point cannot be evaluated.
pub(crate) fn fd_jacobian<F>(f: &F, theta: &[f64], m: usize, h: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = theta.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut x = theta.to_vec();
    for k in 0..n {
        x[k] = theta[k] + h;
        let plus = f(&x)?;
        x[k] = theta[k] - h;
        let minus = f(&x)?;
        x[k] = theta[k];
        for i in 0..m {
            jac[(i, k)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Some(jac)
}

pub(crate) fn minimize<F>(f: F, theta0: Vec<f64>, settings: &LmSettings) -> LmOutcome
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut theta = theta0;
    let Some(mut r) = f(&theta).filter(|r| r.iter().all(|v| v.is_finite())) else {
        return LmOutcome {
            theta,
            sse: f64::INFINITY,
            iterations: 0,
            stop: Stop::BadStart,
            trace: Vec::new(),
        };
    };
    let m = r.len();
    let n = theta.len();
    let mut sse = sse_of(&r);
    let mut trace = vec![sse];
    let mut damping: Option<f64> = None;
    let mut nu = 2.0;

    for iter in 1..=settings.max_iters {
        if sse <= settings.sse_floor {
            return LmOutcome { theta, sse, iterations: iter - 1, stop: Stop::SseFloor, trace };
        }
        let Some(jac) = fd_jacobian(&f, &theta, m, settings.fd_step) else {
            return LmOutcome { theta, sse, iterations: iter - 1, stop: Stop::Stalled, trace };
        };
        let mut scale = vec![1.0; n];
        let mut js = jac.clone();
        for (k, sk) in scale.iter_mut().enumerate() {
            let norm = js.column(k).norm();
            if norm > 0.0 && norm.is_finite() {
                *sk = norm;
                js.column_mut(k).unscale_mut(norm);
            }
        }
        let svd = js.svd(true, true);
        let (u, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
        let s = &svd.singular_values;
        let rv = DVector::from_column_slice(&r);
        let g = u.transpose() * &rv;
        let s_max = s.max();
        if !(s_max > 0.0) {
            return LmOutcome { theta, sse, iterations: iter - 1, stop: Stop::Stalled, trace };
        }
        let mut mu = damping.unwrap_or(1e-3 * s_max * s_max);

        let mut accepted = false;
        while mu <= 1e20 * s_max * s_max {
            let filtered = DVector::from_iterator(s.len(), (0..s.len()).map(|k| -s[k] / (s[k] * s[k] + mu) * g[k]));
            let mut delta: Vec<f64> = (vt.transpose() * &filtered)
                .iter()
                .zip(&scale)
                .map(|(d, c)| d / c)
                .collect();
            let biggest = delta.iter().fold(0.0f64, |a, d| a.max(d.abs()));
            if biggest > settings.max_step {
                let shrink = settings.max_step / biggest;
                delta.iter_mut().for_each(|d| *d *= shrink);
            }
            let trial: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + d).collect();
            let trial_r = f(&trial).filter(|r| r.iter().all(|v| v.is_finite()));
            let trial_sse = trial_r.as_deref().map_or(f64::INFINITY, sse_of);
            if trial_sse < sse {
                // Gain ratio against the linear model.
                let jd = &jac * DVector::from_column_slice(&delta);
                let predicted = sse - (&rv + jd).norm_squared();
                let rho = if predicted > 0.0 { (sse - trial_sse) / predicted } else { 0.0 };
                mu *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                nu = 2.0;
                let step_inf = biggest.min(settings.max_step);
                let theta_inf = theta.iter().fold(0.0f64, |a, t| a.max(t.abs()));
                theta = trial;
                r = trial_r.expect("finite trial residuals");
                sse = trial_sse;
                trace.push(sse);
                damping = Some(mu);
                accepted = true;
                if step_inf <= settings.param_tol * (1.0 + theta_inf) {
                    return LmOutcome { theta, sse, iterations: iter, stop: Stop::SmallStep, trace };
                }
                break;
            }
            let step_inf = biggest.min(settings.max_step);
            let theta_inf = theta.iter().fold(0.0f64, |a, t| a.max(t.abs()));
            if step_inf <= settings.param_tol * (1.0 + theta_inf) {
                trace.push(sse);
                return LmOutcome { theta, sse, iterations: iter, stop: Stop::SmallStep, trace };
            }
            mu *= nu;
            nu *= 2.0;
        }
        if !accepted {
            trace.push(sse);
            return LmOutcome { theta, sse, iterations: iter, stop: Stop::Stalled, trace };
        }
    }
    LmOutcome {
        theta,
        sse,
        iterations: settings.max_iters,
        stop: Stop::MaxIters,
        trace,
    }
}
