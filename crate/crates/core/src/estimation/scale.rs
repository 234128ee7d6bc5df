//! Resolution of the global scale from whole-blood samples under a
//! biexponential attenuation `f`, using `C_P = f·C_WB`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm;
use super::FitResult;
use crate::error::{Error, Result};
use crate::polyexp::{AttenuationBiexp, CONDITION_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleResolution {
    /// `C̃_P = ζ·f·C_WB`, so `K1 = ζ·K̃1` and `λ̃ = ζ·λ`.
    pub zeta: f64,
    pub attenuation: AttenuationBiexp,
    /// `Σ_l (ζ f(s_l) - r_l)²` at the solution.
    pub residual: f64,
}

const START_RATES: [f64; 8] = [0.0, -0.005, -0.02, -0.05, -0.15, -0.5, -1.5, -5.0];

fn model(x: &[f64], s: f64) -> f64 {
    x[0] * (x[2] * s).exp() + x[1] * (x[3] * s).exp()
}

/// Amplitudes `(u, v)` solving the linear least-squares problem for fixed rates.
fn linear_amplitudes(samples: &[(f64, f64)], b: f64, c: f64) -> Option<(f64, f64)> {
    let a = DMatrix::from_fn(samples.len(), 2, |l, k| {
        (if k == 0 { b } else { c } * samples[l].0).exp()
    });
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let x = a.svd(true, true).solve(&y, 1e-14).ok()?;
    Some((x[0], x[1])).filter(|(u, v)| u.is_finite() && v.is_finite())
}

fn condition_at(samples: &[(f64, f64)], x: &[f64]) -> f64 {
    let mut jac = DMatrix::from_fn(samples.len(), 4, |l, k| {
        let s = samples[l].0;
        match k {
            0 => (x[2] * s).exp(),
            1 => (x[3] * s).exp(),
            2 => x[0] * s * (x[2] * s).exp(),
            _ => x[1] * s * (x[3] * s).exp(),
        }
    });
    for k in 0..4 {
        let norm = jac.column(k).norm();
        if !(norm > 0.0) {
            return f64::INFINITY;
        }
        jac.column_mut(k).unscale_mut(norm);
    }
    let sv = jac.singular_values();
    let min = sv.min();
    if min > 0.0 {
        sv.max() / min
    } else {
        f64::INFINITY
    }
}

/// Recovers `ζ` and `f` from whole-blood samples `(s_l, C_WB(s_l))` and the
/// fitted input. Four samples give a square system; more are fitted in the
/// least-squares sense.
pub fn resolve_scale(fit: &FitResult, wb_samples: &[(f64, f64)]) -> Result<ScaleResolution> {
    const NEED: usize = 4;
    if wb_samples.len() < NEED {
        return Err(Error::InsufficientSamples {
            have: wb_samples.len(),
            need: NEED,
        });
    }
    for (l, &(s, c)) in wb_samples.iter().enumerate() {
        if !s.is_finite() || !c.is_finite() {
            return Err(Error::InvalidInput(format!("whole-blood sample {l} is not finite")));
        }
        if c == 0.0 {
            return Err(Error::InvalidInput(format!(
                "whole-blood concentration is zero at s={s}"
            )));
        }
        if wb_samples[..l].iter().any(|&(other, _)| other == s) {
            return Err(Error::InvalidInput(format!(
                "whole-blood sample time {s} is repeated"
            )));
        }
    }
    let input = fit.config.input();
    let ratios: Vec<(f64, f64)> = wb_samples
        .iter()
        .map(|&(s, c)| (s, input.eval(s) / c))
        .collect();
    let total: f64 = ratios.iter().map(|r| r.1 * r.1).sum();
    if total == 0.0 {
        return Err(Error::NoSolution("fitted input vanishes at every sample".into()));
    }
    let square = ratios.len() == NEED;
    let settings = lm::LmSettings {
        max_iters: 500,
        param_tol: 1e-15,
        sse_floor: 1e-32 * total,
        fd_step: 1e-7,
        max_step: 1.0,
    };
    let residuals = |x: &[f64]| Some(ratios.iter().map(|&(s, r)| model(x, s) - r).collect::<Vec<f64>>());

    let mut best: Option<(f64, Vec<f64>)> = None;
    for (i, &b) in START_RATES.iter().enumerate() {
        for &c in &START_RATES[i + 1..] {
            let Some((u, v)) = linear_amplitudes(&ratios, b, c) else {
                continue;
            };
            let out = lm::minimize(residuals, vec![u, v, b, c], &settings);
            let usable = matches!(out.stop, lm::Stop::SmallStep | lm::Stop::SseFloor)
                && out.theta.iter().all(|v| v.is_finite())
                && (out.theta[2] - out.theta[3]).abs() > 1e-9 * out.theta[2].abs().max(out.theta[3].abs()).max(1.0);
            if usable && best.as_ref().is_none_or(|(sse, _)| out.sse < *sse) {
                best = Some((out.sse, out.theta));
            }
        }
    }
    let Some((sse, x)) = best else {
        return Err(Error::NoSolution("no start converged to distinct rates".into()));
    };
    if square && sse > 1e-16 * total {
        return Err(Error::NoSolution(format!(
            "smallest relative residual {:.3e} leaves the square system unsolved",
            sse / total
        )));
    }
    let condition = condition_at(&ratios, &x);
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::RankDeficient(format!(
            "Jacobian condition {condition:.3e} at the solution"
        )));
    }
    let zeta = x[0] + x[1];
    if zeta == 0.0 || !zeta.is_finite() {
        return Err(Error::NoSolution("amplitudes cancel, f(0) cannot be 1".into()));
    }
    let attenuation = AttenuationBiexp::new(x[0] / zeta, x[2], x[3])?.canonical();
    Ok(ScaleResolution {
        zeta,
        attenuation,
        residual: sse,
    })
}
