//! Joint estimation of every region's rate constants and the shared
//! polyexponential input from tissue curves alone, scale resolution from
//! whole-blood samples, and the multi-start uniqueness experiment.

mod lm;
mod scale;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identifiability::{self, SamplingBounds};
use crate::model::{
    simulate_tacs, Configuration, InputTerm, KineticParams, PolyexpInput, Region, TacTable,
    TissueKernel,
};

pub use scale::{resolve_scale, ScaleResolution};

/// Default finite-difference step; parameters are in log space.
pub const FD_STEP: f64 = 1e-6;

/// How the amplitude/`K1` scale of a fit is pinned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    /// `λ = 1` for the term with the largest exponent.
    #[default]
    LeadingAmplitude,
    /// `Σλ = 1`. Falls back to [`Gauge::LeadingAmplitude`] when the sum is not
    /// positive.
    AmplitudeSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Number of input terms to fit.
    pub p: usize,
    /// Cold starts drawn from [`identifiability::sample_random_config`].
    pub n_starts: usize,
    pub max_iters: usize,
    /// A fit is converged when `sse <= residual_tol·Σy²`.
    pub residual_tol: f64,
    pub param_tol: f64,
    pub seed: u64,
    pub gauge: Gauge,
    pub bounds: SamplingBounds,
    /// Optional extra start, run as start 0.
    pub warm_start: Option<Configuration>,
    /// Relative tolerance handed to the equivalence comparison.
    pub equivalence_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            p: 1,
            n_starts: 16,
            max_iters: 3000,
            residual_tol: 1e-16,
            param_tol: 1e-13,
            seed: 0,
            gauge: Gauge::default(),
            bounds: SamplingBounds::default(),
            warm_start: None,
            equivalence_tol: 1e-4,
        }
    }
}

impl FitOptions {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidInput("p must be at least 1".into()));
        }
        if self.n_starts == 0 && self.warm_start.is_none() {
            return Err(Error::InvalidInput("n_starts must be at least 1".into()));
        }
        if !(self.residual_tol >= 0.0) || !(self.param_tol >= 0.0) {
            return Err(Error::InvalidInput("tolerances must be non-negative".into()));
        }
        Ok(())
    }
}

/// `T >= 2(p + 4)`.
pub fn required_samples(p: usize) -> usize {
    2 * (p + 4)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub start: usize,
    pub iter: usize,
    pub sse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub config: Configuration,
    pub sse: f64,
    /// `sse / Σy²`, or 0 for all-zero data.
    pub relative_sse: f64,
    pub converged: bool,
    pub start_index: usize,
    pub iterations: usize,
    /// Set for all-zero data, where `K1 = 0` leaves the input undetermined.
    pub gauge_indeterminate: bool,
    /// Regions whose fitted `k3` collapsed towards zero.
    pub k3_boundary_regions: Vec<String>,
    /// One row per start and iteration; for [`fit_joint`] it covers every start.
    #[serde(skip)]
    pub trace: Vec<TraceEntry>,
}

/// `Σ_i Σ_l (C_Tⁱ(t_l) - y_{i,l})²` over the regions in `tacs`.
pub fn residual_sse(config: &Configuration, tacs: &TacTable) -> Result<f64> {
    let mut sse = 0.0;
    for (id, curve) in tacs.curves() {
        let region = config
            .region(id)
            .ok_or_else(|| Error::InvalidInput(format!("region `{id}` missing from configuration")))?;
        let kernel = TissueKernel::new(&region.params).map_err(|e| e.in_region(id))?;
        for (t, y) in tacs.time_grid().iter().zip(curve) {
            let d = kernel.eval(config.input(), *t) - y;
            sse += d * d;
        }
    }
    Ok(sse)
}

/// The least-squares objective in unconstrained coordinates.
///
/// Per region `[ln K1, ln k2, ln k3, ln k4]`, then `ln(-μ_0)`, then for every
/// further term `λ_j` and `ln(μ_{j-1} - μ_j)`. Exponents stay negative and
/// strictly descending and `λ_0 = 1` is fixed.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    tacs: &'a TacTable,
    p: usize,
}

impl<'a> Objective<'a> {
    pub fn new(tacs: &'a TacTable, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidInput("p must be at least 1".into()));
        }
        if tacs.curves().is_empty() {
            return Err(Error::InvalidInput("TAC table has no regions".into()));
        }
        Ok(Self { tacs, p })
    }

    pub fn n_params(&self) -> usize {
        4 * self.tacs.curves().len() + 2 * self.p - 1
    }

    pub fn n_residuals(&self) -> usize {
        self.tacs.curves().len() * self.tacs.len()
    }

    fn split(&self, theta: &[f64]) -> (Vec<KineticParams>, Vec<InputTerm>) {
        let n = self.tacs.curves().len();
        let params = (0..n)
            .map(|i| KineticParams {
                k1: theta[4 * i].exp(),
                k2: theta[4 * i + 1].exp(),
                k3: theta[4 * i + 2].exp(),
                k4: theta[4 * i + 3].exp(),
            })
            .collect();
        let rest = &theta[4 * n..];
        let mut mu = -rest[0].exp();
        let mut terms = vec![InputTerm { lambda: 1.0, mu }];
        for j in 1..self.p {
            mu -= rest[2 * j].exp();
            terms.push(InputTerm {
                lambda: rest[2 * j - 1],
                mu,
            });
        }
        (params, terms)
    }

    /// Model minus data, region-major. `None` if some region is degenerate.
    pub fn residuals(&self, theta: &[f64]) -> Option<Vec<f64>> {
        if theta.len() != self.n_params() {
            return None;
        }
        let (params, terms) = self.split(theta);
        let mut out = Vec::with_capacity(self.n_residuals());
        for (p, (_, curve)) in params.iter().zip(self.tacs.curves()) {
            let kernel = TissueKernel::new(p).ok()?;
            for (t, y) in self.tacs.time_grid().iter().zip(curve) {
                out.push(kernel.eval_terms(&terms, *t) - y);
            }
        }
        Some(out)
    }

    pub fn sse(&self, theta: &[f64]) -> Option<f64> {
        self.residuals(theta).map(|r| r.iter().map(|v| v * v).sum())
    }

    /// Central-difference Jacobian with absolute step `h`.
    pub fn jacobian(&self, theta: &[f64], h: f64) -> Option<DMatrix<f64>> {
        lm::fd_jacobian(&|x: &[f64]| self.residuals(x), theta, self.n_residuals(), h)
    }

    /// Coordinates of `config`, after fixing the leading amplitude to 1. The
    /// configuration must cover the table's regions, have `p` terms with
    /// negative exponents and strictly positive rates.
    pub fn theta_from_config(&self, config: &Configuration) -> Result<Vec<f64>> {
        let terms = config.input().terms();
        if terms.len() != self.p {
            return Err(Error::InvalidInput(format!(
                "start has {} input terms, expected {}",
                terms.len(),
                self.p
            )));
        }
        let lead = terms[0].lambda;
        if !(lead > 0.0) {
            return Err(Error::InvalidInput(
                "leading input amplitude must be positive".into(),
            ));
        }
        if !(terms[0].mu < 0.0) {
            return Err(Error::InvalidInput("input exponents must be negative".into()));
        }
        let mut theta = Vec::with_capacity(self.n_params());
        for (id, _) in self.tacs.curves() {
            let region = config
                .region(id)
                .ok_or_else(|| Error::InvalidInput(format!("start lacks region `{id}`")))?;
            let p = region.params;
            for (field, v) in [("K1", p.k1 * lead), ("k2", p.k2), ("k3", p.k3), ("k4", p.k4)] {
                if !(v > 0.0) {
                    return Err(Error::InvalidParams {
                        field,
                        reason: "start values must be strictly positive".into(),
                    }
                    .in_region(id));
                }
                theta.push(v.ln());
            }
        }
        theta.push((-terms[0].mu).ln());
        for j in 1..self.p {
            theta.push(terms[j].lambda / lead);
            theta.push((terms[j - 1].mu - terms[j].mu).ln());
        }
        Ok(theta)
    }

    pub fn config_from_theta(&self, theta: &[f64]) -> Result<Configuration> {
        if theta.len() != self.n_params() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        let (params, terms) = self.split(theta);
        let regions = params
            .into_iter()
            .zip(self.tacs.curves())
            .map(|(params, (id, _))| Region {
                id: id.clone(),
                params,
            })
            .collect();
        Configuration::new(regions, PolyexpInput::new(terms)?)
    }

    /// Least-squares `K1` per region for the other parameters in `theta`.
    fn refit_k1(&self, theta: &mut [f64]) {
        let (params, terms) = self.split(theta);
        for (i, (p, (_, curve))) in params.iter().zip(self.tacs.curves()).enumerate() {
            let Ok(kernel) = TissueKernel::new(&p.with_k1(1.0)) else {
                continue;
            };
            let (mut gy, mut gg) = (0.0, 0.0);
            for (t, y) in self.tacs.time_grid().iter().zip(curve) {
                let g = kernel.eval_terms(&terms, *t);
                gy += g * y;
                gg += g * g;
            }
            let k1 = gy / gg;
            if k1 > 0.0 && k1.is_finite() {
                theta[4 * i] = k1.ln();
            }
        }
    }
}

fn apply_gauge(config: Configuration, gauge: Gauge) -> Configuration {
    let terms = config.input().terms();
    let lead = terms[0].lambda;
    let c = match gauge {
        Gauge::LeadingAmplitude => 1.0 / lead,
        Gauge::AmplitudeSum => {
            let sum: f64 = terms.iter().map(|t| t.lambda).sum();
            if sum > 0.0 && sum.is_finite() {
                1.0 / sum
            } else {
                1.0 / lead
            }
        }
    };
    if c == 1.0 {
        return config;
    }
    config.gauge_transform(c).unwrap_or(config)
}

fn k3_boundary(config: &Configuration) -> Vec<String> {
    config
        .regions()
        .iter()
        .filter(|r| r.params.k3 <= 1e-8 * (r.params.k2 + r.params.k3 + r.params.k4))
        .map(|r| r.id.clone())
        .collect()
}

fn check_samples(tacs: &TacTable, p: usize) -> Result<()> {
    let need = required_samples(p);
    if tacs.len() < need {
        return Err(Error::InsufficientSamples {
            have: tacs.len(),
            need,
        });
    }
    Ok(())
}

/// Runs one local fit from `start`, labelled `start_index` in the result.
pub fn fit_from(
    tacs: &TacTable,
    start: &Configuration,
    options: &FitOptions,
    start_index: usize,
) -> Result<FitResult> {
    options.validate()?;
    check_samples(tacs, options.p)?;
    let total = tacs.sum_sq();
    if total == 0.0 {
        return Ok(zero_data_result(tacs, start, start_index));
    }
    let objective = Objective::new(tacs, options.p)?;
    let theta0 = objective.theta_from_config(start)?;
    let settings = lm::LmSettings {
        max_iters: options.max_iters,
        param_tol: options.param_tol,
        sse_floor: 1e-32 * total,
        fd_step: FD_STEP,
        max_step: 2.0,
    };
    let out = lm::minimize(|x: &[f64]| objective.residuals(x), theta0, &settings);
    if out.stop == lm::Stop::BadStart {
        return Err(Error::InvalidInput(format!(
            "start {start_index} cannot be evaluated"
        )));
    }
    let config = apply_gauge(objective.config_from_theta(&out.theta)?, options.gauge);
    let relative_sse = out.sse / total;
    Ok(FitResult {
        k3_boundary_regions: k3_boundary(&config),
        config,
        sse: out.sse,
        relative_sse,
        converged: relative_sse <= options.residual_tol,
        start_index,
        iterations: out.iterations,
        gauge_indeterminate: false,
        trace: out
            .trace
            .iter()
            .enumerate()
            .map(|(iter, &sse)| TraceEntry {
                start: start_index,
                iter,
                sse,
            })
            .collect(),
    })
}

fn zero_data_result(tacs: &TacTable, start: &Configuration, start_index: usize) -> FitResult {
    let regions = tacs
        .curves()
        .iter()
        .map(|(id, _)| Region {
            id: id.clone(),
            params: start
                .region(id)
                .map_or(start.regions()[0].params, |r| r.params)
                .with_k1(0.0),
        })
        .collect();
    let config = Configuration::new(regions, start.input().clone())
        .expect("zero-K1 copy of a valid configuration");
    FitResult {
        k3_boundary_regions: k3_boundary(&config),
        config,
        sse: 0.0,
        relative_sse: 0.0,
        converged: true,
        start_index,
        iterations: 0,
        gauge_indeterminate: true,
        trace: vec![TraceEntry {
            start: start_index,
            iter: 0,
            sse: 0.0,
        }],
    }
}

/// Start configurations `(index, config)`: the warm start as 0, then cold
/// starts `1..=n_starts`. Cold starts use the table's region ids and a `K1`
/// refitted to the data.
pub fn start_configs(tacs: &TacTable, options: &FitOptions) -> Result<Vec<(usize, Configuration)>> {
    options.validate()?;
    let mut starts = Vec::with_capacity(options.n_starts + 1);
    if let Some(warm) = &options.warm_start {
        starts.push((0, warm.clone()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(options.seed);
    let n = tacs.curves().len();
    let objective = Objective::new(tacs, options.p)?;
    for k in 1..=options.n_starts {
        let drawn = identifiability::sample_random_config(master.next_u64(), n, options.p, &options.bounds)?;
        let regions = drawn
            .regions()
            .iter()
            .zip(tacs.curves())
            .map(|(r, (id, _))| Region {
                id: id.clone(),
                params: r.params,
            })
            .collect();
        let config = Configuration::new(regions, drawn.input().clone())?;
        let lead = config.input().terms()[0].lambda;
        let config = config.gauge_transform(1.0 / lead)?;
        let mut theta = objective.theta_from_config(&config)?;
        if tacs.sum_sq() > 0.0 {
            objective.refit_k1(&mut theta);
        }
        starts.push((k, objective.config_from_theta(&theta)?));
    }
    Ok(starts)
}

fn fit_all(tacs: &TacTable, options: &FitOptions) -> Result<Vec<Result<FitResult>>> {
    let starts = start_configs(tacs, options)?;
    Ok(starts
        .par_iter()
        .map(|(k, start)| fit_from(tacs, start, options, *k))
        .collect())
}

/// Multi-start joint fit; returns the lowest-SSE result (ties go to the lower
/// start index). Fails with [`Error::NoConvergence`], carrying that result,
/// when no start meets `residual_tol`.
pub fn fit_joint(tacs: &TacTable, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    check_samples(tacs, options.p)?;
    let mut results = Vec::new();
    let mut first_err = None;
    for r in fit_all(tacs, options)? {
        match r {
            Ok(fit) => results.push(fit),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let trace: Vec<TraceEntry> = results.iter().flat_map(|r| r.trace.iter().copied()).collect();
    let Some(mut best) = results
        .into_iter()
        .min_by(|a, b| a.sse.total_cmp(&b.sse).then(a.start_index.cmp(&b.start_index)))
    else {
        return Err(first_err.expect("at least one start"));
    };
    best.trace = trace;
    if best.converged {
        Ok(best)
    } else {
        Err(Error::NoConvergence {
            best: Box::new(best),
        })
    }
}

/// Adds independent Gaussian noise with standard deviation `fraction` times
/// each curve's peak magnitude.
pub fn add_gaussian_noise(tacs: &TacTable, fraction: f64, seed: u64) -> Result<TacTable> {
    if !(fraction >= 0.0) || !fraction.is_finite() {
        return Err(Error::InvalidInput(format!(
            "noise fraction must be non-negative, got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curves = tacs
        .curves()
        .iter()
        .map(|(id, c)| {
            let peak = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let sd = fraction * peak;
            let noisy = if sd > 0.0 {
                let normal = Normal::new(0.0, sd).expect("positive finite deviation");
                c.iter().map(|v| v + normal.sample(&mut rng)).collect()
            } else {
                c.clone()
            };
            (id.clone(), noisy)
        })
        .collect();
    TacTable::new(
        tacs.time_grid().to_vec(),
        curves,
        tacs.wb_samples().map(<[_]>::to_vec),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartOutcome {
    pub start_index: usize,
    pub sse: f64,
    pub relative_sse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Only evaluated for converged starts.
    pub equivalent: Option<bool>,
    pub zeta: Option<f64>,
    pub max_param_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub start_index: usize,
    pub relative_sse: f64,
    pub config: Configuration,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub n_starts: usize,
    pub n_converged: usize,
    pub n_equivalent: usize,
    /// `ζ` of every equivalent fit, in start order (`K1 = ζ·K̃1`).
    pub zeta_values: Vec<f64>,
    /// Largest relative parameter deviation over the converged fits.
    pub worst_deviation: f64,
    /// At least one start converged and every converged fit is equivalent.
    pub passed: bool,
    /// Converged fits that are not equivalent to the truth.
    pub counterexamples: Vec<Counterexample>,
    pub per_start: Vec<StartOutcome>,
}

/// Simulates noiseless curves from `truth` on `grid` and fits them from
/// `options.n_starts` cold starts, comparing every converged fit with the truth.
pub fn verify_uniqueness(
    truth: &Configuration,
    grid: &[f64],
    options: &FitOptions,
) -> Result<UniquenessReport> {
    options.validate()?;
    let richness = identifiability::check_region_richness(truth, identifiability::DEFAULT_TOL)?;
    if !richness.satisfied {
        return Err(Error::HypothesisUnmet(richness.violations.join("; ")));
    }
    if truth.input().degree() != options.p {
        return Err(Error::InvalidInput(format!(
            "truth has {} input terms but p = {}",
            truth.input().degree(),
            options.p
        )));
    }
    let need = required_samples(options.p);
    if grid.len() < need {
        return Err(Error::InsufficientSamples {
            have: grid.len(),
            need,
        });
    }
    let tacs = simulate_tacs(truth, grid, None, None)?;
    let cold = FitOptions {
        warm_start: None,
        ..options.clone()
    };
    let fits = fit_all(&tacs, &cold)?;

    let mut report = UniquenessReport {
        n_starts: fits.len(),
        n_converged: 0,
        n_equivalent: 0,
        zeta_values: Vec::new(),
        worst_deviation: 0.0,
        passed: false,
        counterexamples: Vec::new(),
        per_start: Vec::with_capacity(fits.len()),
    };
    for (k, fit) in fits.into_iter().enumerate() {
        let fit = match fit {
            Ok(f) => f,
            Err(_) => {
                report.per_start.push(StartOutcome {
                    start_index: k + 1,
                    sse: f64::INFINITY,
                    relative_sse: f64::INFINITY,
                    converged: false,
                    iterations: 0,
                    equivalent: None,
                    zeta: None,
                    max_param_deviation: None,
                });
                continue;
            }
        };
        let mut outcome = StartOutcome {
            start_index: fit.start_index,
            sse: fit.sse,
            relative_sse: fit.relative_sse,
            converged: fit.converged,
            iterations: fit.iterations,
            equivalent: None,
            zeta: None,
            max_param_deviation: None,
        };
        if fit.converged {
            report.n_converged += 1;
            let eq = identifiability::equivalence_up_to_scale(truth, &fit.config, options.equivalence_tol);
            outcome.equivalent = Some(eq.equivalent);
            outcome.zeta = eq.zeta;
            outcome.max_param_deviation = Some(eq.max_param_deviation);
            report.worst_deviation = report.worst_deviation.max(eq.max_param_deviation);
            if eq.equivalent {
                report.n_equivalent += 1;
                report.zeta_values.extend(eq.zeta);
            } else {
                report.counterexamples.push(Counterexample {
                    start_index: fit.start_index,
                    relative_sse: fit.relative_sse,
                    config: fit.config.clone(),
                    diagnostics: eq.diagnostics,
                });
            }
        }
        report.per_start.push(outcome);
    }
    report.passed = report.n_converged > 0 && report.n_equivalent == report.n_converged;
    Ok(report)
}
