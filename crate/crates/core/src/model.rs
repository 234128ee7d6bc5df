//! Domain types and exact forward evaluation of the reversible two-tissue
//! compartment model.
//!
//! For one region the free and bound tissue concentrations obey
//!
//! ```text
//! dC_F/dt = K1 C_P - (k2 + k3) C_F + k4 C_B
//! dC_B/dt = k3 C_F - k4 C_B,        C_F(0) = C_B(0) = 0
//! ```
//!
//! and the total tissue curve `C_T = C_F + C_B` is a weighted sum of the two
//! convolutions `∫ e^{α(t-s)} C_P(s) ds` over the eigenvalues `α1 > α2` of the
//! system matrix. With a polyexponential plasma input every convolution has a
//! closed form, which is what [`TissueKernel`] evaluates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// `μ` and `α` are treated as equal (resonant) when
/// `|μ - α| <= RESONANCE_TOL * max(1, |α|)`.
pub const RESONANCE_TOL: f64 = 1e-9;

/// Default absolute/relative tolerance for [`eval_ct_convolution`].
pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

pub(crate) fn is_resonant(mu: f64, alpha: f64) -> bool {
    (mu - alpha).abs() <= RESONANCE_TOL * alpha.abs().max(1.0)
}

/// `∫_0^t e^{α(t-s)} e^{μ s} ds`.
///
/// Written as `e^{αt} (e^{(μ-α)t} - 1)/(μ-α)` through `expm1`, which stays
/// accurate as `μ → α`; inside the resonance band the limit `t e^{αt}` is used.
/// Far from resonance the plain difference `(e^{μt} - e^{αt})/(μ-α)` is exact
/// enough and cannot overflow.
#[inline]
pub(crate) fn exp_convolution(mu: f64, alpha: f64, t: f64) -> f64 {
    if is_resonant(mu, alpha) {
        return t * (alpha * t).exp();
    }
    let d = mu - alpha;
    if (d * t).abs() > 0.5 {
        ((mu * t).exp() - (alpha * t).exp()) / d
    } else {
        (alpha * t).exp() * (d * t).exp_m1() / d
    }
}

/// Rate constants of one region. `K1` in mL·cm⁻³·min⁻¹, the others in min⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticParams {
    #[serde(rename = "K1")]
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

impl KineticParams {
    pub fn new(k1: f64, k2: f64, k3: f64, k4: f64) -> Result<Self> {
        let params = Self { k1, k2, k3, k4 };
        params.validate()?;
        Ok(params)
    }

    /// Checks that every rate is finite and non-negative.
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("K1", self.k1),
            ("k2", self.k2),
            ("k3", self.k3),
            ("k4", self.k4),
        ] {
            if !value.is_finite() {
                return Err(Error::InvalidParams {
                    field,
                    reason: format!("must be finite, got {value}"),
                });
            }
            if value < 0.0 {
                return Err(Error::InvalidParams {
                    field,
                    reason: format!("must be non-negative, got {value}"),
                });
            }
        }
        Ok(())
    }

    pub fn k34(&self) -> f64 {
        self.k3 + self.k4
    }

    pub fn with_k1(self, k1: f64) -> Self {
        Self { k1, ..self }
    }
}

/// Eigenvalues of the tissue system matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alphas {
    pub alpha1: f64,
    pub alpha2: f64,
    /// `(k2 + k3 + k4) / 2`.
    pub k_half: f64,
}

/// Real roots `alpha2 < alpha1` of `x² + (k2+k3+k4)x + k2·k4`.
pub fn compute_alphas(params: &KineticParams) -> Result<Alphas> {
    let KineticParams { k2, k3, k4, .. } = *params;
    let sum = k2 + k3 + k4;
    // (k2+k3+k4)² - 4·k2·k4 expanded as a sum of non-negative terms.
    let disc = (k2 - k4) * (k2 - k4) + k3 * (k3 + 2.0 * (k2 + k4));
    if !(disc > 0.0) || !disc.is_finite() {
        return Err(Error::DegenerateParams { k2, k3, k4 });
    }
    let k_half = 0.5 * sum;
    let alpha2 = -k_half - 0.5 * disc.sqrt();
    // Product form avoids cancellation in -k + sqrt(k² - k2·k4); `+ 0.0` maps -0 to 0.
    let alpha1 = (k2 * k4) / alpha2 + 0.0;
    Ok(Alphas {
        alpha1,
        alpha2,
        k_half,
    })
}

/// One term `λ e^{μ t}` of the plasma input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputTerm {
    pub lambda: f64,
    pub mu: f64,
}

/// Arterial plasma input `C_P(t) = Σ λ_j e^{μ_j t}` with nonzero amplitudes and
/// distinct exponents, stored in strictly descending `μ` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInput", into = "RawInput")]
pub struct PolyexpInput {
    terms: Vec<InputTerm>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    terms: Vec<InputTerm>,
}

impl TryFrom<RawInput> for PolyexpInput {
    type Error = Error;
    fn try_from(raw: RawInput) -> Result<Self> {
        PolyexpInput::new(raw.terms)
    }
}

impl From<PolyexpInput> for RawInput {
    fn from(input: PolyexpInput) -> Self {
        RawInput { terms: input.terms }
    }
}

impl PolyexpInput {
    /// Validates the terms and sorts them into canonical (descending `μ`) order.
    pub fn new(mut terms: Vec<InputTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidInput("input needs at least one term".into()));
        }
        for (j, term) in terms.iter().enumerate() {
            if !term.lambda.is_finite() || !term.mu.is_finite() {
                return Err(Error::InvalidInput(format!("input term {j} is not finite")));
            }
            if term.lambda == 0.0 {
                return Err(Error::InvalidInput(format!("input term {j} has lambda = 0")));
            }
        }
        terms.sort_by(|a, b| b.mu.total_cmp(&a.mu));
        if let Some(w) = terms.windows(2).find(|w| w[0].mu == w[1].mu) {
            return Err(Error::InvalidInput(format!(
                "input exponents must be pairwise distinct (mu = {} repeated)",
                w[0].mu
            )));
        }
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[InputTerm] {
        &self.terms
    }

    pub fn degree(&self) -> usize {
        self.terms.len()
    }

    /// All amplitudes multiplied by `c` (`c ≠ 0`).
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.terms
                .iter()
                .map(|t| InputTerm {
                    lambda: t.lambda * c,
                    mu: t.mu,
                })
                .collect(),
        )
    }

    pub fn eval(&self, t: f64) -> f64 {
        eval_terms(&self.terms, t)
    }
}

pub(crate) fn eval_terms(terms: &[InputTerm], t: f64) -> f64 {
    terms.iter().map(|term| term.lambda * (term.mu * t).exp()).sum()
}

/// `Σ_j λ_j e^{μ_j t}`.
pub fn eval_cp(input: &PolyexpInput, t: f64) -> f64 {
    input.eval(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    #[serde(flatten)]
    pub params: KineticParams,
}

/// `n` regions sharing one plasma input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfiguration", into = "RawConfiguration")]
pub struct Configuration {
    regions: Vec<Region>,
    input: PolyexpInput,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfiguration {
    input: PolyexpInput,
    regions: Vec<RawRegion>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    id: String,
    #[serde(rename = "K1")]
    k1: f64,
    k2: f64,
    k3: f64,
    k4: f64,
}

impl TryFrom<RawConfiguration> for Configuration {
    type Error = Error;
    fn try_from(raw: RawConfiguration) -> Result<Self> {
        let regions = raw
            .regions
            .into_iter()
            .map(|r| Region {
                id: r.id,
                params: KineticParams {
                    k1: r.k1,
                    k2: r.k2,
                    k3: r.k3,
                    k4: r.k4,
                },
            })
            .collect();
        Configuration::new(regions, raw.input)
    }
}

impl From<Configuration> for RawConfiguration {
    fn from(config: Configuration) -> Self {
        RawConfiguration {
            input: config.input,
            regions: config
                .regions
                .into_iter()
                .map(|r| RawRegion {
                    id: r.id,
                    k1: r.params.k1,
                    k2: r.params.k2,
                    k3: r.params.k3,
                    k4: r.params.k4,
                })
                .collect(),
        }
    }
}

impl Configuration {
    pub fn new(regions: Vec<Region>, input: PolyexpInput) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::InvalidInput(
                "configuration needs at least one region".into(),
            ));
        }
        for (i, region) in regions.iter().enumerate() {
            if regions[..i].iter().any(|r| r.id == region.id) {
                return Err(Error::InvalidInput(format!(
                    "duplicate region id `{}`",
                    region.id
                )));
            }
            region
                .params
                .validate()
                .map_err(|e| e.in_region(&region.id))?;
        }
        Ok(Self { regions, input })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn input(&self) -> &PolyexpInput {
        &self.input
    }

    pub fn region(&self, id: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    /// `λ_j ↦ c·λ_j`, `K1ⁱ ↦ K1ⁱ/c`: leaves every tissue curve unchanged.
    pub fn gauge_transform(&self, c: f64) -> Result<Self> {
        if c == 0.0 || !c.is_finite() {
            return Err(Error::InvalidInput(format!(
                "gauge factor must be finite and nonzero, got {c}"
            )));
        }
        let regions = self
            .regions
            .iter()
            .map(|r| Region {
                id: r.id.clone(),
                params: r.params.with_k1(r.params.k1 / c),
            })
            .collect();
        Self::new(regions, self.input.scaled(c)?)
    }
}

/// Fractional blood volume of the PET signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MixingModel {
    vb: f64,
}

impl TryFrom<f64> for MixingModel {
    type Error = Error;
    fn try_from(vb: f64) -> Result<Self> {
        MixingModel::new(vb)
    }
}

impl From<MixingModel> for f64 {
    fn from(m: MixingModel) -> f64 {
        m.vb
    }
}

impl MixingModel {
    pub fn new(vb: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&vb) {
            return Err(Error::InvalidParams {
                field: "vb",
                reason: format!("blood volume fraction must lie in [0, 1), got {vb}"),
            });
        }
        Ok(Self { vb })
    }

    pub fn vb(&self) -> f64 {
        self.vb
    }
}

/// `(1 - V_b)·C_T + V_b·C_WB`.
pub fn eval_cpet(ct: f64, cwb: f64, mixing: &MixingModel) -> f64 {
    if mixing.vb == 0.0 {
        return ct;
    }
    (1.0 - mixing.vb) * ct + mixing.vb * cwb
}

/// Eigenvalues and convolution weights of one region, precomputed so the tissue
/// curve can be evaluated repeatedly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueKernel {
    pub alphas: Alphas,
    /// Weight of `∫ e^{α1(t-s)} C_P`: `K1 (α2 + k2) / (α2 - α1)`.
    pub w1: f64,
    /// Weight of `∫ e^{α2(t-s)} C_P`: `-K1 (α1 + k2) / (α2 - α1)`.
    pub w2: f64,
}

impl TissueKernel {
    pub fn new(params: &KineticParams) -> Result<Self> {
        let alphas = compute_alphas(params)?;
        let Alphas { alpha1, alpha2, .. } = alphas;
        let gap = alpha2 - alpha1;
        Ok(Self {
            alphas,
            w1: params.k1 * (alpha2 + params.k2) / gap,
            w2: -params.k1 * (alpha1 + params.k2) / gap,
        })
    }

    pub fn eval(&self, input: &PolyexpInput, t: f64) -> f64 {
        self.eval_terms(input.terms(), t)
    }

    pub(crate) fn eval_terms(&self, terms: &[InputTerm], t: f64) -> f64 {
        if self.w1 == 0.0 && self.w2 == 0.0 {
            return 0.0;
        }
        let Alphas { alpha1, alpha2, .. } = self.alphas;
        terms
            .iter()
            .map(|term| {
                term.lambda
                    * (self.w1 * exp_convolution(term.mu, alpha1, t)
                        + self.w2 * exp_convolution(term.mu, alpha2, t))
            })
            .sum()
    }
}

/// Closed-form tissue curve `C_T(t)` for a polyexponential input.
pub fn eval_ct_closed_form(params: &KineticParams, input: &PolyexpInput, t: f64) -> Result<f64> {
    Ok(TissueKernel::new(params)?.eval(input, t))
}

/// Tissue curve for an arbitrary continuous input by adaptive quadrature of
/// the convolution representation.
pub fn eval_ct_convolution<F>(params: &KineticParams, cp: F, t: f64, quad_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let kernel = TissueKernel::new(params)?;
    if t <= 0.0 || (kernel.w1 == 0.0 && kernel.w2 == 0.0) {
        return Ok(0.0);
    }
    let Alphas { alpha1, alpha2, .. } = kernel.alphas;
    let integrand =
        |s: f64| cp(s) * (kernel.w1 * (alpha1 * (t - s)).exp() + kernel.w2 * (alpha2 * (t - s)).exp());
    let estimate = quadrature::integrate(integrand, 0.0, t, quad_tol, quad_tol, quadrature::DEFAULT_MAX_EVALS)?;
    Ok(estimate.value)
}

/// Sampled measurements on one shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TacTable {
    time_grid: Vec<f64>,
    curves: Vec<(String, Vec<f64>)>,
    wb_samples: Option<Vec<(f64, f64)>>,
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("time grid is empty".into()));
    }
    for (l, &t) in grid.iter().enumerate() {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "time grid entry {l} must be finite and positive, got {t}"
            )));
        }
        if l > 0 && t <= grid[l - 1] {
            return Err(Error::InvalidInput(format!(
                "time grid must be strictly increasing (entry {l}: {t} after {})",
                grid[l - 1]
            )));
        }
    }
    Ok(())
}

fn validate_wb(samples: &[(f64, f64)]) -> Result<()> {
    for (l, &(s, c)) in samples.iter().enumerate() {
        if !s.is_finite() || !c.is_finite() {
            return Err(Error::InvalidInput(format!(
                "whole-blood sample {l} is not finite"
            )));
        }
        if c == 0.0 {
            return Err(Error::InvalidInput(format!(
                "whole-blood sample {l} at t={s} is zero"
            )));
        }
        if samples[..l].iter().any(|&(s2, _)| s2 == s) {
            return Err(Error::InvalidInput(format!(
                "whole-blood sample time {s} is repeated"
            )));
        }
    }
    Ok(())
}

fn times_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

impl TacTable {
    pub fn new(
        time_grid: Vec<f64>,
        curves: Vec<(String, Vec<f64>)>,
        wb_samples: Option<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        validate_grid(&time_grid)?;
        for (i, (id, curve)) in curves.iter().enumerate() {
            if curves[..i].iter().any(|(other, _)| other == id) {
                return Err(Error::InvalidInput(format!("duplicate region id `{id}`")));
            }
            if curve.len() != time_grid.len() {
                return Err(Error::InvalidInput(format!(
                    "region `{id}` has {} values for a grid of {}",
                    curve.len(),
                    time_grid.len()
                )));
            }
            if let Some(v) = curve.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "region `{id}` has a non-finite value {v}"
                )));
            }
        }
        if let Some(wb) = &wb_samples {
            validate_wb(wb)?;
        }
        Ok(Self {
            time_grid,
            curves,
            wb_samples,
        })
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    pub fn curves(&self) -> &[(String, Vec<f64>)] {
        &self.curves
    }

    pub fn curve(&self, id: &str) -> Option<&[f64]> {
        self.curves
            .iter()
            .find(|(other, _)| other == id)
            .map(|(_, c)| c.as_slice())
    }

    pub fn wb_samples(&self) -> Option<&[(f64, f64)]> {
        self.wb_samples.as_deref()
    }

    pub fn with_wb_samples(mut self, samples: Option<Vec<(f64, f64)>>) -> Result<Self> {
        if let Some(wb) = &samples {
            validate_wb(wb)?;
        }
        self.wb_samples = samples;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.time_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_grid.is_empty()
    }

    /// `Σ_i Σ_l y_{i,l}²`.
    pub fn sum_sq(&self) -> f64 {
        self.curves
            .iter()
            .flat_map(|(_, c)| c.iter())
            .map(|y| y * y)
            .sum()
    }

    /// Removes a known blood fraction: `C_T = (C_PET - V_b·C_WB) / (1 - V_b)`.
    /// Needs whole-blood samples on the table's own grid.
    pub fn unmix(&self, mixing: &MixingModel) -> Result<Self> {
        let wb = self.wb_samples.as_deref().ok_or(Error::MissingWholeBlood)?;
        let cwb = wb_on_grid(&self.time_grid, wb)?;
        let vb = mixing.vb();
        let curves = self
            .curves
            .iter()
            .map(|(id, c)| {
                let ct = c
                    .iter()
                    .zip(&cwb)
                    .map(|(y, w)| if vb == 0.0 { *y } else { (y - vb * w) / (1.0 - vb) })
                    .collect();
                (id.clone(), ct)
            })
            .collect();
        Self::new(self.time_grid.clone(), curves, self.wb_samples.clone())
    }
}

/// Whole-blood values looked up at each grid time.
fn wb_on_grid(grid: &[f64], wb: &[(f64, f64)]) -> Result<Vec<f64>> {
    grid.iter()
        .map(|&t| {
            wb.iter()
                .find(|(s, _)| times_match(*s, t))
                .map(|&(_, c)| c)
                .ok_or_else(|| {
                    Error::InvalidInput(format!("no whole-blood sample at grid time {t}"))
                })
        })
        .collect()
}

/// Tissue (or PET, when `mixing` is given) curves for every region on `grid`.
///
/// `cwb` holds whole-blood samples `(t, C_WB(t))` covering the grid times; it is
/// required with `mixing` and attached to the table when present.
pub fn simulate_tacs(
    config: &Configuration,
    grid: &[f64],
    mixing: Option<&MixingModel>,
    cwb: Option<&[(f64, f64)]>,
) -> Result<TacTable> {
    validate_grid(grid)?;
    let wb_values = match (mixing, cwb) {
        (Some(_), None) => return Err(Error::MissingWholeBlood),
        (Some(_), Some(wb)) => Some(wb_on_grid(grid, wb)?),
        _ => None,
    };
    let mut curves = Vec::with_capacity(config.n_regions());
    for region in config.regions() {
        let kernel = TissueKernel::new(&region.params).map_err(|e| e.in_region(&region.id))?;
        let curve = grid
            .iter()
            .enumerate()
            .map(|(l, &t)| {
                let ct = kernel.eval(config.input(), t);
                match (mixing, &wb_values) {
                    (Some(m), Some(w)) => eval_cpet(ct, w[l], m),
                    _ => ct,
                }
            })
            .collect();
        curves.push((region.id.clone(), curve));
    }
    TacTable::new(grid.to_vec(), curves, cwb.map(<[_]>::to_vec))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k1: f64, k2: f64, k3: f64, k4: f64) -> KineticParams {
        KineticParams::new(k1, k2, k3, k4).unwrap()
    }

    fn input(terms: &[(f64, f64)]) -> PolyexpInput {
        PolyexpInput::new(
            terms
                .iter()
                .map(|&(lambda, mu)| InputTerm { lambda, mu })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn alphas_of_irreversible_single_tissue() {
        let a = compute_alphas(&params(1.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(a.alpha1, 0.0);
        assert_eq!(a.alpha2, -1.0);
    }

    #[test]
    fn double_root_is_degenerate() {
        let err = compute_alphas(&params(1.0, 2.0, 0.0, 2.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateParams { .. }));
        let err = compute_alphas(&params(1.0, 0.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateParams { .. }));
    }

    #[test]
    fn alphas_hand_solved() {
        // x² + 4x + 3 = (x + 1)(x + 3)
        let a = compute_alphas(&params(1.0, 3.0, 0.0, 1.0)).unwrap();
        assert!((a.alpha1 + 1.0).abs() < 1e-15);
        assert!((a.alpha2 + 3.0).abs() < 1e-15);
        assert_eq!(a.k_half, 2.0);
    }

    #[test]
    fn alpha_sum_and_product() {
        let a = compute_alphas(&params(1.0, 0.5, 0.3, 0.1)).unwrap();
        assert!((a.alpha1 + a.alpha2 + 0.9).abs() < 1e-15);
        assert!((a.alpha1 * a.alpha2 - 0.05).abs() < 1e-15);
        assert!(a.alpha2 < -0.5 && -0.5 < a.alpha1 && a.alpha1 < 0.0);
    }

    #[test]
    fn negative_or_nan_rates_rejected() {
        assert!(KineticParams::new(-1.0, 0.1, 0.1, 0.1).is_err());
        assert!(KineticParams::new(1.0, f64::NAN, 0.1, 0.1).is_err());
        assert!(KineticParams::new(1.0, 0.1, f64::INFINITY, 0.1).is_err());
    }

    #[test]
    fn cp_examples() {
        assert_eq!(eval_cp(&input(&[(1.0, 0.0)]), 5.0), 1.0);
        assert_eq!(eval_cp(&input(&[(2.0, -1.0), (-1.0, -2.0)]), 0.0), 1.0);
        let expected = (-0.2f64).exp() + (-2.0f64).exp();
        assert!((eval_cp(&input(&[(1.0, -0.1), (1.0, -1.0)]), 2.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn input_is_sorted_and_validated() {
        let inp = input(&[(1.0, -3.0), (2.0, -0.1), (3.0, -1.0)]);
        let mus: Vec<f64> = inp.terms().iter().map(|t| t.mu).collect();
        assert_eq!(mus, vec![-0.1, -1.0, -3.0]);
        assert!(PolyexpInput::new(vec![]).is_err());
        assert!(PolyexpInput::new(vec![InputTerm { lambda: 0.0, mu: -1.0 }]).is_err());
        assert!(PolyexpInput::new(vec![
            InputTerm { lambda: 1.0, mu: -1.0 },
            InputTerm { lambda: 2.0, mu: -1.0 }
        ])
        .is_err());
    }

    #[test]
    fn closed_form_trivial_cases() {
        let inp = input(&[(1.0, -0.05), (0.5, -0.3)]);
        for t in [0.0, 1.0, 30.0] {
            assert_eq!(eval_ct_closed_form(&params(0.0, 0.4, 0.3, 0.1), &inp, t).unwrap(), 0.0);
        }
        assert_eq!(eval_ct_closed_form(&params(0.5, 0.4, 0.3, 0.1), &inp, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_degenerate_propagates() {
        let inp = input(&[(1.0, -0.05)]);
        assert!(matches!(
            eval_ct_closed_form(&params(0.5, 2.0, 0.0, 2.0), &inp, 1.0),
            Err(Error::DegenerateParams { .. })
        ));
    }

    #[test]
    fn one_tissue_reduction_matches_hand_integral() {
        // k3 = k4 = 0: C_T = K1 ∫ e^{-k2 (t-s)} e^{μ s} ds = K1 (e^{μt} - e^{-k2 t}) / (μ + k2)
        let p = params(0.7, 0.4, 0.0, 0.0);
        let (mu, k2, t): (f64, f64, f64) = (-0.05, 0.4, 12.0);
        let expected = 0.7 * ((mu * t).exp() - (-k2 * t).exp()) / (mu + k2);
        let got = eval_ct_closed_form(&p, &input(&[(1.0, mu)]), t).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn near_resonance_is_continuous() {
        let p = params(0.5, 0.4, 0.3, 0.1);
        let a1 = compute_alphas(&p).unwrap().alpha1;
        let t = 20.0;
        let exact = eval_ct_closed_form(&p, &input(&[(1.0, a1)]), t).unwrap();
        for offset in [1e-12, 5e-10, 2e-9, 1e-8, 1e-7, 9e-7, 2e-6] {
            let near = eval_ct_closed_form(&p, &input(&[(1.0, a1 + offset)]), t).unwrap();
            // first-order sensitivity to μ is bounded by t·|C_T|
            assert!(
                (near - exact).abs() <= 2.0 * t * offset * exact.abs() + 1e-15,
                "offset {offset}: {near} vs {exact}"
            );
        }
    }

    #[test]
    fn cpet_examples() {
        assert_eq!(eval_cpet(3.0, 7.0, &MixingModel::new(0.0).unwrap()), 3.0);
        assert!(MixingModel::new(1.0).is_err());
        assert!(MixingModel::new(-0.1).is_err());
        assert!(MixingModel::new(0.5).is_ok());
        assert_eq!(eval_cpet(2.0, 10.0, &MixingModel::new(0.25).unwrap()), 4.0);
    }

    fn demo_config(k1: f64) -> Configuration {
        Configuration::new(
            vec![Region {
                id: "r".into(),
                params: params(k1, 0.4, 0.3, 0.1),
            }],
            input(&[(1.0, -0.05), (0.5, -0.3), (-0.2, -1.0), (0.1, -3.0)]),
        )
        .unwrap()
    }

    #[test]
    fn simulate_zero_k1_is_zero() {
        let table = simulate_tacs(&demo_config(0.0), &[1.0, 2.0, 3.0], None, None).unwrap();
        assert!(table.curves()[0].1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn simulate_pointwise_definition() {
        let config = demo_config(0.5);
        let grid = [0.5, 4.0, 33.0];
        let table = simulate_tacs(&config, &grid, None, None).unwrap();
        for (l, &t) in grid.iter().enumerate() {
            let v = eval_ct_closed_form(&config.regions()[0].params, config.input(), t).unwrap();
            assert_eq!(table.curves()[0].1[l], v);
        }
    }

    #[test]
    fn simulate_requires_whole_blood_with_mixing() {
        let mixing = MixingModel::new(0.05).unwrap();
        let err = simulate_tacs(&demo_config(0.5), &[1.0, 2.0], Some(&mixing), None).unwrap_err();
        assert!(matches!(err, Error::MissingWholeBlood));
    }

    #[test]
    fn simulate_rejects_bad_grids() {
        let config = demo_config(0.5);
        assert!(simulate_tacs(&config, &[0.0, 1.0], None, None).is_err());
        assert!(simulate_tacs(&config, &[2.0, 1.0], None, None).is_err());
        assert!(simulate_tacs(&config, &[1.0, 1.0], None, None).is_err());
    }

    #[test]
    fn unmix_inverts_mixing() {
        let config = demo_config(0.5);
        let grid = [1.0, 2.0, 5.0];
        let wb: Vec<(f64, f64)> = grid.iter().map(|&t| (t, 2.0 + t)).collect();
        let m = MixingModel::new(0.2).unwrap();
        let pet = simulate_tacs(&config, &grid, Some(&m), Some(&wb)).unwrap();
        let pure = simulate_tacs(&config, &grid, None, None).unwrap();
        let back = pet.unmix(&m).unwrap();
        for (a, b) in back.curves()[0].1.iter().zip(&pure.curves()[0].1) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn configuration_rejects_duplicates() {
        let r = Region {
            id: "a".into(),
            params: params(0.5, 0.4, 0.3, 0.1),
        };
        let err = Configuration::new(vec![r.clone(), r], input(&[(1.0, -0.1)])).unwrap_err();
        assert!(err.to_string().contains("duplicate region id"));
    }

    #[test]
    fn configuration_json_layout() {
        let json = r#"{"input":{"terms":[{"lambda":1.0,"mu":-0.1}]},"regions":[{"id":"a","K1":0.5,"k2":0.4,"k3":0.3,"k4":0.1}]}"#;
        let config: Configuration = serde_json::from_str(json).unwrap();
        assert_eq!(serde_json::to_string(&config).unwrap(), json);
        let bad = json.replace("\"k4\":0.1", "\"k4\":-0.1");
        let err = serde_json::from_str::<Configuration>(&bad).unwrap_err();
        assert!(err.to_string().contains("k4"), "{err}");
        let extra = json.replace("\"k4\":0.1", "\"k4\":0.1,\"k5\":1");
        assert!(serde_json::from_str::<Configuration>(&extra).is_err());
    }
}
