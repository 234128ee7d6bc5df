//! Exponential-polynomial sums `G(t) = Σ_j P_j(t) e^{μ_j t}`.
//!
//! Tissue curves under a polyexponential input are sums of this form with
//! affine-linear `P_j`. The module provides the symbolic expansion of a region's
//! curve, a canonical form for term-by-term comparison, and least-squares
//! recovery of the polynomial coefficients on a known exponent set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{is_resonant, KineticParams, PolyexpInput, TissueKernel};

/// Exponents closer than this (absolute) are merged by [`canonicalize`].
pub const MERGE_TOL: f64 = 1e-9;
/// Default coefficient drop threshold, relative to the largest coefficient.
pub const DEFAULT_COEFF_TOL: f64 = 1e-12;
/// Largest accepted condition estimate of the equilibrated basis matrix.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpPolyTerm {
    pub exponent: f64,
    /// `c_0, c_1, …` of `Σ_k c_k t^k`.
    pub coeffs: Vec<f64>,
}

impl ExpPolyTerm {
    pub fn eval(&self, t: f64) -> f64 {
        let poly = self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c);
        poly * (self.exponent * t).exp()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpPolySum {
    pub terms: Vec<ExpPolyTerm>,
}

impl ExpPolySum {
    pub fn eval(&self, t: f64) -> f64 {
        eval_sum(self, t)
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Exponent and polynomial degree (`m_j`) of every term.
    pub fn multiplicities(&self) -> Vec<usize> {
        self.terms.iter().map(|t| t.coeffs.len()).collect()
    }

    pub fn exponents(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.exponent).collect()
    }

    /// Largest relative coefficient mismatch between two canonical sums, or
    /// `None` when their exponent sets differ by more than `exponent_tol`.
    pub fn max_coeff_deviation(&self, other: &Self, exponent_tol: f64) -> Option<f64> {
        if self.terms.len() != other.terms.len() {
            return None;
        }
        let mut worst = 0.0f64;
        for (a, b) in self.terms.iter().zip(&other.terms) {
            if (a.exponent - b.exponent).abs() > exponent_tol * a.exponent.abs().max(1.0) {
                return None;
            }
            for k in 0..a.coeffs.len().max(b.coeffs.len()) {
                let ca = a.coeffs.get(k).copied().unwrap_or(0.0);
                let cb = b.coeffs.get(k).copied().unwrap_or(0.0);
                let scale = ca.abs().max(cb.abs());
                if scale > 0.0 {
                    worst = worst.max((ca - cb).abs() / scale);
                }
            }
        }
        Some(worst)
    }
}

/// `Σ_terms (Σ_k c_k t^k) e^{exponent·t}`.
pub fn eval_sum(sum: &ExpPolySum, t: f64) -> f64 {
    sum.terms.iter().map(|term| term.eval(t)).sum()
}

/// Merges exponents within [`MERGE_TOL`], zeroes coefficients with magnitude
/// at most `coeff_tol` times the largest one, drops empty terms and sorts by
/// exponent descending. Idempotent.
pub fn canonicalize(sum: &ExpPolySum, coeff_tol: f64) -> ExpPolySum {
    let mut terms: Vec<ExpPolyTerm> = sum
        .terms
        .iter()
        .filter(|t| t.exponent.is_finite())
        .cloned()
        .collect();
    terms.sort_by(|a, b| b.exponent.total_cmp(&a.exponent));

    let mut merged: Vec<ExpPolyTerm> = Vec::with_capacity(terms.len());
    let mut last_exponent = f64::NAN;
    for term in terms {
        match merged.last_mut() {
            Some(prev) if last_exponent - term.exponent <= MERGE_TOL => {
                if prev.coeffs.len() < term.coeffs.len() {
                    prev.coeffs.resize(term.coeffs.len(), 0.0);
                }
                for (p, c) in prev.coeffs.iter_mut().zip(&term.coeffs) {
                    *p += c;
                }
            }
            _ => merged.push(term.clone()),
        }
        last_exponent = term.exponent;
    }

    let largest = merged
        .iter()
        .flat_map(|t| t.coeffs.iter())
        .fold(0.0f64, |m, c| m.max(c.abs()));
    let threshold = coeff_tol * largest;
    merged
        .into_iter()
        .filter_map(|mut term| {
            for c in term.coeffs.iter_mut() {
                if c.abs() <= threshold {
                    *c = 0.0;
                }
            }
            while term.coeffs.last() == Some(&0.0) {
                term.coeffs.pop();
            }
            (!term.coeffs.is_empty()).then_some(term)
        })
        .collect::<Vec<_>>()
        .into()
}

impl From<Vec<ExpPolyTerm>> for ExpPolySum {
    fn from(terms: Vec<ExpPolyTerm>) -> Self {
        Self { terms }
    }
}

/// Symbolic expansion of one region's tissue curve.
///
/// Non-resonant input terms contribute `K1 λ (μ + k3 + k4) / ((μ - α1)(μ - α2)) e^{μt}`;
/// the eigenvalue terms `e^{α1 t}`, `e^{α2 t}` collect the homogeneous part, and
/// an input exponent within the resonance tolerance of `α` yields a `t e^{αt}` term.
pub fn expand_configuration(params: &KineticParams, input: &PolyexpInput) -> Result<ExpPolySum> {
    let kernel = TissueKernel::new(params)?;
    let (a1, a2) = (kernel.alphas.alpha1, kernel.alphas.alpha2);
    let (w1, w2) = (kernel.w1, kernel.w2);

    let mut terms = Vec::with_capacity(input.degree() + 2);
    // [constant, linear] coefficients of e^{α1 t} and e^{α2 t}
    let mut at1 = [0.0, 0.0];
    let mut at2 = [0.0, 0.0];
    for term in input.terms() {
        let (lambda, mu) = (term.lambda, term.mu);
        let r1 = is_resonant(mu, a1);
        let r2 = is_resonant(mu, a2);
        if r1 {
            at1[1] += w1 * lambda;
            at1[0] += w2 * lambda / (mu - a2);
        } else if r2 {
            at2[1] += w2 * lambda;
            at2[0] += w1 * lambda / (mu - a1);
        } else {
            let coeff = params.k1 * lambda * (mu + params.k34()) / ((mu - a1) * (mu - a2));
            terms.push(ExpPolyTerm {
                exponent: mu,
                coeffs: vec![coeff],
            });
        }
        if !r1 {
            at1[0] -= w1 * lambda / (mu - a1);
        }
        if !r2 {
            at2[0] -= w2 * lambda / (mu - a2);
        }
    }
    terms.push(ExpPolyTerm {
        exponent: a1,
        coeffs: at1.to_vec(),
    });
    terms.push(ExpPolyTerm {
        exponent: a2,
        coeffs: at2.to_vec(),
    });
    Ok(canonicalize(&terms.into(), 0.0))
}

/// Sample bound for interpolation: `2 Σ m_j <= T`.
pub fn sample_count_ok(multiplicities: &[usize], samples: usize) -> bool {
    2 * multiplicities.iter().sum::<usize>() <= samples
}

fn basis_matrix(times: &[f64], exponents: &[f64], multiplicities: &[usize]) -> DMatrix<f64> {
    let cols: usize = multiplicities.iter().sum();
    let mut a = DMatrix::zeros(times.len(), cols);
    let mut col = 0;
    for (&mu, &m) in exponents.iter().zip(multiplicities) {
        for k in 0..m {
            for (row, &t) in times.iter().enumerate() {
                a[(row, col)] = t.powi(k as i32) * (mu * t).exp();
            }
            col += 1;
        }
    }
    a
}

/// Divides every column by its Euclidean norm; returns the norms.
fn equilibrate(a: &mut DMatrix<f64>) -> Vec<f64> {
    (0..a.ncols())
        .map(|j| {
            let norm = a.column(j).norm();
            if norm > 0.0 {
                a.column_mut(j).scale_mut(1.0 / norm);
            }
            norm
        })
        .collect()
}

fn condition_of(svd: &nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let s = &svd.singular_values;
    let max = s.iter().cloned().fold(0.0f64, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Condition estimate (2-norm) of the column-equilibrated basis matrix
/// `[t_l^k e^{μ_j t_l}]`.
pub fn basis_condition(times: &[f64], exponents: &[f64], multiplicities: &[usize]) -> f64 {
    let mut a = basis_matrix(times, exponents, multiplicities);
    if equilibrate(&mut a).iter().any(|&n| n == 0.0 || !n.is_finite()) {
        return f64::INFINITY;
    }
    condition_of(&a.svd(false, false))
}

/// Least-squares coefficients of `samples` over the basis
/// `{t^k e^{μ_j t} : 0 <= k < m_j}`. The returned sum keeps the given exponent
/// order and every coefficient, including zeros.
pub fn fit_coefficients_given_exponents(
    samples: &[(f64, f64)],
    exponents: &[f64],
    multiplicities: &[usize],
) -> Result<ExpPolySum> {
    if exponents.len() != multiplicities.len() {
        return Err(Error::InvalidInput(format!(
            "{} exponents but {} multiplicities",
            exponents.len(),
            multiplicities.len()
        )));
    }
    if multiplicities.contains(&0) {
        return Err(Error::InvalidInput("multiplicities must be >= 1".into()));
    }
    if !sample_count_ok(multiplicities, samples.len()) {
        return Err(Error::InsufficientSamples {
            have: samples.len(),
            need: 2 * multiplicities.iter().sum::<usize>(),
        });
    }
    let mut times: Vec<f64> = samples.iter().map(|s| s.0).collect();
    if times.iter().chain(samples.iter().map(|s| &s.1)).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("samples must be finite".into()));
    }
    times.sort_by(f64::total_cmp);
    if times.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("sample times must be pairwise distinct".into()));
    }
    for (i, mu) in exponents.iter().enumerate() {
        if exponents[..i].contains(mu) {
            return Err(Error::InvalidInput(format!("exponent {mu} repeated")));
        }
    }

    let times: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let mut a = basis_matrix(&times, exponents, multiplicities);
    let norms = equilibrate(&mut a);
    let svd = a.svd(true, true);
    let condition = if norms.iter().any(|&n| n == 0.0 || !n.is_finite()) {
        f64::INFINITY
    } else {
        condition_of(&svd)
    };
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::IllConditioned {
            condition,
            threshold: CONDITION_LIMIT,
        });
    }
    let b = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::InvalidInput(format!("least-squares solve failed: {e}")))?;

    let mut col = 0;
    let terms = exponents
        .iter()
        .zip(multiplicities)
        .map(|(&exponent, &m)| {
            let coeffs = (0..m)
                .map(|_| {
                    let c = x[col] / norms[col];
                    col += 1;
                    c
                })
                .collect();
            ExpPolyTerm { exponent, coeffs }
        })
        .collect();
    Ok(ExpPolySum { terms })
}

/// Attenuation `f(t) = a e^{bt} + (1 - a) e^{ct}`, so `f(0) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuationBiexp {
    a: f64,
    b: f64,
    c: f64,
}

impl AttenuationBiexp {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::InvalidInput("attenuation parameters must be finite".into()));
        }
        if b == c {
            return Err(Error::InvalidInput(
                "attenuation rates b and c must differ".into(),
            ));
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Same function with the larger rate first (`b > c`).
    pub fn canonical(self) -> Self {
        if self.b >= self.c {
            self
        } else {
            Self {
                a: 1.0 - self.a,
                b: self.c,
                c: self.b,
            }
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        eval_attenuation(self, t)
    }
}

pub fn eval_attenuation(f: &AttenuationBiexp, t: f64) -> f64 {
    f.a * (f.b * t).exp() + (1.0 - f.a) * (f.c * t).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{compute_alphas, eval_ct_closed_form, InputTerm};

    fn term(exponent: f64, coeffs: &[f64]) -> ExpPolyTerm {
        ExpPolyTerm {
            exponent,
            coeffs: coeffs.to_vec(),
        }
    }

    #[test]
    fn eval_examples() {
        assert_eq!(eval_sum(&ExpPolySum::default(), 3.0), 0.0);
        assert_eq!(eval_sum(&vec![term(0.0, &[2.0])].into(), 3.0), 2.0);
        let v = eval_sum(&vec![term(-1.0, &[1.0, 1.0])].into(), 1.0);
        assert!((v - 2.0 / std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn canonicalize_cancels_and_sorts() {
        let s: ExpPolySum = vec![term(-1.0, &[2.0]), term(-1.0, &[-2.0])].into();
        assert!(canonicalize(&s, DEFAULT_COEFF_TOL).is_empty());

        let s: ExpPolySum = vec![term(-3.0, &[1.0]), term(-0.5, &[2.0, 1.0]), term(-1.0, &[4.0])].into();
        let c = canonicalize(&s, DEFAULT_COEFF_TOL);
        assert_eq!(c.exponents(), vec![-0.5, -1.0, -3.0]);
        assert_eq!(canonicalize(&c, DEFAULT_COEFF_TOL), c);
    }

    #[test]
    fn canonicalize_merges_close_exponents_and_trims() {
        let s: ExpPolySum = vec![term(-1.0, &[1.0]), term(-1.0 - 5e-10, &[0.0, 3.0]), term(-2.0, &[1e-15, 0.0])].into();
        let c = canonicalize(&s, DEFAULT_COEFF_TOL);
        assert_eq!(c.terms, vec![term(-1.0, &[1.0, 3.0])]);
    }

    #[test]
    fn sample_bound() {
        assert!(sample_count_ok(&[1, 1, 1, 1], 8));
        assert!(!sample_count_ok(&[2; 6], 16));
        assert!(!sample_count_ok(&[1], 1));
    }

    fn params() -> KineticParams {
        KineticParams::new(0.5, 0.4, 0.3, 0.1).unwrap()
    }

    fn input(terms: &[(f64, f64)]) -> PolyexpInput {
        PolyexpInput::new(terms.iter().map(|&(lambda, mu)| InputTerm { lambda, mu }).collect()).unwrap()
    }

    #[test]
    fn expansion_of_zero_uptake_is_empty() {
        let p = KineticParams::new(0.0, 0.4, 0.3, 0.1).unwrap();
        assert!(expand_configuration(&p, &input(&[(1.0, -0.1), (2.0, -1.0)])).unwrap().is_empty());
    }

    #[test]
    fn resonant_expansion_has_linear_term() {
        let p = params();
        let a = compute_alphas(&p).unwrap();
        let sum = expand_configuration(&p, &input(&[(1.0, a.alpha1)])).unwrap();
        let lin = sum
            .terms
            .iter()
            .find(|t| t.exponent == a.alpha1)
            .and_then(|t| t.coeffs.get(1).copied())
            .expect("t e^{α1 t} term");
        let expected = p.k1 * (a.alpha2 + p.k2) / (a.alpha2 - a.alpha1);
        assert!((lin - expected).abs() < 1e-15);
        assert!(lin != 0.0);
        for t in [0.5, 3.0, 17.0, 60.0] {
            let cf = eval_ct_closed_form(&p, &input(&[(1.0, a.alpha1)]), t).unwrap();
            assert!((sum.eval(t) - cf).abs() <= 1e-9 * cf.abs().max(1.0));
        }
    }

    #[test]
    fn expansion_matches_closed_form() {
        let p = params();
        let inp = input(&[(1.0, -0.05), (0.5, -0.3), (-0.2, -1.0), (0.1, -3.0)]);
        let sum = expand_configuration(&p, &inp).unwrap();
        assert_eq!(sum.terms.len(), 6);
        for l in 0..20 {
            let t = 0.25 * (240.0f64).powf(l as f64 / 19.0);
            let cf = eval_ct_closed_form(&p, &inp, t).unwrap();
            assert!((sum.eval(t) - cf).abs() <= 1e-12 * cf.abs().max(1.0), "t={t}");
        }
    }

    #[test]
    fn fit_zero_function() {
        let samples: Vec<(f64, f64)> = (1..=8).map(|l| (l as f64, 0.0)).collect();
        let sum = fit_coefficients_given_exponents(&samples, &[-0.1, -1.0], &[1, 2]).unwrap();
        assert!(sum.terms.iter().flat_map(|t| &t.coeffs).all(|&c| c == 0.0));
    }

    #[test]
    fn fit_single_exponential_among_candidates() {
        let samples: Vec<(f64, f64)> = (0..8)
            .map(|l| {
                let t = 0.25 * (240.0f64).powf(l as f64 / 7.0);
                (t, 3.0 * (-t).exp())
            })
            .collect();
        let exps = [-1.0, -2.0, -0.5, -0.1];
        let sum = fit_coefficients_given_exponents(&samples, &exps, &[1; 4]).unwrap();
        assert!((sum.terms[0].coeffs[0] - 3.0).abs() < 1e-8);
        for t in &sum.terms[1..] {
            assert!(t.coeffs[0].abs() <= 1e-8, "{t:?}");
        }
    }

    #[test]
    fn fit_guards() {
        let samples: Vec<(f64, f64)> = (1..=3).map(|l| (l as f64, 1.0)).collect();
        assert!(matches!(
            fit_coefficients_given_exponents(&samples, &[-1.0, -2.0], &[1, 1]),
            Err(Error::InsufficientSamples { have: 3, need: 4 })
        ));
        let dup = [(1.0, 1.0), (1.0, 2.0), (2.0, 1.0), (3.0, 1.0)];
        assert!(fit_coefficients_given_exponents(&dup, &[-1.0], &[1]).is_err());
        let samples: Vec<(f64, f64)> = (1..=8).map(|l| (l as f64, 1.0)).collect();
        let r = fit_coefficients_given_exponents(&samples, &[-1.0, -1.0 - 1e-13], &[1, 1]);
        assert!(matches!(r, Err(Error::IllConditioned { .. })), "{r:?}");
    }

    #[test]
    fn attenuation_examples() {
        let f = AttenuationBiexp::new(0.6, -0.05, -0.8).unwrap();
        assert_eq!(f.eval(0.0), 1.0);
        assert_eq!(AttenuationBiexp::new(1.0, 0.0, -3.0).unwrap().eval(10.0), 1.0);
        let expected = 0.6 * (-0.1f64).exp() + 0.4 * (-1.6f64).exp();
        assert!((f.eval(2.0) - expected).abs() < 1e-15);
        assert!(AttenuationBiexp::new(0.5, -1.0, -1.0).is_err());
        let swapped = AttenuationBiexp::new(0.4, -0.8, -0.05).unwrap().canonical();
        assert!((swapped.a() - 0.6).abs() < 1e-15 && swapped.b() == -0.05);
    }
}
