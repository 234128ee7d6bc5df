//! Checks of the richness hypotheses under which multi-region tissue curves
//! determine the kinetic parameters, the `ζ`-equivalence comparator between two
//! configurations, and a seeded random configuration sampler.
//!
//! All distinctness and nonzeroness tests are made at a caller-supplied
//! tolerance; the reports carry the smallest margins seen so borderline cases
//! can be judged by the caller.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    compute_alphas, is_resonant, Alphas, Configuration, InputTerm, KineticParams, PolyexpInput,
    Region,
};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const MAX_REDRAWS: usize = 1000;

fn separated(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() > tol * a.abs().max(b.abs()).max(1.0)
}

/// Number of clusters of `values` when neighbours closer than `tol` merge.
fn distinct_count(values: &[f64], tol: f64) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return 0;
    }
    1 + v.windows(2).filter(|w| separated(w[0], w[1], tol)).count()
}

fn min_separation(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

/// Smallest observed margins. `f64::INFINITY` when a quantity was never tested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub k34_separation: f64,
    pub alpha_separation: f64,
    /// `min |μ_{j0} + k3 + k4|` over witnesses.
    pub shift: f64,
    /// `min |Σ_{μ_j ≠ α} λ_j/(μ_j - α)|` over witnesses (non-resonant branches).
    pub residue: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Self {
            k34_separation: f64::INFINITY,
            alpha_separation: f64::INFINITY,
            shift: f64::INFINITY,
            residue: f64::INFINITY,
        }
    }
}

impl Margins {
    fn min(self, o: Self) -> Self {
        Self {
            k34_separation: self.k34_separation.min(o.k34_separation),
            alpha_separation: self.alpha_separation.min(o.alpha_separation),
            shift: self.shift.min(o.shift),
            residue: self.residue.min(o.residue),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// Input term index `j0` the witness serves; absent for the region-richness check.
    pub input_term: Option<usize>,
    pub regions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichnessReport {
    pub satisfied: bool,
    pub distinct_k34_count: usize,
    pub distinct_alpha_count: usize,
    pub witnesses: Vec<Witness>,
    pub violations: Vec<String>,
    pub margins: Margins,
}

struct RegionData<'a> {
    id: &'a str,
    params: KineticParams,
    alphas: Alphas,
}

fn region_data(config: &Configuration) -> Result<Vec<RegionData<'_>>> {
    config
        .regions()
        .iter()
        .map(|r| {
            Ok(RegionData {
                id: &r.id,
                params: r.params,
                alphas: compute_alphas(&r.params).map_err(|e| e.in_region(&r.id))?,
            })
        })
        .collect()
}

fn counts(regions: &[RegionData<'_>], tol: f64) -> (usize, usize) {
    let k34: Vec<f64> = regions.iter().map(|r| r.params.k34()).collect();
    let alphas: Vec<f64> = regions
        .iter()
        .flat_map(|r| [r.alphas.alpha1, r.alphas.alpha2])
        .collect();
    (distinct_count(&k34, tol), distinct_count(&alphas, tol))
}

/// `Σ_{j: μ_j ≠ α} λ_j / (μ_j - α)` and the sum of absolute summands.
fn residue(terms: &[InputTerm], alpha: f64) -> (f64, f64) {
    terms
        .iter()
        .filter(|t| !is_resonant(t.mu, alpha))
        .fold((0.0, 0.0), |(s, m), t| {
            let q = t.lambda / (t.mu - alpha);
            (s + q, m + q.abs())
        })
}

/// Per region and input term: does the region qualify as a witness member for
/// `j0`, and with which margins.
fn member_ok(r: &RegionData<'_>, terms: &[InputTerm], j0: usize, tol: f64) -> Option<Margins> {
    let mu0 = terms[j0].mu;
    let k34 = r.params.k34();
    let shift = mu0 + k34;
    if shift.abs() <= tol * mu0.abs().max(k34).max(1.0) {
        return None;
    }
    let mut res_margin = f64::INFINITY;
    for alpha in [r.alphas.alpha1, r.alphas.alpha2] {
        if is_resonant(mu0, alpha) {
            continue;
        }
        let (s, scale) = residue(terms, alpha);
        if !(s.abs() > tol * scale) {
            return None;
        }
        res_margin = res_margin.min(s.abs());
    }
    Some(Margins {
        shift: shift.abs(),
        residue: res_margin,
        ..Margins::default()
    })
}

/// Searches, for every input term `j0`, three regions with pairwise distinct
/// `k3 + k4`, `α1` and `α2`, for which `μ_{j0} + k3 + k4 ≠ 0` and, on each
/// eigenvalue branch, either `μ_{j0} = α` or `Σ_{μ_j ≠ α} λ_j/(μ_j - α) ≠ 0`.
/// The search is exhaustive over region triples.
pub fn check_assumption_a(config: &Configuration, tol: f64) -> Result<RichnessReport> {
    let regions = region_data(config)?;
    let terms = config.input().terms();
    let (distinct_k34_count, distinct_alpha_count) = counts(&regions, tol);
    let mut report = RichnessReport {
        satisfied: false,
        distinct_k34_count,
        distinct_alpha_count,
        witnesses: Vec::new(),
        violations: Vec::new(),
        margins: Margins::default(),
    };
    let n = regions.len();
    if n < 3 {
        report
            .violations
            .push(format!("need at least 3 regions, have {n}"));
        return Ok(report);
    }

    for j0 in 0..terms.len() {
        let members: Vec<Option<Margins>> = regions
            .iter()
            .map(|r| member_ok(r, terms, j0, tol))
            .collect();
        let mut found = None;
        'search: for a in 0..n {
            let Some(ma) = members[a] else { continue };
            for b in a + 1..n {
                let Some(mb) = members[b] else { continue };
                if !pair_distinct(&regions[a], &regions[b], tol) {
                    continue;
                }
                for c in b + 1..n {
                    let Some(mc) = members[c] else { continue };
                    if pair_distinct(&regions[a], &regions[c], tol)
                        && pair_distinct(&regions[b], &regions[c], tol)
                    {
                        let triple = [&regions[a], &regions[b], &regions[c]];
                        let sep = triple_separations(&triple);
                        found = Some(([a, b, c], ma.min(mb).min(mc).min(sep)));
                        break 'search;
                    }
                }
            }
        }
        match found {
            Some((idx, margins)) => {
                report.margins = report.margins.min(margins);
                report.witnesses.push(Witness {
                    input_term: Some(j0),
                    regions: idx.iter().map(|&i| regions[i].id.to_owned()).collect(),
                });
            }
            None => report.violations.push(format!(
                "input term {j0} (mu={}): no region triple satisfies the witness conditions",
                terms[j0].mu
            )),
        }
    }
    report.satisfied = report.violations.is_empty();
    Ok(report)
}

/// k3+k4, α1 and α2 separated between two regions (branch-wise).
fn pair_distinct(a: &RegionData<'_>, b: &RegionData<'_>, tol: f64) -> bool {
    separated(a.params.k34(), b.params.k34(), tol)
        && separated(a.alphas.alpha1, b.alphas.alpha1, tol)
        && separated(a.alphas.alpha2, b.alphas.alpha2, tol)
}

fn triple_separations(regions: &[&RegionData<'_>]) -> Margins {
    let k34: Vec<f64> = regions.iter().map(|r| r.params.k34()).collect();
    let a1: Vec<f64> = regions.iter().map(|r| r.alphas.alpha1).collect();
    let a2: Vec<f64> = regions.iter().map(|r| r.alphas.alpha2).collect();
    Margins {
        k34_separation: min_separation(&k34),
        alpha_separation: min_separation(&a1).min(min_separation(&a2)),
        ..Margins::default()
    }
}

/// Any `k3 + k4` coincidence or any shared eigenvalue (across branches).
fn richness_conflict(a: &RegionData<'_>, b: &RegionData<'_>, tol: f64) -> bool {
    if !separated(a.params.k34(), b.params.k34(), tol) {
        return true;
    }
    let aa = [a.alphas.alpha1, a.alphas.alpha2];
    let bb = [b.alphas.alpha1, b.alphas.alpha2];
    aa.iter().any(|&x| bb.iter().any(|&y| !separated(x, y, tol)))
}

/// Sufficient condition: at least `p + 3` regions with pairwise distinct
/// `k3 + k4` whose `2p + 6` eigenvalues are jointly pairwise distinct.
pub fn check_region_richness(config: &Configuration, tol: f64) -> Result<RichnessReport> {
    let regions = region_data(config)?;
    let p = config.input().degree();
    let need = p + 3;
    let (distinct_k34_count, distinct_alpha_count) = counts(&regions, tol);
    let mut report = RichnessReport {
        satisfied: false,
        distinct_k34_count,
        distinct_alpha_count,
        witnesses: Vec::new(),
        violations: Vec::new(),
        margins: Margins::default(),
    };
    let n = regions.len();
    if n < need {
        report
            .violations
            .push(format!("need at least {need} regions for p={p}, have {n}"));
        return Ok(report);
    }

    let usable: Vec<bool> = regions
        .iter()
        .map(|r| separated(r.alphas.alpha1, r.alphas.alpha2, tol))
        .collect();
    let conflict: Vec<Vec<bool>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| a != b && richness_conflict(&regions[a], &regions[b], tol))
                .collect()
        })
        .collect();
    let mut chosen = Vec::with_capacity(need);
    if pick_independent(&conflict, &usable, need, 0, &mut chosen) {
        let subset: Vec<&RegionData<'_>> = chosen.iter().map(|&i| &regions[i]).collect();
        let k34: Vec<f64> = subset.iter().map(|r| r.params.k34()).collect();
        let alphas: Vec<f64> = subset
            .iter()
            .flat_map(|r| [r.alphas.alpha1, r.alphas.alpha2])
            .collect();
        report.margins = Margins {
            k34_separation: min_separation(&k34),
            alpha_separation: min_separation(&alphas),
            ..Margins::default()
        };
        report.witnesses.push(Witness {
            input_term: None,
            regions: subset.iter().map(|r| r.id.to_owned()).collect(),
        });
        report.satisfied = true;
    } else {
        report.violations.push(format!(
            "no {need} regions with pairwise distinct k3+k4 and {} jointly distinct eigenvalues",
            2 * need
        ));
    }
    Ok(report)
}

fn pick_independent(
    conflict: &[Vec<bool>],
    usable: &[bool],
    need: usize,
    start: usize,
    chosen: &mut Vec<usize>,
) -> bool {
    if chosen.len() == need {
        return true;
    }
    let n = conflict.len();
    if n - start < need - chosen.len() {
        return false;
    }
    for i in start..n {
        if !usable[i] || chosen.iter().any(|&c| conflict[c][i]) {
            continue;
        }
        chosen.push(i);
        if pick_independent(conflict, usable, need, i + 1, chosen) {
            return true;
        }
        chosen.pop();
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub equivalent: bool,
    /// `K1ⁱ(a) = ζ·K1ⁱ(b)` and `λ_j(b) = ζ·λ_j(a)`.
    pub zeta: Option<f64>,
    /// `reindexing[j]` is the term of `b` matched to term `j` of `a`.
    pub reindexing: Option<Vec<usize>>,
    pub max_param_deviation: f64,
    pub diagnostics: Vec<String>,
}

fn rel_dev(x: f64, y: f64) -> f64 {
    let scale = x.abs().max(y.abs());
    if scale == 0.0 {
        0.0
    } else {
        (x - y).abs() / scale
    }
}

/// Median; for an even count the geometric mean of the middle pair when both are
/// positive, which keeps `median(1/x) = 1/median(x)`.
fn scale_median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else if v[m - 1] > 0.0 && v[m] > 0.0 {
        (v[m - 1] * v[m]).sqrt()
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Decides whether `a` and `b` coincide up to one global scale `ζ` and a
/// re-indexing of the input terms.
pub fn equivalence_up_to_scale(a: &Configuration, b: &Configuration, tol: f64) -> EquivalenceReport {
    let mut report = EquivalenceReport {
        equivalent: false,
        zeta: None,
        reindexing: None,
        max_param_deviation: f64::INFINITY,
        diagnostics: Vec::new(),
    };
    if a.n_regions() != b.n_regions() {
        report.diagnostics.push(format!(
            "region counts differ: {} vs {}",
            a.n_regions(),
            b.n_regions()
        ));
        return report;
    }
    let mut pairs = Vec::with_capacity(a.n_regions());
    for ra in a.regions() {
        match b.region(&ra.id) {
            Some(rb) => pairs.push((ra, rb)),
            None => {
                report
                    .diagnostics
                    .push(format!("region `{}` missing from second configuration", ra.id));
                return report;
            }
        }
    }
    let (ta, tb) = (a.input().terms(), b.input().terms());
    if ta.len() != tb.len() {
        report.diagnostics.push(format!(
            "input degrees differ: {} vs {}",
            ta.len(),
            tb.len()
        ));
        return report;
    }
    // Both inputs are stored in descending-μ order, so sorted order is the match.
    let mut order_a: Vec<usize> = (0..ta.len()).collect();
    let mut order_b: Vec<usize> = (0..tb.len()).collect();
    order_a.sort_by(|&i, &j| ta[j].mu.total_cmp(&ta[i].mu));
    order_b.sort_by(|&i, &j| tb[j].mu.total_cmp(&tb[i].mu));
    let mut reindexing = vec![0; ta.len()];
    for (&ia, &ib) in order_a.iter().zip(&order_b) {
        reindexing[ia] = ib;
    }

    let mut k1_ratios = Vec::new();
    for (ra, rb) in &pairs {
        let (x, y) = (ra.params.k1, rb.params.k1);
        if x > 0.0 && y > 0.0 {
            k1_ratios.push(x / y);
        } else if (x == 0.0) != (y == 0.0) {
            report.diagnostics.push(format!(
                "region `{}`: K1 is zero in only one configuration",
                ra.id
            ));
        }
    }
    let zeta = if k1_ratios.is_empty() {
        scale_median(
            (0..ta.len())
                .map(|j| tb[reindexing[j]].lambda / ta[j].lambda)
                .collect(),
        )
    } else {
        scale_median(k1_ratios)
    };
    let Some(zeta) = zeta.filter(|z| z.is_finite() && *z != 0.0) else {
        report.diagnostics.push("no finite nonzero scale could be estimated".into());
        return report;
    };

    let mut worst = 0.0f64;
    let mut note = |what: String, dev: f64, diagnostics: &mut Vec<String>| {
        if dev > tol {
            diagnostics.push(format!("{what}: relative deviation {dev:.3e}"));
        }
        worst = worst.max(dev);
    };
    for (ra, rb) in &pairs {
        let (pa, pb) = (ra.params, rb.params);
        note(format!("region `{}` k2", ra.id), rel_dev(pa.k2, pb.k2), &mut report.diagnostics);
        note(format!("region `{}` k3", ra.id), rel_dev(pa.k3, pb.k3), &mut report.diagnostics);
        note(format!("region `{}` k4", ra.id), rel_dev(pa.k4, pb.k4), &mut report.diagnostics);
        note(
            format!("region `{}` K1 vs zeta*K1", ra.id),
            rel_dev(pa.k1, zeta * pb.k1),
            &mut report.diagnostics,
        );
    }
    for j in 0..ta.len() {
        let tj = tb[reindexing[j]];
        note(format!("input term {j} mu"), rel_dev(ta[j].mu, tj.mu), &mut report.diagnostics);
        note(
            format!("input term {j} lambda vs zeta*lambda"),
            rel_dev(tj.lambda, zeta * ta[j].lambda),
            &mut report.diagnostics,
        );
    }
    report.zeta = Some(zeta);
    report.reindexing = Some(reindexing);
    report.max_param_deviation = worst;
    report.equivalent = report.diagnostics.is_empty() && worst <= tol;
    report
}

/// Closed intervals for log-uniform sampling. `mu` bounds are negative and
/// sampled log-uniformly in `|μ|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingBounds {
    pub k1: (f64, f64),
    pub k2: (f64, f64),
    pub k3: (f64, f64),
    pub k4: (f64, f64),
    pub mu: (f64, f64),
    pub lambda: (f64, f64),
}

impl Default for SamplingBounds {
    fn default() -> Self {
        Self {
            k1: (0.05, 1.5),
            k2: (0.05, 1.0),
            k3: (0.02, 0.8),
            k4: (0.01, 0.5),
            mu: (-5.0, -0.01),
            lambda: (0.1, 10.0),
        }
    }
}

impl SamplingBounds {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("K1", self.k1),
            ("k2", self.k2),
            ("k3", self.k3),
            ("k4", self.k4),
            ("lambda", self.lambda),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} bounds must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
                )));
            }
        }
        let (lo, hi) = self.mu;
        if !(lo <= hi && hi < 0.0 && lo.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "mu bounds must satisfy lo <= hi < 0, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..=hi.ln()).exp()
}

/// Deterministic random configuration with region ids `r1..rn`. Degenerate
/// regions and coinciding exponents are redrawn.
pub fn sample_random_config(
    seed: u64,
    n: usize,
    p: usize,
    bounds: &SamplingBounds,
) -> Result<Configuration> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput(format!(
            "need n >= 1 and p >= 1, got n={n}, p={p}"
        )));
    }
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rejections = 0usize;
    let mut reject = || {
        rejections += 1;
        if rejections > MAX_REDRAWS {
            Err(Error::ExhaustedRedraws(MAX_REDRAWS))
        } else {
            Ok(())
        }
    };

    let mut regions = Vec::with_capacity(n);
    while regions.len() < n {
        let params = KineticParams {
            k1: log_uniform(&mut rng, bounds.k1),
            k2: log_uniform(&mut rng, bounds.k2),
            k3: log_uniform(&mut rng, bounds.k3),
            k4: log_uniform(&mut rng, bounds.k4),
        };
        if compute_alphas(&params).is_err() {
            reject()?;
            continue;
        }
        regions.push(Region {
            id: format!("r{}", regions.len() + 1),
            params,
        });
    }

    let mut terms: Vec<InputTerm> = Vec::with_capacity(p);
    let mag = (-bounds.mu.1, -bounds.mu.0);
    while terms.len() < p {
        let mu = -log_uniform(&mut rng, mag);
        let lambda = log_uniform(&mut rng, bounds.lambda);
        if terms.iter().any(|t| !separated(t.mu, mu, DEFAULT_TOL)) {
            reject()?;
            continue;
        }
        terms.push(InputTerm { lambda, mu });
    }
    Configuration::new(regions, PolyexpInput::new(terms)?)
}
