//! Placebo inference, leave-one-out and train/validation selection.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::panel::{build_predictor_matrix, Panel, YearRange};
use crate::scm::{self, assemble_fit, solve_inner, DonorWeights, NestedSolution, ScmFit, ScmProblem, SolverOptions};

/// Re-estimates with treatment moved to `placebo_year`, which must lie
/// strictly inside the original pre-treatment window.
pub fn in_time_placebo(panel: &Panel, problem: &ScmProblem, placebo_year: i32, opts: &SolverOptions) -> Result<ScmFit> {
    let problem = in_time_problem(problem, placebo_year)?;
    scm::fit_or_best(panel, &problem, opts, &Sequential)
}

/// The problem with treatment reassigned to `placebo_year`.
pub fn in_time_problem(problem: &ScmProblem, placebo_year: i32) -> Result<ScmProblem> {
    let pre = problem.pre_window()?;
    if placebo_year <= pre.start || placebo_year > pre.end {
        return Err(Error::InvalidWindow(format!(
            "placebo year {placebo_year} must lie strictly inside the pre-treatment window {pre}"
        )));
    }
    Ok(ScmProblem { treatment_year: placebo_year, ..problem.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredPlacebo {
    pub unit: String,
    pub pre_rmspe: f64,
}

/// Fits with treatment reassigned to each donor in turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboEnsemble {
    pub treated: ScmFit,
    /// Every placebo fit, keyed by unit.
    pub placebos: BTreeMap<String, ScmFit>,
    pub filter_multiplier: f64,
    /// Placebos with pre-RMSPE above this are left out of inference.
    pub threshold: f64,
    pub filtered: Vec<FilteredPlacebo>,
    pub warnings: Vec<String>,
}

impl PlaceboEnsemble {
    /// Placebos that pass the pre-fit filter, in unit order.
    pub fn survivors(&self) -> impl Iterator<Item = (&String, &ScmFit)> {
        self.placebos.iter().filter(move |(_, f)| f.pre_rmspe <= self.threshold)
    }

    pub fn survivor_count(&self) -> usize {
        self.survivors().count()
    }
}

/// Runs one placebo per donor. The true treated unit takes the donor's place
/// in each placebo pool.
pub fn in_space_placebos<E: Executor>(
    panel: &Panel,
    problem: &ScmProblem,
    treated_fit: &ScmFit,
    filter_multiplier: f64,
    opts: &SolverOptions,
    exec: &E,
) -> Result<PlaceboEnsemble> {
    if !(filter_multiplier > 0.0) {
        return Err(Error::Validation(format!("filter multiplier must be positive, got {filter_multiplier}")));
    }
    let jobs: Vec<ScmProblem> = problem
        .donors
        .iter()
        .map(|d| {
            let pool = problem
                .donors
                .iter()
                .map(|u| if u == d { problem.treated.clone() } else { u.clone() })
                .collect();
            problem.with_roles(d, pool)
        })
        .collect();
    let results = exec.map(&jobs, |p| scm::fit_with(panel, p, opts, &Sequential));
    let mut placebos = BTreeMap::new();
    let mut warnings = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        let fit = match r {
            Ok(f) => f,
            Err(Error::NonConvergence { best }) => {
                warnings.push(format!("placebo `{}` did not converge; best incumbent kept", job.treated));
                *best
            }
            Err(e) => return Err(e),
        };
        placebos.insert(job.treated.clone(), fit);
    }
    let threshold = filter_multiplier * treated_fit.pre_rmspe;
    let filtered: Vec<FilteredPlacebo> = placebos
        .iter()
        .filter(|(_, f)| f.pre_rmspe > threshold)
        .map(|(u, f)| FilteredPlacebo { unit: u.clone(), pre_rmspe: f.pre_rmspe })
        .collect();
    let ensemble = PlaceboEnsemble {
        treated: treated_fit.clone(),
        placebos,
        filter_multiplier,
        threshold,
        filtered,
        warnings,
    };
    let n = ensemble.survivor_count();
    if n < 2 {
        return Err(Error::TooFewPlacebos { required: 2, available: n });
    }
    Ok(ensemble)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub unit: String,
    pub treated: bool,
    pub pre_rmspe: f64,
    pub post_rmspe: f64,
    pub ratio: f64,
    /// 1 is the largest ratio.
    pub rank: usize,
    /// Left out of gap-based inference by the pre-fit filter.
    pub filtered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioTable {
    /// Sorted by descending ratio; ties keep unit order.
    pub rows: Vec<RatioRow>,
    pub treated_rank: usize,
    /// `treated_rank / rows`: share of units with a ratio at least as large.
    pub pvalue: f64,
    /// Units whose pre-period fit is exact, so the ratio is undefined.
    pub undefined: Vec<String>,
}

/// Post/pre RMSPE ratios for the treated unit and every placebo.
pub fn rmspe_ratios(ensemble: &PlaceboEnsemble) -> Result<RatioTable> {
    let mut rows = Vec::new();
    let mut undefined = Vec::new();
    let entries = core::iter::once((&ensemble.treated.treated, &ensemble.treated, true))
        .chain(ensemble.placebos.iter().map(|(u, f)| (u, f, false)));
    for (unit, fit, treated) in entries {
        match fit.rmspe_ratio() {
            Some(ratio) => rows.push(RatioRow {
                unit: unit.clone(),
                treated,
                pre_rmspe: fit.pre_rmspe,
                post_rmspe: fit.post_rmspe,
                ratio,
                rank: 0,
                filtered: !treated && fit.pre_rmspe > ensemble.threshold,
            }),
            None => undefined.push(unit.clone()),
        }
    }
    if !rows.iter().any(|r| r.treated) {
        return Err(Error::Degenerate("treated pre-period fit is exact; RMSPE ratio undefined".into()));
    }
    rows.sort_by(|a, b| b.ratio.total_cmp(&a.ratio));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    let treated_ratio = rows.iter().find(|r| r.treated).map(|r| r.ratio).unwrap_or(0.0);
    // Rank by "at least as large", so ties do not flatter the treated unit.
    let at_least = rows.iter().filter(|r| r.ratio >= treated_ratio).count();
    let treated_rank = at_least;
    Ok(RatioTable { pvalue: at_least as f64 / rows.len() as f64, treated_rank, rows, undefined })
}

/// `p_t = (1 + #{u : |gap_u,t| ≥ |gap_treated,t|}) / (1 + N)` for each `t`.
pub fn permutation_pvalues(treated: &[f64], placebos: &[&[f64]]) -> Vec<f64> {
    let n = placebos.len() as f64;
    treated
        .iter()
        .enumerate()
        .map(|(t, g)| {
            let hits = placebos.iter().filter(|p| p[t].abs() >= g.abs()).count() as f64;
            (1.0 + hits) / (1.0 + n)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueSeries {
    pub years: Vec<i32>,
    pub pvalues: Vec<f64>,
    /// Treated gap minus the mean surviving placebo gap.
    pub excess_gap: Vec<f64>,
    pub placebos: usize,
}

/// Per-year permutation p-values over the post-treatment window.
pub fn pvalues(ensemble: &PlaceboEnsemble) -> Result<PValueSeries> {
    pvalues_over(ensemble, ensemble.treated.post_window())
}

/// Per-year permutation p-values over `window`.
pub fn pvalues_over(ensemble: &PlaceboEnsemble, window: YearRange) -> Result<PValueSeries> {
    let survivors: Vec<&ScmFit> = ensemble.survivors().map(|(_, f)| f).collect();
    if survivors.len() < 2 {
        return Err(Error::TooFewPlacebos { required: 2, available: survivors.len() });
    }
    let treated = ensemble.treated.gap.window(window)?;
    let gaps: Vec<&[f64]> = survivors.iter().map(|f| f.gap.window(window)).collect::<Result<_>>()?;
    let n = gaps.len() as f64;
    let excess_gap = (0..treated.len())
        .map(|t| treated[t] - gaps.iter().map(|g| g[t]).sum::<f64>() / n)
        .collect();
    Ok(PValueSeries {
        years: window.iter().collect(),
        pvalues: permutation_pvalues(treated, &gaps),
        excess_gap,
        placebos: gaps.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jackknife {
    pub fits: BTreeMap<String, ScmFit>,
    /// Largest absolute difference from the benchmark synthetic path.
    pub max_deviation: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

/// Donors with weight above this count as positively weighted.
pub const POSITIVE_WEIGHT: f64 = 1e-6;

/// Re-estimates once per positively weighted donor with that donor removed.
pub fn jackknife<E: Executor>(
    panel: &Panel,
    problem: &ScmProblem,
    benchmark: &ScmFit,
    opts: &SolverOptions,
    exec: &E,
) -> Result<Jackknife> {
    let dropped: Vec<String> = benchmark.weights.positive(POSITIVE_WEIGHT).map(|(u, _)| u.to_string()).collect();
    let jobs: Vec<(String, ScmProblem)> = dropped
        .iter()
        .map(|d| {
            let pool: Vec<String> = problem.donors.iter().filter(|u| *u != d).cloned().collect();
            (d.clone(), problem.with_roles(&problem.treated, pool))
        })
        .collect();
    if let Some((_, p)) = jobs.iter().find(|(_, p)| p.donors.len() < 2) {
        return Err(Error::TooFewDonors { required: 2, available: p.donors.len() });
    }
    let results = exec.map(&jobs, |(_, p)| scm::fit_with(panel, p, opts, &Sequential));
    let mut fits = BTreeMap::new();
    let mut max_deviation = BTreeMap::new();
    let mut warnings = Vec::new();
    for ((unit, _), r) in jobs.into_iter().zip(results) {
        let fit = match r {
            Ok(f) => f,
            Err(Error::NonConvergence { best }) => {
                warnings.push(format!("leave-out `{unit}` did not converge; best incumbent kept"));
                *best
            }
            Err(e) => return Err(e),
        };
        let dev = fit
            .synthetic
            .values
            .iter()
            .zip(&benchmark.synthetic.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        max_deviation.insert(unit.clone(), dev);
        fits.insert(unit, fit);
    }
    Ok(Jackknife { fits, max_deviation, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub start: usize,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub train_rmspe: f64,
    pub validation_rmspe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub train: YearRange,
    pub validate: YearRange,
    pub weights: DonorWeights,
    pub v: Vec<f64>,
    pub validation_rmspe: f64,
    pub chosen: usize,
    pub candidates: Vec<Candidate>,
    /// Paths and diagnostics of the chosen weights over the full sample.
    pub fit: ScmFit,
}

/// Chooses predictor weights by validation error.
///
/// Predictors are aggregated over `train` and the outer search fits training
/// outcomes; every restart's incumbent is then scored on `validate` and the
/// best (first on ties) is returned.
pub fn cross_validate<E: Executor>(
    panel: &Panel,
    problem: &ScmProblem,
    train: YearRange,
    validate: YearRange,
    opts: &SolverOptions,
    exec: &E,
) -> Result<CrossValidation> {
    let pre = problem.pre_window()?;
    if train.overlaps(&validate) {
        return Err(Error::InvalidWindow(format!("training {train} and validation {validate} overlap")));
    }
    if train.end >= validate.start {
        return Err(Error::InvalidWindow(format!("training {train} must precede validation {validate}")));
    }
    if !pre.contains_range(&train) || !pre.contains_range(&validate) {
        return Err(Error::InvalidWindow(format!(
            "training {train} and validation {validate} must lie in the pre-treatment window {pre}"
        )));
    }
    let data = build_predictor_matrix(panel, &problem.predictors, &problem.donors, &problem.treated, &problem.outcome, train)?;
    let nested = scm::solve_nested(&data.x1, &data.x0, &data.z1, &data.z0, opts, exec)?;
    let actual = panel.series(&problem.treated, &problem.outcome, validate)?;
    let donor_val: Vec<Vec<f64>> =
        problem.donors.iter().map(|d| panel.series(d, &problem.outcome, validate)).collect::<Result<_>>()?;
    let mut candidates = Vec::with_capacity(nested.trace.len());
    for t in &nested.trace {
        let inner = solve_inner(&data.x1, &data.x0, &t.v, opts.inner_tol)?;
        let synth: Vec<f64> = (0..actual.len())
            .map(|i| donor_val.iter().zip(&inner.w).map(|(d, w)| w * d[i]).sum())
            .collect();
        candidates.push(Candidate {
            start: t.start,
            v: t.v.clone(),
            w: inner.w,
            train_rmspe: crate::math::sqrt(t.mspe),
            validation_rmspe: scm::rmspe(&actual, &synth)?,
        });
    }
    let mut chosen = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.validation_rmspe < candidates[chosen].validation_rmspe {
            chosen = i;
        }
    }
    let c = &candidates[chosen];
    let sol = NestedSolution {
        w: c.w.clone(),
        v: c.v.clone(),
        mspe: c.train_rmspe * c.train_rmspe,
        inner_objective: scm::inner_objective(&data.x1, &data.x0, &c.v, &c.w),
        best_start: c.start,
        converged: nested.converged,
        trace: nested.trace.clone(),
    };
    let fit = assemble_fit(panel, problem, &data, &sol, opts.seed)?;
    Ok(CrossValidation {
        train,
        validate,
        weights: fit.weights.clone(),
        v: c.v.clone(),
        validation_rmspe: c.validation_rmspe,
        chosen,
        candidates,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn pvalue_rank_arithmetic() {
        let placebos: Vec<Vec<f64>> = (1..=9).map(|i| vec![i as f64]).collect();
        let refs: Vec<&[f64]> = placebos.iter().map(|v| v.as_slice()).collect();
        assert_eq!(permutation_pvalues(&[10.0], &refs), vec![0.1]);
        assert_eq!(permutation_pvalues(&[0.0], &refs), vec![1.0]);
        assert_eq!(permutation_pvalues(&[-10.0], &refs), vec![0.1]);
    }
}
