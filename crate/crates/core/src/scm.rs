//! Synthetic control: donor weights, predictor weights, paths and fit diagnostics.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::optim::{self, NelderMeadOptions};
use crate::panel::{build_predictor_matrix, Panel, PredictorData, PredictorSpec, YearRange, YearSeries};
use crate::simplex::{self, QpSolution};

/// Tolerance for the simplex check on weight vectors.
pub const SIMPLEX_TOL: f64 = 1e-8;

fn check_simplex(what: &str, x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Validation(format!("{what} is empty")));
    }
    if x.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Validation(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = x.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Validation(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Donor weights aligned to the pool order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorWeights {
    units: Vec<String>,
    weights: Vec<f64>,
}

impl DonorWeights {
    pub fn new(units: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if units.len() != weights.len() {
            return Err(Error::Shape(format!("{} donors but {} weights", units.len(), weights.len())));
        }
        check_simplex("donor weights", &weights)?;
        Ok(DonorWeights { units, weights })
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn values(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, unit: &str) -> Option<f64> {
        self.units.iter().position(|u| u == unit).map(|i| self.weights[i])
    }

    /// Donors with weight above `threshold`, in pool order.
    pub fn positive(&self, threshold: f64) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.units
            .iter()
            .zip(&self.weights)
            .filter(move |(_, w)| **w > threshold)
            .map(|(u, w)| (u.as_str(), *w))
    }
}

/// Diagonal of the predictor-importance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorWeights {
    predictors: Vec<String>,
    weights: Vec<f64>,
}

impl PredictorWeights {
    pub fn new(predictors: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if predictors.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} predictors but {} weights",
                predictors.len(),
                weights.len()
            )));
        }
        check_simplex("predictor weights", &weights)?;
        Ok(PredictorWeights { predictors, weights })
    }

    pub fn equal(predictors: Vec<String>) -> Self {
        let k = predictors.len().max(1);
        PredictorWeights { weights: vec![1.0 / k as f64; predictors.len()], predictors }
    }

    pub fn predictors(&self) -> &[String] {
        &self.predictors
    }

    pub fn values(&self) -> &[f64] {
        &self.weights
    }
}

/// One synthetic-control estimation task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmProblem {
    pub outcome: String,
    pub treated: String,
    pub donors: Vec<String>,
    pub predictors: Vec<PredictorSpec>,
    /// First treated year; the pre-window ends the year before.
    pub treatment_year: i32,
    /// Years over which paths and gaps are reported.
    pub sample: YearRange,
}

impl ScmProblem {
    pub fn pre_window(&self) -> Result<YearRange> {
        if self.treatment_year <= self.sample.start {
            return Err(Error::InvalidWindow(format!(
                "treatment year {} leaves no pre-treatment years in {}",
                self.treatment_year, self.sample
            )));
        }
        if self.treatment_year > self.sample.end {
            return Err(Error::InvalidWindow(format!(
                "treatment year {} leaves no post-treatment years in {}",
                self.treatment_year, self.sample
            )));
        }
        YearRange::new(self.sample.start, self.treatment_year - 1)
    }

    pub fn post_window(&self) -> Result<YearRange> {
        self.pre_window()?;
        YearRange::new(self.treatment_year, self.sample.end)
    }

    /// Same problem with a different treated unit and pool.
    pub fn with_roles(&self, treated: &str, donors: Vec<String>) -> Self {
        ScmProblem { treated: treated.to_string(), donors, ..self.clone() }
    }

    pub fn predictor_data(&self, panel: &Panel) -> Result<PredictorData> {
        let pre = self.pre_window()?;
        if !panel.years().contains_range(&self.sample) {
            return Err(Error::InvalidWindow(format!(
                "sample {} outside panel years {}",
                self.sample,
                panel.years()
            )));
        }
        build_predictor_matrix(panel, &self.predictors, &self.donors, &self.treated, &self.outcome, pre)
    }
}

/// Outer-search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Random starts in addition to the equal-weights start.
    pub starts: usize,
    pub seed: u64,
    pub max_evals: usize,
    /// Relative tolerance on pre-period MSPE.
    pub ftol: f64,
    /// Certified suboptimality of the inner problem, relative to its scale.
    pub inner_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { starts: 20, seed: 2014, max_evals: 4000, ftol: 1e-9, inner_tol: 1e-10 }
    }
}

/// Summary of one outer-search restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub start: usize,
    pub v: Vec<f64>,
    pub mspe: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Result of the nested optimisation on raw matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedSolution {
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    /// Pre-period outcome MSPE at the returned weights.
    pub mspe: f64,
    /// Inner objective at the returned weights.
    pub inner_objective: f64,
    /// Index into `trace` of the returned start.
    pub best_start: usize,
    pub converged: bool,
    pub trace: Vec<StartTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub predictor: String,
    pub treated: f64,
    pub synthetic: f64,
    pub pool_mean: f64,
}

/// A solved synthetic control with its paths and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmFit {
    pub treated: String,
    pub outcome: String,
    pub weights: DonorWeights,
    pub vweights: PredictorWeights,
    pub treatment_year: i32,
    pub actual: YearSeries,
    pub synthetic: YearSeries,
    pub gap: YearSeries,
    pub pre_rmspe: f64,
    pub post_rmspe: f64,
    pub inner_objective: f64,
    pub balance: Vec<BalanceRow>,
    pub converged: bool,
    pub seed: u64,
    pub trace: Vec<StartTrace>,
    pub warnings: Vec<String>,
}

impl ScmFit {
    pub fn pre_window(&self) -> YearRange {
        YearRange { start: self.actual.start, end: self.treatment_year - 1 }
    }

    pub fn post_window(&self) -> YearRange {
        YearRange { start: self.treatment_year, end: self.actual.end() }
    }

    /// RMSPE of the gap over `window`.
    pub fn rmspe_over(&self, window: YearRange) -> Result<f64> {
        rmspe(self.actual.window(window)?, self.synthetic.window(window)?)
    }

    /// Post/pre RMSPE ratio; `None` when the pre-period fit is exact.
    pub fn rmspe_ratio(&self) -> Option<f64> {
        (self.pre_rmspe > 0.0).then(|| self.post_rmspe / self.pre_rmspe)
    }
}

/// Root mean squared difference between two equally long series.
pub fn rmspe(actual: &[f64], synthetic: &[f64]) -> Result<f64> {
    if actual.is_empty() {
        return Err(Error::InvalidWindow("RMSPE over an empty window".into()));
    }
    if actual.len() != synthetic.len() {
        return Err(Error::Shape(format!("{} actual vs {} synthetic values", actual.len(), synthetic.len())));
    }
    let ss: f64 = actual.iter().zip(synthetic).map(|(a, s)| (a - s) * (a - s)).sum();
    Ok(math::sqrt(ss / actual.len() as f64))
}

/// `Σ_j w_j Y_j,t` for every year in `years`.
pub fn synthetic_path(weights: &DonorWeights, panel: &Panel, variable: &str, years: YearRange) -> Result<YearSeries> {
    let mut out = vec![0.0; years.len()];
    for (unit, &w) in weights.units().iter().zip(weights.values()) {
        let s = panel.series(unit, variable, years)?;
        for (o, y) in out.iter_mut().zip(s) {
            *o += w * y;
        }
    }
    Ok(YearSeries::new(years.start, out))
}

fn validate_inner(x1: &[f64], x0: &Matrix, v: &[f64]) -> Result<()> {
    if x0.cols() < 1 {
        return Err(Error::TooFewDonors { required: 1, available: 0 });
    }
    if x0.rows() != x1.len() || v.len() != x1.len() {
        return Err(Error::Shape(format!(
            "treated predictors {}, donor predictors {}x{}, predictor weights {}",
            x1.len(),
            x0.rows(),
            x0.cols(),
            v.len()
        )));
    }
    if x1.iter().chain(x0.as_slice()).chain(v).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("predictor data".into()));
    }
    Ok(())
}

/// `(X1 − X0 w)ᵀ diag(v) (X1 − X0 w)`.
pub fn inner_objective(x1: &[f64], x0: &Matrix, v: &[f64], w: &[f64]) -> f64 {
    let fit = x0.mul_vec(w);
    x1.iter().zip(&fit).zip(v).map(|((a, b), vi)| vi * (a - b) * (a - b)).sum()
}

/// Donor weights minimising the predictor discrepancy for fixed `v`.
pub fn solve_inner(x1: &[f64], x0: &Matrix, v: &[f64], tol: f64) -> Result<QpSolution> {
    validate_inner(x1, x0, v)?;
    check_simplex("predictor weights", v)?;
    let h = x0.weighted_gram(v);
    let vx1: Vec<f64> = x1.iter().zip(v).map(|(a, b)| a * b).collect();
    let b = x0.tr_mul_vec(&vx1);
    let c = linalg::dot(&vx1, x1);
    let mut sol = simplex::minimize(&h, &b, c, tol)?;
    let s: f64 = sol.w.iter().sum();
    for w in &mut sol.w {
        *w = w.max(0.0) / s;
    }
    sol.objective = inner_objective(x1, x0, v, &sol.w);
    Ok(sol)
}

/// Maps unconstrained coordinates to the simplex; the last logit is pinned at 0.
pub fn softmax_weights(theta: &[f64]) -> Vec<f64> {
    let m = theta.iter().copied().fold(0.0f64, f64::max);
    let mut v: Vec<f64> = theta.iter().map(|t| math::exp(t - m)).collect();
    v.push(math::exp(-m));
    let s: f64 = v.iter().sum();
    for x in &mut v {
        *x /= s;
    }
    v
}

fn logits(v: &[f64]) -> Vec<f64> {
    let last = math::ln(v[v.len() - 1].max(1e-300));
    v[..v.len() - 1].iter().map(|x| math::ln(x.max(1e-300)) - last).collect()
}

/// Pre-period MSPE of the outcome for the donor weights implied by `v`.
fn outer_value(data: &Inputs<'_>, v: &[f64], tol: f64) -> Option<(f64, QpSolution)> {
    let sol = solve_inner(data.x1, data.x0, v, tol).ok()?;
    let pred = data.z0.mul_vec(&sol.w);
    let t = data.z1.len() as f64;
    let mspe = data.z1.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / t;
    Some((mspe, sol))
}

struct Inputs<'a> {
    x1: &'a [f64],
    x0: &'a Matrix,
    z1: &'a [f64],
    z0: &'a Matrix,
}

/// Initial predictor weights: equal weights, then Dirichlet(1) draws.
pub fn starting_points(k: usize, starts: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![vec![1.0 / k as f64; k]];
    for _ in 0..starts {
        let e: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
        let s: f64 = e.iter().sum();
        out.push(e.into_iter().map(|x: f64| x / s).collect());
    }
    out
}

/// Chooses `v` to minimise pre-period outcome MSPE, with multistart
/// Nelder–Mead over softmax-parameterised weights.
pub fn solve_nested<E: Executor>(
    x1: &[f64],
    x0: &Matrix,
    z1: &[f64],
    z0: &Matrix,
    opts: &SolverOptions,
    exec: &E,
) -> Result<NestedSolution> {
    let k = x1.len();
    if k == 0 {
        return Err(Error::Validation("at least one predictor required".into()));
    }
    validate_inner(x1, x0, &vec![1.0 / k as f64; k])?;
    if z0.rows() != z1.len() || z0.cols() != x0.cols() {
        return Err(Error::Shape("outcome matrices do not match predictor matrices".into()));
    }
    if z1.is_empty() {
        return Err(Error::InvalidWindow("empty pre-treatment window".into()));
    }
    if z1.iter().chain(z0.as_slice()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("outcome data".into()));
    }
    let data = Inputs { x1, x0, z1, z0 };
    let nm = NelderMeadOptions { max_evals: opts.max_evals, ftol: opts.ftol, ..Default::default() };
    let starts = starting_points(k, opts.starts, opts.seed);
    let tol = opts.inner_tol;
    let runs: Vec<StartTrace> = exec.map(&starts, |v0| {
        let m = optim::nelder_mead(
            |theta| outer_value(&data, &softmax_weights(theta), tol).map_or(f64::INFINITY, |r| r.0),
            &logits(v0),
            &nm,
        );
        StartTrace { start: 0, v: softmax_weights(&m.x), mspe: m.f, evals: m.evals, converged: m.converged }
    });
    let trace: Vec<StartTrace> =
        runs.into_iter().enumerate().map(|(i, mut t)| {
            t.start = i;
            t
        }).collect();
    let mut best = 0;
    for (i, t) in trace.iter().enumerate() {
        let b = trace[best].mspe;
        if t.mspe < b - 1e-9 * b.abs() {
            best = i;
        }
    }
    let v = trace[best].v.clone();
    let (mspe, sol) = outer_value(&data, &v, tol)
        .ok_or_else(|| Error::Degenerate("inner problem failed at the selected predictor weights".into()))?;
    Ok(NestedSolution {
        w: sol.w,
        v,
        mspe,
        inner_objective: sol.objective,
        best_start: best,
        converged: trace.iter().any(|t| t.converged),
        trace,
    })
}

fn duplicate_warnings(data: &PredictorData, w: &[f64]) -> Vec<String> {
    let j = data.donors.len();
    let col = |c: usize| -> Vec<f64> { data.x0.column(c).into_iter().chain(data.z0.column(c)).collect() };
    let mut out = Vec::new();
    for a in 0..j {
        for b in a + 1..j {
            if col(a) == col(b) && w[a] + w[b] > 0.0 {
                out.push(format!(
                    "donors `{}` and `{}` are identical; only their combined weight {:.6} is identified",
                    data.donors[a],
                    data.donors[b],
                    w[a] + w[b]
                ));
            }
        }
    }
    out
}

/// Assembles a fit from solved weights.
pub fn assemble_fit(
    panel: &Panel,
    problem: &ScmProblem,
    data: &PredictorData,
    solution: &NestedSolution,
    seed: u64,
) -> Result<ScmFit> {
    let weights = DonorWeights::new(data.donors.clone(), solution.w.clone())?;
    let vweights = PredictorWeights::new(data.predictors.clone(), solution.v.clone())?;
    let sample = problem.sample;
    let actual = panel.year_series(&problem.treated, &problem.outcome, sample)?;
    let synthetic = synthetic_path(&weights, panel, &problem.outcome, sample)?;
    let gap = YearSeries::new(
        sample.start,
        actual.values.iter().zip(&synthetic.values).map(|(a, s)| a - s).collect(),
    );
    let pre = problem.pre_window()?;
    let post = problem.post_window()?;
    let pre_rmspe = rmspe(actual.window(pre)?, synthetic.window(pre)?)?;
    let post_rmspe = rmspe(actual.window(post)?, synthetic.window(post)?)?;
    let j = data.donors.len() as f64;
    let balance = data
        .predictors
        .iter()
        .enumerate()
        .map(|(i, p)| BalanceRow {
            predictor: p.clone(),
            treated: data.raw_x1[i],
            synthetic: linalg::dot(data.raw_x0.row(i), &solution.w),
            pool_mean: data.raw_x0.row(i).iter().sum::<f64>() / j,
        })
        .collect();
    Ok(ScmFit {
        treated: problem.treated.clone(),
        outcome: problem.outcome.clone(),
        weights,
        vweights,
        treatment_year: problem.treatment_year,
        actual,
        synthetic,
        gap,
        pre_rmspe,
        post_rmspe,
        inner_objective: solution.inner_objective,
        balance,
        converged: solution.converged,
        seed,
        trace: solution.trace.clone(),
        warnings: duplicate_warnings(data, &solution.w),
    })
}

/// Full estimation of one problem.
///
/// Fails with [`Error::NonConvergence`] (carrying the best incumbent) when no
/// restart met the tolerance within its budget.
pub fn fit(panel: &Panel, problem: &ScmProblem, opts: &SolverOptions) -> Result<ScmFit> {
    fit_with(panel, problem, opts, &Sequential)
}

/// [`fit`] with restarts dispatched through `exec`.
pub fn fit_with<E: Executor>(panel: &Panel, problem: &ScmProblem, opts: &SolverOptions, exec: &E) -> Result<ScmFit> {
    let data = problem.predictor_data(panel)?;
    let sol = solve_nested(&data.x1, &data.x0, &data.z1, &data.z0, opts, exec)?;
    let fit = assemble_fit(panel, problem, &data, &sol, opts.seed)?;
    if !fit.converged {
        return Err(Error::NonConvergence { best: Box::new(fit) });
    }
    Ok(fit)
}

/// Estimation with predictor weights held fixed (no outer search).
pub fn fit_fixed_v(panel: &Panel, problem: &ScmProblem, v: &[f64], opts: &SolverOptions) -> Result<ScmFit> {
    let data = problem.predictor_data(panel)?;
    let inner = solve_inner(&data.x1, &data.x0, v, opts.inner_tol)?;
    let pred = data.z0.mul_vec(&inner.w);
    let mspe = data.z1.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / data.z1.len() as f64;
    let sol = NestedSolution {
        w: inner.w,
        v: v.to_vec(),
        mspe,
        inner_objective: inner.objective,
        best_start: 0,
        converged: true,
        trace: Vec::new(),
    };
    assemble_fit(panel, problem, &data, &sol, opts.seed)
}

/// Fit whose non-convergence is tolerated: returns the best incumbent.
pub fn fit_or_best<E: Executor>(panel: &Panel, problem: &ScmProblem, opts: &SolverOptions, exec: &E) -> Result<ScmFit> {
    match fit_with(panel, problem, opts, exec) {
        Err(Error::NonConvergence { best }) => Ok(*best),
        other => other,
    }
}
