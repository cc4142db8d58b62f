//! Bayesian structural time-series counterfactuals.
//!
//! The treated outcome (standardized on the pre-period) follows
//!
//! ```text
//! y_t     = μ_t + x_tᵀ β + ε_t,        ε_t ~ N(0, σ²)
//! μ_{t+1} = μ_t + δ_t + η_t,           η_t ~ N(0, σ²_level)
//! δ_{t+1} = δ_t + ζ_t,                 ζ_t ~ N(0, σ²_slope)   (local linear trend only)
//! ```
//!
//! with a spike-and-slab prior on β over standardized control series. The
//! Gibbs sampler alternates forward-filter backward-sample state draws,
//! inverse-gamma variance draws and stochastic search over the regressors.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::stats;

/// Smallest variance a draw may take.
const VAR_FLOOR: f64 = 1e-12;
const VAR_CEIL: f64 = 1e12;

/// Linear Gaussian state-space model with a `D`-dimensional state observed
/// through its first coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateModel<const D: usize> {
    pub transition: [[f64; D]; D],
    /// Diagonal state-noise variances.
    pub state_var: [f64; D],
    pub obs_var: f64,
    pub initial_mean: [f64; D],
    pub initial_cov: [[f64; D]; D],
}

impl StateModel<1> {
    pub fn local_level(obs_var: f64, level_var: f64, a1: f64, p1: f64) -> Self {
        StateModel {
            transition: [[1.0]],
            state_var: [level_var],
            obs_var,
            initial_mean: [a1],
            initial_cov: [[p1]],
        }
    }
}

impl StateModel<2> {
    pub fn local_linear(obs_var: f64, level_var: f64, slope_var: f64, a1: [f64; 2], p1: [[f64; 2]; 2]) -> Self {
        StateModel {
            transition: [[1.0, 1.0], [0.0, 1.0]],
            state_var: [level_var, slope_var],
            obs_var,
            initial_mean: a1,
            initial_cov: p1,
        }
    }
}

type Mat<const D: usize> = [[f64; D]; D];

fn mat_mul<const D: usize>(a: &Mat<D>, b: &Mat<D>) -> Mat<D> {
    let mut c = [[0.0; D]; D];
    for i in 0..D {
        for j in 0..D {
            c[i][j] = (0..D).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn transpose<const D: usize>(a: &Mat<D>) -> Mat<D> {
    let mut t = [[0.0; D]; D];
    for i in 0..D {
        for j in 0..D {
            t[i][j] = a[j][i];
        }
    }
    t
}

fn mat_vec<const D: usize>(a: &Mat<D>, x: &[f64; D]) -> [f64; D] {
    let mut y = [0.0; D];
    for i in 0..D {
        y[i] = (0..D).map(|k| a[i][k] * x[k]).sum();
    }
    y
}

fn symmetrize<const D: usize>(a: &mut Mat<D>) {
    for i in 0..D {
        for j in 0..i {
            let m = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = m;
            a[j][i] = m;
        }
    }
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
fn inverse<const D: usize>(a: &Mat<D>) -> Option<Mat<D>> {
    let mut m = *a;
    let mut inv = [[0.0; D]; D];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for c in 0..D {
        let p = (c..D).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs()))?;
        if m[p][c].abs() < 1e-300 {
            return None;
        }
        m.swap(c, p);
        inv.swap(c, p);
        let d = m[c][c];
        for j in 0..D {
            m[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..D {
            if r != c {
                let f = m[r][c];
                for j in 0..D {
                    m[r][j] -= f * m[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    Some(inv)
}

/// Draws from `N(mean, cov)`; negative pivots from round-off are treated as zero.
fn sample_mvn<const D: usize, R: Rng + ?Sized>(mean: &[f64; D], cov: &Mat<D>, rng: &mut R) -> [f64; D] {
    let mut l = [[0.0; D]; D];
    for j in 0..D {
        let d = cov[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        l[j][j] = if d > 0.0 { math::sqrt(d) } else { 0.0 };
        for i in j + 1..D {
            let s = cov[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = if l[j][j] > 0.0 { s / l[j][j] } else { 0.0 };
        }
    }
    let z: [f64; D] = core::array::from_fn(|_| StandardNormal.sample(rng));
    let mut x = *mean;
    for i in 0..D {
        for k in 0..=i {
            x[i] += l[i][k] * z[k];
        }
    }
    x
}

/// Kalman filter output. `pred_*[t]` is the one-step prediction of state `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered<const D: usize> {
    pub means: Vec<[f64; D]>,
    pub covs: Vec<Mat<D>>,
    pub pred_means: Vec<[f64; D]>,
    pub pred_covs: Vec<Mat<D>>,
    pub log_likelihood: f64,
}

pub fn kalman_filter<const D: usize>(model: &StateModel<D>, y: &[f64]) -> Filtered<D> {
    let n = y.len();
    let tt = model.transition;
    let ttt = transpose(&tt);
    let mut out = Filtered {
        means: Vec::with_capacity(n),
        covs: Vec::with_capacity(n),
        pred_means: Vec::with_capacity(n),
        pred_covs: Vec::with_capacity(n),
        log_likelihood: 0.0,
    };
    let mut a = model.initial_mean;
    let mut p = model.initial_cov;
    for &yt in y {
        out.pred_means.push(a);
        out.pred_covs.push(p);
        let f = p[0][0] + model.obs_var;
        let v = yt - a[0];
        out.log_likelihood -= 0.5 * (math::ln(2.0 * core::f64::consts::PI * f) + v * v / f);
        let k: [f64; D] = core::array::from_fn(|i| p[i][0] / f);
        let mut m = a;
        let mut c = p;
        for i in 0..D {
            m[i] += k[i] * v;
            for j in 0..D {
                c[i][j] -= k[i] * p[0][j];
            }
        }
        symmetrize(&mut c);
        out.means.push(m);
        out.covs.push(c);
        a = mat_vec(&tt, &m);
        p = mat_mul(&mat_mul(&tt, &c), &ttt);
        for i in 0..D {
            p[i][i] += model.state_var[i];
        }
        symmetrize(&mut p);
    }
    out
}

/// Forward-filter backward-sample: one joint draw of the states given `y`.
/// Also returns the log-likelihood.
pub fn ffbs<const D: usize, R: Rng + ?Sized>(model: &StateModel<D>, y: &[f64], rng: &mut R) -> (Vec<[f64; D]>, f64) {
    let f = kalman_filter(model, y);
    let n = y.len();
    let mut states = vec![[0.0; D]; n];
    if n == 0 {
        return (states, f.log_likelihood);
    }
    states[n - 1] = sample_mvn(&f.means[n - 1], &f.covs[n - 1], rng);
    let ttt = transpose(&model.transition);
    for t in (0..n - 1).rev() {
        let c = &f.covs[t];
        let gain = match inverse(&f.pred_covs[t + 1]) {
            Some(pinv) => mat_mul(&mat_mul(c, &ttt), &pinv),
            None => [[0.0; D]; D],
        };
        let diff: [f64; D] = core::array::from_fn(|i| states[t + 1][i] - f.pred_means[t + 1][i]);
        let shift = mat_vec(&gain, &diff);
        let mean: [f64; D] = core::array::from_fn(|i| f.means[t][i] + shift[i]);
        // cov = C − G T C
        let gtc = mat_mul(&mat_mul(&gain, &model.transition), c);
        let mut cov = *c;
        for i in 0..D {
            for j in 0..D {
                cov[i][j] -= gtc[i][j];
            }
        }
        symmetrize(&mut cov);
        states[t] = sample_mvn(&mean, &cov, rng);
    }
    (states, f.log_likelihood)
}

/// Inverse-gamma draw computed on the log scale so tiny shapes do not overflow.
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let log_g = if shape < 1.0 {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        math::ln(g) + math::ln(u) / shape
    } else {
        let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
        math::ln(g)
    };
    math::exp(math::ln(scale) - log_g).clamp(VAR_FLOOR, VAR_CEIL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendKind {
    LocalLevel,
    LocalLinear,
}

/// Prior hyperparameters. Unset values take data-dependent defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    /// Prior inclusion probability for every regressor; default
    /// `min(0.5, expected_size / J)`.
    pub inclusion_prob: Option<f64>,
    pub expected_size: f64,
    /// Zellner g; default the pre-period length.
    pub g: Option<f64>,
    /// Inverse-gamma shape for every variance.
    pub var_shape: f64,
    /// Inverse-gamma scale as a fraction of the standardized sample variance.
    pub var_scale: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors { inclusion_prob: None, expected_size: 3.0, g: None, var_shape: 0.01, var_scale: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BstsSpec {
    pub trend: TrendKind,
    pub priors: Priors,
    /// Iterations per chain including burn-in.
    pub draws: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub seed: u64,
}

impl Default for BstsSpec {
    fn default() -> Self {
        BstsSpec {
            trend: TrendKind::LocalLinear,
            priors: Priors::default(),
            draws: 10_000,
            burn_in: 2_000,
            chains: 1,
            seed: 2014,
        }
    }
}

impl BstsSpec {
    pub fn validate(&self) -> Result<()> {
        if self.draws <= self.burn_in {
            return Err(Error::Validation(format!(
                "draws ({}) must exceed burn-in ({})",
                self.draws, self.burn_in
            )));
        }
        if self.chains == 0 {
            return Err(Error::Validation("at least one chain required".into()));
        }
        let p = &self.priors;
        if !(p.var_shape > 0.0 && p.var_scale > 0.0 && p.expected_size > 0.0) {
            return Err(Error::Validation("prior hyperparameters must be positive".into()));
        }
        if let Some(pi) = p.inclusion_prob {
            if !(pi > 0.0 && pi < 1.0) {
                return Err(Error::Validation(format!("inclusion probability {pi} outside (0, 1)")));
            }
        }
        if let Some(g) = p.g {
            if !(g > 0.0) {
                return Err(Error::Validation("Zellner g must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Control series with names; rows are years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub names: Vec<String>,
    pub values: Matrix,
}

impl Controls {
    pub fn none(rows: usize) -> Self {
        Controls { names: Vec::new(), values: Matrix::zeros(rows, 0) }
    }
}

/// One retained Gibbs draw on the standardized scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub beta: Vec<f64>,
    pub obs_var: f64,
    pub level_var: f64,
    pub slope_var: f64,
    /// State at the last pre-period year: level, then slope (zero for local level).
    pub last_state: [f64; 2],
    /// Level at every pre-period year.
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostics {
    pub parameter: String,
    pub ess: f64,
    pub rhat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BstsFit {
    pub spec: BstsSpec,
    pub y_mean: f64,
    pub y_scale: f64,
    /// Controls entering the regression (zero-variance ones are dropped).
    pub used_controls: Vec<String>,
    pub dropped_controls: Vec<String>,
    pub control_mean: Vec<f64>,
    pub control_scale: Vec<f64>,
    /// Column of the input control matrix for each used control.
    pub control_index: Vec<usize>,
    pub inclusion_prob: f64,
    pub g: f64,
    pub draws: Vec<Draw>,
    pub inclusion: Vec<f64>,
    pub diagnostics: Vec<ParameterDiagnostics>,
    pub warnings: Vec<String>,
}

struct Chain<'a> {
    y: &'a [f64],
    x: &'a Matrix,
    xtx: Matrix,
    trend: TrendKind,
    pi: f64,
    g: f64,
    shape: f64,
    scale: f64,
}

struct ChainOutput {
    draws: Vec<Draw>,
    included: Vec<Vec<bool>>,
}

impl Chain<'_> {
    fn log_marginal(&self, gamma: &[bool], xty: &[f64], sigma2: f64) -> Option<f64> {
        let idx: Vec<usize> = (0..gamma.len()).filter(|&j| gamma[j]).collect();
        let q = idx.len() as f64;
        let log_prior = q * math::ln(self.pi) + (gamma.len() as f64 - q) * math::ln(1.0 - self.pi);
        if idx.is_empty() {
            return Some(log_prior);
        }
        let (l, b) = self.subset_factor(&idx, xty)?;
        let z = linalg::forward_sub(&l, &b);
        let quad = linalg::dot(&z, &z);
        let shrink = self.g / (1.0 + self.g);
        Some(log_prior - 0.5 * q * math::ln(1.0 + self.g) + shrink * quad / (2.0 * sigma2))
    }

    fn subset_factor(&self, idx: &[usize], xty: &[f64]) -> Option<(Matrix, Vec<f64>)> {
        let mut a = Matrix::zeros(idx.len(), idx.len());
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                a[(r, c)] = self.xtx[(i, j)];
            }
            a[(r, r)] += 1e-8;
        }
        let l = linalg::cholesky(&a)?;
        Some((l, idx.iter().map(|&i| xty[i]).collect()))
    }

    fn run(&self, iters: usize, burn_in: usize, rng: &mut ChaCha8Rng) -> Result<ChainOutput> {
        let t_len = self.y.len();
        let j = self.x.cols();
        let mut beta = vec![0.0; j];
        let mut gamma = vec![false; j];
        let mut obs_var = self.scale.max(0.1);
        let mut level_var = self.scale.max(0.01);
        let mut slope_var = self.scale.max(0.01) * 0.1;
        let mut out = ChainOutput { draws: Vec::new(), included: Vec::new() };
        let mut resid = vec![0.0; t_len];
        for it in 0..iters {
            let xb = if j > 0 { self.x.mul_vec(&beta) } else { vec![0.0; t_len] };
            for t in 0..t_len {
                resid[t] = self.y[t] - xb[t];
            }
            let (levels, slopes, last_state, ll) = match self.trend {
                TrendKind::LocalLevel => {
                    let m = StateModel::local_level(obs_var, level_var, resid[0], 1.0);
                    let (s, ll) = ffbs(&m, &resid, rng);
                    let lv: Vec<f64> = s.iter().map(|x| x[0]).collect();
                    let last = [lv[t_len - 1], 0.0];
                    (lv, None, last, ll)
                }
                TrendKind::LocalLinear => {
                    let m = StateModel::local_linear(
                        obs_var,
                        level_var,
                        slope_var,
                        [resid[0], 0.0],
                        [[1.0, 0.0], [0.0, 1.0]],
                    );
                    let (s, ll) = ffbs(&m, &resid, rng);
                    let lv: Vec<f64> = s.iter().map(|x| x[0]).collect();
                    let sl: Vec<f64> = s.iter().map(|x| x[1]).collect();
                    let last = s[t_len - 1];
                    (lv, Some(sl), last, ll)
                }
            };
            if !ll.is_finite() {
                return Err(Error::Likelihood { iteration: it });
            }

            // State variances.
            let mut ss_level = 0.0;
            let mut ss_slope = 0.0;
            for t in 0..t_len - 1 {
                let drift = slopes.as_ref().map_or(0.0, |s| s[t]);
                let e = levels[t + 1] - levels[t] - drift;
                ss_level += e * e;
                if let Some(s) = &slopes {
                    let d = s[t + 1] - s[t];
                    ss_slope += d * d;
                }
            }
            let n_trans = (t_len - 1) as f64;
            level_var = sample_inv_gamma(self.shape + n_trans / 2.0, self.scale + ss_level / 2.0, rng);
            if slopes.is_some() {
                slope_var = sample_inv_gamma(self.shape + n_trans / 2.0, self.scale + ss_slope / 2.0, rng);
            }

            // Regression on y − μ.
            let ystar: Vec<f64> = self.y.iter().zip(&levels).map(|(a, b)| a - b).collect();
            if j > 0 {
                let xty = self.x.tr_mul_vec(&ystar);
                for k in 0..j {
                    gamma[k] = true;
                    let on = self.log_marginal(&gamma, &xty, obs_var);
                    gamma[k] = false;
                    let off = self.log_marginal(&gamma, &xty, obs_var);
                    let p_on = match (on, off) {
                        (Some(a), Some(b)) => 1.0 / (1.0 + math::exp(b - a)),
                        (None, _) => 0.0,
                        (Some(_), None) => 1.0,
                    };
                    gamma[k] = rng.random::<f64>() < p_on;
                }
                beta.iter_mut().for_each(|b| *b = 0.0);
                let idx: Vec<usize> = (0..j).filter(|&k| gamma[k]).collect();
                let shrink = self.g / (1.0 + self.g);
                let mut penalty = 0.0;
                if !idx.is_empty() {
                    let (l, b) = self
                        .subset_factor(&idx, &xty)
                        .ok_or_else(|| Error::Degenerate("singular control cross-product".into()))?;
                    let bhat = linalg::cholesky_solve(&l, &b);
                    let z: Vec<f64> = (0..idx.len()).map(|_| StandardNormal.sample(rng)).collect();
                    let dev = linalg::backward_sub_transposed(&l, &z);
                    let sd = math::sqrt(obs_var * shrink);
                    for (r, &k) in idx.iter().enumerate() {
                        beta[k] = shrink * bhat[r] + sd * dev[r];
                    }
                    let bsel: Vec<f64> = idx.iter().map(|&k| beta[k]).collect();
                    let mut a = Matrix::zeros(idx.len(), idx.len());
                    for (r, &p) in idx.iter().enumerate() {
                        for (c, &q) in idx.iter().enumerate() {
                            a[(r, c)] = self.xtx[(p, q)];
                        }
                    }
                    penalty = linalg::dot(&bsel, &a.mul_vec(&bsel)) / (2.0 * self.g);
                }
                let fitted = self.x.mul_vec(&beta);
                let sse: f64 = ystar.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
                obs_var = sample_inv_gamma(
                    self.shape + (t_len + idx.len()) as f64 / 2.0,
                    self.scale + sse / 2.0 + penalty,
                    rng,
                );
            } else {
                let sse: f64 = ystar.iter().map(|e| e * e).sum();
                obs_var = sample_inv_gamma(self.shape + t_len as f64 / 2.0, self.scale + sse / 2.0, rng);
            }

            if it >= burn_in {
                out.draws.push(Draw {
                    beta: beta.clone(),
                    obs_var,
                    level_var,
                    slope_var: if slopes.is_some() { slope_var } else { 0.0 },
                    last_state,
                    levels,
                });
                out.included.push(gamma.clone());
            }
        }
        Ok(out)
    }
}

fn standardize(x: &[f64]) -> (f64, f64) {
    let m = stats::mean(x);
    let sd = math::sqrt(stats::variance(x, false));
    (m, sd)
}

/// Fits the model to the pre-period outcome `y` with `controls` over the same years.
pub fn fit_bsts(spec: &BstsSpec, y: &[f64], controls: &Controls) -> Result<BstsFit> {
    fit_bsts_with(spec, y, controls, &Sequential)
}

/// [`fit_bsts`] with chains dispatched through `exec`.
pub fn fit_bsts_with<E: Executor>(spec: &BstsSpec, y: &[f64], controls: &Controls, exec: &E) -> Result<BstsFit> {
    spec.validate()?;
    let t_len = y.len();
    if t_len < 10 {
        return Err(Error::Validation(format!("pre-period has {t_len} years, at least 10 required")));
    }
    if controls.values.rows() != t_len || controls.names.len() != controls.values.cols() {
        return Err(Error::Shape("control matrix does not match the pre-period".into()));
    }
    if y.iter().chain(controls.values.as_slice()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("BSTS inputs".into()));
    }
    let (y_mean, sd) = standardize(y);
    let y_scale = if sd > 0.0 { sd } else { 1.0 };
    let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

    let mut used = Vec::new();
    let mut dropped = Vec::new();
    let mut idx = Vec::new();
    let mut cmean = Vec::new();
    let mut cscale = Vec::new();
    for (k, name) in controls.names.iter().enumerate() {
        let col = controls.values.column(k);
        let (m, s) = standardize(&col);
        if s > 1e-12 * m.abs().max(1.0) {
            used.push(name.clone());
            idx.push(k);
            cmean.push(m);
            cscale.push(s);
        } else {
            dropped.push(name.clone());
        }
    }
    let cols: Vec<Vec<f64>> = idx
        .iter()
        .enumerate()
        .map(|(r, &k)| controls.values.column(k).iter().map(|v| (v - cmean[r]) / cscale[r]).collect())
        .collect();
    let x = if cols.is_empty() { Matrix::zeros(t_len, 0) } else { Matrix::from_columns(&cols) };
    let j = x.cols();
    let pi = spec
        .priors
        .inclusion_prob
        .unwrap_or_else(|| if j > 0 { (spec.priors.expected_size / j as f64).min(0.5) } else { 0.5 });
    let g = spec.priors.g.unwrap_or(t_len as f64);
    let chain = Chain {
        y: &ys,
        x: &x,
        xtx: x.weighted_gram(&vec![1.0; t_len]),
        trend: spec.trend,
        pi,
        g,
        shape: spec.priors.var_shape,
        // The standardized outcome has unit variance (or is constant).
        scale: spec.priors.var_scale,
    };
    let chain_ids: Vec<u64> = (0..spec.chains as u64).collect();
    let results = exec.map(&chain_ids, |&c| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(c);
        chain.run(spec.draws, spec.burn_in, &mut rng)
    });
    let mut outputs = Vec::new();
    for r in results {
        outputs.push(r?);
    }

    let mut params: Vec<(String, Vec<Vec<f64>>)> = vec![
        ("obs_var".into(), outputs.iter().map(|o| o.draws.iter().map(|d| d.obs_var).collect()).collect()),
        ("level_var".into(), outputs.iter().map(|o| o.draws.iter().map(|d| d.level_var).collect()).collect()),
    ];
    if spec.trend == TrendKind::LocalLinear {
        params.push((
            "slope_var".into(),
            outputs.iter().map(|o| o.draws.iter().map(|d| d.slope_var).collect()).collect(),
        ));
    }
    for (k, name) in used.iter().enumerate() {
        params.push((
            format!("beta[{name}]"),
            outputs.iter().map(|o| o.draws.iter().map(|d| d.beta[k]).collect()).collect(),
        ));
    }
    let mut diagnostics = Vec::new();
    let mut warnings = Vec::new();
    for (name, chains) in params {
        let ess: f64 = chains.iter().map(|c| stats::effective_sample_size(c)).sum();
        let rhat = if chains.len() >= 2 { stats::split_rhat(&chains) } else { None };
        let constant = chains.iter().flatten().all(|v| *v == chains[0][0]);
        if ess < 50.0 && !constant {
            warnings.push(format!("effective sample size of {name} is {ess:.1} (< 50)"));
        }
        diagnostics.push(ParameterDiagnostics { parameter: name, ess, rhat });
    }

    let kept: usize = outputs.iter().map(|o| o.draws.len()).sum();
    let mut inclusion = vec![0.0; j];
    for o in &outputs {
        for g in &o.included {
            for (acc, &on) in inclusion.iter_mut().zip(g) {
                if on {
                    *acc += 1.0;
                }
            }
        }
    }
    inclusion.iter_mut().for_each(|v| *v /= kept as f64);
    let draws = outputs.into_iter().flat_map(|o| o.draws).collect();
    Ok(BstsFit {
        spec: spec.clone(),
        y_mean,
        y_scale,
        used_controls: used,
        dropped_controls: dropped,
        control_mean: cmean,
        control_scale: cscale,
        control_index: idx,
        inclusion_prob: pi,
        g,
        draws,
        inclusion,
        diagnostics,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

impl Band {
    fn from_sorted(s: &[f64]) -> Self {
        Band {
            lower: stats::quantile_sorted(s, 0.025),
            median: stats::quantile_sorted(s, 0.5),
            upper: stats::quantile_sorted(s, 0.975),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Posterior predictive counterfactual over the post-period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactPosterior {
    pub years: Vec<i32>,
    pub actual: Vec<f64>,
    /// Retained draws × post years, original scale.
    pub draws: Matrix,
    pub counterfactual: Vec<Band>,
    pub counterfactual_mean: Vec<f64>,
    /// `actual − counterfactual`.
    pub effect: Vec<Band>,
    pub effect_mean: Vec<f64>,
    /// Running sum of effects.
    pub cumulative: Vec<Band>,
    pub cumulative_mean: Vec<f64>,
    /// Posterior probability that the cumulative effect is negative, per year.
    pub prob_cumulative_negative: Vec<f64>,
    pub inclusion: Vec<(String, f64)>,
    pub diagnostics: Vec<ParameterDiagnostics>,
    pub warnings: Vec<String>,
}

fn bands(draws: &Matrix) -> Result<(Vec<Band>, Vec<f64>)> {
    let mut out = Vec::with_capacity(draws.cols());
    let mut means = Vec::with_capacity(draws.cols());
    for c in 0..draws.cols() {
        let mut col = draws.column(c);
        means.push(stats::mean(&col));
        col.sort_by(f64::total_cmp);
        let b = Band::from_sorted(&col);
        if !(b.lower <= b.median && b.median <= b.upper) {
            return Err(Error::Degenerate("posterior quantiles are not monotone".into()));
        }
        out.push(b);
    }
    Ok((out, means))
}

/// Simulates each retained draw forward over the post-period.
///
/// `controls_post` holds every input control (same columns as at fit time)
/// for the post years; `actual` is the observed treated outcome.
pub fn predict_counterfactual(
    fit: &BstsFit,
    controls_post: &Matrix,
    actual: &[f64],
    years: &[i32],
) -> Result<ImpactPosterior> {
    let h = actual.len();
    if years.len() != h || controls_post.rows() != h {
        return Err(Error::Shape("post-period controls, actual values and years differ in length".into()));
    }
    if let Some(&k) = fit.control_index.iter().max() {
        if k >= controls_post.cols() {
            return Err(Error::Shape("post-period controls have fewer columns than at fit time".into()));
        }
    }
    if controls_post.as_slice().iter().chain(actual).any(|v| !v.is_finite()) {
        return Err(Error::MissingSeries { unit: "controls".into(), variable: "post-period".into() });
    }
    if fit.draws.is_empty() {
        return Err(Error::Validation("posterior has no draws".into()));
    }
    let nd = fit.draws.len();
    let mut xs = Matrix::zeros(h, fit.control_index.len());
    for t in 0..h {
        for (r, &k) in fit.control_index.iter().enumerate() {
            xs[(t, r)] = (controls_post[(t, k)] - fit.control_mean[r]) / fit.control_scale[r];
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(fit.spec.seed ^ 0x5EED_F0CA_57ED);
    let mut draws = Matrix::zeros(nd, h);
    for (d, draw) in fit.draws.iter().enumerate() {
        let xb = xs.mul_vec(&draw.beta);
        let [mut level, mut slope] = draw.last_state;
        for t in 0..h {
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            let e3: f64 = StandardNormal.sample(&mut rng);
            level += slope + math::sqrt(draw.level_var) * e1;
            if fit.spec.trend == TrendKind::LocalLinear {
                slope += math::sqrt(draw.slope_var) * e2;
            }
            let ystd = level + xb[t] + math::sqrt(draw.obs_var) * e3;
            draws[(d, t)] = fit.y_mean + fit.y_scale * ystd;
        }
    }
    let (counterfactual, counterfactual_mean) = bands(&draws)?;
    let mut effects = Matrix::zeros(nd, h);
    let mut cumul = Matrix::zeros(nd, h);
    for d in 0..nd {
        let mut run = 0.0;
        for t in 0..h {
            let e = actual[t] - draws[(d, t)];
            effects[(d, t)] = e;
            run += e;
            cumul[(d, t)] = run;
        }
    }
    let (effect, effect_mean) = bands(&effects)?;
    let (cumulative, cumulative_mean) = bands(&cumul)?;
    let prob_cumulative_negative =
        (0..h).map(|t| (0..nd).filter(|&d| cumul[(d, t)] < 0.0).count() as f64 / nd as f64).collect();
    Ok(ImpactPosterior {
        years: years.to_vec(),
        actual: actual.to_vec(),
        draws,
        counterfactual,
        counterfactual_mean,
        effect,
        effect_mean,
        cumulative,
        cumulative_mean,
        prob_cumulative_negative,
        inclusion: fit.used_controls.iter().cloned().zip(fit.inclusion.iter().copied()).collect(),
        diagnostics: fit.diagnostics.clone(),
        warnings: fit.warnings.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactYear {
    pub year: i32,
    pub actual: f64,
    pub counterfactual_mean: f64,
    pub counterfactual: Band,
    pub effect_mean: f64,
    pub effect: Band,
    pub cumulative_mean: f64,
    pub cumulative: Band,
    pub prob_cumulative_negative: f64,
    /// Actual value below the 2.5% counterfactual quantile.
    pub below_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactSummary {
    pub draws: usize,
    pub years: Vec<ImpactYear>,
    pub prob_cumulative_negative: f64,
    pub inclusion: Vec<(String, f64)>,
    pub diagnostics: Vec<ParameterDiagnostics>,
    pub warnings: Vec<String>,
}

pub fn impact_report(post: &ImpactPosterior) -> Result<ImpactSummary> {
    if post.years.is_empty() || post.draws.rows() == 0 {
        return Err(Error::Validation("empty posterior".into()));
    }
    let years: Vec<ImpactYear> = (0..post.years.len())
        .map(|t| ImpactYear {
            year: post.years[t],
            actual: post.actual[t],
            counterfactual_mean: post.counterfactual_mean[t],
            counterfactual: post.counterfactual[t].clone(),
            effect_mean: post.effect_mean[t],
            effect: post.effect[t].clone(),
            cumulative_mean: post.cumulative_mean[t],
            cumulative: post.cumulative[t].clone(),
            prob_cumulative_negative: post.prob_cumulative_negative[t],
            below_band: post.actual[t] < post.counterfactual[t].lower,
        })
        .collect();
    Ok(ImpactSummary {
        draws: post.draws.rows(),
        prob_cumulative_negative: *post.prob_cumulative_negative.last().unwrap_or(&0.0),
        years,
        inclusion: post.inclusion.clone(),
        diagnostics: post.diagnostics.clone(),
        warnings: post.warnings.clone(),
    })
}
