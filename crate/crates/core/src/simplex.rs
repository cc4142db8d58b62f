//! Convex quadratic minimisation over the probability simplex.
//!
//! Minimises `f(w) = wᵀ H w − 2 bᵀ w + c` subject to `w ≥ 0`, `Σ w = 1`, with
//! `H` symmetric positive semi-definite. The primary method is a primal
//! active-set iteration; its answer is certified by the Frank–Wolfe duality gap
//! and, when the certificate fails, refined by accelerated projected gradient.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpMethod {
    ActiveSet,
    ProjectedGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub w: Vec<f64>,
    pub objective: f64,
    /// Frank–Wolfe duality gap at `w`; an upper bound on `objective − min f`.
    pub gap: f64,
    pub iterations: usize,
    pub method: QpMethod,
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

struct Quad<'a> {
    h: &'a Matrix,
    b: &'a [f64],
    c: f64,
}

impl Quad<'_> {
    fn value(&self, w: &[f64]) -> f64 {
        let hw = self.h.mul_vec(w);
        linalg::dot(w, &hw) - 2.0 * linalg::dot(self.b, w) + self.c
    }

    /// Gradient `2 (H w − b)`.
    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let hw = self.h.mul_vec(w);
        hw.iter().zip(self.b).map(|(a, b)| 2.0 * (a - b)).collect()
    }

    fn fw_gap(&self, w: &[f64]) -> f64 {
        let g = self.gradient(w);
        let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
        (linalg::dot(&g, w) - gmin).max(0.0)
    }
}

/// Minimises `wᵀ H w − 2 bᵀ w + c` over the simplex.
///
/// `tol` bounds the certified suboptimality (duality gap) relative to
/// `max(1, |f(best vertex)|)`.
pub fn minimize(h: &Matrix, b: &[f64], c: f64, tol: f64) -> Result<QpSolution> {
    let n = b.len();
    if n == 0 {
        return Err(Error::Validation("simplex problem needs at least one coordinate".into()));
    }
    if h.rows() != n || h.cols() != n {
        return Err(Error::Shape("quadratic term must be square and match the linear term".into()));
    }
    if h.as_slice().iter().chain(b).any(|x| !x.is_finite()) || !c.is_finite() {
        return Err(Error::NonFinite("quadratic program data".into()));
    }
    let q = Quad { h, b, c };
    let vertex = (0..n)
        .map(|j| (j, h[(j, j)] - 2.0 * b[j]))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let scale = (vertex.1 + c).abs().max(1.0);
    let target = tol * scale;

    let (w, iterations) = active_set(h, b, vertex.0);
    let gap = q.fw_gap(&w);
    if gap <= target {
        return Ok(QpSolution { objective: q.value(&w), w, gap, iterations, method: QpMethod::ActiveSet });
    }
    let (w, more) = projected_gradient(&q, w, target);
    let gap = q.fw_gap(&w);
    Ok(QpSolution {
        objective: q.value(&w),
        w,
        gap,
        iterations: iterations + more,
        method: QpMethod::ProjectedGradient,
    })
}

/// Primal active-set method started at vertex `start`.
fn active_set(h: &Matrix, b: &[f64], start: usize) -> (Vec<f64>, usize) {
    let n = b.len();
    let ridge = 1e-10 * (0..n).map(|j| h[(j, j)].abs()).sum::<f64>() / n as f64;
    let ridge = if ridge > 0.0 { ridge } else { 1e-14 };
    let mut w = vec![0.0; n];
    w[start] = 1.0;
    let mut support = vec![start];
    let max_iter = 20 * n + 50;
    for it in 0..max_iter {
        // The ridge is only needed when the support columns are degenerate.
        let Some((p, mu)) = support_kkt(h, b, &support, 0.0).or_else(|| support_kkt(h, b, &support, ridge)) else {
            return (w, it);
        };
        if p.iter().all(|&x| x >= 0.0) {
            for (k, &j) in support.iter().enumerate() {
                w[j] = p[k];
            }
            // Multipliers for inactive coordinates: λ_j = (Hw − b)_j − μ.
            let hw = h.mul_vec(&w);
            let mut best: Option<(usize, f64)> = None;
            for j in 0..n {
                if support.contains(&j) {
                    continue;
                }
                let lam = hw[j] - b[j] - mu;
                if lam < best.map_or(0.0, |x| x.1) {
                    best = Some((j, lam));
                }
            }
            let thresh = -1e-13 * (1.0 + mu.abs());
            match best {
                Some((j, lam)) if lam < thresh => {
                    support.push(j);
                    support.sort_unstable();
                }
                _ => return (w, it + 1),
            }
        } else {
            // Move toward p until the first coordinate hits zero.
            let mut alpha = 1.0f64;
            for (k, &j) in support.iter().enumerate() {
                if p[k] < w[j] {
                    let a = w[j] / (w[j] - p[k]);
                    if a < alpha {
                        alpha = a;
                    }
                }
            }
            for (k, &j) in support.iter().enumerate() {
                w[j] += alpha * (p[k] - w[j]);
            }
            let mut dropped = false;
            support.retain(|&j| {
                if w[j] <= 1e-15 {
                    w[j] = 0.0;
                    dropped = true;
                    false
                } else {
                    true
                }
            });
            if !dropped || support.is_empty() {
                // Should not happen; bail out to the fallback.
                return (w, it + 1);
            }
            let s: f64 = support.iter().map(|&j| w[j]).sum();
            for &j in &support {
                w[j] /= s;
            }
        }
    }
    (w, max_iter)
}

/// Solves the equality-constrained problem on `support`: returns the minimiser
/// restricted to those coordinates and the multiplier of `Σ w = 1`.
fn support_kkt(h: &Matrix, b: &[f64], support: &[usize], ridge: f64) -> Option<(Vec<f64>, f64)> {
    let m = support.len();
    let mut a = Matrix::zeros(m + 1, m + 1);
    let mut rhs = vec![0.0; m + 1];
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            a[(r, c)] = h[(i, j)];
        }
        a[(r, r)] += ridge;
        a[(r, m)] = -1.0;
        a[(m, r)] = 1.0;
        rhs[r] = b[i];
    }
    rhs[m] = 1.0;
    let x = linalg::solve(&a, &rhs)?;
    let mu = x[m];
    Some((x[..m].to_vec(), mu))
}

/// FISTA with restart, warm-started at `w`.
fn projected_gradient(q: &Quad<'_>, w0: Vec<f64>, target: f64) -> (Vec<f64>, usize) {
    let n = w0.len();
    // Gershgorin bound on the largest eigenvalue of 2H.
    let lip = 2.0
        * (0..n)
            .map(|i| q.h.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
            .max(1e-300);
    let step = 1.0 / lip;
    let mut x = w0;
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut fx = q.value(&x);
    let max_iter = 50_000;
    for it in 0..max_iter {
        let g = q.gradient(&y);
        let cand: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - step * gi).collect();
        let xn = project_simplex(&cand);
        let fxn = q.value(&xn);
        if fxn > fx {
            // Restart momentum.
            y = x.clone();
            t = 1.0;
            continue;
        }
        let tn = (1.0 + crate::math::sqrt(1.0 + 4.0 * t * t)) / 2.0;
        let beta = (t - 1.0) / tn;
        y = xn.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
        x = xn;
        fx = fxn;
        t = tn;
        if it % 16 == 0 && q.fw_gap(&x) <= target {
            return (x, it + 1);
        }
    }
    (x, max_iter)
}
