//! Derivative-free minimisation.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Function-evaluation budget.
    pub max_evals: usize,
    /// Stop when `f_max − f_min ≤ ftol · |f_min| + ftol_abs` across the simplex.
    pub ftol: f64,
    pub ftol_abs: f64,
    /// Edge length of the initial simplex.
    pub step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_evals: 4000, ftol: 1e-9, ftol_abs: 1e-14, step: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder–Mead with dimension-adaptive coefficients (Gao & Han, 2012).
///
/// Zero-dimensional problems are evaluated once and reported as converged.
/// Non-finite function values are treated as `+∞`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    if n == 0 {
        let fx = eval(x0, &mut evals);
        return Minimum { x: Vec::new(), f: fx, evals, converged: true };
    }
    let nf = n as f64;
    let alpha = 1.0;
    let gamma = 1.0 + 2.0 / nf;
    let rho = 0.75 - 1.0 / (2.0 * nf);
    let sigma = 1.0 - 1.0 / nf;

    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += opts.step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p, &mut evals)).collect();
    let mut order: Vec<usize> = (0..=n).collect();

    loop {
        // Stable sort keeps earlier vertices first among ties.
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let best = order[0];
        let worst = order[n];
        let second = order[n - 1];
        let spread = vals[worst] - vals[best];
        if spread <= opts.ftol * vals[best].abs() + opts.ftol_abs {
            return Minimum { x: pts[best].clone(), f: vals[best], evals, converged: true };
        }
        if evals >= opts.max_evals {
            return Minimum { x: pts[best].clone(), f: vals[best], evals, converged: false };
        }
        let mut centroid = vec![0.0; n];
        for &i in &order[..n] {
            for (c, p) in centroid.iter_mut().zip(&pts[i]) {
                *c += p / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&pts[worst]).map(|(c, w)| c + t * (c - w)).collect()
        };
        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < vals[best] {
            let xe = along(gamma);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                pts[worst] = xe;
                vals[worst] = fe;
            } else {
                pts[worst] = xr;
                vals[worst] = fr;
            }
            continue;
        }
        if fr < vals[second] {
            pts[worst] = xr;
            vals[worst] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < vals[worst] {
            let xc = along(alpha * rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc, fc <= fr)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc, fc < vals[worst])
        };
        if accept {
            pts[worst] = xc;
            vals[worst] = fc;
            continue;
        }
        let xb = pts[best].clone();
        for &i in &order[1..] {
            for (p, b) in pts[i].iter_mut().zip(&xb) {
                *p = b + sigma * (*p - b);
            }
            vals[i] = eval(&pts[i], &mut evals);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_quadratic() {
        let m = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2) + 3.0,
            &[0.0, 0.0],
            &NelderMeadOptions { ftol: 1e-14, ..Default::default() },
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] + 2.0).abs() < 1e-5, "{:?}", m.x);
        assert!((m.f - 3.0).abs() < 1e-10);
    }

    #[test]
    fn minimises_rosenbrock() {
        let m = nelder_mead(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &NelderMeadOptions { ftol: 0.0, ftol_abs: 1e-20, max_evals: 5000, step: 0.5 },
        );
        assert!((m.x[0] - 1.0).abs() < 1e-4, "{:?}", m);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let m = nelder_mead(|x| x.iter().map(|v| v * v).sum(), &[5.0; 4], &NelderMeadOptions {
            max_evals: 10,
            ..Default::default()
        });
        assert!(!m.converged);
        assert!(m.evals >= 10);
    }

    #[test]
    fn zero_dimensional_problem() {
        let m = nelder_mead(|_| 2.5, &[], &NelderMeadOptions::default());
        assert!(m.converged);
        assert_eq!(m.f, 2.5);
    }
}
