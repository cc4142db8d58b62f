//! Seeded factor-model panels with known treatment effects, and brute-force
//! reference solvers used to check the fast paths.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::panel::{Panel, PanelBuilder};

/// Treatment effect applied to the treated unit from the treatment year on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    None,
    /// Additive effect per year; every listed year must be post-treatment.
    Additive { schedule: Vec<(i32, f64)> },
    /// Multiplies the post-treatment path by `1 + fraction`.
    LevelStep { fraction: f64 },
    /// Lowers yearly growth by `points` percentage points from the treatment year on.
    GrowthDrag { points: f64 },
}

/// How the treated unit's factor loadings are formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreatedLoadings {
    /// Dirichlet(1) weights over three randomly chosen donors.
    RandomMix,
    /// Convex weights over donors, in unit order with the treated unit skipped.
    Mix { weights: Vec<f64> },
    /// Drawn like every other unit, so all units are exchangeable.
    Independent,
}

/// Factor-model data-generating process.
///
/// Unit outcomes are `100 λ_jᵀ F_t + 100 σ ε_jt` where each factor is
/// `exp(g_f t + random walk)`. The treated unit's loadings are a convex
/// combination of donor loadings, so a synthetic control exists by construction.
/// Covariates `x1..xr` equal the first `r` loadings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpSpec {
    /// Total number of units including the treated one.
    pub units: usize,
    pub start_year: i32,
    pub years: usize,
    pub factors: usize,
    pub covariates: usize,
    /// Idiosyncratic noise scale σ.
    pub noise: f64,
    /// Standard deviation of factor random-walk innovations.
    pub factor_volatility: f64,
    pub treated: usize,
    pub treatment_year: i32,
    pub effect: Effect,
    pub loadings: TreatedLoadings,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            units: 8,
            start_year: 1990,
            years: 30,
            factors: 7,
            covariates: 3,
            noise: 0.01,
            factor_volatility: 0.02,
            treated: 0,
            treatment_year: 2014,
            effect: Effect::None,
            loadings: TreatedLoadings::RandomMix,
            seed: 1,
        }
    }
}

/// A generated panel plus the ground truth behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub panel: Panel,
    pub treated: String,
    pub donors: Vec<String>,
    /// Donor weights used for the treated loadings (all zero when independent).
    pub mix: Vec<f64>,
    /// Treated outcome without the effect (noise included).
    pub counterfactual: Vec<f64>,
    /// `actual − counterfactual` per year.
    pub effect: Vec<f64>,
}

pub const OUTCOME: &str = "y";

pub fn unit_name(i: usize) -> String {
    format!("u{i:02}")
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.units < 3 {
            return Err(Error::Validation(format!("need at least 3 units, got {}", self.units)));
        }
        if self.years < 10 {
            return Err(Error::Validation(format!("need at least 10 years, got {}", self.years)));
        }
        if self.treated >= self.units {
            return Err(Error::Validation("treated index out of range".into()));
        }
        if self.factors == 0 {
            return Err(Error::Validation("need at least one factor".into()));
        }
        if !(self.noise >= 0.0) || !(self.factor_volatility >= 0.0) {
            return Err(Error::Validation("noise scales must be non-negative".into()));
        }
        let end = self.start_year + self.years as i32 - 1;
        if self.treatment_year <= self.start_year || self.treatment_year > end {
            return Err(Error::InvalidWindow(format!("treatment year {} outside sample", self.treatment_year)));
        }
        if let Effect::Additive { schedule } = &self.effect {
            if schedule.iter().any(|(y, v)| *y < self.treatment_year && *v != 0.0) {
                return Err(Error::Validation("effect schedule must be zero before treatment".into()));
            }
        }
        if let TreatedLoadings::Mix { weights: m } = &self.loadings {
            if m.len() != self.units - 1 || m.iter().any(|x| *x < 0.0) || (m.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Validation("mix must be a simplex vector over donors".into()));
            }
        }
        Ok(())
    }
}

/// Draws a panel from `spec`. Identical specs give identical panels.
pub fn generate_panel(spec: &DgpSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, t_len, nf) = (spec.units, spec.years, spec.factors);

    let mut factors = Matrix::zeros(nf, t_len);
    for f in 0..nf {
        let g = rng.random_range(0.01..0.04);
        let mut walk = 0.0;
        for t in 0..t_len {
            let e: f64 = StandardNormal.sample(&mut rng);
            walk += spec.factor_volatility * e;
            factors[(f, t)] = math::exp(g * t as f64 + walk);
        }
    }

    let donor_idx: Vec<usize> = (0..n).filter(|&i| i != spec.treated).collect();
    let mut loadings = Matrix::zeros(n, nf);
    for &i in &donor_idx {
        for f in 0..nf {
            loadings[(i, f)] = rng.random_range(0.2..1.0);
        }
    }
    let mix = match &spec.loadings {
        TreatedLoadings::Mix { weights } => weights.clone(),
        TreatedLoadings::Independent => vec![0.0; n - 1],
        TreatedLoadings::RandomMix => {
            let mut m = vec![0.0; n - 1];
            let mut picked: Vec<usize> = Vec::new();
            while picked.len() < 3.min(n - 1) {
                let k = rng.random_range(0..n - 1);
                if !picked.contains(&k) {
                    picked.push(k);
                }
            }
            let draws: Vec<f64> = picked.iter().map(|_| Exp1.sample(&mut rng)).collect();
            let s: f64 = draws.iter().sum();
            for (k, d) in picked.iter().zip(draws) {
                m[*k] = d / s;
            }
            m
        }
    };
    for f in 0..nf {
        loadings[(spec.treated, f)] = match spec.loadings {
            TreatedLoadings::Independent => rng.random_range(0.2..1.0),
            _ => donor_idx.iter().zip(&mix).map(|(&i, w)| w * loadings[(i, f)]).sum(),
        };
    }

    let mut y = Matrix::zeros(n, t_len);
    for i in 0..n {
        for t in 0..t_len {
            let e: f64 = StandardNormal.sample(&mut rng);
            let mut s = 0.0;
            for f in 0..nf {
                s += loadings[(i, f)] * factors[(f, t)];
            }
            y[(i, t)] = 100.0 * s + 100.0 * spec.noise * e;
        }
    }

    let counterfactual: Vec<f64> = y.row(spec.treated).to_vec();
    let t0 = (spec.treatment_year - spec.start_year) as usize;
    let mut actual = counterfactual.clone();
    match &spec.effect {
        Effect::None => {}
        Effect::Additive { schedule } => {
            for (year, v) in schedule {
                let t = (*year - spec.start_year) as usize;
                if t < t_len {
                    actual[t] += v;
                }
            }
        }
        Effect::LevelStep { fraction } => {
            for a in &mut actual[t0..] {
                *a *= 1.0 + fraction;
            }
        }
        Effect::GrowthDrag { points } => {
            let mut factor = 1.0;
            for t in t0..t_len {
                let g = counterfactual[t] / counterfactual[t - 1];
                factor *= 1.0 - points / 100.0 / g;
                actual[t] = counterfactual[t] * factor;
            }
        }
    }
    let effect: Vec<f64> = actual.iter().zip(&counterfactual).map(|(a, c)| a - c).collect();

    let mut b = PanelBuilder::new();
    for i in 0..n {
        let name = unit_name(i);
        for t in 0..t_len {
            let year = spec.start_year + t as i32;
            let v = if i == spec.treated { actual[t] } else { y[(i, t)] };
            b.push(&name, OUTCOME, year, v)?;
        }
        for c in 0..spec.covariates.min(nf) {
            let var = format!("x{}", c + 1);
            for t in 0..t_len {
                b.push(&name, &var, spec.start_year + t as i32, loadings[(i, c)])?;
            }
        }
    }
    let (panel, _) = b.build()?;
    Ok(Generated {
        panel,
        treated: unit_name(spec.treated),
        donors: donor_idx.iter().map(|&i| unit_name(i)).collect(),
        mix,
        counterfactual,
        effect,
    })
}

/// Largest pool the grid oracle accepts.
pub const GRID_MAX_DONORS: usize = 6;

/// Exact minimiser of the inner objective over the lattice
/// `{w : w_j = n_j / m, Σ n_j = m}` with `m = 1 / resolution`.
///
/// All but the last two coordinates are enumerated; along the remaining edge
/// the objective is a one-dimensional convex quadratic whose lattice minimum
/// is at the floor or ceiling of its continuous minimiser.
pub fn grid_oracle(x1: &[f64], x0: &Matrix, v: &[f64], resolution: f64) -> Result<(Vec<f64>, f64)> {
    let j = x0.cols();
    if j == 0 {
        return Err(Error::TooFewDonors { required: 1, available: 0 });
    }
    if j > GRID_MAX_DONORS {
        return Err(Error::Validation(format!("grid oracle limited to {GRID_MAX_DONORS} donors, got {j}")));
    }
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::Validation(format!("resolution {resolution} outside (0, 1]")));
    }
    let m = math::round(1.0 / resolution);
    if (m * resolution - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("resolution {resolution} does not divide 1")));
    }
    let m = m as usize;
    let h = x0.weighted_gram(v);
    let vx1: Vec<f64> = x1.iter().zip(v).map(|(a, b)| a * b).collect();
    let b = x0.tr_mul_vec(&vx1);
    let c = linalg::dot(&vx1, x1);
    let mf = m as f64;

    if j == 1 {
        return Ok((vec![1.0], crate::scm::inner_objective(x1, x0, v, &[1.0])));
    }

    // H is symmetric, so row k doubles as column k.
    let hflat: Vec<f64> = (0..j).flat_map(|r| (0..j).map(move |c| (r, c))).map(|(r, c)| h[(r, c)]).collect();

    struct Search<'a> {
        h: &'a [f64],
        b: &'a [f64],
        c: f64,
        j: usize,
        mf: f64,
        /// Curvature of the objective along the last edge, `e_p − e_q`.
        edge_curv: f64,
        /// Slope of the edge gradient in `r`: `H_pq − H_qq`.
        edge_slope: f64,
        counts: Vec<usize>,
        best: (Vec<usize>, f64),
    }

    impl Search<'_> {
        /// Objective along the last edge, `base + c1 s + c2 s²` for
        /// `w = prefix + r e_q + s (e_p − e_q)`, `s ∈ [0, r]`.
        #[inline(always)]
        fn edge(&self, remaining: usize, quad: f64, lin: f64, hw_p: f64, hw_q: f64) -> (f64, f64) {
            let (p, q, j) = (self.j - 2, self.j - 1, self.j);
            let r = remaining as f64 / self.mf;
            let (bp, bq) = (self.b[p], self.b[q]);
            let base = quad + r * (2.0 * hw_q + r * self.h[q * j + q] - 2.0 * bq) - 2.0 * lin + self.c;
            let c1 = 2.0 * (hw_p - hw_q + r * self.edge_slope - bp + bq);
            (base, c1)
        }

        /// Lattice minimum along the edge: next to the clamped vertex of a
        /// convex parabola, or at an endpoint when the edge is flat.
        #[inline(always)]
        fn edge_lattice(&self, remaining: usize, base: f64, c1: f64) -> (usize, f64) {
            let c2 = self.edge_curv;
            let eval = |a: usize| {
                let s = a as f64 / self.mf;
                base + s * (c1 + c2 * s)
            };
            let lo = if c2 > 0.0 {
                (-c1 / (2.0 * c2) * self.mf).clamp(0.0, remaining as f64) as usize
            } else if c1 < 0.0 {
                remaining
            } else {
                0
            };
            let hi = (lo + 1).min(remaining);
            let (f_lo, f_hi) = (eval(lo), eval(hi));
            if f_hi < f_lo {
                (hi, f_hi)
            } else {
                (lo, f_lo)
            }
        }

        /// Continuous minimum along the edge; a lower bound for `edge_lattice`.
        #[inline(always)]
        fn edge_bound(&self, remaining: usize, base: f64, c1: f64) -> f64 {
            let c2 = self.edge_curv;
            let r = remaining as f64 / self.mf;
            let s = if c2 > 0.0 { (-c1 / (2.0 * c2)).clamp(0.0, r) } else if c1 < 0.0 { r } else { 0.0 };
            base + s * (c1 + c2 * s)
        }

        fn record(&mut self, remaining: usize, a: usize, f: f64) {
            if f < self.best.1 {
                let (p, q) = (self.j - 2, self.j - 1);
                let mut counts = self.counts.clone();
                counts[p] = a;
                counts[q] = remaining - a;
                self.best = (counts, f);
            }
        }

        fn leaf(&mut self, remaining: usize, quad: f64, lin: f64, hw: &[f64]) {
            let (base, c1) = self.edge(remaining, quad, lin, hw[self.j - 2], hw[self.j - 1]);
            let (a, f) = self.edge_lattice(remaining, base, c1);
            self.record(remaining, a, f);
        }

        /// Last three coordinates: `d = j − 3` takes `n` units of mass and the
        /// final edge the rest. The edge bound is convex in `n`, so a ternary
        /// search finds its minimum and an outward scan stops once the bound
        /// exceeds the incumbent.
        fn plane(&mut self, remaining: usize, quad: f64, lin: f64, hw: &[f64]) {
            let j = self.j;
            let (d, p, q) = (j - 3, j - 2, j - 1);
            let delta = 1.0 / self.mf;
            let row = &self.h[d * j..(d + 1) * j];
            let (hdd, hdp, hdq, bd) = (row[d], row[p], row[q], self.b[d]);
            let at = |s: &Self, n: usize| {
                let x = n as f64 * delta;
                let quad_n = quad + 2.0 * x * hw[d] + x * x * hdd;
                let lin_n = lin + x * bd;
                s.edge(remaining - n, quad_n, lin_n, hw[p] + x * hdp, hw[q] + x * hdq)
            };
            let bound = |s: &Self, n: usize| {
                let (base, c1) = at(s, n);
                s.edge_bound(remaining - n, base, c1)
            };
            let (mut lo, mut hi) = (0usize, remaining);
            while hi - lo > 2 {
                let m1 = lo + (hi - lo) / 3;
                let m2 = hi - (hi - lo) / 3;
                let (g1, g2) = (bound(self, m1), bound(self, m2));
                if g1 < g2 {
                    hi = m2 - 1;
                } else if g1 > g2 {
                    lo = m1 + 1;
                } else {
                    lo = m1;
                    hi = m2;
                }
            }
            let start = (lo..=hi).min_by(|a, b| bound(self, *a).total_cmp(&bound(self, *b))).unwrap_or(lo);
            // Slack for rounding in the bound, far below any meaningful objective gap.
            let slack = |best: f64| best + 1e-12 * (1.0 + best.abs());
            let visit = |s: &mut Self, n: usize| {
                let (base, c1) = at(s, n);
                if s.edge_bound(remaining - n, base, c1) > slack(s.best.1) {
                    return false;
                }
                let (a, f) = s.edge_lattice(remaining - n, base, c1);
                s.counts[d] = n;
                s.record(remaining - n, a, f);
                true
            };
            let mut n = start;
            while n <= remaining && visit(self, n) {
                n += 1;
            }
            let mut n = start;
            while n > 0 && visit(self, n - 1) {
                n -= 1;
            }
            self.counts[d] = 0;
        }

        // State: quad = wᵀHw, lin = bᵀw, hw = Hw for the enumerated prefix.
        // Only entries of hw from `depth` on are kept current.
        fn recurse(&mut self, depth: usize, remaining: usize, quad: f64, lin: f64, hw: &mut [f64]) {
            if depth == self.j - 2 {
                self.leaf(remaining, quad, lin, hw);
                return;
            }
            if depth == self.j - 3 {
                self.plane(remaining, quad, lin, hw);
                return;
            }
            let j = self.j;
            let delta = 1.0 / self.mf;
            let row = &self.h[depth * j..(depth + 1) * j];
            let step: Vec<f64> = row[depth..].iter().map(|x| delta * x).collect();
            let hdd = delta * delta * row[depth];
            let bd = delta * self.b[depth];
            let (mut quad, mut lin) = (quad, lin);
            for n in 0..=remaining {
                self.counts[depth] = n;
                self.recurse(depth + 1, remaining - n, quad, lin, hw);
                if n == remaining {
                    break;
                }
                quad += 2.0 * delta * hw[depth] + hdd;
                lin += bd;
                for (x, s) in hw[depth..].iter_mut().zip(&step) {
                    *x += s;
                }
            }
            // Undo this level's accumulated mass.
            let total = remaining as f64;
            for (x, s) in hw[depth..].iter_mut().zip(&step) {
                *x -= total * s;
            }
            self.counts[depth] = 0;
        }
    }

    let (p, q) = (j - 2, j - 1);
    let mut s = Search {
        h: &hflat,
        b: &b,
        c,
        j,
        mf,
        edge_curv: h[(p, p)] - 2.0 * h[(p, q)] + h[(q, q)],
        edge_slope: h[(p, q)] - h[(q, q)],
        counts: vec![0; j],
        best: (Vec::new(), f64::INFINITY),
    };
    let mut hw = vec![0.0; j];
    s.recurse(0, m, 0.0, 0.0, &mut hw);
    let w: Vec<f64> = s.best.0.iter().map(|&n| n as f64 / mf).collect();
    let f = crate::scm::inner_objective(x1, x0, v, &w);
    Ok((w, f))
}

/// Filtered and smoothed moments of the local-level model
/// `y_t = μ_t + ε_t`, `μ_{t+1} = μ_t + η_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarKalman {
    /// `E[μ_t | y_1..y_t]`
    pub filtered_mean: Vec<f64>,
    pub filtered_var: Vec<f64>,
    /// `E[μ_t | y_1..y_T]`
    pub smoothed_mean: Vec<f64>,
    pub smoothed_var: Vec<f64>,
    pub log_likelihood: f64,
}

/// Textbook scalar Kalman filter and Rauch–Tung–Striebel smoother.
pub fn scalar_local_level(y: &[f64], obs_var: f64, level_var: f64, a1: f64, p1: f64) -> ScalarKalman {
    let n = y.len();
    let mut fm = vec![0.0; n];
    let mut fv = vec![0.0; n];
    let mut pm = vec![0.0; n];
    let mut pv = vec![0.0; n];
    let (mut a, mut p) = (a1, p1);
    let mut ll = 0.0;
    for t in 0..n {
        pm[t] = a;
        pv[t] = p;
        let f = p + obs_var;
        let v = y[t] - a;
        ll -= 0.5 * (math::ln(2.0 * core::f64::consts::PI * f) + v * v / f);
        let k = p / f;
        fm[t] = a + k * v;
        fv[t] = p * (1.0 - k);
        a = fm[t];
        p = fv[t] + level_var;
    }
    let mut sm = fm.clone();
    let mut sv = fv.clone();
    for t in (0..n.saturating_sub(1)).rev() {
        let j = fv[t] / pv[t + 1];
        sm[t] = fm[t] + j * (sm[t + 1] - pm[t + 1]);
        sv[t] = fv[t] + j * j * (sv[t + 1] - pv[t + 1]);
    }
    ScalarKalman { filtered_mean: fm, filtered_var: fv, smoothed_mean: sm, smoothed_var: sv, log_likelihood: ll }
}

/// HP trend by dense Gaussian elimination on `(I + λ DᵀD) τ = y`.
pub fn dense_hp_trend(y: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let n = y.len();
    let mut a = Matrix::identity(n);
    for r in 0..n.saturating_sub(2) {
        let d = [(r, 1.0), (r + 1, -2.0), (r + 2, 1.0)];
        for &(i, di) in &d {
            for &(k, dk) in &d {
                a[(i, k)] += lambda * di * dk;
            }
        }
    }
    linalg::solve(&a, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{inner_objective, solve_inner};

    #[test]
    fn same_seed_same_panel() {
        let spec = DgpSpec::default();
        assert_eq!(generate_panel(&spec).unwrap(), generate_panel(&spec).unwrap());
        let other = DgpSpec { seed: 2, ..DgpSpec::default() };
        assert_ne!(generate_panel(&spec).unwrap().panel, generate_panel(&other).unwrap().panel);
    }

    #[test]
    fn rejects_small_designs() {
        assert!(generate_panel(&DgpSpec { units: 2, ..Default::default() }).is_err());
        assert!(generate_panel(&DgpSpec { years: 9, ..Default::default() }).is_err());
        let early = Effect::Additive { schedule: vec![(2000, 1.0)] };
        assert!(generate_panel(&DgpSpec { effect: early, ..Default::default() }).is_err());
    }

    #[test]
    fn level_step_scales_post_period() {
        let spec = DgpSpec { effect: Effect::LevelStep { fraction: -0.05 }, ..Default::default() };
        let g = generate_panel(&spec).unwrap();
        let t0 = (spec.treatment_year - spec.start_year) as usize;
        assert!(g.effect[..t0].iter().all(|e| *e == 0.0));
        for t in t0..spec.years {
            assert!((g.effect[t] / g.counterfactual[t] + 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn growth_drag_lowers_growth_exactly() {
        let spec = DgpSpec { effect: Effect::GrowthDrag { points: 1.5 }, ..Default::default() };
        let g = generate_panel(&spec).unwrap();
        let t0 = (spec.treatment_year - spec.start_year) as usize;
        let actual: Vec<f64> = g.counterfactual.iter().zip(&g.effect).map(|(c, e)| c + e).collect();
        for t in t0..spec.years {
            let ga = 100.0 * (actual[t] / actual[t - 1] - 1.0);
            let gc = 100.0 * (g.counterfactual[t] / g.counterfactual[t - 1] - 1.0);
            assert!((gc - ga - 1.5).abs() < 1e-9, "{gc} {ga}");
        }
    }

    #[test]
    fn grid_oracle_exact_match_and_vertex() {
        let x0 = Matrix::from_columns(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.3, 0.4]]);
        let (w, f) = grid_oracle(&[0.3, 0.4], &x0, &[0.5, 0.5], 0.1).unwrap();
        assert_eq!(w, vec![0.0, 0.0, 1.0]);
        assert!(f < 1e-15);
        let (w, _) = grid_oracle(&[0.9, 0.1], &x0, &[0.5, 0.5], 1.0).unwrap();
        assert_eq!(w, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn grid_oracle_matches_naive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let k = 3;
            let j = 4;
            let x0 = Matrix::from_columns(
                &(0..j).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<_>>(),
            );
            let x1: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v = [0.2, 0.3, 0.5];
            let m = 20;
            let mut best = f64::INFINITY;
            for a in 0..=m {
                for b in 0..=m - a {
                    for c in 0..=m - a - b {
                        let w = [a, b, c, m - a - b - c].map(|n| n as f64 / m as f64);
                        best = best.min(inner_objective(&x1, &x0, &v, &w));
                    }
                }
            }
            let (_, f) = grid_oracle(&x1, &x0, &v, 0.05).unwrap();
            assert!((f - best).abs() < 1e-12, "{f} vs {best}");
            let s = solve_inner(&x1, &x0, &v, 1e-12).unwrap();
            assert!(s.objective <= f + 1e-12);
        }
    }

    #[test]
    fn grid_oracle_guards() {
        let x0 = Matrix::zeros(2, 7);
        assert!(grid_oracle(&[0.0, 0.0], &x0, &[0.5, 0.5], 0.1).is_err());
        let x0 = Matrix::zeros(2, 2);
        assert!(grid_oracle(&[0.0, 0.0], &x0, &[0.5, 0.5], 0.0).is_err());
        assert!(grid_oracle(&[0.0, 0.0], &x0, &[0.5, 0.5], 0.3).is_err());
    }

    #[test]
    fn kalman_oracle_single_step() {
        let k = scalar_local_level(&[2.0], 1.0, 0.5, 0.0, 1.0);
        assert!((k.filtered_mean[0] - 1.0).abs() < 1e-15);
        assert!((k.filtered_var[0] - 0.5).abs() < 1e-15);
        assert_eq!(k.smoothed_mean, k.filtered_mean);
    }

    #[test]
    fn dense_hp_keeps_lines() {
        let y: Vec<f64> = (0..10).map(|t| 3.0 + 0.5 * t as f64).collect();
        let tau = dense_hp_trend(&y, 100.0).unwrap();
        for (a, b) in tau.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
