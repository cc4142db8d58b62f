//! Hodrick–Prescott trends, potential-output paths and shortfall decomposition.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::panel::{growth_of, YearRange, YearSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpFilter {
    pub trend: Vec<f64>,
    pub cycle: Vec<f64>,
}

/// Cholesky factorisation and solve for a symmetric positive-definite band
/// matrix with two sub-diagonals, stored as `(diag, sub1, sub2)`.
fn penta_solve(diag: &[f64], sub1: &[f64], sub2: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    // Cholesky factor: l0 on the diagonal, l1 and l2 on the two sub-diagonals.
    let mut l0 = vec![0.0; n];
    let mut l1 = vec![0.0; n];
    let mut l2 = vec![0.0; n];
    for i in 0..n {
        if i >= 2 {
            l2[i] = sub2[i - 2] / l0[i - 2];
        }
        if i >= 1 {
            let mut s = sub1[i - 1];
            if i >= 2 {
                s -= l2[i] * l1[i - 1];
            }
            l1[i] = s / l0[i - 1];
        }
        let d = diag[i] - l1[i] * l1[i] - l2[i] * l2[i];
        if !(d > 0.0) {
            return None;
        }
        l0[i] = math::sqrt(d);
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut s = rhs[i];
        if i >= 1 {
            s -= l1[i] * z[i - 1];
        }
        if i >= 2 {
            s -= l2[i] * z[i - 2];
        }
        z[i] = s / l0[i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        if i + 1 < n {
            s -= l1[i + 1] * x[i + 1];
        }
        if i + 2 < n {
            s -= l2[i + 2] * x[i + 2];
        }
        x[i] = s / l0[i];
    }
    Some(x)
}

/// Hodrick–Prescott filter.
///
/// The trend minimises `Σ (y_t − τ_t)² + λ Σ (Δ²τ_t)²`. Instead of
/// `(I + λ DᵀD) τ = y` the equivalent system `(I/λ + D Dᵀ) u = D y` is solved,
/// with `cycle = Dᵀ u`. Both are pentadiagonal; the second stays well
/// conditioned for very large `λ`.
pub fn hp_filter(y: &[f64], lambda: f64) -> Result<HpFilter> {
    let n = y.len();
    if n < 4 {
        return Err(Error::Validation(format!("HP filter needs at least 4 observations, got {n}")));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Validation(format!("HP smoothing parameter must be positive, got {lambda}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("HP filter input".into()));
    }
    let m = n - 2;
    // D D ᵀ has 6 on the diagonal, −4 next to it and 1 two away.
    let diag = vec![6.0 + 1.0 / lambda; m];
    let sub1 = vec![-4.0; m.saturating_sub(1)];
    let sub2 = vec![1.0; m.saturating_sub(2)];
    let dy: Vec<f64> = (0..m).map(|i| y[i] - 2.0 * y[i + 1] + y[i + 2]).collect();
    let u = penta_solve(&diag, &sub1, &sub2, &dy).ok_or_else(|| Error::Degenerate("HP system".into()))?;
    let mut cycle = vec![0.0; n];
    for (i, ui) in u.iter().enumerate() {
        cycle[i] += ui;
        cycle[i + 1] -= 2.0 * ui;
        cycle[i + 2] += ui;
    }
    let trend = y.iter().zip(&cycle).map(|(a, c)| a - c).collect();
    Ok(HpFilter { trend, cycle })
}

/// Geometric path `anchor · (1 + g/100)^(t − anchor_year)` over `years`.
pub fn potential_path(anchor_year: i32, anchor_value: f64, growth_pct: f64, years: YearRange) -> Result<YearSeries> {
    if !growth_pct.is_finite() || !anchor_value.is_finite() {
        return Err(Error::NonFinite("potential path inputs".into()));
    }
    let r = 1.0 + growth_pct / 100.0;
    let values = years.iter().map(|t| anchor_value * math::powi(r, t - anchor_year)).collect();
    Ok(YearSeries::new(years.start, values))
}

/// Converts aggregate growth to per-head growth given population growth, both in percent.
pub fn per_capita_growth(aggregate_pct: f64, population_pct: f64) -> f64 {
    100.0 * ((1.0 + aggregate_pct / 100.0) / (1.0 + population_pct / 100.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortfallYear {
    pub year: i32,
    pub actual: f64,
    pub synthetic: f64,
    pub potential: f64,
    pub total: f64,
    pub internal: f64,
    pub external: f64,
    pub internal_share: Option<f64>,
    pub external_share: Option<f64>,
    /// Why the year is left out of period averages.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortfall {
    pub window: YearRange,
    pub years: Vec<ShortfallYear>,
    /// `Σ internal / Σ total` over unflagged years.
    pub internal_share: f64,
    pub external_share: f64,
    /// Unweighted mean of unflagged yearly internal shares.
    pub mean_yearly_internal_share: f64,
}

/// Splits the gap to potential into an internal part (synthetic − actual) and
/// an external part (potential − synthetic).
///
/// Years with no shortfall, or whose shares fall outside `[0, 1]`, are flagged
/// and excluded from the period shares rather than clipped.
pub fn decompose_shortfall(
    actual: &YearSeries,
    synthetic: &YearSeries,
    potential: &YearSeries,
    window: YearRange,
) -> Result<Shortfall> {
    let a = actual.window(window)?;
    let s = synthetic.window(window)?;
    let p = potential.window(window)?;
    let mut years = Vec::with_capacity(window.len());
    let (mut sum_int, mut sum_tot, mut share_sum, mut kept) = (0.0, 0.0, 0.0, 0usize);
    for (i, year) in window.iter().enumerate() {
        let total = p[i] - a[i];
        let internal = s[i] - a[i];
        let external = p[i] - s[i];
        let (mut is, mut es, mut flag) = (None, None, None);
        if total > 0.0 {
            let share = internal / total;
            is = Some(share);
            es = Some(1.0 - share);
            if !(0.0..=1.0).contains(&share) {
                flag = Some(format!("internal share {share:.4} outside [0, 1]"));
            }
        } else {
            flag = Some(format!("no shortfall (total {total:.4})"));
        }
        if flag.is_none() {
            sum_int += internal;
            sum_tot += total;
            share_sum += is.unwrap_or(0.0);
            kept += 1;
        }
        years.push(ShortfallYear {
            year,
            actual: a[i],
            synthetic: s[i],
            potential: p[i],
            total,
            internal,
            external,
            internal_share: is,
            external_share: es,
            flag,
        });
    }
    if kept == 0 {
        return Err(Error::Degenerate(format!("no year in {window} has a usable shortfall")));
    }
    let internal_share = sum_int / sum_tot;
    Ok(Shortfall {
        window,
        years,
        internal_share,
        external_share: 1.0 - internal_share,
        mean_yearly_internal_share: share_sum / kept as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSplit {
    /// Years whose growth rates are averaged.
    pub growth_years: YearRange,
    pub actual_growth: f64,
    pub synthetic_growth: f64,
    pub potential_growth: f64,
    /// Synthetic minus actual mean growth, percentage points.
    pub internal_pp: f64,
    /// Potential minus synthetic mean growth, percentage points.
    pub external_pp: f64,
}

impl GrowthSplit {
    pub fn internal_fraction(&self) -> f64 {
        self.internal_pp / (self.internal_pp + self.external_pp)
    }
}

/// Mean-growth accounting over the level window `window`; growth rates run
/// from `window.start + 1` to `window.end`.
pub fn growth_decomposition(
    actual: &YearSeries,
    synthetic: &YearSeries,
    potential_growth: f64,
    window: YearRange,
) -> Result<GrowthSplit> {
    if window.len() < 2 {
        return Err(Error::InvalidWindow(format!("{window} has fewer than two years")));
    }
    let mean = |x: Vec<f64>| x.iter().sum::<f64>() / x.len() as f64;
    let ga = mean(growth_of(actual.window(window)?).map_err(|_| Error::NonPositive {
        unit: "actual".into(),
        variable: "outcome".into(),
        year: window.start,
    })?);
    let gs = mean(growth_of(synthetic.window(window)?).map_err(|_| Error::NonPositive {
        unit: "synthetic".into(),
        variable: "outcome".into(),
        year: window.start,
    })?);
    Ok(GrowthSplit {
        growth_years: YearRange { start: window.start + 1, end: window.end },
        actual_growth: ga,
        synthetic_growth: gs,
        potential_growth,
        internal_pp: gs - ga,
        external_pp: potential_growth - gs,
    })
}

/// Where the potential path starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// Actual outcome in the treatment year.
    Actual,
    /// HP trend of the actual outcome in the treatment year.
    Trend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionOptions {
    pub lambda: f64,
    /// Potential growth of the outcome, percent per year.
    pub potential_growth: f64,
    pub anchor: Anchor,
    /// Level window; its first year is the treatment year.
    pub window: YearRange,
}

/// Levels, trends and both decompositions for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendDecomposition {
    pub options: DecompositionOptions,
    pub actual_trend: YearSeries,
    pub synthetic_trend: YearSeries,
    pub potential: YearSeries,
    /// Shares computed on the raw paths.
    pub levels: Shortfall,
    /// Shares computed on HP trends; `None` when every trend year is degenerate.
    pub trends: Option<Shortfall>,
    pub growth: GrowthSplit,
}

pub fn decompose(actual: &YearSeries, synthetic: &YearSeries, opts: &DecompositionOptions) -> Result<TrendDecomposition> {
    if actual.range() != synthetic.range() {
        return Err(Error::Shape("actual and synthetic paths cover different years".into()));
    }
    if !actual.range().contains_range(&opts.window) {
        return Err(Error::InvalidWindow(format!("{} not inside {}", opts.window, actual.range())));
    }
    let at = hp_filter(&actual.values, opts.lambda)?;
    let st = hp_filter(&synthetic.values, opts.lambda)?;
    let actual_trend = YearSeries::new(actual.start, at.trend);
    let synthetic_trend = YearSeries::new(synthetic.start, st.trend);
    let t0 = opts.window.start;
    let anchor_value = match opts.anchor {
        Anchor::Actual => actual.get(t0),
        Anchor::Trend => actual_trend.get(t0),
    }
    .ok_or_else(|| Error::InvalidWindow(format!("no value for anchor year {t0}")))?;
    let potential = potential_path(t0, anchor_value, opts.potential_growth, opts.window)?;
    let levels = decompose_shortfall(actual, synthetic, &potential, opts.window)?;
    let trends = decompose_shortfall(&actual_trend, &synthetic_trend, &potential, opts.window).ok();
    let growth = growth_decomposition(actual, synthetic, opts.potential_growth, opts.window)?;
    Ok(TrendDecomposition { options: opts.clone(), actual_trend, synthetic_trend, potential, levels, trends, growth })
}
