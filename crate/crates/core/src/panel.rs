//! The country-year panel and the matrices built from it.
//!
//! A [`Panel`] is immutable once built. Units with a gap in any registered
//! variable are kept but flagged incomplete; donor pool resolution drops them
//! with a report line instead of imputing.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;

/// Inclusive range of calendar years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct YearRange {
    pub start: i32,
    pub end: i32,
}

impl YearRange {
    pub fn new(start: i32, end: i32) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidWindow(format!("{start}-{end} is empty")));
        }
        Ok(YearRange { start, end })
    }

    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, year: i32) -> bool {
        self.start <= year && year <= self.end
    }

    pub fn contains_range(&self, other: &YearRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &YearRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn iter(&self) -> impl Iterator<Item = i32> {
        self.start..=self.end
    }
}

impl fmt::Display for YearRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

/// A contiguous yearly series starting at `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearSeries {
    pub start: i32,
    pub values: Vec<f64>,
}

impl YearSeries {
    pub fn new(start: i32, values: Vec<f64>) -> Self {
        YearSeries { start, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> i32 {
        self.start + self.values.len() as i32 - 1
    }

    pub fn range(&self) -> YearRange {
        YearRange { start: self.start, end: self.end() }
    }

    pub fn years(&self) -> impl Iterator<Item = i32> + '_ {
        (0..self.values.len()).map(move |i| self.start + i as i32)
    }

    pub fn get(&self, year: i32) -> Option<f64> {
        if year < self.start {
            return None;
        }
        self.values.get((year - self.start) as usize).copied()
    }

    /// Values over `window`; errors if the window is not fully covered.
    pub fn window(&self, window: YearRange) -> Result<&[f64]> {
        if window.start < self.start || window.end > self.end() {
            return Err(Error::InvalidWindow(format!(
                "{window} not covered by series {}-{}",
                self.start,
                self.end()
            )));
        }
        let a = (window.start - self.start) as usize;
        Ok(&self.values[a..a + window.len()])
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.years().zip(self.values.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableInfo {
    pub name: String,
    /// Unit-of-measure tag, e.g. "constant 2015 US$".
    pub measure: Option<String>,
}

/// Rectangular unit × variable × year dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    units: Vec<String>,
    variables: Vec<VariableInfo>,
    years: YearRange,
    cells: Vec<Option<f64>>,
    incomplete: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub unit: String,
    pub reasons: Vec<String>,
}

/// What happened during ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub units: usize,
    pub variables: usize,
    pub years: YearRange,
    pub observations: usize,
    pub incomplete: Vec<Exclusion>,
}

impl Panel {
    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn variables(&self) -> &[VariableInfo] {
        &self.variables
    }

    pub fn years(&self) -> YearRange {
        self.years
    }

    pub fn has_unit(&self, unit: &str) -> bool {
        self.unit_index(unit).is_some()
    }

    pub fn has_variable(&self, variable: &str) -> bool {
        self.var_index(variable).is_some()
    }

    pub fn is_complete(&self, unit: &str) -> bool {
        self.has_unit(unit) && !self.incomplete.contains_key(unit)
    }

    /// Units flagged incomplete, with reasons.
    pub fn incomplete_units(&self) -> &BTreeMap<String, Vec<String>> {
        &self.incomplete
    }

    pub fn measure(&self, variable: &str) -> Option<&str> {
        self.var_index(variable).and_then(|v| self.variables[v].measure.as_deref())
    }

    fn unit_index(&self, unit: &str) -> Option<usize> {
        self.units.binary_search_by(|u| u.as_str().cmp(unit)).ok()
    }

    fn var_index(&self, variable: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == variable)
    }

    fn cell(&self, u: usize, v: usize, year: i32) -> Option<f64> {
        if !self.years.contains(year) {
            return None;
        }
        let t = (year - self.years.start) as usize;
        self.cells[(u * self.variables.len() + v) * self.years.len() + t]
    }

    pub fn value(&self, unit: &str, variable: &str, year: i32) -> Option<f64> {
        let u = self.unit_index(unit)?;
        let v = self.var_index(variable)?;
        self.cell(u, v, year)
    }

    /// Values over `window`; errors name the unit and variable if any year is missing.
    pub fn series(&self, unit: &str, variable: &str, window: YearRange) -> Result<Vec<f64>> {
        let u = self.unit_index(unit).ok_or_else(|| Error::UnknownUnit(unit.to_string()))?;
        let v = self
            .var_index(variable)
            .ok_or_else(|| Error::UnknownVariable(variable.to_string()))?;
        window
            .iter()
            .map(|y| {
                self.cell(u, v, y).ok_or_else(|| Error::MissingSeries {
                    unit: unit.to_string(),
                    variable: variable.to_string(),
                })
            })
            .collect()
    }

    pub fn year_series(&self, unit: &str, variable: &str, window: YearRange) -> Result<YearSeries> {
        Ok(YearSeries::new(window.start, self.series(unit, variable, window)?))
    }

    /// Every stored observation in canonical (unit, variable, year) order.
    pub fn observations(&self) -> impl Iterator<Item = (&str, &str, i32, f64)> + '_ {
        let nv = self.variables.len();
        let nt = self.years.len();
        self.units.iter().enumerate().flat_map(move |(u, unit)| {
            self.variables.iter().enumerate().flat_map(move |(v, var)| {
                (0..nt).filter_map(move |t| {
                    self.cells[(u * nv + v) * nt + t]
                        .map(|x| (unit.as_str(), var.name.as_str(), self.years.start + t as i32, x))
                })
            })
        })
    }

    pub fn report(&self) -> ValidationReport {
        ValidationReport {
            units: self.units.len(),
            variables: self.variables.len(),
            years: self.years,
            observations: self.cells.iter().filter(|c| c.is_some()).count(),
            incomplete: self
                .incomplete
                .iter()
                .map(|(u, r)| Exclusion { unit: u.clone(), reasons: r.clone() })
                .collect(),
        }
    }
}

/// Collects long-format observations and assembles a [`Panel`].
#[derive(Debug, Default, Clone)]
pub struct PanelBuilder {
    obs: BTreeMap<(String, String, i32), f64>,
    rejected: BTreeMap<String, Vec<String>>,
    measures: BTreeMap<String, String>,
    var_order: Vec<String>,
}

impl PanelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one observation. Non-finite values are not stored; the unit is
    /// flagged incomplete instead.
    pub fn push(&mut self, unit: &str, variable: &str, year: i32, value: f64) -> Result<()> {
        if !self.var_order.iter().any(|v| v == variable) {
            self.var_order.push(variable.to_string());
        }
        if !value.is_finite() {
            self.rejected
                .entry(unit.to_string())
                .or_default()
                .push(format!("non-finite `{variable}` in {year}"));
            return Ok(());
        }
        let key = (unit.to_string(), variable.to_string(), year);
        if self.obs.contains_key(&key) {
            return Err(Error::Validation(format!(
                "duplicate observation for unit `{unit}`, variable `{variable}`, year {year}"
            )));
        }
        self.obs.insert(key, value);
        Ok(())
    }

    pub fn set_measure(&mut self, variable: &str, measure: &str) {
        self.measures.insert(variable.to_string(), measure.to_string());
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn build(self) -> Result<(Panel, ValidationReport)> {
        if self.obs.is_empty() {
            return Err(Error::Validation("no observations".into()));
        }
        let units: Vec<String> = self
            .obs
            .keys()
            .map(|(u, _, _)| u.clone())
            .chain(self.rejected.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let variables: Vec<VariableInfo> = self
            .var_order
            .iter()
            .map(|v| VariableInfo { name: v.clone(), measure: self.measures.get(v).cloned() })
            .collect();
        let start = self.obs.keys().map(|k| k.2).min().unwrap_or(0);
        let end = self.obs.keys().map(|k| k.2).max().unwrap_or(0);
        let years = YearRange::new(start, end)?;
        let (nv, nt) = (variables.len(), years.len());
        let mut cells = vec![None; units.len() * nv * nt];
        for ((u, v, y), x) in &self.obs {
            let ui = units.binary_search(u).expect("unit collected above");
            let vi = variables.iter().position(|w| &w.name == v).expect("variable registered");
            cells[(ui * nv + vi) * nt + (*y - start) as usize] = Some(*x);
        }
        let mut incomplete = self.rejected;
        for (ui, unit) in units.iter().enumerate() {
            for (vi, var) in variables.iter().enumerate() {
                let base = (ui * nv + vi) * nt;
                let missing: Vec<i32> =
                    (0..nt).filter(|&t| cells[base + t].is_none()).map(|t| start + t as i32).collect();
                if missing.is_empty() {
                    continue;
                }
                let reason = if missing.len() == nt {
                    format!("no `{}` series", var.name)
                } else {
                    format!("`{}` missing in {}", var.name, compact_years(&missing))
                };
                incomplete.entry(unit.clone()).or_default().push(reason);
            }
        }
        for reasons in incomplete.values_mut() {
            reasons.sort();
            reasons.dedup();
        }
        let panel = Panel { units, variables, years, cells, incomplete };
        let report = panel.report();
        Ok((panel, report))
    }
}

fn compact_years(years: &[i32]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < years.len() {
        let mut j = i;
        while j + 1 < years.len() && years[j + 1] == years[j] + 1 {
            j += 1;
        }
        if !out.is_empty() {
            out.push_str(", ");
        }
        if i == j {
            out.push_str(&format!("{}", years[i]));
        } else {
            out.push_str(&format!("{}-{}", years[i], years[j]));
        }
        i = j + 1;
    }
    out
}

/// How a predictor is summarised over the pre-treatment period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over the problem's whole pre-treatment window.
    Mean,
    /// Mean over an explicit sub-window of the pre-treatment period.
    MeanOver { window: YearRange },
    /// Mean of the values at the listed years.
    AtYears { years: Vec<i32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub variable: String,
    #[serde(default = "default_aggregation")]
    pub aggregation: Aggregation,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_aggregation() -> Aggregation {
    Aggregation::Mean
}

fn default_true() -> bool {
    true
}

impl PredictorSpec {
    pub fn mean(variable: &str) -> Self {
        PredictorSpec { variable: variable.to_string(), aggregation: Aggregation::Mean, standardize: true }
    }

    /// Years the predictor is aggregated over, checked against the pre-window.
    pub fn years(&self, pre_window: YearRange) -> Result<Vec<i32>> {
        let years: Vec<i32> = match &self.aggregation {
            Aggregation::Mean => pre_window.iter().collect(),
            Aggregation::MeanOver { window } => window.iter().collect(),
            Aggregation::AtYears { years } => years.clone(),
        };
        if years.is_empty() {
            return Err(Error::InvalidWindow(format!("predictor `{}` has no years", self.variable)));
        }
        if let Some(y) = years.iter().find(|y| !pre_window.contains(**y)) {
            return Err(Error::InvalidWindow(format!(
                "predictor `{}` uses {y}, outside pre-treatment window {pre_window}",
                self.variable
            )));
        }
        Ok(years)
    }

    fn aggregate(&self, panel: &Panel, unit: &str, pre_window: YearRange) -> Result<f64> {
        let years = self.years(pre_window)?;
        let mut s = 0.0;
        for &y in &years {
            s += panel.value(unit, &self.variable, y).ok_or_else(|| Error::MissingSeries {
                unit: unit.to_string(),
                variable: self.variable.clone(),
            })?;
        }
        Ok(s / years.len() as f64)
    }
}

/// Named donor pool. An empty `include` list means every panel unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorPoolSpec {
    pub name: String,
    #[serde(default)]
    pub include: Vec<String>,
    #[serde(default)]
    pub exclude: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPool {
    pub donors: Vec<String>,
    pub dropped: Vec<Exclusion>,
}

impl DonorPoolSpec {
    pub fn new(name: &str, include: &[&str]) -> Self {
        DonorPoolSpec {
            name: name.to_string(),
            include: include.iter().map(|s| s.to_string()).collect(),
            exclude: Vec::new(),
        }
    }

    /// Resolves the pool against a panel. Donors lacking any required
    /// variable over `window`, or flagged incomplete, are dropped and reported.
    pub fn resolve(
        &self,
        panel: &Panel,
        treated: &str,
        required: &[&str],
        window: YearRange,
    ) -> Result<ResolvedPool> {
        if self.include.iter().any(|u| u == treated) {
            return Err(Error::Validation(format!("treated unit `{treated}` listed in its own donor pool")));
        }
        if let Some(u) = self.include.iter().find(|u| self.exclude.contains(u)) {
            return Err(Error::Validation(format!("unit `{u}` is both included and excluded")));
        }
        let candidates: Vec<String> = if self.include.is_empty() {
            panel.units().iter().filter(|u| u.as_str() != treated).cloned().collect()
        } else {
            self.include.clone()
        };
        let mut donors = Vec::new();
        let mut dropped = Vec::new();
        for unit in candidates {
            if self.exclude.contains(&unit) {
                continue;
            }
            if !panel.has_unit(&unit) {
                return Err(Error::UnknownUnit(unit));
            }
            let mut reasons = Vec::new();
            if let Some(r) = panel.incomplete_units().get(&unit) {
                reasons.extend(r.iter().cloned());
            }
            for var in required {
                if panel.series(&unit, var, window).is_err() {
                    reasons.push(format!("`{var}` incomplete over {window}"));
                }
            }
            if reasons.is_empty() {
                donors.push(unit);
            } else {
                reasons.sort();
                reasons.dedup();
                dropped.push(Exclusion { unit, reasons });
            }
        }
        Ok(ResolvedPool { donors, dropped })
    }
}

/// Predictor (X) and pre-period outcome (Z) matrices for one treated unit.
/// Column `j` of `x0`/`z0` is `donors[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorData {
    pub treated: String,
    pub donors: Vec<String>,
    pub predictors: Vec<String>,
    pub pre_window: YearRange,
    /// k-vector, standardized where requested.
    pub x1: Vec<f64>,
    /// k × J
    pub x0: Matrix,
    /// Unstandardized predictor values.
    pub raw_x1: Vec<f64>,
    pub raw_x0: Matrix,
    /// T0-vector of pre-window outcomes.
    pub z1: Vec<f64>,
    /// T0 × J
    pub z0: Matrix,
}

/// Builds X and Z for `treated` against `donors`.
///
/// Standardized predictor rows are z-scored across the treated unit and the
/// donors together (population variance).
pub fn build_predictor_matrix(
    panel: &Panel,
    specs: &[PredictorSpec],
    donors: &[String],
    treated: &str,
    outcome: &str,
    pre_window: YearRange,
) -> Result<PredictorData> {
    if specs.is_empty() {
        return Err(Error::Validation("at least one predictor required".into()));
    }
    if donors.len() < 2 {
        return Err(Error::TooFewDonors { required: 2, available: donors.len() });
    }
    if donors.iter().any(|d| d == treated) {
        return Err(Error::Validation(format!("treated unit `{treated}` listed among donors")));
    }
    if !panel.has_unit(treated) {
        return Err(Error::UnknownUnit(treated.to_string()));
    }
    if !panel.years().contains_range(&pre_window) {
        return Err(Error::InvalidWindow(format!(
            "pre-window {pre_window} outside panel years {}",
            panel.years()
        )));
    }
    let k = specs.len();
    let j = donors.len();
    let mut raw_x1 = vec![0.0; k];
    let mut raw_x0 = Matrix::zeros(k, j);
    for (i, spec) in specs.iter().enumerate() {
        if !panel.has_variable(&spec.variable) {
            return Err(Error::UnknownVariable(spec.variable.clone()));
        }
        raw_x1[i] = spec.aggregate(panel, treated, pre_window)?;
        for (c, d) in donors.iter().enumerate() {
            raw_x0[(i, c)] = spec.aggregate(panel, d, pre_window)?;
        }
    }
    let mut x1 = raw_x1.clone();
    let mut x0 = raw_x0.clone();
    for (i, spec) in specs.iter().enumerate() {
        if !spec.standardize {
            continue;
        }
        let n = (j + 1) as f64;
        let mean = (raw_x1[i] + raw_x0.row(i).iter().sum::<f64>()) / n;
        let var = ((raw_x1[i] - mean) * (raw_x1[i] - mean)
            + raw_x0.row(i).iter().map(|x| (x - mean) * (x - mean)).sum::<f64>())
            / n;
        let sd = math::sqrt(var);
        if !(sd > 1e-12 * mean.abs().max(1e-300)) {
            return Err(Error::ZeroVariance { variable: spec.variable.clone() });
        }
        x1[i] = (raw_x1[i] - mean) / sd;
        for c in 0..j {
            x0[(i, c)] = (raw_x0[(i, c)] - mean) / sd;
        }
    }
    let z1 = panel.series(treated, outcome, pre_window)?;
    let mut z0 = Matrix::zeros(pre_window.len(), j);
    for (c, d) in donors.iter().enumerate() {
        let col = panel.series(d, outcome, pre_window)?;
        for (t, v) in col.into_iter().enumerate() {
            z0[(t, c)] = v;
        }
    }
    Ok(PredictorData {
        treated: treated.to_string(),
        donors: donors.to_vec(),
        predictors: specs.iter().map(|s| s.variable.clone()).collect(),
        pre_window,
        x1,
        x0,
        raw_x1,
        raw_x0,
        z1,
        z0,
    })
}

/// Year-on-year percent changes `100 (y_t / y_{t-1} - 1)`; length is one less
/// than the input.
pub fn growth_of(values: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = values.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::NonPositive { unit: String::new(), variable: String::new(), year: i as i32 });
    }
    Ok(values.windows(2).map(|w| 100.0 * (w[1] / w[0] - 1.0)).collect())
}

/// Yearly percent changes of `unit`'s `variable` over `window`.
pub fn growth_rates(panel: &Panel, unit: &str, variable: &str, window: YearRange) -> Result<Vec<f64>> {
    let values = panel.series(unit, variable, window)?;
    for (y, v) in window.iter().zip(&values) {
        if !(*v > 0.0) {
            return Err(Error::NonPositive { unit: unit.to_string(), variable: variable.to_string(), year: y });
        }
    }
    growth_of(&values)
}
