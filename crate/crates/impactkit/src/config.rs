//! Run configuration: JSON file, command-line overrides and defaults.
//!
//! Precedence is flags, then the file, then defaults. The output directory
//! falls back to `IMPACTKIT_OUT` before the built-in default.

use std::path::{Path, PathBuf};

use impactkit_core::bsts::{BstsSpec, Priors, TrendKind};
use impactkit_core::oracle::DgpSpec;
use impactkit_core::panel::{DonorPoolSpec, PredictorSpec, ResolvedPool, ValidationReport};
use impactkit_core::trend::Anchor;
use impactkit_core::{Panel, ScmProblem, SolverOptions, YearRange};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::csvio::{bundled_snapshot, read_panel, SchemaMapping};
use crate::error::{AppError, AppResult};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "IMPACTKIT_OUT";
pub const DEFAULT_OUT: &str = "impactkit-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Long-format panel CSV; relative paths resolve against the config file.
    /// Unset means the bundled snapshot.
    pub panel: Option<PathBuf>,
    /// Column mapping JSON for the panel file.
    pub schema: Option<PathBuf>,
    pub outcome: String,
    pub treated: Option<String>,
    pub treatment_year: Option<i32>,
    /// Unset means every panel year.
    pub sample: Option<YearRange>,
    pub pool: DonorPoolSpec,
    /// Empty means the pre-period mean of every panel variable.
    pub predictors: Vec<PredictorSpec>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub solver: SolverSettings,
    pub robustness: RobustnessSettings,
    pub decompose: DecomposeSettings,
    pub bsts: BstsSettings,
    pub simulate: DgpSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            panel: None,
            schema: None,
            outcome: "gdp_pc".into(),
            treated: None,
            treatment_year: None,
            sample: None,
            pool: DonorPoolSpec { name: "all".into(), include: Vec::new(), exclude: Vec::new() },
            predictors: Vec::new(),
            seed: 2014,
            out: None,
            jobs: None,
            solver: SolverSettings::default(),
            robustness: RobustnessSettings::default(),
            decompose: DecomposeSettings::default(),
            bsts: BstsSettings::default(),
            simulate: DgpSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub starts: usize,
    pub max_evals: usize,
    pub ftol: f64,
    pub inner_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let o = SolverOptions::default();
        SolverSettings { starts: o.starts, max_evals: o.max_evals, ftol: o.ftol, inner_tol: o.inner_tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSettings {
    /// In-time placebo years; the first one also gets placebo p-values.
    pub placebo_years: Vec<i32>,
    /// Placebos with pre-RMSPE above this multiple of the treated one are filtered.
    pub filter_multiplier: f64,
    /// Unset means the first half of the pre-period.
    pub cv_train: Option<YearRange>,
    /// Unset means the rest of the pre-period.
    pub cv_validate: Option<YearRange>,
}

impl Default for RobustnessSettings {
    fn default() -> Self {
        RobustnessSettings {
            placebo_years: vec![2006, 2000, 2005, 2008],
            filter_multiplier: 5.0,
            cv_train: None,
            cv_validate: None,
        }
    }
}

/// What the configured potential growth rate measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialBasis {
    /// Growth of the outcome itself.
    Outcome,
    /// Aggregate growth, converted to per-head growth with the treated unit's
    /// mean population growth over the decomposition years.
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeSettings {
    pub lambda: f64,
    /// Potential growth in percent per year.
    pub potential_growth: f64,
    pub potential_basis: PotentialBasis,
    /// Population growth variable used by the aggregate basis.
    pub population_growth: String,
    pub anchor: Anchor,
    /// Unset means treatment year to sample end.
    pub window: Option<YearRange>,
}

impl Default for DecomposeSettings {
    fn default() -> Self {
        DecomposeSettings {
            lambda: 100.0,
            potential_growth: 4.5,
            potential_basis: PotentialBasis::Aggregate,
            population_growth: "pop_growth".into(),
            anchor: Anchor::Actual,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BstsSettings {
    pub trend: TrendKind,
    pub priors: Priors,
    pub draws: usize,
    pub burn_in: usize,
    pub chains: usize,
    /// Last fitted year; unset means the treatment year.
    pub pre_end: Option<i32>,
    /// Control series; unset means the resolved donor pool.
    pub controls: Option<Vec<String>>,
    /// Also write every counterfactual draw.
    pub write_draws: bool,
}

impl Default for BstsSettings {
    fn default() -> Self {
        let s = BstsSpec::default();
        BstsSettings {
            trend: s.trend,
            priors: s.priors,
            draws: s.draws,
            burn_in: s.burn_in,
            chains: s.chains,
            pre_end: None,
            controls: None,
            write_draws: false,
        }
    }
}

/// Command-line values that replace file values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub panel: Option<PathBuf>,
    pub treated: Option<String>,
    pub treatment_year: Option<i32>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

fn invalid(msg: impl Into<String>) -> AppError {
    AppError::Invalid(msg.into())
}

impl RunConfig {
    /// Reads a config file; relative paths in it are rebased on its directory.
    pub fn from_file(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| AppError::Config { path: path.into(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        rebase(&mut cfg.panel);
        rebase(&mut cfg.schema);
        rebase(&mut cfg.out);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(p) = &o.panel {
            self.panel = Some(p.clone());
        }
        if let Some(t) = &o.treated {
            self.treated = Some(t.clone());
        }
        if let Some(y) = o.treatment_year {
            self.treatment_year = Some(y);
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out {
            self.out = Some(d.clone());
        }
        if let Some(j) = o.jobs {
            self.jobs = Some(j);
        }
    }

    /// Output directory after flag, file and environment fallbacks.
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.solver;
        SolverOptions { starts: s.starts, seed: self.seed, max_evals: s.max_evals, ftol: s.ftol, inner_tol: s.inner_tol }
    }

    pub fn bsts_spec(&self) -> BstsSpec {
        let b = &self.bsts;
        BstsSpec {
            trend: b.trend,
            priors: b.priors.clone(),
            draws: b.draws,
            burn_in: b.burn_in,
            chains: b.chains,
            seed: self.seed,
        }
    }

    /// Checks that need no data.
    pub fn validate(&self) -> AppResult<()> {
        if self.treated.as_deref().is_none_or(str::is_empty) {
            return Err(invalid("treated unit is required (`treated` or --treated)"));
        }
        if self.treatment_year.is_none() {
            return Err(invalid("treatment year is required (`treatment_year` or --treatment-year)"));
        }
        if self.outcome.is_empty() {
            return Err(invalid("outcome variable is empty"));
        }
        if self.jobs == Some(0) {
            return Err(invalid("jobs must be at least 1"));
        }
        let s = &self.solver;
        if s.max_evals == 0 || !(s.ftol > 0.0) || !(s.inner_tol > 0.0) {
            return Err(invalid("solver needs max_evals > 0 and positive tolerances"));
        }
        let r = &self.robustness;
        if !(r.filter_multiplier > 0.0) {
            return Err(invalid(format!("filter multiplier must be positive, got {}", r.filter_multiplier)));
        }
        if r.cv_train.is_some() != r.cv_validate.is_some() {
            return Err(invalid("set both cv_train and cv_validate or neither"));
        }
        let d = &self.decompose;
        if !(d.lambda > 0.0) {
            return Err(invalid(format!("HP lambda must be positive, got {}", d.lambda)));
        }
        if !d.potential_growth.is_finite() {
            return Err(invalid("potential growth must be finite"));
        }
        self.bsts_spec().validate()?;
        self.simulate.validate()?;
        Ok(())
    }

    /// Loads the panel and checks every stage against it.
    pub fn resolve(self) -> AppResult<Resolved> {
        self.resolve_for(Stages::ALL)
    }

    /// Loads the panel and checks the stages that will run. Defaults for the
    /// other stages are still filled in but not checked against the data.
    pub fn resolve_for(mut self, stages: Stages) -> AppResult<Resolved> {
        self.validate()?;
        let schema = match &self.schema {
            Some(p) => SchemaMapping::from_file(p)?,
            None => SchemaMapping::default(),
        };
        let panel_path = self.panel.clone().unwrap_or_else(bundled_snapshot);
        let bytes = std::fs::read(&panel_path).map_err(|e| AppError::io(&panel_path, e))?;
        let panel_sha256 = hex(&Sha256::digest(&bytes));
        let (panel, report) = read_panel(&panel_path, &schema)?;
        self.panel = Some(panel_path);

        let treated = self.treated.clone().unwrap_or_default();
        let year = self.treatment_year.unwrap_or_default();
        if !panel.has_unit(&treated) {
            return Err(invalid(format!("treated unit `{treated}` not in panel")));
        }
        if !panel.has_variable(&self.outcome) {
            return Err(invalid(format!("outcome `{}` not in panel", self.outcome)));
        }
        let sample = *self.sample.get_or_insert(panel.years());
        if !panel.years().contains_range(&sample) {
            return Err(invalid(format!("sample {sample} outside panel years {}", panel.years())));
        }
        if year <= sample.start + 1 || year > sample.end {
            return Err(invalid(format!("treatment year {year} needs two pre-period years inside {sample}")));
        }
        if self.predictors.is_empty() {
            self.predictors = panel.variables().iter().map(|v| PredictorSpec::mean(&v.name)).collect();
        }
        if let Some(p) = self.predictors.iter().find(|p| !panel.has_variable(&p.variable)) {
            return Err(invalid(format!("predictor `{}` not in panel", p.variable)));
        }
        let pre = YearRange { start: sample.start, end: year - 1 };
        let mut required: Vec<&str> = self.predictors.iter().map(|p| p.variable.as_str()).collect();
        required.push(&self.outcome);
        let pool = self.pool.resolve(&panel, &treated, &required, sample)?;
        if pool.donors.len() < 2 {
            return Err(invalid(format!("donor pool `{}` has {} usable donors", self.pool.name, pool.donors.len())));
        }
        if let Some(u) = panel.incomplete_units().get(&treated) {
            return Err(invalid(format!("treated unit `{treated}` is incomplete: {}", u.join("; "))));
        }

        let r = &mut self.robustness;
        for &y in &r.placebo_years {
            if stages.robustness && (y <= pre.start + 1 || y > pre.end) {
                return Err(invalid(format!("placebo year {y} must leave two pre-period years inside {pre}")));
            }
        }
        if r.cv_train.is_none() {
            let mid = pre.start + pre.len() as i32 / 2 - 1;
            r.cv_train = Some(YearRange { start: pre.start, end: mid });
            r.cv_validate = Some(YearRange { start: mid + 1, end: pre.end });
        }
        let (train, validate) = (r.cv_train.unwrap_or(pre), r.cv_validate.unwrap_or(pre));
        let ordered = pre.contains_range(&train) && pre.contains_range(&validate) && train.end < validate.start;
        if stages.robustness && !ordered {
            return Err(invalid(format!("cv windows {train} / {validate} must be ordered, disjoint and inside {pre}")));
        }

        let d = &mut self.decompose;
        let window = *d.window.get_or_insert(YearRange { start: year, end: sample.end });
        let usable = window.start == year && sample.contains_range(&window) && window.len() >= 2;
        if stages.decompose && !usable {
            return Err(invalid(format!("decomposition window {window} must start at {year} and lie in {sample}")));
        }
        if stages.decompose && d.potential_basis == PotentialBasis::Aggregate && !panel.has_variable(&d.population_growth) {
            return Err(invalid(format!("population growth variable `{}` not in panel", d.population_growth)));
        }

        let b = &mut self.bsts;
        let pre_end = *b.pre_end.get_or_insert(year);
        if stages.bsts && (pre_end >= sample.end || pre_end < sample.start + 9) {
            return Err(invalid(format!("BSTS pre-period end {pre_end} needs ten fitted years and one post year in {sample}")));
        }
        let controls = b.controls.get_or_insert_with(|| pool.donors.clone());
        if let Some(c) = controls.iter().find(|c| stages.bsts && (**c == treated || !panel.has_unit(c))) {
            return Err(invalid(format!("BSTS control `{c}` is the treated unit or not in the panel")));
        }

        let problem = ScmProblem {
            outcome: self.outcome.clone(),
            treated,
            donors: pool.donors.clone(),
            predictors: self.predictors.clone(),
            treatment_year: year,
            sample,
        };
        Ok(Resolved { out: self.out_dir(), config: self, panel, report, pool, problem, panel_sha256 })
    }
}

/// Analysis stages whose settings `resolve_for` checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub robustness: bool,
    pub decompose: bool,
    pub bsts: bool,
}

impl Stages {
    pub const FIT: Stages = Stages { robustness: false, decompose: false, bsts: false };
    pub const ALL: Stages = Stages { robustness: true, decompose: true, bsts: true };
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A validated configuration with its panel loaded.
#[derive(Debug, Clone)]
pub struct Resolved {
    /// Every optional field filled in.
    pub config: RunConfig,
    pub panel: Panel,
    pub report: ValidationReport,
    pub pool: ResolvedPool,
    pub problem: ScmProblem,
    pub panel_sha256: String,
    pub out: PathBuf,
}
