//! Subcommand orchestration and artifact writing.
//!
//! Every JSON artifact wraps its payload as `{"provenance": …, "result": …}`;
//! CSV artifacts start with a `# provenance: …` comment line and SVG plots
//! carry the same record in `<metadata>`.

use std::path::{Path, PathBuf};

use impactkit_core::bsts::{self, Controls, ImpactSummary};
use impactkit_core::linalg::Matrix;
use impactkit_core::oracle::{self, Generated};
use impactkit_core::panel::{Aggregation, DonorPoolSpec, PredictorSpec};
use impactkit_core::robustness::{self, FilteredPlacebo, PValueSeries, RatioTable, POSITIVE_WEIGHT};
use impactkit_core::trend::{self, DecompositionOptions, TrendDecomposition};
use impactkit_core::{scm, Executor, ScmFit, YearRange, YearSeries};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{PotentialBasis, Resolved, RunConfig};
use crate::csvio::write_panel;
use crate::error::{AppError, AppResult};
use crate::exec::Threads;
use crate::svg::{Chart, Layer, ACCENT, BLUE, GREEN, INK, MUTED};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A resolved run plus its worker pool.
#[derive(Debug, Clone)]
pub struct Context {
    pub run: Resolved,
    pub exec: Threads,
}

impl Context {
    pub fn new(run: Resolved) -> Self {
        let exec = run.config.jobs.map(Threads::new).unwrap_or_else(Threads::available);
        Context { run, exec }
    }

    fn sink(&self, command: &str) -> AppResult<Sink> {
        let provenance = json!({
            "tool": TOOL,
            "version": VERSION,
            "command": command,
            "seed": self.run.config.seed,
            "panel_sha256": self.run.panel_sha256,
            "config": self.run.config,
        });
        Sink::new(&self.run.out, provenance)
    }

    fn actual(&self) -> AppResult<YearSeries> {
        let p = &self.run.problem;
        Ok(self.run.panel.year_series(&p.treated, &p.outcome, p.sample)?)
    }
}

/// Writes artifacts into one directory; writes happen on the calling thread only.
#[derive(Debug)]
pub struct Sink {
    dir: PathBuf,
    provenance: serde_json::Value,
    line: String,
    pub written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: &Path, provenance: serde_json::Value) -> AppResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        let line = serde_json::to_string(&provenance)?;
        Ok(Sink { dir: dir.to_path_buf(), provenance, line, written: Vec::new() })
    }

    pub fn provenance(&self) -> &str {
        &self.line
    }

    fn put(&mut self, name: &str, content: &str) -> AppResult<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, content).map_err(|e| AppError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> AppResult<()> {
        let doc = json!({ "provenance": self.provenance, "result": result });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.put(name, &text)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> AppResult<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| AppError::io(&path, e.into());
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        let body = w.into_inner().map_err(|e| AppError::io(&path, e.into_error()))?;
        let text = format!("# provenance: {}\n{}", self.line, String::from_utf8_lossy(&body));
        self.put(name, &text)
    }

    pub fn svg(&mut self, name: &str, chart: &Chart) -> AppResult<()> {
        self.put(name, &chart.render())
    }

    pub fn text(&mut self, name: &str, content: &str) -> AppResult<()> {
        self.put(name, content)
    }

    fn chart(&self, title: &str, x: &str, y: &str) -> Chart {
        Chart::new(title, x, y, &self.line)
    }
}

/// Shortest round-trip text; empty for non-finite values.
pub fn num(x: f64) -> String {
    if x.is_finite() { format!("{x}") } else { String::new() }
}

fn points(s: &YearSeries) -> Vec<(f64, f64)> {
    s.iter().map(|(y, v)| (y as f64, v)).collect()
}

fn rule(year: i32) -> Layer {
    Layer::VRule { x: year as f64 - 0.5, label: Some(format!("{year}")) }
}

fn mean_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
}

/// Benchmark synthetic control for the resolved problem.
pub fn benchmark_fit(ctx: &Context) -> AppResult<ScmFit> {
    let r = &ctx.run;
    Ok(scm::fit_with(&r.panel, &r.problem, &r.config.solver_options(), &ctx.exec)?)
}

/// Weights table, paths, balance, and the level and trend plots.
pub fn cmd_fit(ctx: &Context) -> AppResult<ScmFit> {
    let fit = benchmark_fit(ctx)?;
    let mut sink = ctx.sink("fit")?;
    write_fit(&mut sink, ctx, &fit)?;
    Ok(fit)
}

fn write_fit(sink: &mut Sink, ctx: &Context, fit: &ScmFit) -> AppResult<()> {
    let mut order: Vec<(&str, f64)> = fit.weights.units().iter().map(String::as_str).zip(fit.weights.values().iter().copied()).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    let rows: Vec<Vec<String>> = order.iter().map(|(u, w)| vec![u.to_string(), num(*w)]).collect();
    sink.csv("weights.csv", &["unit", "weight"], &rows)?;

    let rows: Vec<Vec<String>> = fit
        .actual
        .iter()
        .zip(fit.synthetic.values.iter().zip(&fit.gap.values))
        .map(|((y, a), (s, g))| vec![y.to_string(), num(a), num(*s), num(*g)])
        .collect();
    sink.csv("paths.csv", &["year", "actual", "synthetic", "gap"], &rows)?;

    let rows: Vec<Vec<String>> = fit
        .balance
        .iter()
        .zip(fit.vweights.values())
        .map(|(b, v)| vec![b.predictor.clone(), num(b.treated), num(b.synthetic), num(b.pool_mean), num(*v)])
        .collect();
    sink.csv("balance.csv", &["predictor", "treated", "synthetic", "pool_mean", "v_weight"], &rows)?;

    sink.json(
        "fit.json",
        &json!({ "validation": ctx.run.report, "pool": ctx.run.pool, "fit": fit }),
    )?;

    let outcome = &fit.outcome;
    let chart = sink
        .chart(&format!("{}: actual and synthetic {outcome}", fit.treated), "year", outcome)
        .layer(Layer::line(&fit.treated, points(&fit.actual), INK))
        .layer(Layer::dashed("synthetic", points(&fit.synthetic), ACCENT))
        .layer(rule(fit.treatment_year));
    sink.svg("fig8.svg", &chart)?;

    let lambda = ctx.run.config.decompose.lambda;
    let at = trend::hp_filter(&fit.actual.values, lambda)?;
    let st = trend::hp_filter(&fit.synthetic.values, lambda)?;
    let chart = sink
        .chart(&format!("{}: HP trends (lambda {lambda})", fit.treated), "year", outcome)
        .layer(Layer::line(&fit.treated, points(&YearSeries::new(fit.actual.start, at.trend)), INK))
        .layer(Layer::dashed("synthetic", points(&YearSeries::new(fit.actual.start, st.trend)), ACCENT))
        .layer(rule(fit.treatment_year));
    sink.svg("fig8_trend.svg", &chart)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InTimeRun {
    pub placebo_year: i32,
    pub pre_rmspe: f64,
    /// Mean |gap| from the placebo year to the year before true treatment.
    pub mean_abs_gap: f64,
    pub weights: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InTimeSummary {
    pub runs: Vec<InTimeRun>,
    /// Benchmark mean |gap| over the post-treatment window.
    pub benchmark_mean_abs_gap: f64,
    /// First placebo year's mean |gap| over the benchmark's.
    pub primary_ratio: f64,
    /// Placebo-in-space p-values for the first placebo year over its
    /// placebo window.
    pub pvalues: PValueSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JackknifeRow {
    pub dropped: String,
    pub pre_rmspe: f64,
    pub post_mean_gap: f64,
    pub max_deviation: f64,
    pub weights: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub train: YearRange,
    pub validate: YearRange,
    pub weights: Vec<(String, f64)>,
    pub validation_rmspe: f64,
    /// Benchmark weights scored on the validation window.
    pub benchmark_validation_rmspe: f64,
    pub benchmark_pre_rmspe: f64,
    pub chosen_start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSummary {
    pub in_time: InTimeSummary,
    pub threshold: f64,
    pub filtered: Vec<FilteredPlacebo>,
    pub ratios: RatioTable,
    pub pvalues: PValueSeries,
    pub jackknife: Vec<JackknifeRow>,
    pub cv: CvSummary,
    pub warnings: Vec<String>,
}

fn positive(fit: &ScmFit) -> Vec<(String, f64)> {
    fit.weights.positive(POSITIVE_WEIGHT).map(|(u, w)| (u.to_string(), w)).collect()
}

pub fn cmd_robustness(ctx: &Context, fit: Option<&ScmFit>) -> AppResult<RobustnessSummary> {
    let owned;
    let fit = match fit {
        Some(f) => f,
        None => {
            owned = benchmark_fit(ctx)?;
            &owned
        }
    };
    let r = &ctx.run;
    let cfg = &r.config;
    let opts = cfg.solver_options();
    let panel = &r.panel;
    let problem = &r.problem;
    let rb = &cfg.robustness;
    let mut warnings = fit.warnings.clone();

    // In-time placebos.
    let years = rb.placebo_years.clone();
    let fits = ctx.exec.map(&years, |&y| robustness::in_time_placebo(panel, problem, y, &opts));
    let fits: Vec<ScmFit> = fits.into_iter().collect::<Result<_, _>>()?;
    let post = fit.post_window();
    let benchmark_mean_abs_gap = mean_abs(fit.gap.window(post)?);
    let mut runs = Vec::new();
    let mut in_time_rows = Vec::new();
    for (y, f) in years.iter().zip(&fits) {
        let window = YearRange { start: *y, end: problem.treatment_year - 1 };
        runs.push(InTimeRun {
            placebo_year: *y,
            pre_rmspe: f.pre_rmspe,
            mean_abs_gap: mean_abs(f.gap.window(window)?),
            weights: positive(f),
        });
        for ((year, a), s) in f.actual.iter().zip(&f.synthetic.values) {
            in_time_rows.push(vec![y.to_string(), year.to_string(), num(a), num(*s), num(a - s)]);
        }
    }
    merge_warnings(&mut warnings, fits.iter().flat_map(|f| f.warnings.iter().cloned()));
    let (primary_year, primary) = match (years.first(), fits.first()) {
        (Some(y), Some(f)) => (*y, f),
        _ => return Err(AppError::Invalid("at least one placebo year is required".into())),
    };
    let placebo_problem = robustness::in_time_problem(problem, primary_year)?;
    let ensemble = robustness::in_space_placebos(panel, &placebo_problem, primary, rb.filter_multiplier, &opts, &ctx.exec)?;
    let in_time_p = robustness::pvalues_over(
        &ensemble,
        YearRange { start: primary_year, end: problem.treatment_year - 1 },
    )?;
    let in_time = InTimeSummary {
        primary_ratio: runs[0].mean_abs_gap / benchmark_mean_abs_gap,
        runs,
        benchmark_mean_abs_gap,
        pvalues: in_time_p,
    };

    // In-space placebos.
    let ensemble = robustness::in_space_placebos(panel, problem, fit, rb.filter_multiplier, &opts, &ctx.exec)?;
    warnings.extend(ensemble.warnings.iter().cloned());
    let ratios = robustness::rmspe_ratios(&ensemble)?;
    let pvalues = robustness::pvalues(&ensemble)?;

    // Leave-one-out.
    let jk = robustness::jackknife(panel, problem, fit, &opts, &ctx.exec)?;
    warnings.extend(jk.warnings.iter().cloned());
    let jackknife: Vec<JackknifeRow> = jk
        .fits
        .iter()
        .map(|(u, f)| {
            let g = f.gap.window(post)?;
            Ok(JackknifeRow {
                dropped: u.clone(),
                pre_rmspe: f.pre_rmspe,
                post_mean_gap: g.iter().sum::<f64>() / g.len() as f64,
                max_deviation: jk.max_deviation[u],
                weights: positive(f),
            })
        })
        .collect::<AppResult<_>>()?;

    // Train/validation selection.
    let (train, validate) = (rb.cv_train.unwrap_or(post), rb.cv_validate.unwrap_or(post));
    let cv = robustness::cross_validate(panel, problem, train, validate, &opts, &ctx.exec)?;
    let cv_summary = CvSummary {
        train,
        validate,
        weights: positive(&cv.fit),
        validation_rmspe: cv.validation_rmspe,
        benchmark_validation_rmspe: fit.rmspe_over(validate)?,
        benchmark_pre_rmspe: fit.pre_rmspe,
        chosen_start: cv.candidates[cv.chosen].start,
    };

    let summary = RobustnessSummary {
        in_time,
        threshold: ensemble.threshold,
        filtered: ensemble.filtered.clone(),
        ratios,
        pvalues,
        jackknife,
        cv: cv_summary,
        warnings,
    };

    let mut sink = ctx.sink("robustness")?;
    sink.csv("in_time_gaps.csv", &["placebo_year", "year", "actual", "synthetic", "gap"], &in_time_rows)?;
    let mut chart = sink
        .chart(&format!("In-time placebo ({primary_year})"), "year", &fit.outcome)
        .layer(Layer::line(&fit.treated, points(&primary.actual), INK))
        .layer(Layer::dashed("synthetic", points(&primary.synthetic), ACCENT))
        .layer(rule(primary_year));
    chart = chart.layer(Layer::VRule { x: problem.treatment_year as f64 - 0.5, label: None });
    sink.svg("fig_a_in_time.svg", &chart)?;

    let mut gap_rows = Vec::new();
    let mut chart = sink.chart("Gaps: treated and placebos", "year", "actual - synthetic");
    for (u, f) in &ensemble.placebos {
        let kept = f.pre_rmspe <= ensemble.threshold;
        for (y, g) in f.gap.iter() {
            gap_rows.push(vec![u.clone(), y.to_string(), num(g), "false".into(), (!kept).to_string()]);
        }
        if kept {
            chart = chart.layer(Layer::faint(points(&f.gap)));
        }
    }
    for (y, g) in fit.gap.iter() {
        gap_rows.push(vec![fit.treated.clone(), y.to_string(), num(g), "true".into(), "false".into()]);
    }
    chart = chart
        .layer(Layer::line(&fit.treated, points(&fit.gap), ACCENT))
        .layer(Layer::HRule { y: 0.0 })
        .layer(rule(fit.treatment_year));
    sink.csv("placebo_gaps.csv", &["unit", "year", "gap", "treated", "filtered"], &gap_rows)?;
    sink.svg("fig_b_placebos.svg", &chart)?;

    let rows: Vec<Vec<String>> = summary
        .ratios
        .rows
        .iter()
        .map(|r| {
            vec![
                r.rank.to_string(),
                r.unit.clone(),
                r.treated.to_string(),
                num(r.pre_rmspe),
                num(r.post_rmspe),
                num(r.ratio),
                r.filtered.to_string(),
            ]
        })
        .collect();
    sink.csv("rmspe_ratios.csv", &["rank", "unit", "treated", "pre_rmspe", "post_rmspe", "ratio", "filtered"], &rows)?;

    let p = &summary.pvalues;
    let rows: Vec<Vec<String>> = (0..p.years.len())
        .map(|i| vec![p.years[i].to_string(), num(p.pvalues[i]), num(p.excess_gap[i])])
        .collect();
    sink.csv("pvalues.csv", &["year", "pvalue", "excess_gap"], &rows)?;
    let chart = sink
        .chart("Treated gap minus mean placebo gap (labels: p-values)", "year", "excess gap")
        .layer(Layer::Bars {
            name: None,
            points: p.years.iter().zip(&p.excess_gap).map(|(y, g)| (*y as f64, *g)).collect(),
            color: BLUE,
            labels: p.pvalues.iter().map(|v| format!("{v:.2}")).collect(),
        })
        .layer(Layer::HRule { y: 0.0 });
    sink.svg("fig_c_pvalues.svg", &chart)?;

    let mut rows = Vec::new();
    let mut chart = sink.chart("Leave-one-out synthetic paths", "year", &fit.outcome);
    for (u, f) in &jk.fits {
        for (y, s) in f.synthetic.iter() {
            rows.push(vec![u.clone(), y.to_string(), num(s), num(f.actual.get(y).unwrap_or(f64::NAN) - s)]);
        }
        chart = chart.layer(Layer::faint(points(&f.synthetic)));
    }
    chart = chart
        .layer(Layer::line(&fit.treated, points(&fit.actual), INK))
        .layer(Layer::dashed("synthetic", points(&fit.synthetic), ACCENT))
        .layer(rule(fit.treatment_year));
    sink.csv("jackknife.csv", &["dropped", "year", "synthetic", "gap"], &rows)?;
    sink.svg("fig_d_jackknife.svg", &chart)?;

    let rows: Vec<Vec<String>> =
        cv.weights.units().iter().zip(cv.weights.values()).map(|(u, w)| vec![u.clone(), num(*w)]).collect();
    sink.csv("cv_weights.csv", &["unit", "weight"], &rows)?;
    sink.json("robustness.json", &summary)?;
    Ok(summary)
}

fn merge_warnings(warnings: &mut Vec<String>, more: impl Iterator<Item = String>) {
    for w in more {
        if !warnings.contains(&w) {
            warnings.push(w);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeSummary {
    pub basis: PotentialBasis,
    /// Configured potential growth, percent.
    pub configured_growth: f64,
    /// Mean population growth used for the conversion, percent.
    pub population_growth: Option<f64>,
    /// Potential growth of the outcome, percent.
    pub outcome_growth: f64,
    pub decomposition: TrendDecomposition,
}

pub fn cmd_decompose(ctx: &Context, fit: Option<&ScmFit>) -> AppResult<DecomposeSummary> {
    let owned;
    let fit = match fit {
        Some(f) => f,
        None => {
            owned = benchmark_fit(ctx)?;
            &owned
        }
    };
    let r = &ctx.run;
    let d = &r.config.decompose;
    let window = d.window.unwrap_or(fit.post_window());
    let growth_years = YearRange { start: window.start + 1, end: window.end };
    let (population_growth, outcome_growth) = match d.potential_basis {
        PotentialBasis::Outcome => (None, d.potential_growth),
        PotentialBasis::Aggregate => {
            let pop = r.panel.series(&r.problem.treated, &d.population_growth, growth_years)?;
            let m = pop.iter().sum::<f64>() / pop.len() as f64;
            (Some(m), trend::per_capita_growth(d.potential_growth, m))
        }
    };
    let opts = DecompositionOptions { lambda: d.lambda, potential_growth: outcome_growth, anchor: d.anchor, window };
    let decomposition = trend::decompose(&fit.actual, &fit.synthetic, &opts)?;
    let summary = DecomposeSummary {
        basis: d.potential_basis,
        configured_growth: d.potential_growth,
        population_growth,
        outcome_growth,
        decomposition,
    };

    let mut sink = ctx.sink("decompose")?;
    let dec = &summary.decomposition;
    let rows: Vec<Vec<String>> = dec
        .levels
        .years
        .iter()
        .map(|y| {
            vec![
                y.year.to_string(),
                num(y.actual),
                num(y.synthetic),
                num(y.potential),
                num(y.total),
                num(y.internal),
                num(y.external),
                y.internal_share.map(num).unwrap_or_default(),
                y.flag.clone().unwrap_or_default(),
            ]
        })
        .collect();
    sink.csv(
        "decomposition.csv",
        &["year", "actual", "synthetic", "potential", "total", "internal", "external", "internal_share", "flag"],
        &rows,
    )?;
    sink.json("decomposition.json", &summary)?;

    let from = (window.start - 6).max(fit.actual.start);
    let clip = |s: &YearSeries| -> Vec<(f64, f64)> { points(s).into_iter().filter(|p| p.0 >= from as f64).collect() };
    let chart = sink
        .chart(
            &format!("Shortfall split: internal {:.0}%, external {:.0}%", 100.0 * dec.levels.internal_share, 100.0 * dec.levels.external_share),
            "year",
            &fit.outcome,
        )
        .layer(Layer::line(&fit.treated, clip(&fit.actual), INK))
        .layer(Layer::dashed("synthetic", clip(&fit.synthetic), ACCENT))
        .layer(Layer::line("potential", points(&dec.potential), GREEN))
        .layer(rule(window.start));
    sink.svg("fig9_decomposition.svg", &chart)?;

    let g = &dec.growth;
    let chart = sink
        .chart(
            &format!("Mean growth {}: internal {:.2} pp, external {:.2} pp", g.growth_years, g.internal_pp, g.external_pp),
            "1 actual, 2 synthetic, 3 potential",
            "percent per year",
        )
        .layer(Layer::Bars {
            name: None,
            points: vec![(1.0, g.actual_growth), (2.0, g.synthetic_growth), (3.0, g.potential_growth)],
            color: BLUE,
            labels: [g.actual_growth, g.synthetic_growth, g.potential_growth].iter().map(|v| format!("{v:.2}")).collect(),
        })
        .layer(Layer::HRule { y: 0.0 });
    sink.svg("fig13_growth.svg", &chart)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BstsSummary {
    pub fitted: YearRange,
    pub controls: Vec<String>,
    pub dropped_controls: Vec<String>,
    pub inclusion_prob: f64,
    pub g: f64,
    pub impact: ImpactSummary,
}

pub fn cmd_bsts(ctx: &Context) -> AppResult<BstsSummary> {
    let r = &ctx.run;
    let cfg = &r.config;
    let p = &r.problem;
    let pre_end = cfg.bsts.pre_end.unwrap_or(p.treatment_year);
    let fitted = YearRange { start: p.sample.start, end: pre_end };
    let post = YearRange { start: pre_end + 1, end: p.sample.end };
    let names = cfg.bsts.controls.clone().unwrap_or_else(|| p.donors.clone());
    let control_matrix = |w: YearRange| -> AppResult<Matrix> {
        let cols: Vec<Vec<f64>> = names.iter().map(|u| r.panel.series(u, &p.outcome, w)).collect::<Result<_, _>>()?;
        Ok(Matrix::from_columns(&cols))
    };
    let y = r.panel.series(&p.treated, &p.outcome, fitted)?;
    let controls = Controls { names: names.clone(), values: control_matrix(fitted)? };
    let spec = cfg.bsts_spec();
    let fit = bsts::fit_bsts_with(&spec, &y, &controls, &ctx.exec)?;
    let actual = r.panel.series(&p.treated, &p.outcome, post)?;
    let years: Vec<i32> = post.iter().collect();
    let posterior = bsts::predict_counterfactual(&fit, &control_matrix(post)?, &actual, &years)?;
    let impact = bsts::impact_report(&posterior)?;
    let summary = BstsSummary {
        fitted,
        controls: fit.used_controls.clone(),
        dropped_controls: fit.dropped_controls.clone(),
        inclusion_prob: fit.inclusion_prob,
        g: fit.g,
        impact,
    };

    let mut sink = ctx.sink("bsts")?;
    sink.json("impact.json", &summary)?;
    let rows: Vec<Vec<String>> = summary
        .impact
        .years
        .iter()
        .map(|y| {
            vec![
                y.year.to_string(),
                num(y.actual),
                num(y.counterfactual_mean),
                num(y.counterfactual.lower),
                num(y.counterfactual.median),
                num(y.counterfactual.upper),
                num(y.effect_mean),
                num(y.effect.lower),
                num(y.effect.upper),
                num(y.cumulative_mean),
                num(y.prob_cumulative_negative),
            ]
        })
        .collect();
    sink.csv(
        "impact.csv",
        &[
            "year", "actual", "cf_mean", "cf_lower", "cf_median", "cf_upper", "effect_mean", "effect_lower",
            "effect_upper", "cumulative_mean", "prob_cumulative_negative",
        ],
        &rows,
    )?;
    if cfg.bsts.write_draws {
        let d = &posterior.draws;
        let rows: Vec<Vec<String>> = (0..d.rows()).map(|i| d.row(i).iter().map(|v| num(*v)).collect()).collect();
        let header: Vec<String> = years.iter().map(|y| y.to_string()).collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        sink.csv("counterfactual_draws.csv", &header, &rows)?;
    }
    let xs: Vec<f64> = years.iter().map(|y| *y as f64).collect();
    let whole = r.panel.year_series(&p.treated, &p.outcome, p.sample)?;
    let chart = sink
        .chart("Structural time-series counterfactual (95% band)", "year", &p.outcome)
        .layer(Layer::Band {
            name: Some("95% band".into()),
            x: xs.clone(),
            lower: posterior.counterfactual.iter().map(|b| b.lower).collect(),
            upper: posterior.counterfactual.iter().map(|b| b.upper).collect(),
            color: BLUE,
        })
        .layer(Layer::line(&p.treated, points(&whole), INK))
        .layer(Layer::dashed("counterfactual mean", xs.iter().copied().zip(posterior.counterfactual_mean.iter().copied()).collect(), ACCENT))
        .layer(rule(post.start));
    sink.svg("fig12_bsts.svg", &chart)?;
    let chart = sink
        .chart("Pointwise effect (95% band)", "year", "actual - counterfactual")
        .layer(Layer::Band {
            name: Some("95% band".into()),
            x: xs.clone(),
            lower: posterior.effect.iter().map(|b| b.lower).collect(),
            upper: posterior.effect.iter().map(|b| b.upper).collect(),
            color: MUTED,
        })
        .layer(Layer::line("mean effect", xs.iter().copied().zip(posterior.effect_mean.iter().copied()).collect(), ACCENT))
        .layer(Layer::HRule { y: 0.0 });
    sink.svg("fig12_effect.svg", &chart)?;
    Ok(summary)
}

/// Ground truth written next to a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub treated: String,
    pub donors: Vec<String>,
    pub mix: Vec<f64>,
    pub counterfactual: Vec<f64>,
    pub effect: Vec<f64>,
}

/// Generates a factor-model panel plus a ready-to-run config for it.
/// Needs no panel or treated unit; the DGP seed is the run seed.
pub fn cmd_simulate(config: &RunConfig) -> AppResult<Generated> {
    let mut spec = config.simulate.clone();
    spec.seed = config.seed;
    let generated = oracle::generate_panel(&spec)?;
    let out = config.out_dir();
    let mut resolved = config.clone();
    resolved.simulate = spec.clone();
    let provenance = json!({ "tool": TOOL, "version": VERSION, "command": "simulate", "seed": config.seed, "config": resolved });
    let mut sink = Sink::new(&out, provenance)?;

    let mut body = Vec::new();
    write_panel(&generated.panel, &mut body).map_err(|e| AppError::io(&out, e))?;
    sink.text("simulated_panel.csv", &format!("# provenance: {}\n{}", sink.provenance(), String::from_utf8_lossy(&body)))?;
    sink.json(
        "simulated_truth.json",
        &SimulationTruth {
            treated: generated.treated.clone(),
            donors: generated.donors.clone(),
            mix: generated.mix.clone(),
            counterfactual: generated.counterfactual.clone(),
            effect: generated.effect.clone(),
        },
    )?;

    let mut predictors = vec![PredictorSpec { variable: oracle::OUTCOME.into(), aggregation: Aggregation::Mean, standardize: true }];
    predictors.extend((1..=spec.covariates).map(|i| PredictorSpec::mean(&format!("x{i}"))));
    let first = spec.start_year;
    let pre_len = spec.treatment_year - first;
    let run = RunConfig {
        panel: Some(PathBuf::from("simulated_panel.csv")),
        schema: None,
        outcome: oracle::OUTCOME.into(),
        treated: Some(generated.treated.clone()),
        treatment_year: Some(spec.treatment_year),
        sample: None,
        pool: DonorPoolSpec { name: "simulated".into(), include: generated.donors.clone(), exclude: Vec::new() },
        predictors,
        seed: config.seed,
        out: None,
        jobs: None,
        robustness: crate::config::RobustnessSettings {
            placebo_years: vec![first + pre_len * 2 / 3],
            ..config.robustness.clone()
        },
        decompose: crate::config::DecomposeSettings {
            potential_basis: PotentialBasis::Outcome,
            ..config.decompose.clone()
        },
        ..config.clone()
    };
    let mut text = serde_json::to_string_pretty(&run)?;
    text.push('\n');
    sink.text("simulated_config.json", &text)?;
    Ok(generated)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub weights: Vec<(String, f64)>,
    pub pre_rmspe: f64,
    pub post_rmspe: f64,
    pub final_year: i32,
    pub final_actual: f64,
    pub final_synthetic: f64,
    pub final_gap_share: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub fit: FitSummary,
    pub robustness: RobustnessSummary,
    pub decomposition: DecomposeSummary,
    pub bsts: BstsSummary,
}

/// Every stage with one shared benchmark fit, plus a combined summary.
pub fn cmd_report(ctx: &Context) -> AppResult<Report> {
    let fit = cmd_fit(ctx)?;
    let robustness = cmd_robustness(ctx, Some(&fit))?;
    let decomposition = cmd_decompose(ctx, Some(&fit))?;
    let bsts = cmd_bsts(ctx)?;
    let end = fit.actual.end();
    let (a, s) = (ctx.actual()?.get(end).unwrap_or(f64::NAN), fit.synthetic.get(end).unwrap_or(f64::NAN));
    let report = Report {
        fit: FitSummary {
            weights: positive(&fit),
            pre_rmspe: fit.pre_rmspe,
            post_rmspe: fit.post_rmspe,
            final_year: end,
            final_actual: a,
            final_synthetic: s,
            final_gap_share: (s - a) / a,
            converged: fit.converged,
        },
        robustness,
        decomposition,
        bsts,
    };
    let mut sink = ctx.sink("report")?;
    sink.json("report.json", &report)?;
    sink.text("report.md", &markdown(&ctx.run, &report))?;
    Ok(report)
}

fn markdown(run: &Resolved, r: &Report) -> String {
    use std::fmt::Write;
    let p = &run.problem;
    let mut s = String::new();
    let _ = writeln!(s, "# {} {}: treatment in {}\n", p.treated, p.outcome, p.treatment_year);
    let _ = writeln!(s, "Seed {}; panel sha256 `{}`.\n", run.config.seed, run.panel_sha256);
    let _ = writeln!(s, "## Donor weights\n\n| unit | weight |\n|---|---|");
    for (u, w) in &r.fit.weights {
        let _ = writeln!(s, "| {u} | {w:.3} |");
    }
    let f = &r.fit;
    let _ = writeln!(
        s,
        "\nPre-RMSPE {:.1}, post-RMSPE {:.1}. In {} synthetic {:.0} vs actual {:.0} ({:+.1}%).\n",
        f.pre_rmspe,
        f.post_rmspe,
        f.final_year,
        f.final_synthetic,
        f.final_actual,
        100.0 * f.final_gap_share
    );
    let rb = &r.robustness;
    let _ = writeln!(s, "## Inference\n");
    let _ = writeln!(
        s,
        "RMSPE ratio rank {} of {} (p = {:.3}); {} placebos filtered at pre-RMSPE > {:.1}.\n",
        rb.ratios.treated_rank,
        rb.ratios.rows.len(),
        rb.ratios.pvalue,
        rb.filtered.len(),
        rb.threshold
    );
    let _ = writeln!(s, "| year | p-value | excess gap |\n|---|---|---|");
    for i in 0..rb.pvalues.years.len() {
        let _ = writeln!(s, "| {} | {:.3} | {:.1} |", rb.pvalues.years[i], rb.pvalues.pvalues[i], rb.pvalues.excess_gap[i]);
    }
    let it = &rb.in_time;
    let _ = writeln!(
        s,
        "\nIn-time placebo {}: mean |gap| {:.1} vs benchmark {:.1} (ratio {:.2}); max placebo-window p-value {:.2}.\n",
        it.runs[0].placebo_year,
        it.runs[0].mean_abs_gap,
        it.benchmark_mean_abs_gap,
        it.primary_ratio,
        it.pvalues.pvalues.iter().copied().fold(0.0, f64::max)
    );
    let cv = &rb.cv;
    let _ = writeln!(
        s,
        "Cross-validation {} / {}: validation RMSPE {:.1} vs benchmark weights {:.1}.\n",
        cv.train, cv.validate, cv.validation_rmspe, cv.benchmark_validation_rmspe
    );
    let d = &r.decomposition.decomposition;
    let _ = writeln!(s, "## Decomposition\n");
    let _ = writeln!(
        s,
        "Potential growth {:.2}% of the outcome. Internal share {:.3} (levels), growth split internal {:.2} pp, external {:.2} pp.\n",
        r.decomposition.outcome_growth, d.levels.internal_share, d.growth.internal_pp, d.growth.external_pp
    );
    let _ = writeln!(s, "## Structural time series\n\n| year | actual | counterfactual mean | 95% band | mean effect |\n|---|---|---|---|---|");
    for y in &r.bsts.impact.years {
        let _ = writeln!(
            s,
            "| {} | {:.0} | {:.0} | {:.0} to {:.0} | {:.0} |",
            y.year, y.actual, y.counterfactual_mean, y.counterfactual.lower, y.counterfactual.upper, y.effect_mean
        );
    }
    let _ = writeln!(s, "\nP(cumulative effect < 0) = {:.3}.", r.bsts.impact.prob_cumulative_negative);
    s
}
