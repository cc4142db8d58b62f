//! Repeated-sampling checks on simulated panels. Seeds are fixed, so the
//! outcomes are deterministic; the bounds are set at conventional test levels.

use impactkit_core::bsts::{
    ffbs, fit_bsts, predict_counterfactual, sample_inv_gamma, BstsSpec, Controls, StateModel, TrendKind,
};
use impactkit_core::linalg::Matrix;
use impactkit_core::oracle::{generate_panel, scalar_local_level, DgpSpec, Effect, Generated, TreatedLoadings, OUTCOME};
use impactkit_core::panel::{Aggregation, PredictorSpec};
use impactkit_core::robustness::{in_space_placebos, rmspe_ratios};
use impactkit_core::scm::fit;
use impactkit_core::trend::growth_decomposition;
use impactkit_core::{ScmProblem, Sequential, SolverOptions, YearRange};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, InverseGamma};

fn problem(g: &Generated) -> ScmProblem {
    ScmProblem {
        outcome: OUTCOME.into(),
        treated: g.treated.clone(),
        donors: g.donors.clone(),
        predictors: ["y", "x1", "x2", "x3"]
            .iter()
            .map(|v| PredictorSpec { variable: v.to_string(), aggregation: Aggregation::Mean, standardize: true })
            .collect(),
        treatment_year: 2014,
        sample: YearRange { start: 1990, end: 2019 },
    }
}

fn starts(n: usize) -> SolverOptions {
    SolverOptions { starts: n, ..SolverOptions::default() }
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
fn ks_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// 5% critical value of the one-sample KS statistic.
fn ks_critical(n: usize) -> f64 {
    1.358 / (n as f64).sqrt()
}

#[test]
fn ffbs_draws_match_smoother_moments() {
    let y = [1.0, -0.5, 2.0];
    let (obs, lvl, a1, p1) = (1.0, 0.5, 0.0, 10.0);
    let model = StateModel::local_level(obs, lvl, a1, p1);
    let reference = scalar_local_level(&y, obs, lvl, a1, p1);
    let n = 50_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..n {
        let (states, _) = ffbs(&model, &y, &mut rng);
        for t in 0..3 {
            sum[t] += states[t][0];
            sq[t] += states[t][0] * states[t][0];
        }
    }
    for t in 0..3 {
        let m = sum[t] / n as f64;
        let v = sq[t] / n as f64 - m * m;
        let sv = reference.smoothed_var[t];
        let mean_se = (sv / n as f64).sqrt();
        let var_se = sv * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((m - reference.smoothed_mean[t]).abs() < 3.0 * mean_se, "mean at {t}: {m}");
        assert!((v - sv).abs() < 3.0 * var_se, "variance at {t}: {v} vs {sv}");
    }
}

#[test]
fn variance_prior_draws_follow_inverse_gamma() {
    for (shape, scale, seed) in [(0.5, 2.0, 3), (3.0, 0.7, 4)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..4000).map(|_| sample_inv_gamma(shape, scale, &mut rng)).collect();
        let law = InverseGamma::new(shape, scale).unwrap();
        let d = ks_distance(xs, |x| law.cdf(x));
        assert!(d < ks_critical(4000), "shape {shape}: KS {d}");
    }
}

#[test]
fn spike_and_slab_finds_the_true_regressor() {
    let n = 60;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut level = 10.0;
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
        level += 0.1 * rng.sample::<f64, _>(StandardNormal);
        y.push(level + 2.0 * x[0] + 0.3 * rng.sample::<f64, _>(StandardNormal));
        rows.push(x);
    }
    let controls = Controls { names: (1..=6).map(|i| format!("x{i}")).collect(), values: Matrix::from_rows(&rows) };
    let spec = BstsSpec { trend: TrendKind::LocalLevel, draws: 3000, burn_in: 500, seed: 11, ..BstsSpec::default() };
    let f = fit_bsts(&spec, &y, &controls).unwrap();
    assert!(f.inclusion[0] > 0.9, "{:?}", f.inclusion);
    assert!(f.inclusion[1..].iter().all(|p| *p < 0.5), "{:?}", f.inclusion);
}

/// Randomized rank p-value, uniform on (0, 1) under exchangeability.
fn randomized_rank_pvalue(ratios: &[f64], treated: f64, u: f64) -> f64 {
    let above = ratios.iter().filter(|r| **r > treated).count() as f64;
    let ties = ratios.iter().filter(|r| **r == treated).count() as f64;
    (above + u * ties) / ratios.len() as f64
}

#[test]
fn ratio_pvalues_are_uniform_under_exchangeability() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut ps = Vec::new();
    for seed in 0..200 {
        let g = generate_panel(&DgpSpec { loadings: TreatedLoadings::Independent, seed, ..DgpSpec::default() }).unwrap();
        let p = problem(&g);
        let opts = starts(2);
        let f = fit(&g.panel, &p, &opts).unwrap();
        let e = in_space_placebos(&g.panel, &p, &f, 1e9, &opts, &Sequential).unwrap();
        let table = rmspe_ratios(&e).unwrap();
        let ratios: Vec<f64> = table.rows.iter().map(|r| r.ratio).collect();
        let treated = table.rows.iter().find(|r| r.treated).unwrap().ratio;
        ps.push(randomized_rank_pvalue(&ratios, treated, rng.random()));
    }
    let d = ks_distance(ps, |x| x.clamp(0.0, 1.0));
    assert!(d < ks_critical(200), "KS {d}");
}

#[test]
fn treated_ratio_ranks_first_when_only_it_is_treated() {
    let mut first = 0;
    for seed in 0..50 {
        let g = generate_panel(&DgpSpec { effect: Effect::LevelStep { fraction: -0.05 }, seed, ..DgpSpec::default() })
            .unwrap();
        let p = problem(&g);
        let opts = starts(5);
        let f = fit(&g.panel, &p, &opts).unwrap();
        let e = in_space_placebos(&g.panel, &p, &f, 1e9, &opts, &Sequential).unwrap();
        if rmspe_ratios(&e).unwrap().treated_rank == 1 {
            first += 1;
        }
    }
    assert!(first >= 45, "treated first in {first} of 50");
}

#[test]
fn level_effect_is_recovered_without_bias() {
    let (mut est, mut truth) = (0.0, 0.0);
    for seed in 0..100 {
        let g = generate_panel(&DgpSpec { effect: Effect::LevelStep { fraction: -0.05 }, seed, ..DgpSpec::default() })
            .unwrap();
        let f = fit(&g.panel, &problem(&g), &SolverOptions::default()).unwrap();
        let post = f.post_window();
        let gaps = f.gap.window(post).unwrap();
        est += gaps.iter().sum::<f64>() / gaps.len() as f64;
        let true_post = &g.effect[g.effect.len() - gaps.len()..];
        truth += true_post.iter().sum::<f64>() / gaps.len() as f64;
    }
    assert!(truth < 0.0);
    assert!((est - truth).abs() < 0.05 * truth.abs(), "estimate {est} vs truth {truth}");
}

#[test]
fn growth_drag_is_recovered() {
    let window = YearRange { start: 2014, end: 2019 };
    let mut total = 0.0;
    for seed in 0..50 {
        let g = generate_panel(&DgpSpec { effect: Effect::GrowthDrag { points: 1.5 }, seed, ..DgpSpec::default() })
            .unwrap();
        let f = fit(&g.panel, &problem(&g), &starts(5)).unwrap();
        total += growth_decomposition(&f.actual, &f.synthetic, 3.0, window).unwrap().internal_pp;
    }
    let mean = total / 50.0;
    assert!((mean - 1.5).abs() <= 0.3, "mean internal drag {mean} pp");
}

#[test]
fn posterior_intervals_overlap_across_seeds() {
    let g = generate_panel(&DgpSpec { seed: 5, ..DgpSpec::default() }).unwrap();
    let pre = YearRange { start: 1990, end: 2013 };
    let post = YearRange { start: 2014, end: 2019 };
    let controls_over = |w: YearRange| {
        let rows: Vec<Vec<f64>> = w
            .iter()
            .map(|y| g.donors.iter().map(|d| g.panel.value(d, OUTCOME, y).unwrap()).collect())
            .collect();
        Matrix::from_rows(&rows)
    };
    let y = g.panel.series(&g.treated, OUTCOME, pre).unwrap();
    let actual = g.panel.series(&g.treated, OUTCOME, post).unwrap();
    let controls = Controls { names: g.donors.clone(), values: controls_over(pre) };
    let years: Vec<i32> = post.iter().collect();
    let bands: Vec<_> = [1, 2]
        .iter()
        .map(|seed| {
            let spec = BstsSpec { draws: 3000, burn_in: 500, seed: *seed, ..BstsSpec::default() };
            let f = fit_bsts(&spec, &y, &controls).unwrap();
            predict_counterfactual(&f, &controls_over(post), &actual, &years).unwrap().counterfactual
        })
        .collect();
    assert_ne!(bands[0], bands[1]);
    for (a, b) in bands[0].iter().zip(&bands[1]) {
        assert!(a.lower <= b.upper && b.lower <= a.upper);
    }
}
