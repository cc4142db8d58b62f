use impactkit_core::linalg::Matrix;
use impactkit_core::panel::{build_predictor_matrix, PredictorSpec};
use impactkit_core::robustness::permutation_pvalues;
use impactkit_core::scm::{inner_objective, softmax_weights, solve_inner};
use impactkit_core::simplex::project_simplex;
use impactkit_core::trend::{decompose_shortfall, growth_decomposition, hp_filter};
use impactkit_core::{Panel, PanelBuilder, YearRange, YearSeries};
use proptest::prelude::*;

const VARS: [&str; 3] = ["y", "a", "b"];

/// Units `u0..` with positive values for `y`, `a` and `b` over 2000..2000+years.
fn panel_from(values: &[f64], units: usize, years: usize) -> Panel {
    let mut b = PanelBuilder::new();
    let mut k = 0;
    for u in 0..units {
        for v in VARS {
            for t in 0..years {
                b.push(&format!("u{u}"), v, 2000 + t as i32, values[k % values.len()] + u as f64 * 0.37 + t as f64)
                    .unwrap();
                k += 1;
            }
        }
    }
    b.build().unwrap().0
}

fn problem_matrix(x: &[f64], k: usize, j: usize) -> (Vec<f64>, Matrix) {
    let x1 = x[..k].to_vec();
    let rows: Vec<Vec<f64>> = (0..k).map(|r| (0..j).map(|c| x[k + r * j + c]).collect()).collect();
    (x1, Matrix::from_rows(&rows))
}

fn simplex_of(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn specs() -> Vec<PredictorSpec> {
    VARS.iter().map(|v| PredictorSpec::mean(v)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictor_matrix_is_permutation_equivariant(
        values in prop::collection::vec(1.0f64..100.0, 30..60),
        seed in 0u64..1000,
    ) {
        let panel = panel_from(&values, 5, 8);
        let pre = YearRange { start: 2000, end: 2005 };
        let donors: Vec<String> = (1..5).map(|u| format!("u{u}")).collect();
        let mut perm = donors.clone();
        perm.rotate_left((seed % 4) as usize);
        let a = build_predictor_matrix(&panel, &specs(), &donors, "u0", "y", pre).unwrap();
        let b = build_predictor_matrix(&panel, &specs(), &perm, "u0", "y", pre).unwrap();
        for (p, q) in a.x1.iter().zip(&b.x1) {
            prop_assert!((p - q).abs() < 1e-12);
        }
        for (jb, d) in perm.iter().enumerate() {
            let ja = donors.iter().position(|u| u == d).unwrap();
            for r in 0..a.x0.rows() {
                prop_assert!((a.x0[(r, ja)] - b.x0[(r, jb)]).abs() < 1e-12);
            }
            for r in 0..a.z0.rows() {
                prop_assert_eq!(a.z0[(r, ja)], b.z0[(r, jb)]);
            }
        }
    }

    #[test]
    fn standardized_rows_are_z_scores(values in prop::collection::vec(1.0f64..1000.0, 30..60)) {
        let panel = panel_from(&values, 6, 6);
        let donors: Vec<String> = (1..6).map(|u| format!("u{u}")).collect();
        let d = build_predictor_matrix(&panel, &specs(), &donors, "u0", "y", YearRange { start: 2000, end: 2004 }).unwrap();
        for r in 0..d.x0.rows() {
            let mut row = vec![d.x1[r]];
            row.extend(d.x0.row(r));
            let n = row.len() as f64;
            let m = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            prop_assert!(m.abs() < 1e-12);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn inner_solution_is_feasible_and_beats_vertices(
        x in prop::collection::vec(-3.0f64..3.0, 40),
        v in prop::collection::vec(0.01f64..1.0, 4),
        k in 1usize..=4,
        j in 2usize..=6,
        probe in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let (x1, x0) = problem_matrix(&x, k, j);
        let v = simplex_of(&v[..k]);
        let v = v.as_slice();
        let s = solve_inner(&x1, &x0, v, 1e-10).unwrap();
        prop_assert_eq!(s.w.len(), j);
        prop_assert!(s.w.iter().all(|w| *w >= 0.0));
        prop_assert!((s.w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let scale = 1.0 + s.objective.abs();
        for c in 0..j {
            let mut e = vec![0.0; j];
            e[c] = 1.0;
            prop_assert!(s.objective <= inner_objective(&x1, &x0, v, &e) + 1e-9 * scale);
        }
        let mut p = probe[..j].to_vec();
        let total: f64 = p.iter().sum::<f64>() + 1e-9;
        p.iter_mut().for_each(|w| *w /= total);
        let p = project_simplex(&p);
        prop_assert!(s.objective <= inner_objective(&x1, &x0, v, &p) + 1e-9 * scale);
    }

    #[test]
    fn rescaling_a_predictor_leaves_weights_unchanged(
        values in prop::collection::vec(1.0f64..100.0, 30..60),
        c in 0.001f64..1000.0,
        v in prop::collection::vec(0.05f64..1.0, 3),
    ) {
        let panel = panel_from(&values, 6, 8);
        let mut b = PanelBuilder::new();
        for (u, var, y, val) in panel.observations() {
            b.push(u, var, y, if var == "a" { val * c } else { val }).unwrap();
        }
        let scaled = b.build().unwrap().0;
        let donors: Vec<String> = (1..6).map(|u| format!("u{u}")).collect();
        let pre = YearRange { start: 2000, end: 2005 };
        let d1 = build_predictor_matrix(&panel, &specs(), &donors, "u0", "y", pre).unwrap();
        let d2 = build_predictor_matrix(&scaled, &specs(), &donors, "u0", "y", pre).unwrap();
        let v = simplex_of(&v);
        let w1 = solve_inner(&d1.x1, &d1.x0, &v, 1e-12).unwrap();
        let w2 = solve_inner(&d2.x1, &d2.x0, &v, 1e-12).unwrap();
        let scale = 1.0 + w1.objective.abs();
        prop_assert!((w1.objective - w2.objective).abs() < 1e-9 * scale);
        for (a, b) in w1.w.iter().zip(&w2.w) {
            prop_assert!((a - b).abs() < 1e-4, "{:?} vs {:?}", w1.w, w2.w);
        }
    }

    #[test]
    fn projection_and_softmax_land_on_simplex(x in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = project_simplex(&x);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let again = project_simplex(&p);
        for (a, b) in p.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let s = softmax_weights(&x);
        prop_assert_eq!(s.len(), x.len() + 1);
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hp_filter_is_linear(
        x in prop::collection::vec(-100.0f64..100.0, 30),
        y in prop::collection::vec(-100.0f64..100.0, 30),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let tx = hp_filter(&x, 100.0).unwrap().trend;
        let ty = hp_filter(&y, 100.0).unwrap().trend;
        let tc = hp_filter(&combo, 100.0).unwrap();
        for i in 0..30 {
            prop_assert!((tc.trend[i] - (a * tx[i] + b * ty[i])).abs() < 1e-9);
            prop_assert!((tc.trend[i] + tc.cycle[i] - combo[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn pvalues_are_bounded_and_monotone_in_treated_gap(
        treated in prop::collection::vec(-10.0f64..10.0, 6),
        placebos in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 6), 2..15),
        scale in 1.0f64..5.0,
    ) {
        let refs: Vec<&[f64]> = placebos.iter().map(|p| p.as_slice()).collect();
        let n = refs.len() as f64;
        let p = permutation_pvalues(&treated, &refs);
        let bigger: Vec<f64> = treated.iter().map(|g| g * scale).collect();
        let q = permutation_pvalues(&bigger, &refs);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!(*a >= 1.0 / (n + 1.0) - 1e-15 && *a <= 1.0);
            prop_assert!(b <= a);
        }
    }

    #[test]
    fn shortfall_components_add_up(
        actual in prop::collection::vec(50.0f64..100.0, 6),
        internal in prop::collection::vec(0.0f64..20.0, 6),
        external in prop::collection::vec(0.0f64..20.0, 6),
    ) {
        let synth: Vec<f64> = actual.iter().zip(&internal).map(|(a, i)| a + i).collect();
        let pot: Vec<f64> = synth.iter().zip(&external).map(|(s, e)| s + e + 0.01).collect();
        let window = YearRange { start: 2014, end: 2019 };
        let (a, s, p) = (YearSeries::new(2014, actual), YearSeries::new(2014, synth), YearSeries::new(2014, pot));
        let d = decompose_shortfall(&a, &s, &p, window).unwrap();
        for y in &d.years {
            prop_assert!((y.internal + y.external - y.total).abs() < 1e-9);
            if let (Some(i), Some(e)) = (y.internal_share, y.external_share) {
                prop_assert!((i + e - 1.0).abs() < 1e-9);
            }
        }
        prop_assert!((d.internal_share + d.external_share - 1.0).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&d.internal_share));
        let g = growth_decomposition(&a, &s, 3.0, window).unwrap();
        prop_assert!((g.internal_pp + g.external_pp - (3.0 - g.actual_growth)).abs() < 1e-9);
    }
}
