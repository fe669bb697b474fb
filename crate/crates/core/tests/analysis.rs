use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use shieldup_core::analysis::*;
use shieldup_core::simulation::{run_virtual_trial, CohortConfig};
use shieldup_core::stats::{beta_reg, f_cdf, f_sf, ks_uniform};
use shieldup_core::trial::{export_rows, Arm};

/// Solves the normal equations by Gaussian elimination with partial pivoting.
fn normal_equations(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
    let p = x.ncols();
    let mut a = vec![vec![0.0; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            a[i][j] = (0..x.nrows()).map(|r| x[(r, i)] * x[(r, j)]).sum();
        }
        a[i][p] = (0..x.nrows()).map(|r| x[(r, i)] * y[r]).sum();
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
        a.swap(col, piv);
        for r in col + 1..p {
            let f = a[r][col] / a[col][col];
            for c in col..=p {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| a[i][j] * beta[j]).sum();
        beta[i] = (a[i][p] - s) / a[i][i];
    }
    beta
}

/// Rank by Gaussian elimination with full pivoting.
fn elimination_rank(x: &DMatrix<f64>) -> usize {
    let mut m: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect();
    let (n, p) = (m.len(), x.ncols());
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut rank = 0;
    let mut used = vec![false; p];
    for _ in 0..p.min(n) {
        let mut best = (0.0, 0, 0);
        for (r, row) in m.iter().enumerate().skip(rank) {
            for c in (0..p).filter(|c| !used[*c]) {
                if row[c].abs() > best.0 {
                    best = (row[c].abs(), r, c);
                }
            }
        }
        if best.0 <= 1e-9 * scale {
            break;
        }
        let (_, r, c) = best;
        m.swap(rank, r);
        used[c] = true;
        for i in rank + 1..n {
            let f = m[i][c] / m[rank][c];
            for j in 0..p {
                m[i][j] -= f * m[rank][j];
            }
        }
        rank += 1;
    }
    rank
}

fn seeded_problem(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { StandardNormal.sample(&mut rng) });
    let y = DVector::from_fn(n, |i, _| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        1.0 + (1..p).map(|j| j as f64 * 0.3 * x[(i, j)]).sum::<f64>() + noise
    });
    (x, y)
}

#[test]
fn ols_matches_normal_equations() {
    for seed in 0..5 {
        let (x, y) = seeded_problem(100, 5, seed);
        let fit = fit_ols(&x, &y).unwrap();
        let want = normal_equations(&x, &y);
        for (g, w) in fit.coefficients.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-8 * w.abs().max(1.0), "{g} vs {w}");
        }
    }
}

#[test]
fn ols_residuals_are_orthogonal_to_columns() {
    let (x, y) = seeded_problem(200, 6, 9);
    let fit = fit_ols(&x, &y).unwrap();
    let xtr = x.transpose() * &fit.residuals;
    assert!(xtr.amax() < 1e-8 * y.norm());
}

#[test]
fn ols_exact_and_intercept_only() {
    let x = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
    let y = DVector::from_fn(10, |i, _| 3.0 - 0.5 * i as f64);
    let fit = fit_ols(&x, &y).unwrap();
    assert!((fit.coefficients[0] - 3.0).abs() < 1e-12 && (fit.coefficients[1] + 0.5).abs() < 1e-12);
    assert!(fit.rss < 1e-20);
    let ones = DMatrix::from_element(5, 1, 1.0);
    let y = DVector::from_vec(vec![1.0, 2.0, 4.0, 8.0, 5.0]);
    assert!((fit_ols(&ones, &y).unwrap().coefficients[0] - 4.0).abs() < 1e-12);
}

fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, steps: usize) -> f64 {
    let h = (hi - lo) / steps as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..steps {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn incomplete_beta_matches_integration() {
    for &a in &[1.0, 2.0, 3.5, 7.0] {
        for &b in &[1.0, 2.5, 5.0, 12.0] {
            let kernel = |t: f64| t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0);
            let total = simpson(kernel, 0.0, 1.0, 1_000_000);
            for &x in &[0.05, 0.3, 0.5, 0.77, 0.95] {
                let want = simpson(kernel, 0.0, x, 1_000_000) / total;
                let got = beta_reg(a, b, x);
                assert!((got - want).abs() < 1e-8, "I_{x}({a}, {b}) = {got}, oracle {want}");
            }
        }
    }
}

#[test]
fn f_distribution_identities() {
    for d in [1.0, 2.0, 7.0, 30.0] {
        assert!((f_cdf(1.0, d, d) - 0.5).abs() < 1e-12);
    }
    assert_eq!(f_sf(0.0, 2.0, 100.0), 1.0);
    let mut last = 1.0;
    for i in 1..200 {
        let p = f_sf(i as f64 * 0.1, 2.0, 97.0);
        assert!(p < last && p > 0.0);
        assert!((p + f_cdf(i as f64 * 0.1, 2.0, 97.0) - 1.0).abs() < 1e-12);
        last = p;
    }
}

fn synthetic_rows(n_per_arm: usize, shifts: [f64; 3], seed: u64) -> Vec<AnalysisRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (k, arm) in Arm::ALL.into_iter().enumerate() {
        for i in 0..n_per_arm {
            let pre = rng.random_range(1.0..4.0);
            let noise: f64 = StandardNormal.sample(&mut rng);
            let post: f64 = 1.0 + 0.5 * pre + shifts[k] * 0.5 + 0.5 * noise;
            rows.push(AnalysisRow {
                participant_id: format!("{arm}-{i}"),
                arm,
                pre,
                post: post.clamp(0.0, 5.0),
                followup: Some((post + 0.1).clamp(0.0, 5.0)),
                age: rng.random_range(18..80),
                gender: if rng.random::<bool>() { "female" } else { "male" }.into(),
                income_level: rng.random_range(1..=5),
                education_level: rng.random_range(1..=5),
            });
        }
    }
    rows
}

#[test]
fn design_has_expected_columns_and_rank() {
    let mut rows = synthetic_rows(20, [0.0; 3], 1);
    for (i, r) in rows.iter_mut().enumerate() {
        r.income_level = 1 + (i % 3) as u8;
        r.education_level = 2 + (i / 3 % 3) as u8;
    }
    assert_eq!(build_design(&rows).unwrap().columns.len(), 8);

    let cohort = run_virtual_trial(&CohortConfig::default_trial()).unwrap();
    let rows = rows_from_export(&export_rows(cohort.trial.state()), ScoreKind::Scam);
    let d = build_design(&rows).unwrap();
    assert_eq!(rows.len(), 3000);
    assert_eq!(d.columns.len(), 8);
    assert_eq!(elimination_rank(&d.x), 8);
}

#[test]
fn single_arm_is_rank_deficient() {
    let mut rows = synthetic_rows(20, [0.0; 3], 2);
    for r in &mut rows {
        r.arm = Arm::ChromeDino;
    }
    assert!(matches!(build_design(&rows), Err(AnalysisError::RankDeficient { .. })));
}

#[test]
fn balanced_design_adjusted_means_equal_raw_means() {
    // every arm gets the same covariate profiles, only the outcome differs
    let template = synthetic_rows(30, [0.0; 3], 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rows = Vec::new();
    for arm in Arm::ALL {
        for t in template.iter().filter(|r| r.arm == Arm::ShieldUp) {
            rows.push(AnalysisRow { arm, post: rng.random_range(0.0..5.0), ..t.clone() });
        }
    }
    let r = ancova_arm_effect(&rows, Timepoint::Post).unwrap();
    for arm in Arm::ALL {
        assert!((r.adjusted_means[&arm] - r.raw_means[&arm]).abs() < 1e-10);
    }
}

#[test]
fn ancova_invariants() {
    for seed in 0..10 {
        let r = ancova_arm_effect(&synthetic_rows(40, [0.0, 0.2, 0.4], seed), Timepoint::Post).unwrap();
        assert!(r.rss_full <= r.rss_reduced);
        assert_eq!(r.df.0, 2);
        assert!((0.0..=1.0).contains(&r.p_value) && (0.0..=1.0).contains(&r.partial_eta_sq));
        for (a, b) in CONTRAST_PAIRS {
            assert_eq!(cohens_d_adjusted(&r, a, b).unwrap(), -cohens_d_adjusted(&r, b, a).unwrap());
        }
        assert_eq!(cohens_d_adjusted(&r, Arm::ShieldUp, Arm::ShieldUp).unwrap(), 0.0);
    }
}

#[test]
fn identical_arms_give_f_zero_and_p_one() {
    let template: Vec<AnalysisRow> =
        synthetic_rows(30, [0.0; 3], 5).into_iter().filter(|r| r.arm == Arm::ShieldUp).collect();
    let rows: Vec<AnalysisRow> =
        Arm::ALL.into_iter().flat_map(|arm| template.iter().map(move |t| AnalysisRow { arm, ..t.clone() })).collect();
    let r = ancova_arm_effect(&rows, Timepoint::Post).unwrap();
    assert!(r.f_arm.abs() < 1e-9, "{}", r.f_arm);
    assert!((r.p_value - 1.0).abs() < 1e-9);
}

#[test]
fn perfect_fit_is_degenerate() {
    let mut rows = synthetic_rows(20, [0.0; 3], 5);
    for r in &mut rows {
        r.post = r.pre;
    }
    assert!(matches!(ancova_arm_effect(&rows, Timepoint::Post), Err(AnalysisError::DegenerateResidual)));
}

#[test]
fn half_sd_shift_recovers_cohens_d() {
    // residual SD is 0.5, so a shift of 0.25 score points on ShieldUp is 0.5 SD
    let mut within = 0;
    for seed in 0..20 {
        let r = ancova_arm_effect(&synthetic_rows(1000, [0.5, 0.0, 0.0], 100 + seed), Timepoint::Post).unwrap();
        let d = cohens_d_adjusted(&r, Arm::ShieldUp, Arm::ChromeDino).unwrap();
        if (d - 0.5).abs() <= 0.1 {
            within += 1;
        }
    }
    assert!(within >= 19, "{within}/20");
}

#[test]
fn permutation_null_p_values_are_uniform() {
    let cohort = run_virtual_trial(&CohortConfig::null(300, 17)).unwrap();
    let base = rows_from_export(&export_rows(cohort.trial.state()), ScoreKind::Scam);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut arms: Vec<Arm> = base.iter().map(|r| r.arm).collect();
    let ps: Vec<f64> = (0..500)
        .map(|_| {
            arms.shuffle(&mut rng);
            let rows: Vec<AnalysisRow> =
                base.iter().zip(&arms).map(|(r, a)| AnalysisRow { arm: *a, ..r.clone() }).collect();
            ancova_arm_effect(&rows, Timepoint::Post).unwrap().p_value
        })
        .collect();
    let ks = ks_uniform(&ps);
    assert!(ks < 0.08, "KS {ks}");
}

#[test]
fn dissipation_report_shapes() {
    let rows = synthetic_rows(40, [0.0; 3], 6);
    let same: Vec<AnalysisRow> = rows.iter().map(|r| AnalysisRow { followup: Some(r.post), ..r.clone() }).collect();
    let d = dissipation_contrast(&same, DEFAULT_FOLLOWUP_THRESHOLD).unwrap();
    assert!(d.recovery.iter().all(|r| r.recovery.abs() < 1e-12));
    assert_eq!(d.complete_cases, 120);

    let halved: Vec<AnalysisRow> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| AnalysisRow { followup: (i % 2 == 0).then_some(r.post), ..r.clone() })
        .collect();
    assert!(matches!(
        dissipation_contrast(&halved, DEFAULT_FOLLOWUP_THRESHOLD),
        Err(AnalysisError::InsufficientFollowup { .. })
    ));
}

#[test]
fn analysis_report_round_trips() {
    let cohort = run_virtual_trial(&CohortConfig::default_trial()).unwrap();
    let records = export_rows(cohort.trial.state());
    let report = analyze_export(&records, ScoreKind::Scam, Timepoint::Post, DEFAULT_FOLLOWUP_THRESHOLD).unwrap();
    let json = report_json(&report);
    let back: AnalysisReport = serde_json::from_str(&json).unwrap();
    assert_eq!(report_json(&back), json);
    assert!(render_summary_table(&report).contains("ANCOVA on post"));
}
