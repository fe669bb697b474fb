//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use shieldup_cli::validate_corpus;
use shieldup_core::analysis::{ancova_arm_effect, fit_ols, rows_from_export, AnalysisRow, ScoreKind, Timepoint};
use shieldup_core::content::{scenario_paths, ScenarioGraph};
use shieldup_core::demo;
use shieldup_core::engine::{apply_choice, replay, start_session, LadderState, SessionMeta};
use shieldup_core::psychometrics::{
    cronbach_alpha, efa_principal, fit_2pl, item_total_correlation, jacobi_eigen, select_items, EmOptions,
    ResponseMatrix,
};
use shieldup_core::sdat::{pilot_matrix, ItemMeta};
use shieldup_core::simulation::{run_virtual_trial, simulate_pilot, CohortConfig, PilotConfig, PilotItem};
use shieldup_core::stats::{beta_reg, f_cdf, ks_uniform};
use shieldup_core::trial::{event_line, export_rows, parse_jsonl, Arm, TrialState};

const BIN: &str = env!("CARGO_BIN_EXE_shieldup");
const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/invalid");
const DEFAULT_COHORT: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/cohort-default.json");

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, budget: Duration, outcome: Outcome) -> Outcome {
    let detail = |d: String| format!("{d}; {:.2} s of {} s", elapsed.as_secs_f64(), budget.as_secs());
    match outcome {
        Ok(d) if elapsed < budget => Ok(detail(d)),
        Ok(d) | Err(d) => Err(detail(d)),
    }
}

fn content_pipeline() -> Outcome {
    let start = Instant::now();
    let v = validate_corpus(Path::new(demo::CORPUS_DIR)).map_err(|f| f.to_string())?;
    let demo_ok = v.passed() && v.coverage.tactics_covered() == 6 && v.coverage.levels_covered() == 3;

    let mut fixtures = 0;
    let mut misclassified = Vec::new();
    for entry in fs::read_dir(FIXTURES).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let class = path.file_stem().unwrap().to_string_lossy().into_owned();
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let scenarios = dir.path().join("scenarios");
        fs::create_dir(&scenarios).map_err(|e| e.to_string())?;
        fs::copy(&path, scenarios.join("candidate.json")).map_err(|e| e.to_string())?;
        let v = validate_corpus(dir.path()).map_err(|f| f.to_string())?;
        fixtures += 1;
        let tagged = v.diagnostics.iter().any(|d| d.contains(&format!("candidate.json: {class}:")));
        if v.passed() || !tagged {
            misclassified.push(class);
        }
    }
    let binary = Command::new(BIN).args(["validate", demo::CORPUS_DIR]).output().map_err(|e| e.to_string())?;
    let outcome = check(
        demo_ok && misclassified.is_empty() && fixtures == 15 && binary.status.code() == Some(0),
        format!(
            "demo {}/6 tactics, {}/3 levels; {}/{fixtures} invalid fixtures rejected with their class{}",
            v.coverage.tactics_covered(),
            v.coverage.levels_covered(),
            fixtures - misclassified.len(),
            if misclassified.is_empty() { String::new() } else { format!(" (wrong: {})", misclassified.join(", ")) }
        ),
    );
    within(start.elapsed(), Duration::from_secs(5), outcome)
}

fn engine_determinism() -> Outcome {
    let scenarios = demo::scenarios();
    let paths: Vec<_> = scenarios.iter().map(scenario_paths).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(20_000);
    let t0 = Utc.with_ymd_and_hms(2025, 3, 1, 12, 0, 0).unwrap();
    let ladder = LadderState { unlocked_level: 3, ..LadderState::new("walker") };
    let mut violations = 0;
    for w in 0..10_000 {
        let i = rng.random_range(0..scenarios.len());
        let g: &ScenarioGraph = &scenarios[i];
        let meta = SessionMeta { session_id: format!("w{w}"), participant_id: "walker".into(), started_at: t0 };
        let Ok(mut s) = start_session(meta.clone(), g, &ladder) else {
            violations += 1;
            continue;
        };
        let mut steps = 0;
        while !s.is_completed() && steps <= g.longest_path_len() {
            let c = g.node(&s.current_node).unwrap().choices.choose(&mut rng).unwrap();
            steps += 1;
            match apply_choice(&s, g, &c.id, t0 + chrono::Duration::seconds(steps as i64)) {
                Ok(next) => s = next,
                Err(_) => break,
            }
        }
        let walked: Vec<&str> = s.history.iter().map(|h| h.choice.as_str()).collect();
        let terminated = s.is_completed() && s.outcome.is_some() && steps <= g.longest_path_len();
        let replays = replay(meta, g, &s.history).is_ok_and(|r| r == s);
        let on_a_path = paths[i].iter().any(|p| p.choices == walked);
        if !(terminated && replays && on_a_path) {
            violations += 1;
        }
    }
    check(violations == 0, format!("10000 walks over {} scenarios, {violations} violations", scenarios.len()))
}

fn random_binary(n: usize, k: usize, seed: u64) -> ResponseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let ability: f64 = rng.random_range(-1.5..1.5);
            (0..k)
                .map(|j| if rng.random::<f64>() < 1.0 / (1.0 + (0.3 * j as f64 - ability).exp()) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    ResponseMatrix::from_rows(&rows).unwrap()
}

fn covariance(m: &ResponseMatrix) -> Vec<Vec<f64>> {
    let (n, k) = (m.n(), m.k());
    let means: Vec<f64> = (0..k).map(|j| (0..n).map(|i| m.get(i, j)).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            c[a][b] =
                (0..n).map(|i| (m.get(i, a) - means[a]) * (m.get(i, b) - means[b])).sum::<f64>() / (n as f64 - 1.0);
        }
    }
    c
}

fn alpha_oracle(c: &[Vec<f64>]) -> f64 {
    let k = c.len() as f64;
    let trace: f64 = (0..c.len()).map(|j| c[j][j]).sum();
    let total: f64 = c.iter().flatten().sum();
    k / (k - 1.0) * (1.0 - trace / total)
}

fn item_rest_oracle(c: &[Vec<f64>], j: usize) -> f64 {
    let k = c.len();
    let others = || (0..k).filter(move |l| *l != j);
    let cov: f64 = others().map(|l| c[j][l]).sum();
    let var: f64 = others().flat_map(|l| others().map(move |q| (l, q))).map(|(l, q)| c[l][q]).sum();
    cov / (c[j][j] * var).sqrt()
}

/// Solves X'X b = X'y by Gauss-Jordan elimination with partial pivoting.
fn normal_equations(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
    let p = x.ncols();
    let mut a = vec![vec![0.0; p + 1]; p];
    for r in 0..p {
        for c in 0..p {
            a[r][c] = (0..x.nrows()).map(|i| x[(i, r)] * x[(i, c)]).sum();
        }
        a[r][p] = (0..x.nrows()).map(|i| x[(i, r)] * y[i]).sum();
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..p).map(|r| a[r][p] / a[r][r]).collect()
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// I_x(a, b) for integer a, b: the probability of at least `a` successes in
/// `a + b - 1` trials with success probability `x`.
fn beta_reg_integer(a: u64, b: u64, x: f64) -> f64 {
    let n = a + b - 1;
    (a..=n).map(|j| binomial(n, j) * x.powi(j as i32) * (1.0 - x).powi((n - j) as i32)).sum()
}

fn sym_eigen_2(a: f64, b: f64, d: f64) -> [f64; 2] {
    let mid = (a + d) / 2.0;
    let rad = (((a - d) / 2.0).powi(2) + b * b).sqrt();
    [mid + rad, mid - rad]
}

fn sym_eigen_3(m: &DMatrix<f64>) -> [f64; 3] {
    let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
    let q = m.trace() / 3.0;
    let p2 = (m[(0, 0)] - q).powi(2) + (m[(1, 1)] - q).powi(2) + (m[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = (m - DMatrix::<f64>::identity(3, 3) * q) / p;
    let phi = (b.determinant() / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    [l1, 3.0 * q - l1 - l3, l3]
}

fn numerics_vs_oracles() -> Outcome {
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, err: f64| {
        let e = worst.entry(name).or_insert(0.0);
        *e = e.max(err);
    };

    for seed in 0..20 {
        let m = random_binary(30 + 5 * seed as usize, 4 + seed as usize % 4, seed);
        let c = covariance(&m);
        note("alpha", (cronbach_alpha(&m).unwrap() - alpha_oracle(&c)).abs());
        for (j, r) in item_total_correlation(&m).unwrap().iter().enumerate() {
            note("item-rest", (r - item_rest_oracle(&c, j)).abs());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let (n, p) = (rng.random_range(8..30), rng.random_range(2..5));
        let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
        let y = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let fit = fit_ols(&x, &y).unwrap();
        for (b, o) in fit.coefficients.iter().zip(normal_equations(&x, &y)) {
            note("ols", (b - o).abs() / o.abs().max(1.0));
        }
    }

    for _ in 0..200 {
        let (d1, d2) = (2 * rng.random_range(1..8u64), 2 * rng.random_range(1..15u64));
        let f = rng.random_range(0.01..6.0);
        let x = d1 as f64 * f / (d1 as f64 * f + d2 as f64);
        note("f-cdf", (f_cdf(f, d1 as f64, d2 as f64) - beta_reg_integer(d1 / 2, d2 / 2, x)).abs());
        let u: f64 = rng.random_range(0.001..0.999);
        note("f-cdf", (beta_reg(0.5, 0.5, u) - 2.0 / std::f64::consts::PI * u.sqrt().asin()).abs());
    }

    for _ in 0..50 {
        let (a, b, d): (f64, f64, f64) =
            (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let e = jacobi_eigen(&DMatrix::from_row_slice(2, 2, &[a, b, b, d]));
        for (got, want) in e.values.iter().zip(sym_eigen_2(a, b, d)) {
            note("jacobi", (got - want).abs());
        }
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = DMatrix::from_row_slice(3, 3, &[v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5]]);
        let e = jacobi_eigen(&m);
        for (got, want) in e.values.iter().zip(sym_eigen_3(&m)) {
            note("jacobi", (got - want).abs());
        }
    }

    let mut non_monotone = 0;
    for seed in 0..12 {
        let m = random_binary(120 + 20 * seed as usize, 6 + seed as usize % 4, 1000 + seed);
        let fit = fit_2pl(&m, &EmOptions::default()).map_err(|e| e.to_string())?;
        non_monotone += fit.loglik_trace.windows(2).filter(|w| w[1] < w[0] - 1e-9 * w[0].abs()).count();
    }

    let tolerance =
        BTreeMap::from([("alpha", 1e-12), ("item-rest", 1e-12), ("ols", 1e-8), ("f-cdf", 1e-10), ("jacobi", 1e-10)]);
    let ok = tolerance.iter().all(|(k, t)| worst[k] <= *t) && non_monotone == 0;
    let parts: Vec<String> = tolerance.iter().map(|(k, t)| format!("{k} {:.1e}<={t:.0e}", worst[k])).collect();
    check(ok, format!("{}; EM loglik decreases: {non_monotone} over 12 fixtures", parts.join(", ")))
}

fn irt_recovery() -> Outcome {
    let start = Instant::now();
    let a = [0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 1.1, 1.3, 1.5];
    let b = [-1.0, -0.6, -0.3, 0.0, 0.3, 0.6, 1.0, -0.1, 0.2, 0.5];
    let items: Vec<PilotItem> = (0..10)
        .map(|i| PilotItem {
            item_id: format!("U{i:02}"),
            storyline_id: format!("U{i:02}"),
            is_scam: i % 2 == 0,
            a: a[i],
            b: b[i],
        })
        .collect();
    let (mut hits, mut total) = (0, 0);
    for seed in 0..20 {
        let cfg = PilotConfig { n: 2000, seed, factor_correlation: 1.0, items: items.clone() };
        let data = pilot_matrix(&simulate_pilot(&cfg).unwrap()).unwrap();
        let fit = fit_2pl(&data.matrix, &EmOptions::default()).map_err(|e| e.to_string())?;
        for (truth, est) in cfg.items.iter().zip(&fit.items) {
            total += 1;
            if (truth.a - est.a).abs() <= 0.2 && (truth.b - est.b).abs() <= 0.1 {
                hits += 1;
            }
        }
    }
    let outcome = check(
        hits * 10 >= total * 9,
        format!("{hits}/{total} item estimates within a ±0.2, b ±0.1 over 20 seeds at n=2000"),
    );
    within(start.elapsed(), Duration::from_secs(60), outcome)
}

fn factor_structure() -> Outcome {
    let mut matched = 0;
    for seed in 0..100 {
        let cfg = PilotConfig::two_factor(300, 5, 5000 + seed);
        let data = pilot_matrix(&simulate_pilot(&cfg).unwrap()).unwrap();
        let l = efa_principal(&data.matrix, 2).map_err(|e| e.to_string())?;
        let factor: Vec<usize> =
            (0..data.items.len()).map(|i| usize::from(l.loadings[(i, 1)].abs() > l.loadings[(i, 0)].abs())).collect();
        let scam_factor = factor[data.items.iter().position(|m| m.is_scam).unwrap()];
        if data.items.iter().zip(&factor).all(|(m, f)| m.is_scam == (*f == scam_factor)) {
            matched += 1;
        }
    }
    check(matched >= 95, format!("{matched}/100 runs (n=300, 5 scam + 5 genuine items) split by class"))
}

fn selection_pipeline() -> Outcome {
    let mut failures = Vec::new();
    for seed in 0..10 {
        let cfg = PilotConfig::candidate_pool(seed);
        let data = pilot_matrix(&simulate_pilot(&cfg).unwrap()).unwrap();
        let sel = select_items(&data.matrix, &data.items, 10).map_err(|e| e.to_string())?;
        let scam = sel.selected.iter().filter(|id| data.items.iter().any(|m| &m.item_id == *id && m.is_scam)).count();
        let again = select_items(&data.matrix, &data.items, 10).map_err(|e| e.to_string())?;
        let mut order: Vec<usize> = (0..data.items.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let metas: Vec<ItemMeta> = order.iter().map(|&i| data.items[i].clone()).collect();
        let permuted = select_items(&data.matrix.select_columns(&order), &metas, 10).map_err(|e| e.to_string())?;
        let ok = data.items.len() == 23 && data.matrix.n() == 360 && sel.selected.len() == 10 && scam == 5;
        if !(ok && again == sel && permuted == sel) {
            failures.push(seed);
        }
    }
    let detail = "10 pilots of 23 items x 360 respondents select 10 items, 5/5, independent of column order";
    check(
        failures.is_empty(),
        if failures.is_empty() { detail.to_string() } else { format!("{detail}; failing seeds {failures:?}") },
    )
}

fn null_calibration() -> Outcome {
    let vt = run_virtual_trial(&CohortConfig::null(300, 4242)).map_err(|e| e.to_string())?;
    let base = rows_from_export(&export_rows(vt.trial.state()), ScoreKind::Scam);
    let mut arms: Vec<Arm> = base.iter().map(|r| r.arm).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4243);
    let mut ps = Vec::with_capacity(500);
    for _ in 0..500 {
        arms.shuffle(&mut rng);
        let rows: Vec<AnalysisRow> =
            base.iter().zip(&arms).map(|(r, a)| AnalysisRow { arm: *a, ..r.clone() }).collect();
        ps.push(ancova_arm_effect(&rows, Timepoint::Post).map_err(|e| e.to_string())?.p_value);
    }
    let ks = ks_uniform(&ps);
    check(ks < 0.08, format!("KS statistic {ks:.4} < 0.08 over 500 permutations"))
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let o = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("shieldup {}: {}", args.join(" "), String::from_utf8_lossy(&o.stderr)));
    }
    Ok(o.stdout)
}

fn analyze(csv: &Path, outcome: &str, phase: &str) -> Result<Value, String> {
    let out = run_cli(&["analyze", "--input", csv.to_str().unwrap(), "--outcome", outcome, "--phase", phase])?;
    serde_json::from_slice(&out).map_err(|e| e.to_string())
}

fn cohens_d(report: &Value, a: &str, b: &str) -> f64 {
    let c = report["ancova"]["contrasts"].as_array().unwrap().iter().find(|c| c["a"] == a && c["b"] == b).unwrap();
    c["cohens_d"].as_f64().unwrap()
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let base: CohortConfig = serde_json::from_str(&fs::read_to_string(DEFAULT_COHORT).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (mut ordering, mut d_larger, mut transient) = (0, 0, 0);
    for k in 0..20 {
        let seed = (base.seed + k).to_string();
        let csv = dir.path().join(format!("export-{seed}.csv"));
        run_cli(&["simulate", "--config", DEFAULT_COHORT, "--seed", &seed, "--export", csv.to_str().unwrap()])?;

        let scam = analyze(&csv, "scam", "post")?;
        let m = &scam["ancova"]["adjusted_means"];
        let mean = |arm: &str| m[arm].as_f64().unwrap();
        if scam["ancova"]["p_value"].as_f64().unwrap() < 0.001
            && mean("ShieldUp") > mean("GeneralAwareness")
            && mean("GeneralAwareness") > mean("ChromeDino")
        {
            ordering += 1;
        }
        if cohens_d(&scam, "ShieldUp", "ChromeDino") > cohens_d(&scam, "GeneralAwareness", "ChromeDino") {
            d_larger += 1;
        }
        let post = analyze(&csv, "notscam", "post")?["ancova"]["p_value"].as_f64().unwrap();
        let followup = analyze(&csv, "notscam", "followup")?["ancova"]["p_value"].as_f64().unwrap();
        if post < 0.05 && followup > 0.05 {
            transient += 1;
        }
    }
    let outcome = check(
        ordering >= 18 && d_larger >= 18 && transient >= 18,
        format!(
            "over 20 seeds: ordering with p<0.001 {ordering}/20, d(ShieldUp) > d(GA) {d_larger}/20, not-scam effect at post only {transient}/20"
        ),
    );
    within(start.elapsed(), Duration::from_secs(300), outcome)
}

fn trial_integrity() -> Outcome {
    let cfg = CohortConfig { n: 100, seed: 99, ..CohortConfig::default_trial() };
    let trial = run_virtual_trial(&cfg).map_err(|e| e.to_string())?.trial;
    let config = trial.config().clone();
    let events = trial.log().events();
    let mut live = TrialState::new(config.clone());
    let mut prefix = String::new();
    let mut mismatches = 0;
    for k in 0..=events.len() {
        let clean = parse_jsonl(&prefix).map_err(|e| e.to_string())?;
        if clean.torn_tail || TrialState::fold(config.clone(), &clean.log).ok().as_ref() != Some(&live) {
            mismatches += 1;
        }
        if k < events.len() {
            let line = event_line(&events[k]) + "\n";
            let torn = parse_jsonl(&format!("{prefix}{}", &line[..line.len() / 2])).map_err(|e| e.to_string())?;
            if !torn.torn_tail || TrialState::fold(config.clone(), &torn.log).ok().as_ref() != Some(&live) {
                mismatches += 1;
            }
            live.apply(&events[k]).map_err(|e| e.to_string())?;
            prefix.push_str(&line);
        }
    }
    let live_ok = &live == trial.state();

    let full = run_virtual_trial(&CohortConfig::default_trial()).map_err(|e| e.to_string())?.trial;
    let mut counts: BTreeMap<Arm, usize> = BTreeMap::new();
    for p in full.state().participants.values() {
        *counts.entry(p.arm.ok_or("unrandomized participant")?).or_default() += 1;
    }
    let balanced = Arm::ALL.iter().all(|a| counts.get(a) == Some(&1000));
    check(
        mismatches == 0 && live_ok && balanced,
        format!(
            "{} boundaries (clean and torn), {mismatches} mismatches; n=3000 arms {:?}",
            events.len() + 1,
            counts.values().collect::<Vec<_>>()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("content pipeline", content_pipeline),
        ("engine determinism", engine_determinism),
        ("numerics vs oracles", numerics_vs_oracles),
        ("IRT recovery", irt_recovery),
        ("factor-structure reproduction", factor_structure),
        ("selection pipeline", selection_pipeline),
        ("null calibration", null_calibration),
        ("end-to-end pattern reproduction", end_to_end),
        ("trial integrity", trial_integrity),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS  {name}: {d} [{secs:.2} s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d} [{secs:.2} s]");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
