use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use shieldup_core::analysis::{analyze_export, report_json, ScoreKind, Timepoint, DEFAULT_FOLLOWUP_THRESHOLD};
use shieldup_core::demo;
use shieldup_core::sdat::{read_responses_csv, write_responses_csv, Discernment};
use shieldup_core::simulation::CohortConfig;
use shieldup_core::trial::{read_export_csv, EXPORT_HEADER};

const BIN: &str = env!("CARGO_BIN_EXE_shieldup");
const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures");
const CONFIGS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");

fn shieldup(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

#[test]
fn validate_demo_corpus_passes() {
    let o = shieldup(&["validate", demo::CORPUS_DIR]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("tactics covered: 6/6") && out.contains("levels covered: 3/3"), "{out}");
}

#[test]
fn validate_rejects_bad_corpora() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&shieldup(&["validate", p(dir.path())])), 1);
    assert_eq!(code(&shieldup(&["validate", p(&dir.path().join("missing"))])), 1);

    let scenarios = dir.path().join("scenarios");
    fs::create_dir(&scenarios).unwrap();
    for g in demo::scenarios() {
        fs::write(scenarios.join(format!("{}.json", g.id)), g.to_json()).unwrap();
    }
    assert_eq!(code(&shieldup(&["validate", p(dir.path())])), 0);
    fs::copy(Path::new(FIXTURES).join("invalid/dangling-target.json"), scenarios.join("zz-broken.json")).unwrap();
    let o = shieldup(&["validate", p(dir.path())]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("zz-broken.json: dangling-target:"), "{err}");
}

#[test]
fn shipped_default_config_is_the_default_trial() {
    let text = fs::read_to_string(Path::new(CONFIGS).join("cohort-default.json")).unwrap();
    let cfg: CohortConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg, CohortConfig::default_trial());
}

#[test]
fn simulate_is_deterministic_and_checks_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.log");
    let b = dir.path().join("b.log");
    let c = dir.path().join("c.log");
    for (out, seed) in [(&a, "9"), (&b, "9"), (&c, "10")] {
        let o = shieldup(&["simulate", "--n", "120", "--seed", seed, "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(sha(&a), sha(&b));
    assert_ne!(sha(&a), sha(&c));

    let bad = dir.path().join("bad.json");
    let mut cfg = serde_json::to_value(CohortConfig::default_trial()).unwrap();
    cfg["attrition_followup"] = 1.5.into();
    fs::write(&bad, cfg.to_string()).unwrap();
    assert_eq!(code(&shieldup(&["simulate", "--config", p(&bad), "--out", p(&c)])), 2);
    fs::write(&bad, "{").unwrap();
    assert_eq!(code(&shieldup(&["simulate", "--config", p(&bad), "--out", p(&c)])), 2);
    assert_eq!(code(&shieldup(&["simulate", "--n", "0", "--out", p(&c)])), 2);
    assert_eq!(code(&shieldup(&["simulate", "--n", "10"])), 2);
}

#[test]
fn export_routes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let o = shieldup(&[
        "simulate",
        "--n",
        "90",
        "--seed",
        "4",
        "--out",
        p(&d.join("t.log")),
        "--export",
        p(&d.join("direct.csv")),
        "--data-dir",
        p(&data),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = shieldup(&["export", "--data-dir", p(&data), "--out", p(&d.join("from-dir.csv"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = shieldup(&["export", "--log", p(&d.join("t.log")), "--trial-config", p(&data.join("trial.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let direct = fs::read_to_string(d.join("direct.csv")).unwrap();
    assert_eq!(fs::read_to_string(d.join("from-dir.csv")).unwrap(), direct);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), direct);
    assert_eq!(read_export_csv(&direct).unwrap().len(), 90);

    let again = shieldup(&["simulate", "--n", "90", "--data-dir", p(&data)]);
    assert_eq!(code(&again), 2);
}

fn simulated_export(dir: &Path, n: &str, seed: &str) -> PathBuf {
    let csv = dir.join(format!("export-{seed}.csv"));
    let o = shieldup(&["simulate", "--n", n, "--seed", seed, "--export", p(&csv)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    csv
}

#[test]
fn analyze_matches_the_library_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulated_export(dir.path(), "600", "21");
    let svg = dir.path().join("chart.svg");
    let o = shieldup(&["analyze", "--input", p(&csv), "--outcome", "scam", "--phase", "post", "--plot", p(&svg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let records = read_export_csv(&fs::read_to_string(&csv).unwrap()).unwrap();
    let report = analyze_export(&records, ScoreKind::Scam, Timepoint::Post, DEFAULT_FOLLOWUP_THRESHOLD).unwrap();
    assert_eq!(String::from_utf8(o.stdout.clone()).unwrap(), report_json(&report));
    assert!(stderr(&o).contains("ANCOVA on post"));

    let chart = fs::read_to_string(&svg).unwrap();
    assert!(chart.starts_with("<svg") && chart.trim_end().ends_with("</svg>"));
    assert_eq!(chart.matches(r#"class="arm""#).count(), 3);
    for cell in &report.summary {
        let m = cell.mean.unwrap();
        assert!(chart.contains(&format!(r#"data-mean="{m}""#)), "{} {}", cell.arm, cell.phase);
    }

    let out = dir.path().join("r.json");
    let o = shieldup(&["analyze", "--input", p(&csv), "--outcome", "notscam", "--phase", "followup", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let back: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(back["timepoint"], "followup");
    assert_eq!(back["score"], "notscam");
}

fn column(name: &str) -> usize {
    EXPORT_HEADER.iter().position(|h| *h == name).unwrap()
}

#[test]
fn analyze_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulated_export(dir.path(), "90", "5");
    let text = fs::read_to_string(&csv).unwrap();
    let arm = column("arm");

    let single: String = text
        .lines()
        .enumerate()
        .filter(|(i, l)| *i == 0 || l.split(',').nth(arm) == Some("ShieldUp"))
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    let single_path = dir.path().join("single.csv");
    fs::write(&single_path, single).unwrap();
    let o = shieldup(&["analyze", "--input", p(&single_path)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("rank"), "{}", stderr(&o));

    assert_eq!(code(&shieldup(&["analyze", "--input", p(&csv), "--outcome", "both"])), 2);
    assert_eq!(code(&shieldup(&["analyze", "--input", p(&csv), "--phase", "pre"])), 2);
    assert_eq!(code(&shieldup(&["analyze", "--input", p(&dir.path().join("nope.csv"))])), 1);
    let garbage = dir.path().join("garbage.csv");
    fs::write(&garbage, "a,b\n1,2\n").unwrap();
    assert_eq!(code(&shieldup(&["analyze", "--input", p(&garbage)])), 1);
}

#[test]
fn identical_arms_give_p_one() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulated_export(dir.path(), "60", "8");
    let text = fs::read_to_string(&csv).unwrap();
    let (id, arm) = (column("participant_id"), column("arm"));
    let mut lines = text.lines();
    let mut out = format!("{}\n", lines.next().unwrap());
    let shieldup_rows: Vec<Vec<String>> =
        lines.map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>()).filter(|f| f[arm] == "ShieldUp").collect();
    for name in ["ShieldUp", "GeneralAwareness", "ChromeDino"] {
        for row in &shieldup_rows {
            let mut row = row.clone();
            row[id] = format!("{name}-{}", row[id]);
            row[arm] = name.to_string();
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    let path = dir.path().join("tripled.csv");
    fs::write(&path, out).unwrap();
    let o = shieldup(&["analyze", "--input", p(&path)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let f = report["ancova"]["f_arm"].as_f64().unwrap();
    let pval = report["ancova"]["p_value"].as_f64().unwrap();
    assert!(f.abs() < 1e-9, "F = {f}");
    assert!((pval - 1.0).abs() < 1e-9, "p = {pval}");
}

#[test]
fn pilot_and_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let responses = d.join("responses.csv");
    let o = shieldup(&["pilot", "--seed", "3", "--out", p(&responses)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = shieldup(&[
        "pilot",
        "--config",
        &format!("{CONFIGS}/pilot-candidate-pool.json"),
        "--seed",
        "3",
        "--out",
        p(&d.join("again.csv")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(sha(&responses), sha(&d.join("again.csv")));

    let (c1, c2) = (d.join("c1.json"), d.join("c2.json"));
    for out in [&c1, &c2] {
        let o = shieldup(&["calibrate", "--responses", p(&responses), "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(sha(&c1), sha(&c2));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&c1).unwrap()).unwrap();
    assert_eq!(report["respondents"], 360);
    assert_eq!(report["items"].as_array().unwrap().len(), 23);
    let selected: Vec<&str> =
        report["selection"]["selected"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(selected.len(), 10);
    let scam = selected
        .iter()
        .filter(|id| report["items"].as_array().unwrap().iter().any(|it| it["id"] == **id && it["is_scam"] == true))
        .count();
    assert_eq!(scam, 5);

    let mut rows = read_responses_csv(&fs::read_to_string(&responses).unwrap()).unwrap();
    for r in rows.iter_mut().filter(|r| r.item_id == "C04") {
        r.discernment = if r.is_scam { Discernment::Scam } else { Discernment::NotScam };
    }
    let constant = d.join("constant.csv");
    fs::write(&constant, write_responses_csv(&rows)).unwrap();
    let o = shieldup(&["calibrate", "--responses", p(&constant), "--out", p(&d.join("c3.json"))]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("item C04") && err.contains("all-correct"), "{err}");

    let broken = d.join("broken.csv");
    fs::write(&broken, "participant_id,form\nx,Q\n").unwrap();
    assert_eq!(code(&shieldup(&["calibrate", "--responses", p(&broken), "--out", p(&d.join("c4.json"))])), 1);
}

#[test]
fn serve_without_a_corpus_is_a_configuration_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = shieldup(&["serve", "--port", "0", "--corpus-dir", p(&dir.path().join("none"))]);
    assert_eq!(code(&o), 2);
    let cfg = dir.path().join("service.json");
    fs::write(&cfg, r#"{"unknown": 1}"#).unwrap();
    let o = shieldup(&["serve", "--port", "0", "--corpus-dir", demo::CORPUS_DIR, "--config", p(&cfg)]);
    assert_eq!(code(&o), 2);
}

fn get(addr: &str, path: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[cfg(unix)]
#[test]
fn serve_answers_health_and_flushes_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut child = Command::new(BIN)
        .args(["serve", "--port", "0", "--corpus-dir", demo::CORPUS_DIR, "--data-dir", p(&data)])
        .env("SHIELDUP_RESEARCHER_TOKEN", "research-secret")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server printed its address").unwrap();
        if let Some(a) = line.strip_prefix("listening on ") {
            break a.replace("0.0.0.0", "127.0.0.1");
        }
    };
    let reply = get(&addr, "/health");
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");

    let killed = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let start = Instant::now();
    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(start.elapsed() < Duration::from_secs(20), "server did not stop");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(status.success(), "{status:?}");
    assert!(data.join("snapshot.json").exists());
    assert!(data.join("trial.json").exists());
}
