//! Minimal SVG chart of mean score ± standard error per arm across the
//! three test phases.

use std::fmt::Write as _;

use shieldup_core::analysis::{AnalysisReport, SummaryCell, SUMMARY_PHASES};
use shieldup_core::trial::Arm;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 48.0;

fn colour(arm: Arm) -> &'static str {
    match arm {
        Arm::ShieldUp => "#1b9e77",
        Arm::GeneralAwareness => "#d95f02",
        Arm::ChromeDino => "#7570b3",
    }
}

/// About five evenly spaced tick values inside `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .min_by(|a, b| (a - raw).abs().total_cmp(&(b - raw).abs()))
        .unwrap_or(mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

/// Vertical extent of all bars, padded, never collapsing to a point.
fn y_range(cells: &[&SummaryCell]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in cells {
        if let Some(m) = c.mean {
            let se = c.std_error.unwrap_or(0.0);
            lo = lo.min(m - se);
            hi = hi.max(m + se);
        }
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.1).max(0.05);
    ((lo - pad).max(0.0), hi + pad)
}

pub fn means_chart(report: &AnalysisReport) -> String {
    let cells: Vec<&SummaryCell> = report.summary.iter().collect();
    let (lo, hi) = y_range(&cells);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let y = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);
    let x = |phase: usize, arm: usize| LEFT + plot_w * (phase as f64 + 0.5) / 3.0 + (arm as f64 - 1.0) * 8.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{} score by arm (mean ± SE)</text>"#,
        LEFT + plot_w / 2.0,
        report.score.as_str()
    );
    let _ = writeln!(s, r#"<path d="M{LEFT} {TOP} V{} H{}" fill="none" stroke="black"/>"#, TOP + plot_h, LEFT + plot_w);
    for t in ticks(lo, hi) {
        let ty = y(t);
        let _ = writeln!(s, r#"<line x1="{}" y1="{ty:.2}" x2="{LEFT}" y2="{ty:.2}" stroke="black"/>"#, LEFT - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{t:.2}</text>"#, LEFT - 8.0, ty + 4.0);
    }
    for (p, phase) in SUMMARY_PHASES.iter().enumerate() {
        let _ =
            writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{phase}</text>"#, x(p, 1), TOP + plot_h + 20.0);
    }

    for (a, arm) in Arm::ALL.into_iter().enumerate() {
        let c = colour(arm);
        let points: Vec<(f64, f64, Option<f64>)> = SUMMARY_PHASES
            .iter()
            .enumerate()
            .filter_map(|(p, phase)| {
                let cell = cells.iter().find(|cell| cell.arm == arm && cell.phase == *phase)?;
                Some((x(p, a), cell.mean?, cell.std_error))
            })
            .collect();
        let _ = write!(s, r#"<g class="arm" data-arm="{}" stroke="{c}" fill="{c}">"#, arm.as_str());
        if points.len() > 1 {
            let path: Vec<String> = points.iter().map(|(px, m, _)| format!("{px:.2},{:.2}", y(*m))).collect();
            let _ = write!(s, r#"<polyline points="{}" fill="none" stroke-width="2"/>"#, path.join(" "));
        }
        for (px, m, se) in &points {
            if let Some(se) = se {
                let _ = write!(
                    s,
                    r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
                    y(m - se),
                    y(m + se),
                    px - 4.0,
                    y(m - se),
                    px + 4.0,
                    y(m - se),
                    px - 4.0,
                    y(m + se),
                    px + 4.0,
                    y(m + se)
                );
            }
            let _ = write!(s, r#"<circle cx="{px:.2}" cy="{:.2}" r="3.5" data-mean="{m}"/>"#, y(*m));
        }
        let ly = TOP + 16.0 + 20.0 * a as f64;
        let lx = WIDTH - RIGHT + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke-width="2"/><text x="{}" y="{}" stroke="none" fill="black">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            arm.as_str()
        );
    }
    s.push_str("</svg>\n");
    s
}
