use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    ancova_arm_effect, dissipation_contrast, rows_from_export, AnalysisError, AnalysisRow, AncovaResult,
    DissipationReport, ScoreKind, Timepoint,
};
use crate::stats::{mean, sample_variance};
use crate::trial::{Arm, ExportRecord};

pub const SUMMARY_PHASES: [&str; 3] = ["pre", "post", "followup"];

/// Raw mean and standard error for one arm at one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub arm: Arm,
    pub phase: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub std_error: Option<f64>,
}

pub fn summarize(rows: &[AnalysisRow]) -> Vec<SummaryCell> {
    let mut cells = Vec::new();
    for arm in Arm::ALL {
        for phase in SUMMARY_PHASES {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.arm == arm)
                .filter_map(|r| match phase {
                    "pre" => Some(r.pre),
                    "post" => Some(r.post),
                    _ => r.followup,
                })
                .collect();
            let n = vals.len();
            cells.push(SummaryCell {
                arm,
                phase: phase.to_string(),
                n,
                mean: (n > 0).then(|| mean(&vals)),
                std_error: (n > 1).then(|| (sample_variance(&vals) / n as f64).sqrt()),
            });
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub score: ScoreKind,
    pub timepoint: Timepoint,
    pub ancova: AncovaResult,
    pub summary: Vec<SummaryCell>,
    pub dissipation: Option<DissipationReport>,
    pub notes: Vec<String>,
}

/// The analysis run by both the command line and the HTTP service.
pub fn analyze_export(
    records: &[ExportRecord],
    score: ScoreKind,
    timepoint: Timepoint,
    followup_threshold: f64,
) -> Result<AnalysisReport, AnalysisError> {
    let rows = rows_from_export(records, score);
    let ancova = ancova_arm_effect(&rows, timepoint)?;
    let mut notes = vec!["pairwise contrasts are not adjusted for multiple comparisons".to_string()];
    let dissipation = match dissipation_contrast(&rows, followup_threshold) {
        Ok(d) => Some(d),
        Err(e) => {
            notes.push(format!("dissipation contrast skipped: {e}"));
            None
        }
    };
    Ok(AnalysisReport { score, timepoint, ancova, summary: summarize(&rows), dissipation, notes })
}

pub fn report_json(report: &AnalysisReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

fn cell(mean: Option<f64>, se: Option<f64>) -> String {
    match (mean, se) {
        (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
        (Some(m), None) => format!("{m:.3}"),
        _ => "-".to_string(),
    }
}

/// Plain-text table of means ± SE by arm and phase, followed by the ANCOVA
/// line and adjusted means.
pub fn render_summary_table(report: &AnalysisReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} score: mean ± SE by arm and phase", report.score.as_str());
    let _ = writeln!(out, "{:<18}{:>18}{:>18}{:>18}", "arm", "pre", "post", "followup");
    for arm in Arm::ALL {
        let _ = write!(out, "{:<18}", arm.as_str());
        for phase in SUMMARY_PHASES {
            let c = report.summary.iter().find(|c| c.arm == arm && c.phase == phase).expect("all cells present");
            let _ = write!(out, "{:>18}", cell(c.mean, c.std_error));
        }
        out.push('\n');
    }
    let a = &report.ancova;
    let _ = writeln!(
        out,
        "ANCOVA on {} ({} rows): F({}, {}) = {:.3}, p = {:.3e}, partial eta^2 = {:.4}",
        report.timepoint.as_str(),
        a.n,
        a.df.0,
        a.df.1,
        a.f_arm,
        a.p_value,
        a.partial_eta_sq
    );
    for arm in Arm::ALL {
        let _ = writeln!(
            out,
            "  adjusted {:<18}{}",
            arm.as_str(),
            cell(Some(a.adjusted_means[&arm]), Some(a.standard_errors[&arm]))
        );
    }
    for c in &a.contrasts {
        let _ = writeln!(
            out,
            "  {} - {}: diff {:.3}, d = {:.3}, p = {:.3e}",
            c.a, c.b, c.difference, c.cohens_d, c.p_value
        );
    }
    out
}
