//! ANCOVA of trial outcomes: the score at post-test (or follow-up) regressed
//! on arm with the pre-test score and demographics as covariates.

mod ols;
mod report;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ols::{fit_ols, numerical_rank, OlsFit, RANK_TOL};
pub use report::{
    analyze_export, render_summary_table, report_json, summarize, AnalysisReport, SummaryCell, SUMMARY_PHASES,
};

use crate::sdat::SCALE_MAX;
use crate::stats::{f_sf, mean, t_two_sided_p};
use crate::trial::{Arm, ExportRecord};

pub const REFERENCE_ARM: Arm = Arm::ChromeDino;
/// Follow-up completeness required by the dissipation contrast.
pub const DEFAULT_FOLLOWUP_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("no rows to analyse")]
    Empty,
    #[error("participant `{participant_id}`: {field} is missing or out of range")]
    InvalidValue { participant_id: String, field: &'static str },
    #[error("{n} rows cannot support {needed} parameters plus residual")]
    InsufficientData { n: usize, needed: usize },
    #[error("design matrix has rank {rank} < {columns} columns")]
    RankDeficient { rank: usize, columns: usize },
    #[error("no residual degrees of freedom or zero residual variance")]
    DegenerateResidual,
    #[error("{rows} design rows but {outcomes} outcomes")]
    ShapeMismatch { rows: usize, outcomes: usize },
    #[error("follow-up present for {rate:.3} of rows, need {threshold}")]
    InsufficientFollowup { rate: f64, threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Scam,
    NotScam,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Scam => "scam",
            ScoreKind::NotScam => "notscam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "scam" => Some(ScoreKind::Scam),
            "notscam" => Some(ScoreKind::NotScam),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timepoint {
    Post,
    Followup,
}

impl Timepoint {
    pub fn as_str(self) -> &'static str {
        match self {
            Timepoint::Post => "post",
            Timepoint::Followup => "followup",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "post" => Some(Timepoint::Post),
            "followup" => Some(Timepoint::Followup),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub participant_id: String,
    pub arm: Arm,
    pub pre: f64,
    pub post: f64,
    pub followup: Option<f64>,
    pub age: u32,
    pub gender: String,
    pub income_level: u8,
    pub education_level: u8,
}

impl AnalysisRow {
    pub fn outcome(&self, t: Timepoint) -> Option<f64> {
        match t {
            Timepoint::Post => Some(self.post),
            Timepoint::Followup => self.followup,
        }
    }
}

/// Rows for one score, keeping participants with an arm and both pre and post.
pub fn rows_from_export(records: &[ExportRecord], score: ScoreKind) -> Vec<AnalysisRow> {
    records
        .iter()
        .filter_map(|r| {
            let (pre, post, fu) = match score {
                ScoreKind::Scam => (r.pre_scam, r.post_scam, r.fu_scam),
                ScoreKind::NotScam => (r.pre_notscam, r.post_notscam, r.fu_notscam),
            };
            Some(AnalysisRow {
                participant_id: r.participant_id.clone(),
                arm: r.arm?,
                pre: f64::from(pre?),
                post: f64::from(post?),
                followup: fu.map(f64::from),
                age: r.age,
                gender: r.gender.clone(),
                income_level: r.income_level,
                education_level: r.education_level,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub columns: Vec<String>,
    /// Sorted; the first level is the reference category.
    pub gender_levels: Vec<String>,
    pub arms: Vec<Arm>,
}

/// Columns 1 and 2 hold the arm dummies.
pub const ARM_COLUMNS: [usize; 2] = [1, 2];

impl DesignMatrix {
    pub fn arm_column(arm: Arm) -> Option<usize> {
        match arm {
            Arm::ShieldUp => Some(1),
            Arm::GeneralAwareness => Some(2),
            Arm::ChromeDino => None,
        }
    }

    /// Covariate means with the arm dummies set for `arm`.
    pub fn adjusted_point(&self, arm: Arm) -> DVector<f64> {
        let mut v = DVector::from_iterator(self.x.ncols(), self.x.column_iter().map(|c| c.mean()));
        for c in ARM_COLUMNS {
            v[c] = 0.0;
        }
        if let Some(c) = Self::arm_column(arm) {
            v[c] = 1.0;
        }
        v
    }

    pub fn without_arm(&self) -> DMatrix<f64> {
        self.x.clone().remove_columns_at(&ARM_COLUMNS)
    }
}

fn check_score(row: &AnalysisRow, field: &'static str, v: f64) -> Result<(), AnalysisError> {
    if v.is_finite() && (0.0..=f64::from(SCALE_MAX)).contains(&v) {
        Ok(())
    } else {
        Err(AnalysisError::InvalidValue { participant_id: row.participant_id.clone(), field })
    }
}

type Covariate = Box<dyn Fn(&AnalysisRow) -> f64>;

/// Intercept, arm dummies (ChromeDino reference), centred pre-score, centred
/// age, gender dummies, and centred ordinal income and education scores.
pub fn build_design(rows: &[AnalysisRow]) -> Result<DesignMatrix, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::Empty);
    }
    for r in rows {
        check_score(r, "pre", r.pre)?;
        check_score(r, "post", r.post)?;
        if let Some(f) = r.followup {
            check_score(r, "followup", f)?;
        }
        if r.gender.trim().is_empty() {
            return Err(AnalysisError::InvalidValue { participant_id: r.participant_id.clone(), field: "gender" });
        }
    }
    let gender_levels: Vec<String> =
        rows.iter().map(|r| r.gender.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut columns: Vec<String> =
        vec!["intercept".into(), "arm[ShieldUp]".into(), "arm[GeneralAwareness]".into(), "pre".into(), "age".into()];
    columns.extend(gender_levels.iter().skip(1).map(|g| format!("gender[{g}]")));
    columns.push("income_level".into());
    columns.push("education_level".into());
    let (n, p) = (rows.len(), columns.len());
    if n < p + 1 {
        return Err(AnalysisError::InsufficientData { n, needed: p + 1 });
    }

    let centred = |f: &dyn Fn(&AnalysisRow) -> f64| {
        let v: Vec<f64> = rows.iter().map(f).collect();
        let m = mean(&v);
        v.into_iter().map(move |x| x - m)
    };
    let mut x = DMatrix::<f64>::zeros(n, p);
    x.column_mut(0).fill(1.0);
    for (i, r) in rows.iter().enumerate() {
        if let Some(c) = DesignMatrix::arm_column(r.arm) {
            x[(i, c)] = 1.0;
        }
        if let Some(g) = gender_levels.iter().skip(1).position(|g| *g == r.gender) {
            x[(i, 5 + g)] = 1.0;
        }
    }
    let cols: [(usize, Covariate); 4] = [
        (3, Box::new(|r| r.pre)),
        (4, Box::new(|r| f64::from(r.age))),
        (p - 2, Box::new(|r| f64::from(r.income_level))),
        (p - 1, Box::new(|r| f64::from(r.education_level))),
    ];
    for (c, f) in cols.iter() {
        for (i, v) in centred(f.as_ref()).enumerate() {
            x[(i, *c)] = v;
        }
    }
    let rank = numerical_rank(&x);
    if rank < p {
        return Err(AnalysisError::RankDeficient { rank, columns: p });
    }
    Ok(DesignMatrix { x, columns, gender_levels, arms: rows.iter().map(|r| r.arm).collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t: f64,
    pub p_value: f64,
}

/// Difference of adjusted means, `a - b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub a: Arm,
    pub b: Arm,
    pub difference: f64,
    pub std_error: f64,
    pub t: f64,
    pub p_value: f64,
    pub cohens_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AncovaResult {
    pub outcome: Timepoint,
    pub n: usize,
    pub coefficients: Vec<Coefficient>,
    pub f_arm: f64,
    /// (numerator, denominator).
    pub df: (usize, usize),
    pub p_value: f64,
    pub partial_eta_sq: f64,
    pub rss_full: f64,
    pub rss_reduced: f64,
    pub residual_sd: f64,
    pub arm_counts: BTreeMap<Arm, usize>,
    pub raw_means: BTreeMap<Arm, f64>,
    pub adjusted_means: BTreeMap<Arm, f64>,
    pub standard_errors: BTreeMap<Arm, f64>,
    pub contrasts: Vec<Contrast>,
}

pub const CONTRAST_PAIRS: [(Arm, Arm); 3] = [
    (Arm::ShieldUp, Arm::ChromeDino),
    (Arm::GeneralAwareness, Arm::ChromeDino),
    (Arm::ShieldUp, Arm::GeneralAwareness),
];

fn quad(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

/// Type II (nested-model) F test for arm on the chosen outcome. Rows without
/// that outcome are dropped.
pub fn ancova_arm_effect(rows: &[AnalysisRow], outcome: Timepoint) -> Result<AncovaResult, AnalysisError> {
    let rows: Vec<AnalysisRow> = rows.iter().filter(|r| r.outcome(outcome).is_some()).cloned().collect();
    let design = build_design(&rows)?;
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.outcome(outcome).expect("filtered")));
    let full = fit_ols(&design.x, &y)?;
    let reduced = fit_ols(&design.without_arm(), &y)?;
    if full.rss <= 1e-20 * y.norm_squared() {
        return Err(AnalysisError::DegenerateResidual);
    }
    let df_num = ARM_COLUMNS.len();
    let df_den = full.df_resid;
    let ss_arm = (reduced.rss - full.rss).max(0.0);
    let f_arm = (ss_arm / df_num as f64) / (full.rss / df_den as f64);
    let p_value = f_sf(f_arm, df_num as f64, df_den as f64);
    let residual_sd = full.sigma2.sqrt();

    let se = full.std_errors();
    let coefficients = design
        .columns
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let t = full.coefficients[j] / se[j];
            Coefficient {
                name: name.clone(),
                estimate: full.coefficients[j],
                std_error: se[j],
                t,
                p_value: t_two_sided_p(t, df_den as f64),
            }
        })
        .collect();

    let mut arm_counts = BTreeMap::new();
    let mut raw_means = BTreeMap::new();
    let mut adjusted_means = BTreeMap::new();
    let mut standard_errors = BTreeMap::new();
    for arm in Arm::ALL {
        let ys: Vec<f64> = rows.iter().zip(y.iter()).filter(|(r, _)| r.arm == arm).map(|(_, v)| *v).collect();
        arm_counts.insert(arm, ys.len());
        raw_means.insert(arm, mean(&ys));
        let point = design.adjusted_point(arm);
        adjusted_means.insert(arm, point.dot(&full.coefficients));
        standard_errors.insert(arm, quad(&point, &full.covariance).sqrt());
    }
    let contrasts = CONTRAST_PAIRS
        .iter()
        .map(|&(a, b)| {
            let v = design.adjusted_point(a) - design.adjusted_point(b);
            let difference = v.dot(&full.coefficients);
            let std_error = quad(&v, &full.covariance).sqrt();
            let t = difference / std_error;
            Contrast {
                a,
                b,
                difference,
                std_error,
                t,
                p_value: t_two_sided_p(t, df_den as f64),
                cohens_d: difference / residual_sd,
            }
        })
        .collect();

    Ok(AncovaResult {
        outcome,
        n: rows.len(),
        coefficients,
        f_arm,
        df: (df_num, df_den),
        p_value,
        partial_eta_sq: ss_arm / (ss_arm + full.rss),
        rss_full: full.rss,
        rss_reduced: reduced.rss,
        residual_sd,
        arm_counts,
        raw_means,
        adjusted_means,
        standard_errors,
        contrasts,
    })
}

/// (adjusted mean of `a` - adjusted mean of `b`) / residual SD.
pub fn cohens_d_adjusted(r: &AncovaResult, a: Arm, b: Arm) -> Result<f64, AnalysisError> {
    if r.residual_sd.is_nan() || r.residual_sd <= 0.0 {
        return Err(AnalysisError::DegenerateResidual);
    }
    Ok((r.adjusted_means[&a] - r.adjusted_means[&b]) / r.residual_sd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub arm: Arm,
    pub post_adjusted: f64,
    pub followup_adjusted: f64,
    /// followup - post.
    pub recovery: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationReport {
    pub rows: usize,
    pub complete_cases: usize,
    pub followup_rate: f64,
    pub post: AncovaResult,
    pub followup: AncovaResult,
    pub recovery: Vec<Recovery>,
}

/// Fits the post and follow-up models on the same complete cases and reports
/// how far each arm's adjusted mean moved between them.
pub fn dissipation_contrast(rows: &[AnalysisRow], threshold: f64) -> Result<DissipationReport, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let complete: Vec<AnalysisRow> = rows.iter().filter(|r| r.followup.is_some()).cloned().collect();
    let rate = complete.len() as f64 / rows.len() as f64;
    if rate < threshold {
        return Err(AnalysisError::InsufficientFollowup { rate, threshold });
    }
    let post = ancova_arm_effect(&complete, Timepoint::Post)?;
    let followup = ancova_arm_effect(&complete, Timepoint::Followup)?;
    let recovery = Arm::ALL
        .iter()
        .map(|&arm| Recovery {
            arm,
            post_adjusted: post.adjusted_means[&arm],
            followup_adjusted: followup.adjusted_means[&arm],
            recovery: followup.adjusted_means[&arm] - post.adjusted_means[&arm],
        })
        .collect();
    Ok(DissipationReport {
        rows: rows.len(),
        complete_cases: complete.len(),
        followup_rate: rate,
        post,
        followup,
        recovery,
    })
}
