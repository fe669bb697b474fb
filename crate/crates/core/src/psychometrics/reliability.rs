use serde::Serialize;

use super::{PsychometricsError, ResponseMatrix};
use crate::stats::{pearson, sample_variance};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityReport {
    pub alpha: f64,
    pub item_total: Vec<f64>,
}

/// Cronbach's alpha, k/(k-1) * (1 - sum of item variances / total variance),
/// with n-1 variances.
pub fn cronbach_alpha(m: &ResponseMatrix) -> Result<f64, PsychometricsError> {
    let k = m.k();
    if k < 2 {
        return Err(PsychometricsError::TooFewItems);
    }
    let total_var = sample_variance(&m.row_totals());
    if total_var <= 0.0 {
        return Err(PsychometricsError::ZeroTotalVariance);
    }
    let item_var: f64 = (0..k).map(|j| sample_variance(&m.column(j))).sum();
    let k = k as f64;
    Ok(k / (k - 1.0) * (1.0 - item_var / total_var))
}

/// Correlation of each item with the rest score (total minus the item).
pub fn item_total_correlation(m: &ResponseMatrix) -> Result<Vec<f64>, PsychometricsError> {
    if m.n() < 3 {
        return Err(PsychometricsError::TooFewRespondents { needed: 3 });
    }
    let totals = m.row_totals();
    (0..m.k())
        .map(|j| {
            let item = m.column(j);
            let rest: Vec<f64> = totals.iter().zip(&item).map(|(t, x)| t - x).collect();
            pearson(&item, &rest).ok_or(PsychometricsError::ZeroVariance(j))
        })
        .collect()
}

pub fn reliability(m: &ResponseMatrix) -> Result<ReliabilityReport, PsychometricsError> {
    Ok(ReliabilityReport { alpha: cronbach_alpha(m)?, item_total: item_total_correlation(m)? })
}
