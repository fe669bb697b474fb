//! Item analysis for the discernment test: internal consistency, item-rest
//! correlations, two-parameter logistic calibration, principal-component
//! factor extraction with varimax rotation, and constrained item selection.

mod efa;
mod eigen;
mod irt;
mod reliability;
mod selection;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

pub use efa::{correlation_matrix, efa_principal, FactorLoadings, VARIMAX_MAX_SWEEPS, VARIMAX_TOL};
pub use eigen::{jacobi_eigen, SymmetricEigen, JACOBI_MAX_SWEEPS, JACOBI_TOL};
pub use irt::{
    fit_2pl, quadrature_grid, AbilityEstimate, EmOptions, IrtFit, IrtItemParams, A_MAX, A_MIN, B_LIMIT,
    QUADRATURE_NODES, QUADRATURE_SPAN,
};
pub use reliability::{cronbach_alpha, item_total_correlation, reliability, ReliabilityReport};
pub use selection::{select_items, ItemScore, Selection};

use crate::sdat::{ItemMeta, PilotData};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PsychometricsError {
    #[error("response matrix must be at least 2x2 (got {n}x{k})")]
    TooSmall { n: usize, k: usize },
    #[error("response matrix has {got} cells, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("response matrix contains a missing or non-finite cell at ({row}, {col})")]
    MissingCell { row: usize, col: usize },
    #[error("cell ({row}, {col}) is not 0 or 1")]
    NonBinary { row: usize, col: usize },
    #[error("at least two items are required")]
    TooFewItems,
    #[error("at least {needed} respondents are required")]
    TooFewRespondents { needed: usize },
    #[error("total score variance is zero")]
    ZeroTotalVariance,
    #[error("item {0} (or its rest score) has zero variance")]
    ZeroVariance(usize),
    #[error("item {0} is answered all-correct or all-incorrect")]
    DegenerateItem(usize),
    #[error("cannot extract {factors} factors from {items} items")]
    FactorCountTooLarge { factors: usize, items: usize },
    #[error("selection infeasible: {0}")]
    InfeasibleConstraint(String),
}

/// Listwise-complete respondent-by-item score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    data: DMatrix<f64>,
}

impl ResponseMatrix {
    pub fn from_row_major(n: usize, k: usize, cells: Vec<f64>) -> Result<Self, PsychometricsError> {
        if cells.len() != n * k {
            return Err(PsychometricsError::ShapeMismatch { expected: n * k, got: cells.len() });
        }
        Self::from_dmatrix(DMatrix::from_row_slice(n, k, &cells))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, PsychometricsError> {
        let k = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != k) {
            return Err(PsychometricsError::ShapeMismatch {
                expected: rows.len() * k,
                got: rows.iter().map(Vec::len).sum(),
            });
        }
        Self::from_row_major(rows.len(), k, rows.concat())
    }

    pub fn from_dmatrix(data: DMatrix<f64>) -> Result<Self, PsychometricsError> {
        let (n, k) = data.shape();
        if n < 2 || k < 2 {
            return Err(PsychometricsError::TooSmall { n, k });
        }
        for i in 0..n {
            for j in 0..k {
                if !data[(i, j)].is_finite() {
                    return Err(PsychometricsError::MissingCell { row: i, col: j });
                }
            }
        }
        Ok(Self { data })
    }

    /// Respondents.
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Items.
    pub fn k(&self) -> usize {
        self.data.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.column(j).iter().copied().collect()
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        self.data.column(j).mean()
    }

    pub fn row_totals(&self) -> Vec<f64> {
        self.data.row_iter().map(|r| r.sum()).collect()
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn check_binary(&self) -> Result<(), PsychometricsError> {
        for i in 0..self.n() {
            for j in 0..self.k() {
                let v = self.data[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(PsychometricsError::NonBinary { row: i, col: j });
                }
            }
        }
        Ok(())
    }

    /// Same data with columns in the given order.
    pub fn select_columns(&self, order: &[usize]) -> Self {
        Self { data: self.data.select_columns(order) }
    }
}

/// Output of `calibrate`: the JSON report written by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub respondents: usize,
    pub items: Vec<CalibratedItem>,
    pub alpha: f64,
    pub loglik: f64,
    pub em_iterations: usize,
    pub converged: bool,
    pub loadings: LoadingsReport,
    pub selection: Selection,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibratedItem {
    pub id: String,
    pub storyline_id: String,
    pub is_scam: bool,
    pub a: f64,
    pub b: f64,
    pub item_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadingsReport {
    pub eigenvalues: Vec<f64>,
    pub explained_variance: Vec<f64>,
    /// One row per item (same order as `items`), one column per factor.
    pub matrix: Vec<Vec<f64>>,
}

/// Runs the full item-condensation analysis over pilot data.
pub fn calibrate(pilot: &PilotData, target: usize) -> Result<CalibrationReport, PsychometricsError> {
    let m = &pilot.matrix;
    m.check_binary()?;
    if let Some(j) = (0..m.k()).find(|&j| m.column_mean(j) == 0.0 || m.column_mean(j) == 1.0) {
        return Err(PsychometricsError::DegenerateItem(j));
    }
    let alpha = cronbach_alpha(m)?;
    let item_total = item_total_correlation(m)?;
    let fit = fit_2pl(m, &EmOptions::default())?;
    let loadings = efa_principal(m, 2)?;
    let selection = select_items(m, &pilot.items, target)?;
    let items = pilot
        .items
        .iter()
        .zip(&fit.items)
        .zip(&item_total)
        .map(|((meta, p), r): ((&ItemMeta, &IrtItemParams), &f64)| CalibratedItem {
            id: meta.item_id.clone(),
            storyline_id: meta.storyline_id.clone(),
            is_scam: meta.is_scam,
            a: p.a,
            b: p.b,
            item_total: *r,
        })
        .collect();
    Ok(CalibrationReport {
        respondents: m.n(),
        items,
        alpha,
        loglik: fit.loglik,
        em_iterations: fit.iterations,
        converged: fit.converged,
        loadings: LoadingsReport {
            eigenvalues: loadings.eigenvalues.clone(),
            explained_variance: loadings.explained_variance.clone(),
            matrix: (0..m.k()).map(|i| loadings.loadings.row(i).iter().copied().collect()).collect(),
        },
        selection,
        warnings: fit.warnings,
    })
}
