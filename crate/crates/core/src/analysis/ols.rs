use nalgebra::{DMatrix, DVector};

use super::AnalysisError;

/// Relative threshold on the diagonal of the pivoted R factor below which a
/// column counts as linearly dependent.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub rss: f64,
    pub df_resid: usize,
    /// rss / df_resid.
    pub sigma2: f64,
    /// (X'X)^-1 * sigma2.
    pub covariance: DMatrix<f64>,
}

impl OlsFit {
    pub fn std_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(f64::sqrt)
    }
}

/// Numerical rank from a column-pivoted QR factorization.
pub fn numerical_rank(x: &DMatrix<f64>) -> usize {
    let r = x.clone().col_piv_qr().r();
    let d = r.diagonal().map(f64::abs);
    let lead = d.iter().copied().fold(0.0, f64::max);
    if lead == 0.0 {
        return 0;
    }
    d.iter().filter(|v| **v > RANK_TOL * lead).count()
}

/// Least squares via Householder QR. Requires full column rank and more rows
/// than columns.
pub fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit, AnalysisError> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(AnalysisError::ShapeMismatch { rows: n, outcomes: y.len() });
    }
    let rank = numerical_rank(x);
    if rank < p {
        return Err(AnalysisError::RankDeficient { rank, columns: p });
    }
    if n <= p {
        return Err(AnalysisError::DegenerateResidual);
    }
    let qr = x.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let coefficients =
        r.solve_upper_triangular(&(q.transpose() * y)).ok_or(AnalysisError::RankDeficient { rank, columns: p })?;
    let residuals = y - x * &coefficients;
    let rss = residuals.norm_squared();
    let df_resid = n - p;
    let sigma2 = rss / df_resid as f64;
    let r_inv =
        r.solve_upper_triangular(&DMatrix::identity(p, p)).ok_or(AnalysisError::RankDeficient { rank, columns: p })?;
    let covariance = &r_inv * r_inv.transpose() * sigma2;
    Ok(OlsFit { coefficients, residuals, rss, df_resid, sigma2, covariance })
}
