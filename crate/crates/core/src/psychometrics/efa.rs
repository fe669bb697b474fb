//! Principal-component factor extraction with Kaiser-normalised varimax.

use nalgebra::DMatrix;

use super::{jacobi_eigen, PsychometricsError, ResponseMatrix};
use crate::stats::pearson;

/// Stop rotating once every pairwise angle is smaller than this (radians).
pub const VARIMAX_TOL: f64 = 1e-8;
pub const VARIMAX_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorLoadings {
    /// k x m, columns ordered by explained variance (descending).
    pub loadings: DMatrix<f64>,
    /// All k eigenvalues of the correlation matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// Column sum of squared loadings divided by k.
    pub explained_variance: Vec<f64>,
    pub communalities: Vec<f64>,
    pub rotation_sweeps: usize,
}

pub fn correlation_matrix(m: &ResponseMatrix) -> Result<DMatrix<f64>, PsychometricsError> {
    let k = m.k();
    let cols: Vec<Vec<f64>> = (0..k).map(|j| m.column(j)).collect();
    let mut r = DMatrix::<f64>::identity(k, k);
    for i in 0..k {
        for j in (i + 1)..k {
            let v = match pearson(&cols[i], &cols[j]) {
                Some(v) => v,
                None => {
                    let bad = if pearson(&cols[i], &cols[i]).is_none() { i } else { j };
                    return Err(PsychometricsError::ZeroVariance(bad));
                }
            };
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(r)
}

/// Rotates the columns of `l` in place; returns the number of sweeps used.
fn varimax(l: &mut DMatrix<f64>) -> usize {
    let (k, m) = l.shape();
    if m < 2 {
        return 0;
    }
    let h: Vec<f64> = (0..k).map(|i| l.row(i).norm()).collect();
    for i in 0..k {
        if h[i] > 0.0 {
            l.row_mut(i).scale_mut(1.0 / h[i]);
        }
    }
    let kf = k as f64;
    let mut sweeps = 0;
    while sweeps < VARIMAX_MAX_SWEEPS {
        sweeps += 1;
        let mut max_angle: f64 = 0.0;
        for p in 0..m {
            for q in (p + 1)..m {
                let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..k {
                    let (x, y) = (l[(i, p)], l[(i, q)]);
                    let u = x * x - y * y;
                    let v = 2.0 * x * y;
                    a += u;
                    b += v;
                    c += u * u - v * v;
                    d += 2.0 * u * v;
                }
                let phi = 0.25 * (d - 2.0 * a * b / kf).atan2(c - (a * a - b * b) / kf);
                max_angle = max_angle.max(phi.abs());
                let (s, co) = phi.sin_cos();
                for i in 0..k {
                    let (x, y) = (l[(i, p)], l[(i, q)]);
                    l[(i, p)] = co * x + s * y;
                    l[(i, q)] = -s * x + co * y;
                }
            }
        }
        if max_angle < VARIMAX_TOL {
            break;
        }
    }
    for i in 0..k {
        if h[i] > 0.0 {
            l.row_mut(i).scale_mut(h[i]);
        }
    }
    sweeps
}

/// Extracts `factors` principal components of the item correlation matrix
/// and applies varimax when more than one is kept.
///
/// Columns are reordered by explained variance and each column is signed so
/// its largest-magnitude loading is positive.
pub fn efa_principal(m: &ResponseMatrix, factors: usize) -> Result<FactorLoadings, PsychometricsError> {
    let k = m.k();
    if factors == 0 || factors > k {
        return Err(PsychometricsError::FactorCountTooLarge { factors, items: k });
    }
    let r = correlation_matrix(m)?;
    let eig = jacobi_eigen(&r);
    let mut l = DMatrix::<f64>::zeros(k, factors);
    for f in 0..factors {
        let scale = eig.values[f].max(0.0).sqrt();
        l.set_column(f, &(eig.vectors.column(f) * scale));
    }
    let rotation_sweeps = varimax(&mut l);

    let ss: Vec<f64> = (0..factors).map(|f| l.column(f).norm_squared()).collect();
    let mut order: Vec<usize> = (0..factors).collect();
    order.sort_by(|&a, &b| ss[b].total_cmp(&ss[a]));
    let mut l = l.select_columns(&order);
    for f in 0..factors {
        let mut col = l.column_mut(f);
        let lead = col.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            col.neg_mut();
        }
    }
    Ok(FactorLoadings {
        explained_variance: order.iter().map(|&f| ss[f] / k as f64).collect(),
        communalities: (0..k).map(|i| l.row(i).norm_squared()).collect(),
        eigenvalues: eig.values.iter().copied().collect(),
        loadings: l,
        rotation_sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn varimax_leaves_simple_structure_alone() {
        let mut l = DMatrix::from_row_slice(4, 2, &[0.9, 0.0, 0.8, 0.0, 0.0, 0.7, 0.0, 0.6]);
        let before = l.clone();
        varimax(&mut l);
        assert!((l - before).abs().max() < 1e-12);
    }

    #[test]
    fn varimax_undoes_a_rotation() {
        let simple = DMatrix::from_row_slice(4, 2, &[0.9, 0.0, 0.8, 0.0, 0.0, 0.7, 0.0, 0.6]);
        let (s, c) = 0.4f64.sin_cos();
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let mut l = &simple * rot;
        varimax(&mut l);
        // recovered up to column sign
        for i in 0..4 {
            for j in 0..2 {
                assert!((l[(i, j)].abs() - simple[(i, j)]).abs() < 1e-8, "{l}");
            }
        }
    }

    #[test]
    fn factor_count_checked() {
        let m = ResponseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(efa_principal(&m, 3), Err(PsychometricsError::FactorCountTooLarge { factors: 3, items: 2 }));
        assert_eq!(efa_principal(&m, 0), Err(PsychometricsError::FactorCountTooLarge { factors: 0, items: 2 }));
    }
}
