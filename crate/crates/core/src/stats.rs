//! Small numerical helpers shared by the psychometric and trial analyses.

use statrs::function::gamma::{gamma_ur, ln_gamma};

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(logistic(x)).
#[inline]
pub fn ln_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Pearson correlation; `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    debug_assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks with ties sharing their average rank; rank 1 is the largest value.
pub fn descending_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

const BETA_CF_EPS: f64 = 1e-15;
const BETA_CF_MAX_ITER: usize = 10_000;

/// Regularized incomplete beta function I_x(a, b), evaluated by the modified
/// Lentz continued fraction.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "beta_reg needs positive shape parameters");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    // the fraction converges quickly only below the mean; use symmetry above it
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_CF_EPS {
            break;
        }
    }
    h
}

/// CDF of the F distribution with (d1, d2) degrees of freedom.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    beta_reg(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))
}

/// Upper tail P(F > x), computed directly rather than as 1 - cdf.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))
}

/// Two-sided p-value of a t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(df / 2.0, x / 2.0)
}

/// Pearson chi-square test of independence on a contingency table.
/// Returns (statistic, degrees of freedom, p-value); empty rows and columns
/// are dropped.
pub fn chi_square_independence(table: &[Vec<f64>]) -> (f64, f64, f64) {
    let rows: Vec<&Vec<f64>> = table.iter().filter(|r| r.iter().sum::<f64>() > 0.0).collect();
    let ncol = rows.first().map_or(0, |r| r.len());
    let col_tot: Vec<f64> = (0..ncol).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
    let keep: Vec<usize> = (0..ncol).filter(|j| col_tot[*j] > 0.0).collect();
    let total: f64 = col_tot.iter().sum();
    let mut stat = 0.0;
    for r in &rows {
        let rt: f64 = r.iter().sum();
        for &j in &keep {
            let e = rt * col_tot[j] / total;
            stat += (r[j] - e).powi(2) / e;
        }
    }
    let df = ((rows.len() as f64 - 1.0) * (keep.len() as f64 - 1.0)).max(1.0);
    (stat, df, chi_square_sf(stat, df))
}

/// Kolmogorov-Smirnov distance between the sample and Uniform(0, 1).
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_reg_edges_and_symmetry() {
        assert_eq!(beta_reg(2.0, 3.0, 0.0), 0.0);
        assert_eq!(beta_reg(2.0, 3.0, 1.0), 1.0);
        // I_x(1, 1) = x
        assert!((beta_reg(1.0, 1.0, 0.3) - 0.3).abs() < 1e-14);
        // I_x(a, 1) = x^a
        assert!((beta_reg(2.5, 1.0, 0.4) - 0.4f64.powf(2.5)).abs() < 1e-13);
        for (a, b, x) in [(0.5, 3.0, 0.2), (7.0, 2.0, 0.9), (40.0, 60.0, 0.41)] {
            let lhs = beta_reg(a, b, x);
            let rhs = 1.0 - beta_reg(b, a, 1.0 - x);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn f_distribution_reference_points() {
        assert_eq!(f_sf(0.0, 2.0, 50.0), 1.0);
        for d in [1.0, 4.0, 17.0, 300.0] {
            assert!((f_cdf(1.0, d, d) - 0.5).abs() < 1e-10);
        }
        // with d1 = 2 the tail has the closed form (1 + 2x/d2)^(-d2/2)
        for (x, d2) in [(0.5f64, 10.0f64), (3.0, 97.0), (8.2, 2991.0)] {
            let closed = (1.0 + 2.0 * x / d2).powf(-d2 / 2.0);
            assert!((f_sf(x, 2.0, d2) - closed).abs() < 1e-12, "{x} {d2}");
        }
    }

    #[test]
    fn t_p_value_matches_cauchy() {
        // df = 1 is Cauchy: P(|T| > t) = 1 - 2 atan(t) / pi
        for t in [0.3, 1.0, 4.0] {
            let expected = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
            assert!((t_two_sided_p(t, 1.0) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn chi_square_two_df_closed_form() {
        // df = 2: survival is exp(-x/2)
        for x in [0.1, 2.0, 13.0] {
            assert!((chi_square_sf(x, 2.0) - (-x / 2.0f64).exp()).abs() < 1e-12);
        }
        let (stat, df, p) = chi_square_independence(&[vec![10.0, 10.0], vec![10.0, 10.0]]);
        assert_eq!((stat, df, p), (0.0, 1.0, 1.0));
    }

    #[test]
    fn ranks_share_ties() {
        assert_eq!(descending_ranks(&[0.2, 0.9, 0.2, 0.5]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn ks_of_perfect_grid_is_small() {
        let grid: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_uniform(&grid) - 0.005).abs() < 1e-12);
        assert!((ks_uniform(&[0.0; 10]) - 1.0).abs() < 1e-12);
    }
}
