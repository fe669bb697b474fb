//! Two-parameter logistic model fitted by marginal maximum likelihood (EM over
//! a fixed quadrature grid).

use serde::Serialize;

use super::{PsychometricsError, ResponseMatrix};
use crate::stats::{ln_logistic, logistic};

pub const QUADRATURE_NODES: usize = 21;
/// Nodes are equally spaced on [-SPAN, SPAN].
pub const QUADRATURE_SPAN: f64 = 4.0;
pub const A_MIN: f64 = 0.05;
pub const A_MAX: f64 = 10.0;
/// |b| is kept strictly below this.
pub const B_LIMIT: f64 = 6.0;

// projected parameters stay strictly inside the open box
const A_LO: f64 = A_MIN + 1e-3;
const A_HI: f64 = A_MAX - 1e-3;
const B_ABS: f64 = B_LIMIT - 1e-3;

const SMALL_SAMPLE: usize = 50;
const NEWTON_STEPS: usize = 25;
const NEWTON_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Converged once the log-likelihood gains less than this per iteration.
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-6 }
    }
}

/// P(correct | theta) = 1 / (1 + exp(-a (theta - b))).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IrtItemParams {
    pub a: f64,
    pub b: f64,
}

impl IrtItemParams {
    pub fn prob(&self, theta: f64) -> f64 {
        logistic(self.a * (theta - self.b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbilityEstimate {
    pub eap: f64,
    pub posterior_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrtFit {
    pub items: Vec<IrtItemParams>,
    pub abilities: Vec<AbilityEstimate>,
    /// Marginal log-likelihood at the returned parameters.
    pub loglik: f64,
    /// Log-likelihood at the start of each EM iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Quadrature nodes and standard-normal weights normalised to sum to one.
pub fn quadrature_grid() -> (Vec<f64>, Vec<f64>) {
    let step = 2.0 * QUADRATURE_SPAN / (QUADRATURE_NODES - 1) as f64;
    let nodes: Vec<f64> = (0..QUADRATURE_NODES).map(|q| -QUADRATURE_SPAN + step * q as f64).collect();
    let raw: Vec<f64> = nodes.iter().map(|t| (-0.5 * t * t).exp()).collect();
    let total: f64 = raw.iter().sum();
    (nodes, raw.into_iter().map(|w| w / total).collect())
}

/// Slope-intercept form used internally: z = a * theta + c, so b = -c / a.
#[derive(Debug, Clone, Copy)]
struct Item {
    a: f64,
    c: f64,
}

fn project(a: f64, c: f64) -> Item {
    let a = a.clamp(A_LO, A_HI);
    Item { a, c: c.clamp(-B_ABS * a, B_ABS * a) }
}

struct Posterior {
    loglik: f64,
    /// n x Q posterior weights.
    post: Vec<f64>,
}

fn e_step(m: &ResponseMatrix, items: &[Item], nodes: &[f64], ln_w: &[f64]) -> Posterior {
    let (n, k, nq) = (m.n(), m.k(), nodes.len());
    let mut lp = vec![0.0; k * nq];
    let mut lq = vec![0.0; k * nq];
    for (j, it) in items.iter().enumerate() {
        for (q, t) in nodes.iter().enumerate() {
            let z = it.a * t + it.c;
            lp[j * nq + q] = ln_logistic(z);
            lq[j * nq + q] = ln_logistic(-z);
        }
    }
    let mut post = vec![0.0; n * nq];
    let mut loglik = 0.0;
    for i in 0..n {
        let row = &mut post[i * nq..(i + 1) * nq];
        row.copy_from_slice(ln_w);
        for j in 0..k {
            let table = if m.get(i, j) == 1.0 { &lp } else { &lq };
            for (q, r) in row.iter_mut().enumerate() {
                *r += table[j * nq + q];
            }
        }
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for r in row.iter_mut() {
            *r = (*r - mx).exp();
            s += *r;
        }
        for r in row.iter_mut() {
            *r /= s;
        }
        loglik += mx + s.ln();
    }
    Posterior { loglik, post }
}

fn expected_ll(it: Item, nodes: &[f64], expected_n: &[f64], expected_r: &[f64]) -> f64 {
    nodes
        .iter()
        .enumerate()
        .map(|(q, t)| {
            let z = it.a * t + it.c;
            expected_r[q] * ln_logistic(z) + (expected_n[q] - expected_r[q]) * ln_logistic(-z)
        })
        .sum()
}

/// Newton ascent on one item's expected complete-data log-likelihood, with
/// step halving so the objective never decreases.
fn m_step_item(start: Item, nodes: &[f64], expected_n: &[f64], expected_r: &[f64]) -> Item {
    let mut cur = start;
    let mut cur_q = expected_ll(cur, nodes, expected_n, expected_r);
    for _ in 0..NEWTON_STEPS {
        let (mut ga, mut gc, mut iaa, mut iac, mut icc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (q, t) in nodes.iter().enumerate() {
            let p = logistic(cur.a * t + cur.c);
            let resid = expected_r[q] - expected_n[q] * p;
            ga += resid * t;
            gc += resid;
            let w = expected_n[q] * p * (1.0 - p);
            iaa += w * t * t;
            iac += w * t;
            icc += w;
        }
        let det = iaa * icc - iac * iac;
        let (da, dc) = if det > 1e-12 { ((icc * ga - iac * gc) / det, (iaa * gc - iac * ga) / det) } else { (ga, gc) };
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let cand = project(cur.a + step * da, cur.c + step * dc);
            let cand_q = expected_ll(cand, nodes, expected_n, expected_r);
            if cand_q >= cur_q {
                moved = (cand.a - cur.a).abs() + (cand.c - cur.c).abs() > NEWTON_TOL;
                cur = cand;
                cur_q = cand_q;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    cur
}

/// Fits the 2PL model to a binary response matrix.
///
/// Items answered uniformly correct or incorrect are rejected. Running out of
/// iterations is reported through `converged = false`, not as an error.
pub fn fit_2pl(m: &ResponseMatrix, opts: &EmOptions) -> Result<IrtFit, PsychometricsError> {
    m.check_binary()?;
    let (n, k) = (m.n(), m.k());
    for j in 0..k {
        let p = m.column_mean(j);
        if p == 0.0 || p == 1.0 {
            return Err(PsychometricsError::DegenerateItem(j));
        }
    }
    let mut warnings = Vec::new();
    if n < SMALL_SAMPLE {
        warnings.push(format!("only {n} respondents; 2PL estimates are unstable below {SMALL_SAMPLE}"));
    }

    let (nodes, weights) = quadrature_grid();
    let ln_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let nq = nodes.len();
    let mut items: Vec<Item> = (0..k)
        .map(|j| {
            let p = m.column_mean(j);
            project(1.0, (p / (1.0 - p)).ln())
        })
        .collect();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut posterior = e_step(m, &items, &nodes, &ln_w);
    loop {
        trace.push(posterior.loglik);
        if trace.len() >= 2 && trace[trace.len() - 1] - trace[trace.len() - 2] < opts.tol {
            converged = true;
            break;
        }
        if iterations == opts.max_iter {
            break;
        }
        iterations += 1;
        let mut expected_n = vec![0.0; nq];
        for i in 0..n {
            for q in 0..nq {
                expected_n[q] += posterior.post[i * nq + q];
            }
        }
        for (j, it) in items.iter_mut().enumerate() {
            let mut expected_r = vec![0.0; nq];
            for i in 0..n {
                if m.get(i, j) == 1.0 {
                    for q in 0..nq {
                        expected_r[q] += posterior.post[i * nq + q];
                    }
                }
            }
            *it = m_step_item(*it, &nodes, &expected_n, &expected_r);
        }
        posterior = e_step(m, &items, &nodes, &ln_w);
    }
    if !converged {
        warnings.push(format!("EM did not converge within {} iterations", opts.max_iter));
    }

    let abilities = (0..n)
        .map(|i| {
            let row = &posterior.post[i * nq..(i + 1) * nq];
            let eap: f64 = row.iter().zip(&nodes).map(|(p, t)| p * t).sum();
            let var: f64 = row.iter().zip(&nodes).map(|(p, t)| p * (t - eap) * (t - eap)).sum();
            AbilityEstimate { eap, posterior_sd: var.sqrt() }
        })
        .collect();
    Ok(IrtFit {
        items: items.iter().map(|it| IrtItemParams { a: it.a, b: -it.c / it.a }).collect(),
        abilities,
        loglik: posterior.loglik,
        loglik_trace: trace,
        iterations,
        converged,
        warnings,
    })
}
