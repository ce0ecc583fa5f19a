//! The observed-data likelihood.
//!
//! Each observation contributes one of four cells according to its
//! `(y, d)` pair. With `r1 = F_eps(x'beta + delta1)`, `r0 = F_eps(x'beta)`
//! and `s = F_nu(x'alpha + z'gamma)`, the cell probabilities are
//!
//! ```text
//! p11 = C(r1, s)            p01 = s - C(r1, s)
//! p10 = r0 - C(r0, s)       p00 = 1 - r0 - s + C(r0, s)
//! ```
//!
//! which sum to one identically. The gradient is assembled from the
//! analytic copula partials and the marginal densities; when a marginal is
//! a sieve, its coefficient derivatives enter through the same chain rule.
//!
//! Cell probabilities are floored at [`PROB_FLOOR`] inside logs so a
//! wandering optimizer line search cannot produce `-inf`; the gradient
//! uses the same floored denominator, which preserves the push away from
//! the degenerate region.

use serde::{Deserialize, Serialize};

use crate::copula::{self, DependenceParam};
use crate::marginals::Marginal;
use crate::{Error, Result};

/// Numerical floor for cell probabilities inside logs and gradient
/// denominators.
pub const PROB_FLOOR: f64 = 1e-12;

/// Marginal CDF values are kept strictly inside (0,1) before entering the
/// copula, which needs open-interval arguments for its partials.
const U_CLAMP: f64 = 1e-15;

/// Observed data: binary outcome `y`, binary treatment `d`, outcome-equation
/// covariates `x` (shared by both equations) and excluded instruments `z`
/// (treatment equation only). Rows are stored contiguously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    y: Vec<bool>,
    d: Vec<bool>,
    x: Vec<f64>,
    z: Vec<f64>,
    p: usize,
    q: usize,
}

impl Dataset {
    /// Build and validate. `x` and `z` are row-major with `p` and `q`
    /// columns. Requires at least one observation, finite covariates, and
    /// variation in both `y` and `d` (a constant column makes the model
    /// degenerate).
    pub fn new(y: Vec<bool>, d: Vec<bool>, x: Vec<f64>, p: usize, z: Vec<f64>, q: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::DegenerateData("empty dataset".into()));
        }
        if d.len() != n {
            return Err(Error::Dimension(format!(
                "y has {n} rows but d has {}",
                d.len()
            )));
        }
        if p == 0 {
            return Err(Error::Dimension("need at least one outcome covariate".into()));
        }
        if x.len() != n * p || z.len() != n * q {
            return Err(Error::Dimension(format!(
                "covariate storage mismatch: x {} != {n}x{p}, z {} != {n}x{q}",
                x.len(),
                z.len()
            )));
        }
        if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("non-finite covariate value".into()));
        }
        let all_same = |b: &[bool]| b.iter().all(|&v| v == b[0]);
        if all_same(&y) {
            return Err(Error::DegenerateData("outcome y has no variation".into()));
        }
        if all_same(&d) {
            return Err(Error::DegenerateData("treatment d has no variation".into()));
        }
        Ok(Dataset { y, d, x, z, p, q })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of outcome-equation covariates.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of excluded instruments.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn y(&self) -> &[bool] {
        &self.y
    }

    pub fn d(&self) -> &[bool] {
        &self.d
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.q..(i + 1) * self.q]
    }

    /// Mean of each outcome-covariate column (used for default
    /// treatment-effect evaluation points).
    pub fn x_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.p];
        for i in 0..self.n() {
            for (j, v) in self.x_row(i).iter().enumerate() {
                m[j] += v;
            }
        }
        let n = self.n() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

/// Structural parameters of the two-equation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    /// Treatment-equation coefficients on `x`.
    pub alpha: Vec<f64>,
    /// Treatment-equation coefficients on the instruments `z`.
    pub gamma: Vec<f64>,
    /// Outcome-equation coefficients on `x`.
    pub beta: Vec<f64>,
    /// Coefficient on the treatment indicator in the outcome equation.
    pub delta1: f64,
    /// Copula family and dependence parameter linking the latent errors.
    pub dep: DependenceParam,
}

impl Theta {
    pub fn treatment_index(&self, x: &[f64], z: &[f64]) -> f64 {
        dot(&self.alpha, x) + dot(&self.gamma, z)
    }

    pub fn outcome_index(&self, x: &[f64], d: bool) -> f64 {
        dot(&self.beta, x) + if d { self.delta1 } else { 0.0 }
    }

    fn check_dims(&self, data: &Dataset) -> Result<()> {
        if self.alpha.len() != data.p() || self.beta.len() != data.p() {
            return Err(Error::Dimension(format!(
                "coefficient length {} != {} covariates",
                self.alpha.len().max(self.beta.len()),
                data.p()
            )));
        }
        if self.gamma.len() != data.q() {
            return Err(Error::Dimension(format!(
                "instrument coefficient length {} != {} instruments",
                self.gamma.len(),
                data.q()
            )));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The four cell probabilities at one covariate point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellProbs {
    pub p11: f64,
    pub p10: f64,
    pub p01: f64,
    pub p00: f64,
}

impl CellProbs {
    pub fn sum(&self) -> f64 {
        self.p11 + self.p10 + self.p01 + self.p00
    }

    pub fn pick(&self, y: bool, d: bool) -> f64 {
        match (y, d) {
            (true, true) => self.p11,
            (true, false) => self.p10,
            (false, true) => self.p01,
            (false, false) => self.p00,
        }
    }

    /// Floor each cell at [`PROB_FLOOR`] and renormalize to sum one.
    pub fn floored(&self) -> CellProbs {
        let f = |p: f64| p.max(PROB_FLOOR);
        let (a, b, c, d) = (f(self.p11), f(self.p10), f(self.p01), f(self.p00));
        let total = a + b + c + d;
        CellProbs {
            p11: a / total,
            p10: b / total,
            p01: c / total,
            p00: d / total,
        }
    }
}

/// Cell probabilities at covariate point `(x, z)` (pre-floor; the exact
/// algebraic cells, which can brush zero or dip to -1e-16 at extreme
/// indices).
pub fn cell_probs(
    theta: &Theta,
    f_eps: &Marginal,
    f_nu: &Marginal,
    x: &[f64],
    z: &[f64],
) -> Result<CellProbs> {
    let r1 = clamp_u(f_eps.cdf(theta.outcome_index(x, true)));
    let r0 = clamp_u(f_eps.cdf(theta.outcome_index(x, false)));
    let s = clamp_u(f_nu.cdf(theta.treatment_index(x, z)));
    let c1 = copula::cdf(&theta.dep, r1, s)?;
    let c0 = copula::cdf(&theta.dep, r0, s)?;
    Ok(CellProbs {
        p11: c1,
        p10: r0 - c0,
        p01: s - c1,
        p00: 1.0 - r0 - s + c0,
    })
}

fn clamp_u(u: f64) -> f64 {
    u.clamp(U_CLAMP, 1.0 - U_CLAMP)
}

/// Canonical flat parameter layout used by the gradient, the optimizer and
/// the inference code: `[alpha, gamma, beta, delta1, rho, a_eps, a_nu]`
/// where the sieve coefficient blocks are empty for parametric marginals
/// and `rho` is on the family-native scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub p: usize,
    pub q: usize,
    pub k_eps: usize,
    pub k_nu: usize,
}

impl ParamLayout {
    pub fn for_model(data: &Dataset, f_eps: &Marginal, f_nu: &Marginal) -> Self {
        ParamLayout {
            p: data.p(),
            q: data.q(),
            k_eps: sieve_k(f_eps),
            k_nu: sieve_k(f_nu),
        }
    }

    pub fn len(&self) -> usize {
        2 * self.p + self.q + 2 + self.k_eps + self.k_nu
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn alpha(&self) -> std::ops::Range<usize> {
        0..self.p
    }

    pub fn gamma(&self) -> std::ops::Range<usize> {
        self.p..self.p + self.q
    }

    pub fn beta(&self) -> std::ops::Range<usize> {
        self.p + self.q..2 * self.p + self.q
    }

    pub fn delta1(&self) -> usize {
        2 * self.p + self.q
    }

    pub fn rho(&self) -> usize {
        2 * self.p + self.q + 1
    }

    pub fn a_eps(&self) -> std::ops::Range<usize> {
        let start = 2 * self.p + self.q + 2;
        start..start + self.k_eps
    }

    pub fn a_nu(&self) -> std::ops::Range<usize> {
        let start = 2 * self.p + self.q + 2 + self.k_eps;
        start..start + self.k_nu
    }
}

fn sieve_k(m: &Marginal) -> usize {
    match m {
        Marginal::Parametric(_) => 0,
        Marginal::Sieve(s) => s.degree(),
    }
}

/// Mean log likelihood `(1/n) sum_i log p_{y_i d_i}(x_i, z_i)`.
///
/// The 1/n scaling keeps objective and gradient magnitudes comparable across
/// sample sizes, so one optimizer tolerance works for n = 500 and n = 20000.
pub fn loglik(data: &Dataset, theta: &Theta, f_eps: &Marginal, f_nu: &Marginal) -> Result<f64> {
    loglik_weighted(data, theta, f_eps, f_nu, None)
}

/// Mean log likelihood with optional per-observation weights (the weighted
/// bootstrap refits with unit-mean exponential weights).
pub fn loglik_weighted(
    data: &Dataset,
    theta: &Theta,
    f_eps: &Marginal,
    f_nu: &Marginal,
    weights: Option<&[f64]>,
) -> Result<f64> {
    theta.check_dims(data)?;
    check_weights(data, weights)?;
    let mut total = 0.0;
    for i in 0..data.n() {
        let (x, z) = (data.x_row(i), data.z_row(i));
        let p_cell = observed_cell(theta, f_eps, f_nu, x, z, data.y[i], data.d[i])?;
        let w = weights.map_or(1.0, |w| w[i]);
        total += w * p_cell.max(PROB_FLOOR).ln();
    }
    Ok(total / data.n() as f64)
}

/// Probability of the observed cell only (one copula evaluation).
fn observed_cell(
    theta: &Theta,
    f_eps: &Marginal,
    f_nu: &Marginal,
    x: &[f64],
    z: &[f64],
    y: bool,
    d: bool,
) -> Result<f64> {
    let r = clamp_u(f_eps.cdf(theta.outcome_index(x, d)));
    let s = clamp_u(f_nu.cdf(theta.treatment_index(x, z)));
    let c = copula::cdf(&theta.dep, r, s)?;
    Ok(match (y, d) {
        (true, true) => c,
        (false, true) => s - c,
        (true, false) => r - c,
        (false, false) => 1.0 - r - s + c,
    })
}

fn check_weights(data: &Dataset, weights: Option<&[f64]>) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != data.n() {
            return Err(Error::Dimension(format!(
                "{} weights for {} observations",
                w.len(),
                data.n()
            )));
        }
        if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Domain("weights must be finite and strictly positive".into()));
        }
    }
    Ok(())
}

/// Mean log likelihood and its gradient in the [`ParamLayout`] order, with
/// the dependence coordinate on the family-native scale.
pub fn loglik_grad(
    data: &Dataset,
    theta: &Theta,
    f_eps: &Marginal,
    f_nu: &Marginal,
) -> Result<(f64, Vec<f64>)> {
    loglik_grad_weighted(data, theta, f_eps, f_nu, None)
}

/// Weighted variant of [`loglik_grad`].
pub fn loglik_grad_weighted(
    data: &Dataset,
    theta: &Theta,
    f_eps: &Marginal,
    f_nu: &Marginal,
    weights: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    theta.check_dims(data)?;
    check_weights(data, weights)?;
    let layout = ParamLayout::for_model(data, f_eps, f_nu);
    let mut grad = vec![0.0; layout.len()];
    let mut total = 0.0;
    let mut row = vec![0.0; layout.len()];
    for i in 0..data.n() {
        let w = weights.map_or(1.0, |w| w[i]);
        row.iter_mut().for_each(|v| *v = 0.0);
        total += w * obs_score(theta, f_eps, f_nu, data, i, &layout, &mut row)?;
        for (g, r) in grad.iter_mut().zip(&row) {
            *g += w * r;
        }
    }
    let inv_n = 1.0 / data.n() as f64;
    grad.iter_mut().for_each(|g| *g *= inv_n);
    Ok((total * inv_n, grad))
}

/// Per-observation score rows (n x layout.len()), plus the mean log
/// likelihood. Rows are unscaled individual scores; the inference code
/// builds outer-product information and sieve projections from them.
pub fn score_rows(
    data: &Dataset,
    theta: &Theta,
    f_eps: &Marginal,
    f_nu: &Marginal,
) -> Result<(f64, Vec<Vec<f64>>)> {
    theta.check_dims(data)?;
    let layout = ParamLayout::for_model(data, f_eps, f_nu);
    let mut rows = Vec::with_capacity(data.n());
    let mut total = 0.0;
    for i in 0..data.n() {
        let mut row = vec![0.0; layout.len()];
        total += obs_score(theta, f_eps, f_nu, data, i, &layout, &mut row)?;
        rows.push(row);
    }
    Ok((total / data.n() as f64, rows))
}

/// Writes the score of observation `i` into `out` and returns its log
/// likelihood contribution.
///
/// The chain rule runs through three channels: the outcome index moves
/// `r = F_eps(index)` with density weight, the treatment index moves
/// `s = F_nu(index)`, and sieve coefficients move the CDF values directly.
fn obs_score(
    theta: &Theta,
    f_eps: &Marginal,
    f_nu: &Marginal,
    data: &Dataset,
    i: usize,
    layout: &ParamLayout,
    out: &mut [f64],
) -> Result<f64> {
    let (x, z) = (data.x_row(i), data.z_row(i));
    let (y, d) = (data.y[i], data.d[i]);
    let wy = theta.outcome_index(x, d);
    let wd = theta.treatment_index(x, z);
    let r = clamp_u(f_eps.cdf(wy));
    let s = clamp_u(f_nu.cdf(wd));
    let (c, c1, c2, cr) = copula::cdf_and_partials(&theta.dep, r, s)?;

    // Cell probability and its partials in (r, s, rho).
    let (p_raw, dp_dr, dp_ds, dp_drho) = match (y, d) {
        (true, true) => (c, c1, c2, cr),
        (false, true) => (s - c, -c1, 1.0 - c2, -cr),
        (true, false) => (r - c, 1.0 - c1, -c2, -cr),
        (false, false) => (1.0 - r - s + c, c1 - 1.0, c2 - 1.0, cr),
    };
    let p = p_raw.max(PROB_FLOOR);
    let inv_p = 1.0 / p;

    let f_y = f_eps.pdf(wy);
    let f_d = f_nu.pdf(wd);

    // Outcome-equation block: beta and delta1 move r through the density.
    let gy = inv_p * dp_dr * f_y;
    for (j, xv) in x.iter().enumerate() {
        out[layout.beta().start + j] += gy * xv;
    }
    if d {
        out[layout.delta1()] += gy;
    }
    // Treatment-equation block: alpha (on x) and gamma (on z) move s.
    let gd = inv_p * dp_ds * f_d;
    for (j, xv) in x.iter().enumerate() {
        out[layout.alpha().start + j] += gd * xv;
    }
    for (j, zv) in z.iter().enumerate() {
        out[layout.gamma().start + j] += gd * zv;
    }
    // Dependence parameter, native scale.
    out[layout.rho()] += inv_p * dp_drho;

    // Sieve coefficient blocks.
    if layout.k_eps > 0 {
        if let Marginal::Sieve(sv) = f_eps {
            let grads = sv.cdf_coef_grad(wy);
            for (j, g) in grads.iter().enumerate() {
                out[layout.a_eps().start + j] += inv_p * dp_dr * g;
            }
        }
    }
    if layout.k_nu > 0 {
        if let Marginal::Sieve(sv) = f_nu {
            let grads = sv.cdf_coef_grad(wd);
            for (j, g) in grads.iter().enumerate() {
                out[layout.a_nu().start + j] += inv_p * dp_ds * g;
            }
        }
    }
    Ok(p.ln())
}
