//! Standard errors and confidence intervals for fitted models.
//!
//! Two routes are provided. The analytic route residualizes the scores of
//! the parametric block against the sieve-direction scores (a least-squares
//! projection), forms the outer-product information of the residuals, and
//! inverts it; in a parametric model there is nothing to project out and
//! the estimator reduces to the usual outer-product information. The
//! treatment-effect variance solves the associated variational problem,
//! which over a finite sieve span is a quadratic maximization with closed
//! form `c' J^{-1} c / n`.
//!
//! The resampling route is a weighted bootstrap: refit the model under
//! independent positive weights with mean one and variance one, and read
//! standard errors and percentile intervals off the resampled estimates.
//! Each iteration draws its weights from a seed-indexed stream, so results
//! do not depend on the parallelism degree.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, FitOptions, FitResult, Packing};
use crate::likelihood::{self, Dataset};
use crate::marginals::Marginal;

/// Efficient-score variance estimate for the parametric block of a fit.
#[derive(Debug, Clone)]
pub struct EfficientScoreFit {
    /// Names of the parametric-block coordinates, in packed order (the
    /// dependence coordinate is on its native scale).
    pub psi_names: Vec<String>,
    /// Outer-product information of the residualized scores, `(1/n) R'R`.
    pub i_star_hat: DMatrix<f64>,
    /// Covariance of the parametric-block estimate: `I_star^{-1} / n`.
    pub covariance: DMatrix<f64>,
    /// Standard errors, the square roots of the covariance diagonal.
    pub se: Vec<f64>,
    /// Projection coefficients of each psi score onto the outcome-side
    /// sieve directions (one vector per psi coordinate).
    pub b_eps: Vec<Vec<f64>>,
    /// Same for the treatment-side sieve directions.
    pub b_nu: Vec<Vec<f64>>,
    /// Smallest and largest eigenvalues of `i_star_hat` (conditioning
    /// diagnostics).
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Largest normal-equation violation `|<residual, direction>|/n`; a
    /// correct projection leaves this at numerical zero.
    pub max_normal_eq_violation: f64,
}

impl EfficientScoreFit {
    /// Standard error for a named coordinate, if present.
    pub fn se_for(&self, name: &str) -> Option<f64> {
        self.psi_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.se[i])
    }
}

/// Estimate the parametric-block covariance by residualizing scores
/// against the sieve directions.
///
/// For each parametric coordinate, the per-observation score column is
/// regressed on the sieve-coefficient score columns; the residuals form
/// the efficient scores, whose outer product is inverted for the
/// covariance. With parametric marginals there are no sieve columns and
/// this is the ordinary outer-product-of-scores estimator.
pub fn efficient_score_variance(data: &Dataset, fit: &FitResult) -> Result<EfficientScoreFit> {
    let packing = Packing::new(&fit.spec, data.p(), data.q())?;
    let layout = *packing.layout();
    let (_, rows) = likelihood::score_rows(data, &fit.theta_hat, &fit.f_eps, &fit.f_nu)?;
    let n = data.n();

    // Split the free coordinates into the parametric block and the sieve
    // directions; everything stays on the native dependence scale.
    let psi_layout: Vec<usize> = packing
        .free_to_layout()
        .iter()
        .copied()
        .filter(|&l| !layout.a_eps().contains(&l) && !layout.a_nu().contains(&l))
        .collect();
    let dir_layout: Vec<usize> = layout.a_eps().chain(layout.a_nu()).collect();
    let k_eps = layout.k_eps;
    let d_psi = psi_layout.len();
    let d_dir = dir_layout.len();

    let psi_names: Vec<String> = packing
        .names()
        .into_iter()
        .zip(packing.free_to_layout())
        .filter(|(_, &l)| !layout.a_eps().contains(&l) && !layout.a_nu().contains(&l))
        .map(|(name, _)| name)
        .collect();

    let s_mat = DMatrix::from_fn(n, d_psi, |i, k| rows[i][psi_layout[k]]);
    let (b_mat, resid) = if d_dir == 0 {
        (DMatrix::zeros(0, d_psi), s_mat.clone())
    } else {
        let d_mat = DMatrix::from_fn(n, d_dir, |i, k| rows[i][dir_layout[k]]);
        let svd = d_mat.clone().svd(true, true);
        let b = svd
            .solve(&s_mat, 1e-12)
            .map_err(|e| Error::Domain(format!("sieve-direction projection failed: {e}")))?;
        let resid = &s_mat - &d_mat * &b;
        (b, resid)
    };

    let max_normal_eq_violation = if d_dir == 0 {
        0.0
    } else {
        let d_mat = DMatrix::from_fn(n, d_dir, |i, k| rows[i][dir_layout[k]]);
        let cross = d_mat.transpose() * &resid / n as f64;
        cross.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    };

    let mut i_star = resid.transpose() * &resid / n as f64;
    // Symmetrize away accumulation noise before eigen/Cholesky work.
    i_star = (&i_star + i_star.transpose()) / 2.0;

    let eigs = i_star.symmetric_eigenvalues();
    let min_eigenvalue = eigs.iter().copied().fold(f64::MAX, f64::min);
    let max_eigenvalue = eigs.iter().copied().fold(f64::MIN, f64::max);
    let chol = i_star.clone().cholesky().ok_or(Error::SingularInformation {
        min_eigenvalue,
    })?;
    let covariance = chol.inverse() / n as f64;
    let se = (0..d_psi).map(|k| covariance[(k, k)].sqrt()).collect();

    let (mut b_eps, mut b_nu) = (Vec::with_capacity(d_psi), Vec::with_capacity(d_psi));
    for k in 0..d_psi {
        let col = b_mat.column(k);
        b_eps.push(col.iter().take(k_eps).copied().collect());
        b_nu.push(col.iter().skip(k_eps).copied().collect());
    }

    Ok(EfficientScoreFit {
        psi_names,
        i_star_hat: i_star,
        covariance,
        se,
        b_eps,
        b_nu,
        min_eigenvalue,
        max_eigenvalue,
        max_normal_eq_violation,
    })
}

/// Gradient of the treatment effect at `x` with respect to the free
/// parameters, in packed order (native dependence scale).
///
/// Only the outcome-side parameters move the effect: free `beta`
/// coordinates contribute the density difference times the regressor, the
/// treatment-shift coordinate contributes the upper density, and
/// outcome-side sieve coefficients move the CDF values directly. The
/// directional derivative along any direction `v` is the inner product
/// with this vector.
pub fn ate_gradient(fit: &FitResult, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != fit.theta_hat.beta.len() {
        return Err(Error::Dimension(format!(
            "x has {} entries, model has {} x-columns",
            x.len(),
            fit.theta_hat.beta.len()
        )));
    }
    let packing = Packing::new(&fit.spec, fit.theta_hat.beta.len(), fit.theta_hat.gamma.len())?;
    Ok(ate_gradient_free(&packing, &fit.theta_hat, &fit.f_eps, x))
}

fn ate_gradient_free(
    packing: &Packing,
    theta: &crate::likelihood::Theta,
    f_eps: &Marginal,
    x: &[f64],
) -> Vec<f64> {
    let layout = *packing.layout();
    let w1 = theta.outcome_index(x, true);
    let w0 = theta.outcome_index(x, false);
    let f1 = f_eps.pdf(w1);
    let f0 = f_eps.pdf(w0);
    let coef_grad = match f_eps {
        Marginal::Sieve(s) => {
            let g1 = s.cdf_coef_grad(w1);
            let g0 = s.cdf_coef_grad(w0);
            g1.iter().zip(&g0).map(|(a, b)| a - b).collect()
        }
        Marginal::Parametric(_) => Vec::new(),
    };
    packing
        .free_to_layout()
        .iter()
        .map(|&l| {
            if layout.beta().contains(&l) {
                (f1 - f0) * x[l - layout.beta().start]
            } else if l == layout.delta1() {
                f1
            } else if layout.a_eps().contains(&l) {
                coef_grad[l - layout.a_eps().start]
            } else {
                0.0
            }
        })
        .collect()
}

/// Asymptotic variance of the treatment effect at `x`.
///
/// Over the fitted (finite) parameter span, the variational form of the
/// variance reduces to `c' J^{-1} c / n`, where `c` is [`ate_gradient`]
/// and `J` the outer-product information of the free-parameter scores.
pub fn ate_variance(data: &Dataset, fit: &FitResult, x: &[f64]) -> Result<f64> {
    let packing = Packing::new(&fit.spec, data.p(), data.q())?;
    let c = DVector::from_vec(ate_gradient(fit, x)?);
    let (_, rows) = likelihood::score_rows(data, &fit.theta_hat, &fit.f_eps, &fit.f_nu)?;
    let n = data.n();
    let m = packing.free_len();
    let free = packing.free_to_layout();
    let mut j = DMatrix::<f64>::zeros(m, m);
    let mut g = DVector::zeros(m);
    for row in &rows {
        for (k, &l) in free.iter().enumerate() {
            g[k] = row[l];
        }
        j.ger(1.0 / n as f64, &g, &g, 1.0);
    }
    j = (&j + j.transpose()) / 2.0;
    let chol = j.clone().cholesky().ok_or_else(|| {
        let eigs = j.symmetric_eigenvalues();
        Error::SingularInformation {
            min_eigenvalue: eigs.iter().copied().fold(f64::MAX, f64::min),
        }
    })?;
    let solved = chol.solve(&c);
    Ok(c.dot(&solved) / n as f64)
}

// ---------------------------------------------------------------------------
// Weighted bootstrap
// ---------------------------------------------------------------------------

/// Distribution of the bootstrap weights: positive, mean one, variance one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Standard exponential weights — the default.
    Exp1,
    /// Log-normal weights calibrated to mean one and variance one; an
    /// alternative satisfying the same moment conditions.
    LogNormal,
    /// Degenerate unit weights. Every refit reproduces the point estimate;
    /// exists to test the bootstrap plumbing.
    Unit,
}

impl WeightScheme {
    fn draw(self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            WeightScheme::Exp1 => (0..n).map(|_| rng.sample(rand_distr::Exp1)).collect(),
            WeightScheme::LogNormal => {
                // mean 1 and variance 1 require sigma^2 = ln 2, mu = -sigma^2/2.
                let sigma2 = std::f64::consts::LN_2;
                let dist = rand_distr::LogNormal::new(-sigma2 / 2.0, sigma2.sqrt())
                    .expect("fixed parameters are valid");
                (0..n).map(|_| rng.sample(dist)).collect()
            }
            WeightScheme::Unit => vec![1.0; n],
        }
    }
}

/// Bootstrap controls. Defaults: 200 iterations, exponential weights, a
/// 95% percentile interval, treatment effect evaluated at `x = 0`.
#[derive(Debug, Clone)]
pub struct BootstrapOptions {
    /// Number of bootstrap iterations.
    pub b: usize,
    /// Seed; iteration `b` draws from stream `b + 1` of this seed.
    pub seed: u64,
    pub weights: WeightScheme,
    /// Confidence levels for percentile intervals, each in (0, 1).
    pub levels: Vec<f64>,
    /// Covariate value at which the treatment effect is tracked; `None`
    /// means the zero vector.
    pub x_eval: Option<Vec<f64>>,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            b: 200,
            seed: 0,
            weights: WeightScheme::Exp1,
            levels: vec![0.95],
            x_eval: None,
        }
    }
}

/// Bootstrap distribution of the tracked targets.
#[derive(Debug, Clone)]
pub struct BootstrapResult {
    /// Target names: the free parametric-block coordinates, then `rho_sp`
    /// and `ate`.
    pub targets: Vec<String>,
    /// Point estimates of the targets from the original fit.
    pub point: Vec<f64>,
    /// Successful iterations by target (row per iteration, in iteration
    /// order).
    pub estimates: Vec<Vec<f64>>,
    /// Iterations requested.
    pub requested: usize,
    /// Iterations whose refit failed (not represented in `estimates`).
    pub failures: usize,
    /// Bootstrap standard errors, `sqrt((1/B) sum (T - mean)^2)`.
    pub se: Vec<f64>,
    /// Percentile intervals: one entry per confidence level, holding the
    /// level and per-target `(lower, upper)` order statistics.
    pub pci: Vec<(f64, Vec<(f64, f64)>)>,
}

impl BootstrapResult {
    /// Successful iteration count.
    pub fn b(&self) -> usize {
        self.estimates.len()
    }

    /// Column index for a named target.
    pub fn target_index(&self, name: &str) -> Option<usize> {
        self.targets.iter().position(|t| t == name)
    }
}

/// Nearest-order-statistic percentile interval at `level` from sorted
/// draws: the `p/2` and `1 - p/2` empirical quantiles with `p = 1 - level`.
pub(crate) fn percentile_interval(sorted: &[f64], level: f64) -> (f64, f64) {
    let b = sorted.len();
    let pick = |q: f64| {
        let k = (q * b as f64).round().clamp(1.0, b as f64) as usize;
        sorted[k - 1]
    };
    let tail = (1.0 - level) / 2.0;
    (pick(tail), pick(1.0 - tail))
}

/// Refit the model under independent mean-one weights `b` times and
/// summarize the distribution of the targets (free parametric
/// coefficients, the implied Spearman correlation, and the treatment
/// effect at `x_eval`).
///
/// Refits warm-start from the original optimum with a single start point.
/// Iterations run in parallel; each draws from its own seed-indexed
/// stream, so the result is identical at any thread count. Errors if more
/// than a tenth of the refits fail.
pub fn weighted_bootstrap(
    data: &Dataset,
    fit: &FitResult,
    boot: &BootstrapOptions,
) -> Result<BootstrapResult> {
    if boot.b < 2 {
        return Err(Error::Domain("bootstrap needs at least 2 iterations".into()));
    }
    for &level in &boot.levels {
        if !(0.0..1.0).contains(&level) || level <= 0.0 {
            return Err(Error::Domain(format!(
                "confidence level {level} outside (0, 1)"
            )));
        }
    }
    let x_eval = match &boot.x_eval {
        Some(x) => {
            if x.len() != data.p() {
                return Err(Error::Dimension(format!(
                    "x_eval has {} entries, data has {} x-columns",
                    x.len(),
                    data.p()
                )));
            }
            x.clone()
        }
        None => vec![0.0; data.p()],
    };

    let packing = Packing::new(&fit.spec, data.p(), data.q())?;
    let layout = *packing.layout();
    let psi_names: Vec<String> = packing
        .names()
        .into_iter()
        .zip(packing.free_to_layout())
        .filter(|(_, &l)| !layout.a_eps().contains(&l) && !layout.a_nu().contains(&l))
        .map(|(name, _)| name)
        .collect();
    let mut targets = psi_names;
    targets.push("rho_sp".to_string());
    targets.push("ate".to_string());

    let extract = |r: &FitResult| -> Result<Vec<f64>> {
        let mut vals: Vec<f64> = Vec::with_capacity(targets.len());
        let re_pack = Packing::new(&r.spec, data.p(), data.q())?;
        for (&l, v) in re_pack.free_to_layout().iter().zip(r.packed()) {
            if layout.a_eps().contains(&l) || layout.a_nu().contains(&l) {
                continue;
            }
            if l == layout.rho() {
                vals.push(r.theta_hat.dep.rho());
            } else {
                vals.push(*v);
            }
        }
        vals.push(r.rho_sp());
        vals.push(r.ate(&x_eval)?);
        Ok(vals)
    };
    let point = extract(fit)?;

    let refit_opts = FitOptions {
        starts: 1,
        warm_start: Some(fit.packed().to_vec()),
        ..FitOptions::default()
    };
    let draws: Vec<Option<Vec<f64>>> = (0..boot.b)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(boot.seed);
            rng.set_stream(b as u64 + 1);
            let w = boot.weights.draw(data.n(), &mut rng);
            estimator::fit_weighted(data, &fit.spec, &refit_opts, Some(&w))
                .ok()
                .filter(|r| r.loglik_value.is_finite())
                .and_then(|r| extract(&r).ok())
        })
        .collect();

    let failures = draws.iter().filter(|d| d.is_none()).count();
    let limit = boot.b / 10;
    if failures > limit {
        return Err(Error::BootstrapFailures {
            failed: failures,
            total: boot.b,
            limit,
        });
    }
    let estimates: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let b_ok = estimates.len();

    let mut se = Vec::with_capacity(targets.len());
    let mut pci: Vec<(f64, Vec<(f64, f64)>)> = boot
        .levels
        .iter()
        .map(|&lv| (lv, Vec::with_capacity(targets.len())))
        .collect();
    for t in 0..targets.len() {
        let col: Vec<f64> = estimates.iter().map(|row| row[t]).collect();
        let mean = col.iter().sum::<f64>() / b_ok as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b_ok as f64;
        se.push(var.sqrt());
        let mut sorted = col;
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
        for (lv, bounds) in &mut pci {
            bounds.push(percentile_interval(&sorted, *lv));
        }
    }

    Ok(BootstrapResult {
        targets,
        point,
        estimates,
        requested: boot.b,
        failures,
        se,
        pci,
    })
}
