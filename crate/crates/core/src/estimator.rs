//! Maximum-likelihood fitting of the triangular binary-choice model.
//!
//! A [`ModelSpec`] names the copula family, the marginal model (known
//! parametric distributions, or polynomial-sieve marginals built on a
//! transform `G`), and the scale normalization. [`fit`] maximizes the mean
//! log likelihood with a dense BFGS quasi-Newton method and analytic
//! gradients, running several start points: a probit-style two-step warm
//! start plus jittered copies. Sieve fits are warmed from the nested
//! degree-zero model (marginals exactly `G`) before the sieve coefficients
//! are released.
//!
//! The free-parameter vector excludes pinned coefficients and carries the
//! dependence parameter through the family's unconstrained bijection, so the
//! optimizer never sees a constraint surface.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::copula::{CopulaFamily, DependenceParam};
use crate::error::{Error, Result};
use crate::likelihood::{self, Dataset, ParamLayout, Theta};
use crate::marginals::{
    sieve_dimension, Marginal, ParametricMarginal, SieveMarginal, TransformG, DEFAULT_SIEVE_RATE,
};

/// How the latent index scales are tied down.
///
/// Binary outcomes identify index coefficients only up to the scale of the
/// latent errors, so either the marginals carry a fixed scale or designated
/// coefficients do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Normalization {
    /// Marginals have mean zero and variance one; every index coefficient is
    /// free. The natural choice when the marginals are known parametric
    /// distributions.
    MeanVarUnit,
    /// Designated coefficients are pinned to fixed values (commonly the
    /// first regressor's coefficient to -1) and excluded from the free
    /// parameter vector. Required for sieve fits, where flexible marginals
    /// would otherwise absorb the index scale.
    FixedCoefficient {
        /// Pins `(column index, value)` into the treatment equation's `x`
        /// coefficients (`alpha`).
        treatment: Vec<(usize, f64)>,
        /// Pins into the outcome equation's `x` coefficients (`beta`).
        outcome: Vec<(usize, f64)>,
    },
}

impl Normalization {
    /// Pin the first `x` coefficient of both equations to `value` — the
    /// usual scale normalization for simulated designs.
    pub fn pin_first(value: f64) -> Self {
        Normalization::FixedCoefficient {
            treatment: vec![(0, value)],
            outcome: vec![(0, value)],
        }
    }
}

/// The marginal model for the latent errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MarginalModel {
    /// Known parametric marginals for the outcome error and treatment error.
    Parametric {
        eps: ParametricMarginal,
        nu: ParametricMarginal,
    },
    /// Polynomial-sieve marginals `F = H(G(.))` on both equations, sharing
    /// the transform `G` and polynomial degree. `k = None` applies the
    /// sample-size rule [`sieve_dimension`].
    Sieve { g: TransformG, k: Option<usize> },
}

/// Everything needed to fit one model: copula family, marginal model, and
/// normalization scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: CopulaFamily,
    pub marginals: MarginalModel,
    pub normalization: Normalization,
}

impl ModelSpec {
    /// Parametric model with standard normal marginals and all coefficients
    /// free.
    pub fn parametric(family: CopulaFamily) -> Self {
        ModelSpec {
            family,
            marginals: MarginalModel::Parametric {
                eps: ParametricMarginal::standard_normal(),
                nu: ParametricMarginal::standard_normal(),
            },
            normalization: Normalization::MeanVarUnit,
        }
    }

    /// Parametric model with standard normal marginals and the first
    /// coefficient of each equation pinned to `pin`.
    pub fn parametric_pinned(family: CopulaFamily, pin: f64) -> Self {
        ModelSpec {
            normalization: Normalization::pin_first(pin),
            ..Self::parametric(family)
        }
    }

    /// Sieve model on transform `g` with the first coefficient of each
    /// equation pinned to `pin`. `k = None` defers the polynomial degree to
    /// the sample-size rule.
    pub fn sieve(family: CopulaFamily, g: TransformG, k: Option<usize>, pin: f64) -> Self {
        ModelSpec {
            family,
            marginals: MarginalModel::Sieve { g, k },
            normalization: Normalization::pin_first(pin),
        }
    }

    /// Short human-readable tag, e.g. `parametric(gaussian)` or
    /// `sieve(frank, k=2)`.
    pub fn label(&self) -> String {
        match &self.marginals {
            MarginalModel::Parametric { .. } => format!("parametric({})", self.family),
            MarginalModel::Sieve { k, .. } => match k {
                Some(k) => format!("sieve({}, k={k})", self.family),
                None => format!("sieve({}, k=auto)", self.family),
            },
        }
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        if let MarginalModel::Parametric { eps, nu } = &self.marginals {
            eps.validate()?;
            nu.validate()?;
        }
        if let Normalization::FixedCoefficient { treatment, outcome } = &self.normalization {
            for (name, pins) in [("treatment", treatment), ("outcome", outcome)] {
                let mut seen = vec![false; data.p()];
                for &(j, v) in pins {
                    if j >= data.p() {
                        return Err(Error::Dimension(format!(
                            "{name} pin index {j} out of range for {} x-columns",
                            data.p()
                        )));
                    }
                    if !v.is_finite() {
                        return Err(Error::Domain(format!("{name} pin value must be finite")));
                    }
                    if seen[j] {
                        return Err(Error::Domain(format!("duplicate {name} pin on column {j}")));
                    }
                    seen[j] = true;
                }
            }
        }
        Ok(())
    }
}

/// Optimizer and multi-start controls. `Default` gives the standard
/// settings: five starts, gradient tolerance 1e-6, 500 iterations, box
/// bounds +-50, jitter scale 0.25.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Number of start points: the first is the warm start, the rest are
    /// jittered copies of it.
    pub starts: usize,
    /// Maximum quasi-Newton iterations per start.
    pub max_iter: usize,
    /// Convergence tolerance on the sup-norm of the free-parameter gradient
    /// of the mean log likelihood.
    pub tol_g: f64,
    /// Box bound: every free coordinate is clamped to `[-box_bound,
    /// box_bound]` throughout the optimization.
    pub box_bound: f64,
    /// Jitter standard deviation as a fraction of each start coordinate's
    /// magnitude (floored at 0.5).
    pub jitter_scale: f64,
    /// Seed for the jitter stream; fits are deterministic given options.
    pub seed: u64,
    /// Start the first point here (free-parameter scale) instead of at the
    /// two-step warm start. Bootstrap refits pass the original optimum.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            starts: 5,
            max_iter: 500,
            tol_g: 1e-6,
            box_bound: 50.0,
            jitter_scale: 0.25,
            seed: 0,
            warm_start: None,
        }
    }
}

impl FitOptions {
    /// Same options with a different number of starts.
    pub fn with_starts(mut self, starts: usize) -> Self {
        self.starts = starts.max(1);
        self
    }
}

/// A fitted model: the estimate, the marginals it implies, and optimizer
/// diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// The fitted spec with any deferred choices resolved (sieve degree
    /// filled in from the sample-size rule).
    pub spec: ModelSpec,
    pub theta_hat: Theta,
    /// Fitted outcome-error marginal.
    pub f_eps: Marginal,
    /// Fitted treatment-error marginal.
    pub f_nu: Marginal,
    /// Mean log likelihood at the optimum.
    pub loglik_value: f64,
    /// Quasi-Newton iterations used by the winning start.
    pub iterations: usize,
    /// Whether the winning start met the gradient tolerance.
    pub converged: bool,
    /// Sup-norm of the free-parameter gradient at the reported optimum.
    pub gradient_norm: f64,
    /// Total start points attempted (including any warm-up stage).
    pub start_points_used: usize,
    /// Non-fatal conditions observed while fitting (e.g. constant
    /// instrument columns).
    pub warnings: Vec<String>,
    /// Free-parameter vector at the optimum; used to warm-start refits.
    pub(crate) packed: Vec<f64>,
}

impl FitResult {
    /// Average treatment effect at covariate value `x`.
    pub fn ate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.theta_hat.beta.len() {
            return Err(Error::Dimension(format!(
                "x has {} entries, model has {} x-columns",
                x.len(),
                self.theta_hat.beta.len()
            )));
        }
        Ok(ate(&self.theta_hat, &self.f_eps, x))
    }

    /// Spearman's rho implied by the fitted dependence parameter.
    pub fn rho_sp(&self) -> f64 {
        self.theta_hat.dep.spearman()
    }

    /// Names of the free parameters, in the packed order.
    pub fn free_names(&self) -> Vec<String> {
        Packing::new(&self.spec, self.theta_hat.beta.len(), self.theta_hat.gamma.len())
            .expect("spec validated at fit time")
            .names()
    }

    pub(crate) fn packed(&self) -> &[f64] {
        &self.packed
    }
}

/// Average treatment effect at covariate value `x` implied by `(theta,
/// f_eps)`: the outcome probability with treatment on minus with treatment
/// off.
pub fn ate(theta: &Theta, f_eps: &Marginal, x: &[f64]) -> f64 {
    f_eps.cdf(theta.outcome_index(x, true)) - f_eps.cdf(theta.outcome_index(x, false))
}

/// Fit by maximum likelihood, dispatching on the marginal model.
pub fn fit(data: &Dataset, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    fit_weighted(data, spec, opts, None)
}

/// Fit with known parametric marginals. Errors if the spec carries sieve
/// marginals.
pub fn fit_parametric(data: &Dataset, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    match spec.marginals {
        MarginalModel::Parametric { .. } => fit(data, spec, opts),
        MarginalModel::Sieve { .. } => Err(Error::Domain(
            "fit_parametric called with sieve marginals; use fit_sieve".into(),
        )),
    }
}

/// Fit with sieve marginals. Errors if the spec carries parametric
/// marginals.
pub fn fit_sieve(data: &Dataset, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    match spec.marginals {
        MarginalModel::Sieve { .. } => fit(data, spec, opts),
        MarginalModel::Parametric { .. } => Err(Error::Domain(
            "fit_sieve called with parametric marginals; use fit_parametric".into(),
        )),
    }
}

/// Weighted-likelihood variant of [`fit`]; the bootstrap refits through
/// this with exponential weights.
pub fn fit_weighted(
    data: &Dataset,
    spec: &ModelSpec,
    opts: &FitOptions,
    weights: Option<&[f64]>,
) -> Result<FitResult> {
    spec.validate(data)?;
    match &spec.marginals {
        MarginalModel::Parametric { .. } => fit_stage(data, spec, opts, weights),
        MarginalModel::Sieve { g, k } => {
            require_pinned(&spec.normalization)?;
            let k = k.unwrap_or_else(|| sieve_dimension(DEFAULT_SIEVE_RATE, data.n()));
            let resolved = ModelSpec {
                marginals: MarginalModel::Sieve {
                    g: *g,
                    k: Some(k),
                },
                ..spec.clone()
            };
            if k == 0 || opts.warm_start.is_some() {
                return fit_stage(data, &resolved, opts, weights);
            }
            // Stage one: the nested degree-zero model (marginals exactly G)
            // pins down the index coefficients cheaply.
            let nested = ModelSpec {
                marginals: MarginalModel::Sieve {
                    g: *g,
                    k: Some(0),
                },
                ..spec.clone()
            };
            let stage0 = fit_stage(data, &nested, opts, weights)?;
            let mut warm = stage0.packed.clone();
            warm.extend(std::iter::repeat(0.0).take(2 * k));
            let staged = FitOptions {
                warm_start: Some(warm),
                ..opts.clone()
            };
            let mut result = fit_stage(data, &resolved, &staged, weights)?;
            result.start_points_used += stage0.start_points_used;
            Ok(result)
        }
    }
}

fn require_pinned(norm: &Normalization) -> Result<()> {
    match norm {
        Normalization::FixedCoefficient { treatment, outcome }
            if !treatment.is_empty() && !outcome.is_empty() =>
        {
            Ok(())
        }
        _ => Err(Error::Domain(
            "sieve marginals absorb the index scale; pin at least one coefficient \
             in each equation (FixedCoefficient normalization)"
                .into(),
        )),
    }
}

/// One multi-start optimization of a fully resolved spec.
fn fit_stage(
    data: &Dataset,
    spec: &ModelSpec,
    opts: &FitOptions,
    weights: Option<&[f64]>,
) -> Result<FitResult> {
    let packing = Packing::new(spec, data.p(), data.q())?;
    let m = packing.free_len();
    let warnings = data_warnings(data);

    let base = match &opts.warm_start {
        Some(w) => {
            if w.len() != m {
                return Err(Error::Dimension(format!(
                    "warm start has {} entries, model has {m} free parameters",
                    w.len()
                )));
            }
            w.clone()
        }
        None => two_step_start(data, &packing, opts),
    };

    let eval = |w: &[f64]| packing.eval(data, weights, w);
    let settings = BfgsSettings {
        tol_g: opts.tol_g,
        max_iter: opts.max_iter,
        box_bound: opts.box_bound,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<Optimum> = None;
    let starts = opts.starts.max(1);
    for s in 0..starts {
        let start = if s == 0 {
            base.clone()
        } else {
            jitter(&base, opts.jitter_scale, &mut rng)
        };
        if let Some(out) = bfgs_maximize(&eval, &start, &settings) {
            let better = match &best {
                None => true,
                // Prefer higher likelihood; break ties toward converged runs.
                Some(b) => {
                    out.value > b.value + 1e-12 || (out.converged && !b.converged && out.value > b.value - 1e-9)
                }
            };
            if better {
                best = Some(out);
            }
        }
    }

    let best = best.ok_or(Error::AllStartsFailed {
        starts,
        detail: "objective non-finite or line search failed at every start point".into(),
    })?;
    let (theta_hat, f_eps, f_nu) = packing.unpack(&best.w);
    Ok(FitResult {
        spec: spec.clone(),
        theta_hat,
        f_eps,
        f_nu,
        loglik_value: best.value,
        iterations: best.iterations,
        converged: best.converged,
        gradient_norm: best.grad_sup,
        start_points_used: starts,
        warnings,
        packed: best.w,
    })
}

/// Non-fatal diagnostics about the design: identification leans on a
/// varying instrument, so flag its absence.
fn data_warnings(data: &Dataset) -> Vec<String> {
    let mut warnings = Vec::new();
    let constant_col = |get: &dyn Fn(usize) -> f64| {
        let first = get(0);
        (1..data.n()).all(|i| (get(i) - first).abs() < 1e-12)
    };
    let all_z_constant =
        data.q() == 0 || (0..data.q()).all(|j| constant_col(&|i| data.z_row(i)[j]));
    if all_z_constant {
        warnings.push(
            "all instrument columns are constant: the model is identified only through \
             functional form, and the treatment effect may not separate from the dependence"
                .to_string(),
        );
    }
    warnings
}

fn jitter(base: &[f64], scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    base.iter()
        .map(|&v| {
            let sd = scale * v.abs().max(0.5);
            v + sd * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Free-parameter packing
// ---------------------------------------------------------------------------

/// Maps between the optimizer's free-parameter vector and the natural
/// parameterization: pinned coefficients are dropped and the dependence
/// parameter rides the family's unconstrained bijection.
#[derive(Debug, Clone)]
pub(crate) struct Packing {
    layout: ParamLayout,
    family: CopulaFamily,
    marginals: ResolvedMarginals,
    pins_alpha: Vec<Option<f64>>,
    pins_beta: Vec<Option<f64>>,
    /// Natural-layout index of each free coordinate, in packed order.
    free_to_layout: Vec<usize>,
}

#[derive(Debug, Clone)]
enum ResolvedMarginals {
    Parametric {
        eps: ParametricMarginal,
        nu: ParametricMarginal,
    },
    Sieve {
        g: TransformG,
        k: usize,
    },
}

impl Packing {
    /// Requires a resolved spec: sieve degree must be explicit.
    pub(crate) fn new(spec: &ModelSpec, p: usize, q: usize) -> Result<Packing> {
        let marginals = match &spec.marginals {
            MarginalModel::Parametric { eps, nu } => ResolvedMarginals::Parametric {
                eps: eps.clone(),
                nu: nu.clone(),
            },
            MarginalModel::Sieve { g, k } => ResolvedMarginals::Sieve {
                g: *g,
                k: k.ok_or_else(|| {
                    Error::Domain("sieve degree must be resolved before packing".into())
                })?,
            },
        };
        let k = match marginals {
            ResolvedMarginals::Parametric { .. } => 0,
            ResolvedMarginals::Sieve { k, .. } => k,
        };
        let layout = ParamLayout {
            p,
            q,
            k_eps: k,
            k_nu: k,
        };
        let mut pins_alpha = vec![None; p];
        let mut pins_beta = vec![None; p];
        if let Normalization::FixedCoefficient { treatment, outcome } = &spec.normalization {
            for &(j, v) in treatment {
                pins_alpha[j] = Some(v);
            }
            for &(j, v) in outcome {
                pins_beta[j] = Some(v);
            }
        }
        let mut free_to_layout = Vec::with_capacity(layout.len());
        for j in 0..p {
            if pins_alpha[j].is_none() {
                free_to_layout.push(layout.alpha().start + j);
            }
        }
        free_to_layout.extend(layout.gamma());
        for j in 0..p {
            if pins_beta[j].is_none() {
                free_to_layout.push(layout.beta().start + j);
            }
        }
        free_to_layout.push(layout.delta1());
        free_to_layout.push(layout.rho());
        free_to_layout.extend(layout.a_eps());
        free_to_layout.extend(layout.a_nu());
        Ok(Packing {
            layout,
            family: spec.family,
            marginals,
            pins_alpha,
            pins_beta,
            free_to_layout,
        })
    }

    pub(crate) fn free_len(&self) -> usize {
        self.free_to_layout.len()
    }

    /// Natural-layout index of each free coordinate, in packed order.
    pub(crate) fn free_to_layout(&self) -> &[usize] {
        &self.free_to_layout
    }

    pub(crate) fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Packed index of the dependence coordinate.
    #[cfg(test)]
    pub(crate) fn rho_free_index(&self) -> usize {
        self.free_to_layout
            .iter()
            .position(|&l| l == self.layout.rho())
            .expect("rho is always free")
    }

    /// Reconstruct natural parameters and marginals from a free vector.
    pub(crate) fn unpack(&self, w: &[f64]) -> (Theta, Marginal, Marginal) {
        debug_assert_eq!(w.len(), self.free_len());
        let (p, q) = (self.layout.p, self.layout.q);
        let mut it = w.iter().copied();
        let mut take = || it.next().expect("free vector length checked");
        let mut alpha = vec![0.0; p];
        for j in 0..p {
            alpha[j] = self.pins_alpha[j].unwrap_or_else(&mut take);
        }
        let gamma: Vec<f64> = (0..q).map(|_| take()).collect();
        let mut beta = vec![0.0; p];
        for j in 0..p {
            beta[j] = self.pins_beta[j].unwrap_or_else(&mut take);
        }
        let delta1 = take();
        let rho = self.family.link(take());
        let dep = DependenceParam::new(self.family, rho)
            .expect("link maps into the admissible range");
        let (f_eps, f_nu) = match &self.marginals {
            ResolvedMarginals::Parametric { eps, nu } => {
                (Marginal::from(eps.clone()), Marginal::from(nu.clone()))
            }
            ResolvedMarginals::Sieve { g, k } => {
                let a_eps: Vec<f64> = (0..*k).map(|_| take()).collect();
                let a_nu: Vec<f64> = (0..*k).map(|_| take()).collect();
                (
                    Marginal::from(SieveMarginal::new(*g, &a_eps)),
                    Marginal::from(SieveMarginal::new(*g, &a_nu)),
                )
            }
        };
        (
            Theta {
                alpha,
                gamma,
                beta,
                delta1,
                dep,
            },
            f_eps,
            f_nu,
        )
    }

    /// Pack natural parameters into a free vector (the inverse of
    /// [`Packing::unpack`]; pinned entries are dropped, not checked).
    #[cfg(test)]
    pub(crate) fn pack(&self, theta: &Theta, f_eps: &Marginal, f_nu: &Marginal) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.free_len());
        for (j, pin) in self.pins_alpha.iter().enumerate() {
            if pin.is_none() {
                w.push(theta.alpha[j]);
            }
        }
        w.extend_from_slice(&theta.gamma);
        for (j, pin) in self.pins_beta.iter().enumerate() {
            if pin.is_none() {
                w.push(theta.beta[j]);
            }
        }
        w.push(theta.delta1);
        w.push(self.family.link_inv(theta.dep.rho()));
        if let Marginal::Sieve(s) = f_eps {
            w.extend_from_slice(s.free_coefs());
        }
        if let Marginal::Sieve(s) = f_nu {
            w.extend_from_slice(s.free_coefs());
        }
        w
    }

    /// Select free coordinates from a natural-layout gradient, applying the
    /// dependence-bijection chain rule at `w`.
    pub(crate) fn grad_to_free(&self, natural: &[f64], w: &[f64], out: &mut [f64]) {
        let rho_layout = self.layout.rho();
        for (k, &l) in self.free_to_layout.iter().enumerate() {
            out[k] = natural[l];
            if l == rho_layout {
                out[k] *= self.family.link_deriv(w[k]);
            }
        }
    }

    /// Mean log likelihood and free-parameter gradient at `w`; `None` when
    /// the model cannot be evaluated there.
    fn eval(&self, data: &Dataset, weights: Option<&[f64]>, w: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (theta, f_eps, f_nu) = self.unpack(w);
        match likelihood::loglik_grad_weighted(data, &theta, &f_eps, &f_nu, weights) {
            Ok((ll, natural)) if ll.is_finite() => {
                let mut g = vec![0.0; self.free_len()];
                self.grad_to_free(&natural, w, &mut g);
                if g.iter().all(|v| v.is_finite()) {
                    Some((ll, g))
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// Free-parameter names in packed order.
    pub(crate) fn names(&self) -> Vec<String> {
        let l = &self.layout;
        self.free_to_layout
            .iter()
            .map(|&idx| {
                if l.alpha().contains(&idx) {
                    format!("alpha[{}]", idx - l.alpha().start)
                } else if l.gamma().contains(&idx) {
                    format!("gamma[{}]", idx - l.gamma().start)
                } else if l.beta().contains(&idx) {
                    format!("beta[{}]", idx - l.beta().start)
                } else if idx == l.delta1() {
                    "delta1".to_string()
                } else if idx == l.rho() {
                    "rho".to_string()
                } else if l.a_eps().contains(&idx) {
                    format!("a_eps[{}]", idx - l.a_eps().start + 1)
                } else {
                    format!("a_nu[{}]", idx - l.a_nu().start + 1)
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Warm starts
// ---------------------------------------------------------------------------

/// Two-step start: a probit of `d` on `(x, z)` seeds the treatment block, a
/// probit of `y` on `(x, d)` seeds the outcome block, the dependence starts
/// at the bijection origin, and sieve coefficients start at zero (marginal
/// exactly `G`). Pinned coefficients enter the probits as offsets.
fn two_step_start(data: &Dataset, packing: &Packing, opts: &FitOptions) -> Vec<f64> {
    let n = data.n();
    let free_a: Vec<usize> = (0..data.p())
        .filter(|&j| packing.pins_alpha[j].is_none())
        .collect();
    let free_b: Vec<usize> = (0..data.p())
        .filter(|&j| packing.pins_beta[j].is_none())
        .collect();

    // Treatment equation: free alpha columns then z columns.
    let mut rows_d = Vec::with_capacity(n);
    let mut offset_d = Vec::with_capacity(n);
    for i in 0..n {
        let x = data.x_row(i);
        let mut row: Vec<f64> = free_a.iter().map(|&j| x[j]).collect();
        row.extend_from_slice(data.z_row(i));
        rows_d.push(row);
        offset_d.push(
            packing
                .pins_alpha
                .iter()
                .enumerate()
                .filter_map(|(j, pin)| pin.map(|v| v * x[j]))
                .sum(),
        );
    }
    let coef_d = probit_fit(&rows_d, &offset_d, data.d(), opts.box_bound)
        .unwrap_or_else(|| vec![0.0; free_a.len() + data.q()]);

    // Outcome equation: free beta columns then the treatment indicator.
    let mut rows_y = Vec::with_capacity(n);
    let mut offset_y = Vec::with_capacity(n);
    for i in 0..n {
        let x = data.x_row(i);
        let mut row: Vec<f64> = free_b.iter().map(|&j| x[j]).collect();
        row.push(if data.d()[i] { 1.0 } else { 0.0 });
        rows_y.push(row);
        offset_y.push(
            packing
                .pins_beta
                .iter()
                .enumerate()
                .filter_map(|(j, pin)| pin.map(|v| v * x[j]))
                .sum(),
        );
    }
    let coef_y = probit_fit(&rows_y, &offset_y, data.y(), opts.box_bound)
        .unwrap_or_else(|| vec![0.0; free_b.len() + 1]);

    let mut w = Vec::with_capacity(packing.free_len());
    w.extend_from_slice(&coef_d[..free_a.len()]); // free alpha
    w.extend_from_slice(&coef_d[free_a.len()..]); // gamma
    w.extend_from_slice(&coef_y[..free_b.len()]); // free beta
    w.push(coef_y[free_b.len()]); // delta1
    w.push(0.0); // dependence at the bijection origin
    w.resize(packing.free_len(), 0.0); // sieve coefficients
    for v in &mut w {
        *v = v.clamp(-opts.box_bound, opts.box_bound);
    }
    w
}

/// Probit MLE of `resp` on `rows` with a fixed `offset` added to the index.
/// Returns `None` if the optimization cannot produce finite values.
fn probit_fit(rows: &[Vec<f64>], offset: &[f64], resp: &[bool], box_bound: f64) -> Option<Vec<f64>> {
    let m = rows.first().map_or(0, Vec::len);
    if m == 0 {
        return Some(Vec::new());
    }
    let n = rows.len() as f64;
    let eval = |w: &[f64]| -> Option<(f64, Vec<f64>)> {
        let mut ll = 0.0;
        let mut grad = vec![0.0; m];
        for ((row, &off), &y) in rows.iter().zip(offset).zip(resp) {
            let idx = off + row.iter().zip(w).map(|(r, v)| r * v).sum::<f64>();
            let p = crate::numeric::norm_cdf(idx).clamp(1e-10, 1.0 - 1e-10);
            let dens = crate::numeric::norm_pdf(idx);
            let (term, scale) = if y {
                (p.ln(), dens / p)
            } else {
                ((1.0 - p).ln(), -dens / (1.0 - p))
            };
            ll += term;
            for (g, r) in grad.iter_mut().zip(row) {
                *g += scale * r;
            }
        }
        ll /= n;
        grad.iter_mut().for_each(|g| *g /= n);
        (ll.is_finite() && grad.iter().all(|g| g.is_finite())).then_some((ll, grad))
    };
    let settings = BfgsSettings {
        tol_g: 1e-7,
        max_iter: 200,
        box_bound,
    };
    bfgs_maximize(&eval, &vec![0.0; m], &settings).map(|o| o.w)
}

// ---------------------------------------------------------------------------
// BFGS
// ---------------------------------------------------------------------------

struct BfgsSettings {
    tol_g: f64,
    max_iter: usize,
    box_bound: f64,
}

struct Optimum {
    w: Vec<f64>,
    /// Maximized objective (mean log likelihood).
    value: f64,
    grad_sup: f64,
    iterations: usize,
    converged: bool,
}

/// Dense BFGS with backtracking Armijo line search on the negated
/// objective. Iterates are clamped into the box; the Armijo test uses the
/// actual (possibly clamped) step. Returns `None` only if the start point
/// itself cannot be evaluated.
fn bfgs_maximize<F>(eval: &F, start: &[f64], settings: &BfgsSettings) -> Option<Optimum>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let m = start.len();
    let clamp = |w: &mut DVector<f64>| {
        for v in w.iter_mut() {
            *v = v.clamp(-settings.box_bound, settings.box_bound);
        }
    };
    // Work on the minimization problem f = -loglik.
    let eval_min = |w: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
        let (ll, g) = eval(w.as_slice())?;
        Some((-ll, -DVector::from_vec(g)))
    };

    let mut w = DVector::from_column_slice(start);
    clamp(&mut w);
    let (mut f, mut g) = eval_min(&w)?;
    let mut h = nalgebra::DMatrix::<f64>::identity(m, m);
    let mut first_update = true;
    let mut iterations = 0;

    // Backtracking Armijo on the clamped step.
    let line_search = |w: &DVector<f64>,
                       f: f64,
                       g: &DVector<f64>,
                       dir: &DVector<f64>|
     -> Option<(DVector<f64>, f64, DVector<f64>)> {
        let mut t = 1.0;
        for _ in 0..50 {
            let mut w_new = w + t * dir;
            clamp(&mut w_new);
            let s = &w_new - w;
            let gs = g.dot(&s);
            if s.amax() == 0.0 {
                return None;
            }
            if gs < 0.0 {
                if let Some((f_new, g_new)) = eval_min(&w_new) {
                    if f_new <= f + 1e-4 * gs {
                        return Some((w_new, f_new, g_new));
                    }
                }
            }
            t *= 0.5;
        }
        None
    };

    for _ in 0..settings.max_iter {
        if g.amax() < settings.tol_g {
            break;
        }
        iterations += 1;

        let mut dir = -(&h * &g);
        if dir.dot(&g) >= 0.0 {
            // Curvature information went stale; restart from steepest descent.
            h = nalgebra::DMatrix::identity(m, m);
            first_update = true;
            dir = -g.clone();
        }

        let mut accepted = line_search(&w, f, &g, &dir);
        if accepted.is_none() && !first_update {
            // The quasi-Newton direction stalled. Drop the curvature
            // estimate and try plain gradient descent before concluding
            // the point cannot be improved.
            h = nalgebra::DMatrix::identity(m, m);
            first_update = true;
            dir = -g.clone();
            accepted = line_search(&w, f, &g, &dir);
        }
        let Some((w_new, f_new, g_new)) = accepted else {
            break; // no ascent even along the gradient; report honestly
        };

        let s = &w_new - &w;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if first_update {
                // Scale the seed inverse Hessian to the first curvature pair.
                h *= sy / yv.dot(&yv);
                first_update = false;
            }
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            let c = (sy + yhy) / (sy * sy);
            h.ger(c, &s, &s, 1.0);
            h.ger(-1.0 / sy, &hy, &s, 1.0);
            h.ger(-1.0 / sy, &s, &hy, 1.0);
        }
        w = w_new;
        f = f_new;
        g = g_new;
    }

    let grad_sup = g.amax();
    Some(Optimum {
        w: w.as_slice().to_vec(),
        value: -f,
        grad_sup,
        iterations,
        converged: grad_sup < settings.tol_g,
    })
}
