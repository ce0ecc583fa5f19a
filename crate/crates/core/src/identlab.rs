//! Constructive demonstrations that the model is not identified without
//! an excluded instrument.
//!
//! Two demonstrations are provided. [`BinaryCounterexample`] holds two
//! element-wise distinct parameter structures over a two-point covariate
//! that generate identical fitted probabilities for every observable cell;
//! [`verify_binary_counterexample`] evaluates all eight cells under both
//! and reports the largest discrepancy. [`solve_failure_distribution`]
//! extends the construction to a continuous covariate: it searches for a
//! latent-error distribution `F~` under which an independence structure
//! and a comonotone structure are observationally equivalent, which
//! requires the quantile gap
//!
//! ```text
//! F~^{-1}(q(x) t(x)) - F~^{-1}(q(x) + (1 - q(x)) t(x))
//! ```
//!
//! to be a constant (the spurious treatment coefficient) across the whole
//! covariate range. The solver tabulates `F~` and reports how far it ends
//! up from the normal CDF — close, but not equal, which is what makes the
//! failure hard to detect in practice.
//!
//! The positivity scan that underpins the identified case is re-exported
//! here as [`positivity_scan`] so the demonstration front-end can show
//! both sides of the identification boundary.

use crate::copula::{self, DependenceParam};
use crate::error::{Error, Result};
use crate::numeric::norm_cdf;

pub use crate::copula::{si_ordering_scan as positivity_scan, OrderingScan};

// ---------------------------------------------------------------------------
// Two-point covariate counterexample
// ---------------------------------------------------------------------------

/// Error copula of a [`LevelStructure`]: one of the two degenerate
/// dependence extremes, or an ordinary parametric family member.
///
/// The extremes get exact closed forms (`u*v` and `min(u, v)`) rather than
/// near-limit family parameters so the counterexample arithmetic is exact.
#[derive(Debug, Clone, PartialEq)]
pub enum CopulaHandle {
    Independence,
    Comonotone,
    Family(DependenceParam),
}

impl CopulaHandle {
    pub fn cdf(&self, u: f64, v: f64) -> Result<f64> {
        match self {
            CopulaHandle::Independence => {
                copula::comonotone_cdf(u, v)?; // reuse the domain checks
                Ok(u * v)
            }
            CopulaHandle::Comonotone => copula::comonotone_cdf(u, v),
            CopulaHandle::Family(dep) => copula::cdf(dep, u, v),
        }
    }
}

/// One complete structure over a two-point covariate, expressed in
/// transformed-probability coordinates: `t0`, `t1` are the untreated
/// outcome levels at the two covariate values, `q0`, `q1` the treatment
/// levels, `delta1` the treatment shift on the uniform latent scale, and
/// `copula` the error dependence.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelStructure {
    pub t0: f64,
    pub t1: f64,
    pub q0: f64,
    pub q1: f64,
    pub delta1: f64,
    pub copula: CopulaHandle,
}

impl LevelStructure {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t0", self.t0),
            ("t1", self.t1),
            ("q0", self.q0),
            ("q1", self.q1),
        ] {
            if !v.is_finite() || v <= 0.0 || v >= 1.0 {
                return Err(Error::Domain(format!(
                    "level {name} = {v} outside (0, 1)"
                )));
            }
        }
        if !self.delta1.is_finite() {
            return Err(Error::Domain("non-finite treatment shift".into()));
        }
        Ok(())
    }

    /// Fitted cell probabilities `(p11, p10, p01, p00)` at the two
    /// covariate values, with a uniform latent-error marginal so the
    /// treated level is `t + delta1` clamped to `[0, 1]`.
    pub fn fitted_probs(&self) -> Result<[[f64; 4]; 2]> {
        self.validate()?;
        let mut out = [[0.0; 4]; 2];
        for (row, (t, q)) in [(self.t0, self.q0), (self.t1, self.q1)].into_iter().enumerate() {
            let treated = (t + self.delta1).clamp(0.0, 1.0);
            let c_treated = self.copula.cdf(treated, q)?;
            let c_untreated = self.copula.cdf(t, q)?;
            out[row] = [
                c_treated,
                t - c_untreated,
                q - c_treated,
                1.0 - t - q + c_untreated,
            ];
        }
        Ok(out)
    }
}

/// Two parameter structures claimed to be observationally equivalent.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryCounterexample {
    pub set_a: LevelStructure,
    pub set_b: LevelStructure,
}

impl BinaryCounterexample {
    /// The canonical pair: an independence structure with levels
    /// `(1/3, 2/3)` and no treatment effect, against a comonotone
    /// structure with levels `(5/9, 8/9)` and treatment shift `-4/9`.
    /// Both produce cell probabilities `(1/9, 2/9, 2/9, 4/9)` at the
    /// first covariate value and `(4/9, 2/9, 2/9, 1/9)` at the second.
    pub fn canonical() -> Self {
        BinaryCounterexample {
            set_a: LevelStructure {
                t0: 1.0 / 3.0,
                t1: 2.0 / 3.0,
                q0: 1.0 / 3.0,
                q1: 2.0 / 3.0,
                delta1: 0.0,
                copula: CopulaHandle::Independence,
            },
            set_b: LevelStructure {
                t0: 5.0 / 9.0,
                t1: 8.0 / 9.0,
                q0: 1.0 / 3.0,
                q1: 2.0 / 3.0,
                delta1: -4.0 / 9.0,
                copula: CopulaHandle::Comonotone,
            },
        }
    }
}

/// Largest absolute difference over the eight fitted cell probabilities
/// of the two structures. Zero (to rounding) means the structures cannot
/// be told apart from data of any size.
pub fn verify_binary_counterexample(example: &BinaryCounterexample) -> Result<f64> {
    let a = example.set_a.fitted_probs()?;
    let b = example.set_b.fitted_probs()?;
    let mut max = 0.0f64;
    for x in 0..2 {
        for cell in 0..4 {
            max = max.max((a[x][cell] - b[x][cell]).abs());
        }
    }
    Ok(max)
}

// ---------------------------------------------------------------------------
// Continuous covariate: the failure distribution
// ---------------------------------------------------------------------------

/// Treated-outcome level of the comonotone structure equivalent to an
/// independence structure with treatment level `q` and untreated level
/// `t`: the mass of the quadrant `{u <= t, v <= q}` is `q t` under
/// independence, and the diagonal reaches that mass at `min = q t`.
pub fn treated_level(q: f64, t: f64) -> f64 {
    q * t
}

/// Untreated-outcome level of the equivalent comonotone structure: the
/// quadrant `{u <= t, v >= q}` has independence mass `t (1 - q)`, and on
/// the diagonal the matching level is `q + (1 - q) t`.
pub fn untreated_level(q: f64, t: f64) -> f64 {
    q + (1.0 - q) * t
}

/// Treatment shift implied by the equivalent structure at one covariate
/// point, for a candidate quantile function: the gap between the
/// quantiles at [`treated_level`] and [`untreated_level`]. Equivalence
/// over a covariate range requires this to be constant in `(q, t)` pairs
/// traced by the range, and the constant is the spurious coefficient.
pub fn quantile_shift(quantile: impl Fn(f64) -> f64, q: f64, t: f64) -> f64 {
    quantile(treated_level(q, t)) - quantile(untreated_level(q, t))
}

/// A tabulated distribution function under which identification fails,
/// with the normal CDF on the same grid for comparison.
#[derive(Debug, Clone)]
pub struct FailureDistribution {
    pub x: Vec<f64>,
    pub f_tilde: Vec<f64>,
    /// `norm_cdf` at the same grid points.
    pub normal: Vec<f64>,
    /// The constant treatment shift of the equivalent structure.
    pub delta1_star: f64,
    /// Final sup-norm of the constancy defect of the quantile gap.
    pub residual: f64,
    pub iterations: usize,
    /// Residual after each iteration, for convergence diagnostics.
    pub residual_history: Vec<f64>,
}

impl FailureDistribution {
    /// `(x, F~(x), norm_cdf(x))` rows for plotting.
    pub fn plot_rows(&self) -> Vec<(f64, f64, f64)> {
        self.x
            .iter()
            .zip(&self.f_tilde)
            .zip(&self.normal)
            .map(|((&x, &f), &n)| (x, f, n))
            .collect()
    }

    /// Largest deviation from the normal CDF over grid points in
    /// `[lo, hi]`.
    pub fn sup_gap_to_normal(&self, lo: f64, hi: f64) -> f64 {
        self.x
            .iter()
            .zip(&self.f_tilde)
            .zip(&self.normal)
            .filter(|((&x, _), _)| x >= lo && x <= hi)
            .map(|((_, &f), &n)| (f - n).abs())
            .fold(0.0, f64::max)
    }
}

/// 201 equally spaced points on `[-4, 4]`.
pub fn default_grid() -> Vec<f64> {
    (0..201).map(|i| -4.0 + 8.0 * i as f64 / 200.0).collect()
}

/// [`solve_failure_distribution`] with `q(x) = t(x) = norm_cdf(x)` on the
/// default grid — the single-index demonstration with standard-normal
/// treatment and outcome indices.
pub fn normal_failure_demo() -> Result<FailureDistribution> {
    solve_failure_distribution(norm_cdf, norm_cdf, &default_grid())
}

const SOLVE_TOL: f64 = 1e-6;
const SOLVE_MAX_ITER: usize = 4000;
/// Damping of the quantile update per iteration; an undamped update
/// oscillates on coarse grids.
const SOLVE_DAMPING: f64 = 0.5;
/// Internal tabulation step. The quantile interpolation error at a level
/// reached near abscissa `x` is about `|x| h^2 / 8`; the residual stacks a
/// few such evaluations, so `h = 5e-4` keeps the floor safely below the
/// solve tolerance over `[-4, 4]`.
const SOLVE_STEP: f64 = 5e-4;

/// Solve for a tabulated CDF `F~` and constant `delta1_star` such that
/// `F~^{-1}(q t) - F~^{-1}(q + (1 - q) t) = delta1_star` at every grid
/// point, by damped fixed-point iteration on the tabulated quantiles
/// starting from the normal CDF.
///
/// The two transformed levels of a grid point are linked by the level map
/// `M = treated о untreated^{-1}`, so the defining relation reads
/// `Q(M(p)) = Q(p) + delta1_star` for the tabulated quantile function
/// `Q`. Every iteration relaxes each tabulated quantile halfway toward
/// the average of the two values implied by its neighbours along the
/// `M`-orbit, then re-estimates `delta1_star` as the mean quantile gap.
///
/// `q_of_x` and `t_of_x` must be strictly increasing into `(0, 1)` on the
/// grid. The relation is enforced at grid points whose transformed levels
/// fall inside the tabulated range (extreme-tail levels cannot be
/// resolved from a finite table); the reported residual is the sup-norm
/// of the constancy defect of the quantile gap over those points.
pub fn solve_failure_distribution(
    q_of_x: impl Fn(f64) -> f64,
    t_of_x: impl Fn(f64) -> f64,
    grid: &[f64],
) -> Result<FailureDistribution> {
    if grid.len() < 3 {
        return Err(Error::Domain("grid needs at least 3 points".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("grid must be finite and strictly increasing".into()));
    }

    // Internal abscissas: each grid cell split to a step of at most
    // SOLVE_STEP, with `node_of_grid[i]` locating grid point i.
    let mut fx = Vec::new();
    let mut node_of_grid = Vec::with_capacity(grid.len());
    for i in 0..grid.len() - 1 {
        node_of_grid.push(fx.len());
        let parts = ((grid[i + 1] - grid[i]) / SOLVE_STEP).ceil().max(1.0) as usize;
        for r in 0..parts {
            fx.push(grid[i] + (grid[i + 1] - grid[i]) * r as f64 / parts as f64);
        }
    }
    node_of_grid.push(fx.len());
    fx.push(grid[grid.len() - 1]);

    // q, t and the transformed levels on the fine abscissas; validated
    // once here, which covers the coarse grid points as a subset.
    let q: Vec<f64> = fx.iter().map(|&x| q_of_x(x)).collect();
    let t: Vec<f64> = fx.iter().map(|&x| t_of_x(x)).collect();
    for (name, vals) in [("q", &q), ("t", &t)] {
        if vals.iter().any(|v| !v.is_finite() || *v <= 0.0 || *v >= 1.0) {
            return Err(Error::Domain(format!("{name}(x) must map the grid into (0, 1)")));
        }
        if vals.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain(format!(
                "{name}(x) must be strictly increasing on the grid"
            )));
        }
    }
    let lo_fine: Vec<f64> = q.iter().zip(&t).map(|(&q, &t)| treated_level(q, t)).collect();
    let hi_fine: Vec<f64> = q.iter().zip(&t).map(|(&q, &t)| untreated_level(q, t)).collect();

    // Linear interpolation in a sorted table, clamping at the ends.
    let interp = |xs: &[f64], ys: &[f64], at: f64| -> f64 {
        let m = xs.len();
        if at <= xs[0] {
            return ys[0];
        }
        if at >= xs[m - 1] {
            return ys[m - 1];
        }
        let i = xs.partition_point(|v| *v < at).max(1) - 1;
        let span = xs[i + 1] - xs[i];
        if span <= 0.0 {
            return ys[i];
        }
        ys[i] + (ys[i + 1] - ys[i]) * (at - xs[i]) / span
    };
    // Level map and inverse: M sends the untreated level of a covariate
    // point to its treated level.
    let m_of = |p: f64| interp(&hi_fine, &lo_fine, p);
    let m_inv = |p: f64| interp(&lo_fine, &hi_fine, p);

    // Quantile table: fixed levels (normal CDF at the fine abscissas),
    // positions initialised to the abscissas themselves, i.e. Q = the
    // normal quantile function.
    let levels: Vec<f64> = fx.iter().map(|&x| norm_cdf(x)).collect();
    let mut pos: Vec<f64> = fx.clone();
    let quantile =
        |pos: &[f64], p: f64| -> f64 { interp(&levels, pos, p) };

    // Constancy of the gap is demanded at the coarse grid points whose
    // levels the table can resolve.
    let (p_min, p_max) = (levels[0], levels[levels.len() - 1]);
    let usable: Vec<usize> = node_of_grid
        .iter()
        .map(|&k| k)
        .filter(|&k| {
            lo_fine[k] > p_min && lo_fine[k] < p_max && hi_fine[k] > p_min && hi_fine[k] < p_max
        })
        .collect();
    if usable.len() < 2 {
        return Err(Error::Domain(
            "fewer than 2 grid points have transformed levels inside the tabulated range".into(),
        ));
    }
    let (lo_range, hi_range) = (
        (lo_fine[0], lo_fine[lo_fine.len() - 1]),
        (hi_fine[0], hi_fine[hi_fine.len() - 1]),
    );

    let mut history: Vec<f64> = Vec::new();
    let mut residual = f64::INFINITY;
    let mut delta_star = f64::NAN;
    let mut converged = false;
    let mut iterations = 0;
    let mut new_pos = vec![0.0; pos.len()];
    for iter in 1..=SOLVE_MAX_ITER {
        iterations = iter;
        let gaps: Vec<f64> = usable
            .iter()
            .map(|&k| quantile(&pos, lo_fine[k]) - quantile(&pos, hi_fine[k]))
            .collect();
        delta_star = gaps.iter().sum::<f64>() / gaps.len() as f64;
        residual = gaps
            .iter()
            .map(|g| (g - delta_star).abs())
            .fold(0.0, f64::max);
        history.push(residual);
        if residual < SOLVE_TOL {
            converged = true;
            break;
        }
        // Stop early when the iteration has stopped making progress.
        if iter >= 300 && residual > 0.99 * history[iter - 300] {
            break;
        }

        for (k, &p) in levels.iter().enumerate() {
            // Value implied by the relation in which p is the untreated
            // level (neighbour below on the orbit) and the one in which
            // it is the treated level (neighbour above).
            let down = (p > hi_range.0 && p < hi_range.1).then(|| {
                let mp = m_of(p);
                (mp > p_min && mp < p_max).then(|| quantile(&pos, mp) - delta_star)
            });
            let up = (p > lo_range.0 && p < lo_range.1).then(|| {
                let mp = m_inv(p);
                (mp > p_min && mp < p_max).then(|| quantile(&pos, mp) + delta_star)
            });
            let implied: Vec<f64> = [down.flatten(), up.flatten()].into_iter().flatten().collect();
            new_pos[k] = if implied.is_empty() {
                pos[k]
            } else {
                let target = implied.iter().sum::<f64>() / implied.len() as f64;
                pos[k] + SOLVE_DAMPING * (target - pos[k])
            };
        }
        std::mem::swap(&mut pos, &mut new_pos);
        for k in 1..pos.len() {
            if pos[k] <= pos[k - 1] {
                pos[k] = pos[k - 1] + 1e-12;
            }
        }
    }

    if !converged {
        return Err(Error::SolverDidNotConverge {
            residual,
            iterations,
        });
    }

    // Read the CDF back off the quantile table at the requested grid,
    // extrapolating linearly past the (slightly drifted) end positions.
    let cdf_at = |x: f64| -> f64 {
        let m = pos.len();
        let v = if x <= pos[0] {
            levels[0] + (x - pos[0]) * (levels[1] - levels[0]) / (pos[1] - pos[0])
        } else if x >= pos[m - 1] {
            levels[m - 1]
                + (x - pos[m - 1]) * (levels[m - 1] - levels[m - 2]) / (pos[m - 1] - pos[m - 2])
        } else {
            interp(&pos, &levels, x)
        };
        v.clamp(1e-12, 1.0 - 1e-12)
    };
    let mut f_tilde: Vec<f64> = grid.iter().map(|&x| cdf_at(x)).collect();
    for k in 1..f_tilde.len() {
        if f_tilde[k] <= f_tilde[k - 1] {
            f_tilde[k] = f_tilde[k - 1] + 1e-15;
        }
    }
    Ok(FailureDistribution {
        x: grid.to_vec(),
        f_tilde,
        normal: grid.iter().map(|&x| norm_cdf(x)).collect(),
        delta1_star: delta_star,
        residual,
        iterations,
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::CopulaFamily;
    use crate::numeric::norm_quantile;
    use approx::assert_abs_diff_eq;

    #[test]
    fn canonical_structures_are_observationally_equivalent() {
        let ex = BinaryCounterexample::canonical();
        let gap = verify_binary_counterexample(&ex).unwrap();
        assert!(gap < 1e-14, "max discrepancy {gap}");

        // The first-covariate cells are the exact rationals
        // (1/9, 2/9, 2/9, 4/9) and the second-covariate cells the
        // reversed pattern.
        let probs = ex.set_a.fitted_probs().unwrap();
        let ninth = 1.0 / 9.0;
        for (got, want) in probs[0]
            .iter()
            .zip([ninth, 2.0 * ninth, 2.0 * ninth, 4.0 * ninth])
        {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
        for (got, want) in probs[1]
            .iter()
            .zip([4.0 * ninth, 2.0 * ninth, 2.0 * ninth, ninth])
        {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
        for row in probs {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn identical_structures_have_zero_gap() {
        let a = BinaryCounterexample::canonical().set_a;
        let ex = BinaryCounterexample {
            set_a: a.clone(),
            set_b: a,
        };
        assert_eq!(verify_binary_counterexample(&ex).unwrap(), 0.0);
    }

    #[test]
    fn perturbed_shift_breaks_the_equivalence() {
        let mut ex = BinaryCounterexample::canonical();
        ex.set_b.delta1 += 0.01;
        let gap = verify_binary_counterexample(&ex).unwrap();
        assert!(gap > 1e-3, "perturbed gap {gap}");
    }

    #[test]
    fn family_copulas_do_not_reproduce_the_comonotone_cells() {
        // A strongly dependent Gaussian member gets close to, but does
        // not exactly match, the degenerate comonotone construction.
        let mut ex = BinaryCounterexample::canonical();
        ex.set_b.copula = CopulaHandle::Family(
            DependenceParam::new(CopulaFamily::Gaussian, 0.9).unwrap(),
        );
        let gap = verify_binary_counterexample(&ex).unwrap();
        assert!(gap > 1e-4 && gap < 0.1, "strong-dependence gap {gap}");
    }

    #[test]
    fn levels_outside_unit_interval_rejected() {
        let mut ex = BinaryCounterexample::canonical();
        ex.set_a.t0 = 0.0;
        assert!(verify_binary_counterexample(&ex).is_err());
        ex.set_a.t0 = 1.5;
        assert!(verify_binary_counterexample(&ex).is_err());
    }

    #[test]
    fn level_formulas_match_hand_arithmetic() {
        assert_abs_diff_eq!(untreated_level(0.5, 0.5), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(treated_level(0.5, 0.5), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn uniform_quantile_makes_the_shift_constant_at_the_canonical_levels() {
        // With a uniform latent marginal the implied shift is -4/9 at
        // both canonical (q, t) pairs — exactly the two-point structure.
        let s0 = quantile_shift(|p| p, 1.0 / 3.0, 1.0 / 3.0);
        let s1 = quantile_shift(|p| p, 2.0 / 3.0, 2.0 / 3.0);
        assert_abs_diff_eq!(s0, -4.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s1, -4.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn failure_distribution_solves_and_stays_near_normal() {
        let sol = normal_failure_demo().unwrap();
        assert!(sol.residual < 1e-6, "residual {}", sol.residual);
        assert!(
            sol.f_tilde.windows(2).all(|w| w[1] > w[0]),
            "tabulated CDF not strictly increasing"
        );
        assert!(sol
            .f_tilde
            .iter()
            .all(|f| (0.0..=1.0).contains(f) && *f > 0.0 && *f < 1.0));
        let gap = sol.sup_gap_to_normal(-3.0, 3.0);
        assert!(gap > 0.0 && gap < 0.1, "sup gap to normal {gap}");
        // The spurious coefficient lands near the value forced by seam
        // continuity at the center, -2 * norm_quantile(3/4) ~ -1.349;
        // the exact limit depends on how the iteration weights the grid.
        let seam = -2.0 * norm_quantile(0.75);
        assert!(
            (sol.delta1_star - seam).abs() < 0.15,
            "delta1_star {} vs seam {seam}",
            sol.delta1_star
        );
        // The damped iteration should improve by orders of magnitude.
        let first = sol.residual_history[0];
        assert!(sol.residual < first * 1e-3);
        // Diagnostics rows line up with the grid.
        assert_eq!(sol.plot_rows().len(), sol.x.len());
    }

    #[test]
    fn failure_residual_decreases_monotonically() {
        let sol = normal_failure_demo().unwrap();
        // Allow the first few iterations to re-estimate the shift, then
        // require essentially monotone decay.
        for w in sol.residual_history[10..].windows(2) {
            assert!(
                w[1] <= w[0] * 1.05,
                "residual increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn solver_rejects_bad_grids_and_maps() {
        assert!(solve_failure_distribution(norm_cdf, norm_cdf, &[0.0, 1.0]).is_err());
        assert!(solve_failure_distribution(norm_cdf, norm_cdf, &[0.0, 1.0, 0.5]).is_err());
        // A non-increasing t map.
        let grid = default_grid();
        assert!(solve_failure_distribution(norm_cdf, |x| norm_cdf(-x), &grid).is_err());
        // A map escaping (0, 1).
        assert!(solve_failure_distribution(norm_cdf, |x| x, &grid).is_err());
    }

    #[test]
    fn positivity_scan_reexport_runs() {
        let scan = positivity_scan(
            CopulaFamily::Gaussian,
            &[-0.5, 0.3, 0.9],
            &[0.2, 0.5, 0.8],
        );
        assert!(scan.violations.is_empty());
        assert!(scan.min_crho > 0.0);
    }
}
