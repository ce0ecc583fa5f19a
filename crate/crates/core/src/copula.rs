//! Parametric copula families for the latent error pair.
//!
//! Four families are supported — Gaussian, Frank, Clayton and Gumbel — each
//! with a scalar dependence parameter on its own admissible domain. The
//! module provides CDF evaluation, the partial derivatives the likelihood
//! gradient needs (`C1 = dC/du1`, `C2 = dC/du2`, `Crho = dC/drho`),
//! conversion to and from Spearman's rho, a positivity scan for the
//! `Crho > 0` ordering property, and conditional-inverse sampling.
//!
//! All four families are stochastically-increasing ordered in their
//! parameter, which is what makes `Crho > 0` on the open square and the
//! Spearman map strictly monotone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::{bisect, bvn_cdf, bvn_pdf, gl64_unit, newton_bisect, norm_cdf, norm_quantile};
use crate::{Error, Result};

/// The copula families the estimator knows how to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Gaussian,
    Frank,
    Clayton,
    Gumbel,
}

impl CopulaFamily {
    pub const ALL: [CopulaFamily; 4] = [
        CopulaFamily::Gaussian,
        CopulaFamily::Frank,
        CopulaFamily::Clayton,
        CopulaFamily::Gumbel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CopulaFamily::Gaussian => "gaussian",
            CopulaFamily::Frank => "frank",
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Gumbel => "gumbel",
        }
    }

    /// Is `rho` inside the family's admissible domain?
    ///
    /// Gaussian: `(-1, 1)`. Frank: all finite reals, with 0 the independence
    /// member. Clayton: `(0, inf)`. Gumbel: `[1, inf)` with 1 = independence.
    pub fn admits(self, rho: f64) -> bool {
        if !rho.is_finite() {
            return false;
        }
        match self {
            CopulaFamily::Gaussian => rho.abs() < 1.0,
            CopulaFamily::Frank => true,
            CopulaFamily::Clayton => rho > 0.0,
            CopulaFamily::Gumbel => rho >= 1.0,
        }
    }

    /// The dependence parameter at (or in the limit of) independence.
    pub fn independence_rho(self) -> f64 {
        match self {
            CopulaFamily::Gumbel => 1.0,
            _ => 0.0,
        }
    }

    /// Smooth bijection from an unconstrained optimizer coordinate `w` onto
    /// the admissible domain (with a hair-width clamp away from any open
    /// boundary so downstream evaluations stay finite).
    pub fn link(self, w: f64) -> f64 {
        match self {
            CopulaFamily::Gaussian => w.tanh().clamp(-(1.0 - 1e-6), 1.0 - 1e-6),
            CopulaFamily::Frank => w,
            CopulaFamily::Clayton => softplus(w).max(1e-6),
            CopulaFamily::Gumbel => 1.0 + softplus(w).max(1e-6),
        }
    }

    /// Inverse of [`CopulaFamily::link`].
    pub fn link_inv(self, rho: f64) -> f64 {
        match self {
            CopulaFamily::Gaussian => rho.clamp(-(1.0 - 1e-6), 1.0 - 1e-6).atanh(),
            CopulaFamily::Frank => rho,
            CopulaFamily::Clayton => inv_softplus(rho.max(1e-6)),
            CopulaFamily::Gumbel => inv_softplus((rho - 1.0).max(1e-6)),
        }
    }

    /// `d rho / d w` of the link, used by the chain rule for the
    /// dependence-parameter gradient.
    pub fn link_deriv(self, w: f64) -> f64 {
        match self {
            CopulaFamily::Gaussian => {
                let t = w.tanh();
                1.0 - t * t
            }
            CopulaFamily::Frank => 1.0,
            CopulaFamily::Clayton | CopulaFamily::Gumbel => sigmoid(w),
        }
    }
}

impl std::fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CopulaFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(CopulaFamily::Gaussian),
            "frank" => Ok(CopulaFamily::Frank),
            "clayton" => Ok(CopulaFamily::Clayton),
            "gumbel" => Ok(CopulaFamily::Gumbel),
            other => Err(Error::Domain(format!("unknown copula family '{other}'"))),
        }
    }
}

fn softplus(w: f64) -> f64 {
    if w > 30.0 {
        w + (-w).exp().ln_1p()
    } else {
        w.exp().ln_1p()
    }
}

fn inv_softplus(s: f64) -> f64 {
    if s > 30.0 {
        s
    } else {
        s.exp_m1().ln()
    }
}

fn sigmoid(w: f64) -> f64 {
    1.0 / (1.0 + (-w).exp())
}

/// A validated (family, dependence parameter) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependenceParam {
    family: CopulaFamily,
    rho: f64,
}

impl DependenceParam {
    /// Construct, rejecting parameters outside the family's domain.
    pub fn new(family: CopulaFamily, rho: f64) -> Result<Self> {
        if !family.admits(rho) {
            return Err(Error::Domain(format!(
                "dependence parameter {rho} outside the {family} domain"
            )));
        }
        Ok(DependenceParam { family, rho })
    }

    /// The independence member of a family, or `None` for Clayton, whose
    /// independence end is an open limit rather than a member.
    pub fn independence(family: CopulaFamily) -> Option<Self> {
        match family {
            CopulaFamily::Clayton => None,
            _ => Some(DependenceParam {
                family,
                rho: family.independence_rho(),
            }),
        }
    }

    pub fn family(&self) -> CopulaFamily {
        self.family
    }

    /// The dependence parameter on the family-native scale.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Spearman's rho of this copula (see [`spearman_rho`]).
    pub fn spearman(&self) -> f64 {
        spearman_rho(self)
    }
}

fn check_unit(label: &str, u: f64) -> Result<()> {
    if u.is_nan() || !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!("{label} = {u} is not in [0,1]")));
    }
    Ok(())
}

fn check_open_unit(label: &str, u: f64) -> Result<()> {
    if u.is_nan() || u <= 0.0 || u >= 1.0 {
        return Err(Error::Domain(format!("{label} = {u} is not in (0,1)")));
    }
    Ok(())
}

/// Copula CDF `C(u1, u2; rho)`.
pub fn cdf(rho: &DependenceParam, u1: f64, u2: f64) -> Result<f64> {
    check_unit("u1", u1)?;
    check_unit("u2", u2)?;
    Ok(cdf_unchecked(rho.family, rho.rho, u1, u2))
}

/// The comonotone (perfect positive dependence) copula `min(u1, u2)`.
///
/// This is the `rho -> 1` limit of the Gaussian family; the
/// identification-failure demonstrations use it directly because their
/// construction places all mass on the diagonal.
pub fn comonotone_cdf(u1: f64, u2: f64) -> Result<f64> {
    check_unit("u1", u1)?;
    check_unit("u2", u2)?;
    Ok(u1.min(u2))
}

fn cdf_unchecked(family: CopulaFamily, theta: f64, u: f64, v: f64) -> f64 {
    // Boundary identities hold exactly by construction.
    if u == 0.0 || v == 0.0 {
        return 0.0;
    }
    if u == 1.0 {
        return v;
    }
    if v == 1.0 {
        return u;
    }
    match family {
        CopulaFamily::Gaussian => {
            if theta == 0.0 {
                u * v
            } else {
                bvn_cdf(norm_quantile(u), norm_quantile(v), theta)
            }
        }
        CopulaFamily::Frank => frank_cdf(theta, u, v),
        CopulaFamily::Clayton => clayton_cdf(theta, u, v),
        CopulaFamily::Gumbel => gumbel_cdf(theta, u, v),
    }
}

/// Partial derivatives `(C1, C2, Crho)` at an interior point.
///
/// `C1 = dC/du1` and `C2 = dC/du2` are the conditional distribution
/// functions; `Crho` is the sensitivity in the dependence parameter. All are
/// analytic closed forms (the Gaussian `Crho` is the bivariate normal
/// density at the transformed point).
pub fn partials(rho: &DependenceParam, u1: f64, u2: f64) -> Result<(f64, f64, f64)> {
    check_open_unit("u1", u1)?;
    check_open_unit("u2", u2)?;
    let (_, c1, c2, cr) = eval_with_partials(rho.family, rho.rho, u1, u2);
    Ok((c1, c2, cr))
}

/// CDF and partials in one pass, sharing the transcendental evaluations.
/// This is the likelihood's hot path.
pub fn cdf_and_partials(rho: &DependenceParam, u1: f64, u2: f64) -> Result<(f64, f64, f64, f64)> {
    check_open_unit("u1", u1)?;
    check_open_unit("u2", u2)?;
    Ok(eval_with_partials(rho.family, rho.rho, u1, u2))
}

/// Returns `(C, C1, C2, Crho)` for interior `(u, v)`.
fn eval_with_partials(family: CopulaFamily, theta: f64, u: f64, v: f64) -> (f64, f64, f64, f64) {
    match family {
        CopulaFamily::Gaussian => {
            if theta == 0.0 {
                // Independence member: Crho is the Gaussian-copula density
                // limit, the bivariate normal density at the quantiles.
                let (x, y) = (norm_quantile(u), norm_quantile(v));
                (u * v, v, u, bvn_pdf(x, y, 0.0))
            } else {
                let x = norm_quantile(u);
                let y = norm_quantile(v);
                let om = (1.0 - theta * theta).sqrt();
                let c = bvn_cdf(x, y, theta);
                let c1 = norm_cdf((y - theta * x) / om);
                let c2 = norm_cdf((x - theta * y) / om);
                let cr = bvn_pdf(x, y, theta);
                (c, c1, c2, cr)
            }
        }
        CopulaFamily::Frank => frank_with_partials(theta, u, v),
        CopulaFamily::Clayton => clayton_with_partials(theta, u, v),
        CopulaFamily::Gumbel => gumbel_with_partials(theta, u, v),
    }
}

// ---------------------------------------------------------------------------
// Frank: C = -(1/theta) ln(1 + (e^{-theta u}-1)(e^{-theta v}-1)/(e^{-theta}-1))
// ---------------------------------------------------------------------------

fn frank_cdf(theta: f64, u: f64, v: f64) -> f64 {
    if theta == 0.0 {
        return u * v;
    }
    let a = (-theta * u).exp_m1();
    let b = (-theta * v).exp_m1();
    let d = (-theta).exp_m1();
    -(a * b / d).ln_1p() / theta
}

fn frank_with_partials(theta: f64, u: f64, v: f64) -> (f64, f64, f64, f64) {
    if theta == 0.0 {
        // Independence member; Crho is the theta -> 0 limit of dC/dtheta,
        // obtained from C = uv + theta uv(1-u)(1-v)/2 + O(theta^2).
        return (u * v, v, u, 0.5 * u * v * (1.0 - u) * (1.0 - v));
    }
    let a = (-theta * u).exp_m1();
    let b = (-theta * v).exp_m1();
    let d = (-theta).exp_m1();
    // ln g for g = 1 + ab/d, via ln_1p: near theta = 0 the ratio ab/d is
    // O(theta) and forming g explicitly would throw away the digits that
    // the 1/theta^2 factor below amplifies.
    let ln_g = (a * b / d).ln_1p();
    let c = -ln_g / theta;
    // dC/du = e^{-theta u} b / (d + a b), symmetrically for v.
    let denom = d + a * b;
    let c1 = (a + 1.0) * b / denom;
    let c2 = (b + 1.0) * a / denom;
    // dC/dtheta = ln(g)/theta^2 - g'/(theta g).
    let da = -u * (a + 1.0);
    let db = -v * (b + 1.0);
    let dd = -(d + 1.0);
    let gp = (da * b + a * db) / d - a * b * dd / (d * d);
    let g = 1.0 + a * b / d;
    let cr = ln_g / (theta * theta) - gp / (theta * g);
    (c, c1, c2, cr)
}

// ---------------------------------------------------------------------------
// Clayton: C = (u^-theta + v^-theta - 1)^(-1/theta), theta > 0.
// Evaluated in log space so large theta cannot overflow.
// ---------------------------------------------------------------------------

struct ClaytonCore {
    ln_s: f64,
    // e^{a-m}, e^{b-m}, e^{-m} with m = max(a, b), where a = -theta ln u.
    ea: f64,
    eb: f64,
    a: f64,
    b: f64,
    m: f64,
}

fn clayton_core(theta: f64, u: f64, v: f64) -> ClaytonCore {
    let a = -theta * u.ln();
    let b = -theta * v.ln();
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let scaled = ea + eb - (-m).exp(); // S e^{-m}, strictly positive
    ClaytonCore {
        ln_s: m + scaled.ln(),
        ea,
        eb,
        a,
        b,
        m,
    }
}

fn clayton_cdf(theta: f64, u: f64, v: f64) -> f64 {
    if theta < 1e-12 {
        return u * v;
    }
    let core = clayton_core(theta, u, v);
    (-core.ln_s / theta).exp()
}

fn clayton_with_partials(theta: f64, u: f64, v: f64) -> (f64, f64, f64, f64) {
    let core = clayton_core(theta, u, v);
    let c = (-core.ln_s / theta).exp();
    // C1 = u^{-theta-1} S^{-1/theta - 1}
    let c1 = ((theta + 1.0) * (-u.ln()) - (1.0 / theta + 1.0) * core.ln_s).exp();
    let c2 = ((theta + 1.0) * (-v.ln()) - (1.0 / theta + 1.0) * core.ln_s).exp();
    // dC/dtheta = (C/theta^2) (ln S - (u^-t a + v^-t b)/S) with a = -t ln u.
    let s_scaled = core.ea + core.eb - (-core.m).exp();
    let weighted = (core.ea * core.a + core.eb * core.b) / s_scaled;
    let cr = c / (theta * theta) * (core.ln_s - weighted);
    (c, c1, c2, cr)
}

// ---------------------------------------------------------------------------
// Gumbel: C = exp(-S^{1/theta}), S = (-ln u)^theta + (-ln v)^theta, theta >= 1.
// ---------------------------------------------------------------------------

struct GumbelCore {
    lx: f64, // ln(-ln u)
    ly: f64,
    ln_s: f64,
    spow: f64, // S^{1/theta}
    // e^{theta lx - m}, e^{theta ly - m}
    ea: f64,
    eb: f64,
}

fn gumbel_core(theta: f64, u: f64, v: f64) -> GumbelCore {
    let lx = (-u.ln()).ln();
    let ly = (-v.ln()).ln();
    let a = theta * lx;
    let b = theta * ly;
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let ln_s = m + (ea + eb).ln();
    GumbelCore {
        lx,
        ly,
        ln_s,
        spow: (ln_s / theta).exp(),
        ea,
        eb,
    }
}

fn gumbel_cdf(theta: f64, u: f64, v: f64) -> f64 {
    if theta == 1.0 {
        return u * v;
    }
    (-gumbel_core(theta, u, v).spow).exp()
}

fn gumbel_with_partials(theta: f64, u: f64, v: f64) -> (f64, f64, f64, f64) {
    let core = gumbel_core(theta, u, v);
    let c = (-core.spow).exp();
    // C1 = C S^{1/theta - 1} (-ln u)^{theta-1} / u
    let c1 = c * ((1.0 / theta - 1.0) * core.ln_s + (theta - 1.0) * core.lx).exp() / u;
    let c2 = c * ((1.0 / theta - 1.0) * core.ln_s + (theta - 1.0) * core.ly).exp() / v;
    // d(S^{1/theta})/dtheta = S^{1/theta} (-ln S / theta^2 + S'/(theta S)),
    // S' = x^theta ln x + y^theta ln y (x = -ln u).
    let sp_over_s = (core.ea * core.lx + core.eb * core.ly) / (core.ea + core.eb);
    let dspow = core.spow * (-core.ln_s / (theta * theta) + sp_over_s / theta);
    let cr = -c * dspow;
    (c, c1, c2, cr)
}

// ---------------------------------------------------------------------------
// Spearman's rho and its inverse
// ---------------------------------------------------------------------------

/// Spearman's rho: `12 * int int C(u,v) du dv - 3`, computed by a 64x64
/// Gauss-Legendre tensor rule under the endpoint substitution
/// `u = (1 - cos(pi t))/2`. The substitution flattens the square-root edge
/// behaviour the Gaussian family inherits from the normal quantile, taking
/// the rule from ~1e-8 to better than 1e-11 across families.
pub fn spearman_rho(rho: &DependenceParam) -> f64 {
    let rule = spearman_rule();
    let mut acc = 0.0;
    for &(u, wu) in rule {
        for &(v, wv) in rule {
            acc += wu * wv * cdf_unchecked(rho.family, rho.rho, u, v);
        }
    }
    12.0 * acc - 3.0
}

/// Cached 64-point rule on `[0,1]` with cosine endpoint clustering.
fn spearman_rule() -> &'static [(f64, f64)] {
    use std::sync::OnceLock;
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        gl64_unit()
            .iter()
            .map(|&(t, w)| {
                let (s, c) = (std::f64::consts::PI * t).sin_cos();
                ((1.0 - c) / 2.0, w * std::f64::consts::PI / 2.0 * s)
            })
            .collect()
    })
}

/// Invert [`spearman_rho`]: find the family-native parameter that produces
/// the requested Spearman's rho typo-free by monotone bisection.
///
/// Clayton cannot attain `rho_sp <= 0` (its independence end is an open
/// limit) and Gumbel cannot attain `rho_sp < 0`; those requests are
/// rejected as unreachable.
pub fn from_spearman(family: CopulaFamily, rho_sp: f64) -> Result<DependenceParam> {
    if !(-1.0..=1.0).contains(&rho_sp) || rho_sp.is_nan() {
        return Err(Error::Domain(format!("rho_sp = {rho_sp} is not in [-1,1]")));
    }
    let unreachable = |reason: &str| Error::UnreachableSpearman {
        family: family.name(),
        rho_sp,
        reason: reason.to_string(),
    };
    // Native-parameter search brackets covering |rho_sp| up to ~0.999.
    let (lo, hi) = match family {
        CopulaFamily::Gaussian => (-(1.0 - 1e-9), 1.0 - 1e-9),
        CopulaFamily::Frank => (-80.0, 80.0),
        CopulaFamily::Clayton => (1e-8, 500.0),
        CopulaFamily::Gumbel => (1.0, 200.0),
    };
    match family {
        CopulaFamily::Clayton if rho_sp <= 0.0 => {
            return Err(unreachable(
                "Clayton supports positive dependence only; independence is a limit, not a member",
            ));
        }
        CopulaFamily::Gumbel if rho_sp < 0.0 => {
            return Err(unreachable("Gumbel supports nonnegative dependence only"));
        }
        CopulaFamily::Gumbel if rho_sp == 0.0 => {
            return DependenceParam::new(family, 1.0);
        }
        CopulaFamily::Frank | CopulaFamily::Gaussian if rho_sp == 0.0 => {
            return DependenceParam::new(family, family.independence_rho());
        }
        _ => {}
    }
    let eval = |theta: f64| {
        spearman_rho(&DependenceParam {
            family,
            rho: theta,
        })
    };
    if eval(lo) > rho_sp || eval(hi) < rho_sp {
        return Err(unreachable("outside the family's attainable range"));
    }
    let root = bisect(|theta| eval(theta) - rho_sp, lo, hi, 1e-9)?;
    DependenceParam::new(family, root)
}

// ---------------------------------------------------------------------------
// Ordering (positivity) scan
// ---------------------------------------------------------------------------

/// Result of scanning `Crho` over a grid; positivity everywhere is the
/// computable consequence of the stochastically-increasing ordering.
#[derive(Debug, Clone, Serialize)]
pub struct OrderingScan {
    pub family: CopulaFamily,
    pub points_checked: usize,
    /// `(rho, u1, u2, crho)` wherever `Crho <= 0`.
    pub violations: Vec<(f64, f64, f64, f64)>,
    pub min_crho: f64,
    pub argmin: (f64, f64, f64),
}

impl OrderingScan {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Nine dependence-parameter values spread across the admissible range of
/// a family, for scans and grid checks. Negative dependence is included
/// where the family reaches it. The upper ends stop where `Crho` still
/// clears the double-precision underflow threshold on interior grids
/// (beyond Clayton ~12 / Gumbel ~10 the copula is numerically comonotone
/// and the derivative rounds to zero).
pub fn representative_rhos(family: CopulaFamily) -> [f64; 9] {
    match family {
        CopulaFamily::Gaussian => [-0.95, -0.7, -0.45, -0.2, 0.05, 0.3, 0.55, 0.8, 0.95],
        CopulaFamily::Frank => [-20.0, -10.0, -5.0, -1.0, 1.0, 3.0, 5.0, 10.0, 20.0],
        CopulaFamily::Clayton => [0.05, 0.25, 0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0],
        CopulaFamily::Gumbel => [1.05, 1.25, 1.5, 2.0, 2.5, 3.5, 5.0, 6.5, 8.0],
    }
}

/// Evaluate `Crho(u1, u2; rho)` on the product grid and report any
/// non-positive values. Grid points outside the admissible domain or the
/// open unit square are skipped.
pub fn si_ordering_scan(family: CopulaFamily, rho_grid: &[f64], u_grid: &[f64]) -> OrderingScan {
    let mut scan = OrderingScan {
        family,
        points_checked: 0,
        violations: Vec::new(),
        min_crho: f64::INFINITY,
        argmin: (f64::NAN, f64::NAN, f64::NAN),
    };
    for &rho in rho_grid {
        if !family.admits(rho) {
            continue;
        }
        for &u1 in u_grid {
            for &u2 in u_grid {
                if !(0.0 < u1 && u1 < 1.0 && 0.0 < u2 && u2 < 1.0) {
                    continue;
                }
                let (_, _, _, cr) = eval_with_partials(family, rho, u1, u2);
                scan.points_checked += 1;
                if cr < scan.min_crho {
                    scan.min_crho = cr;
                    scan.argmin = (rho, u1, u2);
                }
                if cr <= 0.0 {
                    scan.violations.push((rho, u1, u2, cr));
                }
            }
        }
    }
    scan
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Draw `n` pairs from the copula by conditional inversion: `u1` uniform,
/// then `u2 = C1^{-1}(w | u1)` for an independent uniform `w`. Deterministic
/// given the seed.
pub fn sample(rho: &DependenceParam, n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(rho, n, &mut rng)
}

/// Sampling core reusable with an external RNG stream (the Monte Carlo
/// harness hands each replication its own stream).
pub fn sample_with<R: Rng>(rho: &DependenceParam, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| {
            let u1 = open_unit(rng);
            let w = open_unit(rng);
            (u1, conditional_inverse(rho, u1, w))
        })
        .collect()
}

/// Perfect-positive-dependence sampler: the conditional law of `u2` given
/// `u1` is a point mass, so `u2 = u1` exactly.
pub fn sample_comonotone(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u = open_unit(&mut rng);
            (u, u)
        })
        .collect()
}

fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Solve `C1(u1, u2) = w` for `u2`. Gaussian, Frank and Clayton have closed
/// forms; Gumbel uses Newton with a bisection safeguard (tolerance 1e-10)
/// with the analytic copula density as the derivative.
pub fn conditional_inverse(rho: &DependenceParam, u1: f64, w: f64) -> f64 {
    let theta = rho.rho;
    match rho.family {
        CopulaFamily::Gaussian => {
            if theta == 0.0 {
                w
            } else {
                let x = norm_quantile(u1);
                let z = norm_quantile(w);
                norm_cdf(theta * x + (1.0 - theta * theta).sqrt() * z)
            }
        }
        CopulaFamily::Frank => {
            if theta == 0.0 {
                w
            } else {
                // From C1 = e^{-theta u} b/(d + a b) = w with a = e^{-theta u}-1:
                // b = w d / (e^{-theta u} - w a).
                let a = (-theta * u1).exp_m1();
                let d = (-theta).exp_m1();
                let b = w * d / ((a + 1.0) - w * a);
                -b.ln_1p() / theta
            }
        }
        CopulaFamily::Clayton => {
            // u2 = (1 + u1^{-theta} (w^{-theta/(1+theta)} - 1))^{-1/theta},
            // assembled in log space to survive large theta.
            let a = -theta * u1.ln(); // = ln u1^{-theta} >= 0
            let t = (-theta / (1.0 + theta) * w.ln()).exp_m1(); // w^{-t/(1+t)} - 1 >= 0
            if t == 0.0 {
                return u1; // w = 1 edge: conditional quantile at its top
            }
            let ln_inner = a + t.ln() + ((-a - t.ln()).exp()).ln_1p(); // ln(e^a t + 1)
            (-ln_inner / theta).exp()
        }
        CopulaFamily::Gumbel => {
            if theta == 1.0 {
                return w;
            }
            let f = |v: f64| {
                let (_, c1, _, _) = gumbel_with_partials(theta, u1, v);
                (c1 - w, gumbel_density(theta, u1, v))
            };
            // C1(u1, .) is a CDF in its second argument: increasing from 0
            // to 1, so the root is bracketed on (0, 1).
            newton_bisect(f, 1e-15, 1.0 - 1e-15, w, 1e-10).unwrap_or(w)
        }
    }
}

/// Gumbel copula density, used only as the Newton derivative in
/// [`conditional_inverse`]:
/// `c = C (x y)^{theta-1} S^{1/theta - 2} (S^{1/theta} + theta - 1) / (u v)`
/// with `x = -ln u`, `y = -ln v`, `S = x^theta + y^theta`.
fn gumbel_density(theta: f64, u: f64, v: f64) -> f64 {
    let core = gumbel_core(theta, u, v);
    let c = (-core.spow).exp();
    let log_factor =
        (theta - 1.0) * (core.lx + core.ly) + (1.0 / theta - 2.0) * core.ln_s - u.ln() - v.ln();
    c * log_factor.exp() * (core.spow + theta - 1.0)
}
