//! The deliverable checklist: twelve end-to-end criteria covering copula
//! correctness, derivative fidelity, identification demonstrations, the
//! Monte Carlo replications, bootstrap coverage, and reproducibility.
//!
//! Each test prints one `criterion NN ...: PASS/FAIL` line (visible with
//! `--nocapture`) and asserts the same condition, so a failing criterion
//! fails the suite. Expensive study runs are shared through `OnceLock`.
//!
//! The full-scale bootstrap coverage study is `#[ignore]`d; run it with
//! `cargo test --test acceptance -- --ignored --nocapture`.

use std::sync::OnceLock;
use std::time::Instant;

use endoprobit::copula::{
    self, cdf, partials, representative_rhos, si_ordering_scan, CopulaFamily, DependenceParam,
};
use endoprobit::identlab::{normal_failure_demo, verify_binary_counterexample, BinaryCounterexample};
use endoprobit::inference::{weighted_bootstrap, BootstrapOptions};
use endoprobit::likelihood::{loglik, loglik_grad, ParamLayout};
use endoprobit::marginals::{calibrate_mixture, ParametricMarginal, SieveMarginal};
use endoprobit::simulation::{
    preset, run_coverage_study, run_monte_carlo, simulate_dataset, McSummary, ModelSummary,
    TargetSummary,
};
use endoprobit::{estimator, FitOptions, Marginal, ModelSpec, Theta, TransformG};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

fn verdict(number: u8, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {number:02} {name}: {} - {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {number:02} {name}: {detail}");
}

// ---------------------------------------------------------------------
// Shared study runs (each computed once, reused across criteria).

fn table1_n500() -> &'static McSummary {
    static CELL: OnceLock<McSummary> = OnceLock::new();
    CELL.get_or_init(|| run_monte_carlo(&preset("table1-gaussian").unwrap()).unwrap())
}

fn table1_n1000() -> &'static McSummary {
    static CELL: OnceLock<McSummary> = OnceLock::new();
    CELL.get_or_init(|| run_monte_carlo(&preset("table1-gaussian-n1000").unwrap()).unwrap())
}

fn table2_n500() -> &'static McSummary {
    static CELL: OnceLock<McSummary> = OnceLock::new();
    CELL.get_or_init(|| run_monte_carlo(&preset("table2-gaussian").unwrap()).unwrap())
}

fn model<'a>(summary: &'a McSummary, label_prefix: &str) -> &'a ModelSummary {
    summary
        .models
        .iter()
        .find(|m| m.model.starts_with(label_prefix))
        .unwrap_or_else(|| panic!("no model labelled {label_prefix}*"))
}

fn target<'a>(m: &'a ModelSummary, name: &str) -> &'a TargetSummary {
    m.targets
        .iter()
        .find(|t| t.target == name)
        .unwrap_or_else(|| panic!("no target {name}"))
}

// ---------------------------------------------------------------------

#[test]
fn criterion_01_copula_axioms_on_the_grid() {
    let start = Instant::now();
    let grid: Vec<f64> = (0..=32).map(|i| i as f64 / 32.0).collect();
    let mut worst_boundary = 0.0f64;
    let mut worst_mass = f64::INFINITY;
    for family in CopulaFamily::ALL {
        let rhos = representative_rhos(family);
        for &rho in rhos.iter().step_by(2) {
            // 5 of the 9: both ends and the middle of the range.
            let dep = DependenceParam::new(family, rho).unwrap();
            let mut c = vec![vec![0.0; grid.len()]; grid.len()];
            for (i, &u) in grid.iter().enumerate() {
                for (j, &v) in grid.iter().enumerate() {
                    c[i][j] = cdf(&dep, u, v).unwrap();
                }
            }
            for (i, &u) in grid.iter().enumerate() {
                worst_boundary = worst_boundary
                    .max((c[i][32] - u).abs())
                    .max((c[32][i] - u).abs())
                    .max(c[i][0].abs())
                    .max(c[0][i].abs());
            }
            for i in 0..32 {
                for j in 0..32 {
                    let mass = c[i + 1][j + 1] - c[i][j + 1] - c[i + 1][j] + c[i][j];
                    worst_mass = worst_mass.min(mass);
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = worst_boundary <= 1e-12 && worst_mass >= -1e-12 && elapsed < 5.0;
    verdict(
        1,
        "copula axioms",
        ok,
        &format!(
            "boundary defect {worst_boundary:.1e}, smallest cell mass {worst_mass:.1e}, {elapsed:.2}s"
        ),
    );
}

/// Central finite difference of the mean log likelihood in one coordinate
/// of the packed layout (native dependence scale).
fn fd_loglik_coord(
    data: &endoprobit::Dataset,
    theta: &Theta,
    f_eps: &Marginal,
    f_nu: &Marginal,
    layout: &ParamLayout,
    j: usize,
    h: f64,
) -> f64 {
    let eval = |sign: f64| -> f64 {
        let mut t = theta.clone();
        let mut fe = f_eps.clone();
        let mut fn_ = f_nu.clone();
        let bump = sign * h;
        if layout.alpha().contains(&j) {
            t.alpha[j - layout.alpha().start] += bump;
        } else if layout.gamma().contains(&j) {
            t.gamma[j - layout.gamma().start] += bump;
        } else if layout.beta().contains(&j) {
            t.beta[j - layout.beta().start] += bump;
        } else if j == layout.delta1() {
            t.delta1 += bump;
        } else if j == layout.rho() {
            t.dep = DependenceParam::new(t.dep.family(), t.dep.rho() + bump).unwrap();
        } else if layout.a_eps().contains(&j) {
            if let Marginal::Sieve(s) = &fe {
                let mut coefs = s.free_coefs().to_vec();
                coefs[j - layout.a_eps().start] += bump;
                fe = Marginal::Sieve(SieveMarginal::new(s.transform(), &coefs));
            }
        } else if layout.a_nu().contains(&j) {
            if let Marginal::Sieve(s) = &fn_ {
                let mut coefs = s.free_coefs().to_vec();
                coefs[j - layout.a_nu().start] += bump;
                fn_ = Marginal::Sieve(SieveMarginal::new(s.transform(), &coefs));
            }
        }
        loglik(data, &t, &fe, &fn_).unwrap()
    };
    (eval(1.0) - eval(-1.0)) / (2.0 * h)
}

#[test]
fn criterion_02_analytic_derivatives_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    // Copula partials at randomized interior points, relative 1e-6.
    let mut worst_copula = 0.0f64;
    for family in CopulaFamily::ALL {
        for _ in 0..25 {
            let dep = DependenceParam::new(family, family.link(rng.gen_range(-2.0..2.0))).unwrap();
            let u: f64 = rng.gen_range(0.05..0.95);
            let v: f64 = rng.gen_range(0.05..0.95);
            let (c1, c2, cr) = partials(&dep, u, v).unwrap();
            let h = 1e-6;
            let fd1 = (cdf(&dep, u + h, v).unwrap() - cdf(&dep, u - h, v).unwrap()) / (2.0 * h);
            let fd2 = (cdf(&dep, u, v + h).unwrap() - cdf(&dep, u, v - h).unwrap()) / (2.0 * h);
            let hr = 1e-6 * (1.0 + dep.rho().abs());
            let up = DependenceParam::new(family, dep.rho() + hr).unwrap();
            let dn = DependenceParam::new(family, dep.rho() - hr).unwrap();
            let fdr = (cdf(&up, u, v).unwrap() - cdf(&dn, u, v).unwrap()) / (2.0 * hr);
            for (a, f) in [(c1, fd1), (c2, fd2), (cr, fdr)] {
                worst_copula = worst_copula.max((a - f).abs() / a.abs().max(1.0));
            }
        }
    }

    // Full likelihood gradient (parametric for every family, plus a sieve
    // model) at randomized parameters, relative 1e-5.
    let mut scenario = preset("table1-gaussian").unwrap();
    scenario.n = 120;
    let data = simulate_dataset(&scenario, 1).unwrap();
    let normal = Marginal::from(ParametricMarginal::standard_normal());
    let mut worst_loglik = 0.0f64;
    let mut check_grad = |theta: &Theta, fe: &Marginal, fnu: &Marginal| {
        let layout = ParamLayout::for_model(&data, fe, fnu);
        let (_, grad) = loglik_grad(&data, theta, fe, fnu).unwrap();
        for j in 0..layout.len() {
            let h = if j == layout.rho() {
                1e-5 * (1.0 + theta.dep.rho().abs())
            } else {
                1e-5
            };
            let fd = fd_loglik_coord(&data, theta, fe, fnu, &layout, j, h);
            worst_loglik = worst_loglik.max((grad[j] - fd).abs() / grad[j].abs().max(1.0));
        }
    };
    for family in CopulaFamily::ALL {
        let theta = Theta {
            alpha: vec![rng.gen_range(-1.2..-0.8)],
            gamma: vec![rng.gen_range(0.6..1.0)],
            beta: vec![rng.gen_range(-1.2..-0.8)],
            delta1: rng.gen_range(0.8..1.4),
            dep: DependenceParam::new(family, family.link(rng.gen_range(-1.0..1.0))).unwrap(),
        };
        check_grad(&theta, &normal, &normal);
    }
    let sieve_eps = Marginal::Sieve(SieveMarginal::new(
        TransformG::Phi,
        &[rng.gen_range(-0.3..0.3), 0.2],
    ));
    let sieve_nu = Marginal::Sieve(SieveMarginal::new(
        TransformG::Phi,
        &[0.1, rng.gen_range(-0.3..0.3)],
    ));
    let theta = Theta {
        alpha: vec![-1.0],
        gamma: vec![0.8],
        beta: vec![-1.0],
        delta1: 1.1,
        dep: DependenceParam::new(CopulaFamily::Gaussian, 0.4).unwrap(),
    };
    check_grad(&theta, &sieve_eps, &sieve_nu);

    let elapsed = start.elapsed().as_secs_f64();
    let ok = worst_copula < 1e-6 && worst_loglik < 1e-5 && elapsed < 30.0;
    verdict(
        2,
        "derivative correctness",
        ok,
        &format!(
            "copula rel err {worst_copula:.1e} (tol 1e-6), likelihood rel err {worst_loglik:.1e} (tol 1e-5), {elapsed:.2}s"
        ),
    );
}

#[test]
fn criterion_03_dependence_derivative_positive_everywhere() {
    let u_grid: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
    let mut total_points = 0;
    let mut total_violations = 0;
    let mut min_crho = f64::INFINITY;
    for family in CopulaFamily::ALL {
        let scan = si_ordering_scan(family, &representative_rhos(family), &u_grid);
        total_points += scan.points_checked;
        total_violations += scan.violations.len();
        min_crho = min_crho.min(scan.min_crho);
    }
    let ok = total_violations == 0 && total_points == 4 * 9 * 19 * 19;
    verdict(
        3,
        "Crho positivity",
        ok,
        &format!("{total_points} grid points, {total_violations} violations, min Crho {min_crho:.1e}"),
    );
}

#[test]
fn criterion_04_treatment_effect_truths() {
    let normal = ParametricMarginal::standard_normal();
    let ate_normal = normal.cdf(1.1) - normal.cdf(0.0);
    let (mixture, _) = calibrate_mixture(&[0.6, 0.4], &[-1.0, 1.5], 0.1066, 1.1).unwrap();
    let ate_mixture = mixture.cdf(1.1) - mixture.cdf(0.0);
    let ok = (ate_normal - 0.3643).abs() < 5e-4 && (ate_mixture - 0.1066).abs() < 5e-4;
    verdict(
        4,
        "treatment-effect truths",
        ok,
        &format!("normal design {ate_normal:.4} (want 0.3643), mixture design {ate_mixture:.4} (want 0.1066)"),
    );
}

#[test]
fn criterion_05_binary_counterexample() {
    let example = BinaryCounterexample::canonical();
    let gap = verify_binary_counterexample(&example).unwrap();
    let probs = example.set_a.fitted_probs().unwrap();
    let want = [1.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0, 4.0 / 9.0];
    let cell_defect = probs[0]
        .iter()
        .zip(&want)
        .map(|(p, w)| (p - w).abs())
        .fold(0.0f64, f64::max);
    let ok = gap <= 1e-14 && cell_defect <= 1e-14;
    verdict(
        5,
        "binary counterexample",
        ok,
        &format!("probability gap {gap:.1e}, first-cell defect {cell_defect:.1e}"),
    );
}

#[test]
fn criterion_06_gaussian_design_replication() {
    let start = Instant::now();
    let summary = table1_n500();
    let mut detail = String::new();
    let mut ok = true;
    for prefix in ["parametric", "sieve"] {
        let m = model(summary, prefix);
        let gamma = target(m, "gamma");
        let ate = target(m, "ate");
        let this_ok = (gamma.mean - 0.80).abs() < 0.03
            && (ate.mean - 0.3643).abs() < 0.02
            && (0.07..=0.12).contains(&gamma.rmse);
        ok &= this_ok;
        detail.push_str(&format!(
            "{prefix}: mean gamma {:.4}, mean ate {:.4}, rmse(gamma) {:.4}; ",
            gamma.mean, ate.mean, gamma.rmse
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    ok &= elapsed < 1200.0;
    detail.push_str(&format!("{elapsed:.0}s"));
    verdict(6, "correct-spec replication", ok, &detail);
}

#[test]
fn criterion_07_mixture_design_favors_the_sieve() {
    let summary = table2_n500();
    let par = target(model(summary, "parametric"), "ate");
    let sieve = target(model(summary, "sieve"), "ate");
    let ok = par.bias >= 0.10 && sieve.bias.abs() <= 0.05 && sieve.rmse < par.rmse;
    verdict(
        7,
        "misspecification replication",
        ok,
        &format!(
            "parametric ate bias {:.4} (want >= 0.10), sieve bias {:.4} (want |.| <= 0.05), rmse {:.4} vs {:.4}",
            par.bias, sieve.bias, sieve.rmse, par.rmse
        ),
    );
}

#[test]
fn criterion_08_root_n_scaling_of_the_spread() {
    let m500 = model(table1_n500(), "parametric");
    let m1000 = model(table1_n1000(), "parametric");
    let ratio_gamma = target(m1000, "gamma").sd / target(m500, "gamma").sd;
    let ratio_ate = target(m1000, "ate").sd / target(m500, "ate").sd;
    let ok = (0.6..=0.8).contains(&ratio_gamma) && (0.6..=0.8).contains(&ratio_ate);
    verdict(
        8,
        "root-n scaling",
        ok,
        &format!("SD ratios n=1000/n=500: gamma {ratio_gamma:.3}, ate {ratio_ate:.3} (want [0.6, 0.8])"),
    );
}

#[test]
fn criterion_09_bootstrap_coverage_smoke() {
    let start = Instant::now();
    let mut scenario = preset("coverage-boot").unwrap();
    scenario.replications = 50;
    let cov = run_coverage_study(&scenario, 100, 0.95).unwrap();
    let i = cov.targets.iter().position(|t| t == "ate").unwrap();
    let coverage = cov.percentile_coverage[i];
    let elapsed = start.elapsed().as_secs_f64();
    let ok = (0.80..=1.00).contains(&coverage) && elapsed < 600.0;
    verdict(
        9,
        "bootstrap coverage (smoke)",
        ok,
        &format!(
            "ate percentile coverage {coverage:.3} over {} sims x 100 boots (want [0.80, 1.00]), {elapsed:.0}s",
            cov.sims_used
        ),
    );
}

/// Full-scale version of criterion 9; takes tens of minutes, so it only
/// runs on request (`-- --ignored`).
#[test]
#[ignore = "full 200x200 coverage study; run with -- --ignored"]
fn criterion_09_bootstrap_coverage_full() {
    let scenario = preset("coverage-boot").unwrap();
    let cov = run_coverage_study(&scenario, 200, 0.95).unwrap();
    let i = cov.targets.iter().position(|t| t == "ate").unwrap();
    let coverage = cov.percentile_coverage[i];
    let ok = (0.88..=0.99).contains(&coverage);
    verdict(
        9,
        "bootstrap coverage (full)",
        ok,
        &format!(
            "ate percentile coverage {coverage:.4} over {} sims x 200 boots (want [0.88, 0.99])",
            cov.sims_used
        ),
    );
}

#[test]
fn criterion_10_degree_zero_sieve_nests_the_parametric_model() {
    let scenario = preset("table1-gaussian").unwrap();
    let data = simulate_dataset(&scenario, 0).unwrap();
    let opts = FitOptions::default();
    let parametric = estimator::fit_weighted(
        &data,
        &ModelSpec::parametric_pinned(CopulaFamily::Gaussian, -1.0),
        &opts,
        None,
    )
    .unwrap();
    let sieve0 = estimator::fit_weighted(
        &data,
        &ModelSpec::sieve(CopulaFamily::Gaussian, TransformG::Phi, Some(0), -1.0),
        &opts,
        None,
    )
    .unwrap();
    let gap = (parametric.loglik_value - sieve0.loglik_value).abs();
    let ok = gap < 1e-8;
    verdict(
        10,
        "sieve nesting",
        ok,
        &format!("|loglik difference| = {gap:.1e} (want < 1e-8)"),
    );
}

#[test]
fn criterion_11_failure_distribution_solve() {
    let fd = normal_failure_demo().unwrap();
    let increasing = fd.f_tilde.windows(2).all(|w| w[1] > w[0]);
    let gap = fd.sup_gap_to_normal(-3.0, 3.0);
    let ok = fd.residual < 1e-6 && increasing && gap > 0.0 && gap < 0.1;
    verdict(
        11,
        "failure-distribution reproduction",
        ok,
        &format!(
            "residual {:.1e} (want < 1e-6), strictly increasing: {increasing}, sup gap to normal {gap:.4} (want (0, 0.1))",
            fd.residual
        ),
    );
}

#[test]
fn criterion_12_thread_count_does_not_change_results() {
    let pool = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
    };
    let mut scenario = preset("table1-gaussian").unwrap();
    scenario.replications = 6;

    let mc1 = pool(1).install(|| run_monte_carlo(&scenario)).unwrap();
    let mc2 = pool(3).install(|| run_monte_carlo(&scenario)).unwrap();
    let mc_same = serde_json::to_string(&mc1).unwrap() == serde_json::to_string(&mc2).unwrap();

    let data = simulate_dataset(&scenario, 0).unwrap();
    let fit = estimator::fit_weighted(
        &data,
        &scenario.models[0],
        &FitOptions::default(),
        None,
    )
    .unwrap();
    let opts = BootstrapOptions {
        b: 24,
        seed: 9,
        x_eval: Some(vec![0.0]),
        ..BootstrapOptions::default()
    };
    let b1 = pool(1).install(|| weighted_bootstrap(&data, &fit, &opts)).unwrap();
    let b2 = pool(3).install(|| weighted_bootstrap(&data, &fit, &opts)).unwrap();
    let boot_same = b1.estimates == b2.estimates && b1.se == b2.se && b1.pci == b2.pci;

    // Seeded draws must also be identical across runs, not merely pools.
    let again = simulate_dataset(&scenario, 0).unwrap();
    let data_same = data.x_row(0) == again.x_row(0) && data.y() == again.y();

    let ok = mc_same && boot_same && data_same;
    verdict(
        12,
        "reproducibility",
        ok,
        &format!("study identical: {mc_same}, bootstrap identical: {boot_same}, redraw identical: {data_same}"),
    );
}

#[test]
fn spearman_conversion_spot_check() {
    // Anchor used throughout the shipped designs: Spearman 0.5 under the
    // Gaussian family is native rho 0.5176.
    let dep = copula::from_spearman(CopulaFamily::Gaussian, 0.5).unwrap();
    assert!((dep.rho() - 0.5176).abs() < 5e-4, "rho = {}", dep.rho());
}
