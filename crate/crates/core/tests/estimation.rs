//! Statistical behavior of the full pipeline on simulated data: the
//! optimizer beats the truth in-sample, estimates concentrate on the
//! truth as n grows, and the reported standard errors calibrate against
//! the Monte Carlo spread.

use endoprobit::inference::{self, BootstrapOptions};
use endoprobit::likelihood::loglik;
use endoprobit::marginals::ParametricMarginal;
use endoprobit::simulation::{preset, simulate_dataset};
use endoprobit::{estimator, FitOptions, Marginal, ModelSpec, Theta};

/// The shipped Gaussian design: gamma 0.8, delta1 1.1, Spearman 0.5
/// (native rho 0.5176), treatment effect 0.3643 at x = 0.
fn truths() -> [(&'static str, f64); 4] {
    [
        ("gamma", 0.8),
        ("delta1", 1.1),
        ("rho", 0.5176),
        ("ate", 0.3643),
    ]
}

#[test]
fn fitted_likelihood_dominates_the_truth_in_sample() {
    let scenario = preset("table1-gaussian").unwrap();
    let data = simulate_dataset(&scenario, 11).unwrap();
    let spec = &scenario.models[0];
    let fit = estimator::fit_weighted(&data, spec, &FitOptions::default(), None).unwrap();

    let normal = Marginal::from(ParametricMarginal::standard_normal());
    let truth = Theta {
        alpha: scenario.dgp.alpha.clone(),
        gamma: scenario.dgp.gamma.clone(),
        beta: scenario.dgp.beta.clone(),
        delta1: scenario.dgp.delta1,
        dep: scenario.dgp.dependence().unwrap(),
    };
    let ll_truth = loglik(&data, &truth, &normal, &normal).unwrap();
    assert!(
        fit.loglik_value >= ll_truth - 1e-10,
        "optimizer returned {} but the truth scores {}",
        fit.loglik_value,
        ll_truth
    );
}

#[test]
fn parametric_estimates_concentrate_at_large_n() {
    let mut scenario = preset("table1-gaussian").unwrap();
    scenario.n = 6000;
    let data = simulate_dataset(&scenario, 3).unwrap();
    let fit =
        estimator::fit_weighted(&data, &scenario.models[0], &FitOptions::default(), None).unwrap();
    assert!(fit.converged);

    let got = [
        fit.theta_hat.gamma[0],
        fit.theta_hat.delta1,
        fit.theta_hat.dep.rho(),
        fit.ate(&[0.0]).unwrap(),
    ];
    // Bounds are ~3 asymptotic SDs at n = 6000 for this design.
    let tol = [0.07, 0.16, 0.10, 0.04];
    for (((name, truth), value), tol) in truths().iter().zip(got).zip(tol) {
        assert!(
            (value - truth).abs() < tol,
            "{name}: {value:.4} vs {truth} (tol {tol})"
        );
    }
}

#[test]
fn efficient_score_se_calibrates_against_monte_carlo_spread() {
    let mut scenario = preset("table1-gaussian").unwrap();
    scenario.n = 400;
    let spec = scenario.models[0].clone();
    let opts = FitOptions {
        starts: 2,
        ..FitOptions::default()
    };

    let mut gammas = Vec::new();
    let mut reported = Vec::new();
    for rep in 0..50 {
        let data = simulate_dataset(&scenario, rep).unwrap();
        let fit = estimator::fit_weighted(&data, &spec, &opts, None).unwrap();
        let score = inference::efficient_score_variance(&data, &fit).unwrap();
        gammas.push(fit.theta_hat.gamma[0]);
        reported.push(score.se_for("gamma[0]").unwrap());
    }
    let mean = gammas.iter().sum::<f64>() / gammas.len() as f64;
    let sd = (gammas.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gammas.len() as f64).sqrt();
    let mean_se = reported.iter().sum::<f64>() / reported.len() as f64;
    let ratio = mean_se / sd;
    assert!(
        (0.65..1.5).contains(&ratio),
        "mean reported SE {mean_se:.4} vs Monte Carlo SD {sd:.4} (ratio {ratio:.2})"
    );
}

#[test]
fn bootstrap_se_agrees_with_asymptotic_se() {
    let mut scenario = preset("table1-gaussian").unwrap();
    scenario.n = 800;
    let data = simulate_dataset(&scenario, 5).unwrap();
    let spec = scenario.models[0].clone();
    let fit = estimator::fit_weighted(&data, &spec, &FitOptions::default(), None).unwrap();

    let score = inference::efficient_score_variance(&data, &fit).unwrap();
    let boot = inference::weighted_bootstrap(
        &data,
        &fit,
        &BootstrapOptions {
            b: 150,
            seed: 42,
            x_eval: Some(vec![0.0]),
            ..BootstrapOptions::default()
        },
    )
    .unwrap();

    for name in ["gamma[0]", "delta1"] {
        let asymptotic = score.se_for(name).unwrap();
        let bootstrap = boot.se[boot.target_index(name).unwrap()];
        let ratio = bootstrap / asymptotic;
        assert!(
            (0.6..1.6).contains(&ratio),
            "{name}: bootstrap SE {bootstrap:.4} vs asymptotic {asymptotic:.4}"
        );
    }
}

#[test]
fn degree_zero_sieve_reproduces_the_parametric_fit() {
    let scenario = preset("table1-gaussian").unwrap();
    let data = simulate_dataset(&scenario, 7).unwrap();
    let opts = FitOptions::default();

    let parametric = estimator::fit_weighted(
        &data,
        &ModelSpec::parametric_pinned(endoprobit::CopulaFamily::Gaussian, -1.0),
        &opts,
        None,
    )
    .unwrap();
    let sieve0 = estimator::fit_weighted(
        &data,
        &ModelSpec::sieve(
            endoprobit::CopulaFamily::Gaussian,
            endoprobit::TransformG::Phi,
            Some(0),
            -1.0,
        ),
        &opts,
        None,
    )
    .unwrap();
    // With no free sieve coefficients the marginals are exactly standard
    // normal, so the two likelihoods share their optimum.
    assert!(
        (parametric.loglik_value - sieve0.loglik_value).abs() < 1e-8,
        "parametric {} vs degree-zero sieve {}",
        parametric.loglik_value,
        sieve0.loglik_value
    );
    assert!((parametric.theta_hat.gamma[0] - sieve0.theta_hat.gamma[0]).abs() < 1e-4);
}
