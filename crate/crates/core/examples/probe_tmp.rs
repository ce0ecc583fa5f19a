use endoprobit::marginals::{calibrate_raw_mixture, TransformG};
use endoprobit::simulation::{preset, run_monte_carlo, simulate_dataset};
use endoprobit::{estimator, CopulaFamily, FitOptions, ModelSpec};

fn main() {
    let (m, sigma) = calibrate_raw_mixture(&[0.6, 0.4], &[-1.0, 1.5], 0.1066, 1.1).unwrap();
    println!(
        "raw mixture: sigma {:.4} ate {:.4} F(0) {:.4} F(1.1) {:.4}",
        sigma,
        m.cdf(1.1) - m.cdf(0.0),
        m.cdf(0.0),
        m.cdf(1.1)
    );

    // Landscape at large n: staged sieve fits.
    let mut sc = preset("table2-gaussian").unwrap();
    sc.n = 4000;
    let data = simulate_dataset(&sc, 0).unwrap();
    for k in 1..=4usize {
        let spec = ModelSpec::sieve(CopulaFamily::Gaussian, TransformG::Phi, Some(k), -1.0);
        let opts = FitOptions {
            starts: 5,
            max_iter: 2000,
            ..FitOptions::default()
        };
        let fit = estimator::fit_weighted(&data, &spec, &opts, None).unwrap();
        println!(
            "n=4000 k={k}: ll {:.5} ate {:.4} delta1 {:.3} rho {:.3} gamma {:.3} F(0) {:.3} F(1.1) {:.3} conv {} it {}",
            fit.loglik_value,
            fit.ate(&[0.0]).unwrap(),
            fit.theta_hat.delta1,
            fit.theta_hat.dep.rho(),
            fit.theta_hat.gamma[0],
            fit.f_eps.cdf(0.0),
            fit.f_eps.cdf(1.1),
            fit.converged,
            fit.iterations,
        );
    }

    // Desk-scale MC: 50 reps at n=500 with the default model pair.
    sc = preset("table2-gaussian").unwrap();
    sc.replications = 50;
    let t0 = std::time::Instant::now();
    let summary = run_monte_carlo(&sc).unwrap();
    println!("mc elapsed {:.1}s", t0.elapsed().as_secs_f64());
    for m in &summary.models {
        println!(
            "model {} used {} converged {} failed {}",
            m.label, m.used, m.converged, m.failures
        );
        for t in &m.targets {
            println!(
                "  {:<8} truth {:+.4} mean {:+.4} bias {:+.4} sd {:.4} rmse {:.4}",
                t.target, t.truth, t.mean, t.bias, t.sd, t.rmse
            );
        }
    }
}
