//! `estimate`: fit the requested models to a CSV file and report
//! coefficients, dependence, and the treatment effect with standard
//! errors.

use std::path::{Path, PathBuf};

use endoprobit::copula::CopulaFamily;
use endoprobit::inference::{self, BootstrapOptions, BootstrapResult, EfficientScoreFit};
use endoprobit::marginals::TransformG;
use endoprobit::{estimator, Dataset, FitOptions, FitResult, Marginal, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::report::{opt4, opt_interval, Jsonl};
use crate::Failure;

#[derive(clap::Args)]
pub struct EstimateArgs {
    /// CSV file with a header row; columns are selected by name.
    pub csv: PathBuf,

    /// JSON config file with the same options as the flags below; any
    /// flag given explicitly overrides the config entry.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Model to fit: "parametric" or "sieve". Repeat to fit several.
    #[arg(long = "model")]
    pub models: Vec<String>,

    /// Copula family: gaussian, frank, clayton, gumbel.
    #[arg(long)]
    pub copula: Option<String>,

    /// Sieve transform: normal, t3, logistic.
    #[arg(long)]
    pub g: Option<String>,

    /// Sieve polynomial degree, or "auto" for the sample-size rule.
    #[arg(long)]
    pub kn: Option<String>,

    /// Pin the first x coefficient in both equations to this value
    /// (location-scale normalization; required for sieve models).
    #[arg(long, allow_negative_numbers = true)]
    pub pin: Option<f64>,

    /// Bootstrap iterations for standard errors and percentile intervals.
    #[arg(long)]
    pub boot: Option<usize>,

    /// Random seed for multi-start jitter and the bootstrap.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Covariate point for the treatment effect, comma-separated
    /// (default: the column means).
    #[arg(long, allow_hyphen_values = true)]
    pub x_eval: Option<String>,

    /// Outcome column name.
    #[arg(long)]
    pub y_col: Option<String>,

    /// Treatment column name.
    #[arg(long)]
    pub d_col: Option<String>,

    /// Covariate column names, comma-separated (default: every column
    /// whose name starts with "x").
    #[arg(long)]
    pub x_cols: Option<String>,

    /// Instrument column names, comma-separated (default: every column
    /// whose name starts with "z").
    #[arg(long)]
    pub z_cols: Option<String>,

    /// Write machine-readable JSONL results here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// File-backed options; identical semantics to the flags.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EstimateConfig {
    models: Vec<String>,
    copula: Option<String>,
    g: Option<String>,
    kn: Option<String>,
    pin: Option<f64>,
    boot: Option<usize>,
    seed: Option<u64>,
    x_eval: Option<Vec<f64>>,
    y_col: Option<String>,
    d_col: Option<String>,
    x_cols: Option<Vec<String>>,
    z_cols: Option<Vec<String>>,
}

/// Fully resolved run description, embedded in every output.
#[derive(Debug, Serialize)]
struct ResolvedEstimate {
    csv: String,
    models: Vec<ModelSpec>,
    seed: u64,
    boot: Option<usize>,
    x_eval: Vec<f64>,
    y_col: String,
    d_col: String,
    x_cols: Vec<String>,
    z_cols: Vec<String>,
}

#[derive(Debug, Serialize)]
struct EstimateRecord<'a> {
    record: &'static str,
    model: String,
    converged: bool,
    iterations: usize,
    gradient_norm: f64,
    loglik: f64,
    n: usize,
    sieve_degree: Option<usize>,
    estimates: &'a [EstimateRow],
    warnings: &'a [String],
}

#[derive(Debug, Serialize)]
struct EstimateRow {
    name: String,
    value: f64,
    /// Asymptotic SE: efficient-score for coefficients, outer-product
    /// delta method for the treatment effect.
    se: Option<f64>,
    se_boot: Option<f64>,
    pci_lo: Option<f64>,
    pci_hi: Option<f64>,
}

pub fn run(args: EstimateArgs) -> Result<(), Failure> {
    let cfg: EstimateConfig = match &args.config {
        Some(path) => serde_json::from_reader(std::fs::File::open(path)?)?,
        None => EstimateConfig::default(),
    };
    let y_col = args.y_col.or(cfg.y_col).unwrap_or_else(|| "y".into());
    let d_col = args.d_col.or(cfg.d_col).unwrap_or_else(|| "d".into());
    let x_cols = args
        .x_cols
        .map(|s| split_names(&s))
        .or(cfg.x_cols);
    let z_cols = args
        .z_cols
        .map(|s| split_names(&s))
        .or(cfg.z_cols);
    let model_names = if args.models.is_empty() {
        if cfg.models.is_empty() {
            vec!["parametric".to_string()]
        } else {
            cfg.models.clone()
        }
    } else {
        args.models.clone()
    };
    let family: CopulaFamily = args
        .copula
        .or(cfg.copula)
        .unwrap_or_else(|| "gaussian".into())
        .parse()?;
    let g: TransformG = args.g.or(cfg.g).unwrap_or_else(|| "normal".into()).parse()?;
    let kn = parse_kn(args.kn.or(cfg.kn).as_deref())?;
    let pin = args.pin.or(cfg.pin);
    let boot = args.boot.or(cfg.boot);
    let seed = args.seed.or(cfg.seed).unwrap_or(0);

    let specs: Vec<ModelSpec> = model_names
        .iter()
        .map(|name| build_spec(name, family, g, kn, pin))
        .collect::<Result<_, _>>()?;

    let table = read_csv(&args.csv, &y_col, &d_col, x_cols, z_cols)?;
    let data = &table.data;
    let x_eval = match args.x_eval {
        Some(s) => split_floats(&s)?,
        None => match cfg.x_eval {
            Some(v) => v,
            None => table.x_means.clone(),
        },
    };
    if x_eval.len() != table.x_names.len() {
        return Err(Failure::Usage(format!(
            "--x-eval has {} entries but there are {} x columns",
            x_eval.len(),
            table.x_names.len()
        )));
    }

    let resolved = ResolvedEstimate {
        csv: args.csv.display().to_string(),
        models: specs.clone(),
        seed,
        boot,
        x_eval: x_eval.clone(),
        y_col,
        d_col,
        x_cols: table.x_names.clone(),
        z_cols: table.z_names.clone(),
    };
    let mut jsonl = match &args.out {
        Some(path) => Some(Jsonl::create(path, "estimate", &resolved)?),
        None => None,
    };

    println!(
        "n = {}, x columns: {}, z columns: {}",
        data.n(),
        table.x_names.join(", "),
        table.z_names.join(", ")
    );
    let opts = FitOptions {
        seed,
        ..FitOptions::default()
    };
    let mut all_converged = true;
    for spec in &specs {
        let fit = estimator::fit_weighted(data, spec, &opts, None)?;
        for w in &fit.warnings {
            eprintln!("warning: {w}");
        }
        all_converged &= fit.converged;

        // Asymptotic SEs can fail on their own (singular information)
        // without invalidating the point estimates; degrade to a warning.
        let score = match inference::efficient_score_variance(data, &fit) {
            Ok(s) => Some(s),
            Err(e) => {
                eprintln!("warning: no efficient-score standard errors: {e}");
                None
            }
        };
        let ate = fit.ate(&x_eval)?;
        let ate_se = inference::ate_variance(data, &fit, &x_eval)
            .ok()
            .map(f64::sqrt);
        let boot_result = match boot {
            Some(b) => Some(inference::weighted_bootstrap(
                data,
                &fit,
                &BootstrapOptions {
                    b,
                    seed,
                    x_eval: Some(x_eval.clone()),
                    ..BootstrapOptions::default()
                },
            )?),
            None => None,
        };

        let rows = estimate_rows(&fit, score.as_ref(), boot_result.as_ref(), ate, ate_se);
        print_block(&fit, &rows, &x_eval);
        if let Some(writer) = jsonl.as_mut() {
            writer.record(&EstimateRecord {
                record: "fit",
                model: fit.spec.label(),
                converged: fit.converged,
                iterations: fit.iterations,
                gradient_norm: fit.gradient_norm,
                loglik: fit.loglik_value,
                n: data.n(),
                sieve_degree: sieve_degree(&fit),
                estimates: &rows,
                warnings: &fit.warnings,
            })?;
        }
    }
    if let Some(writer) = jsonl {
        writer.finish()?;
    }
    if !all_converged {
        return Err(Failure::Numeric(
            "at least one model did not reach the gradient tolerance".into(),
        ));
    }
    Ok(())
}

fn split_names(s: &str) -> Vec<String> {
    s.split(',')
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

fn split_floats(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("cannot parse '{p}' as a number")))
        })
        .collect()
}

fn parse_kn(s: Option<&str>) -> Result<Option<usize>, Failure> {
    match s {
        None | Some("auto") => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("--kn takes an integer or \"auto\", got '{v}'"))),
    }
}

fn build_spec(
    name: &str,
    family: CopulaFamily,
    g: TransformG,
    kn: Option<usize>,
    pin: Option<f64>,
) -> Result<ModelSpec, Failure> {
    match name {
        "parametric" => Ok(match pin {
            Some(p) => ModelSpec::parametric_pinned(family, p),
            None => ModelSpec::parametric(family),
        }),
        "sieve" => {
            let p = pin.ok_or_else(|| {
                Failure::Usage(
                    "sieve models need --pin <value> to fix the first x coefficient".into(),
                )
            })?;
            Ok(ModelSpec::sieve(family, g, kn, p))
        }
        other => Err(Failure::Usage(format!(
            "unknown model '{other}'; expected parametric or sieve"
        ))),
    }
}

struct Table {
    data: Dataset,
    x_names: Vec<String>,
    z_names: Vec<String>,
    x_means: Vec<f64>,
}

fn read_csv(
    path: &Path,
    y_col: &str,
    d_col: &str,
    x_cols: Option<Vec<String>>,
    z_cols: Option<Vec<String>>,
) -> Result<Table, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| -> Result<usize, Failure> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Failure::Usage(format!(
                "column '{name}' not found in the header of {}",
                path.display()
            ))
        })
    };
    let named = |given: Option<Vec<String>>, prefix: &str| -> Result<Vec<String>, Failure> {
        match given {
            Some(names) => Ok(names),
            None => {
                let auto: Vec<String> = headers
                    .iter()
                    .filter(|h| {
                        h.to_ascii_lowercase().starts_with(prefix)
                            && h.as_str() != y_col
                            && h.as_str() != d_col
                    })
                    .cloned()
                    .collect();
                if auto.is_empty() {
                    return Err(Failure::Usage(format!(
                        "no columns starting with '{prefix}' in the header; name them with a flag"
                    )));
                }
                Ok(auto)
            }
        }
    };

    let y_idx = find(y_col)?;
    let d_idx = find(d_col)?;
    let x_names = named(x_cols, "x")?;
    let z_names = named(z_cols, "z")?;
    let x_idx: Vec<usize> = x_names.iter().map(|n| find(n)).collect::<Result<_, _>>()?;
    let z_idx: Vec<usize> = z_names.iter().map(|n| find(n)).collect::<Result<_, _>>()?;

    let parse_binary = |field: &str, row: usize, col: &str| -> Result<bool, Failure> {
        match field {
            "0" | "false" => Ok(false),
            "1" | "true" => Ok(true),
            other => Err(Failure::Usage(format!(
                "row {row}: column '{col}' must be 0/1, got '{other}'"
            ))),
        }
    };
    let parse_num = |field: &str, row: usize, col: &str| -> Result<f64, Failure> {
        field.parse().map_err(|_| {
            Failure::Usage(format!(
                "row {row}: column '{col}' is not a number: '{field}'"
            ))
        })
    };

    let (mut y, mut d) = (Vec::new(), Vec::new());
    let (mut xs, mut zs) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2; // header is line 1
        y.push(parse_binary(&record[y_idx], row, y_col)?);
        d.push(parse_binary(&record[d_idx], row, d_col)?);
        for (&idx, name) in x_idx.iter().zip(&x_names) {
            xs.push(parse_num(&record[idx], row, name)?);
        }
        for (&idx, name) in z_idx.iter().zip(&z_names) {
            zs.push(parse_num(&record[idx], row, name)?);
        }
    }
    let p = x_names.len();
    let n = y.len();
    let mut x_means = vec![0.0; p];
    for row in xs.chunks_exact(p) {
        for (m, v) in x_means.iter_mut().zip(row) {
            *m += v;
        }
    }
    if n > 0 {
        x_means.iter_mut().for_each(|m| *m /= n as f64);
    }
    let data = Dataset::new(y, d, xs, p, zs, z_names.len())?;
    Ok(Table {
        data,
        x_names,
        z_names,
        x_means,
    })
}

fn sieve_degree(fit: &FitResult) -> Option<usize> {
    match &fit.spec.marginals {
        endoprobit::MarginalModel::Sieve { k, .. } => *k,
        endoprobit::MarginalModel::Parametric { .. } => None,
    }
}

/// Natural-scale value of one named free coordinate.
fn value_of(fit: &FitResult, name: &str) -> Option<f64> {
    let coef = |vec: &[f64], rest: &str| -> Option<f64> {
        vec.get(rest.trim_end_matches(']').parse::<usize>().ok()?)
            .copied()
    };
    let sieve_coef = |m: &Marginal, rest: &str| -> Option<f64> {
        let i = rest.trim_end_matches(']').parse::<usize>().ok()?;
        match m {
            Marginal::Sieve(s) => s.free_coefs().get(i.checked_sub(1)?).copied(),
            _ => None,
        }
    };
    if let Some(rest) = name.strip_prefix("alpha[") {
        coef(&fit.theta_hat.alpha, rest)
    } else if let Some(rest) = name.strip_prefix("gamma[") {
        coef(&fit.theta_hat.gamma, rest)
    } else if let Some(rest) = name.strip_prefix("beta[") {
        coef(&fit.theta_hat.beta, rest)
    } else if let Some(rest) = name.strip_prefix("a_eps[") {
        sieve_coef(&fit.f_eps, rest)
    } else if let Some(rest) = name.strip_prefix("a_nu[") {
        sieve_coef(&fit.f_nu, rest)
    } else {
        match name {
            "delta1" => Some(fit.theta_hat.delta1),
            "rho" => Some(fit.theta_hat.dep.rho()),
            _ => None,
        }
    }
}

fn estimate_rows(
    fit: &FitResult,
    score: Option<&EfficientScoreFit>,
    boot: Option<&BootstrapResult>,
    ate: f64,
    ate_se: Option<f64>,
) -> Vec<EstimateRow> {
    let boot_parts = |name: &str| -> (Option<f64>, Option<f64>, Option<f64>) {
        match boot.and_then(|b| b.target_index(name)) {
            Some(i) => {
                let b = boot.unwrap();
                let (lo, hi) = b.pci[0].1[i];
                (Some(b.se[i]), Some(lo), Some(hi))
            }
            None => (None, None, None),
        }
    };
    let mut rows: Vec<EstimateRow> = fit
        .free_names()
        .iter()
        .map(|name| {
            let (se_boot, pci_lo, pci_hi) = boot_parts(name);
            EstimateRow {
                name: name.clone(),
                value: value_of(fit, name).unwrap_or(f64::NAN),
                se: score.and_then(|s| s.se_for(name)),
                se_boot,
                pci_lo,
                pci_hi,
            }
        })
        .collect();
    for (name, value, se) in [
        ("rho_sp", fit.rho_sp(), None),
        ("ate", ate, ate_se),
    ] {
        let (se_boot, pci_lo, pci_hi) = boot_parts(name);
        rows.push(EstimateRow {
            name: name.into(),
            value,
            se,
            se_boot,
            pci_lo,
            pci_hi,
        });
    }
    rows
}

fn print_block(fit: &FitResult, rows: &[EstimateRow], x_eval: &[f64]) {
    println!();
    println!("== {} ==", fit.spec.label());
    println!(
        "converged: {} ({} iterations, gradient sup-norm {:.1e}, {} start points)",
        if fit.converged { "yes" } else { "NO" },
        fit.iterations,
        fit.gradient_norm,
        fit.start_points_used,
    );
    println!("mean log-likelihood: {:.6}", fit.loglik_value);
    let x_str = x_eval
        .iter()
        .map(|v| format!("{v:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    println!("treatment effect evaluated at x = [{x_str}]");
    println!(
        "{:<10} {:>10} {:>10} {:>10} {:>20}",
        "name", "estimate", "se", "se(boot)", "95% PCI"
    );
    for row in rows {
        println!(
            "{:<10} {:>10.4} {} {} {}",
            row.name,
            row.value,
            opt4(row.se),
            opt4(row.se_boot),
            opt_interval(row.pci_lo.zip(row.pci_hi)),
        );
    }
}
