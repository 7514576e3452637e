//! Command-line surface for the spectral kernel engine.

mod bench;
mod util;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ske::engine::{
    evaluate_alpha_derivative, evaluate_kernel, evaluate_kernel_derivative, normalize_amplitude,
    EvaluationRequest,
};
use ske::gp::{
    assemble_covariance, fit_fisher_scoring_with, min_eigenvalue, sample_path, CholeskyFactor,
    Dataset,
};
use ske::models::SpectralModel;
use ske::oracles;
use ske::truncation;

use util::{fmt17, read_column, write_text};

#[derive(Parser)]
#[command(name = "ske", version, about = "Covariance functions from spectral densities")]
struct Cli {
    /// Cap global parallelism at this many threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed for any randomized subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output format where a choice exists.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Emit quadrature nodes and weights.
    Nodes {
        #[arg(long, value_enum)]
        kind: RuleKindArg,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
    },
    /// Evaluate the covariance function at distances from a file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "r-file")]
        r_file: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 65536)]
        m: usize,
        /// Dump per-panel records (a, b, splits, active) to this CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate a parameter derivative of the covariance function.
    Deriv {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long = "r-file")]
        r_file: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 65536)]
        m: usize,
    },
    /// Assemble the dense covariance matrix on a grid.
    Cov {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "x-file")]
        x_file: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 0.0)]
        nugget: f64,
        /// Print the smallest eigenvalue instead of the matrix.
        #[arg(long)]
        diag_check: bool,
    },
    /// Fit model parameters by Fisher scoring.
    Fit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 0.0)]
        nugget: f64,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
        #[arg(long, default_value_t = 4096)]
        m: usize,
    },
    /// Draw a sample path on a grid.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "x-file")]
        x_file: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 0.0)]
        nugget: f64,
    },
    /// Cross-validate the engine against an independent oracle.
    Validate {
        #[arg(long, value_enum)]
        case: ValidateCase,
        /// Comma-separated key=value model parameters, e.g. "rho=2,nu=2.1,alpha=0.3".
        #[arg(long, default_value = "")]
        params: String,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Print the analytic tail truncation bound (and optionally the exact value).
    Truncation {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        b: f64,
        #[arg(long)]
        r: f64,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long)]
        exact: bool,
    },
    /// Time adaptive+NUFFT, adaptive+direct, and trapezoid+NUFFT kernel paths.
    Bench {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated distance counts.
        #[arg(long, default_value = "1000,10000")]
        n_grid: String,
        /// Comma-separated tolerances.
        #[arg(long, default_value = "1e-8")]
        eps_grid: String,
        /// Comma-separated methods: adaptive+nufft, adaptive+direct, trapezoid+nufft.
        #[arg(long, default_value = "adaptive+nufft,adaptive+direct,trapezoid+nufft")]
        methods: String,
        #[arg(long, default_value_t = 65536)]
        m: usize,
        /// Trapezoid node-count guard (recorded as infeasible past this).
        #[arg(long, default_value_t = 1 << 27)]
        trapezoid_cap: usize,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum RuleKindArg {
    Legendre,
    Jacobi,
    Trapezoid,
}

#[derive(Copy, Clone, ValueEnum)]
enum ValidateCase {
    Matern,
    Singular,
    ExpDecay,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("SKE_LOG")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .expect("thread pool configured before first use");
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_model(path: &PathBuf) -> Result<SpectralModel> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading model config {}", path.display()))?;
    let (model, normalize) = ske::models::model_from_json(&text)?;
    Ok(if normalize {
        normalize_amplitude(&model)?
    } else {
        model
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Nodes { kind, m, a, b, alpha } => {
            let rule = match kind {
                RuleKindArg::Legendre => ske::quadrature::gauss_legendre(m, a, b)?,
                RuleKindArg::Jacobi => ske::quadrature::gauss_jacobi_power(m, b, alpha)?,
                RuleKindArg::Trapezoid => ske::quadrature::trapezoid(m, a, b)?,
            };
            let mut out = String::from("node,weight\n");
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                out.push_str(&format!("{},{}\n", fmt17(*x), fmt17(*w)));
            }
            write_text(&cli.out, &out)
        }
        Command::Eval {
            model,
            r_file,
            tol,
            m,
            trace,
        } => {
            let model = load_model(&model)?;
            let distances = read_column(&r_file)?;
            let req =
                EvaluationRequest::new(model, distances, tol).with_nodes_per_panel(m);
            let result = evaluate_kernel(&req)?;
            if let Some(tpath) = trace {
                let mut t = String::from("a,b,splits,active\n");
                for p in &result.panels {
                    t.push_str(&format!("{},{},{},{}\n", fmt17(p.a), fmt17(p.b), p.splits, p.active));
                }
                std::fs::write(&tpath, t)?;
            }
            let mut out = String::from("r,K,estimate\n");
            for i in 0..result.distances.len() {
                out.push_str(&format!(
                    "{},{},{}\n",
                    fmt17(result.distances[i]),
                    fmt17(result.values[i]),
                    fmt17(result.estimates[i])
                ));
            }
            write_text(&cli.out, &out)
        }
        Command::Deriv {
            model,
            param,
            r_file,
            tol,
            m,
        } => {
            let model = load_model(&model)?;
            let names = model.param_names();
            let idx = names
                .iter()
                .position(|n| *n == param)
                .with_context(|| format!("model has no parameter '{param}' (has {names:?})"))?;
            let distances = read_column(&r_file)?;
            let req =
                EvaluationRequest::new(model.clone(), distances, tol).with_nodes_per_panel(m);
            let result = if Some(idx) == model.alpha_index() {
                evaluate_alpha_derivative(&req)?
            } else {
                evaluate_kernel_derivative(&req, idx)?
            };
            let mut out = String::from("r,K,estimate\n");
            for i in 0..result.distances.len() {
                out.push_str(&format!(
                    "{},{},{}\n",
                    fmt17(result.distances[i]),
                    fmt17(result.values[i]),
                    fmt17(result.estimates[i])
                ));
            }
            write_text(&cli.out, &out)
        }
        Command::Cov {
            model,
            x_file,
            tol,
            nugget,
            diag_check,
        } => {
            let model = load_model(&model)?;
            let x = read_column(&x_file)?;
            let sigma = assemble_covariance(&model, &x, tol, nugget)?;
            if diag_check {
                let lambda_min = min_eigenvalue(&sigma);
                let line = format!("min_eigenvalue,{}\n", fmt17(lambda_min));
                write_text(&cli.out, &line)?;
                if lambda_min <= 0.0 {
                    bail!("covariance matrix is not positive definite");
                }
                return Ok(());
            }
            let n = sigma.nrows();
            let mut out = String::new();
            for i in 0..n {
                let row: Vec<String> = (0..n).map(|j| fmt17(sigma[(i, j)])).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            write_text(&cli.out, &out)
        }
        Command::Fit {
            model,
            data,
            tol,
            nugget,
            max_iters,
            m,
        } => {
            let model = load_model(&model)?;
            let (x, y) = util::read_xy(&data)?;
            let dataset = Dataset::new(x, y, nugget)?;
            let report = fit_fisher_scoring_with(&model, &dataset, tol, max_iters, m)?;
            let json = util::fit_report_json(&report);
            write_text(&cli.out, &serde_json::to_string_pretty(&json)?)?;
            if report.hit_iteration_cap {
                eprintln!("warning: iteration cap reached; reporting best-so-far");
            }
            Ok(())
        }
        Command::Sample {
            model,
            x_file,
            tol,
            nugget,
        } => {
            let model = load_model(&model)?;
            let x = read_column(&x_file)?;
            let sigma = assemble_covariance(&model, &x, tol, nugget)?;
            let chol = CholeskyFactor::new(&sigma)?;
            let y = sample_path(&chol, cli.seed);
            let mut out = String::from("x,y\n");
            for (xi, yi) in x.iter().zip(&y) {
                out.push_str(&format!("{},{}\n", fmt17(*xi), fmt17(*yi)));
            }
            write_text(&cli.out, &out)
        }
        Command::Validate { case, params, tol } => {
            let report = run_validation(case, &params, tol)?;
            write_text(&cli.out, &serde_json::to_string_pretty(&report)?)?;
            let pass = report["pass"].as_bool().unwrap_or(false);
            if !pass {
                bail!("validation failed");
            }
            Ok(())
        }
        Command::Truncation { beta, b, r, c, exact } => {
            let bound = truncation::truncation_bound(c, beta, b, r)?;
            let branch = match truncation::bound_branch(beta, b, r) {
                truncation::BoundBranch::SmallBr => "small-br",
                truncation::BoundBranch::LargeBr => "large-br",
            };
            let mut obj = serde_json::json!({
                "c": c, "beta": beta, "b": b, "r": r,
                "bound": bound,
                "branch": branch,
            });
            if exact {
                match truncation::exact_truncation_error(c, beta, b, r) {
                    Ok(v) => {
                        obj["exact"] = serde_json::json!(v);
                    }
                    Err(e) => {
                        obj["exact_unavailable"] = serde_json::json!(e.to_string());
                    }
                }
            }
            write_text(&cli.out, &serde_json::to_string_pretty(&obj)?)
        }
        Command::Bench {
            model,
            n_grid,
            eps_grid,
            methods,
            m,
            trapezoid_cap,
        } => {
            let model = match model {
                Some(p) => load_model(&p)?,
                None => {
                    // The timing study's default: singular Matern with
                    // nu = 0.55, alpha = 0.5, K(0) = 1.
                    normalize_amplitude(&SpectralModel::singular_matern(1.0, 1.0, 0.55, 0.5)?)?
                }
            };
            let ns: Vec<usize> = n_grid
                .split(',')
                .map(|s| s.trim().parse().context("parsing --n-grid"))
                .collect::<Result<_>>()?;
            let eps: Vec<f64> = eps_grid
                .split(',')
                .map(|s| s.trim().parse().context("parsing --eps-grid"))
                .collect::<Result<_>>()?;
            let methods: Vec<bench::Method> = methods
                .split(',')
                .map(bench::Method::parse)
                .collect::<Result<_>>()?;
            if methods.is_empty() {
                bail!("--methods must be nonempty");
            }
            let records = bench::run_benchmark(
                &model,
                &ns,
                &eps,
                &methods,
                m,
                trapezoid_cap,
                cli.seed,
            )?;
            let all_pass = records.iter().all(|r| r.audit_pass || r.note.is_some());
            match cli.format {
                Format::Csv => {
                    let mut out =
                        String::from("method,n,eps,seconds,total_nodes,audit_pass,note\n");
                    for r in &records {
                        out.push_str(&format!(
                            "{},{},{},{},{},{},{}\n",
                            r.method,
                            r.n,
                            fmt17(r.eps),
                            fmt17(r.seconds),
                            r.total_nodes,
                            r.audit_pass,
                            r.note.clone().unwrap_or_default()
                        ));
                    }
                    write_text(&cli.out, &out)?;
                }
                Format::Json => {
                    write_text(&cli.out, &serde_json::to_string_pretty(&records)?)?;
                }
            }
            if !all_pass {
                bail!("one or more benchmark audits failed");
            }
            Ok(())
        }
    }
}

fn parse_kv(params: &str) -> std::collections::HashMap<String, f64> {
    params
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .filter_map(|pair| {
            let (k, v) = pair.split_once('=')?;
            Some((k.trim().to_string(), v.trim().parse().ok()?))
        })
        .collect()
}

fn run_validation(case: ValidateCase, params: &str, tol: f64) -> Result<serde_json::Value> {
    let kv = parse_kv(params);
    let get = |k: &str, d: f64| kv.get(k).copied().unwrap_or(d);
    let mut rows = Vec::new();
    let mut max_diff = 0.0f64;
    let (label, pass_tol): (&str, f64);

    match case {
        ValidateCase::Matern => {
            label = "matern";
            pass_tol = tol.max(1e-11);
            let (phi, rho, nu) = (get("phi", 1.0), get("rho", 1.0), get("nu", 0.51));
            let model = normalize_amplitude(&SpectralModel::matern(phi, rho, nu)?)?;
            let phi_n = model.params()[0];
            let rs: Vec<f64> = (0..20).map(|i| 0.02 + 0.98 * i as f64 / 19.0).collect();
            let req = EvaluationRequest::new(model, rs.clone(), tol).with_nodes_per_panel(1024);
            let engine = evaluate_kernel(&req)?;
            for (i, &r) in rs.iter().enumerate() {
                let oracle = oracles::matern_kernel_closed_form(r, phi_n, rho, nu)?;
                let diff = (engine.values[i] - oracle).abs();
                max_diff = max_diff.max(diff);
                rows.push(serde_json::json!({
                    "r": r, "engine": engine.values[i], "oracle": oracle, "diff": diff
                }));
            }
        }
        ValidateCase::Singular => {
            label = "singular";
            pass_tol = tol.max(1e-8);
            let (rho, nu, alpha) = (get("rho", 2.0), get("nu", 2.1), get("alpha", 0.3));
            let model = normalize_amplitude(&SpectralModel::singular_matern(1.0, rho, nu, alpha)?)?;
            let phi_n = model.params()[0];
            let rs: Vec<f64> = (0..20).map(|i| 0.01 + 0.99 * i as f64 / 19.0).collect();
            let req = EvaluationRequest::new(model, rs.clone(), tol).with_nodes_per_panel(1024);
            let engine = evaluate_kernel(&req)?;
            for (i, &r) in rs.iter().enumerate() {
                let oracle = oracles::singular_matern_1f2(
                    r,
                    phi_n,
                    rho,
                    nu,
                    alpha,
                    oracles::Precision::Bits(3072),
                )?;
                let diff = (engine.values[i] - oracle).abs();
                max_diff = max_diff.max(diff);
                rows.push(serde_json::json!({
                    "r": r, "engine": engine.values[i], "oracle": oracle, "diff": diff
                }));
            }
        }
        ValidateCase::ExpDecay => {
            label = "exp-decay";
            pass_tol = tol.max(1e-9);
            let alpha = get("alpha", 0.3);
            let model = SpectralModel::exponential_test(get("phi", 1.0), alpha)?;
            let phi = model.params()[0];
            let rs: Vec<f64> = (0..20).map(|i| 10f64.powf(-1.0 + 5.0 * i as f64 / 19.0)).collect();
            let req = EvaluationRequest::new(model, rs.clone(), tol).with_nodes_per_panel(512);
            let engine = evaluate_kernel(&req)?;
            for (i, &r) in rs.iter().enumerate() {
                let oracle = phi * phi * oracles::exp_sdf_alpha_kernel(r, alpha)?;
                let diff = (engine.values[i] - oracle).abs();
                max_diff = max_diff.max(diff);
                rows.push(serde_json::json!({
                    "r": r, "engine": engine.values[i], "oracle": oracle, "diff": diff
                }));
            }
        }
    }
    let pass = max_diff <= pass_tol;
    Ok(serde_json::json!({
        "case": label,
        "max_abs_diff": max_diff,
        "tolerance": pass_tol,
        "pass": pass,
        "rows": rows,
    }))
}
