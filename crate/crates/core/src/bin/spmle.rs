use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::{json, Value};

use censored_spmle::data::ingest_csv;
use censored_spmle::elratio::{ci_w0, estimate_c0};
use censored_spmle::gof::{bootstrap_applicable, bootstrap_pvalue_with_fit, curves, t_statistic};
use censored_spmle::npmle::npmle;
use censored_spmle::sim::{run_experiment, write_records_csv, ExperimentConfig};
use censored_spmle::spmle::{fit_two_sample, SolveOptions, SpmleOptions, TwoSampleFit};
use censored_spmle::{BiasModel, Error, NpmleOptions, SampleScheme, TwoSampleData};

#[derive(Parser)]
#[command(name = "spmle", version, about = "Semiparametric two-sample estimation with censored data")]
struct Cli {
    /// Worker threads for bootstrap and Monte Carlo loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Record wall-clock time in the report. Reports are then no longer
    /// byte-identical across runs.
    #[arg(long, global = true)]
    timing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Nonparametric MLE of one censored sample.
    Npmle(NpmleArgs),
    /// Semiparametric fit of the two-sample model.
    Fit(FitArgs),
    /// Likelihood-ratio confidence interval for the weight mean w0 = 1/θ0.
    Ci(CiArgs),
    /// Bootstrap goodness-of-fit test.
    Gof(GofArgs),
    /// Monte Carlo experiment from a TOML configuration.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct Numerics {
    /// Convergence tolerance for the NPMLE and the estimating equations.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = 10_000)]
    max_iter: usize,
}

impl Numerics {
    fn options(&self) -> SpmleOptions {
        SpmleOptions {
            npmle: NpmleOptions {
                tol: self.tol,
                max_iter: self.max_iter,
            },
            solve: SolveOptions {
                tol: self.tol,
                max_iter: self.max_iter,
                ..SolveOptions::default()
            },
        }
    }

    fn json(&self) -> Value {
        json!({ "tol": self.tol, "max_iter": self.max_iter })
    }
}

#[derive(Args)]
struct NpmleArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long = "scheme-x")]
    scheme_x: SampleScheme,
    #[command(flatten)]
    numerics: Numerics,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TwoSampleArgs {
    /// Observations from F0, one row per subject.
    #[arg(long)]
    x: PathBuf,
    #[arg(long = "scheme-x")]
    scheme_x: SampleScheme,
    /// Observations from G0.
    #[arg(long)]
    y: PathBuf,
    #[arg(long = "scheme-y")]
    scheme_y: SampleScheme,
    /// `logistic` or `biased:w=identity|const|table:<file>`.
    #[arg(long)]
    model: BiasModel,
    #[command(flatten)]
    numerics: Numerics,
}

impl TwoSampleArgs {
    fn load(&self) -> Result<TwoSampleData, Error> {
        let x = ingest_csv(&self.x, self.scheme_x)?;
        let y = ingest_csv(&self.y, self.scheme_y)?;
        TwoSampleData::new(x, self.scheme_x, y, self.scheme_y)
    }

    fn json(&self) -> Value {
        json!({
            "x": self.x,
            "scheme_x": self.scheme_x.tag(),
            "y": self.y,
            "scheme_y": self.scheme_y.tag(),
            "model": self.model.spec_string(),
            "numerics": self.numerics.json(),
        })
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: TwoSampleArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CiArgs {
    #[command(flatten)]
    input: TwoSampleArgs,
    /// Bootstrap replicates for the scale c0.
    #[arg(long = "B", default_value_t = 999)]
    b: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GofArgs {
    #[command(flatten)]
    input: TwoSampleArgs,
    #[arg(long = "B", default_value_t = 999)]
    b: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Per-replicate results as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn diagnostics(fit: &TwoSampleFit) -> Value {
    json!({
        "npmle_x": { "iterations": fit.fhat.iterations, "converged": fit.fhat.converged },
        "npmle_y": { "iterations": fit.ghat.iterations, "converged": fit.ghat.converged },
        "spmle": {
            "iterations": fit.fit.iterations,
            "converged": fit.fit.converged,
            "g_norm": fit.fit.g_norm,
        },
    })
}

fn fit_json(fit: &TwoSampleFit) -> Value {
    json!({
        "theta": fit.fit.theta,
        "rn_value": fit.fit.rn_value,
        "iterations": fit.fit.iterations,
        "converged": fit.fit.converged,
        "lambda_check": fit.fit.lambda_check,
        "sigma1_hat": fit.fit.sigma1_hat,
        "f_tilde": fit.fit.f_tilde,
        "fhat": fit.fhat.distribution,
        "ghat": fit.ghat.distribution,
    })
}

struct Report {
    command: &'static str,
    config: Value,
    seed: Option<u64>,
    result: Value,
    diagnostics: Value,
}

fn run_npmle(args: &NpmleArgs) -> Result<Report, Error> {
    let sample = ingest_csv(&args.x, args.scheme_x)?;
    let fit = npmle(&sample, args.scheme_x, &args.numerics.options().npmle)?;
    Ok(Report {
        command: "npmle",
        config: json!({ "x": args.x, "scheme_x": args.scheme_x.tag(), "numerics": args.numerics.json() }),
        seed: None,
        result: json!({
            "n": sample.len(),
            "distribution": fit.distribution,
            "loglik": fit.loglik,
        }),
        diagnostics: json!({ "iterations": fit.iterations, "converged": fit.converged }),
    })
}

fn run_fit(args: &FitArgs) -> Result<Report, Error> {
    let data = args.input.load()?;
    let fit = fit_two_sample(&data, &args.input.model, &args.input.numerics.options())?;
    Ok(Report {
        command: "fit",
        config: args.input.json(),
        seed: None,
        result: fit_json(&fit),
        diagnostics: diagnostics(&fit),
    })
}

fn run_ci(args: &CiArgs) -> Result<Report, Error> {
    let data = args.input.load()?;
    let model = &args.input.model;
    let opts = args.input.numerics.options();
    let fit = fit_two_sample(&data, model, &opts)?;
    let theta_hat = fit.fit.theta[0];
    let c0 = estimate_c0(&data, model, theta_hat, &opts, args.b, args.seed)?;
    let ci = ci_w0(&fit.pooled, model, theta_hat, args.level, c0.c0_hat)?;
    let mut config = args.input.json();
    config["B"] = json!(args.b);
    config["level"] = json!(args.level);
    config["seed"] = json!(args.seed);
    let mut diag = diagnostics(&fit);
    diag["ci"] = json!({
        "lower_at_boundary": ci.lower_at_boundary,
        "upper_at_boundary": ci.upper_at_boundary,
        "dense_fallback": ci.dense_fallback,
        "degenerate": ci.degenerate,
        "theta_lo": ci.theta_lo,
        "theta_hi": ci.theta_hi,
        "plugin_c0": c0.plugin_c0,
    });
    Ok(Report {
        command: "ci",
        config,
        seed: Some(args.seed),
        result: json!({
            "theta_hat": theta_hat,
            "w_hat": ci.w_hat,
            "ci": [ci.lower, ci.upper],
            "level": args.level,
            "c0_hat": c0.c0_hat,
            "threshold": ci.threshold,
            "replicates_B": args.b,
            "seed": args.seed,
            "degenerate_replicates": c0.degenerate_replicates,
        }),
        diagnostics: diag,
    })
}

fn run_gof(args: &GofArgs) -> Result<Report, Error> {
    let data = args.input.load()?;
    let model = &args.input.model;
    let opts = args.input.numerics.options();
    let fit = fit_two_sample(&data, model, &opts)?;
    let table = curves(&fit.fhat.distribution, &fit.fit.f_tilde);
    let t_n = t_statistic(&fit.fit, &fit.fhat.distribution, data.n());
    let mut config = args.input.json();
    config["B"] = json!(args.b);
    config["seed"] = json!(args.seed);
    let result = if bootstrap_applicable(&data) {
        let r = bootstrap_pvalue_with_fit(&data, &fit, model, args.b, args.seed, &opts)?;
        json!({
            "mode": "bootstrap",
            "t_n": r.t_n,
            "p_value": r.p_value,
            "B": r.b,
            "seed": r.seed,
            "degenerate_replicates": r.degenerate_replicates,
            "curves": table,
        })
    } else {
        json!({
            "mode": "curves",
            "notice": "asymptotics unknown for interval-censored case 1/case 2 data; compare the curves graphically",
            "t_n": t_n,
            "p_value": null,
            "B": args.b,
            "seed": args.seed,
            "curves": table,
        })
    };
    Ok(Report {
        command: "gof",
        config,
        seed: Some(args.seed),
        result,
        diagnostics: diagnostics(&fit),
    })
}

fn run_simulate(args: &SimulateArgs) -> Result<Report, Error> {
    let mut cfg = ExperimentConfig::from_toml_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.truth.seed = seed;
    }
    let report = run_experiment(&cfg)?;
    if let Some(path) = &args.csv {
        let file = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        write_records_csv(file, &report.records)?;
    }
    let failures: Vec<Value> = report
        .records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| json!({ "rep": r.rep, "error": e })))
        .collect();
    Ok(Report {
        command: "simulate",
        config: serde_json::to_value(&cfg).map_err(|e| Error::Io(e.to_string()))?,
        seed: Some(cfg.truth.seed),
        result: json!({ "failed": report.failed, "metrics": report.metrics }),
        diagnostics: json!({ "failures": failures }),
    })
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn usage_error(flag: &str, message: &str) -> ExitCode {
    let mut cmd = Cli::command();
    let err = cmd.error(
        clap::error::ErrorKind::ArgumentConflict,
        format!("{flag}: {message}"),
    );
    let _ = err.print();
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            return usage_error("--threads", "must be at least 1");
        }
        // a second initialisation can only fail if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Command::Ci(args) = &cli.command {
        if !args.input.model.is_biased_sampling() {
            return usage_error("--model", "ci requires a one-parameter biased sampling model (biased:w=...)");
        }
        if !(args.level > 0.0 && args.level < 1.0) {
            return usage_error("--level", "must lie strictly between 0 and 1");
        }
    }

    let start = Instant::now();
    let (out, report) = match &cli.command {
        Command::Npmle(a) => (a.out.as_deref(), run_npmle(a)),
        Command::Fit(a) => (a.out.as_deref(), run_fit(a)),
        Command::Ci(a) => (a.out.as_deref(), run_ci(a)),
        Command::Gof(a) => (a.out.as_deref(), run_gof(a)),
        Command::Simulate(a) => (a.out.as_deref(), run_simulate(a)),
    };
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            let diag = json!({ "error": e.name(), "message": e.to_string() });
            eprintln!("{}", serde_json::to_string_pretty(&diag).unwrap());
            return ExitCode::from(1);
        }
    };
    let mut doc = json!({
        "tool": "spmle",
        "version": env!("CARGO_PKG_VERSION"),
        "command": report.command,
        "config": report.config,
        "seed": report.seed,
        "result": report.result,
        "diagnostics": report.diagnostics,
    });
    if cli.timing {
        doc["wall_clock_seconds"] = json!(start.elapsed().as_secs_f64());
    }
    let text = serde_json::to_string_pretty(&doc).unwrap() + "\n";
    match write_output(out, &text) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.name(), "message": e.to_string() }));
            ExitCode::from(1)
        }
    }
}
