use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use stabid::evidence::{identify, Evidence, IdentifyOptions};
use stabid::harness::io::{read_dataset_csv, ModelFile};
use stabid::harness::report::{write_derived, write_report, write_timings, Report};
use stabid::harness::run::Stabilized;
use stabid::harness::{apply_stabilizers, resolve_output_dir, run_monte_carlo, BenchmarkConfig, Method};
use stabid::lmi::project_stable;
use stabid::lti::{forward_to_predictor, PredictorEstimate};
use stabid::mcmc::KappaPolicy;
use stabid::par::Execution;
use stabid::{Error, Result};

const ALREADY_STABLE: &str = "already stable";

#[derive(Debug, Parser)]
#[command(name = "stabid", version, about = "Kernel-based identification with stability repair")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit an empirical-Bayes predictor to a `t,u,y` CSV dataset.
    Identify(IdentifyArgs),
    /// Stabilize a saved predictor model.
    Stabilize(StabilizeArgs),
    /// Run the Monte Carlo comparison of all stabilizers.
    Benchmark(BenchmarkArgs),
    /// Regenerate CSV tables and SVG plots from a report.json.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct IdentifyArgs {
    /// Dataset CSV with header `t,u,y`.
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    /// Predictor order.
    #[arg(long, default_value_t = 30)]
    p: usize,
    /// Output model JSON (default: `<output dir>/model.json`).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Accepted for uniformity; identification is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct StabilizeArgs {
    /// Model JSON written by `identify`.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// One of lmi, ml-pf, mcmc-mean, mcmc-map.
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Identification data; required by ml-pf and the MCMC methods.
    #[arg(long = "in", value_name = "CSV")]
    input: Option<PathBuf>,
    /// Output model JSON (default: `<output dir>/model-<method>.json`).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Solver and sampler settings (TOML, same schema as `benchmark`).
    #[arg(long, value_name = "TOML")]
    config: Option<PathBuf>,
    /// Seed for the MCMC samplers.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Truncation constant of the stable posterior: estimate or unit.
    #[arg(long, value_parser = parse_kappa)]
    kappa_policy: Option<KappaPolicy>,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// Benchmark configuration (TOML); defaults apply to missing keys.
    #[arg(long, value_name = "TOML")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Predictor order (overrides the config).
    #[arg(long)]
    p: Option<usize>,
    /// Number of runs (overrides the config).
    #[arg(long)]
    runs: Option<usize>,
    /// Restrict to these methods (lmi, ml-pf, mcmc-mean, mcmc-map); repeatable.
    #[arg(long, value_parser = parse_method)]
    method: Vec<Method>,
    /// Truncation constant of the stable posterior: estimate or unit.
    #[arg(long, value_parser = parse_kappa)]
    kappa_policy: Option<KappaPolicy>,
    /// Output directory (default: config, then $STABID_OUT_DIR, then ./stabid-out).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// report.json written by `benchmark`.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Output directory for CSV and SVG files.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Skip the SVG plots.
    #[arg(long)]
    no_plots: bool,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kappa(s: &str) -> std::result::Result<KappaPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<BenchmarkConfig> {
    match path {
        Some(p) => BenchmarkConfig::load(p).map_err(|e| with_path(e, p)),
        None => Ok(BenchmarkConfig::default()),
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
        other => other,
    }
}

fn cmd_identify(a: IdentifyArgs) -> Result<()> {
    if a.p == 0 {
        return Err(Error::Config("--p must be >= 1".into()));
    }
    let data = read_dataset_csv(&a.input).map_err(|e| with_path(e, &a.input))?;
    if data.y.len() <= 2 * a.p {
        return Err(Error::Config(format!(
            "{} has {} samples; p = {} needs more than {}",
            a.input.display(),
            data.y.len(),
            a.p,
            2 * a.p
        )));
    }
    let ident = identify(&data, a.p, &IdentifyOptions::default())?;
    let mut model = ModelFile::new(&ident.estimate, ident.forward.spectral_radius);
    model.hyperparameters = Some(ident.eta);
    model.method = Some("empirical-bayes".into());
    if !ident.is_stable() {
        model.notes.push("unstable".into());
        warn!("identified forward model is unstable (spectral radius {:.6})", ident.forward.spectral_radius);
    }
    let out = a.out.unwrap_or_else(|| resolve_output_dir(None).join("model.json"));
    model.save(&out)?;
    println!(
        "identified p = {} (scale {:.4e}, decay {:.4}, noise variance {:.4e}); spectral radius {:.6}; wrote {}",
        a.p,
        ident.eta.scale,
        ident.eta.decay,
        ident.eta.noise_var,
        ident.forward.spectral_radius,
        out.display()
    );
    Ok(())
}

fn cmd_stabilize(a: StabilizeArgs) -> Result<()> {
    let input = ModelFile::load(&a.model).map_err(|e| with_path(e, &a.model))?;
    let estimate = input.estimate()?;
    let rho = estimate.spectral_radius()?;
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(k) = a.kappa_policy {
        cfg.mcmc.kappa_policy = k;
    }
    let out = a
        .out
        .unwrap_or_else(|| resolve_output_dir(None).join(format!("model-{}.json", a.method)));
    let stable = rho < 1.0;

    let mut result = if stable && a.method != Method::Lmi {
        // Nothing to repair; the data-driven methods would only refit.
        input.clone()
    } else if a.method == Method::Lmi {
        let proj = project_stable(&estimate.f, &cfg.lmi)?;
        let est = PredictorEstimate::new(proj.f, estimate.g.clone())?;
        let mut m = ModelFile::new(&est, proj.spectral_radius);
        m.hyperparameters = input.hyperparameters;
        m
    } else {
        let path = a.input.as_ref().ok_or_else(|| {
            Error::Config(format!("--method {} needs the identification data (--in data.csv)", a.method))
        })?;
        let data = read_dataset_csv(path).map_err(|e| with_path(e, path))?;
        let evidence = Evidence::new(&data, estimate.p())?;
        let eta = match input.hyperparameters {
            Some(eta) => eta,
            None => {
                info!("model has no hyperparameters; refitting");
                let opts = IdentifyOptions {
                    bounds: cfg.bounds,
                    expansion: cfg.expansion,
                    noise_var: None,
                };
                identify(&data, estimate.p(), &opts)?.eta
            }
        };
        let res = apply_stabilizers(&[a.method], &evidence, &eta, &estimate, &cfg, a.seed, Execution::Parallel);
        let mut m = to_model(res, estimate.p())?;
        if m.hyperparameters.is_none() {
            m.hyperparameters = Some(eta);
        }
        m
    };
    result.method = Some(a.method.to_string());
    if stable {
        result.notes.retain(|n| n != "unstable");
        if !result.notes.iter().any(|n| n == ALREADY_STABLE) {
            result.notes.push(ALREADY_STABLE.into());
        }
    }
    result.save(&out)?;
    if stable {
        println!("{ALREADY_STABLE} (spectral radius {rho:.6}); wrote {}", out.display());
    } else {
        println!(
            "{}: spectral radius {rho:.6} -> {:.6}; wrote {}",
            a.method,
            result.spectral_radius,
            out.display()
        );
    }
    Ok(())
}

fn to_model(mut res: Vec<(Method, Result<Stabilized>, f64)>, p: usize) -> Result<ModelFile> {
    let (_, out, _) = res.pop().expect("one method requested");
    let s = out?;
    let mut m = match &s.estimate {
        Some(est) => ModelFile::new(est, s.forward.spectral_radius),
        None => {
            // Averaged forward model: (f, g) is its order-p predictor
            // truncation, the exact responses are stored alongside.
            let est = forward_to_predictor(&s.forward, p)?;
            let mut m = ModelFile::new(&est, s.forward.spectral_radius);
            m.notes.push("posterior mean: f, g truncate the averaged responses in forward".into());
            m.forward = Some(s.forward.clone());
            m
        }
    };
    if let Some(d) = &s.diagnostics {
        m.notes.push(format!(
            "gamma {:.4}, hyper acceptance {:.3}, stable acceptance {:.3}",
            d.gamma, d.hyper_acceptance, d.stable_acceptance
        ));
    }
    Ok(m)
}

fn cmd_benchmark(a: BenchmarkArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.p {
        cfg.p = p;
    }
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    if !a.method.is_empty() {
        let mut ms = a.method.clone();
        ms.sort();
        ms.dedup();
        cfg.methods = ms;
    }
    if let Some(k) = a.kappa_policy {
        cfg.mcmc.kappa_policy = k;
    }
    cfg.validate()?;
    let dir = resolve_output_dir(a.out.as_deref().or(cfg.output_dir.as_deref()));
    let exec = if a.sequential { Execution::Sequential } else { Execution::Parallel };
    let (report, timings) = run_monte_carlo(&cfg, exec)?;
    write_report(&report, &dir, cfg.plots)?;
    write_timings(&timings, &dir)?;
    print_summary(&report);
    println!("wrote {}", dir.display());
    Ok(())
}

fn print_summary(report: &Report) {
    let s = &report.summary;
    println!("runs {}, unstable {}, failed {}", s.runs, s.unstable, s.failed_runs);
    for m in &s.methods {
        let med = m.err.as_ref().map_or(f64::NAN, |st| st.median);
        let pole = m.dominant_pole.as_ref().map_or(f64::NAN, |st| st.max);
        println!(
            "  {:<10} ok {:>3}/{:<3} median err {:.4}  max pole {:.6}",
            m.method.name(),
            m.succeeded,
            m.attempted,
            med,
            pole
        );
    }
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let report = Report::load(&a.input).map_err(|e| with_path(e, &a.input))?;
    if !report.is_consistent() {
        warn!("summary in {} does not match its records; tables use the records", a.input.display());
    }
    let dir = match a.out {
        Some(d) => d,
        None => a
            .input
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| resolve_output_dir(None), Path::to_path_buf),
    };
    write_derived(&report, &dir, !a.no_plots)?;
    print_summary(&report);
    println!("wrote {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let res = match cli.command {
        Command::Identify(a) => cmd_identify(a),
        Command::Stabilize(a) => cmd_stabilize(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Report(a) => cmd_report(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
