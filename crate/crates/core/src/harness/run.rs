use std::time::Instant;

use log::{info, warn};

use crate::error::Result;
use crate::evidence::{identify, Dataset, Evidence, IdentifyOptions};
use crate::harness::config::{BenchmarkConfig, Method};
use crate::harness::generator::{generate_armax_model, generate_dataset};
use crate::harness::metrics::relative_error;
use crate::harness::report::{
    EbResult, MethodOutcome, MethodTiming, Report, RunRecord, RunSummary, RunTiming, Timings,
};
use crate::kernel::Hyperparameters;
use crate::lmi::project_stable;
use crate::lti::{predictor_to_forward, ArmaxModel, ForwardModel, PredictorEstimate};
use crate::mcmc::{stabilize_mcmc, ChainDiagnostics, HyperPrior};
use crate::par::{map_indexed, Execution};
use crate::penalty::stabilize_ml_pf;
use crate::seed;

/// Output of one stabilizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Stabilized {
    pub method: Method,
    pub estimate: Option<PredictorEstimate>,
    pub forward: ForwardModel,
    pub diagnostics: Option<ChainDiagnostics>,
}

fn from_predictor(method: Method, est: PredictorEstimate, len: usize) -> Result<Stabilized> {
    let forward = predictor_to_forward(&est, len)?;
    Ok(Stabilized {
        method,
        estimate: Some(est),
        forward,
        diagnostics: None,
    })
}

/// Applies each requested stabilizer to an identified predictor. Both MCMC
/// estimates come from a single sampler run. Returns, per method, the
/// result and its wall time in milliseconds.
pub fn apply_stabilizers(
    methods: &[Method],
    evidence: &Evidence,
    eta: &Hyperparameters,
    estimate: &PredictorEstimate,
    cfg: &BenchmarkConfig,
    mcmc_seed: u64,
    exec: Execution,
) -> Vec<(Method, Result<Stabilized>, f64)> {
    let len = cfg.expansion;
    let mut out = Vec::with_capacity(methods.len());
    let mut mcmc_cache = None;
    for &m in methods {
        let t0 = Instant::now();
        let res = match m {
            Method::Lmi => project_stable(&estimate.f, &cfg.lmi).and_then(|proj| {
                from_predictor(m, PredictorEstimate::new(proj.f, estimate.g.clone())?, len)
            }),
            Method::MlPf => stabilize_ml_pf(evidence, eta, &cfg.bounds, &cfg.penalty)
                .and_then(|o| from_predictor(m, o.estimate, len)),
            Method::McmcMean | Method::McmcMap => {
                let mut opts = cfg.mcmc.clone();
                opts.expansion = len;
                let run = mcmc_cache.get_or_insert_with(|| {
                    stabilize_mcmc(evidence, eta.noise_var, &HyperPrior::flat(cfg.bounds), &opts, mcmc_seed, exec)
                });
                match run {
                    Ok(o) if m == Method::McmcMean => Ok(Stabilized {
                        method: m,
                        estimate: None,
                        forward: o.posterior_mean.clone(),
                        diagnostics: Some(o.diagnostics.clone()),
                    }),
                    Ok(o) => Ok(Stabilized {
                        method: m,
                        estimate: Some(o.map.clone()),
                        forward: o.map_forward.clone(),
                        diagnostics: Some(o.diagnostics.clone()),
                    }),
                    Err(e) => Err(crate::Error::Domain(format!("mcmc: {e}"))),
                }
            }
        };
        out.push((m, res, t0.elapsed().as_secs_f64() * 1e3));
    }
    out
}

fn ms(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1e3
}

/// Model and identification data of run `index`.
pub fn run_inputs(cfg: &BenchmarkConfig, index: usize) -> Result<(u64, ArmaxModel, Dataset)> {
    let run_seed = seed::derive(cfg.seed, index as u64);
    let model = generate_armax_model(run_seed, cfg.b_degree, cfg.gain_horizon)?;
    let (id, _test) = generate_dataset(&model, cfg.t_id, cfg.t_test, run_seed, 1.0)?;
    Ok((run_seed, model, id))
}

/// One Monte Carlo run: generate, identify, and stabilize if unstable.
pub fn run_single(cfg: &BenchmarkConfig, index: usize, exec: Execution) -> (RunSummary, Option<RunRecord>, RunTiming) {
    let mut timing = RunTiming {
        index,
        ..Default::default()
    };
    let mut summary = RunSummary {
        index,
        seed: seed::derive(cfg.seed, index as u64),
        spectral_radius: None,
        unstable: false,
        eb_err: None,
        error: None,
    };
    let t0 = Instant::now();
    let fitted = run_inputs(cfg, index).and_then(|(_, model, id)| {
        let opts = IdentifyOptions {
            bounds: cfg.bounds,
            expansion: cfg.expansion,
            noise_var: None,
        };
        let ident = identify(&id, cfg.p, &opts)?;
        let err = relative_error(&model, &ident.forward, cfg.expansion)?;
        Ok((model, ident, err))
    });
    timing.identify_ms = ms(t0);
    let (model, ident, eb_err) = match fitted {
        Ok(v) => v,
        Err(e) => {
            warn!("run {index}: {e}");
            summary.error = Some(e.to_string());
            return (summary, None, timing);
        }
    };
    let rho = ident.forward.spectral_radius;
    summary.spectral_radius = Some(rho);
    summary.eb_err = Some(eb_err);
    summary.unstable = !(rho < 1.0);
    if !summary.unstable {
        return (summary, None, timing);
    }
    info!("run {index}: unstable EB estimate (spectral radius {rho:.5})");

    let results = apply_stabilizers(
        &cfg.methods,
        &ident.evidence,
        &ident.eta,
        &ident.estimate,
        cfg,
        seed::derive(summary.seed, 7),
        exec,
    );
    let mut methods = Vec::with_capacity(results.len());
    for (m, res, elapsed) in results {
        timing.methods.push(MethodTiming { method: m, ms: elapsed });
        let outcome = res.and_then(|s| {
            let err = relative_error(&model, &s.forward, cfg.expansion)?;
            Ok(MethodOutcome {
                method: m,
                estimate: s.estimate,
                dominant_pole: Some(s.forward.spectral_radius),
                forward: Some(s.forward),
                err: Some(err),
                error: None,
                diagnostics: s.diagnostics,
            })
        });
        methods.push(outcome.unwrap_or_else(|e| {
            warn!("run {index}: {m} failed: {e}");
            MethodOutcome::failed(m, e.to_string())
        }));
    }
    let record = RunRecord {
        index,
        seed: summary.seed,
        model,
        eb: EbResult {
            estimate: ident.estimate,
            hyperparameters: ident.eta,
            spectral_radius: rho,
            err: eb_err,
        },
        methods,
    };
    (summary, Some(record), timing)
}

/// All runs (concurrently under `Execution::Parallel`), in index order.
pub fn run_monte_carlo(cfg: &BenchmarkConfig, exec: Execution) -> Result<(Report, Timings)> {
    cfg.validate()?;
    let t0 = Instant::now();
    let results = map_indexed(cfg.runs, exec, |i| run_single(cfg, i, exec));
    let mut runs = Vec::with_capacity(cfg.runs);
    let mut records = Vec::new();
    let mut timings = Timings::default();
    for (s, r, t) in results {
        runs.push(s);
        records.extend(r);
        timings.runs.push(t);
    }
    timings.total_ms = ms(t0);
    let report = Report::new(cfg.clone(), runs, records);
    info!(
        "benchmark: {} runs, {} unstable, {:.1} s",
        report.summary.runs,
        report.summary.unstable,
        timings.total_ms / 1e3
    );
    Ok((report, timings))
}
