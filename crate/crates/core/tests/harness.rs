use stabid::harness::config::{BenchmarkConfig, Method};
use stabid::harness::report::{summarize, write_report, Report, RunRecord};
use stabid::harness::run::run_monte_carlo;
use stabid::mcmc::KappaPolicy;
use stabid::par::Execution;
use stabid::poly::spectral_radius;

/// 30 runs with short chains; seed 3 has unstable cases among them.
fn small_config() -> BenchmarkConfig {
    let mut cfg = BenchmarkConfig {
        runs: 30,
        seed: 3,
        ..Default::default()
    };
    cfg.mcmc.burn_in = 200;
    cfg.mcmc.hyper_samples = 200;
    cfg.mcmc.components = 20;
    cfg.mcmc.stable_samples = 200;
    cfg.mcmc.kappa_draws = 200;
    cfg
}

#[test]
fn small_benchmark_is_deterministic_and_consistent() {
    let cfg = small_config();
    let (par, _) = run_monte_carlo(&cfg, Execution::Parallel).unwrap();
    let (seq, timings) = run_monte_carlo(&cfg, Execution::Sequential).unwrap();
    assert_eq!(par.to_json().unwrap(), seq.to_json().unwrap());
    assert_eq!(timings.runs.len(), cfg.runs);

    let report = par;
    assert_eq!(report.runs.len(), cfg.runs);
    assert!(report.summary.unstable > 0, "seed 3 should give an unstable case");
    assert_eq!(report.unstable_records.len(), report.summary.unstable);
    assert!(report.is_consistent());
    for rec in &report.unstable_records {
        assert!(rec.eb.spectral_radius >= 1.0);
        assert_eq!(rec.methods.len(), 4);
        for m in &rec.methods {
            assert!(m.succeeded(), "run {} {}: {:?}", rec.index, m.method, m.error);
            assert!(m.dominant_pole.unwrap() < 1.0);
            if let Some(est) = &m.estimate {
                assert!(spectral_radius(&est.f).unwrap() < 1.0);
            }
        }
    }
    // the stability filter is exactly rho >= 1 on the empirical-Bayes estimate
    for r in &report.runs {
        assert_eq!(r.unstable, r.spectral_radius.unwrap() >= 1.0);
    }
}

#[test]
fn report_round_trips_and_summary_recomputes() {
    let mut cfg = small_config();
    cfg.runs = 12;
    cfg.methods = vec![Method::Lmi, Method::McmcMean];
    cfg.mcmc.kappa_policy = KappaPolicy::Unit;
    let (report, _) = run_monte_carlo(&cfg, Execution::Parallel).unwrap();
    let text = report.to_json().unwrap();
    let back = Report::from_json_str(&text).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.to_json().unwrap(), text);
    for rec in &report.unstable_records {
        let s = serde_json::to_string(rec).unwrap();
        let r: RunRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(&r, rec);
    }
    let again = summarize(&back.config.methods, &back.runs, &back.unstable_records);
    assert_eq!(again, report.summary);

    let dir = tempfile::tempdir().unwrap();
    write_report(&report, dir.path(), true).unwrap();
    for name in ["report.json", "records.csv", "summary.csv", "err_boxplot.svg", "poles_boxplot.svg"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let loaded = Report::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(loaded, report);
    let svg = std::fs::read_to_string(dir.path().join("err_boxplot.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}

#[test]
fn tampered_report_is_detected() {
    let mut cfg = small_config();
    cfg.runs = 4;
    cfg.methods = vec![Method::Lmi];
    let (mut report, _) = run_monte_carlo(&cfg, Execution::Sequential).unwrap();
    assert!(report.is_consistent());
    report.summary.unstable += 1;
    assert!(!report.is_consistent());
}
