//! Benchmark records, the aggregate summary derived from them, and their
//! JSON / CSV / SVG renderings.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{BenchmarkConfig, Method};
use crate::harness::generator::POLE_RADIUS;
use crate::harness::io::{parse_json, write_json, write_text};
use crate::kernel::Hyperparameters;
use crate::lti::{ArmaxModel, ForwardModel, PredictorEstimate};
use crate::mcmc::ChainDiagnostics;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Empirical-Bayes fit of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbResult {
    pub estimate: PredictorEstimate,
    pub hyperparameters: Hyperparameters,
    pub spectral_radius: f64,
    pub err: f64,
}

/// One stabilizer applied to one unstable run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    /// Predictor behind the forward model; absent for the posterior mean,
    /// which is not the expansion of a single predictor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<PredictorEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<ForwardModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub err: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominant_pole: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<ChainDiagnostics>,
}

impl MethodOutcome {
    pub fn failed(method: Method, error: String) -> Self {
        Self {
            method,
            estimate: None,
            forward: None,
            err: None,
            dominant_pole: None,
            error: Some(error),
            diagnostics: None,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.err.is_some()
    }
}

/// Full record of a run whose identified forward model is unstable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub seed: u64,
    pub model: ArmaxModel,
    pub eb: EbResult,
    pub methods: Vec<MethodOutcome>,
}

/// Compact per-run line kept for every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub index: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral_radius: Option<f64>,
    pub unstable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eb_err: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        Some(Self {
            n: v.len(),
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub attempted: usize,
    pub succeeded: usize,
    /// Every successful output has dominant-pole modulus below one.
    pub all_stable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub err: Option<Stats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominant_pole: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub failed_runs: usize,
    pub unstable: usize,
    pub unstable_fraction: f64,
    pub true_pole_modulus: f64,
    pub methods: Vec<MethodSummary>,
}

/// Aggregates from the persisted records only.
pub fn summarize(methods: &[Method], runs: &[RunSummary], records: &[RunRecord]) -> Summary {
    let failed_runs = runs.iter().filter(|r| r.error.is_some()).count();
    let unstable = runs.iter().filter(|r| r.unstable).count();
    let per_method = methods
        .iter()
        .map(|&m| {
            let outs: Vec<&MethodOutcome> = records
                .iter()
                .flat_map(|r| r.methods.iter().filter(move |o| o.method == m))
                .collect();
            let ok: Vec<&&MethodOutcome> = outs.iter().filter(|o| o.succeeded()).collect();
            let errs: Vec<f64> = ok.iter().filter_map(|o| o.err).collect();
            let poles: Vec<f64> = ok.iter().filter_map(|o| o.dominant_pole).collect();
            MethodSummary {
                method: m,
                attempted: outs.len(),
                succeeded: ok.len(),
                all_stable: poles.len() == ok.len() && poles.iter().all(|&r| r < 1.0),
                err: Stats::of(&errs),
                dominant_pole: Stats::of(&poles),
            }
        })
        .collect();
    Summary {
        runs: runs.len(),
        failed_runs,
        unstable,
        unstable_fraction: if runs.is_empty() {
            0.0
        } else {
            unstable as f64 / runs.len() as f64
        },
        true_pole_modulus: POLE_RADIUS,
        methods: per_method,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: BenchmarkConfig,
    pub summary: Summary,
    pub runs: Vec<RunSummary>,
    pub unstable_records: Vec<RunRecord>,
}

impl Report {
    pub fn new(mut config: BenchmarkConfig, runs: Vec<RunSummary>, unstable_records: Vec<RunRecord>) -> Self {
        // the report must not depend on where it is written
        config.output_dir = None;
        let summary = summarize(&config.methods, &runs, &unstable_records);
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            config,
            summary,
            runs,
            unstable_records,
        }
    }

    /// True when the stored summary equals the one recomputed from records.
    pub fn is_consistent(&self) -> bool {
        summarize(&self.config.methods, &self.runs, &self.unstable_records) == self.summary
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let r: Self = parse_json(text)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "report schema version {} unsupported (expected {REPORT_SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Per-method values over the unstable subset, in configured order.
    pub fn method_values(&self, pick: impl Fn(&MethodOutcome) -> Option<f64>) -> Vec<(Method, Vec<f64>)> {
        self.config
            .methods
            .iter()
            .map(|&m| {
                let vals = self
                    .unstable_records
                    .iter()
                    .flat_map(|r| r.methods.iter())
                    .filter(|o| o.method == m && o.succeeded())
                    .filter_map(&pick)
                    .collect();
                (m, vals)
            })
            .collect()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per (unstable run, method).
pub fn records_csv(report: &Report) -> String {
    let mut out = String::from("index,seed,eb_spectral_radius,eb_err,method,err,dominant_pole,error\n");
    for r in &report.unstable_records {
        for o in &r.methods {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.index,
                r.seed,
                r.eb.spectral_radius,
                r.eb.err,
                o.method,
                opt(o.err),
                opt(o.dominant_pole),
                csv_text(o.error.as_deref().unwrap_or(""))
            );
        }
    }
    out
}

pub fn summary_csv(report: &Report) -> String {
    let mut out = String::from(
        "method,attempted,succeeded,all_stable,err_median,err_q1,err_q3,err_mean,pole_median,pole_min,pole_max\n",
    );
    for m in &report.summary.methods {
        let e = m.err.as_ref();
        let p = m.dominant_pole.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            m.method,
            m.attempted,
            m.succeeded,
            m.all_stable,
            opt(e.map(|s| s.median)),
            opt(e.map(|s| s.q1)),
            opt(e.map(|s| s.q3)),
            opt(e.map(|s| s.mean)),
            opt(p.map(|s| s.median)),
            opt(p.map(|s| s.min)),
            opt(p.map(|s| s.max)),
        );
    }
    out
}

/// Standalone SVG with one box (quartiles, median, 1.5 IQR whiskers,
/// outliers) per group and an optional dashed reference line.
pub fn boxplot_svg(title: &str, ylabel: &str, groups: &[(String, Vec<f64>)], reference: Option<f64>) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 50.0;
    let all: Vec<f64> = groups
        .iter()
        .flat_map(|g| g.1.iter().copied())
        .chain(reference)
        .filter(|v| v.is_finite())
        .collect();
    let (mut lo, mut hi) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_h = H - TOP - BOTTOM;
    let y = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);
    let slot = (W - LEFT - RIGHT) / groups.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>", W / 2.0, xml(title));
    let _ = writeln!(
        s,
        "<text transform=\"translate(16,{:.1}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        TOP + plot_h / 2.0,
        xml(ylabel)
    );
    let _ = writeln!(
        s,
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{:.1}\" stroke=\"black\"/>",
        H - BOTTOM
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{LEFT}\" y2=\"{:.1}\" stroke=\"black\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.4}</text>",
            LEFT - 4.0,
            y(v),
            y(v),
            LEFT - 6.0,
            y(v) + 4.0,
            v
        );
    }
    if let Some(r) = reference {
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>",
            y(r),
            W - RIGHT,
            y(r)
        );
    }
    for (i, (name, vals)) in groups.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let _ = writeln!(
            s,
            "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{} (n={})</text>",
            H - BOTTOM + 20.0,
            xml(name),
            vals.len()
        );
        let Some(st) = Stats::of(vals) else { continue };
        let iqr = st.q3 - st.q1;
        let (wlo, whi) = (st.q1 - 1.5 * iqr, st.q3 + 1.5 * iqr);
        let lw = vals.iter().copied().filter(|&v| v >= wlo).fold(f64::INFINITY, f64::min);
        let uw = vals.iter().copied().filter(|&v| v <= whi).fold(f64::NEG_INFINITY, f64::max);
        let bw = (slot * 0.5).min(80.0);
        let _ = writeln!(
            s,
            "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
            y(uw),
            y(lw)
        );
        let _ = writeln!(
            s,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bw:.1}\" height=\"{:.1}\" fill=\"#9ecae1\" stroke=\"black\"/>",
            cx - bw / 2.0,
            y(st.q3),
            (y(st.q1) - y(st.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#d62728\" stroke-width=\"2\"/>",
            cx - bw / 2.0,
            y(st.median),
            cx + bw / 2.0,
            y(st.median)
        );
        for &v in vals.iter().filter(|&&v| v < lw || v > uw) {
            let _ = writeln!(s, "<circle cx=\"{cx:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"none\" stroke=\"black\"/>", y(v));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn named(groups: Vec<(Method, Vec<f64>)>) -> Vec<(String, Vec<f64>)> {
    groups.into_iter().map(|(m, v)| (m.name().to_string(), v)).collect()
}

pub fn error_boxplot(report: &Report) -> String {
    boxplot_svg(
        "Relative impulse-response error, unstable runs",
        "err",
        &named(report.method_values(|o| o.err)),
        None,
    )
}

pub fn pole_boxplot(report: &Report) -> String {
    boxplot_svg(
        "Dominant pole modulus after stabilization",
        "|pole|",
        &named(report.method_values(|o| o.dominant_pole)),
        Some(POLE_RADIUS),
    )
}

/// Derived tables and figures next to an existing report.
pub fn write_derived(report: &Report, dir: &Path, plots: bool) -> Result<()> {
    write_text(&dir.join("records.csv"), &records_csv(report))?;
    write_text(&dir.join("summary.csv"), &summary_csv(report))?;
    if plots {
        write_text(&dir.join("err_boxplot.svg"), &error_boxplot(report))?;
        write_text(&dir.join("poles_boxplot.svg"), &pole_boxplot(report))?;
    }
    Ok(())
}

pub fn write_report(report: &Report, dir: &Path, plots: bool) -> Result<()> {
    write_text(&dir.join("report.json"), &report.to_json()?)?;
    write_derived(report, dir, plots)
}

/// Wall-clock timings, kept out of `report.json` so that the report is a
/// pure function of the configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
    pub runs: Vec<RunTiming>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub index: usize,
    pub identify_ms: f64,
    pub methods: Vec<MethodTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: Method,
    pub ms: f64,
}

pub fn write_timings(timings: &Timings, dir: &Path) -> Result<()> {
    write_json(&dir.join("timings.json"), timings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let s = Stats::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.max, s.median, s.mean), (1.0, 4.0, 2.5, 2.5));
        assert_eq!((s.q1, s.q3), (1.75, 3.25));
        assert!(Stats::of(&[]).is_none());
    }

    #[test]
    fn csv_quotes_messages() {
        assert_eq!(csv_text("a,b"), "\"a,b\"");
        assert_eq!(csv_text("plain"), "plain");
    }

    #[test]
    fn boxplot_is_valid_and_deterministic() {
        let groups = vec![("a".to_string(), vec![0.1, 0.2, 0.3, 5.0]), ("b".to_string(), vec![])];
        let svg = boxplot_svg("t <1>", "y", &groups, Some(0.996));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("t &lt;1&gt;"));
        assert!(svg.contains("<circle"));
        assert_eq!(svg, boxplot_svg("t <1>", "y", &groups, Some(0.996)));
    }
}
