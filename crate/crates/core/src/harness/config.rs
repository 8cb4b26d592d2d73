use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::HyperBox;
use crate::lmi::LmiOptions;
use crate::lti::DEFAULT_EXPANSION;
use crate::mcmc::McmcOptions;
use crate::penalty::PenaltySchedule;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "STABID_OUT_DIR";

const FALLBACK_OUT_DIR: &str = "stabid-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "lmi")]
    Lmi,
    #[serde(rename = "ml-pf")]
    MlPf,
    #[serde(rename = "mcmc-mean")]
    McmcMean,
    #[serde(rename = "mcmc-map")]
    McmcMap,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Lmi, Method::MlPf, Method::McmcMean, Method::McmcMap];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lmi => "lmi",
            Method::MlPf => "ml-pf",
            Method::McmcMean => "mcmc-mean",
            Method::McmcMap => "mcmc-map",
        }
    }

    pub fn is_mcmc(self) -> bool {
        matches!(self, Method::McmcMean | Method::McmcMap)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method '{s}' (expected one of lmi, ml-pf, mcmc-mean, mcmc-map)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub runs: usize,
    /// Identification length.
    pub t_id: usize,
    /// Test length.
    pub t_test: usize,
    /// Predictor truncation.
    pub p: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub plots: bool,
    /// Impulse-response length for expansions and the error metric.
    pub expansion: usize,
    /// Degree of the random input numerator `B(z)`.
    pub b_degree: usize,
    /// Simulation length used to set the gain `k`.
    pub gain_horizon: usize,
    pub bounds: HyperBox,
    pub mcmc: McmcOptions,
    pub lmi: LmiOptions,
    pub penalty: PenaltySchedule,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            runs: 500,
            t_id: 400,
            t_test: 1000,
            p: 30,
            seed: 1,
            methods: Method::ALL.to_vec(),
            output_dir: None,
            plots: true,
            expansion: DEFAULT_EXPANSION,
            b_degree: 1,
            gain_horizon: 10_000,
            bounds: HyperBox::default(),
            mcmc: McmcOptions::default(),
            lmi: LmiOptions::default(),
            penalty: PenaltySchedule::default(),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.runs == 0 {
            return fail("runs must be >= 1".into());
        }
        if self.p == 0 {
            return fail("p must be >= 1".into());
        }
        if self.t_id <= 2 * self.p {
            return fail(format!("t_id = {} must exceed 2 p = {}", self.t_id, 2 * self.p));
        }
        if self.expansion <= self.p {
            return fail(format!("expansion = {} must exceed p = {}", self.expansion, self.p));
        }
        if self.methods.is_empty() {
            return fail("at least one method is required".into());
        }
        if self.gain_horizon < 100 {
            return fail("gain_horizon must be >= 100".into());
        }
        let b = &self.bounds;
        if !(b.scale.0 > 0.0 && b.scale.0 < b.scale.1 && b.decay.0 > 0.0 && b.decay.0 < b.decay.1 && b.decay.1 < 1.0) {
            return fail(format!("invalid hyperparameter bounds {b:?}"));
        }
        let m = &self.mcmc;
        if m.hyper_samples == 0 || m.stable_samples == 0 || m.components == 0 {
            return fail("mcmc sample counts must be >= 1".into());
        }
        if m.kappa_draws < 100 {
            return fail("mcmc.kappa_draws must be >= 100".into());
        }
        Ok(())
    }

    /// Parses TOML; syntax and schema errors carry the offending line.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn wants(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }
}

/// Explicit path, else `STABID_OUT_DIR`, else `./stabid-out`.
pub fn resolve_output_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(FALLBACK_OUT_DIR),
    }
}
