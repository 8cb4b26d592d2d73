//! File formats: datasets as `t,u,y` CSV, models as versioned JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::Dataset;
use crate::kernel::Hyperparameters;
use crate::lti::{ForwardModel, PredictorEstimate};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Persisted predictor model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub p: usize,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// Dominant pole modulus of the forward model.
    pub spectral_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperparameters: Option<Hyperparameters>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Forward impulse responses when they are not the expansion of `(f, g)`
    /// (posterior-mean estimates).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<ForwardModel>,
}

impl ModelFile {
    pub fn new(est: &PredictorEstimate, spectral_radius: f64) -> Self {
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            p: est.p(),
            f: est.f.clone(),
            g: est.g.clone(),
            spectral_radius,
            hyperparameters: None,
            method: None,
            notes: Vec::new(),
            forward: None,
        }
    }

    pub fn estimate(&self) -> Result<PredictorEstimate> {
        PredictorEstimate::new(self.f.clone(), self.g.clone())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let m: Self = parse_json(text)?;
        if m.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "model schema version {} unsupported (expected {MODEL_SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        if m.p == 0 || m.f.len() != m.p || m.g.len() != m.p {
            return Err(Error::Config(format!(
                "model declares p = {} but has {} f and {} g coefficients",
                m.p,
                m.f.len(),
                m.g.len()
            )));
        }
        if m.f.iter().chain(&m.g).any(|v| !v.is_finite()) {
            return Err(Error::Config("model has non-finite coefficients".into()));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// JSON parse with the failing line in the error.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

/// Pretty JSON with a trailing newline; parent directories are created.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a `t,u,y` CSV with header. `t` must count up by one.
pub fn parse_dataset_csv(text: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| csv_error(&e, 1))?.clone();
    let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names != ["t", "u", "y"] {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header t,u,y, found {}", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut u = Vec::new();
    let mut y = Vec::new();
    let mut prev_t: Option<f64> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(&e, 0))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize, name: &str| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {name}: '{raw}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column {name}: non-finite value"),
                });
            }
            Ok(v)
        };
        let t = field(0, "t")?;
        if let Some(pt) = prev_t {
            if t != pt + 1.0 {
                return Err(Error::Parse {
                    line,
                    message: format!("t = {t} does not follow {pt}"),
                });
            }
        }
        prev_t = Some(t);
        u.push(field(1, "u")?);
        y.push(field(2, "y")?);
    }
    if y.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "dataset has no rows".into(),
        });
    }
    Dataset::new(u, y, None)
}

fn csv_error(e: &csv::Error, fallback: usize) -> Error {
    let line = e.position().map_or(fallback, |p| p.line() as usize);
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        _ => e.to_string(),
    };
    Error::Parse { line, message }
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    parse_dataset_csv(&std::fs::read_to_string(path)?)
}

pub fn dataset_to_csv(data: &Dataset) -> String {
    let mut out = String::from("t,u,y\n");
    for (t, (u, y)) in data.u.iter().zip(&data.y).enumerate() {
        out.push_str(&format!("{t},{u},{y}\n"));
    }
    out
}

pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    write_text(path, &dataset_to_csv(data))
}
