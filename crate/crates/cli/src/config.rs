//! Experiment configuration: dataset presets, grid parsing and merging of a
//! JSON config file with command-line flags (flags win).

use crate::error::{CliError, Result};
use dpacct_core::Method;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// A dataset size with its batch size and target δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    pub n: u64,
    pub batch: u64,
    pub delta: f64,
}

impl DatasetConfig {
    pub fn q(&self) -> f64 {
        self.batch as f64 / self.n as f64
    }

    /// File-name stem: lower case, alphanumerics only.
    pub fn slug(&self) -> String {
        self.name.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase()
    }
}

pub const DEFAULT_BATCH: u64 = 2000;
pub const DEFAULT_EPSILON: f64 = 8.0;
pub const DEFAULT_CUSTOM_DELTA: f64 = 1e-5;

/// Sizes of the four GLUE tasks with batch 2000.
pub fn presets() -> Vec<DatasetConfig> {
    let p = |name: &str, n: u64, delta: f64| DatasetConfig { name: name.into(), n, batch: DEFAULT_BATCH, delta };
    vec![p("MNLI", 393_000, 1e-6), p("QNLI", 105_000, 1e-6), p("QQP", 364_000, 1e-6), p("SST-2", 67_000, 1e-5)]
}

/// Looks up a preset by name, ignoring case and punctuation; `all` selects every preset.
pub fn resolve_preset(name: &str) -> Result<Vec<DatasetConfig>> {
    let key: String = name.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
    if key == "all" {
        return Ok(presets());
    }
    presets()
        .into_iter()
        .find(|p| p.slug() == key)
        .map(|p| vec![p])
        .ok_or_else(|| CliError::config("preset", format!("unknown preset {name:?}; expected MNLI, QNLI, QQP, SST-2 or all")))
}

/// Parses `x` or `a:b:step` (inclusive of `b`).
pub fn parse_real_grid(field: &str, s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let num = |t: &str| t.parse::<f64>().map_err(|e| CliError::config(field, format!("{t:?}: {e}")));
    match parts.as_slice() {
        [x] => Ok(vec![num(x)?]),
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if !(step > 0.0) || !(b >= a) || !a.is_finite() || !b.is_finite() {
                return Err(CliError::config(field, format!("invalid range {s:?}")));
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            if count > 100_000 {
                return Err(CliError::config(field, format!("range {s:?} has too many points")));
            }
            Ok((0..count).map(|k| a + step * k as f64).collect())
        }
        _ => Err(CliError::config(field, format!("expected a number or a:b:step, got {s:?}"))),
    }
}

/// Parses `lo:hi:step` over positive integers (inclusive of `hi`).
pub fn parse_int_grid(field: &str, s: &str) -> Result<Vec<u64>> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let num = |t: &str| t.parse::<u64>().map_err(|e| CliError::config(field, format!("{t:?}: {e}")));
    match parts.as_slice() {
        [lo, hi, step] => {
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if step == 0 || hi < lo || lo == 0 {
                return Err(CliError::config(field, format!("invalid range {s:?}")));
            }
            Ok((lo..=hi).step_by(step as usize).collect())
        }
        _ => Err(CliError::config(field, format!("expected lo:hi:step, got {s:?}"))),
    }
}

/// Accountant names: `EW` (or `edgeworth`), `PRV`, `RDP`; a comma-separated
/// list is also accepted.
pub fn parse_accountants(values: &[String]) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for v in values {
        for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let m = match name.to_ascii_lowercase().as_str() {
                "ew" | "edgeworth" | "ew-tune" => Method::Edgeworth,
                "prv" => Method::Prv,
                "rdp" => Method::Rdp,
                _ => return Err(CliError::config("accountant", format!("unknown accountant {name:?}; expected EW, PRV or RDP"))),
            };
            if !out.contains(&m) {
                out.push(m);
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::config("accountant", "accountant list is empty"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// A number or a grid string in the config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    Number(f64),
    Text(String),
}

impl GridValue {
    fn as_text(&self) -> String {
        match self {
            GridValue::Number(x) => x.to_string(),
            GridValue::Text(s) => s.clone(),
        }
    }
}

/// Keys accepted in a `--config` file; the same names as the flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub preset: Option<String>,
    pub n: Option<u64>,
    pub batch: Option<u64>,
    pub epsilon: Option<GridValue>,
    pub delta: Option<f64>,
    pub m: Option<u64>,
    pub m_sweep: Option<String>,
    pub accountant: Option<Vec<String>>,
    pub order_k: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    // validate
    pub samples: Option<u64>,
    pub berry_esseen: Option<bool>,
    // train-sim
    pub data: Option<PathBuf>,
    pub dim: Option<usize>,
    pub classes: Option<usize>,
    pub separation: Option<f64>,
    pub clip: Option<f64>,
    pub rank: Option<usize>,
    pub history_lag: Option<usize>,
    pub hidden: Option<usize>,
    pub learning_rate: Option<f64>,
    pub sigma_override: Option<f64>,
    pub no_accounting: Option<bool>,
}

impl ConfigFile {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))
    }
}

/// Flags shared by the accounting commands, after parsing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<String>,
    pub n: Option<u64>,
    pub batch: Option<u64>,
    pub epsilon: Option<String>,
    pub delta: Option<f64>,
    pub m: Option<u64>,
    pub m_sweep: Option<String>,
    pub accountant: Vec<String>,
    pub order_k: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

/// Fully resolved settings, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetConfig>,
    pub epsilons: Vec<f64>,
    pub m_values: Vec<u64>,
    pub accountants: Vec<Method>,
    pub order_k: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl ExperimentConfig {
    /// Merges flags over the config file. `default_format` and
    /// `default_accountants` apply when neither source sets them.
    pub fn resolve(flags: &Overrides, file: &ConfigFile, default_format: Format, default_accountants: &[Method]) -> Result<Self> {
        let preset = flags.preset.clone().or_else(|| file.preset.clone());
        let n = flags.n.or(file.n);
        let batch = flags.batch.or(file.batch);
        let delta = flags.delta.or(file.delta);
        if let Some(d) = delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(CliError::config("delta", format!("{d} must lie in (0, 1)")));
            }
        }
        let mut datasets = match (preset, n) {
            (Some(_), Some(_)) => return Err(CliError::config("n", "give either --preset or --n, not both")),
            (Some(p), None) => {
                let mut sets = resolve_preset(&p)?;
                if let Some(b) = batch {
                    sets.iter_mut().for_each(|s| s.batch = b);
                }
                sets
            }
            (None, Some(n)) => vec![DatasetConfig {
                name: "custom".into(),
                n,
                batch: batch.unwrap_or(DEFAULT_BATCH),
                delta: DEFAULT_CUSTOM_DELTA,
            }],
            (None, None) => presets(),
        };
        for d in &mut datasets {
            if let Some(delta) = delta {
                d.delta = delta;
            }
            if d.batch == 0 || d.batch > d.n {
                return Err(CliError::config("batch", format!("batch {} must lie in 1..={}", d.batch, d.n)));
            }
        }

        let epsilon_text = flags.epsilon.clone().or_else(|| file.epsilon.as_ref().map(GridValue::as_text));
        let epsilons = match epsilon_text {
            Some(s) => parse_real_grid("epsilon", &s)?,
            None => vec![DEFAULT_EPSILON],
        };
        if epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(CliError::config("epsilon", "every epsilon must be positive"));
        }

        let (m, sweep) = if flags.m.is_some() || flags.m_sweep.is_some() {
            (flags.m, flags.m_sweep.clone())
        } else {
            (file.m, file.m_sweep.clone())
        };
        let m_values = match (m, sweep) {
            (Some(_), Some(_)) => return Err(CliError::config("m", "give either --m or --m-sweep, not both")),
            (Some(m), None) => vec![m],
            (None, Some(s)) => parse_int_grid("m-sweep", &s)?,
            (None, None) => return Err(CliError::config("m", "the number of compositions is required (--m or --m-sweep)")),
        };
        if m_values.contains(&0) {
            return Err(CliError::config("m", "m must be at least 1"));
        }

        let accountants = if !flags.accountant.is_empty() {
            parse_accountants(&flags.accountant)?
        } else if let Some(list) = &file.accountant {
            parse_accountants(list)?
        } else {
            default_accountants.to_vec()
        };
        let order_k = flags.order_k.or(file.order_k).unwrap_or(2);
        if order_k > 2 {
            return Err(CliError::config("order-k", format!("order {order_k} not supported; use 0, 1 or 2")));
        }
        Ok(Self {
            datasets,
            epsilons,
            m_values,
            accountants,
            order_k,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            out: flags.out.clone().or_else(|| file.out.clone()),
            format: flags.format.or(file.format).unwrap_or(default_format),
        })
    }
}
