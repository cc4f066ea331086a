//! Flat key-value run configuration for the command-line tool.
//!
//! Format: one `key = value` pair per line; `#` starts a comment; unknown
//! keys are rejected with the offending line number. Every parameter is a
//! scalar or a path, so no nested schema is needed. Command-line flags
//! strictly shadow file values.

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("config line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: invalid value for {key}: {value:?}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("referenced path does not exist: {path}")]
    MissingPath { path: String },
    #[error("no net-demand source: set net_demand_csv or synthetic = true")]
    NoDemandSource,
}

/// Resolved run configuration after merging the file with flag overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Fleet description file; built-in five-class stock fleet when unset.
    pub fleet_file: Option<PathBuf>,
    /// Net-demand forecast CSV; required unless `synthetic` is set.
    pub net_demand_csv: Option<PathBuf>,
    pub disturbance_csv: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Planning horizon, hours.
    pub tau_hours: f64,
    /// Commitment interval, minutes.
    pub shift_minutes: f64,
    pub kappa_g: f64,
    /// Solver tolerance (used for both primal and dual checks).
    pub tol: f64,
    /// Closed-loop duration, days.
    pub duration_days: f64,
    /// Use the built-in synthetic two-peak scenario instead of a CSV.
    pub synthetic: bool,
    /// Seed for the synthetic scenario's noise.
    pub seed: u64,
    /// Synthetic per-sample noise amplitude, GW.
    pub noise_gw: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fleet_file: None,
            net_demand_csv: None,
            disturbance_csv: None,
            out_dir: PathBuf::from("out"),
            tau_hours: 24.0,
            shift_minutes: 30.0,
            kappa_g: 10.0,
            tol: 1e-6,
            duration_days: 7.0,
            synthetic: false,
            seed: 1,
            noise_gw: 0.3,
        }
    }
}

/// Optional per-field flag overrides; `Some` shadows the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub net_demand_csv: Option<PathBuf>,
    pub disturbance_csv: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub tau_hours: Option<f64>,
    pub shift_minutes: Option<f64>,
    pub kappa_g: Option<f64>,
    pub tol: Option<f64>,
    pub synthetic: bool,
}

impl RunConfig {
    /// Parses the flat key-value text; values are trimmed, `#` comments and
    /// blank lines skipped.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |key: &str, value: &str| ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
            };
            let parse_f64 =
                |key: &str, value: &str| value.parse::<f64>().map_err(|_| bad(key, value));
            match key {
                "fleet_file" => config.fleet_file = Some(PathBuf::from(value)),
                "net_demand_csv" => config.net_demand_csv = Some(PathBuf::from(value)),
                "disturbance_csv" => config.disturbance_csv = Some(PathBuf::from(value)),
                "out_dir" => config.out_dir = PathBuf::from(value),
                "tau_hours" => config.tau_hours = parse_f64(key, value)?,
                "shift_minutes" => config.shift_minutes = parse_f64(key, value)?,
                "kappa_g" => config.kappa_g = parse_f64(key, value)?,
                "tol" => config.tol = parse_f64(key, value)?,
                "duration_days" => config.duration_days = parse_f64(key, value)?,
                "noise_gw" => config.noise_gw = parse_f64(key, value)?,
                "seed" => {
                    config.seed = value.parse::<u64>().map_err(|_| bad(key, value))?;
                }
                "synthetic" => {
                    config.synthetic = match value {
                        "true" | "1" | "yes" => true,
                        "false" | "0" | "no" => false,
                        _ => return Err(bad(key, value)),
                    };
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
            }
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_str(&text)
    }

    /// Applies flag overrides; `Some` flags strictly shadow file values.
    pub fn apply(&mut self, over: &Overrides) {
        if let Some(v) = &over.net_demand_csv {
            self.net_demand_csv = Some(v.clone());
        }
        if let Some(v) = &over.disturbance_csv {
            self.disturbance_csv = Some(v.clone());
        }
        if let Some(v) = &over.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = over.tau_hours {
            self.tau_hours = v;
        }
        if let Some(v) = over.shift_minutes {
            self.shift_minutes = v;
        }
        if let Some(v) = over.kappa_g {
            self.kappa_g = v;
        }
        if let Some(v) = over.tol {
            self.tol = v;
        }
        if over.synthetic {
            self.synthetic = true;
        }
    }

    /// Checks referenced paths exist and a demand source is configured.
    pub fn validate_paths(&self) -> Result<(), ConfigError> {
        let check = |p: &Option<PathBuf>| -> Result<(), ConfigError> {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(ConfigError::MissingPath {
                        path: p.display().to_string(),
                    });
                }
            }
            Ok(())
        };
        check(&self.fleet_file)?;
        if !self.synthetic {
            if self.net_demand_csv.is_none() {
                return Err(ConfigError::NoDemandSource);
            }
            check(&self.net_demand_csv)?;
            check(&self.disturbance_csv)?;
        }
        Ok(())
    }
}
