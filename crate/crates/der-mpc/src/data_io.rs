//! Net-demand and disturbance time-series ingestion.
//!
//! CSV schema: a header row naming the columns, then one `timestamp,value`
//! record per line. Timestamps are ISO-8601 / RFC 3339 with a fixed offset
//! (e.g. `2023-09-01T00:00:00-07:00`); values are floating point. A scale
//! factor converts source units to GW (e.g. 1e-3 for MW data). Small gaps
//! (up to 3 missing samples) are bridged by linear interpolation; longer
//! gaps are hard errors.

use std::path::Path;

use chrono::{DateTime, Duration, FixedOffset};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: timestamp not increasing")]
    NonMonotonic { path: String, line: usize },
    #[error("{path}:{line}: gap of {missing} missing samples exceeds the limit of 3")]
    GapTooLong {
        path: String,
        line: usize,
        missing: usize,
    },
    #[error("series is empty")]
    EmptySeries,
    #[error("resampling ratio between {from} s and {to} s is not integral")]
    NonIntegralRatio { from: u32, to: u32 },
    #[error("window [{t0}, {end}) is outside the series coverage of {len} steps")]
    OutOfRange { t0: usize, end: usize, len: usize },
    #[error("disturbance series does not align with the base series: {0}")]
    Misaligned(String),
}

/// Uniformly sampled net-demand (or disturbance) series.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSeries {
    pub start_time: DateTime<FixedOffset>,
    pub step_seconds: u32,
    pub values_gw: Vec<f64>,
}

impl ForecastSeries {
    pub fn len(&self) -> usize {
        self.values_gw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_gw.is_empty()
    }

    pub fn time_at(&self, step: usize) -> DateTime<FixedOffset> {
        self.start_time + Duration::seconds(step as i64 * self.step_seconds as i64)
    }
}

/// Column names and unit scale for CSV ingestion.
#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub time_column: String,
    pub value_column: String,
    /// Multiplied into every value (1e-3 converts MW to GW).
    pub scale: f64,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            time_column: "timestamp".into(),
            value_column: "value_gw".into(),
            scale: 1.0,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, spec: &ColumnSpec) -> Result<ForecastSeries, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv_str(&text, &path.display().to_string(), spec)
}

pub fn parse_csv_str(
    text: &str,
    path: &str,
    spec: &ColumnSpec,
) -> Result<ForecastSeries, DataError> {
    let parse_err = |line: usize, reason: String| DataError::Parse {
        path: path.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header row".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let time_idx = columns
        .iter()
        .position(|&c| c == spec.time_column)
        .ok_or_else(|| parse_err(1, format!("no column named `{}`", spec.time_column)))?;
    let value_idx = columns
        .iter()
        .position(|&c| c == spec.value_column)
        .ok_or_else(|| parse_err(1, format!("no column named `{}`", spec.value_column)))?;

    let mut times: Vec<(usize, DateTime<FixedOffset>)> = Vec::new();
    let mut raw: Vec<f64> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() <= time_idx.max(value_idx) {
            return Err(parse_err(
                line_no,
                format!("expected at least {} fields", time_idx.max(value_idx) + 1),
            ));
        }
        let ts = DateTime::parse_from_rfc3339(fields[time_idx])
            .map_err(|e| parse_err(line_no, format!("bad timestamp `{}`: {e}", fields[time_idx])))?;
        let value: f64 = fields[value_idx]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad number `{}`", fields[value_idx])))?;
        if !value.is_finite() {
            return Err(parse_err(line_no, format!("non-finite value `{value}`")));
        }
        times.push((line_no, ts));
        raw.push(value * spec.scale);
    }
    if raw.is_empty() {
        return Err(DataError::EmptySeries);
    }
    if raw.len() == 1 {
        return Ok(ForecastSeries {
            start_time: times[0].1,
            step_seconds: 300,
            values_gw: raw,
        });
    }

    // Base cadence = smallest spacing in the file; larger spacings are
    // treated as gaps of missing samples at that cadence.
    let mut deltas = Vec::with_capacity(raw.len() - 1);
    for k in 1..raw.len() {
        let (line_no, ts) = times[k];
        let delta = (ts - times[k - 1].1).num_seconds();
        if delta <= 0 {
            return Err(DataError::NonMonotonic {
                path: path.to_string(),
                line: line_no,
            });
        }
        deltas.push((line_no, delta));
    }
    let step = deltas.iter().map(|&(_, d)| d).min().expect("len >= 2");
    let step_seconds = step as u32;
    let mut values = vec![raw[0]];
    for k in 1..raw.len() {
        let (line_no, delta) = deltas[k - 1];
        if delta % step != 0 {
            return Err(DataError::Parse {
                path: path.to_string(),
                line: line_no,
                reason: format!("spacing {delta} s is not a multiple of the step {step} s"),
            });
        }
        let skipped = (delta / step - 1) as usize;
        if skipped > 3 {
            return Err(DataError::GapTooLong {
                path: path.to_string(),
                line: line_no,
                missing: skipped,
            });
        }
        let prev = raw[k - 1];
        for s in 1..=skipped {
            let frac = s as f64 / (skipped + 1) as f64;
            values.push(prev + frac * (raw[k] - prev));
        }
        values.push(raw[k]);
    }
    Ok(ForecastSeries {
        start_time: times[0].1,
        step_seconds,
        values_gw: values,
    })
}

/// Writes the documented CSV schema (`timestamp,value_gw`).
pub fn write_csv(series: &ForecastSeries, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut out = String::from("timestamp,value_gw\n");
    for (k, v) in series.values_gw.iter().enumerate() {
        out.push_str(&series.time_at(k).to_rfc3339());
        out.push(',');
        out.push_str(&format!("{v}\n"));
    }
    std::fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Resamples to `target_step_seconds`: linear interpolation when
/// upsampling, mean-of-bins when downsampling. The ratio between the two
/// step sizes must be integral.
pub fn resample(series: &ForecastSeries, target_step_seconds: u32) -> Result<ForecastSeries, DataError> {
    if series.is_empty() {
        return Err(DataError::EmptySeries);
    }
    let from = series.step_seconds;
    let to = target_step_seconds;
    if from == to {
        return Ok(series.clone());
    }
    let values = if from % to == 0 {
        // Upsample by an integer factor; endpoints preserved.
        let k = (from / to) as usize;
        let n = series.len();
        let mut out = Vec::with_capacity((n - 1) * k + 1);
        for i in 0..n - 1 {
            let a = series.values_gw[i];
            let b = series.values_gw[i + 1];
            for s in 0..k {
                out.push(a + (b - a) * s as f64 / k as f64);
            }
        }
        out.push(*series.values_gw.last().unwrap());
        out
    } else if to % from == 0 {
        // Downsample: mean of each bin of k samples (last bin may be short).
        let k = (to / from) as usize;
        series
            .values_gw
            .chunks(k)
            .map(|chunk| chunk.iter().sum::<f64>() / chunk.len() as f64)
            .collect()
    } else {
        return Err(DataError::NonIntegralRatio { from, to });
    };
    Ok(ForecastSeries {
        start_time: series.start_time,
        step_seconds: to,
        values_gw: values,
    })
}

/// Serves rolling forecast windows: the day-ahead base series, with the
/// realized near-term disturbance added over the head of each window.
#[derive(Debug, Clone)]
pub struct ForecastProvider {
    pub base: ForecastSeries,
    pub disturbance: Option<ForecastSeries>,
    /// Number of leading window steps that receive the disturbance.
    pub injection_window_steps: usize,
    /// When set, the disturbance perturbs the whole horizon instead of the
    /// first `injection_window_steps` steps.
    pub perturb_full_horizon: bool,
    /// Step offset of the base series start within the disturbance series.
    disturbance_offset: usize,
}

impl ForecastProvider {
    pub fn new(
        base: ForecastSeries,
        disturbance: Option<ForecastSeries>,
        injection_window_steps: usize,
    ) -> Result<Self, DataError> {
        let mut offset = 0usize;
        if let Some(d) = &disturbance {
            if d.step_seconds != base.step_seconds {
                return Err(DataError::Misaligned(format!(
                    "step {} s vs base {} s",
                    d.step_seconds, base.step_seconds
                )));
            }
            let delta = (base.start_time - d.start_time).num_seconds();
            if delta < 0 || delta % d.step_seconds as i64 != 0 {
                return Err(DataError::Misaligned(format!(
                    "start offset {delta} s is not a nonnegative multiple of the step"
                )));
            }
            offset = (delta / d.step_seconds as i64) as usize;
        }
        Ok(Self {
            base,
            disturbance,
            injection_window_steps,
            perturb_full_horizon: false,
            disturbance_offset: offset,
        })
    }

    /// True when both the base and disturbance series cover steps
    /// [0, needed_steps).
    pub fn covers(&self, needed_steps: usize) -> bool {
        if self.base.len() < needed_steps {
            return false;
        }
        match &self.disturbance {
            Some(d) => d.len() >= self.disturbance_offset + needed_steps,
            None => true,
        }
    }

    /// Forecast window of length `tau` starting at step `t0`: the base
    /// forecast plus the disturbance over the injection head.
    pub fn window(&self, t0: usize, tau: usize) -> Result<Vec<f64>, DataError> {
        let end = t0 + tau;
        if end > self.base.len() {
            return Err(DataError::OutOfRange {
                t0,
                end,
                len: self.base.len(),
            });
        }
        let mut out = self.base.values_gw[t0..end].to_vec();
        if let Some(d) = &self.disturbance {
            let head = if self.perturb_full_horizon {
                tau
            } else {
                self.injection_window_steps.min(tau)
            };
            let d_end = self.disturbance_offset + t0 + head;
            if d_end > d.len() {
                return Err(DataError::OutOfRange {
                    t0,
                    end: d_end,
                    len: d.len(),
                });
            }
            for k in 0..head {
                out[k] += d.values_gw[self.disturbance_offset + t0 + k];
            }
        }
        Ok(out)
    }
}
