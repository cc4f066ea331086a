//! Generalized battery models for DER aggregations.
//!
//! Each aggregation of similar devices (ACs, water heaters, building HVAC,
//! refrigerators, EV fleets) is reduced to a first-order linear "virtual
//! battery": a state of charge with leakage, plus box limits on power and
//! stored energy. The state of charge is normalized so that nominal
//! (non-participating) operation sits at zero.

use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BatteryError {
    #[error("invalid parameter for class `{id}`: {reason}")]
    InvalidParams { id: String, reason: String },
    #[error("gamma must be positive (thermal capacitance over COP), got {0}")]
    NonphysicalGamma(f64),
    #[error("invalid TCL parameters: {0}")]
    InvalidTcl(String),
    #[error("{path}:{line}: {reason}")]
    FleetParse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Static parameters of one DER aggregation, modeled as a virtual battery.
///
/// Sign convention: positive power means the aggregation supplies power to
/// the grid (discharges, SoC falls); negative power means it charges.
#[derive(Debug, Clone, PartialEq)]
pub struct DerClassParams {
    /// Short identifier, e.g. "ACs".
    pub id: String,
    /// Leakage factor per step (fraction of SoC retained), in [0, 1].
    pub alpha: f64,
    /// Energy-conversion factor for one step, in hours (GW * hours = GWh).
    pub beta_hours: f64,
    /// SoC capacity C, GWh. Feasible states satisfy |x| <= C.
    pub soc_capacity_gwh: f64,
    /// Maximum discharge power relative to baseline, GW (eta+).
    pub power_max_gw: f64,
    /// Maximum charge power relative to baseline, GW (eta-).
    pub power_min_gw: f64,
    /// SoC cost weight kappa_i.
    pub kappa: f64,
}

impl DerClassParams {
    pub fn new(
        id: impl Into<String>,
        alpha: f64,
        beta_hours: f64,
        soc_capacity_gwh: f64,
        power_max_gw: f64,
        power_min_gw: f64,
        kappa: f64,
    ) -> Result<Self, BatteryError> {
        let params = Self {
            id: id.into(),
            alpha,
            beta_hours,
            soc_capacity_gwh,
            power_max_gw,
            power_min_gw,
            kappa,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), BatteryError> {
        let fail = |reason: String| BatteryError::InvalidParams {
            id: self.id.clone(),
            reason,
        };
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(fail(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.beta_hours > 0.0) {
            return Err(fail(format!("beta_hours must be > 0, got {}", self.beta_hours)));
        }
        if !(self.soc_capacity_gwh >= 0.0) {
            return Err(fail(format!(
                "soc_capacity_gwh must be >= 0, got {}",
                self.soc_capacity_gwh
            )));
        }
        if !(self.power_max_gw >= 0.0) {
            return Err(fail(format!("power_max_gw must be >= 0, got {}", self.power_max_gw)));
        }
        if !(self.power_min_gw >= 0.0) {
            return Err(fail(format!("power_min_gw must be >= 0, got {}", self.power_min_gw)));
        }
        if !(self.kappa >= 0.0) {
            return Err(fail(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Parameters of one thermostatically controlled load population, used to
/// derive aggregate virtual-battery limits.
#[derive(Debug, Clone, PartialEq)]
pub struct TclParams {
    /// Device count N.
    pub n_devices: f64,
    /// Per-step thermal factor lambda in [0, 1]; becomes the aggregate alpha.
    pub lambda_: f64,
    /// Thermal capacitance over COP, degC per GWh (per-device scale).
    pub gamma: f64,
    /// Upper temperature deadband limit, degC.
    pub theta_plus: f64,
    /// Lower temperature deadband limit, degC.
    pub theta_minus: f64,
    /// Ambient temperature, degC.
    pub theta_ambient: f64,
    /// Per-device power draw when on, GW.
    pub p_on_gw: f64,
    /// Stationary on-duration, steps.
    pub t_on: f64,
    /// Stationary off-duration, steps.
    pub t_off: f64,
}

impl TclParams {
    pub fn validate(&self) -> Result<(), BatteryError> {
        if !(self.theta_plus > self.theta_minus) {
            return Err(BatteryError::InvalidTcl(format!(
                "theta_plus ({}) must exceed theta_minus ({})",
                self.theta_plus, self.theta_minus
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_) {
            return Err(BatteryError::InvalidTcl(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda_
            )));
        }
        if !(self.t_on >= 0.0) || !(self.t_off >= 0.0) || self.t_on + self.t_off <= 0.0 {
            return Err(BatteryError::InvalidTcl(format!(
                "on/off durations must be nonnegative with t_on + t_off > 0, got ({}, {})",
                self.t_on, self.t_off
            )));
        }
        if !(self.n_devices >= 1.0) {
            return Err(BatteryError::InvalidTcl(format!(
                "n_devices must be >= 1, got {}",
                self.n_devices
            )));
        }
        Ok(())
    }
}

/// SoC of every aggregation in the fleet at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    /// One SoC value per aggregation, GWh.
    pub soc_gwh: Vec<f64>,
    /// Simulation step the state belongs to.
    pub time_index: usize,
}

impl FleetState {
    pub fn zeros(fleet_size: usize) -> Self {
        Self {
            soc_gwh: vec![0.0; fleet_size],
            time_index: 0,
        }
    }
}

impl fmt::Display for FleetState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} soc_gwh={:?}", self.time_index, self.soc_gwh)
    }
}

/// One step of the virtual-battery dynamics: x' = alpha * x - beta * p.
///
/// No clamping is applied; keeping the state inside its box is the
/// optimizer's job.
pub fn step_soc(params: &DerClassParams, x_gwh: f64, p_gw: f64) -> f64 {
    params.alpha * x_gwh - params.beta_hours * p_gw
}

/// True iff |x| <= C + tol.
pub fn check_state(params: &DerClassParams, x_gwh: f64, tol_gwh: f64) -> bool {
    x_gwh.abs() <= params.soc_capacity_gwh + tol_gwh
}

/// True iff -eta_minus - tol <= p <= eta_plus + tol.
pub fn check_power(params: &DerClassParams, p_gw: f64, tol_gw: f64) -> bool {
    -params.power_min_gw - tol_gw <= p_gw && p_gw <= params.power_max_gw + tol_gw
}

/// Per-device stationary average power: P0 = Pm * t_on / (t_on + t_off).
pub fn derive_average_power(tcl: &TclParams) -> f64 {
    tcl.p_on_gw * tcl.t_on / (tcl.t_on + tcl.t_off)
}

/// Aggregate power limits (eta_plus, eta_minus) relative to the baseline.
///
/// Turning every device off discharges the virtual battery at N*P0; turning
/// every device on charges it at N*(Pm - P0).
pub fn derive_power_limits(tcl: &TclParams) -> (f64, f64) {
    let p0 = derive_average_power(tcl);
    (tcl.n_devices * p0, tcl.n_devices * (tcl.p_on_gw - p0))
}

/// Aggregate SoC capacity C = N * (theta_plus - theta_minus) / (2 * gamma).
pub fn derive_soc_capacity(tcl: &TclParams) -> Result<f64, BatteryError> {
    if !(tcl.gamma > 0.0) {
        return Err(BatteryError::NonphysicalGamma(tcl.gamma));
    }
    Ok(tcl.n_devices * (tcl.theta_plus - tcl.theta_minus) / (2.0 * tcl.gamma))
}

/// Virtual-battery parameters derived from a TCL population.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedClass {
    pub alpha: f64,
    pub baseline_power_gw: f64,
    pub eta_plus_gw: f64,
    pub eta_minus_gw: f64,
    pub soc_capacity_gwh: f64,
}

pub fn derive_class(tcl: &TclParams) -> Result<DerivedClass, BatteryError> {
    tcl.validate()?;
    let (eta_plus, eta_minus) = derive_power_limits(tcl);
    Ok(DerivedClass {
        alpha: tcl.lambda_,
        baseline_power_gw: tcl.n_devices * derive_average_power(tcl),
        eta_plus_gw: eta_plus,
        eta_minus_gw: eta_minus,
        soc_capacity_gwh: derive_soc_capacity(tcl)?,
    })
}

/// The five stock DER aggregation classes used by the replication scenario:
/// air conditioners, electric water heaters, building HVAC, refrigerators,
/// and EV batteries. beta is 300 s (one 5-minute step) stored in hours.
pub fn stock_fleet() -> Vec<DerClassParams> {
    let beta = 300.0 / 3600.0;
    vec![
        DerClassParams::new("ACs", 0.98, beta, 8.0, 20.0, 30.0, 1.0).unwrap(),
        DerClassParams::new("E-WHs", 0.99, beta, 5.0, 4.0, 50.0, 2.0).unwrap(),
        DerClassParams::new("bldgs", 0.97, beta, 2.3, 103.0, 3.0, 5.0).unwrap(),
        DerClassParams::new("RFGs", 0.96, beta, 5.0, 2.0, 3.0, 5.0).unwrap(),
        DerClassParams::new("EVs", 0.99, beta, 50.0, 3.6, 3.6, 2.0).unwrap(),
    ]
}

/// Returns a copy of `fleet` with all power limits forced to zero, i.e. the
/// DERs-disabled baseline.
pub fn disabled_fleet(fleet: &[DerClassParams]) -> Vec<DerClassParams> {
    fleet
        .iter()
        .map(|c| DerClassParams {
            power_max_gw: 0.0,
            power_min_gw: 0.0,
            ..c.clone()
        })
        .collect()
}

/// Parses a fleet description: one whitespace-separated record per line,
/// `id alpha beta_seconds soc_capacity_gwh eta_plus_gw eta_minus_gw kappa`.
/// Blank lines and `#` comments are ignored.
pub fn parse_fleet_str(text: &str, path: &str) -> Result<Vec<DerClassParams>, BatteryError> {
    let mut fleet = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(BatteryError::FleetParse {
                path: path.to_string(),
                line: idx + 1,
                reason: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let num = |s: &str, name: &str| -> Result<f64, BatteryError> {
            s.parse::<f64>().map_err(|_| BatteryError::FleetParse {
                path: path.to_string(),
                line: idx + 1,
                reason: format!("cannot parse {name} `{s}` as a number"),
            })
        };
        let params = DerClassParams::new(
            fields[0],
            num(fields[1], "alpha")?,
            num(fields[2], "beta_seconds")? / 3600.0,
            num(fields[3], "soc_capacity_gwh")?,
            num(fields[4], "eta_plus_gw")?,
            num(fields[5], "eta_minus_gw")?,
            num(fields[6], "kappa")?,
        )
        .map_err(|e| BatteryError::FleetParse {
            path: path.to_string(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        fleet.push(params);
    }
    Ok(fleet)
}

pub fn load_fleet_file(path: impl AsRef<Path>) -> Result<Vec<DerClassParams>, BatteryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| BatteryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_fleet_str(&text, &path.display().to_string())
}

/// Parses a TCL parameter file: flat `key = value` lines with `#` comments.
/// Keys: n_devices, lambda, gamma, theta_plus, theta_minus, theta_ambient,
/// p_on_gw, t_on, t_off.
pub fn parse_tcl_str(text: &str) -> Result<TclParams, BatteryError> {
    let mut fields = std::collections::HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            BatteryError::InvalidTcl(format!("line {}: expected `key = value`", idx + 1))
        })?;
        let value: f64 = value.trim().parse().map_err(|_| {
            BatteryError::InvalidTcl(format!("line {}: cannot parse `{}`", idx + 1, value.trim()))
        })?;
        fields.insert(key.trim().to_string(), value);
    }
    let get = |key: &str| -> Result<f64, BatteryError> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| BatteryError::InvalidTcl(format!("missing key `{key}`")))
    };
    let tcl = TclParams {
        n_devices: get("n_devices")?,
        lambda_: get("lambda")?,
        gamma: get("gamma")?,
        theta_plus: get("theta_plus")?,
        theta_minus: get("theta_minus")?,
        theta_ambient: get("theta_ambient")?,
        p_on_gw: get("p_on_gw")?,
        t_on: get("t_on")?,
        t_off: get("t_off")?,
    };
    tcl.validate()?;
    Ok(tcl)
}

pub fn load_tcl_file(path: impl AsRef<Path>) -> Result<TclParams, BatteryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| BatteryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_tcl_str(&text)
}
