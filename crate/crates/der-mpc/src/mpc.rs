//! Finite-horizon QP assembly and the receding-horizon control loop.
//!
//! Each iteration solves, over a window of `horizon_steps` samples,
//!
//! ```text
//!   minimize    sum_t [ 1/2 kappa_g (g(t) - lbar)^2 + sum_i 1/2 kappa_i x_i(t)^2 ]
//!   subject to  l(t) = g(t) + sum_i p_i(t)            (power balance)
//!               x_i(t+1) = alpha_i x_i(t) - beta p_i(t)
//!               |x_i(t)| <= C_i,  -eta_i^- <= p_i(t) <= eta_i^+
//!               x_i(t0) = current state
//! ```
//!
//! then commits the first `shift_steps` inputs and advances. `lbar` is the
//! mean of the current forecast window unless an override is supplied.
//!
//! Decision-variable ordering (stable, relied on by warm starts and tests):
//! the M initial-state variables x_i(t0) first, then one block per horizon
//! step t holding `g(t), p_1(t)..p_M(t), x_1(t+1)..x_M(t+1)`. Constraints
//! are ordered as the M initial-state pins, then per step `balance(t),
//! dynamics_1(t)..dynamics_M(t)`.

use thiserror::Error;

use crate::battery::{step_soc, DerClassParams, FleetState};
use crate::data_io::{DataError, ForecastProvider};
use crate::qp::{
    CscMatrix, QpError, QpProblem, QpSolution, Settings, SolverWorkspace, Status, WarmStart,
};

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("invalid MPC configuration: {0}")]
    InvalidConfig(String),
    #[error("initial state of class {index} ({soc} GWh) exceeds its capacity {capacity} GWh")]
    InfeasibleInitialState {
        index: usize,
        soc: f64,
        capacity: f64,
    },
    #[error("forecast window has {got} samples, expected {expected}")]
    ForecastLength { got: usize, expected: usize },
    #[error("fleet is empty")]
    EmptyFleet,
    #[error("QP solve failed at t0 = {t0}: status {status}, primal residual {primal:.3e}, dual residual {dual:.3e} after {iterations} iterations")]
    SolverFailure {
        t0: usize,
        status: Status,
        primal: f64,
        dual: f64,
        iterations: usize,
    },
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Receding-horizon controller configuration.
#[derive(Debug, Clone)]
pub struct MpcConfig {
    /// Look-ahead horizon tau, in steps (288 for 24 h at 5-minute steps).
    pub horizon_steps: usize,
    /// Shift t_s between successive iterations, in steps (6 for 30 min).
    pub shift_steps: usize,
    /// Generation cost weight kappa_g.
    pub kappa_g: f64,
    /// Step length in hours (1/12 for 5-minute steps).
    pub step_hours: f64,
    /// Fixed generation set-point; defaults to the window mean.
    pub lbar_override: Option<f64>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon_steps: 288,
            shift_steps: 6,
            kappa_g: 10.0,
            step_hours: 300.0 / 3600.0,
            lbar_override: None,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        if self.shift_steps == 0 || self.shift_steps > self.horizon_steps {
            return Err(MpcError::InvalidConfig(format!(
                "shift_steps must satisfy 0 < t_s <= tau, got t_s = {} and tau = {}",
                self.shift_steps, self.horizon_steps
            )));
        }
        if !(self.kappa_g >= 0.0) {
            return Err(MpcError::InvalidConfig(format!(
                "kappa_g must be >= 0, got {}",
                self.kappa_g
            )));
        }
        if !(self.step_hours > 0.0) {
            return Err(MpcError::InvalidConfig(format!(
                "step_hours must be > 0, got {}",
                self.step_hours
            )));
        }
        Ok(())
    }
}

/// Index arithmetic for the documented variable and constraint ordering.
#[derive(Debug, Clone, Copy)]
pub struct VariableLayout {
    pub fleet_size: usize,
    pub horizon: usize,
}

impl VariableLayout {
    pub fn num_vars(&self) -> usize {
        self.fleet_size + self.horizon * (2 * self.fleet_size + 1)
    }

    pub fn num_constraints(&self) -> usize {
        self.fleet_size + self.horizon * (self.fleet_size + 1)
    }

    /// Initial-state variable x_i(t0).
    pub fn x0(&self, i: usize) -> usize {
        i
    }

    pub fn g(&self, t: usize) -> usize {
        self.fleet_size + t * (2 * self.fleet_size + 1)
    }

    pub fn p(&self, i: usize, t: usize) -> usize {
        self.g(t) + 1 + i
    }

    /// State variable x_i(t) for t >= 1 (x_i(t0) lives at `x0`).
    pub fn x(&self, i: usize, t: usize) -> usize {
        debug_assert!(t >= 1);
        self.g(t - 1) + 1 + self.fleet_size + i
    }

    pub fn row_init(&self, i: usize) -> usize {
        i
    }

    pub fn row_balance(&self, t: usize) -> usize {
        self.fleet_size + t * (self.fleet_size + 1)
    }

    pub fn row_dynamics(&self, i: usize, t: usize) -> usize {
        self.row_balance(t) + 1 + i
    }
}

/// Builds the horizon QP for the given fleet, state and forecast window.
pub fn build_qp(
    fleet: &[DerClassParams],
    x0: &FleetState,
    forecast_window: &[f64],
    config: &MpcConfig,
) -> Result<QpProblem, MpcError> {
    config.validate()?;
    if fleet.is_empty() {
        return Err(MpcError::EmptyFleet);
    }
    let m = fleet.len();
    let tau = config.horizon_steps;
    if forecast_window.len() != tau {
        return Err(MpcError::ForecastLength {
            got: forecast_window.len(),
            expected: tau,
        });
    }
    if x0.soc_gwh.len() != m {
        return Err(MpcError::InvalidConfig(format!(
            "state has {} entries for a fleet of {m}",
            x0.soc_gwh.len()
        )));
    }
    for (i, (&soc, class)) in x0.soc_gwh.iter().zip(fleet).enumerate() {
        if soc.abs() > class.soc_capacity_gwh {
            return Err(MpcError::InfeasibleInitialState {
                index: i,
                soc,
                capacity: class.soc_capacity_gwh,
            });
        }
    }

    let layout = VariableLayout {
        fleet_size: m,
        horizon: tau,
    };
    let n = layout.num_vars();
    let lbar = config
        .lbar_override
        .unwrap_or_else(|| forecast_window.iter().sum::<f64>() / tau as f64);

    // Diagonal quadratic cost: kappa_g on g(t), kappa_i on x_i(t) for
    // t in [t0, t0 + tau - 1]; the final state x_i(t0 + tau) is unpenalized.
    let mut p_diag = vec![0.0; n];
    let mut q = vec![0.0; n];
    for t in 0..tau {
        p_diag[layout.g(t)] = config.kappa_g;
        q[layout.g(t)] = -config.kappa_g * lbar;
    }
    for (i, class) in fleet.iter().enumerate() {
        p_diag[layout.x0(i)] = class.kappa;
        for t in 1..tau {
            p_diag[layout.x(i, t)] = class.kappa;
        }
    }

    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut rhs = vec![0.0; layout.num_constraints()];
    for i in 0..m {
        triplets.push((layout.row_init(i), layout.x0(i), 1.0));
        rhs[layout.row_init(i)] = x0.soc_gwh[i];
    }
    for t in 0..tau {
        let bal = layout.row_balance(t);
        triplets.push((bal, layout.g(t), 1.0));
        rhs[bal] = forecast_window[t];
        for (i, class) in fleet.iter().enumerate() {
            triplets.push((bal, layout.p(i, t), 1.0));
            let dyn_row = layout.row_dynamics(i, t);
            triplets.push((dyn_row, layout.x(i, t + 1), 1.0));
            triplets.push((dyn_row, layout.p(i, t), class.beta_hours));
            let x_prev = if t == 0 { layout.x0(i) } else { layout.x(i, t) };
            triplets.push((dyn_row, x_prev, -class.alpha));
        }
    }

    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    for (i, class) in fleet.iter().enumerate() {
        lower[layout.x0(i)] = -class.soc_capacity_gwh;
        upper[layout.x0(i)] = class.soc_capacity_gwh;
        for t in 0..tau {
            lower[layout.p(i, t)] = -class.power_min_gw;
            upper[layout.p(i, t)] = class.power_max_gw;
            lower[layout.x(i, t + 1)] = -class.soc_capacity_gwh;
            upper[layout.x(i, t + 1)] = class.soc_capacity_gwh;
        }
    }

    Ok(QpProblem {
        num_vars: n,
        quadratic: CscMatrix::diagonal(&p_diag),
        linear: q,
        eq_matrix: CscMatrix::from_triplets(layout.num_constraints(), n, &triplets),
        eq_rhs: rhs,
        bound_lower: lower,
        bound_upper: upper,
    })
}

/// Decoded trajectories of one horizon solve.
#[derive(Debug, Clone)]
pub struct HorizonPlan {
    /// Bulk generation over the horizon, GW.
    pub g: Vec<f64>,
    /// Per-class power trajectories, fleet_size x tau, GW.
    pub p: Vec<Vec<f64>>,
    /// Per-class SoC trajectories, fleet_size x (tau + 1), GWh; entry 0 is
    /// the supplied initial state as seen by the solver.
    pub x: Vec<Vec<f64>>,
    pub objective: f64,
    /// Window-mean set-point the plan was built against, GW.
    pub lbar: f64,
    pub solution: QpSolution,
}

impl HorizonPlan {
    fn decode(
        solution: QpSolution,
        layout: VariableLayout,
        lbar: f64,
    ) -> Self {
        let tau = layout.horizon;
        let m = layout.fleet_size;
        let z = &solution.z;
        let g = (0..tau).map(|t| z[layout.g(t)]).collect();
        let p = (0..m)
            .map(|i| (0..tau).map(|t| z[layout.p(i, t)]).collect())
            .collect();
        let x = (0..m)
            .map(|i| {
                std::iter::once(z[layout.x0(i)])
                    .chain((1..=tau).map(|t| z[layout.x(i, t)]))
                    .collect()
            })
            .collect();
        Self {
            g,
            p,
            x,
            objective: solution.objective_value,
            lbar,
            solution,
        }
    }

    /// Largest balance-constraint residual over the first `steps` horizon
    /// steps of the plan.
    pub fn balance_residual(&self, window: &[f64], steps: usize) -> f64 {
        (0..steps.min(self.g.len()))
            .map(|t| {
                let p_total: f64 = self.p.iter().map(|pi| pi[t]).sum();
                (window[t] - self.g[t] - p_total).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// One-shot horizon plan (no workspace reuse).
pub fn plan_horizon(
    fleet: &[DerClassParams],
    x0: &FleetState,
    forecast_window: &[f64],
    config: &MpcConfig,
    settings: &Settings,
) -> Result<HorizonPlan, MpcError> {
    let problem = build_qp(fleet, x0, forecast_window, config)?;
    let mut ws = SolverWorkspace::new(&problem, settings.clone())?;
    solve_plan(&mut ws, &problem, fleet, forecast_window, config, None, 0)
}

fn solve_plan(
    ws: &mut SolverWorkspace,
    problem: &QpProblem,
    fleet: &[DerClassParams],
    forecast_window: &[f64],
    config: &MpcConfig,
    warm: Option<&WarmStart>,
    t0: usize,
) -> Result<HorizonPlan, MpcError> {
    let solution = ws.solve(problem, warm)?;
    if solution.status != Status::Optimal {
        return Err(MpcError::SolverFailure {
            t0,
            status: solution.status,
            primal: solution.primal_residual,
            dual: solution.dual_residual,
            iterations: solution.iterations,
        });
    }
    let layout = VariableLayout {
        fleet_size: fleet.len(),
        horizon: config.horizon_steps,
    };
    let lbar = config
        .lbar_override
        .unwrap_or_else(|| forecast_window.iter().sum::<f64>() / forecast_window.len() as f64);
    Ok(HorizonPlan::decode(solution, layout, lbar))
}

/// Objective value of the feasible null policy (p = 0, g tracks the
/// forecast, states roll forward under leakage alone).
pub fn null_policy_objective(
    fleet: &[DerClassParams],
    x0: &FleetState,
    forecast_window: &[f64],
    problem: &QpProblem,
) -> f64 {
    let layout = VariableLayout {
        fleet_size: fleet.len(),
        horizon: forecast_window.len(),
    };
    let mut z = vec![0.0; layout.num_vars()];
    for (i, class) in fleet.iter().enumerate() {
        let mut soc = x0.soc_gwh[i];
        z[layout.x0(i)] = soc;
        for t in 1..=layout.horizon {
            soc = step_soc(class, soc, 0.0);
            z[layout.x(i, t)] = soc;
        }
    }
    for (t, &l) in forecast_window.iter().enumerate() {
        z[layout.g(t)] = l;
    }
    problem.objective(&z)
}

/// Output of one receding-horizon iteration.
#[derive(Debug, Clone)]
pub struct MpcStep {
    /// Start step of the iteration.
    pub t0: usize,
    /// Committed power inputs, fleet_size x shift_steps, clamped to each
    /// class's power box.
    pub applied_power_gw: Vec<Vec<f64>>,
    /// Forecast values the committed inputs were balanced against.
    pub window_head_gw: Vec<f64>,
    /// Fleet state after applying the committed inputs.
    pub state_after: FleetState,
    /// Objective of the feasible null policy on this window.
    pub null_objective: f64,
    /// Largest balance residual of the plan over the committed steps, GW.
    pub applied_balance_residual_gw: f64,
    pub plan: HorizonPlan,
}

/// The sequential receding-horizon loop. Holds the current state, the warm
/// start carried between iterations, and the cached KKT factorization.
pub struct MpcLoop {
    fleet: Vec<DerClassParams>,
    config: MpcConfig,
    settings: Settings,
    state: FleetState,
    t0: usize,
    warm: Option<WarmStart>,
    workspace: Option<SolverWorkspace>,
}

impl MpcLoop {
    pub fn new(
        fleet: Vec<DerClassParams>,
        config: MpcConfig,
        settings: Settings,
        initial_state: FleetState,
    ) -> Result<Self, MpcError> {
        config.validate()?;
        if fleet.is_empty() {
            return Err(MpcError::EmptyFleet);
        }
        Ok(Self {
            fleet,
            config,
            settings,
            state: initial_state,
            t0: 0,
            warm: None,
            workspace: None,
        })
    }

    pub fn state(&self) -> &FleetState {
        &self.state
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn fleet(&self) -> &[DerClassParams] {
        &self.fleet
    }

    /// Runs one iteration: plan over [t0, t0 + tau), commit the first t_s
    /// inputs, advance the state and the clock, keep the shifted plan as
    /// the next warm start.
    pub fn step(&mut self, provider: &ForecastProvider) -> Result<MpcStep, MpcError> {
        let tau = self.config.horizon_steps;
        let ts = self.config.shift_steps;
        let t0 = self.t0;
        let window = provider.window(t0, tau)?;
        let problem = build_qp(&self.fleet, &self.state, &window, &self.config)?;
        if self.workspace.is_none() {
            self.workspace = Some(SolverWorkspace::new(&problem, self.settings.clone())?);
        }
        let ws = self.workspace.as_mut().expect("workspace initialized");
        let plan = solve_plan(
            ws,
            &problem,
            &self.fleet,
            &window,
            &self.config,
            self.warm.as_ref(),
            t0,
        )?;
        let null_objective = null_policy_objective(&self.fleet, &self.state, &window, &problem);

        // Commit the first t_s inputs. Planned values within solver
        // tolerance of a bound are snapped onto it, so saturated devices
        // saturate exactly.
        let mut applied: Vec<Vec<f64>> = Vec::with_capacity(self.fleet.len());
        let mut new_soc = self.state.soc_gwh.clone();
        for (i, class) in self.fleet.iter().enumerate() {
            let mut row = Vec::with_capacity(ts);
            for t in 0..ts {
                let p = plan.p[i][t].clamp(-class.power_min_gw, class.power_max_gw);
                // A physical device cannot hold charge beyond its capacity:
                // clip the numerical overshoot a finite-tolerance plan can
                // leave, so saturated devices saturate exactly.
                new_soc[i] = step_soc(class, new_soc[i], p)
                    .clamp(-class.soc_capacity_gwh, class.soc_capacity_gwh);
                row.push(p);
            }
            applied.push(row);
        }
        let state_after = FleetState {
            soc_gwh: new_soc,
            time_index: t0 + ts,
        };
        let applied_balance_residual_gw = plan.balance_residual(&window, ts);

        self.warm = Some(shift_warm_start(
            &plan.solution,
            VariableLayout {
                fleet_size: self.fleet.len(),
                horizon: tau,
            },
            ts,
        ));
        self.state = state_after.clone();
        self.t0 = t0 + ts;

        Ok(MpcStep {
            t0,
            applied_power_gw: applied,
            window_head_gw: window[..ts].to_vec(),
            state_after,
            null_objective,
            applied_balance_residual_gw,
            plan,
        })
    }
}

/// Shifts a horizon solution by `shift` steps for use as the next
/// iteration's warm start; the tail is padded by repeating the last step.
pub fn shift_warm_start(
    solution: &QpSolution,
    layout: VariableLayout,
    shift: usize,
) -> WarmStart {
    let tau = layout.horizon;
    let m = layout.fleet_size;
    let src_t = |t: usize| (t + shift).min(tau - 1);
    let mut z = vec![0.0; layout.num_vars()];
    let mut y = vec![0.0; layout.num_constraints() + layout.num_vars()];
    let n_eq = layout.num_constraints();

    for i in 0..m {
        let x_src = shift.min(tau); // previous x_i(t0 + shift)
        z[layout.x0(i)] = if x_src == 0 {
            solution.z[layout.x0(i)]
        } else {
            solution.z[layout.x(i, x_src)]
        };
        y[layout.row_init(i)] = solution.dual_eq[layout.row_init(i)];
        y[n_eq + layout.x0(i)] = solution.dual_bounds[layout.x0(i)];
    }
    for t in 0..tau {
        let s = src_t(t);
        z[layout.g(t)] = solution.z[layout.g(s)];
        y[n_eq + layout.g(t)] = solution.dual_bounds[layout.g(s)];
        y[layout.row_balance(t)] = solution.dual_eq[layout.row_balance(s)];
        for i in 0..m {
            z[layout.p(i, t)] = solution.z[layout.p(i, s)];
            y[n_eq + layout.p(i, t)] = solution.dual_bounds[layout.p(i, s)];
            let x_src = (t + 1 + shift).min(tau);
            z[layout.x(i, t + 1)] = solution.z[layout.x(i, x_src)];
            y[n_eq + layout.x(i, t + 1)] = solution.dual_bounds[layout.x(i, x_src)];
            y[layout.row_dynamics(i, t)] = solution.dual_eq[layout.row_dynamics(i, s)];
        }
    }
    WarmStart { z, y }
}
