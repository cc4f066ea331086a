//! Convex quadratic programming in the standard form
//!
//! ```text
//!     minimize    1/2 z' P z + q' z
//!     subject to  A z = b
//!                 l <= z <= u
//! ```
//!
//! solved by operator splitting (an alternating-direction method) with a
//! cached sparse LDL^T factorization of the KKT system. The factorization
//! depends only on P, A and the penalty parameters, so it is reused across
//! solves that change only q, b and the warm start -- the receding-horizon
//! loop hits exactly that case. A polish step refines the iterate to
//! machine-precision KKT residuals once the active set has settled.

mod ldl;
mod sparse;

pub use sparse::CscMatrix;

use std::io::Write;

use thiserror::Error;

use ldl::{rcm_order, LdlFactor};

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("quadratic term is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("quadratic term is not positive semidefinite")]
    NotPsd,
    #[error("bound_lower[{index}] = {lower} exceeds bound_upper[{index}] = {upper}")]
    InvertedBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("KKT factorization failed: {0}")]
    Factorization(#[from] ldl::LdlError),
    #[error("workspace was built for a different problem structure")]
    StructureMismatch,
}

/// A convex QP instance. See the module docs for the standard form.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub num_vars: usize,
    /// Symmetric PSD cost matrix P (full symmetric storage).
    pub quadratic: CscMatrix,
    /// Cost vector q.
    pub linear: Vec<f64>,
    /// Equality constraint matrix A (m_eq x n). May have zero rows.
    pub eq_matrix: CscMatrix,
    /// Equality right-hand side b.
    pub eq_rhs: Vec<f64>,
    /// Elementwise lower bounds; -inf allowed.
    pub bound_lower: Vec<f64>,
    /// Elementwise upper bounds; +inf allowed.
    pub bound_upper: Vec<f64>,
}

impl QpProblem {
    pub fn num_eq(&self) -> usize {
        self.eq_matrix.nrows
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars;
        let check = |len: usize, name: &str| {
            if len != n {
                Err(QpError::Dimension(format!("{name} has length {len}, expected {n}")))
            } else {
                Ok(())
            }
        };
        check(self.linear.len(), "linear")?;
        check(self.bound_lower.len(), "bound_lower")?;
        check(self.bound_upper.len(), "bound_upper")?;
        if self.quadratic.nrows != n || self.quadratic.ncols != n {
            return Err(QpError::Dimension(format!(
                "quadratic is {}x{}, expected {n}x{n}",
                self.quadratic.nrows, self.quadratic.ncols
            )));
        }
        if self.eq_matrix.ncols != n {
            return Err(QpError::Dimension(format!(
                "eq_matrix has {} columns, expected {n}",
                self.eq_matrix.ncols
            )));
        }
        if self.eq_rhs.len() != self.eq_matrix.nrows {
            return Err(QpError::Dimension(format!(
                "eq_rhs has length {}, expected {}",
                self.eq_rhs.len(),
                self.eq_matrix.nrows
            )));
        }
        for i in 0..n {
            if self.bound_lower[i] > self.bound_upper[i] {
                return Err(QpError::InvertedBounds {
                    index: i,
                    lower: self.bound_lower[i],
                    upper: self.bound_upper[i],
                });
            }
        }
        let scale = self
            .quadratic
            .values
            .iter()
            .fold(1.0f64, |m, v| m.max(v.abs()));
        let asym = self.quadratic.max_abs_diff(&self.quadratic.transpose());
        if asym > 1e-10 * scale {
            return Err(QpError::NotSymmetric(asym));
        }
        self.check_psd(scale)?;
        Ok(())
    }

    /// PSD check: Gershgorin fast path, dense Cholesky fallback for small n.
    fn check_psd(&self, scale: f64) -> Result<(), QpError> {
        let n = self.num_vars;
        let tol = 1e-9 * scale;
        let mut diag = vec![0.0f64; n];
        let mut offdiag = vec![0.0f64; n];
        for (i, j, v) in self.quadratic.triplets() {
            if i == j {
                diag[i] += v;
            } else {
                offdiag[i] += v.abs();
            }
        }
        let gershgorin_ok = (0..n).all(|i| diag[i] - offdiag[i] >= -tol);
        if gershgorin_ok {
            return Ok(());
        }
        if n <= 512 {
            if dense_cholesky_psd(&self.quadratic, tol) {
                return Ok(());
            }
            return Err(QpError::NotPsd);
        }
        // Large and not diagonally dominant: reject rather than guess.
        Err(QpError::NotPsd)
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let pz = self.quadratic.mul_vec(z);
        0.5 * dot(&pz, z) + dot(&self.linear, z)
    }
}

fn dense_cholesky_psd(p: &CscMatrix, tol: f64) -> bool {
    let n = p.nrows;
    let mut a = vec![0.0f64; n * n];
    for (i, j, v) in p.triplets() {
        a[i * n + j] += v;
    }
    // Cholesky on A + tol*I; success implies eigenvalues >= -tol.
    for i in 0..n {
        a[i * n + i] += tol;
    }
    for k in 0..n {
        let mut d = a[k * n + k];
        for j in 0..k {
            d -= a[k * n + j] * a[k * n + j];
        }
        if d <= 0.0 {
            return false;
        }
        let d = d.sqrt();
        a[k * n + k] = d;
        for i in (k + 1)..n {
            let mut v = a[i * n + k];
            for j in 0..k {
                v -= a[i * n + j] * a[k * n + j];
            }
            a[i * n + k] = v / d;
        }
    }
    true
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    MaxIterations,
    Infeasible,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Status::Optimal => write!(f, "optimal"),
            Status::MaxIterations => write!(f, "max-iterations"),
            Status::Infeasible => write!(f, "infeasible"),
        }
    }
}

/// Primal/dual pair usable to warm-start a solve.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub z: Vec<f64>,
    /// Multipliers for the equality rows followed by the bound rows
    /// (length m_eq + n).
    pub y: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub max_iterations: usize,
    /// Base penalty for the bound rows; equality rows use rho * rho_eq_scale.
    pub rho: f64,
    pub rho_eq_scale: f64,
    pub sigma: f64,
    pub relaxation: f64,
    pub check_interval: usize,
    pub polish: bool,
    /// Residual level at which an early polish attempt is made.
    pub polish_trigger: f64,
    /// No residual improvement over this many iterations (while still above
    /// 10x the tolerance) triggers the stall rescue: a polish attempt, then
    /// stiffer penalties, then an honest MaxIterations report.
    pub stall_window: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            eps_primal: 1e-6,
            eps_dual: 1e-6,
            max_iterations: 50_000,
            rho: 1.0,
            rho_eq_scale: 1e3,
            sigma: 1e-6,
            relaxation: 1.6,
            check_interval: 25,
            polish: true,
            polish_trigger: 1e-3,
            stall_window: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub objective_value: f64,
    /// max of equality residual and bound violation at z, inf-norm.
    pub primal_residual: f64,
    /// stationarity residual ||P z + q + A' nu + y_bounds||_inf, including
    /// the complementary-slackness residual of the bound multipliers.
    pub dual_residual: f64,
    pub iterations: usize,
    pub status: Status,
    /// Equality multipliers nu.
    pub dual_eq: Vec<f64>,
    /// Bound multipliers (one per variable; >= 0 pushes at the upper bound,
    /// <= 0 at the lower bound).
    pub dual_bounds: Vec<f64>,
}

/// Per-constraint-group residual report for an arbitrary candidate point.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub max_eq_residual: f64,
    pub max_bound_violation: f64,
    pub objective_value: f64,
}

/// Computes residuals of `z` against the problem's constraint groups.
pub fn validate_solution(problem: &QpProblem, z: &[f64]) -> Result<ValidationReport, QpError> {
    if z.len() != problem.num_vars {
        return Err(QpError::Dimension(format!(
            "candidate has length {}, expected {}",
            z.len(),
            problem.num_vars
        )));
    }
    let mut eq = problem.eq_matrix.mul_vec(z);
    for (r, b) in eq.iter_mut().zip(&problem.eq_rhs) {
        *r -= b;
    }
    let mut bound_violation = 0.0f64;
    for i in 0..problem.num_vars {
        bound_violation = bound_violation
            .max(problem.bound_lower[i] - z[i])
            .max(z[i] - problem.bound_upper[i]);
    }
    Ok(ValidationReport {
        max_eq_residual: inf_norm(&eq),
        max_bound_violation: bound_violation.max(0.0),
        objective_value: problem.objective(z),
    })
}

/// Writes the problem in a plain-text triplet format for offline inspection.
///
/// Format: a header line, then sections `P`, `q`, `A`, `b`, `bounds`; matrix
/// sections list `row col value` triplets, vector sections one value per
/// line, bounds as `lower upper` with `-inf`/`inf` for absent bounds.
pub fn dump_problem(problem: &QpProblem, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "qp-triplets v1 vars={} eq={}",
        problem.num_vars,
        problem.num_eq()
    )?;
    writeln!(out, "P {}", problem.quadratic.nnz())?;
    for (i, j, v) in problem.quadratic.triplets() {
        writeln!(out, "{i} {j} {v}")?;
    }
    writeln!(out, "q {}", problem.linear.len())?;
    for v in &problem.linear {
        writeln!(out, "{v}")?;
    }
    writeln!(out, "A {}", problem.eq_matrix.nnz())?;
    for (i, j, v) in problem.eq_matrix.triplets() {
        writeln!(out, "{i} {j} {v}")?;
    }
    writeln!(out, "b {}", problem.eq_rhs.len())?;
    for v in &problem.eq_rhs {
        writeln!(out, "{v}")?;
    }
    writeln!(out, "bounds {}", problem.num_vars)?;
    let fmt_bound = |v: f64| {
        if v == f64::INFINITY {
            "inf".to_string()
        } else if v == f64::NEG_INFINITY {
            "-inf".to_string()
        } else {
            format!("{v}")
        }
    };
    for i in 0..problem.num_vars {
        writeln!(
            out,
            "{} {}",
            fmt_bound(problem.bound_lower[i]),
            fmt_bound(problem.bound_upper[i])
        )?;
    }
    Ok(())
}

/// Reusable solver state: the KKT factorization and iteration buffers.
///
/// The factorization depends on P, A, sigma and the penalty vector only;
/// successive solves may change q, b, bounds and the warm start freely.
pub struct SolverWorkspace {
    settings: Settings,
    n: usize,
    m_eq: usize,
    kkt: LdlFactor,
    /// Penalty per constraint row (m_eq equality rows then n bound rows).
    rho: Vec<f64>,
    /// Fill-reducing permutation, reused when the penalties are rescaled
    /// (the sparsity pattern never changes).
    perm: Vec<usize>,
    p_nnz: usize,
    a_nnz: usize,
    scratch: Vec<f64>,
}

/// Upper triangle of the KKT matrix
///   [ P + sigma I    A'          I        ]
///   [ A           -1/rho_eq I    0        ]
///   [ I               0       -1/rho_b I  ]
fn kkt_upper(problem: &QpProblem, sigma: f64, rho: &[f64]) -> (usize, Vec<(usize, usize, f64)>) {
    let n = problem.num_vars;
    let m_eq = problem.num_eq();
    let dim = n + m_eq + n;
    let mut upper: Vec<(usize, usize, f64)> = Vec::new();
    for (i, j, v) in problem.quadratic.triplets() {
        if i <= j {
            upper.push((i, j, v));
        }
    }
    for i in 0..n {
        upper.push((i, i, sigma));
    }
    for (r, j, v) in problem.eq_matrix.triplets() {
        upper.push((j, n + r, v));
    }
    for r in 0..m_eq {
        upper.push((n + r, n + r, -1.0 / rho[r]));
    }
    for i in 0..n {
        upper.push((i, n + m_eq + i, 1.0));
        upper.push((n + m_eq + i, n + m_eq + i, -1.0 / rho[m_eq + i]));
    }
    (dim, upper)
}

impl SolverWorkspace {
    pub fn new(problem: &QpProblem, settings: Settings) -> Result<Self, QpError> {
        problem.validate()?;
        let n = problem.num_vars;
        let m_eq = problem.num_eq();
        let rho_eq = settings.rho * settings.rho_eq_scale;
        let mut rho = vec![rho_eq; m_eq];
        rho.extend(std::iter::repeat(settings.rho).take(n));

        let (dim, upper) = kkt_upper(problem, settings.sigma, &rho);
        let perm = rcm_order(dim, upper.iter().map(|&(i, j, _)| (i, j)));
        let kkt = LdlFactor::factor(dim, &upper, perm.clone())?;
        Ok(Self {
            settings,
            n,
            m_eq,
            kkt,
            rho,
            perm,
            p_nnz: problem.quadratic.nnz(),
            a_nnz: problem.eq_matrix.nnz(),
            scratch: Vec::new(),
        })
    }

    /// Rescales every penalty by `scale` and refactors the KKT system.
    fn rescale_rho(&mut self, problem: &QpProblem, scale: f64) -> Result<(), QpError> {
        for r in self.rho.iter_mut() {
            *r = (*r * scale).clamp(1e-6, 1e6);
        }
        let (dim, upper) = kkt_upper(problem, self.settings.sigma, &self.rho);
        self.kkt = LdlFactor::factor(dim, &upper, self.perm.clone())?;
        Ok(())
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    /// Solves an instance sharing this workspace's structure (same P, A,
    /// penalties; q, b, bounds may differ).
    pub fn solve(
        &mut self,
        problem: &QpProblem,
        warm: Option<&WarmStart>,
    ) -> Result<QpSolution, QpError> {
        if problem.num_vars != self.n
            || problem.num_eq() != self.m_eq
            || problem.quadratic.nnz() != self.p_nnz
            || problem.eq_matrix.nnz() != self.a_nnz
        {
            return Err(QpError::StructureMismatch);
        }
        let n = self.n;
        let m_eq = self.m_eq;
        let m = m_eq + n;
        let s = self.settings.clone();

        if let Some(reason) = presolve_infeasible(problem, 10.0 * s.eps_primal) {
            let _ = reason;
            return Ok(QpSolution {
                z: vec![0.0; n],
                objective_value: f64::NAN,
                primal_residual: f64::INFINITY,
                dual_residual: f64::INFINITY,
                iterations: 0,
                status: Status::Infeasible,
                dual_eq: vec![0.0; m_eq],
                dual_bounds: vec![0.0; n],
            });
        }

        let mut z = vec![0.0; n];
        let mut y = vec![0.0; m];
        if let Some(w) = warm {
            if w.z.len() != n || w.y.len() != m {
                return Err(QpError::Dimension(
                    "warm start does not match problem dimensions".into(),
                ));
            }
            z.copy_from_slice(&w.z);
            y.copy_from_slice(&w.y);
        }
        // Auxiliary constraint-space iterate, projected onto the constraint set.
        let mut w_aux = vec![0.0; m];
        let az = problem.eq_matrix.mul_vec(&z);
        for r in 0..m_eq {
            w_aux[r] = problem.eq_rhs[r];
            let _ = az[r];
        }
        for i in 0..n {
            w_aux[m_eq + i] = z[i].clamp(problem.bound_lower[i], problem.bound_upper[i]);
        }

        let dim = n + m;
        let mut rhs = vec![0.0; dim];
        let mut best_residual = f64::INFINITY;
        let mut last_improvement_iter = 0usize;
        let mut last_polish_residual = f64::INFINITY;
        let mut last_rho_update = 0usize;
        let mut y_prev = y.clone();
        let mut iterations = 0usize;

        while iterations < s.max_iterations {
            iterations += 1;
            // rhs = [sigma z - q; w - y / rho]
            for i in 0..n {
                rhs[i] = s.sigma * z[i] - problem.linear[i];
            }
            for r in 0..m {
                rhs[n + r] = w_aux[r] - y[r] / self.rho[r];
            }
            self.kkt.solve_in_place(&mut rhs, &mut self.scratch);
            // rhs now holds [z_tilde; nu]
            let alpha = s.relaxation;
            for i in 0..n {
                z[i] = alpha * rhs[i] + (1.0 - alpha) * z[i];
            }
            for r in 0..m {
                let w_tilde = w_aux[r] + (rhs[n + r] - y[r]) / self.rho[r];
                let wt = alpha * w_tilde + (1.0 - alpha) * w_aux[r] + y[r] / self.rho[r];
                let projected = if r < m_eq {
                    problem.eq_rhs[r]
                } else {
                    let i = r - m_eq;
                    wt.clamp(problem.bound_lower[i], problem.bound_upper[i])
                };
                y[r] = self.rho[r] * (wt - projected);
                w_aux[r] = projected;
            }

            if iterations % s.check_interval == 0 || iterations == s.max_iterations {
                let (r_prim, r_dual) = residuals(problem, &z, &y[..m_eq], &y[m_eq..]);
                let r = r_prim.max(r_dual);
                if r < 0.999 * best_residual {
                    best_residual = r;
                    last_improvement_iter = iterations;
                }
                if r_prim <= s.eps_primal && r_dual <= s.eps_dual {
                    return Ok(self.finish(problem, z, y, iterations, Status::Optimal));
                }
                if s.polish && r <= s.polish_trigger && r <= 0.5 * last_polish_residual {
                    last_polish_residual = r;
                    if let Some((pz, py)) = self.try_polish(problem, &z, &y) {
                        let (pp, pd) = residuals(problem, &pz, &py[..m_eq], &py[m_eq..]);
                        if pp <= s.eps_primal && pd <= s.eps_dual {
                            return Ok(self.finish(problem, pz, py, iterations, Status::Optimal));
                        }
                    }
                }
                // Primal infeasibility certificate on the dual direction
                // accumulated since the last check.
                if primal_infeasibility_certificate(problem, &y, &y_prev) {
                    return Ok(self.finish(problem, z, y, iterations, Status::Infeasible));
                }
                y_prev.copy_from_slice(&y);
                if r > 10.0 * s.eps_primal.max(s.eps_dual)
                    && iterations - last_improvement_iter >= s.stall_window
                {
                    // Stalled with no certificate of infeasibility. The
                    // active set is often already correct at this point, so
                    // try the polish step before touching the penalties.
                    if s.polish {
                        if let Some((pz, py)) = self.try_polish(problem, &z, &y) {
                            let (pp, pd) = residuals(problem, &pz, &py[..m_eq], &py[m_eq..]);
                            if pp <= s.eps_primal && pd <= s.eps_dual {
                                return Ok(self.finish(
                                    problem,
                                    pz,
                                    py,
                                    iterations,
                                    Status::Optimal,
                                ));
                            }
                        }
                    }
                    // Raise the penalties a decade at a time -- saturated,
                    // weakly-weighted problems converge orders of magnitude
                    // faster under stiffer penalties -- then stop reporting
                    // honestly.
                    if last_rho_update < 3 {
                        self.rescale_rho(problem, 10.0)?;
                        last_rho_update += 1;
                        last_improvement_iter = iterations;
                    } else {
                        return Ok(self.finish(problem, z, y, iterations, Status::MaxIterations));
                    }
                }
            }
        }
        Ok(self.finish(problem, z, y, iterations, Status::MaxIterations))
    }

    fn finish(
        &self,
        problem: &QpProblem,
        z: Vec<f64>,
        y: Vec<f64>,
        iterations: usize,
        status: Status,
    ) -> QpSolution {
        let m_eq = self.m_eq;
        let (primal_residual, dual_residual) = residuals(problem, &z, &y[..m_eq], &y[m_eq..]);
        QpSolution {
            objective_value: problem.objective(&z),
            dual_eq: y[..m_eq].to_vec(),
            dual_bounds: y[m_eq..].to_vec(),
            z,
            primal_residual,
            dual_residual,
            iterations,
            status,
        }
    }

    /// Solves the equality-constrained QP on the active set suggested by the
    /// bound multipliers, with regularization plus iterative refinement.
    fn try_polish(
        &mut self,
        problem: &QpProblem,
        z: &[f64],
        y: &[f64],
    ) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.n;
        let m_eq = self.m_eq;
        let y_bounds = &y[m_eq..];
        // Per-variable guess: Some(true) = at the upper bound, Some(false)
        // = at the lower bound, None = inactive. Refined over a few rounds
        // by dropping wrong-signed multipliers and adding violated bounds.
        let mut guess: Vec<Option<bool>> = (0..n)
            .map(|i| {
                if problem.bound_lower[i] == problem.bound_upper[i] {
                    Some(true)
                } else if y_bounds[i] > 0.0 && problem.bound_upper[i].is_finite() {
                    Some(true)
                } else if y_bounds[i] < 0.0 && problem.bound_lower[i].is_finite() {
                    Some(false)
                } else {
                    None
                }
            })
            .collect();
        let _ = z;

        for _round in 0..8 {
            let (x, active) = self.polish_kkt_solve(problem, &guess)?;
            let mut changed = false;
            let mut z_pol = x[..n].to_vec();
            // Drop active constraints whose multipliers have the wrong sign.
            for (k, &i) in active.iter().enumerate() {
                let mu = x[n + m_eq + k];
                if problem.bound_lower[i] == problem.bound_upper[i] {
                    continue;
                }
                let tol = 1e-7 * (1.0 + mu.abs());
                match guess[i] {
                    Some(true) if mu < -tol => {
                        guess[i] = None;
                        changed = true;
                    }
                    Some(false) if mu > tol => {
                        guess[i] = None;
                        changed = true;
                    }
                    _ => {}
                }
            }
            // Add bounds the unconstrained-in-that-coordinate solution violates.
            for i in 0..n {
                if guess[i].is_some() {
                    continue;
                }
                let tol = 1e-9 * (1.0 + z_pol[i].abs());
                if z_pol[i] > problem.bound_upper[i] + tol {
                    guess[i] = Some(true);
                    changed = true;
                } else if z_pol[i] < problem.bound_lower[i] - tol {
                    guess[i] = Some(false);
                    changed = true;
                }
            }
            if changed {
                continue;
            }
            // Converged active set: snap actives exactly onto their bounds
            // and assemble the multipliers.
            let mut y_pol = vec![0.0; m_eq + n];
            y_pol[..m_eq].copy_from_slice(&x[n..n + m_eq]);
            for (k, &i) in active.iter().enumerate() {
                y_pol[m_eq + i] = x[n + m_eq + k];
                z_pol[i] = if guess[i] == Some(true) {
                    problem.bound_upper[i]
                } else {
                    problem.bound_lower[i]
                };
            }
            return Some((z_pol, y_pol));
        }
        None
    }

    /// Solves the equality-constrained KKT system for the given active-set
    /// guess (regularized factorization + iterative refinement against the
    /// unregularized matrix). Returns the solution vector and the list of
    /// active variable indices in multiplier order.
    fn polish_kkt_solve(
        &mut self,
        problem: &QpProblem,
        guess: &[Option<bool>],
    ) -> Option<(Vec<f64>, Vec<usize>)> {
        let n = self.n;
        let m_eq = self.m_eq;
        let active: Vec<usize> = (0..n).filter(|&i| guess[i].is_some()).collect();
        let n_act = active.len();
        let dim = n + m_eq + n_act;
        let delta = 1e-9;

        let mut upper: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in problem.quadratic.triplets() {
            if i <= j {
                upper.push((i, j, v));
            }
        }
        for i in 0..n {
            upper.push((i, i, delta));
        }
        for (r, j, v) in problem.eq_matrix.triplets() {
            upper.push((j, n + r, v));
        }
        for r in 0..m_eq {
            upper.push((n + r, n + r, -delta));
        }
        for (k, &i) in active.iter().enumerate() {
            upper.push((i, n + m_eq + k, 1.0));
            upper.push((n + m_eq + k, n + m_eq + k, -delta));
        }
        let perm = rcm_order(dim, upper.iter().map(|&(i, j, _)| (i, j)));
        let factor = LdlFactor::factor(dim, &upper, perm).ok()?;

        let bound_of = |i: usize| {
            if guess[i] == Some(true) {
                problem.bound_upper[i]
            } else {
                problem.bound_lower[i]
            }
        };
        let mut rhs = vec![0.0; dim];
        for i in 0..n {
            rhs[i] = -problem.linear[i];
        }
        rhs[n..n + m_eq].copy_from_slice(&problem.eq_rhs);
        for (k, &i) in active.iter().enumerate() {
            rhs[n + m_eq + k] = bound_of(i);
        }

        // Unregularized KKT matvec for iterative refinement.
        let kkt_mul = |x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            let pz = problem.quadratic.mul_vec(&x[..n]);
            out[..n].copy_from_slice(&pz);
            problem.eq_matrix.tr_mul_vec_acc(&x[n..n + m_eq], &mut out[..n]);
            for (k, &i) in active.iter().enumerate() {
                out[i] += x[n + m_eq + k];
            }
            let (head, tail) = out.split_at_mut(n);
            let _ = head;
            problem.eq_matrix.mul_vec_acc(&x[..n], &mut tail[..m_eq]);
            for (k, &i) in active.iter().enumerate() {
                out[n + m_eq + k] = x[i];
            }
        };

        let mut x = rhs.clone();
        factor.solve_in_place(&mut x, &mut self.scratch);
        let mut resid = vec![0.0; dim];
        for _ in 0..3 {
            kkt_mul(&x, &mut resid);
            for r in 0..dim {
                resid[r] = rhs[r] - resid[r];
            }
            factor.solve_in_place(&mut resid, &mut self.scratch);
            for r in 0..dim {
                x[r] += resid[r];
            }
        }
        Some((x, active))
    }
}

/// Full KKT residuals at (z, nu, y_bounds): primal feasibility and
/// stationarity plus bound complementarity.
fn residuals(problem: &QpProblem, z: &[f64], nu: &[f64], y_bounds: &[f64]) -> (f64, f64) {
    let n = problem.num_vars;
    let mut eq = problem.eq_matrix.mul_vec(z);
    for (r, b) in eq.iter_mut().zip(&problem.eq_rhs) {
        *r -= b;
    }
    let mut r_prim = inf_norm(&eq);
    for i in 0..n {
        r_prim = r_prim
            .max(problem.bound_lower[i] - z[i])
            .max(z[i] - problem.bound_upper[i]);
    }

    let mut stat = problem.quadratic.mul_vec(z);
    for i in 0..n {
        stat[i] += problem.linear[i] + y_bounds[i];
    }
    problem.eq_matrix.tr_mul_vec_acc(nu, &mut stat);
    let mut r_dual = inf_norm(&stat);
    // Complementary slackness for the bound multipliers.
    for i in 0..n {
        let yi = y_bounds[i];
        if yi > 0.0 && problem.bound_upper[i].is_finite() {
            r_dual = r_dual.max(yi * (problem.bound_upper[i] - z[i]).abs());
        } else if yi < 0.0 && problem.bound_lower[i].is_finite() {
            r_dual = r_dual.max(-yi * (z[i] - problem.bound_lower[i]).abs());
        } else if yi != 0.0 {
            // Multiplier on an infinite bound is pure error.
            r_dual = r_dual.max(yi.abs());
        }
    }
    (r_prim, r_dual)
}

/// Checks the standard certificate of primal infeasibility on the dual
/// direction `dy = y - y_prev`: the constraints are inconsistent when
/// `A' dy ~ 0` while the support function of the constraint set in the
/// direction `dy` is strictly negative.
fn primal_infeasibility_certificate(problem: &QpProblem, y: &[f64], y_prev: &[f64]) -> bool {
    const EPS_INF: f64 = 1e-6;
    let n = problem.num_vars;
    let m_eq = problem.num_eq();
    let dy: Vec<f64> = y.iter().zip(y_prev).map(|(a, b)| a - b).collect();
    let dy_norm = inf_norm(&dy);
    if dy_norm <= 0.0 {
        return false;
    }
    // A_stacked' dy = A_eq' dy_eq + dy_bounds.
    let mut atdy = dy[m_eq..].to_vec();
    problem.eq_matrix.tr_mul_vec_acc(&dy[..m_eq], &mut atdy);
    if inf_norm(&atdy) > EPS_INF * dy_norm {
        return false;
    }
    // Support of {b} x [lower, upper] in the direction dy; +inf terms
    // (wrong-signed multiplier on an infinite bound) void the certificate.
    let mut support = 0.0;
    for r in 0..m_eq {
        support += problem.eq_rhs[r] * dy[r];
    }
    for i in 0..n {
        let d = dy[m_eq + i];
        if d > 0.0 {
            if problem.bound_upper[i] == f64::INFINITY {
                return false;
            }
            support += problem.bound_upper[i] * d;
        } else if d < 0.0 {
            if problem.bound_lower[i] == f64::NEG_INFINITY {
                return false;
            }
            support += problem.bound_lower[i] * d;
        }
    }
    support <= -EPS_INF * dy_norm
}

/// Interval bound propagation; returns Some(row) when an equality row is
/// proven inconsistent with the box.
fn presolve_infeasible(problem: &QpProblem, tol: f64) -> Option<usize> {
    let mut lo = problem.bound_lower.clone();
    let mut hi = problem.bound_upper.clone();
    let a_t = &problem.eq_matrix; // CSC by columns = by variable
    // Row-major view of A.
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); problem.num_eq()];
    for (r, j, v) in a_t.triplets() {
        if v != 0.0 {
            rows[r].push((j, v));
        }
    }
    for _pass in 0..10 {
        let mut changed = false;
        for (r, row) in rows.iter().enumerate() {
            let b = problem.eq_rhs[r];
            // Range of the row over the current box.
            let mut min = 0.0f64;
            let mut max = 0.0f64;
            for &(j, v) in row {
                let (a, bb) = if v > 0.0 {
                    (v * lo[j], v * hi[j])
                } else {
                    (v * hi[j], v * lo[j])
                };
                min += a;
                max += bb;
            }
            if b < min - tol || b > max + tol {
                return Some(r);
            }
            // Tighten each variable from the rest of the row.
            for &(j, v) in row {
                let (tj_min, tj_max) = if v > 0.0 {
                    (v * lo[j], v * hi[j])
                } else {
                    (v * hi[j], v * lo[j])
                };
                let rest_min = min - tj_min;
                let rest_max = max - tj_max;
                let (mut new_lo, mut new_hi) = {
                    let t_min = b - rest_max;
                    let t_max = b - rest_min;
                    if v > 0.0 {
                        (t_min / v, t_max / v)
                    } else {
                        (t_max / v, t_min / v)
                    }
                };
                if !new_lo.is_finite() {
                    new_lo = f64::NEG_INFINITY;
                }
                if !new_hi.is_finite() {
                    new_hi = f64::INFINITY;
                }
                if new_lo > lo[j] + tol.max(1e-12) {
                    lo[j] = new_lo;
                    changed = true;
                }
                if new_hi < hi[j] - tol.max(1e-12) {
                    hi[j] = new_hi;
                    changed = true;
                }
                if lo[j] > hi[j] + tol {
                    return Some(r);
                }
            }
        }
        if !changed {
            break;
        }
    }
    None
}

/// One-shot solve: builds a workspace and runs it.
pub fn solve(problem: &QpProblem, settings: &Settings) -> Result<QpSolution, QpError> {
    let warm = None;
    let mut ws = SolverWorkspace::new(problem, settings.clone())?;
    ws.solve(problem, warm)
}

/// One-shot solve with a warm start.
pub fn solve_warm(
    problem: &QpProblem,
    settings: &Settings,
    warm: &WarmStart,
) -> Result<QpSolution, QpError> {
    let mut ws = SolverWorkspace::new(problem, settings.clone())?;
    ws.solve(problem, Some(warm))
}
