//! Shared test utilities: a brute-force box-QP oracle built on active-set
//! enumeration plus dense linear algebra, and a deterministic random
//! instance generator. The oracle shares no code with the solver under
//! test: every candidate active set is solved with nalgebra's dense LU and
//! the best primal-feasible candidate is the optimum.

use der_mpc::qp::{CscMatrix, QpProblem};
use nalgebra::{DMatrix, DVector};

/// Optimum found by enumerating all 3^n assignments of each variable to
/// {lower bound, upper bound, free}. For a convex QP with strictly convex
/// reduced subproblems, the minimum-objective primal-feasible candidate
/// over all assignments is the global optimum: the assignment matching the
/// true active set yields the true optimizer, every other feasible
/// candidate can only cost more.
pub struct OracleSolution {
    pub z: Vec<f64>,
    pub objective: f64,
}

pub fn oracle_solve(problem: &QpProblem) -> Option<OracleSolution> {
    let n = problem.num_vars;
    let m_eq = problem.num_eq();
    assert!(n <= 10, "oracle enumeration is exponential in n");

    let p = dense(&problem.quadratic);
    let a = dense(&problem.eq_matrix);
    let q = DVector::from_column_slice(&problem.linear);
    let b = DVector::from_column_slice(&problem.eq_rhs);

    let feas_tol = 1e-8;
    let mut best: Option<OracleSolution> = None;

    // Ternary counter over the variable assignments.
    let mut assign = vec![0u8; n]; // 0 = free, 1 = at lower, 2 = at upper
    loop {
        if let Some(z) = solve_candidate(problem, &p, &a, &q, &b, &assign, n, m_eq, feas_tol) {
            let obj = problem.objective(&z);
            if best.as_ref().map_or(true, |s| obj < s.objective) {
                best = Some(OracleSolution { z, objective: obj });
            }
        }
        // Increment the counter; done after wrapping the last digit.
        let mut k = 0;
        loop {
            if k == n {
                return best;
            }
            assign[k] += 1;
            if assign[k] <= 2 {
                break;
            }
            assign[k] = 0;
            k += 1;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn solve_candidate(
    problem: &QpProblem,
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    q: &DVector<f64>,
    b: &DVector<f64>,
    assign: &[u8],
    n: usize,
    m_eq: usize,
    feas_tol: f64,
) -> Option<Vec<f64>> {
    // Fixed variables take their bound value; free variables are solved
    // from the equality-constrained KKT system of the reduced problem.
    let mut fixed_value = vec![0.0; n];
    let mut free: Vec<usize> = Vec::new();
    for i in 0..n {
        match assign[i] {
            0 => free.push(i),
            1 => {
                if !problem.bound_lower[i].is_finite() {
                    return None;
                }
                fixed_value[i] = problem.bound_lower[i];
            }
            _ => {
                if !problem.bound_upper[i].is_finite() {
                    return None;
                }
                fixed_value[i] = problem.bound_upper[i];
            }
        }
    }
    let nf = free.len();
    // Reduced KKT: [P_ff A_f'; A_f 0] [z_f; nu] = [-q_f - P_fx x_fixed;
    //                                              b - A_x x_fixed]
    let dim = nf + m_eq;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            kkt[(r, c)] = p[(i, j)];
        }
        let mut v = -q[i];
        for j in 0..n {
            if assign[j] != 0 {
                v -= p[(i, j)] * fixed_value[j];
            }
        }
        rhs[r] = v;
    }
    for r in 0..m_eq {
        for (c, &j) in free.iter().enumerate() {
            kkt[(nf + r, c)] = a[(r, j)];
            kkt[(c, nf + r)] = a[(r, j)];
        }
        let mut v = b[r];
        for j in 0..n {
            if assign[j] != 0 {
                v -= a[(r, j)] * fixed_value[j];
            }
        }
        rhs[nf + r] = v;
    }
    let mut z = fixed_value;
    if dim > 0 {
        let sol = kkt.lu().solve(&rhs)?;
        for (r, &i) in free.iter().enumerate() {
            z[i] = sol[r];
        }
    }
    // Primal feasibility of the candidate.
    for i in 0..n {
        if z[i] < problem.bound_lower[i] - feas_tol || z[i] > problem.bound_upper[i] + feas_tol {
            return None;
        }
    }
    for r in 0..m_eq {
        let mut ax = 0.0;
        for j in 0..n {
            ax += a[(r, j)] * z[j];
        }
        if (ax - b[r]).abs() > feas_tol {
            return None;
        }
    }
    Some(z)
}

fn dense(m: &CscMatrix) -> DMatrix<f64> {
    let mut out = DMatrix::<f64>::zeros(m.nrows, m.ncols);
    for (i, j, v) in m.triplets() {
        out[(i, j)] += v;
    }
    out
}

/// Small deterministic xorshift generator so the instance corpus never
/// depends on external crate versions.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed.max(1))
    }

    pub fn next_f64(&mut self) -> f64 {
        // xorshift64*, mapped to [0, 1).
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        (x.wrapping_mul(0x2545F4914F6CDD1D) >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize % n
    }
}

/// Random strictly convex box QP with `n` variables and `m_eq` equalities,
/// feasible by construction: bounds straddle a reference point and the
/// equality right-hand side is evaluated at that point.
pub fn random_instance(rng: &mut TestRng, n: usize, m_eq: usize) -> QpProblem {
    // P = M'M + 0.1 I, strictly positive definite.
    let mut m = vec![0.0; n * n];
    for v in m.iter_mut() {
        *v = rng.range(-1.0, 1.0);
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += m[k * n + i] * m[k * n + j];
            }
            p[i * n + j] = s;
        }
        p[i * n + i] += 0.1;
    }
    let p_triplets: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, p[i * n + j]))
        .collect();

    let reference: Vec<f64> = (0..n).map(|_| rng.range(-2.0, 2.0)).collect();
    let mut bound_lower = Vec::with_capacity(n);
    let mut bound_upper = Vec::with_capacity(n);
    for &zr in &reference {
        bound_lower.push(zr - rng.range(0.1, 3.0));
        bound_upper.push(zr + rng.range(0.1, 3.0));
    }

    let mut a_triplets = Vec::new();
    let mut eq_rhs = Vec::with_capacity(m_eq);
    for r in 0..m_eq {
        let mut rhs = 0.0;
        for j in 0..n {
            let v = rng.range(-1.0, 1.0);
            if v.abs() > 0.2 {
                a_triplets.push((r, j, v));
                rhs += v * reference[j];
            }
        }
        eq_rhs.push(rhs);
    }

    let linear: Vec<f64> = (0..n).map(|_| rng.range(-2.0, 2.0)).collect();
    QpProblem {
        num_vars: n,
        quadratic: CscMatrix::from_triplets(n, n, &p_triplets),
        linear,
        eq_matrix: CscMatrix::from_triplets(m_eq, n, &a_triplets),
        eq_rhs,
        bound_lower,
        bound_upper,
    }
}
