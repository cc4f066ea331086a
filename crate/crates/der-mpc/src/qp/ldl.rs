//! Sparse LDL^T factorization of symmetric quasi-definite matrices, with a
//! reverse Cuthill-McKee fill-reducing ordering.
//!
//! The factorization is the classic up-looking algorithm over the upper
//! triangle in CSC form. No pivoting is performed; the KKT systems handed to
//! it are regularized so that the factorization exists.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LdlError {
    #[error("zero pivot at column {0}; matrix is singular")]
    ZeroPivot(usize),
}

/// Upper-triangular CSC pattern and values of a symmetric matrix.
struct UpperCsc {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl UpperCsc {
    /// Builds from triplets of the upper triangle (i <= j required).
    fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            debug_assert!(i <= j, "entry ({i}, {j}) is below the diagonal");
            by_col[j].push((i, v));
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for col in by_col.iter_mut() {
            col.sort_by_key(|&(i, _)| i);
            let mut iter = col.iter().peekable();
            while let Some(&(i, v)) = iter.next() {
                let mut sum = v;
                while let Some(&&(i2, v2)) = iter.peek() {
                    if i2 == i {
                        sum += v2;
                        iter.next();
                    } else {
                        break;
                    }
                }
                row_idx.push(i);
                values.push(sum);
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            col_ptr,
            row_idx,
            values,
        }
    }
}

/// Reverse Cuthill-McKee ordering of the symmetric pattern given by upper
/// triplets. Returns `perm` with `perm[new] = old`.
pub fn rcm_order(n: usize, upper_triplets: impl Iterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j) in upper_triplets {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for nbrs in adj.iter_mut() {
        nbrs.sort_unstable();
        nbrs.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::new();

    // BFS from `start`, neighbors by increasing degree; returns the level
    // structure's last node (used to approximate a peripheral start).
    let bfs = |start: usize,
               visited: &mut Vec<bool>,
               out: &mut Vec<usize>,
               queue: &mut std::collections::VecDeque<usize>| {
        queue.clear();
        queue.push_back(start);
        visited[start] = true;
        let mut last = start;
        while let Some(v) = queue.pop_front() {
            out.push(v);
            last = v;
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_by_key(|&u| (degree[u], u));
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
        last
    };

    for v in 0..n {
        if visited[v] {
            continue;
        }
        // Pick the min-degree unvisited node of the component containing v,
        // then hop once to approximate a peripheral node.
        let mut probe = Vec::new();
        let mut tmp_visited = visited.clone();
        bfs(v, &mut tmp_visited, &mut probe, &mut queue);
        let &start = probe
            .iter()
            .min_by_key(|&&u| (degree[u], u))
            .expect("nonempty component");
        let mut first_pass = Vec::new();
        let mut tmp_visited = visited.clone();
        let far = bfs(start, &mut tmp_visited, &mut first_pass, &mut queue);
        bfs(far, &mut visited, &mut order, &mut queue);
    }
    order.reverse();
    order
}

/// LDL^T factors of a permuted symmetric matrix.
pub struct LdlFactor {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
    l_values: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    /// Factors the symmetric matrix given by its upper triangle triplets
    /// (original indices), after applying `perm`.
    pub fn factor(
        n: usize,
        upper_triplets: &[(usize, usize, f64)],
        perm: Vec<usize>,
    ) -> Result<Self, LdlError> {
        let mut perm_inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            perm_inv[old] = new;
        }
        let permuted: Vec<(usize, usize, f64)> = upper_triplets
            .iter()
            .map(|&(i, j, v)| {
                let (pi, pj) = (perm_inv[i], perm_inv[j]);
                if pi <= pj {
                    (pi, pj, v)
                } else {
                    (pj, pi, v)
                }
            })
            .collect();
        let a = UpperCsc::from_triplets(n, &permuted);

        // Symbolic: elimination tree and column counts.
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            parent[k] = usize::MAX;
            flag[k] = k;
            for p in a.col_ptr[k]..a.col_ptr[k + 1] {
                let mut i = a.row_idx[p];
                while i < k && flag[i] != k {
                    if parent[i] == usize::MAX {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut l_col_ptr = vec![0usize; n + 1];
        for k in 0..n {
            l_col_ptr[k + 1] = l_col_ptr[k] + lnz[k];
        }
        let total = l_col_ptr[n];
        let mut l_row_idx = vec![0usize; total];
        let mut l_values = vec![0.0f64; total];
        let mut d = vec![0.0f64; n];

        // Numeric: up-looking, one column of L per step.
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut lnz_count = vec![0usize; n];
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            for p in a.col_ptr[k]..a.col_ptr[k + 1] {
                let i = a.row_idx[p];
                y[i] += a.values[p];
                let mut len = 0usize;
                let mut ii = i;
                while ii < k && flag[ii] != k {
                    stack[len] = ii;
                    len += 1;
                    flag[ii] = k;
                    ii = parent[ii];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = stack[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for t in top..n {
                let i = pattern[t];
                let yi = y[i];
                y[i] = 0.0;
                for p in l_col_ptr[i]..l_col_ptr[i] + lnz_count[i] {
                    y[l_row_idx[p]] -= l_values[p] * yi;
                }
                let l_ki = yi / d[i];
                d[k] -= l_ki * yi;
                let slot = l_col_ptr[i] + lnz_count[i];
                l_row_idx[slot] = k;
                l_values[slot] = l_ki;
                lnz_count[i] += 1;
            }
            if d[k] == 0.0 {
                return Err(LdlError::ZeroPivot(k));
            }
        }
        Ok(Self {
            n,
            perm,
            l_col_ptr,
            l_row_idx,
            l_values,
            d,
        })
    }

    /// Solves A x = b in place (b in original ordering).
    pub fn solve_in_place(&self, b: &mut [f64], scratch: &mut Vec<f64>) {
        debug_assert_eq!(b.len(), self.n);
        scratch.resize(self.n, 0.0);
        for new in 0..self.n {
            scratch[new] = b[self.perm[new]];
        }
        // L y = b
        for j in 0..self.n {
            let xj = scratch[j];
            if xj != 0.0 {
                for p in self.l_col_ptr[j]..self.l_col_ptr[j + 1] {
                    scratch[self.l_row_idx[p]] -= self.l_values[p] * xj;
                }
            }
        }
        // D z = y
        for j in 0..self.n {
            scratch[j] /= self.d[j];
        }
        // L^T x = z
        for j in (0..self.n).rev() {
            let mut acc = scratch[j];
            for p in self.l_col_ptr[j]..self.l_col_ptr[j + 1] {
                acc -= self.l_values[p] * scratch[self.l_row_idx[p]];
            }
            scratch[j] = acc;
        }
        for new in 0..self.n {
            b[self.perm[new]] = scratch[new];
        }
    }
}
