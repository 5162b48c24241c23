use super::CostMatrix;

/// Optimal one-to-one matching of agents to targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `sigma[i]` is the target assigned to agent `i`.
    pub sigma: Vec<usize>,
    pub cost: f64,
}

/// Minimum-cost permutation `σ` of `Σ_i C_{i,σ(i)}`.
///
/// Solved with the shortest-augmenting-path Hungarian method. Among optimal
/// permutations the lexicographically smallest is returned: an optimal dual
/// pair makes a permutation optimal exactly when all of its edges are tight,
/// so the tie-break is a greedy search over the tight-edge subgraph.
/// Reduced costs within `1e-10·(1 + max|C|)` of zero count as tight.
pub fn exact_assignment(cost: &CostMatrix) -> Assignment {
    let c = cost.matrix();
    let n = cost.n();
    let (u, v, mut row_of) = hungarian(|i, j| c[(i, j)], n);

    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-10 * (1.0 + scale);
    let tight = |i: usize, j: usize| (c[(i, j)] - u[i] - v[j]).abs() <= tol;

    let mut col_of = vec![0; n];
    for (j, &i) in row_of.iter().enumerate() {
        col_of[i] = j;
    }

    for i in 0..n {
        for j in 0..n {
            if col_of[i] == j {
                break;
            }
            let owner = row_of[j];
            if owner < i || !tight(i, j) {
                continue;
            }
            // Hand column j to row i; its current owner must reach the column
            // row i releases through tight edges among the unfixed rows.
            let freed = col_of[i];
            let mut visited = vec![false; n];
            visited[j] = true;
            let mut path = Vec::new();
            if reroute(owner, freed, i, &tight, &row_of, &mut visited, &mut path) {
                // path holds (row, new column) pairs from `owner` onwards
                for &(r, col) in &path {
                    col_of[r] = col;
                    row_of[col] = r;
                }
                col_of[i] = j;
                row_of[j] = i;
                break;
            }
        }
    }

    let total = (0..n).map(|i| c[(i, col_of[i])]).sum();
    Assignment {
        sigma: col_of,
        cost: total,
    }
}

/// Depth-first alternating path from `row` to column `goal`, restricted to rows after `fixed`.
fn reroute(
    row: usize,
    goal: usize,
    fixed: usize,
    tight: &impl Fn(usize, usize) -> bool,
    row_of: &[usize],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    for col in 0..row_of.len() {
        if visited[col] || !tight(row, col) {
            continue;
        }
        visited[col] = true;
        if col == goal {
            path.push((row, col));
            return true;
        }
        let next = row_of[col];
        if next > fixed {
            path.push((row, col));
            if reroute(next, goal, fixed, tight, row_of, visited, path) {
                return true;
            }
            path.pop();
        }
    }
    false
}

/// Shortest augmenting path Hungarian algorithm on an `n×n` cost.
///
/// Returns row potentials, column potentials and `row_of[j]`, the row
/// matched to column `j`.
fn hungarian(cost: impl Fn(usize, usize) -> f64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let row_of = (1..=n).map(|j| p[j] - 1).collect();
    (u[1..].to_vec(), v[1..].to_vec(), row_of)
}
