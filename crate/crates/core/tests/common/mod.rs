//! Independent reference computations for the test suites.
//!
//! Nothing here calls into the algorithms under test: matrix functions use
//! truncated Taylor series, the entropic OT oracle is a primal Newton
//! method, and assignments are found by enumeration.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smpc_core::{DMatrix, DVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn uniform_vector(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

/// `e^M` by scaling and squaring around a 30-term Taylor series.
pub fn taylor_expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.iter().map(|v| v.abs()).sum::<f64>();
    let mut squarings = 0;
    while norm / 2f64.powi(squarings) > 0.5 {
        squarings += 1;
    }
    let scaled = m / 2f64.powi(squarings);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// `(e^{Ah}, ∫₀^h e^{As} ds B)` with composite Simpson quadrature.
pub fn quadrature_zoh(a: &DMatrix<f64>, b: &DMatrix<f64>, h: f64, intervals: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let ds = h / intervals as f64;
    let mut integral = DMatrix::zeros(n, n);
    for k in 0..=intervals {
        let w = if k == 0 || k == intervals {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        integral += taylor_expm(&(a * (k as f64 * ds))) * w;
    }
    integral *= ds / 3.0;
    (taylor_expm(&(a * h)), integral * b)
}

/// `Σ_{k<τ} A^k B Bᵀ (Aᵀ)^k` by direct summation.
pub fn direct_reachability(a: &DMatrix<f64>, b: &DMatrix<f64>, tau: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut g = DMatrix::zeros(n, n);
    let mut ak_b = b.clone();
    for _ in 0..tau {
        g += &ak_b * ak_b.transpose();
        ak_b = a * ak_b;
    }
    g
}

/// Largest singular value via power iteration on `MᵀM`.
pub fn power_norm(m: &DMatrix<f64>) -> f64 {
    let mtm = m.transpose() * m;
    let mut v = DVector::from_fn(m.ncols(), |i, _| 1.0 + 0.1 * i as f64);
    let mut lambda = 0.0;
    for _ in 0..5000 {
        let w = &mtm * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w) / v.norm_squared();
        v = w / norm;
    }
    lambda.max(0.0).sqrt()
}

/// `max_{0≤k≤kmax} ‖(M/r)^k‖₂`.
pub fn brute_kappa(m: &DMatrix<f64>, r: f64, kmax: usize) -> f64 {
    let n = m.nrows();
    let scaled = m / r;
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut best: f64 = 1.0;
    for _ in 0..kmax {
        power = &scaled * power;
        best = best.max(power_norm(&power));
    }
    best
}

/// Spectral radius from the Gelfand formula `‖M^k‖^{1/k}`, with `k = 2^squarings`.
pub fn gelfand_radius(m: &DMatrix<f64>, squarings: u32) -> f64 {
    let mut p = m.clone();
    let mut log_scale = 0.0;
    for _ in 0..squarings {
        p = &p * &p;
        let s = p.amax();
        if s == 0.0 {
            return 0.0;
        }
        p /= s;
        log_scale = 2.0 * log_scale + s.ln();
    }
    let k = 2f64.powi(squarings as i32);
    ((log_scale + power_norm(&p).ln()) / k).exp()
}

/// Whether `[B, AB, …, A^{n−1}B]` has full row rank (smallest singular value above `tol`).
pub fn controllable(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    let sv = (&ctrb * ctrb.transpose()).symmetric_eigenvalues();
    sv.min() > tol * tol
}

/// Minimizer of `⟨C, P⟩ − ε H(P)` over couplings with marginals `1/N`.
///
/// Equality-constrained Newton on the primal with a feasible interior start
/// (`P = 1/N²`) and backtracking that keeps every entry positive.
pub fn primal_entropic_ot(c: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let n = c.nrows();
    let nn = n * n;
    let idx = |i: usize, j: usize| i * n + j;
    // Row-sum constraints, then column sums without the last (redundant) one.
    let n_con = 2 * n - 1;
    let mut a = DMatrix::zeros(n_con, nn);
    for i in 0..n {
        for j in 0..n {
            a[(i, idx(i, j))] = 1.0;
            if j < n - 1 {
                a[(n + j, idx(i, j))] = 1.0;
            }
        }
    }
    let cost = DVector::from_fn(nn, |k, _| c[(k / n, k % n)]);
    let objective = |p: &DVector<f64>| -> f64 {
        p.iter()
            .zip(cost.iter())
            .map(|(&x, &ck)| ck * x + eps * x * (x.ln() - 1.0))
            .sum()
    };

    let mut p = DVector::from_element(nn, 1.0 / nn as f64);
    for _ in 0..500 {
        let grad = DVector::from_fn(nn, |k, _| cost[k] + eps * p[k].ln());
        let hinv = p.map(|x| x / eps);
        // Schur complement (A H⁻¹ Aᵀ) λ = −A H⁻¹ g.
        let ah = DMatrix::from_fn(n_con, nn, |r, k| a[(r, k)] * hinv[k]);
        let s = &ah * a.transpose();
        let rhs = -(&ah * &grad);
        let lambda = s.lu().solve(&rhs).expect("constraint Schur complement is nonsingular");
        let dir = -DVector::from_fn(nn, |k, _| hinv[k] * (grad[k] + (a.column(k).transpose() * &lambda)[0]));
        let decrement = -grad.dot(&dir);
        if decrement < 1e-26 {
            break;
        }
        let f0 = objective(&p);
        let mut t = 1.0;
        loop {
            let trial = &p + &dir * t;
            if trial.iter().all(|&x| x > 0.0) && objective(&trial) <= f0 - 0.25 * t * decrement {
                p = trial;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                return DMatrix::from_fn(n, n, |i, j| p[idx(i, j)]);
            }
        }
    }
    DMatrix::from_fn(n, n, |i, j| p[idx(i, j)])
}

/// Closed-form entropic optimum for `N = 2`: `P = [[a, ½−a], [½−a, a]]`.
pub fn entropic_ot_2x2(c: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let ratio = (-(c[(0, 0)] + c[(1, 1)] - c[(0, 1)] - c[(1, 0)]) / (2.0 * eps)).exp();
    let a = 0.5 * ratio / (1.0 + ratio);
    DMatrix::from_row_slice(2, 2, &[a, 0.5 - a, 0.5 - a, a])
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; n];
    fn rec(n: usize, current: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if current.len() == n {
            out.push(current.clone());
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                current.push(j);
                rec(n, current, used, out);
                current.pop();
                used[j] = false;
            }
        }
    }
    rec(n, &mut current, &mut used, &mut out);
    out
}

/// Minimum assignment cost and every permutation attaining it (within `tol`), in lexicographic order.
pub fn exhaustive_assignment(c: &DMatrix<f64>, tol: f64) -> (f64, Vec<Vec<usize>>) {
    let perms = permutations(c.nrows());
    let cost = |s: &[usize]| s.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum::<f64>();
    let best = perms.iter().map(|s| cost(s)).fold(f64::INFINITY, f64::min);
    let argmins = perms.into_iter().filter(|s| cost(s) <= best + tol).collect();
    (best, argmins)
}

/// Random controllable pair with entries in `[-1, 1]`.
pub fn random_controllable_pair(rng: &mut impl Rng, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    loop {
        let a = uniform_matrix(rng, n, n, -1.0, 1.0);
        let b = uniform_matrix(rng, n, m, -1.0, 1.0);
        if controllable(&a, &b, 1e-2) {
            return (a, b);
        }
    }
}
