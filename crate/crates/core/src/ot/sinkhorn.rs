use nalgebra::{DMatrix, DVector};

use super::{Coupling, GibbsKernel, KernelDomain};
use crate::error::{Error, Result};

/// Sinkhorn scalings `(α, β)`, stored as logarithms.
///
/// Scalings are projective: `(cα, β/c)` yields the same coupling as
/// `(α, β)`. Every update re-normalizes so that `max α = 1` and compensates
/// `β`, which keeps the pair's coupling unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingState {
    log_alpha: DVector<f64>,
    log_beta: DVector<f64>,
}

impl ScalingState {
    /// `α = β = 1`.
    pub fn uniform(n: usize) -> Self {
        Self {
            log_alpha: DVector::zeros(n),
            log_beta: DVector::zeros(n),
        }
    }

    /// Starts from a positive `α`; `β` is set to ones and is overwritten by the first update.
    pub fn from_alpha(alpha: &DVector<f64>) -> Result<Self> {
        if alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::invalid("scaling vector must be strictly positive and finite"));
        }
        Ok(Self {
            log_alpha: alpha.map(f64::ln),
            log_beta: DVector::zeros(alpha.len()),
        })
    }

    pub fn from_logs(log_alpha: DVector<f64>, log_beta: DVector<f64>) -> Result<Self> {
        if log_alpha.len() != log_beta.len() {
            return Err(Error::DimensionMismatch("alpha and beta lengths differ".into()));
        }
        if log_alpha.iter().chain(log_beta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("log-scalings must be finite"));
        }
        Ok(Self { log_alpha, log_beta })
    }

    pub fn log_alpha(&self) -> &DVector<f64> {
        &self.log_alpha
    }

    pub fn log_beta(&self) -> &DVector<f64> {
        &self.log_beta
    }

    /// `α` in the linear domain; may underflow for extreme kernels.
    pub fn alpha(&self) -> DVector<f64> {
        self.log_alpha.map(f64::exp)
    }

    pub fn beta(&self) -> DVector<f64> {
        self.log_beta.map(f64::exp)
    }

    pub fn n(&self) -> usize {
        self.log_alpha.len()
    }
}

/// Stopping rule for [`sinkhorn_solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    /// Bound on the L1 marginal violation.
    pub tol: f64,
    pub max_iter: usize,
    /// After this many plain iterations, each further iteration is preceded
    /// by a damped Newton step on the dual. `None` runs plain Sinkhorn.
    pub newton_after: Option<usize>,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100_000,
            newton_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornSolution {
    pub scalings: ScalingState,
    pub coupling: Coupling,
    pub iterations: usize,
    /// Marginal violation of `coupling`.
    pub violation: f64,
}

/// `log Σ_i exp(a_i + b_i)` with a fixed summation order.
fn log_sum_exp(a: &[f64], b: &[f64]) -> f64 {
    let max = a.iter().zip(b).map(|(x, y)| x + y).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x + y - max).exp()).sum();
    max + s.ln()
}

/// `log(Mᵀ v)` for `M = exp(log_m)`, `v = exp(log_v)`: one LSE per column of `log_m`.
fn log_matvec_t(log_m: &DMatrix<f64>, log_v: &DVector<f64>) -> DVector<f64> {
    let n = log_m.nrows();
    let data = log_m.as_slice();
    let v = log_v.as_slice();
    DVector::from_iterator(log_m.ncols(), (0..log_m.ncols()).map(|j| log_sum_exp(&data[j * n..(j + 1) * n], v)))
}

/// Scaling factors beyond this range are folded back into the working kernel.
const ABSORB_LIMIT: f64 = 1e100;

fn in_range(v: &DVector<f64>, domain: KernelDomain) -> bool {
    match domain {
        KernelDomain::Log => v.iter().all(|x| x.is_finite() && *x > 1.0 / ABSORB_LIMIT && *x < ABSORB_LIMIT),
        KernelDomain::Linear => v.iter().all(|x| x.is_finite() && *x > 0.0),
    }
}

/// Internal iterate.
///
/// The scalings are split as `α = e^{a}·u`, `β = e^{b}·v`, where `(a, b)` are
/// folded into the working kernel `W = diag(e^a) K diag(e^b)` and `(u, v)`
/// are updated with plain matrix-vector products. In the log domain, `(u, v)`
/// are re-absorbed into `W` (recomputed from `log K`) whenever they leave
/// `[1/ABSORB_LIMIT, ABSORB_LIMIT]`. In the linear domain `W = K` and
/// out-of-range values are reported as errors.
struct Iterate<'k> {
    kernel: &'k GibbsKernel,
    abs_alpha: DVector<f64>,
    abs_beta: DVector<f64>,
    work: DMatrix<f64>,
    u: DVector<f64>,
    v: DVector<f64>,
    /// `Wᵀu`, i.e. `Kᵀα` up to the absorbed factor `e^{-b}`.
    wt_u: DVector<f64>,
}

impl<'k> Iterate<'k> {
    fn start(kernel: &'k GibbsKernel, log_alpha: &DVector<f64>) -> Result<Self> {
        let n = kernel.n();
        if log_alpha.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "scaling of length {} for a kernel of size {n}",
                log_alpha.len()
            )));
        }
        check_finite(log_alpha)?;
        let mut it = match &kernel.linear {
            Some(k) => Self {
                kernel,
                abs_alpha: DVector::zeros(n),
                abs_beta: DVector::zeros(n),
                work: k.clone(),
                u: log_alpha.map(f64::exp),
                v: DVector::from_element(n, 1.0),
                wt_u: DVector::zeros(n),
            },
            None => {
                let mut it = Self {
                    kernel,
                    abs_alpha: log_alpha.clone(),
                    abs_beta: DVector::zeros(n),
                    work: DMatrix::zeros(n, n),
                    u: DVector::from_element(n, 1.0),
                    v: DVector::from_element(n, 1.0),
                    wt_u: DVector::zeros(n),
                };
                it.abs_beta = exact_half_step(&kernel.log_k, &it.abs_alpha);
                check_finite(&it.abs_beta)?;
                it.rebuild();
                it
            }
        };
        it.wt_u = it.work.tr_mul(&it.u);
        Ok(it)
    }

    fn rebuild(&mut self) {
        let (a, b) = (&self.abs_alpha, &self.abs_beta);
        self.work = DMatrix::from_fn(self.kernel.n(), self.kernel.n(), |i, j| {
            (self.kernel.log_k[(i, j)] + a[i] + b[j]).exp()
        });
    }

    /// `β = 1/N ⊘ Kᵀα`, then `α = 1/N ⊘ Kβ`.
    fn advance(&mut self) -> Result<()> {
        let domain = self.kernel.domain();
        let inv_n = 1.0 / self.kernel.n() as f64;
        self.v = self.wt_u.map(|s| inv_n / s);
        if !in_range(&self.v, domain) {
            if domain == KernelDomain::Linear {
                return Err(Error::NumericRange);
            }
            self.abs_alpha += self.u.map(f64::ln);
            self.u.fill(1.0);
            self.abs_beta = exact_half_step(&self.kernel.log_k, &self.abs_alpha);
            check_finite(&self.abs_beta)?;
            self.v.fill(1.0);
            self.rebuild();
        }
        self.u = (&self.work * &self.v).map(|s| inv_n / s);
        if !in_range(&self.u, domain) {
            if domain == KernelDomain::Linear {
                return Err(Error::NumericRange);
            }
            self.abs_beta += self.v.map(f64::ln);
            self.v.fill(1.0);
            self.abs_alpha = exact_half_step(&self.kernel.log_k_t, &self.abs_beta);
            check_finite(&self.abs_alpha)?;
            self.u.fill(1.0);
            self.rebuild();
        }
        self.wt_u = self.work.tr_mul(&self.u);
        Ok(())
    }

    /// Column-marginal violation `Σ_j |β_j (Kᵀα)_j − 1/N|`; rows are exact after an α-update.
    fn column_violation(&self) -> f64 {
        let target = 1.0 / self.u.len() as f64;
        self.v
            .iter()
            .zip(self.wt_u.iter())
            .map(|(v, s)| (v * s - target).abs())
            .sum()
    }

    /// Log-scalings normalized to `max α = 1`.
    fn state(&self) -> ScalingState {
        let mut log_alpha = &self.abs_alpha + self.u.map(f64::ln);
        let mut log_beta = &self.abs_beta + self.v.map(f64::ln);
        let shift = log_alpha.max();
        log_alpha.add_scalar_mut(-shift);
        log_beta.add_scalar_mut(shift);
        ScalingState { log_alpha, log_beta }
    }
}

/// `−log N − log(Mᵀ e^{x})` for `M = exp(log_m)`: the exact scaling update in log form.
fn exact_half_step(log_m: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let log_n = (log_m.nrows() as f64).ln();
    log_matvec_t(log_m, x).map(|s| -log_n - s)
}

fn check_finite(v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericRange)
    }
}

/// One paired update: `β = 1/N ⊘ Kᵀα`, `α⁺ = 1/N ⊘ Kβ`.
///
/// Only `state`'s `α` is read. The result holds `(α⁺, β)` normalized so
/// that `max α⁺ = 1`.
pub fn sinkhorn_step(kernel: &GibbsKernel, state: &ScalingState) -> Result<ScalingState> {
    let mut it = Iterate::start(kernel, &state.log_alpha)?;
    it.advance()?;
    Ok(it.state())
}

/// `P_ij = α_i K_ij β_j`, evaluated in the log domain.
pub fn coupling_from_scalings(kernel: &GibbsKernel, state: &ScalingState) -> Coupling {
    let n = kernel.n();
    Coupling(DMatrix::from_fn(n, n, |i, j| {
        (state.log_alpha[i] + kernel.log_k[(i, j)] + state.log_beta[j]).exp()
    }))
}

/// Exactly `s` paired updates from `state`'s `α`.
///
/// Returns the advanced scalings (the warm start for the next call) and
/// `P = diag(α_{s+1}) K diag(β_s)`, whose rows sum to `1/N`.
pub fn sinkhorn_partial(kernel: &GibbsKernel, state: &ScalingState, s: usize) -> Result<(ScalingState, Coupling)> {
    if s == 0 {
        return Err(Error::invalid("at least one Sinkhorn iteration is required"));
    }
    let mut it = Iterate::start(kernel, &state.log_alpha)?;
    for _ in 0..s {
        it.advance()?;
    }
    let next = it.state();
    let p = coupling_from_scalings(kernel, &next);
    Ok((next, p))
}

/// Iterates until the L1 marginal violation drops below `params.tol`.
pub fn sinkhorn_solve(kernel: &GibbsKernel, state: &ScalingState, params: &SinkhornParams) -> Result<SinkhornSolution> {
    if !(params.tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {}", params.tol)));
    }
    let mut it = Iterate::start(kernel, &state.log_alpha)?;
    let mut violation = f64::INFINITY;
    for iterations in 1..=params.max_iter {
        it.advance()?;
        violation = it.column_violation();
        if violation >= params.tol && params.newton_after.is_some_and(|k| iterations >= k) {
            if let Some(log_alpha) = newton_alpha(kernel, &it.state()) {
                it = Iterate::start(kernel, &log_alpha)?;
                continue;
            }
        }
        if violation < params.tol {
            let scalings = it.state();
            let coupling = coupling_from_scalings(kernel, &scalings);
            let violation = coupling.marginal_violation();
            return Ok(SinkhornSolution {
                scalings,
                coupling,
                iterations,
                violation,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: params.max_iter,
        violation,
    })
}

/// One damped Newton step on `φ(a, b) = Σ_ij e^{a_i + log K_ij + b_j} − (Σa + Σb)/N`,
/// with `b_N` held fixed. `φ` is convex with gradient equal to the marginal
/// residuals, so its minimizer is the Sinkhorn fixed point. Returns the new
/// `log α`, or `None` when no descent step is found.
fn newton_alpha(kernel: &GibbsKernel, state: &ScalingState) -> Option<DVector<f64>> {
    let n = kernel.n();
    if n < 2 {
        return None;
    }
    let m = 2 * n - 1;
    let inv_n = 1.0 / n as f64;
    let coupling = |a: &DVector<f64>, b: &DVector<f64>| {
        DMatrix::from_fn(n, n, |i, j| (a[i] + kernel.log_k[(i, j)] + b[j]).exp())
    };
    let violation = |p: &DMatrix<f64>| {
        p.column_sum().iter().chain(p.row_sum().iter()).map(|s| (s - inv_n).abs()).sum::<f64>()
    };

    let (a, b) = (&state.log_alpha, &state.log_beta);
    let p = coupling(a, b);
    let r = p.column_sum();
    let c = p.row_sum();
    let grad = DVector::from_fn(m, |k, _| if k < n { r[k] - inv_n } else { c[k - n] - inv_n });
    let mut hess = DMatrix::zeros(m, m);
    for i in 0..n {
        hess[(i, i)] = r[i];
        for j in 0..n - 1 {
            hess[(i, n + j)] = p[(i, j)];
            hess[(n + j, i)] = p[(i, j)];
        }
    }
    for j in 0..n - 1 {
        hess[(n + j, n + j)] = c[j];
    }
    // Near a permutation the coupling graph splits into blocks joined by
    // tiny entries and the Hessian is singular to working precision; shift
    // its diagonal until the factorization succeeds.
    let scale = hess.diagonal().max();
    let chol = [0.0, 1e-14, 1e-12, 1e-10, 1e-8, 1e-6].iter().find_map(|&shift| {
        let mut h = hess.clone();
        for k in 0..m {
            h[(k, k)] += shift * scale;
        }
        h.cholesky()
    })?;
    let step = -chol.solve(&grad);
    let slope = grad.dot(&step);
    if !(slope < 0.0) {
        return None;
    }

    // φ(t) − φ(0), evaluated from differences so the offset Σa/N does not
    // swamp the decrease. Once that decrease is below round-off, a step that
    // lowers the marginal violation is accepted instead.
    let v0 = violation(&p);
    let step_sum = step.sum();
    let mut t = 1.0;
    for _ in 0..40 {
        let a1 = DVector::from_fn(n, |i, _| a[i] + t * step[i]);
        let b1 = DVector::from_fn(n, |j, _| if j < n - 1 { b[j] + t * step[n + j] } else { b[j] });
        let p1 = coupling(&a1, &b1);
        let delta = (&p1 - &p).sum() - t * step_sum * inv_n;
        if delta <= 1e-4 * t * slope || (delta.abs() < 1e-13 && violation(&p1) < v0) {
            return Some(a1);
        }
        t *= 0.5;
    }
    None
}
