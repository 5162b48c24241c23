//! Entropy-regularized optimal transport between two uniform N-point
//! empirical distributions.
//!
//! Both marginals are fixed to `1/N`. Kernels and scalings are kept in the
//! log domain by default, because `C/ε` routinely exceeds the range of `exp`
//! once agents are far from their targets.

mod assignment;
mod sinkhorn;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use assignment::{exact_assignment, Assignment};
pub use sinkhorn::{
    coupling_from_scalings, sinkhorn_partial, sinkhorn_solve, sinkhorn_step, ScalingState, SinkhornParams,
    SinkhornSolution,
};

/// Square matrix of finite, nonnegative transport costs `C_ij` (agent `i` to target `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(DMatrix<f64>);

impl CostMatrix {
    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        if !c.is_square() || c.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "cost matrix must be square and non-empty, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if let Some(v) = c.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("cost entries must be finite and nonnegative, found {v}")));
        }
        Ok(Self(c))
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(n, n, f))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }
}

/// Arithmetic domain for the Sinkhorn reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelDomain {
    /// Log-sum-exp reductions on `log K`; never overflows.
    #[default]
    Log,
    /// Plain matrix-vector products on `K`; fast but limited to well-scaled `C/ε`.
    Linear,
}

/// `K_ij = exp(-C_ij/ε)`, stored as `log K`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsKernel {
    log_k: DMatrix<f64>,
    log_k_t: DMatrix<f64>,
    linear: Option<DMatrix<f64>>,
    epsilon: f64,
}

/// Builds the Gibbs kernel of `cost` at regularization `epsilon`.
pub fn gibbs_kernel(cost: &CostMatrix, epsilon: f64, domain: KernelDomain) -> Result<GibbsKernel> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let log_k = cost.matrix() / -epsilon;
    let linear = match domain {
        KernelDomain::Log => None,
        KernelDomain::Linear => Some(log_k.map(f64::exp)),
    };
    Ok(GibbsKernel {
        log_k_t: log_k.transpose(),
        log_k,
        linear,
        epsilon,
    })
}

impl GibbsKernel {
    pub fn log_kernel(&self) -> &DMatrix<f64> {
        &self.log_k
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn domain(&self) -> KernelDomain {
        if self.linear.is_some() {
            KernelDomain::Linear
        } else {
            KernelDomain::Log
        }
    }

    pub fn n(&self) -> usize {
        self.log_k.nrows()
    }

    /// `K` in the linear domain. Entries may underflow to zero.
    pub fn kernel(&self) -> DMatrix<f64> {
        self.linear.clone().unwrap_or_else(|| self.log_k.map(f64::exp))
    }
}

/// Nonnegative transport plan between agents (rows) and targets (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling(DMatrix<f64>);

impl Coupling {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::DimensionMismatch("coupling must be square".into()));
        }
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("coupling entries must be finite and nonnegative"));
        }
        Ok(Self(p))
    }

    /// Permutation coupling `P_{i,σ(i)} = 1/N`.
    pub fn permutation(sigma: &[usize]) -> Self {
        let n = sigma.len();
        let mut p = DMatrix::zeros(n, n);
        for (i, &j) in sigma.iter().enumerate() {
            p[(i, j)] = 1.0 / n as f64;
        }
        Self(p)
    }

    /// All entries `1/N²`.
    pub fn uniform(n: usize) -> Self {
        Self(DMatrix::from_element(n, n, 1.0 / (n * n) as f64))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn row_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.0.row_iter().map(|r| r.sum()))
    }

    pub fn col_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.0.column_iter().map(|c| c.sum()))
    }

    /// `‖P·1 − 1/N‖₁ + ‖Pᵀ·1 − 1/N‖₁`.
    pub fn marginal_violation(&self) -> f64 {
        let target = 1.0 / self.n() as f64;
        let rows: f64 = self.row_sums().iter().map(|s| (s - target).abs()).sum();
        let cols: f64 = self.col_sums().iter().map(|s| (s - target).abs()).sum();
        rows + cols
    }
}

/// `N Σ_j P_ij y_j` for every row `i`.
///
/// When the rows of `P` sum to `1/N`, each output is a convex combination
/// of `points`.
pub fn barycentric_projection(p: &Coupling, points: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = p.n();
    assert_eq!(points.len(), n, "one point per coupling column");
    let dim = points.first().map_or(0, |x| x.len());
    let scale = n as f64;
    (0..n)
        .map(|i| {
            let mut acc = DVector::zeros(dim);
            for (j, y) in points.iter().enumerate() {
                let w = p.0[(i, j)];
                if w != 0.0 {
                    acc.axpy(scale * w, y, 1.0);
                }
            }
            acc
        })
        .collect()
}

/// `H(P) = −Σ P_ij (log P_ij − 1)` with `0·log 0 = 0`.
pub fn entropy(p: &Coupling) -> f64 {
    -p.0
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * (v.ln() - 1.0))
        .sum::<f64>()
}

/// `Σ C_ij P_ij − ε H(P)`, the entropic transport objective at a given plan.
pub fn entropic_objective(cost: &CostMatrix, p: &Coupling, epsilon: f64) -> f64 {
    cost.0.dot(&p.0) - epsilon * entropy(p)
}

/// Minimum of the entropic transport objective over couplings with uniform marginals.
pub fn entropic_cost(cost: &CostMatrix, epsilon: f64, params: &SinkhornParams) -> Result<f64> {
    let kernel = gibbs_kernel(cost, epsilon, KernelDomain::Log)?;
    let sol = sinkhorn_solve(&kernel, &ScalingState::uniform(cost.n()), params)?;
    Ok(entropic_objective(cost, &sol.coupling, epsilon))
}
