//! Linear time-invariant agent models and the quantities the MPC layer needs
//! from them: discretization, minimum-energy Gramians, closed-loop matrices,
//! equilibrium inputs and spectral certificates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition number above which a Gramian is treated as singular.
pub const GRAMIAN_CONDITION_LIMIT: f64 = 1e12;

/// Relative residual accepted for equilibrium inputs.
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-9;

/// Time domain of an agent model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Continuous,
    Discrete,
}

/// Common view of an agent's `(A, B)` pair.
pub trait LinearAgent {
    fn a(&self) -> &DMatrix<f64>;
    fn b(&self) -> &DMatrix<f64>;
    fn mode(&self) -> Mode;

    fn state_dim(&self) -> usize {
        self.a().nrows()
    }

    fn input_dim(&self) -> usize {
        self.b().ncols()
    }
}

fn check_pair(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "A must be square and non-empty, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.nrows() != n || b.ncols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "B must be {n}xm with m >= 1, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::invalid("system matrices contain non-finite entries"));
    }
    Ok(())
}

/// `ẋ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousAgent {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl ContinuousAgent {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        check_pair(&a, &b)?;
        Ok(Self { a, b })
    }

    /// Position/velocity double integrator with a force input.
    pub fn double_integrator() -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        }
    }
}

impl LinearAgent for ContinuousAgent {
    fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    fn mode(&self) -> Mode {
        Mode::Continuous
    }
}

/// `x[k+1] = A x[k] + B u[k]` with sampling period `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteAgent {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    h: f64,
}

impl DiscreteAgent {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, h: f64) -> Result<Self> {
        check_pair(&a, &b)?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!("sampling period must be positive, got {h}")));
        }
        Ok(Self { a, b, h })
    }

    pub fn sampling_period(&self) -> f64 {
        self.h
    }
}

impl LinearAgent for DiscreteAgent {
    fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    fn mode(&self) -> Mode {
        Mode::Discrete
    }
}

/// `e^M` by scaling and squaring with a degree-13 Padé core.
pub fn matrix_exponential(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch("matrix exponential needs a square matrix".into()));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("matrix exponential of a non-finite matrix"));
    }
    Ok(m.exp())
}

/// Zero-order-hold discretization using a single augmented exponential:
/// `exp([[A, B], [0, 0]] h) = [[A_d, B_d], [0, I]]`.
pub fn zoh_discretize(agent: &ContinuousAgent, h: f64) -> Result<DiscreteAgent> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("sampling period must be positive, got {h}")));
    }
    let n = agent.state_dim();
    let m = agent.input_dim();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(agent.a() * h));
    aug.view_mut((0, n), (n, m)).copy_from(&(agent.b() * h));
    let e = matrix_exponential(&aug)?;
    DiscreteAgent::new(
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
        h,
    )
}

/// Prediction horizon of a finite-horizon minimum-energy problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Continuous horizon `T_h` in time units.
    Time(f64),
    /// Discrete horizon `τ_h` in steps.
    Steps(usize),
}

/// Per-agent quantities derived from the minimum-energy problem over one horizon.
///
/// `gramian` is the continuous controllability Gramian
/// `W = ∫₀^T e^{-At} B Bᵀ e^{-Aᵀt} dt` or the discrete reachability Gramian
/// `G = Σ_{k<τ} Aᵏ B Bᵀ (Aᵀ)ᵏ`. `weight` is the quadratic form of the
/// transport cost, `W⁻¹` in the continuous case and `(A^τ)ᵀ G⁻¹ A^τ` in the
/// discrete case. `feedback` is the MPC gain, so that
/// `closed_loop = A - B·feedback`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGains {
    pub horizon: Horizon,
    pub gramian: DMatrix<f64>,
    pub weight: DMatrix<f64>,
    pub feedback: DMatrix<f64>,
    pub closed_loop: DMatrix<f64>,
    /// Spectral radius of `closed_loop`.
    pub rho: f64,
    /// Condition number of `gramian`.
    pub condition: f64,
    /// `e^{-Aᵀ T_h}`; continuous gains only.
    pub exp_neg_at: Option<DMatrix<f64>>,
}

impl AgentGains {
    pub fn mode(&self) -> Mode {
        match self.horizon {
            Horizon::Time(_) => Mode::Continuous,
            Horizon::Steps(_) => Mode::Discrete,
        }
    }

    /// `κ(ν)` for this agent's closed-loop matrix, see [`kappa_bound`].
    pub fn kappa(&self, nu: f64) -> Result<f64> {
        kappa_bound(&self.closed_loop, nu)
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Condition number of a symmetric matrix, `∞` if it is not positive definite.
fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 || !min.is_finite() || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

fn invert_gramian(g: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let condition = spd_condition(g);
    if condition > GRAMIAN_CONDITION_LIMIT {
        return Err(Error::NearSingularGramian { condition });
    }
    let inv = g
        .clone()
        .cholesky()
        .ok_or(Error::NearSingularGramian { condition })?
        .inverse();
    Ok((symmetrize(&inv), condition))
}

/// Minimum-energy gains for a continuous agent over horizon `t_h`.
///
/// The Gramian is evaluated with Van Loan's block exponential:
/// the upper-right block of `exp([[-A, BBᵀ], [0, Aᵀ]] T)` is
/// `∫₀^T e^{-A(T-s)} BBᵀ e^{Aᵀs} ds`, and right-multiplying by `e^{-AᵀT}`
/// gives `W`.
pub fn continuous_gramian(agent: &ContinuousAgent, t_h: f64) -> Result<AgentGains> {
    if !(t_h > 0.0 && t_h.is_finite()) {
        return Err(Error::invalid(format!("horizon must be positive, got {t_h}")));
    }
    let a = agent.a();
    let b = agent.b();
    let n = agent.state_dim();
    let bbt = b * b.transpose();

    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-a * t_h));
    block.view_mut((0, n), (n, n)).copy_from(&(&bbt * t_h));
    block.view_mut((n, n), (n, n)).copy_from(&(a.transpose() * t_h));
    let e = matrix_exponential(&block)?;
    let exp_neg_at = matrix_exponential(&(-a.transpose() * t_h))?;
    let gramian = symmetrize(&(e.view((0, n), (n, n)) * &exp_neg_at));

    let (weight, condition) = invert_gramian(&gramian)?;
    let feedback = b.transpose() * &weight;
    let closed_loop = a - b * &feedback;

    let abscissa = eigenvalues(&closed_loop)?
        .iter()
        .map(|z| z.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if abscissa >= 0.0 {
        return Err(Error::UnstableClosedLoop { margin: -abscissa });
    }
    let rho = spectral_radius(&closed_loop)?;

    Ok(AgentGains {
        horizon: Horizon::Time(t_h),
        gramian,
        weight,
        feedback,
        closed_loop,
        rho,
        condition,
        exp_neg_at: Some(exp_neg_at),
    })
}

/// Minimum-energy gains for a discrete agent over `tau_h` steps.
pub fn reachability_gramian(agent: &DiscreteAgent, tau_h: usize) -> Result<AgentGains> {
    if tau_h == 0 {
        return Err(Error::invalid("horizon must be at least one step"));
    }
    let a = agent.a();
    let b = agent.b();
    let n = agent.state_dim();

    // powers[k] = A^k for k = 0..=tau_h
    let mut powers = Vec::with_capacity(tau_h + 1);
    powers.push(DMatrix::identity(n, n));
    for k in 0..tau_h {
        let next = a * &powers[k];
        powers.push(next);
    }

    let mut gramian = DMatrix::zeros(n, n);
    for p in &powers[..tau_h] {
        let pb = p * b;
        gramian += &pb * pb.transpose();
    }
    let gramian = symmetrize(&gramian);
    let (g_inv, condition) = invert_gramian(&gramian)?;

    let a_tau = &powers[tau_h];
    let weight = symmetrize(&(a_tau.transpose() * &g_inv * a_tau));
    let feedback = b.transpose() * powers[tau_h - 1].transpose() * &g_inv * a_tau;
    let closed_loop = a - b * &feedback;
    let rho = spectral_radius(&closed_loop)?;
    if rho >= 1.0 {
        return Err(Error::UnstableClosedLoop { margin: 1.0 - rho });
    }

    Ok(AgentGains {
        horizon: Horizon::Steps(tau_h),
        gramian,
        weight,
        feedback,
        closed_loop,
        rho,
        condition,
        exp_neg_at: None,
    })
}

/// Minimum-norm constant input that makes `target` an equilibrium:
/// `A x + B ū = 0` (continuous) or `A x + B ū = x` (discrete).
pub fn equilibrium_input<S: LinearAgent + ?Sized>(agent: &S, target: &DVector<f64>) -> Result<DVector<f64>> {
    let a = agent.a();
    let b = agent.b();
    if target.len() != agent.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "target has dimension {}, agent state has {}",
            target.len(),
            agent.state_dim()
        )));
    }
    let rhs = match agent.mode() {
        Mode::Continuous => -(a * target),
        Mode::Discrete => target - a * target,
    };
    let pinv = b
        .clone()
        .pseudo_inverse(1e-13 * b.norm().max(1.0))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let ubar = pinv * &rhs;
    let residual = (b * &ubar - &rhs).norm();
    if residual > EQUILIBRIUM_TOLERANCE * (1.0 + target.norm()) {
        return Err(Error::InfeasibleTarget { residual });
    }
    Ok(ubar)
}

/// Eigenvalues as `(re, im)` pairs.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch("eigenvalues need a square matrix".into()));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("eigenvalues of a non-finite matrix"));
    }
    Ok(m.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect())
}

pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .fold(0.0, f64::max))
}

/// Induced Euclidean norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest `κ` with `‖Mᵏ‖₂ ≤ κ (ρ+ν)ᵏ` for every `k ≥ 0`.
///
/// Scans `(M/r)ᵏ` with `r = ρ+ν` until its norm drops below one at some
/// `k₀`. Every later power factors through that one, so the running maximum
/// over `k < k₀` is the supremum over all `k`.
pub fn kappa_bound(m: &DMatrix<f64>, nu: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::invalid(format!("nu must be positive, got {nu}")));
    }
    let rho = spectral_radius(m)?;
    let r = rho + nu;
    if r >= 1.0 {
        return Err(Error::invalid(format!("rho + nu = {r} must be below one")));
    }
    const MAX_POWER: usize = 1_000_000;
    let scaled = m / r;
    let mut power = DMatrix::identity(m.nrows(), m.ncols());
    let mut kappa: f64 = 1.0;
    for _ in 0..MAX_POWER {
        power = &power * &scaled;
        let ratio = spectral_norm(&power);
        if ratio < 1.0 {
            return Ok(kappa);
        }
        kappa = kappa.max(ratio);
    }
    Err(Error::invalid("kappa scan did not terminate"))
}

/// Target states with their equilibrium inputs for every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    targets: Vec<DVector<f64>>,
    /// `ubar[i][j]` makes target `j` an equilibrium of agent `i`.
    ubar: Vec<Vec<DVector<f64>>>,
    rbar: f64,
    mode: Mode,
}

impl TargetSet {
    /// Builds the set using minimum-norm equilibrium inputs.
    pub fn new<S: LinearAgent>(agents: &[S], targets: Vec<DVector<f64>>) -> Result<Self> {
        let ubar = agents
            .iter()
            .map(|agent| targets.iter().map(|t| equilibrium_input(agent, t)).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        Self::from_parts(agents, targets, ubar)
    }

    /// Builds the set from a caller-supplied equilibrium table, checking every entry.
    pub fn with_ubar<S: LinearAgent>(
        agents: &[S],
        targets: Vec<DVector<f64>>,
        ubar: Vec<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        if ubar.len() != agents.len() || ubar.iter().any(|row| row.len() != targets.len()) {
            return Err(Error::DimensionMismatch("equilibrium table must be agents x targets".into()));
        }
        for (agent, row) in agents.iter().zip(&ubar) {
            for (t, u) in targets.iter().zip(row) {
                if u.len() != agent.input_dim() || t.len() != agent.state_dim() {
                    return Err(Error::DimensionMismatch("equilibrium input dimension".into()));
                }
                let r = match agent.mode() {
                    Mode::Continuous => agent.a() * t + agent.b() * u,
                    Mode::Discrete => agent.a() * t + agent.b() * u - t,
                };
                let residual = r.norm();
                if residual > EQUILIBRIUM_TOLERANCE * (1.0 + t.norm()) {
                    return Err(Error::InfeasibleTarget { residual });
                }
            }
        }
        Self::from_parts(agents, targets, ubar)
    }

    fn from_parts<S: LinearAgent>(
        agents: &[S],
        targets: Vec<DVector<f64>>,
        ubar: Vec<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::invalid("target set is empty"));
        }
        let mode = agents[0].mode();
        if agents.iter().any(|a| a.mode() != mode) {
            return Err(Error::invalid("agents mix continuous and discrete models"));
        }
        if ubar.len() != targets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} agents for {} targets",
                ubar.len(),
                targets.len()
            )));
        }
        let rbar = targets.iter().map(|t| t.norm()).fold(0.0, f64::max);
        Ok(Self {
            targets,
            ubar,
            rbar,
            mode,
        })
    }

    /// Time domain of the equilibrium equations the inputs satisfy.
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn targets(&self) -> &[DVector<f64>] {
        &self.targets
    }

    pub fn ubar(&self) -> &[Vec<DVector<f64>>] {
        &self.ubar
    }

    /// `max_j ‖x_j^d‖`.
    pub fn rbar(&self) -> f64 {
        self.rbar
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}
