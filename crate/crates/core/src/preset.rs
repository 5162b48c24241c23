//! Seeded double-integrator instances.
//!
//! Agents are `d`-dimensional double integrators with state
//! `[position; velocity]`. Targets sit at rest on a line (`d = 1`) or a
//! grid (`d = 2`); initial states are drawn uniformly from a box.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lti::{zoh_discretize, ContinuousAgent, DiscreteAgent};

/// Sampling period of the discrete preset.
pub const SAMPLING_PERIOD: f64 = 0.02;

/// `ẋ = [[0, I], [0, 0]] x + [0; I] u` in `d` position dimensions.
pub fn double_integrator(d: usize) -> Result<ContinuousAgent> {
    if d == 0 {
        return Err(Error::invalid("position dimension must be positive"));
    }
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    let mut b = DMatrix::zeros(2 * d, d);
    for k in 0..d {
        a[(k, d + k)] = 1.0;
        b[(d + k, k)] = 1.0;
    }
    ContinuousAgent::new(a, b)
}

/// Zero-order hold of [`double_integrator`] with period `h`.
pub fn discrete_double_integrator(d: usize, h: f64) -> Result<DiscreteAgent> {
    zoh_discretize(&double_integrator(d)?, h)
}

/// `n` points evenly spaced on `[lo, hi]`, at rest. A single point sits at the midpoint.
pub fn line_targets(n: usize, lo: f64, hi: f64) -> Vec<DVector<f64>> {
    (0..n)
        .map(|j| {
            let p = if n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * j as f64 / (n - 1) as f64
            };
            DVector::from_vec(vec![p, 0.0])
        })
        .collect()
}

/// `rows × cols` planar grid over `[lo, hi]²`, at rest. States are `[px, py, 0, 0]`.
pub fn grid_targets(rows: usize, cols: usize, lo: f64, hi: f64) -> Vec<DVector<f64>> {
    let coord = |k: usize, m: usize| {
        if m == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * k as f64 / (m - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(DVector::from_vec(vec![coord(c, cols), coord(r, rows), 0.0, 0.0]));
        }
    }
    out
}

/// `n` states drawn uniformly from the box `[lo, hi]` (componentwise).
pub fn uniform_box(rng: &mut impl Rng, n: usize, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    if lo.len() != hi.len() {
        return Err(Error::DimensionMismatch("box corners differ in length".into()));
    }
    if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
        return Err(Error::invalid("box needs finite lo <= hi"));
    }
    Ok((0..n)
        .map(|_| DVector::from_fn(lo.len(), |k, _| if lo[k] == hi[k] { lo[k] } else { rng.random_range(lo[k]..hi[k]) }))
        .collect())
}

/// [`uniform_box`] drawn from a ChaCha8 stream seeded with `seed`.
pub fn seeded_box(seed: u64, n: usize, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    uniform_box(&mut ChaCha8Rng::seed_from_u64(seed), n, lo, hi)
}

/// Line-target instance for the one-dimensional double integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct LinePreset {
    pub n_agents: usize,
    /// Target positions span `[target_lo, target_hi]`.
    pub target_lo: f64,
    pub target_hi: f64,
    /// Initial positions are uniform on `[-position_box, position_box]`.
    pub position_box: f64,
    /// Initial velocities are uniform on `[-velocity_box, velocity_box]`.
    pub velocity_box: f64,
    pub seed: u64,
}

impl Default for LinePreset {
    fn default() -> Self {
        Self {
            n_agents: 40,
            target_lo: -0.75,
            target_hi: 0.75,
            position_box: 0.75,
            velocity_box: 0.1,
            seed: 0,
        }
    }
}

/// Target spacing of [`LinePreset::continuous`].
pub const CONTINUOUS_SPACING: f64 = 20.0 / 39.0;

impl LinePreset {
    /// Continuous-time instance: targets [`CONTINUOUS_SPACING`] apart and
    /// centred at the origin, agents starting in `[-1, 1] × [-0.1, 0.1]`.
    ///
    /// The continuous weight is about `1/h` times smaller than the discrete
    /// one, so targets are spread wider than in the default instance.
    pub fn continuous(n_agents: usize, seed: u64) -> Self {
        let half = 0.5 * CONTINUOUS_SPACING * n_agents.saturating_sub(1) as f64;
        Self {
            n_agents,
            target_lo: -half,
            target_hi: half,
            position_box: 1.0,
            velocity_box: 0.1,
            seed,
        }
    }

    pub fn targets(&self) -> Vec<DVector<f64>> {
        line_targets(self.n_agents, self.target_lo, self.target_hi)
    }

    pub fn initial_states(&self) -> Result<Vec<DVector<f64>>> {
        let hi = DVector::from_vec(vec![self.position_box, self.velocity_box]);
        seeded_box(self.seed, self.n_agents, &(-&hi), &hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::LinearAgent;

    #[test]
    fn discrete_preset_matrices() {
        let d = discrete_double_integrator(1, SAMPLING_PERIOD).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.02, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0002, 0.02]);
        assert!((d.a() - a).amax() < 1e-15);
        assert!((d.b() - b).amax() < 1e-15);
    }

    #[test]
    fn planar_integrator_shape() {
        let p = double_integrator(2).unwrap();
        assert_eq!(p.state_dim(), 4);
        assert_eq!(p.input_dim(), 2);
        assert_eq!(p.a()[(1, 3)], 1.0);
        assert_eq!(p.b()[(3, 1)], 1.0);
    }

    #[test]
    fn target_layouts() {
        let t = line_targets(5, -1.0, 1.0);
        assert_eq!(t[0][0], -1.0);
        assert_eq!(t[4][0], 1.0);
        assert_eq!(t[2][0], 0.0);
        assert_eq!(line_targets(1, 2.0, 4.0)[0][0], 3.0);
        let g = grid_targets(2, 3, 0.0, 1.0);
        assert_eq!(g.len(), 6);
        assert_eq!(g[5].as_slice(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn seeded_states_repeat() {
        let p = LinePreset::default();
        let a = p.initial_states().unwrap();
        assert_eq!(a, p.initial_states().unwrap());
        assert!(a.iter().all(|x| x[0].abs() <= 0.75 && x[1].abs() <= 0.1));
        let q = LinePreset { seed: 1, ..p };
        assert_ne!(a, q.initial_states().unwrap());
    }
}
