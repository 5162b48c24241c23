//! Experiment configuration: a JSON document with command-line overrides.
//!
//! Every field has a default, so `{}` is a valid config describing the
//! 40-agent discrete double-integrator instance.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use smpc_core::preset::{LinePreset, SAMPLING_PERIOD};

/// Invalid or inconsistent configuration. Maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSpec {
    Continuous,
    Discrete,
}

/// Agent models. Matrices are continuous-time unless `discrete` is set;
/// discrete runs apply a zero-order hold with `sampling_period` to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AgentSpec {
    /// Double integrator in `dim` position dimensions.
    DoubleIntegrator {
        #[serde(default = "one")]
        dim: usize,
    },
    /// One model shared by every agent.
    Shared(Matrices),
    /// One model per agent, in target order.
    PerAgent { agents: Vec<Matrices> },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrices {
    /// Row-major `A`.
    pub a: Vec<Vec<f64>>,
    /// Row-major `B`.
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub discrete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Evenly spaced positions on `[lo, hi]`, at rest.
    Line { count: usize, lo: f64, hi: f64 },
    /// Planar grid over `[lo, hi]²`, at rest.
    Grid { rows: usize, cols: usize, lo: f64, hi: f64 },
    Explicit { points: Vec<Vec<f64>> },
}

impl TargetSpec {
    pub fn count(&self) -> usize {
        match self {
            TargetSpec::Line { count, .. } => *count,
            TargetSpec::Grid { rows, cols, .. } => rows * cols,
            TargetSpec::Explicit { points } => points.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Uniform in the box `[lo, hi]`, drawn from `seed`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Explicit { points: Vec<Vec<f64>> },
}

/// Sinkhorn iterations per sampling instant: a count or `"converge"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IterSpec {
    Fixed(usize),
    Converge(Converge),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Converge {
    Converge,
}

impl IterSpec {
    pub const CONVERGE: IterSpec = IterSpec::Converge(Converge::Converge);

    pub fn label(&self) -> String {
        match self {
            IterSpec::Fixed(s) => format!("s{s}"),
            IterSpec::Converge(_) => "converged".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DomainSpec {
    Log,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornSpec {
    pub tol: f64,
    pub max_iter: usize,
    /// Plain iterations per solve before Newton steps start; 200 when
    /// absent. Zero disables them. Fixed-S runs never solve, so this only
    /// affects converged and continuous runs.
    pub newton_after: Option<usize>,
}

impl Default for SinkhornSpec {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100_000,
            newton_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateSpec {
    pub delta: f64,
    /// Per-agent `ν`; `(1 − ρ_i)/2` when absent.
    pub nu: Option<Vec<f64>>,
}

impl Default for CertificateSpec {
    fn default() -> Self {
        Self { delta: 0.1, nu: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub csv: bool,
    pub svg: bool,
    pub summary: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("smpc-out"),
            csv: true,
            svg: true,
            summary: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: ModeSpec,
    pub agents: AgentSpec,
    pub targets: TargetSpec,
    pub initial: InitialSpec,
    /// Seed for every random draw (currently the initial-state box).
    pub seed: u64,
    pub epsilon: f64,
    /// Discrete horizon in steps.
    pub tau_h: usize,
    /// Continuous horizon in time units.
    pub t_h: f64,
    pub sampling_period: f64,
    /// RK4 step of continuous runs; `0.01·t_h` when absent.
    pub step: Option<f64>,
    pub steps: usize,
    /// One discrete run per entry. Ignored by continuous runs.
    pub sweep: Vec<IterSpec>,
    /// Also run the exact-assignment baseline (discrete only).
    pub baseline: bool,
    pub sinkhorn: SinkhornSpec,
    pub domain: DomainSpec,
    pub alpha0: Option<Vec<f64>>,
    /// Keep every n-th coupling in memory; zero keeps none.
    pub coupling_stride: usize,
    pub certificate: CertificateSpec,
    pub output: OutputSpec,
    /// Run sweep members on a thread pool.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            mode: ModeSpec::Discrete,
            agents: AgentSpec::DoubleIntegrator { dim: 1 },
            targets: TargetSpec::Explicit { points: Vec::new() },
            initial: InitialSpec::Explicit { points: Vec::new() },
            seed: 0,
            epsilon: 0.7,
            tau_h: 50,
            t_h: 1.0,
            sampling_period: SAMPLING_PERIOD,
            step: None,
            steps: 500,
            sweep: vec![IterSpec::CONVERGE],
            baseline: false,
            sinkhorn: SinkhornSpec::default(),
            domain: DomainSpec::Log,
            alpha0: None,
            coupling_stride: 0,
            certificate: CertificateSpec::default(),
            output: OutputSpec::default(),
            parallel: false,
        };
        cfg.apply_preset(Preset::DoubleIntegrator, None);
        cfg
    }
}

/// Named seeded instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// 40 sampled double integrators, targets on [-0.75, 0.75].
    DoubleIntegrator,
    /// Continuous double integrators with targets 20/39 apart.
    DoubleIntegratorContinuous,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces agents, targets, initial box and mode with a preset instance.
    /// `n` defaults to the current target count (40 for an empty set).
    pub fn apply_preset(&mut self, preset: Preset, n: Option<usize>) {
        let n = n.unwrap_or(match self.targets.count() {
            0 => 40,
            c => c,
        });
        let p = match preset {
            Preset::DoubleIntegrator => LinePreset {
                n_agents: n,
                seed: self.seed,
                ..LinePreset::default()
            },
            Preset::DoubleIntegratorContinuous => LinePreset::continuous(n, self.seed),
        };
        self.agents = AgentSpec::DoubleIntegrator { dim: 1 };
        self.targets = TargetSpec::Line {
            count: n,
            lo: p.target_lo,
            hi: p.target_hi,
        };
        self.initial = InitialSpec::Box {
            lo: vec![-p.position_box, -p.velocity_box],
            hi: vec![p.position_box, p.velocity_box],
        };
        match preset {
            Preset::DoubleIntegrator => {
                self.mode = ModeSpec::Discrete;
                self.steps = 500;
            }
            Preset::DoubleIntegratorContinuous => {
                self.mode = ModeSpec::Continuous;
                self.steps = 1000;
            }
        }
    }

    /// Changes the number of agents, keeping the layout of a line target set.
    pub fn set_agent_count(&mut self, n: usize) -> Result<()> {
        match &mut self.targets {
            TargetSpec::Line { count, .. } => {
                *count = n;
                Ok(())
            }
            _ => Err(config_error("--n only applies to line targets; use --preset or edit the config")),
        }
    }

    /// Continuous RK4 step.
    pub fn rk4_step(&self) -> f64 {
        self.step.unwrap_or(0.01 * self.t_h)
    }

    /// Sweep members in increasing-S order, converged last, without repeats.
    pub fn ordered_sweep(&self) -> Vec<IterSpec> {
        let mut s = self.sweep.clone();
        s.sort();
        s.dedup();
        s
    }
}
