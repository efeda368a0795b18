//! Experiment configuration. JSON, unknown keys rejected.

use anyhow::{bail, ensure, Context, Result};
use critic_core::baselines::DdpgConfig;
use critic_core::dynamics::{ArmParams, CostKind, DynamicsModel, TaskSpec};
use critic_core::landscape::GridSpec;
use critic_core::metacritic::{InnerLoopConfig, MetaTask, OuterLoopConfig};
use critic_core::nets::{Activation, CriticModel, MlpConfig, PolicyModel};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Environment {
    /// Scalar `s' = s + a`.
    Toy,
    PointMass {
        dt: f64,
        #[serde(default = "unit")]
        gain: f64,
    },
    /// Planar two-link arm.
    Reacher2 {
        #[serde(default)]
        arm: ArmParams,
        dt: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl Environment {
    pub fn model(&self) -> DynamicsModel {
        match self {
            Environment::Toy => DynamicsModel::ScalarIntegrator,
            Environment::PointMass { dt, gain } => DynamicsModel::PointMass {
                dt: *dt,
                gain: *gain,
            },
            Environment::Reacher2 { arm, dt } => DynamicsModel::two_link(*arm, *dt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    /// The parameters are the action.
    Constant,
    Mlp {
        #[serde(default)]
        hidden: Vec<usize>,
        #[serde(default = "tanh")]
        activation: Activation,
    },
}

fn tanh() -> Activation {
    Activation::Tanh
}

fn elu() -> Activation {
    Activation::Elu
}

impl PolicySpec {
    pub fn model(&self, env: &DynamicsModel) -> PolicyModel {
        match self {
            PolicySpec::Constant => PolicyModel::Constant {
                action_dim: env.action_dim(),
            },
            PolicySpec::Mlp { hidden, activation } => PolicyModel::Mlp(MlpConfig::new(
                env.state_dim(),
                hidden.clone(),
                env.action_dim(),
                *activation,
            )),
        }
    }
}

/// How the goal reaches the critic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoalInput {
    /// `(s, a, g)` concatenated.
    #[default]
    Concat,
    /// `(s - g, a)`; the policy sees `s - g` as well.
    Shift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CriticSpec {
    /// `(s + a)² φ`, scalar problems only.
    Toy,
    Mlp {
        hidden: Vec<usize>,
        #[serde(default = "elu")]
        activation: Activation,
        #[serde(default)]
        goal: GoalInput,
    },
}

impl CriticSpec {
    pub fn model(&self, env: &DynamicsModel) -> CriticModel {
        match self {
            CriticSpec::Toy => CriticModel::ToyQuadratic,
            CriticSpec::Mlp {
                hidden,
                activation,
                goal,
            } => {
                let (sd, ad, gd) = (env.state_dim(), env.action_dim(), env.position_dim());
                match goal {
                    GoalInput::Concat => CriticModel::mlp(sd, ad, gd, hidden.clone(), *activation),
                    GoalInput::Shift => CriticModel::Mlp {
                        net: MlpConfig::new(sd + ad, hidden.clone(), 1, *activation),
                        with_goal: false,
                    },
                }
            }
        }
    }
}

/// Policy learning with a frozen critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaTestSpec {
    /// Gradient steps per learned policy.
    pub iterations: usize,
    /// Fresh policy initializations per goal and seed.
    #[serde(default = "five")]
    pub inits: usize,
}

fn five() -> usize {
    5
}

impl Default for MetaTestSpec {
    fn default() -> Self {
        MetaTestSpec {
            iterations: 50,
            inits: 5,
        }
    }
}

/// Supervised Q comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    pub critic: CriticSpec,
    pub ddpg: DdpgConfig,
    /// Step size when learning new policies on the fitted Q; defaults to the
    /// policy step size used in training.
    #[serde(default)]
    pub test_lr: Option<f64>,
}

impl BaselineSpec {
    pub fn test_lr(&self) -> f64 {
        self.test_lr.unwrap_or(self.ddpg.q.policy_lr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Goals,
    Mass,
    Length,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub kinds: Vec<SweepKind>,
    /// Goal noise standard deviations.
    #[serde(default = "default_stds")]
    pub stds: Vec<f64>,
    /// Multipliers on the distal link mass.
    #[serde(default = "default_masses")]
    pub masses: Vec<f64>,
    /// Distal link lengths, m.
    #[serde(default = "default_lengths")]
    pub lengths: Vec<f64>,
    /// Training goals new goals are sampled around.
    #[serde(default = "default_around")]
    pub around: Vec<usize>,
    #[serde(default = "ten")]
    pub goals_per_cell: usize,
}

fn ten() -> usize {
    10
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

fn default_stds() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

fn default_masses() -> Vec<f64> {
    linspace(0.5, 2.0, 10)
}

fn default_lengths() -> Vec<f64> {
    linspace(0.25, 1.0, 10)
}

fn default_around() -> Vec<usize> {
    vec![0, 1]
}

impl SweepSpec {
    pub fn values(&self, kind: SweepKind) -> &[f64] {
        match kind {
            SweepKind::Goals => &self.stds,
            SweepKind::Mass => &self.masses,
            SweepKind::Length => &self.lengths,
        }
    }
}

/// Landscape study: evaluation goals and the grid around them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeSpec {
    /// Goals to draw landscapes for; training goals may be among them.
    pub goals: Vec<Vec<f64>>,
    /// Initial state of the rollouts.
    pub s0: Vec<f64>,
    #[serde(default = "range")]
    pub theta1: [f64; 2],
    #[serde(default = "range")]
    pub theta2: [f64; 2],
    #[serde(default = "resolution")]
    pub resolution: usize,
}

fn range() -> [f64; 2] {
    [-2.0, 2.0]
}

fn resolution() -> usize {
    41
}

impl LandscapeSpec {
    pub fn grid(&self, goal: &[f64], horizon: usize, cost: CostKind) -> GridSpec {
        GridSpec {
            theta1: self.theta1,
            theta2: self.theta2,
            resolution: self.resolution,
            goal: goal.to_vec(),
            s0: self.s0.clone(),
            horizon,
            cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: Environment,
    pub horizon: usize,
    #[serde(default)]
    pub cost: CostKind,
    /// Training goals.
    pub goals: Vec<Vec<f64>>,
    /// Initial states, shared by every goal. Defaults to the zero state.
    #[serde(default)]
    pub starts: Vec<Vec<f64>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub policy: PolicySpec,
    pub critic: CriticSpec,
    pub inner: InnerLoopConfig,
    pub outer: OuterLoopConfig,
    #[serde(default)]
    pub meta_test: MetaTestSpec,
    #[serde(default)]
    pub baseline: Option<BaselineSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub landscape: Option<LandscapeSpec>,
    /// Terminal task cost counted as solved.
    #[serde(default = "threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn threshold() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let text = std::str::from_utf8(&bytes).context("config is not UTF-8")?;
        Ok((Self::from_json(text)?, bytes))
    }

    pub fn validate(&self) -> Result<()> {
        let env = self.model();
        env.validate()?;
        ensure!(!self.goals.is_empty(), "goal list is empty");
        ensure!(!self.seeds.is_empty(), "seed list is empty");
        for g in &self.goals {
            self.task(g).validate(&env)?;
        }
        for s in &self.starts {
            ensure!(
                s.len() == env.state_dim(),
                "initial state has {} entries, environment needs {}",
                s.len(),
                env.state_dim()
            );
        }
        self.inner.validate()?;
        if let CriticSpec::Toy = self.critic {
            ensure!(
                matches!(self.environment, Environment::Toy),
                "the toy critic needs the toy environment"
            );
        }
        if let Some(b) = &self.baseline {
            b.ddpg.q.validate()?;
            ensure!(
                matches!(
                    b.critic,
                    CriticSpec::Mlp {
                        goal: GoalInput::Shift,
                        ..
                    }
                ),
                "the supervised baseline sees the goal through s - g"
            );
        }
        if let Some(s) = &self.sweep {
            ensure!(!s.kinds.is_empty(), "sweep has no kinds");
            for &k in &s.kinds {
                if s.values(k).is_empty() {
                    bail!("sweep {k:?} has no values");
                }
                if k != SweepKind::Goals {
                    ensure!(
                        matches!(self.environment, Environment::Reacher2 { .. }),
                        "mass and length sweeps need the arm"
                    );
                }
            }
            for &i in &s.around {
                ensure!(
                    i < self.goals.len(),
                    "sweep centre {i} is not a training goal"
                );
            }
            ensure!(!s.around.is_empty(), "sweep needs goals to sample around");
        }
        if let Some(l) = &self.landscape {
            ensure!(!l.goals.is_empty(), "landscape has no goals");
            for g in &l.goals {
                l.grid(g, self.horizon, self.cost).validate()?;
            }
        }
        Ok(())
    }

    pub fn model(&self) -> DynamicsModel {
        self.environment.model()
    }

    pub fn policy_model(&self) -> PolicyModel {
        self.policy.model(&self.model())
    }

    pub fn critic_model(&self) -> CriticModel {
        self.critic.model(&self.model())
    }

    pub fn task(&self, goal: &[f64]) -> TaskSpec {
        TaskSpec {
            goal: goal.to_vec(),
            horizon: self.horizon,
            cost: self.cost,
        }
    }

    pub fn starts(&self) -> Vec<Vec<f64>> {
        if self.starts.is_empty() {
            vec![vec![0.0; self.model().state_dim()]]
        } else {
            self.starts.clone()
        }
    }

    pub fn tasks(&self) -> Vec<MetaTask> {
        let starts = self.starts();
        self.goals
            .iter()
            .map(|g| MetaTask {
                task: self.task(g),
                starts: starts.clone(),
            })
            .collect()
    }

    /// Replaces the seed list with a single seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self
    }
}
