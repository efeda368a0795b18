//! Supervised Q fitting and deterministic policy gradient on the fitted Q,
//! the comparison method. Goal conditioning shifts states to `s - g`.

use crate::diffcore::{DiffError, Graph, Var};
use crate::dynamics::{
    rollout, terminal_task_cost, DynamicsError, EnvStepper, FixedPolicy, TaskSpec, Trajectory,
};
use crate::metacritic::{policy_actions, MetaTask, ThetaInit};
use crate::nets::{
    Conditioning, CriticModel, CriticParams, CriticVars, NetError, PolicyModel, PolicyParams,
};
use crate::optim::{Optimizer, OptimizerConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate instance: {0} is zero")]
    ZeroDenominator(&'static str),
    #[error("Q fitting diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Meta(#[from] crate::metacritic::MetaError),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// `(s_t, a_t, r_t, s_{t+1}, a_{t+1})`. The last transition of a rollout
/// has no successor and carries `r_{T-1} + r_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next: Option<(Vec<f64>, Vec<f64>)>,
    /// Goal of the rollout, in position space.
    pub goal: Vec<f64>,
}

/// FIFO transition store.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayDataset {
    transitions: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayDataset {
    pub fn new(capacity: usize) -> Self {
        ReplayDataset {
            transitions: VecDeque::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter()
    }

    pub fn push(&mut self, t: Transition) {
        if self.capacity > 0 && self.transitions.len() == self.capacity {
            self.transitions.pop_front();
        }
        self.transitions.push_back(t);
    }

    /// Adds every transition of a rollout, pairing each with the action
    /// actually taken at the next state.
    pub fn add_trajectory(&mut self, traj: &Trajectory, goal: &[f64]) {
        let n = traj.horizon();
        for t in 0..n {
            let last = t + 1 == n;
            self.push(Transition {
                state: traj.states[t].clone(),
                action: traj.actions[t].clone(),
                reward: if last {
                    traj.costs[t] + traj.costs[t + 1]
                } else {
                    traj.costs[t]
                },
                next: (!last).then(|| (traj.states[t + 1].clone(), traj.actions[t + 1].clone())),
                goal: goal.to_vec(),
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QLearningConfig {
    /// γ
    pub gamma: f64,
    pub q_lr: f64,
    pub policy_lr: f64,
    /// 0 means full batch.
    #[serde(default)]
    pub batch_size: usize,
    /// Passes over the dataset per fit; with full batches, gradient steps.
    pub epochs: usize,
    /// Policy gradient steps per policy update.
    #[serde(default = "one")]
    pub policy_steps: usize,
    #[serde(default = "sgd")]
    pub optimizer: OptimizerConfig,
    /// Stop fitting once the gradient norm falls to this value.
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub capacity: usize,
}

fn one() -> usize {
    1
}

fn sgd() -> OptimizerConfig {
    OptimizerConfig::Sgd
}

impl QLearningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(BaselineError::Config(format!(
                "γ must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.q_lr > 0.0 && self.policy_lr > 0.0) {
            return Err(BaselineError::Config(
                "learning rates must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn shifted(g: &mut Graph, s: &[f64], goal: &[f64], shift: bool) -> Var {
    if shift {
        let v: Vec<f64> = s
            .iter()
            .enumerate()
            .map(|(i, x)| if i < goal.len() { x - goal[i] } else { *x })
            .collect();
        g.constant_vec(&v)
    } else {
        g.constant_vec(s)
    }
}

/// `δ = Σ (Q(s_t,a_t) - (r_t + γ Q(s_{t+1},a_{t+1})))²`, differentiable in
/// the critic parameters on both sides of the residual.
pub fn q_td_loss(
    g: &mut Graph,
    critic: &CriticModel,
    q: &CriticVars,
    batch: &[&Transition],
    gamma: f64,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(BaselineError::Config("empty batch".into()));
    }
    let shift = critic.conditioning() == Conditioning::Shift;
    let mut total = None;
    for t in batch {
        let goal = g.constant_vec(&t.goal);
        let s = shifted(g, &t.state, &t.goal, shift);
        let a = g.constant_vec(&t.action);
        let q0 = q.forward(g, s, a, goal)?;
        let mut target = g.scalar_const(t.reward);
        if let Some((s1, a1)) = &t.next {
            let s1 = shifted(g, s1, &t.goal, shift);
            let a1 = g.constant_vec(a1);
            let q1 = q.forward(g, s1, a1, goal)?;
            let q1 = g.scale(q1, gamma);
            target = g.add(target, q1);
        }
        let d = g.sub(q0, target);
        let d2 = g.square(d);
        total = Some(match total {
            Some(acc) => g.add(acc, d2),
            None => d2,
        });
    }
    Ok(total.expect("batch is nonempty"))
}

/// Value and gradient of `δ` at `phi`.
pub fn q_td_loss_and_grad(
    critic: &CriticModel,
    phi: &[f64],
    batch: &[&Transition],
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let p = g.input_vec(phi);
    let q = critic.bind(&mut g, p)?;
    let loss = q_td_loss(&mut g, critic, &q, batch, gamma)?;
    g.check(loss)?;
    let grad = g.grad_values(loss, &[p])?.flatten();
    Ok((g.scalar(loss), grad))
}

/// Fits Q to the dataset by descending `δ`.
pub fn fit_q(
    critic: &CriticModel,
    phi0: Vec<f64>,
    dataset: &ReplayDataset,
    cfg: &QLearningConfig,
) -> Result<CriticParams> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(BaselineError::Config("dataset is empty".into()));
    }
    let all: Vec<&Transition> = dataset.transitions().collect();
    let batch = if cfg.batch_size == 0 {
        all.len()
    } else {
        cfg.batch_size.min(all.len())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut phi = phi0;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.q_lr, phi.len());
    let mut step = 0;
    for _ in 0..cfg.epochs {
        if batch < all.len() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let b: Vec<&Transition> = chunk.iter().map(|&i| all[i]).collect();
            let (loss, grad) = q_td_loss_and_grad(critic, &phi, &b, cfg.gamma)
                .map_err(|_| BaselineError::Diverged { step })?;
            if !(loss <= 1e12) {
                return Err(BaselineError::Diverged { step });
            }
            let gn = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
            if batch == all.len() && cfg.tolerance.is_some_and(|tol| gn < tol) {
                return Ok(CriticParams(phi));
            }
            opt.step(&mut phi, &grad);
            step += 1;
        }
    }
    Ok(CriticParams(phi))
}

/// Where the policy objective `Σ_t Q(s_t, π_θ(s_t))` is evaluated.
pub enum PolicyStates<'a> {
    /// Fixed states, all belonging to one goal.
    Fixed {
        states: Vec<Vec<f64>>,
        goal: Vec<f64>,
    },
    /// States of fresh rollouts of the current policy from each start.
    Rollout {
        env: &'a dyn EnvStepper,
        tasks: &'a [MetaTask],
    },
}

fn q_policy_grad(
    critic: &CriticModel,
    phi: &[f64],
    policy: &PolicyModel,
    theta: &[f64],
    states: &[Vec<f64>],
    goal: &[f64],
    limit: Option<f64>,
) -> Result<Vec<f64>> {
    let shift = critic.conditioning() == Conditioning::Shift;
    let mut g = Graph::new();
    let p = g.constant_vec(phi);
    let q = critic.bind(&mut g, p)?;
    let th = g.input_vec(theta);
    let pv = policy.bind(&mut g, th)?;
    let goal_v = g.constant_vec(goal);
    let svars: Vec<Var> = states
        .iter()
        .map(|s| shifted(&mut g, s, goal, shift))
        .collect();
    let actions = policy_actions(&mut g, &pv, &svars, None, limit)?;
    let mut total = g.scalar_const(0.0);
    for (&s, &a) in svars.iter().zip(&actions) {
        let c = q.forward(&mut g, s, a, goal_v)?;
        total = g.add(total, c);
    }
    g.check(total)?;
    Ok(g.grad_values(total, &[th])?.flatten())
}

fn policy_offset(critic: &CriticModel, task: &TaskSpec, dim: usize) -> Option<Vec<f64>> {
    (critic.conditioning() == Conditioning::Shift).then(|| task.state_offset(dim))
}

/// Deterministic policy gradient descent on the frozen Q.
pub fn policy_from_q(
    critic: &CriticModel,
    phi: &[f64],
    policy: &PolicyModel,
    theta0: Vec<f64>,
    cfg: &QLearningConfig,
    states: &PolicyStates<'_>,
) -> Result<PolicyParams> {
    let mut theta = theta0;
    for _ in 0..cfg.policy_steps {
        let mut grad = vec![0.0; theta.len()];
        match states {
            PolicyStates::Fixed { states, goal } => {
                grad = q_policy_grad(critic, phi, policy, &theta, states, goal, None)?;
            }
            PolicyStates::Rollout { env, tasks } => {
                for t in tasks.iter() {
                    let off = policy_offset(critic, &t.task, env.state_dim());
                    for s0 in &t.starts {
                        let mut fp = FixedPolicy::new(policy, &theta);
                        if let Some(o) = &off {
                            fp = fp.with_offset(o);
                        }
                        let traj = rollout(fp, *env, s0, &t.task)?;
                        let n = traj.horizon();
                        let gi = q_policy_grad(
                            critic,
                            phi,
                            policy,
                            &theta,
                            &traj.states[..n],
                            &t.task.goal,
                            env.action_limit(),
                        )?;
                        for (acc, x) in grad.iter_mut().zip(&gi) {
                            *acc += x;
                        }
                    }
                }
            }
        }
        for (p, d) in theta.iter_mut().zip(&grad) {
            *p -= cfg.policy_lr * d;
        }
    }
    Ok(PolicyParams(theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdpgConfig {
    pub q: QLearningConfig,
    pub iterations: usize,
    pub theta_init: ThetaInit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgResult {
    pub q: CriticParams,
    pub policy: PolicyParams,
    /// Terminal task cost per iteration and goal, summed over starts,
    /// measured on the rollouts that fed that iteration's fit.
    pub curve: Vec<Vec<f64>>,
    pub diverged: Option<usize>,
}

/// Alternates rollouts, Q fitting and policy updates. One policy serves all
/// goals through its `s - g` input.
pub fn ddpg_train(
    critic: &CriticModel,
    policy: &PolicyModel,
    env: &dyn EnvStepper,
    tasks: &[MetaTask],
    cfg: &DdpgConfig,
) -> Result<DdpgResult> {
    cfg.q.validate()?;
    if tasks.is_empty() {
        return Err(BaselineError::Config("goal set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.q.seed);
    let mut theta = cfg.theta_init.draw(policy, &mut rng)?;
    let mut phi = critic.init_params(cfg.q.seed);
    let mut data = ReplayDataset::new(cfg.q.capacity);
    let mut curve = Vec::with_capacity(cfg.iterations);
    let sd = env.state_dim();
    for it in 0..cfg.iterations {
        let mut costs = Vec::with_capacity(tasks.len());
        for t in tasks {
            let off = policy_offset(critic, &t.task, sd);
            let mut total = 0.0;
            for s0 in &t.starts {
                let mut fp = FixedPolicy::new(policy, &theta);
                if let Some(o) = &off {
                    fp = fp.with_offset(o);
                }
                let traj = rollout(fp, env, s0, &t.task)?;
                total += terminal_task_cost(&traj, &t.task.goal)?;
                data.add_trajectory(&traj, &t.task.goal);
            }
            costs.push(total);
        }
        curve.push(costs);
        let q_cfg = QLearningConfig {
            seed: cfg.q.seed.wrapping_add(it as u64 + 1),
            ..cfg.q.clone()
        };
        phi = match fit_q(critic, phi, &data, &q_cfg) {
            Ok(p) => p.0,
            Err(BaselineError::Diverged { .. }) => {
                return Ok(DdpgResult {
                    q: CriticParams(critic.init_params(cfg.q.seed)),
                    policy: PolicyParams(theta),
                    curve,
                    diverged: Some(it),
                })
            }
            Err(e) => return Err(e),
        };
        theta = policy_from_q(
            critic,
            &phi,
            policy,
            theta,
            &cfg.q,
            &PolicyStates::Rollout { env, tasks },
        )?
        .0;
    }
    Ok(DdpgResult {
        q: CriticParams(phi),
        policy: PolicyParams(theta),
        curve,
        diverged: None,
    })
}

/// Convergence point of the scalar meta-critic of the learning-to-learn
/// comparison: `-(s₀+s₁) / (2[(s₀+a)² + (s₁+a)²])`.
pub fn metacritic_scalar_fixed_point(s0: f64, s1: f64, a: f64) -> Result<f64> {
    let den = 2.0 * ((s0 + a) * (s0 + a) + (s1 + a) * (s1 + a));
    if den == 0.0 {
        return Err(BaselineError::ZeroDenominator("(s0+a)^2 + (s1+a)^2"));
    }
    Ok(-(s0 + s1) / den)
}

/// Dataset of one toy rollout with constant action `a`.
pub fn toy_dataset(s0: f64, a: f64, goal: f64) -> ReplayDataset {
    let s1 = s0 + a;
    let s2 = s1 + a;
    let traj = Trajectory {
        states: vec![vec![s0], vec![s1], vec![s2]],
        actions: vec![vec![a], vec![a]],
        costs: vec![0.0, 0.0, (s2 - goal) * (s2 - goal)],
    };
    let mut d = ReplayDataset::new(0);
    d.add_trajectory(&traj, &[goal]);
    d
}

#[cfg(test)]
mod tests;
