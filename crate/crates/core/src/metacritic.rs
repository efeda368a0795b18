//! Bi-level meta-training of a critic through a differentiable model, and
//! model-free policy learning with the frozen critic.
//!
//! Inner loop: `θ_new(φ) = θ - α ∇_θ Σ_t M(s_t, π_θ(s_t), g; φ)`, with the
//! rollout states held fixed. Outer loop: roll `π_{θ_new}` through the model,
//! charge the task cost, and descend on `φ` through the inner update.

use crate::diffcore::{DiffError, Graph, Shape, Var};
use crate::dynamics::{
    rollout, rollout_graph, task_cost_graph, terminal_task_cost, DynamicsError, DynamicsModel,
    EnvStepper, FixedPolicy, TaskSpec,
};
use crate::nets::{
    Conditioning, CriticModel, CriticParams, CriticVars, NetError, PolicyModel, PolicyParams,
    PolicyVars,
};
use crate::optim::{Optimizer, OptimizerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetaError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite inner gradient (last finite |θ| = {theta_norm})")]
    NonFiniteInner { theta_norm: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type Result<T> = std::result::Result<T, MetaError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerLoopConfig {
    /// α
    pub lr: f64,
    /// Gradient steps per outer iteration; the outer gradient flows
    /// through all of them.
    #[serde(default = "one")]
    pub steps: usize,
}

fn one() -> usize {
    1
}

impl InnerLoopConfig {
    pub fn new(lr: f64) -> Self {
        InnerLoopConfig { lr, steps: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.steps == 0 {
            return Err(MetaError::Config(format!(
                "inner loop needs lr > 0 and steps >= 1, got {} and {}",
                self.lr, self.steps
            )));
        }
        Ok(())
    }
}

/// When the policy parameters are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reinit {
    /// A new θ for every goal and start in every outer iteration.
    #[default]
    Fresh,
    /// θ is drawn once and then follows its own inner updates.
    Persistent,
}

/// How θ is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaInit {
    Fixed(Vec<f64>),
    /// Each entry uniform in `[lo, hi]`.
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// The network's default initialization.
    Network,
}

impl ThetaInit {
    pub fn draw(&self, policy: &PolicyModel, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let n = policy.param_count();
        match self {
            ThetaInit::Fixed(v) if v.len() == n => Ok(v.clone()),
            ThetaInit::Fixed(v) => Err(MetaError::Config(format!(
                "fixed θ has {} entries, policy needs {n}",
                v.len()
            ))),
            ThetaInit::Uniform { lo, hi } => Ok((0..n).map(|_| rng.gen_range(*lo..=*hi)).collect()),
            ThetaInit::Network => match policy {
                PolicyModel::Mlp(c) => Ok(c.init_params_with(rng)),
                PolicyModel::Constant { .. } => Err(MetaError::Config(
                    "network initialization needs an MLP policy".into(),
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterLoopConfig {
    /// Outer step size.
    pub lr: f64,
    pub iterations: usize,
    #[serde(default = "sgd")]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub reinit: Reinit,
    pub theta_init: ThetaInit,
    #[serde(default)]
    pub seed: u64,
    /// Stop early once the outer gradient norm falls to this value.
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Keep θ snapshots every this many iterations; 0 keeps none.
    #[serde(default)]
    pub snapshot_every: usize,
    /// Keep φ every this many iterations; 0 keeps none.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Task loss above which training is abandoned.
    #[serde(default = "divergence")]
    pub divergence: f64,
}

fn sgd() -> OptimizerConfig {
    OptimizerConfig::Sgd
}

fn divergence() -> f64 {
    1e6
}

impl OuterLoopConfig {
    pub fn new(lr: f64, iterations: usize, theta_init: ThetaInit) -> Self {
        OuterLoopConfig {
            lr,
            iterations,
            optimizer: OptimizerConfig::Sgd,
            reinit: Reinit::Fresh,
            theta_init,
            seed: 0,
            tolerance: None,
            snapshot_every: 0,
            checkpoint_every: 0,
            divergence: divergence(),
        }
    }
}

/// One goal and the initial states it is trained from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaTask {
    pub task: TaskSpec,
    pub starts: Vec<Vec<f64>>,
}

/// The fixed ingredients of a meta-training run.
#[derive(Debug, Clone, Copy)]
pub struct MetaSetup<'a> {
    pub policy: &'a PolicyModel,
    pub critic: &'a CriticModel,
    pub model: &'a DynamicsModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEntry {
    pub iteration: usize,
    pub goal: usize,
    /// Task loss after the inner update, summed over the goal's starts.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSnapshot {
    pub iteration: usize,
    pub goal: usize,
    pub start: usize,
    pub theta: Vec<f64>,
    pub theta_new: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetaTrainRecord {
    pub losses: Vec<LossEntry>,
    pub snapshots: Vec<ThetaSnapshot>,
    /// `(iteration, φ)` taken before that iteration's update.
    pub checkpoints: Vec<(usize, Vec<f64>)>,
    /// Outer gradient norm per iteration.
    pub grad_norms: Vec<f64>,
    /// Iteration at which the task loss blew up.
    pub diverged: Option<usize>,
}

impl MetaTrainRecord {
    pub fn iterations(&self) -> usize {
        self.grad_norms.len()
    }

    /// Task loss of every goal at one iteration.
    pub fn losses_at(&self, iteration: usize) -> Vec<f64> {
        self.losses
            .iter()
            .filter(|e| e.iteration == iteration)
            .map(|e| e.loss)
            .collect()
    }

    /// Columns `iteration,goal,task_loss`.
    pub fn write_losses_csv(&self, w: impl Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "goal", "task_loss"])?;
        for e in &self.losses {
            out.write_record([
                e.iteration.to_string(),
                e.goal.to_string(),
                e.loss.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Columns `iteration,goal,start,theta0..,theta_new0..`.
    pub fn write_snapshots_csv(&self, w: impl Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let n = self.snapshots.first().map_or(0, |s| s.theta.len());
        let mut header: Vec<String> = vec!["iteration".into(), "goal".into(), "start".into()];
        header.extend((0..n).map(|i| format!("theta{i}")));
        header.extend((0..n).map(|i| format!("theta_new{i}")));
        out.write_record(&header)?;
        for s in &self.snapshots {
            let mut row = vec![
                s.iteration.to_string(),
                s.goal.to_string(),
                s.start.to_string(),
            ];
            row.extend(s.theta.iter().map(|x| x.to_string()));
            row.extend(s.theta_new.iter().map(|x| x.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Actions `π_θ(s_t)` for fixed states, clamped to `limit`.
pub fn policy_actions(
    g: &mut Graph,
    policy: &PolicyVars,
    states: &[Var],
    offset: Option<Var>,
    limit: Option<f64>,
) -> Result<Vec<Var>> {
    states
        .iter()
        .map(|&s| {
            let input = match offset {
                Some(off) => g.sub(s, off),
                None => s,
            };
            let a = policy.forward(g, input)?;
            Ok(match limit {
                Some(l) => g.clamp(a, -l, l),
                None => a,
            })
        })
        .collect()
}

/// `Σ_t M(s_t, a_t, g; φ)`. With `offset` the critic sees `s_t - offset`.
pub fn critic_sum(
    g: &mut Graph,
    critic: &CriticVars,
    states: &[Var],
    actions: &[Var],
    goal: Var,
    offset: Option<Var>,
) -> Result<Var> {
    assert_eq!(states.len(), actions.len(), "one action per state");
    let mut total = None;
    for (&s, &a) in states.iter().zip(actions) {
        let input = match offset {
            Some(off) => g.sub(s, off),
            None => s,
        };
        let c = critic.forward(g, input, a, goal)?;
        total = Some(match total {
            Some(acc) => g.add(acc, c),
            None => c,
        });
    }
    Ok(total.unwrap_or_else(|| g.scalar_const(0.0)))
}

/// One inner step `θ - α ∇_θ Σ_t M(s_t, π_θ(s_t), g)`, differentiable in φ.
#[allow(clippy::too_many_arguments)]
pub fn inner_update(
    g: &mut Graph,
    policy: &PolicyModel,
    critic: &CriticVars,
    theta: Var,
    states: &[Var],
    goal: Var,
    offset: Option<Var>,
    limit: Option<f64>,
    lr: f64,
) -> Result<Var> {
    let pv = policy.bind(g, theta)?;
    let actions = policy_actions(g, &pv, states, offset, limit)?;
    let total = critic_sum(g, critic, states, &actions, goal, offset)?;
    let grad = g.grad(total, &[theta])?[0];
    let step = g.scale(grad, lr);
    Ok(g.sub(theta, step))
}

/// Task cost of `π_{θ_new}` rolled through the model from each start, summed.
pub fn outer_task_loss(
    g: &mut Graph,
    setup: &MetaSetup<'_>,
    theta_new: Var,
    starts: &[Vec<f64>],
    task: &TaskSpec,
    offset: Option<Var>,
) -> Result<Var> {
    let pv = setup.policy.bind(g, theta_new)?;
    let mv = setup.model.bind(g);
    let goal = g.constant_vec(&task.goal);
    let mut total = None;
    for s0 in starts {
        let s = g.constant_vec(s0);
        let traj = rollout_graph(g, &pv, offset, &mv, s, task.horizon)?;
        let c = task_cost_graph(g, &traj, goal, task);
        total = Some(match total {
            Some(acc) => g.add(acc, c),
            None => c,
        });
    }
    total.ok_or_else(|| MetaError::Config("no initial states".into()))
}

fn state_offset(g: &mut Graph, critic: &CriticModel, task: &TaskSpec, dim: usize) -> Option<Var> {
    (critic.conditioning() == Conditioning::Shift).then(|| g.constant_vec(&task.state_offset(dim)))
}

/// Reusable graph for one (goal, start) pair. States of the inner rollouts
/// are placeholders bound afresh every iteration.
struct SlotGraph {
    g: Graph,
    phi: Var,
    thetas: Vec<Var>,
    states: Vec<Vec<Var>>,
    loss: Var,
    offset: Option<Vec<f64>>,
}

impl SlotGraph {
    fn build(
        setup: &MetaSetup<'_>,
        task: &TaskSpec,
        start: &[f64],
        inner: &InnerLoopConfig,
    ) -> Result<Self> {
        let sd = setup.model.state_dim();
        let mut g = Graph::new();
        let phi = g.placeholder(Shape::vector(setup.critic.param_count()));
        let cv = setup.critic.bind(&mut g, phi)?;
        let goal = g.constant_vec(&task.goal);
        let offset = state_offset(&mut g, setup.critic, task, sd);
        let limit = EnvStepper::action_limit(setup.model);
        let mut thetas = vec![g.placeholder(Shape::vector(setup.policy.param_count()))];
        let mut states = Vec::with_capacity(inner.steps);
        for _ in 0..inner.steps {
            let sk: Vec<Var> = (0..task.horizon)
                .map(|_| g.placeholder(Shape::vector(sd)))
                .collect();
            let theta = *thetas.last().expect("θ0 exists");
            let next = inner_update(
                &mut g,
                setup.policy,
                &cv,
                theta,
                &sk,
                goal,
                offset,
                limit,
                inner.lr,
            )?;
            states.push(sk);
            thetas.push(next);
        }
        let theta_new = *thetas.last().expect("θ exists");
        let loss = outer_task_loss(
            &mut g,
            setup,
            theta_new,
            std::slice::from_ref(&start.to_vec()),
            task,
            offset,
        )?;
        Ok(SlotGraph {
            g,
            phi,
            thetas,
            states,
            loss,
            offset: offset.map(|_| task.state_offset(sd)),
        })
    }

    /// Returns the task loss, its gradient in φ and θ_new.
    fn evaluate(
        &mut self,
        setup: &MetaSetup<'_>,
        task: &TaskSpec,
        start: &[f64],
        phi: &[f64],
        theta: &[f64],
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self.g.bind(self.phi, phi)?;
        self.g.bind(self.thetas[0], theta)?;
        let mut current = theta.to_vec();
        for k in 0..self.states.len() {
            if k > 0 {
                self.g.recompute_through(self.thetas[k]).map_err(|_| {
                    MetaError::NonFiniteInner {
                        theta_norm: norm(&current),
                    }
                })?;
                current = self.g.value(self.thetas[k]).to_vec();
            }
            let mut policy = FixedPolicy::new(setup.policy, &current);
            if let Some(off) = &self.offset {
                policy = policy.with_offset(off);
            }
            let traj = rollout(policy, setup.model, start, task)?;
            for (t, &sv) in self.states[k].iter().enumerate() {
                self.g.bind(sv, &traj.states[t])?;
            }
        }
        self.g.recompute().map_err(|e| match e {
            DiffError::NonFinite { .. } => MetaError::NonFiniteInner {
                theta_norm: norm(&current),
            },
            other => other.into(),
        })?;
        let loss = self.g.scalar(self.loss);
        let grad = self.g.grad_values(self.loss, &[self.phi])?.flatten();
        let theta_new = self
            .g
            .value(*self.thetas.last().expect("θ exists"))
            .to_vec();
        Ok((loss, grad, theta_new))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Task loss and outer gradient for fixed φ and θ on one (goal, start).
pub fn outer_loss_and_grad(
    setup: &MetaSetup<'_>,
    task: &TaskSpec,
    start: &[f64],
    inner: &InnerLoopConfig,
    phi: &[f64],
    theta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let mut slot = SlotGraph::build(setup, task, start, inner)?;
    let (loss, grad, _) = slot.evaluate(setup, task, start, phi, theta)?;
    Ok((loss, grad))
}

fn validate(
    setup: &MetaSetup<'_>,
    tasks: &[MetaTask],
    inner: &InnerLoopConfig,
    outer: &OuterLoopConfig,
    phi0: &[f64],
) -> Result<()> {
    inner.validate()?;
    setup.model.validate()?;
    if !(outer.lr > 0.0) {
        return Err(MetaError::Config(format!(
            "outer lr must be positive, got {}",
            outer.lr
        )));
    }
    if tasks.is_empty() {
        return Err(MetaError::Config("goal set is empty".into()));
    }
    if phi0.len() != setup.critic.param_count() {
        return Err(MetaError::Config(format!(
            "critic has {} parameters, got {}",
            setup.critic.param_count(),
            phi0.len()
        )));
    }
    for t in tasks {
        t.task.validate(setup.model)?;
        if t.starts.is_empty() {
            return Err(MetaError::Config("a goal has no initial states".into()));
        }
        for s in &t.starts {
            if s.len() != setup.model.state_dim() {
                return Err(DynamicsError::Width {
                    what: "initial state",
                    expected: setup.model.state_dim(),
                    got: s.len(),
                }
                .into());
            }
        }
    }
    Ok(())
}

/// Meta-trains φ from `phi0`.
///
/// Every iteration visits each goal and each of its starts in order, sums
/// the outer gradients and applies one update. Training stops early when
/// the gradient norm reaches `outer.tolerance` or the task loss exceeds
/// `outer.divergence`; the latter is recorded, not returned as an error.
pub fn meta_train(
    setup: &MetaSetup<'_>,
    tasks: &[MetaTask],
    inner: &InnerLoopConfig,
    outer: &OuterLoopConfig,
    phi0: Vec<f64>,
) -> Result<(CriticParams, MetaTrainRecord)> {
    validate(setup, tasks, inner, outer, &phi0)?;
    let mut slots = Vec::new();
    for (gi, t) in tasks.iter().enumerate() {
        for (si, s) in t.starts.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(outer.seed);
            rng.set_stream(slots.len() as u64);
            let graph = SlotGraph::build(setup, &t.task, s, inner)?;
            slots.push((gi, si, graph, rng, None::<Vec<f64>>));
        }
    }

    let mut phi = phi0;
    let mut opt = Optimizer::new(outer.optimizer, outer.lr, phi.len());
    let mut record = MetaTrainRecord::default();
    let mut grad = vec![0.0; phi.len()];
    'outer: for it in 0..outer.iterations {
        if outer.checkpoint_every > 0 && it % outer.checkpoint_every == 0 {
            record.checkpoints.push((it, phi.clone()));
        }
        grad.iter_mut().for_each(|x| *x = 0.0);
        let mut goal_loss = vec![0.0; tasks.len()];
        for (gi, si, slot, rng, persistent) in slots.iter_mut() {
            let theta = match (outer.reinit, persistent.as_ref()) {
                (Reinit::Persistent, Some(th)) => th.clone(),
                _ => outer.theta_init.draw(setup.policy, rng)?,
            };
            let task = &tasks[*gi];
            let (loss, g, theta_new) =
                slot.evaluate(setup, &task.task, &task.starts[*si], &phi, &theta)?;
            if !(loss <= outer.divergence) {
                record.diverged = Some(it);
                break 'outer;
            }
            goal_loss[*gi] += loss;
            for (acc, x) in grad.iter_mut().zip(&g) {
                *acc += x;
            }
            if outer.snapshot_every > 0 && it % outer.snapshot_every == 0 {
                record.snapshots.push(ThetaSnapshot {
                    iteration: it,
                    goal: *gi,
                    start: *si,
                    theta,
                    theta_new: theta_new.clone(),
                });
            }
            if outer.reinit == Reinit::Persistent {
                *persistent = Some(theta_new);
            }
        }
        for (gi, loss) in goal_loss.into_iter().enumerate() {
            record.losses.push(LossEntry {
                iteration: it,
                goal: gi,
                loss,
            });
        }
        let gn = norm(&grad);
        record.grad_norms.push(gn);
        if outer.tolerance.is_some_and(|tol| gn <= tol) {
            break;
        }
        opt.step(&mut phi, &grad);
    }
    Ok((CriticParams(phi), record))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaTestResult {
    pub params: PolicyParams,
    /// Terminal task cost before the first update and after each update.
    pub curve: Vec<f64>,
}

impl MetaTestResult {
    pub fn final_cost(&self) -> f64 {
        *self.curve.last().expect("curve holds the initial cost")
    }
}

/// Learns a policy with the frozen critic.
///
/// Rollouts go through `env` for values only; the only derivative taken
/// is `∇_θ` of the critic sum.
#[allow(clippy::too_many_arguments)]
pub fn meta_test(
    critic: &CriticModel,
    phi: &[f64],
    policy: &PolicyModel,
    theta0: &[f64],
    task: &TaskSpec,
    env: &dyn EnvStepper,
    start: &[f64],
    inner: &InnerLoopConfig,
    iterations: usize,
) -> Result<MetaTestResult> {
    inner.validate()?;
    if theta0.len() != policy.param_count() {
        return Err(MetaError::Config(format!(
            "policy has {} parameters, got {}",
            policy.param_count(),
            theta0.len()
        )));
    }
    let sd = env.state_dim();
    let mut g = Graph::new();
    let phi_v = g.constant_vec(phi);
    let cv = critic.bind(&mut g, phi_v)?;
    let goal = g.constant_vec(&task.goal);
    let offset = state_offset(&mut g, critic, task, sd);
    let theta = g.placeholder(Shape::vector(policy.param_count()));
    let states: Vec<Var> = (0..task.horizon)
        .map(|_| g.placeholder(Shape::vector(sd)))
        .collect();
    let pv = policy.bind(&mut g, theta)?;
    let actions = policy_actions(&mut g, &pv, &states, offset, env.action_limit())?;
    let total = critic_sum(&mut g, &cv, &states, &actions, goal, offset)?;
    let off_values = offset.map(|_| task.state_offset(sd));

    let mut params = theta0.to_vec();
    let mut curve = Vec::with_capacity(iterations + 1);
    let run = |params: &[f64]| {
        let mut p = FixedPolicy::new(policy, params);
        if let Some(off) = &off_values {
            p = p.with_offset(off);
        }
        rollout(p, env, start, task)
    };
    for _ in 0..iterations {
        let traj = run(&params)?;
        curve.push(terminal_task_cost(&traj, &task.goal)?);
        g.bind(theta, &params)?;
        for (t, &sv) in states.iter().enumerate() {
            g.bind(sv, &traj.states[t])?;
        }
        g.recompute().map_err(|_| MetaError::NonFiniteInner {
            theta_norm: norm(&params),
        })?;
        let grad = g.grad_values(total, &[theta])?.flatten();
        for (p, d) in params.iter_mut().zip(&grad) {
            *p -= inner.lr * d;
        }
    }
    let traj = run(&params)?;
    curve.push(terminal_task_cost(&traj, &task.goal)?);
    Ok(MetaTestResult {
        params: PolicyParams(params),
        curve,
    })
}

/// Outcome of [`meta_train_test_rounds`].
#[derive(Debug, Clone, PartialEq)]
pub struct RoundsResult {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    /// θ after each round.
    pub thetas: Vec<Vec<f64>>,
}

/// Alternates meta-training the critic at the current policy with a single
/// meta-test step of that policy, until the step moves θ by at most `tol`.
///
/// Each round trains φ with θ fixed at the current policy, so the critic is
/// the one that makes one inner step land on the goal; the meta-test step
/// then takes exactly that step without the model.
#[allow(clippy::too_many_arguments)]
pub fn meta_train_test_rounds(
    setup: &MetaSetup<'_>,
    task: &MetaTask,
    inner: &InnerLoopConfig,
    outer: &OuterLoopConfig,
    theta0: Vec<f64>,
    env: &dyn EnvStepper,
    max_rounds: usize,
    tol: f64,
) -> Result<RoundsResult> {
    let mut theta = theta0;
    let mut phi = setup.critic.init_params(outer.seed);
    let mut thetas = Vec::new();
    for _ in 0..max_rounds {
        let cfg = OuterLoopConfig {
            theta_init: ThetaInit::Fixed(theta.clone()),
            reinit: Reinit::Fresh,
            ..outer.clone()
        };
        let (trained, _) = meta_train(setup, std::slice::from_ref(task), inner, &cfg, phi)?;
        phi = trained.0;
        let start = &task.starts[0];
        let res = meta_test(
            setup.critic,
            &phi,
            setup.policy,
            &theta,
            &task.task,
            env,
            start,
            inner,
            1,
        )?;
        let moved = norm(
            &res.params
                .0
                .iter()
                .zip(&theta)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        theta = res.params.0;
        thetas.push(theta.clone());
        if moved <= tol {
            break;
        }
    }
    Ok(RoundsResult { theta, phi, thetas })
}
