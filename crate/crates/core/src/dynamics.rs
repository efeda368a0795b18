//! Differentiable transition models, rollouts and task costs.
//!
//! Every model is written once over [`Graph`] primitives. Value-only stepping
//! builds the same expressions on a scratch graph of constants, so a value
//! rollout and a differentiable rollout agree bit for bit.

use crate::diffcore::{DiffError, Graph, Shape, Var};
use crate::nets::{NetError, PolicyModel, PolicyVars};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("{what} width mismatch: expected {expected}, got {got}")]
    Width {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("rollout produced a non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// Physical parameters of the planar two-link arm. Each link is a point
/// mass at its far end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmParams {
    /// kg
    pub m1: f64,
    pub m2: f64,
    /// m
    pub l1: f64,
    pub l2: f64,
    /// Viscous joint friction, N·m·s/rad.
    pub friction: f64,
    /// Symmetric joint torque limit, N·m.
    pub torque_limit: f64,
    /// m/s², acting along -y when the arm lies in the vertical plane.
    pub gravity: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        ArmParams {
            m1: 1.0,
            m2: 1.0,
            l1: 0.5,
            l2: 0.5,
            friction: 0.1,
            torque_limit: 5.0,
            gravity: 0.0,
        }
    }
}

impl ArmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("l1", self.l1),
            ("l2", self.l2),
            ("torque_limit", self.torque_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DynamicsError::Invalid(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.friction >= 0.0 && self.gravity.is_finite()) {
            return Err(DynamicsError::Invalid(format!(
                "friction must be non-negative and gravity finite, got {} and {}",
                self.friction, self.gravity
            )));
        }
        Ok(())
    }

    /// Joint-space mass matrix `[m11, m12, m22]` at elbow angle `q2`.
    pub fn mass_matrix(&self, q2: f64) -> [f64; 3] {
        let c2 = q2.cos();
        let m22 = self.m2 * self.l2 * self.l2;
        let m12 = m22 + self.m2 * self.l1 * self.l2 * c2;
        let m11 =
            (self.m1 + self.m2) * self.l1 * self.l1 + m22 + 2.0 * self.m2 * self.l1 * self.l2 * c2;
        [m11, m12, m22]
    }

    /// `½ q̇ᵀ M(q) q̇` for a state `[q1, q2, q̇1, q̇2]`.
    pub fn kinetic_energy(&self, s: &[f64]) -> f64 {
        let [m11, m12, m22] = self.mass_matrix(s[1]);
        let (v1, v2) = (s[2], s[3]);
        0.5 * (m11 * v1 * v1 + 2.0 * m12 * v1 * v2 + m22 * v2 * v2)
    }
}

/// Transition model `f(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DynamicsModel {
    /// `s' = s + a` on scalars.
    ScalarIntegrator,
    /// `s' = s + gain·a·dt` in the plane.
    PointMass {
        dt: f64,
        #[serde(default = "unit_gain")]
        gain: f64,
    },
    /// State `[q1, q2, q̇1, q̇2]`, action joint torques.
    TwoLink {
        #[serde(default)]
        arm: ArmParams,
        dt: f64,
    },
}

fn unit_gain() -> f64 {
    1.0
}

impl DynamicsModel {
    pub fn point_mass(dt: f64) -> Self {
        DynamicsModel::PointMass { dt, gain: 1.0 }
    }

    pub fn two_link(arm: ArmParams, dt: f64) -> Self {
        DynamicsModel::TwoLink { arm, dt }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DynamicsModel::ScalarIntegrator => Ok(()),
            DynamicsModel::PointMass { dt, gain } => {
                if !(*dt >= 0.0 && gain.is_finite()) {
                    return Err(DynamicsError::Invalid(format!(
                        "bad point mass dt={dt} gain={gain}"
                    )));
                }
                Ok(())
            }
            DynamicsModel::TwoLink { arm, dt } => {
                if !(*dt > 0.0) {
                    return Err(DynamicsError::Invalid(format!(
                        "dt must be positive, got {dt}"
                    )));
                }
                arm.validate()
            }
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            DynamicsModel::ScalarIntegrator => 1,
            DynamicsModel::PointMass { .. } => 2,
            DynamicsModel::TwoLink { .. } => 4,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            DynamicsModel::ScalarIntegrator => 1,
            DynamicsModel::PointMass { .. } | DynamicsModel::TwoLink { .. } => 2,
        }
    }

    /// Number of leading state entries that are positions.
    pub fn position_dim(&self) -> usize {
        match self {
            DynamicsModel::ScalarIntegrator => 1,
            DynamicsModel::PointMass { .. } | DynamicsModel::TwoLink { .. } => 2,
        }
    }

    /// Creates the model's constant parameters in `g`. Bind once per graph.
    pub fn bind(&self, g: &mut Graph) -> ModelVars {
        match self {
            DynamicsModel::ScalarIntegrator => ModelVars::ScalarIntegrator,
            DynamicsModel::PointMass { dt, gain } => ModelVars::PointMass {
                scale: g.scalar_const(gain * dt),
            },
            DynamicsModel::TwoLink { arm, dt } => ModelVars::TwoLink {
                arm: ArmVars::constants(g, arm),
                torque_limit: arm.torque_limit,
                dt: *dt,
            },
        }
    }

    /// Value-only step. Returns the action actually applied (after
    /// clamping) and the next state.
    pub fn step_values(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_widths(s.len(), a.len())?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let sv = g.constant_vec(s);
        let av = g.constant_vec(a);
        let applied = vars.admissible(&mut g, av);
        let next = vars.step(&mut g, sv, applied);
        Ok((g.value(applied).to_vec(), g.value(next).to_vec()))
    }

    fn check_widths(&self, s: usize, a: usize) -> Result<()> {
        if s != self.state_dim() {
            return Err(DynamicsError::Width {
                what: "state",
                expected: self.state_dim(),
                got: s,
            });
        }
        if a != self.action_dim() {
            return Err(DynamicsError::Width {
                what: "action",
                expected: self.action_dim(),
                got: a,
            });
        }
        Ok(())
    }
}

/// Value-only environment. Never differentiated.
pub trait EnvStepper {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Applied action and next state.
    fn step(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
    /// Symmetric bound on each action component, if any.
    fn action_limit(&self) -> Option<f64> {
        None
    }
}

impl EnvStepper for DynamicsModel {
    fn state_dim(&self) -> usize {
        DynamicsModel::state_dim(self)
    }

    fn action_dim(&self) -> usize {
        DynamicsModel::action_dim(self)
    }

    fn step(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.step_values(s, a)
    }

    fn action_limit(&self) -> Option<f64> {
        match self {
            DynamicsModel::TwoLink { arm, .. } => Some(arm.torque_limit),
            _ => None,
        }
    }
}

/// Arm parameters as graph nodes, so that derivatives with respect to
/// masses and lengths are available.
#[derive(Debug, Clone, Copy)]
pub struct ArmVars {
    pub m1: Var,
    pub m2: Var,
    pub l1: Var,
    pub l2: Var,
    pub friction: Var,
    /// `None` when gravity is zero.
    pub gravity: Option<Var>,
}

impl ArmVars {
    pub fn constants(g: &mut Graph, arm: &ArmParams) -> Self {
        ArmVars {
            m1: g.scalar_const(arm.m1),
            m2: g.scalar_const(arm.m2),
            l1: g.scalar_const(arm.l1),
            l2: g.scalar_const(arm.l2),
            friction: g.scalar_const(arm.friction),
            gravity: (arm.gravity != 0.0).then(|| g.scalar_const(arm.gravity)),
        }
    }
}

/// A model bound into a graph.
#[derive(Debug, Clone)]
pub enum ModelVars {
    ScalarIntegrator,
    PointMass {
        scale: Var,
    },
    TwoLink {
        arm: ArmVars,
        torque_limit: f64,
        dt: f64,
    },
}

impl ModelVars {
    /// Maps a raw action onto the admissible set.
    pub fn admissible(&self, g: &mut Graph, a: Var) -> Var {
        match self {
            ModelVars::TwoLink { torque_limit, .. } => g.clamp(a, -torque_limit, *torque_limit),
            _ => a,
        }
    }

    /// Next state for an admissible action.
    pub fn step(&self, g: &mut Graph, s: Var, a: Var) -> Var {
        match self {
            ModelVars::ScalarIntegrator => g.add(s, a),
            ModelVars::PointMass { scale } => {
                let d = g.mul(a, *scale);
                g.add(s, d)
            }
            ModelVars::TwoLink { arm, dt, .. } => two_link_integrate(g, s, a, arm, *dt),
        }
    }
}

pub fn scalar_step(s: f64, a: f64) -> f64 {
    s + a
}

pub fn point_mass_step(s: [f64; 2], a: [f64; 2], dt: f64) -> [f64; 2] {
    [s[0] + a[0] * dt, s[1] + a[1] * dt]
}

/// One semi-implicit Euler step of the arm. Torques are clamped first.
pub fn two_link_step(s: &[f64; 4], tau: &[f64; 2], arm: &ArmParams, dt: f64) -> [f64; 4] {
    let model = DynamicsModel::two_link(*arm, dt);
    let (_, next) = model
        .step_values(s, tau)
        .expect("fixed widths always match");
    [next[0], next[1], next[2], next[3]]
}

/// Graph form of [`two_link_step`] with the arm parameters as nodes.
pub fn two_link_step_graph(
    g: &mut Graph,
    s: Var,
    tau: Var,
    arm: &ArmVars,
    torque_limit: f64,
    dt: f64,
) -> Var {
    let tau = g.clamp(tau, -torque_limit, torque_limit);
    two_link_integrate(g, s, tau, arm, dt)
}

fn two_link_integrate(g: &mut Graph, s: Var, tau: Var, arm: &ArmVars, dt: f64) -> Var {
    let q2 = g.elem(s, 1);
    let v1 = g.elem(s, 2);
    let v2 = g.elem(s, 3);
    let t1 = g.elem(tau, 0);
    let t2 = g.elem(tau, 1);

    let c2 = g.cos(q2);
    let s2 = g.sin(q2);
    let l1l2 = g.mul(arm.l1, arm.l2);
    let k = g.mul(arm.m2, l1l2);
    let kc = g.mul(k, c2);
    let l2sq = g.square(arm.l2);
    let l1sq = g.square(arm.l1);
    let m22 = g.mul(arm.m2, l2sq);
    let m12 = g.add(m22, kc);
    let msum = g.add(arm.m1, arm.m2);
    let base = g.mul(msum, l1sq);
    let base = g.add(base, m22);
    let kc2 = g.scale(kc, 2.0);
    let m11 = g.add(base, kc2);

    // Coriolis and centrifugal terms.
    let h = g.mul(k, s2);
    let v1v2 = g.mul(v1, v2);
    let v1v2 = g.scale(v1v2, 2.0);
    let v2sq = g.square(v2);
    let inner = g.add(v1v2, v2sq);
    let cor1 = g.mul(h, inner);
    let cor1 = g.neg(cor1);
    let v1sq = g.square(v1);
    let cor2 = g.mul(h, v1sq);

    let f1 = g.mul(arm.friction, v1);
    let f2 = g.mul(arm.friction, v2);
    let mut rhs1 = g.sub(t1, cor1);
    rhs1 = g.sub(rhs1, f1);
    let mut rhs2 = g.sub(t2, cor2);
    rhs2 = g.sub(rhs2, f2);
    if let Some(grav) = arm.gravity {
        let q1 = g.elem(s, 0);
        let c1 = g.cos(q1);
        let q12 = g.add(q1, q2);
        let c12 = g.cos(q12);
        let ml = g.mul(msum, arm.l1);
        let g1a = g.mul(ml, c1);
        let ml2 = g.mul(arm.m2, arm.l2);
        let g2 = g.mul(ml2, c12);
        let g1 = g.add(g1a, g2);
        let g1 = g.mul(grav, g1);
        let g2 = g.mul(grav, g2);
        rhs1 = g.sub(rhs1, g1);
        rhs2 = g.sub(rhs2, g2);
    }

    let m11m22 = g.mul(m11, m22);
    let m12sq = g.square(m12);
    let det = g.sub(m11m22, m12sq);
    let a1 = g.mul(m22, rhs1);
    let b1 = g.mul(m12, rhs2);
    let n1 = g.sub(a1, b1);
    let acc1 = g.div(n1, det);
    let a2 = g.mul(m11, rhs2);
    let b2 = g.mul(m12, rhs1);
    let n2 = g.sub(a2, b2);
    let acc2 = g.div(n2, det);

    let acc = g.concat(&[acc1, acc2]);
    let acc = g.scale(acc, dt);
    let vel = g.slice(s, 2, Shape::vector(2));
    let vel = g.add(vel, acc);
    let pos = g.slice(s, 0, Shape::vector(2));
    let dpos = g.scale(vel, dt);
    let pos = g.add(pos, dpos);
    g.concat(&[pos, vel])
}

/// Which steps of a rollout are charged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// Only the final state: `r_T = |pos(s_T) - g|²`.
    #[default]
    Terminal,
    /// `r_t = |pos(s_t) - g|²` at every step.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    /// Goal in position space.
    pub goal: Vec<f64>,
    pub horizon: usize,
    #[serde(default)]
    pub cost: CostKind,
}

impl TaskSpec {
    pub fn new(goal: Vec<f64>, horizon: usize) -> Self {
        TaskSpec {
            goal,
            horizon,
            cost: CostKind::Terminal,
        }
    }

    pub fn validate(&self, model: &DynamicsModel) -> Result<()> {
        if self.horizon == 0 {
            return Err(DynamicsError::Invalid("horizon must be at least 1".into()));
        }
        if self.goal.len() != model.position_dim() {
            return Err(DynamicsError::Width {
                what: "goal",
                expected: model.position_dim(),
                got: self.goal.len(),
            });
        }
        Ok(())
    }

    /// Goal padded with zeros to a full state, used for `s - g` inputs.
    pub fn state_offset(&self, state_dim: usize) -> Vec<f64> {
        let mut off = vec![0.0; state_dim];
        off[..self.goal.len()].copy_from_slice(&self.goal);
        off
    }

    /// Cost charged at step `t` for state `s`.
    pub fn step_cost(&self, t: usize, s: &[f64]) -> f64 {
        match self.cost {
            CostKind::Terminal if t < self.horizon => 0.0,
            _ => squared_distance(&s[..self.goal.len()], &self.goal),
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `0` before the horizon, `(s - g)²` at it.
pub fn toy_sparse_cost(t: usize, horizon: usize, s: f64, g: f64) -> f64 {
    assert!(t <= horizon, "step {t} beyond horizon {horizon}");
    if t < horizon {
        0.0
    } else {
        (s - g) * (s - g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("a trajectory has at least one state")
    }

    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// Columns `t, s0.., a0.., r`. The final row has empty action cells.
    pub fn write_csv(&self, w: impl Write) -> csv::Result<()> {
        let sd = self.states[0].len();
        let ad = self.actions.first().map_or(0, |a| a.len());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..sd).map(|i| format!("s{i}")));
        header.extend((0..ad).map(|i| format!("a{i}")));
        header.push("r".into());
        out.write_record(&header)?;
        for (t, s) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(s.iter().map(|x| x.to_string()));
            match self.actions.get(t) {
                Some(a) => row.extend(a.iter().map(|x| x.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), ad)),
            }
            row.push(self.costs[t].to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `|pos(s_T) - g|²`, velocities excluded.
pub fn terminal_task_cost(traj: &Trajectory, goal: &[f64]) -> Result<f64> {
    let s = traj.final_state();
    if goal.len() > s.len() {
        return Err(DynamicsError::Width {
            what: "goal",
            expected: s.len(),
            got: goal.len(),
        });
    }
    Ok(squared_distance(&s[..goal.len()], goal))
}

/// A policy with fixed parameter values, optionally fed `s - offset`.
#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy<'a> {
    pub model: &'a PolicyModel,
    pub params: &'a [f64],
    pub offset: Option<&'a [f64]>,
}

impl<'a> FixedPolicy<'a> {
    pub fn new(model: &'a PolicyModel, params: &'a [f64]) -> Self {
        FixedPolicy {
            model,
            params,
            offset: None,
        }
    }

    pub fn with_offset(mut self, offset: &'a [f64]) -> Self {
        self.offset = Some(offset);
        self
    }
}

/// Value-only rollout of `policy` through `env` for `task.horizon` steps.
pub fn rollout(
    policy: FixedPolicy<'_>,
    env: &dyn EnvStepper,
    s0: &[f64],
    task: &TaskSpec,
) -> Result<Trajectory> {
    if s0.len() != env.state_dim() {
        return Err(DynamicsError::Width {
            what: "initial state",
            expected: env.state_dim(),
            got: s0.len(),
        });
    }
    let mut g = Graph::new();
    let p = g.constant_vec(policy.params);
    let pv = policy.model.bind(&mut g, p)?;
    let mut states = vec![s0.to_vec()];
    let mut actions = Vec::with_capacity(task.horizon);
    let mut costs = vec![task.step_cost(0, s0)];
    for t in 0..task.horizon {
        let s = &states[t];
        let input = match policy.offset {
            Some(off) => s.iter().zip(off).map(|(x, o)| x - o).collect(),
            None => s.clone(),
        };
        let sv = g.constant_vec(&input);
        let av = pv.forward(&mut g, sv)?;
        let (applied, next) = env.step(s, g.value(av))?;
        if next.iter().any(|x| !x.is_finite()) || applied.iter().any(|x| !x.is_finite()) {
            return Err(DynamicsError::NonFinite { step: t });
        }
        costs.push(task.step_cost(t + 1, &next));
        actions.push(applied);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        actions,
        costs,
    })
}

/// States and actions of a rollout held as graph nodes.
#[derive(Debug, Clone)]
pub struct GraphTrajectory {
    pub states: Vec<Var>,
    pub actions: Vec<Var>,
}

impl GraphTrajectory {
    pub fn final_state(&self) -> Var {
        *self
            .states
            .last()
            .expect("a trajectory has at least one state")
    }

    pub fn to_values(&self, g: &Graph, task: &TaskSpec) -> Trajectory {
        let states: Vec<Vec<f64>> = self.states.iter().map(|&s| g.value(s).to_vec()).collect();
        let costs = states
            .iter()
            .enumerate()
            .map(|(t, s)| task.step_cost(t, s))
            .collect();
        Trajectory {
            actions: self.actions.iter().map(|&a| g.value(a).to_vec()).collect(),
            states,
            costs,
        }
    }
}

/// Differentiable rollout. `offset` is subtracted from the state before it
/// enters the policy.
pub fn rollout_graph(
    g: &mut Graph,
    policy: &PolicyVars,
    offset: Option<Var>,
    model: &ModelVars,
    s0: Var,
    horizon: usize,
) -> Result<GraphTrajectory> {
    let mut states = vec![s0];
    let mut actions = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let s = states[t];
        let input = match offset {
            Some(off) => g.sub(s, off),
            None => s,
        };
        let raw = policy.forward(g, input)?;
        let a = model.admissible(g, raw);
        let next = model.step(g, s, a);
        actions.push(a);
        states.push(next);
    }
    Ok(GraphTrajectory { states, actions })
}

/// Differentiable task cost of a graph rollout under `task.cost`.
pub fn task_cost_graph(g: &mut Graph, traj: &GraphTrajectory, goal: Var, task: &TaskSpec) -> Var {
    let n = g.shape(goal).len();
    let charged: &[Var] = match task.cost {
        CostKind::Terminal => &traj.states[traj.states.len() - 1..],
        CostKind::Dense => &traj.states,
    };
    let mut total = None;
    for &s in charged {
        let pos = g.slice(s, 0, Shape::vector(n));
        let d = g.sub(pos, goal);
        let c = g.dot(d, d);
        total = Some(match total {
            Some(acc) => g.add(acc, c),
            None => c,
        });
    }
    total.expect("at least one state is charged")
}
