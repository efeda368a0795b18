//! Value and gradient fields over the parameters of a constant-action policy
//! `π(s) = [θ₁, θ₂]`, for a critic or for the on-policy return.

use crate::diffcore::{DiffError, Graph};
use crate::dynamics::{
    rollout_graph, task_cost_graph, CostKind, DynamicsError, DynamicsModel, TaskSpec,
};
use crate::metacritic::critic_sum;
use crate::nets::{Conditioning, CriticModel, NetError, PolicyModel};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LandscapeError {
    #[error("invalid grid: {0}")]
    Spec(String),
    #[error("cell ({i}, {j}) is invalid: {reason}")]
    InvalidCell { i: usize, j: usize, reason: String },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

pub type Result<T> = std::result::Result<T, LandscapeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandscapeKind {
    Meta,
    Supervised,
    TrueReturn,
}

impl LandscapeKind {
    pub fn name(self) -> &'static str {
        match self {
            LandscapeKind::Meta => "meta",
            LandscapeKind::Supervised => "supervised",
            LandscapeKind::TrueReturn => "true-return",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub theta1: [f64; 2],
    pub theta2: [f64; 2],
    /// Points per axis.
    pub resolution: usize,
    pub goal: Vec<f64>,
    pub s0: Vec<f64>,
    pub horizon: usize,
    #[serde(default)]
    pub cost: CostKind,
}

impl GridSpec {
    /// `[-2, 2]²` at 41 × 41.
    pub fn square(goal: Vec<f64>, s0: Vec<f64>, horizon: usize) -> Self {
        GridSpec {
            theta1: [-2.0, 2.0],
            theta2: [-2.0, 2.0],
            resolution: 41,
            goal,
            s0,
            horizon,
            cost: CostKind::Terminal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(LandscapeError::Spec("resolution must be at least 2".into()));
        }
        for (name, [lo, hi]) in [("θ₁", self.theta1), ("θ₂", self.theta2)] {
            if !(lo < hi) {
                return Err(LandscapeError::Spec(format!("{name} range needs lo < hi")));
            }
        }
        Ok(())
    }

    fn axis(range: [f64; 2], n: usize, k: usize) -> f64 {
        range[0] + (range[1] - range[0]) * k as f64 / (n - 1) as f64
    }

    /// Parameters at grid index `(i, j)`; `i` runs along θ₁.
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [
            Self::axis(self.theta1, self.resolution, i),
            Self::axis(self.theta2, self.resolution, j),
        ]
    }

    /// Grid spacing along each axis.
    pub fn spacing(&self) -> [f64; 2] {
        let n = (self.resolution - 1) as f64;
        [
            (self.theta1[1] - self.theta1[0]) / n,
            (self.theta2[1] - self.theta2[0]) / n,
        ]
    }

    pub fn task(&self) -> TaskSpec {
        TaskSpec {
            goal: self.goal.clone(),
            horizon: self.horizon,
            cost: self.cost,
        }
    }
}

/// Value and `∂value/∂θ` at one grid point, or why it could not be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub theta: [f64; 2],
    pub result: std::result::Result<(f64, [f64; 2]), String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    pub kind: LandscapeKind,
    pub resolution: usize,
    /// Row-major in `(i, j)`.
    pub cells: Vec<Cell>,
}

impl Landscape {
    pub fn cell(&self, i: usize, j: usize) -> &Cell {
        &self.cells[i * self.resolution + j]
    }

    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        self.cell(i, j).result.as_ref().ok().map(|r| r.0)
    }

    /// Writes `theta1,theta2,value,g1,g2`; failed cells get empty fields.
    pub fn write_csv(&self, w: impl Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["theta1", "theta2", "value", "g1", "g2"])?;
        for c in &self.cells {
            let mut row = vec![c.theta[0].to_string(), c.theta[1].to_string()];
            match &c.result {
                Ok((v, g)) => row.extend([v.to_string(), g[0].to_string(), g[1].to_string()]),
                Err(_) => row.extend([String::new(), String::new(), String::new()]),
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Scalar a landscape is drawn from.
#[derive(Debug, Clone, Copy)]
pub enum Surface<'a> {
    /// `Σ_t M(s_t, θ, g)` along the rollout of `π_θ`.
    Critic {
        kind: LandscapeKind,
        model: &'a CriticModel,
        params: &'a [f64],
    },
    /// Summed per-step task cost of the rollout.
    TrueReturn,
}

impl Surface<'_> {
    pub fn kind(&self) -> LandscapeKind {
        match self {
            Surface::Critic { kind, .. } => *kind,
            Surface::TrueReturn => LandscapeKind::TrueReturn,
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CellError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Meta(#[from] crate::metacritic::MetaError),
}

fn evaluate_cell(
    surface: &Surface<'_>,
    model: &DynamicsModel,
    spec: &GridSpec,
    task: &TaskSpec,
    theta: [f64; 2],
) -> std::result::Result<(f64, [f64; 2]), CellError> {
    let policy = PolicyModel::Constant { action_dim: 2 };
    let mut g = Graph::new();
    let th = g.input_vec(&theta);
    let pv = policy.bind(&mut g, th)?;
    let mv = model.bind(&mut g);
    let s0 = g.constant_vec(&spec.s0);
    let traj = rollout_graph(&mut g, &pv, None, &mv, s0, spec.horizon)?;
    let goal = g.constant_vec(&spec.goal);
    let value = match surface {
        Surface::TrueReturn => task_cost_graph(&mut g, &traj, goal, task),
        Surface::Critic {
            model: critic,
            params,
            ..
        } => {
            let p = g.constant_vec(params);
            let cv = critic.bind(&mut g, p)?;
            let offset = (critic.conditioning() == Conditioning::Shift)
                .then(|| g.constant_vec(&task.state_offset(model.state_dim())));
            let states = &traj.states[..spec.horizon];
            critic_sum(&mut g, &cv, states, &traj.actions, goal, offset)?
        }
    };
    let grad = g.grad_values(value, &[th])?.flatten();
    Ok((g.scalar(value), [grad[0], grad[1]]))
}

/// Evaluates `surface` at every grid point. The policy is rolled out through
/// `model` and the gradient is the total derivative in `θ`.
pub fn landscape_grid(
    surface: Surface<'_>,
    model: &DynamicsModel,
    spec: &GridSpec,
) -> Result<Landscape> {
    spec.validate()?;
    if model.action_dim() != 2 {
        return Err(LandscapeError::Spec(format!(
            "landscapes need a two-dimensional action, got {}",
            model.action_dim()
        )));
    }
    let task = spec.task();
    task.validate(model)?;
    if spec.s0.len() != model.state_dim() {
        return Err(DynamicsError::Width {
            what: "initial state",
            expected: model.state_dim(),
            got: spec.s0.len(),
        }
        .into());
    }
    let n = spec.resolution;
    let mut cells = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let theta = spec.point(i, j);
            let result =
                evaluate_cell(&surface, model, spec, &task, theta).map_err(|e| e.to_string());
            cells.push(Cell { theta, result });
        }
    }
    Ok(Landscape {
        kind: surface.kind(),
        resolution: n,
        cells,
    })
}

/// Index of the smallest value, ties going to the lowest `i`, then `j`.
pub fn argmin_cell(grid: &Landscape) -> Result<(usize, usize)> {
    let n = grid.resolution;
    if grid.cells.is_empty() || grid.cells.len() != n * n {
        return Err(LandscapeError::Spec("grid is empty or ragged".into()));
    }
    let mut best: Option<((usize, usize), f64)> = None;
    for i in 0..n {
        for j in 0..n {
            let v = match &grid.cell(i, j).result {
                Ok((v, _)) if v.is_finite() => *v,
                Ok((v, _)) => {
                    return Err(LandscapeError::InvalidCell {
                        i,
                        j,
                        reason: format!("value {v}"),
                    })
                }
                Err(reason) => {
                    return Err(LandscapeError::InvalidCell {
                        i,
                        j,
                        reason: reason.clone(),
                    })
                }
            };
            if best.is_none_or(|(_, b)| v < b) {
                best = Some(((i, j), v));
            }
        }
    }
    Ok(best.expect("grid is nonempty").0)
}

/// Chebyshev distance between two cells.
pub fn cell_distance(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}
