//! Training, policy learning with frozen critics, sweeps and landscapes.
//! Every function here is a pure function of the config and seeds; work is
//! spread over the rayon pool and collected back in a fixed order.

use crate::config::{ExperimentConfig, SweepKind};
use anyhow::{bail, Context, Result};
use critic_core::baselines::{ddpg_train, DdpgConfig, DdpgResult, QLearningConfig};
use critic_core::dynamics::{DynamicsModel, TaskSpec};
use critic_core::landscape::{
    argmin_cell, cell_distance, landscape_grid, Landscape, LandscapeKind, Surface,
};
use critic_core::metacritic::{
    meta_test, meta_train, InnerLoopConfig, MetaSetup, MetaTrainRecord, OuterLoopConfig,
};
use critic_core::nets::{Checkpoint, CheckpointHeader, CriticModel, CriticParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

pub const META_KIND: &str = "meta-critic";
pub const SUPERVISED_KIND: &str = "supervised-q";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Meta,
    Supervised,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Meta => "meta-critic(ours)",
            Method::Supervised => "supervised-q",
        }
    }

    pub fn kind(self) -> &'static str {
        match self {
            Method::Meta => META_KIND,
            Method::Supervised => SUPERVISED_KIND,
        }
    }

    pub fn from_kind(kind: &str) -> Result<Self> {
        match kind {
            META_KIND => Ok(Method::Meta),
            SUPERVISED_KIND => Ok(Method::Supervised),
            other => bail!("unknown checkpoint kind {other:?}"),
        }
    }
}

/// Everything trained for one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub phi: CriticParams,
    pub record: MetaTrainRecord,
    pub baseline: Option<DdpgResult>,
}

impl SeedRun {
    /// Mean terminal task cost over goals and starts, per outer iteration.
    pub fn meta_curve(&self, cfg: &ExperimentConfig) -> Vec<f64> {
        let per = (cfg.goals.len() * cfg.starts().len()) as f64;
        (0..self.record.iterations())
            .map(|it| self.record.losses_at(it).iter().sum::<f64>() / per)
            .collect()
    }

    /// Same quantity for the baseline, per training iteration.
    pub fn baseline_curve(&self, cfg: &ExperimentConfig) -> Option<Vec<f64>> {
        let per = (cfg.goals.len() * cfg.starts().len()) as f64;
        self.baseline.as_ref().map(|b| {
            b.curve
                .iter()
                .map(|c| c.iter().sum::<f64>() / per)
                .collect()
        })
    }

    pub fn checkpoint(&self, cfg: &ExperimentConfig, method: Method) -> Option<Checkpoint> {
        let (model, params, iteration) = match method {
            Method::Meta => (
                cfg.critic_model(),
                self.phi.0.clone(),
                self.record.iterations(),
            ),
            Method::Supervised => {
                let b = self.baseline.as_ref()?;
                let spec = cfg.baseline.as_ref()?;
                (
                    spec.critic.model(&cfg.model()),
                    b.q.0.clone(),
                    b.curve.len(),
                )
            }
        };
        Some(Checkpoint {
            header: CheckpointHeader {
                kind: method.kind().into(),
                model,
                seed: self.seed,
                iteration,
            },
            params,
        })
    }
}

fn ddpg_for_seed(cfg: &DdpgConfig, seed: u64) -> DdpgConfig {
    DdpgConfig {
        q: QLearningConfig {
            seed,
            ..cfg.q.clone()
        },
        ..cfg.clone()
    }
}

/// Meta-trains the critic, and the baseline when configured, for one seed.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let env = cfg.model();
    let policy = cfg.policy_model();
    let critic = cfg.critic_model();
    let setup = MetaSetup {
        policy: &policy,
        critic: &critic,
        model: &env,
    };
    let tasks = cfg.tasks();
    let outer = OuterLoopConfig {
        seed,
        ..cfg.outer.clone()
    };
    let (phi, record) = meta_train(&setup, &tasks, &cfg.inner, &outer, critic.init_params(seed))
        .with_context(|| format!("meta-training seed {seed}"))?;
    let baseline = match &cfg.baseline {
        Some(b) => {
            let q = b.critic.model(&env);
            let res = ddpg_train(&q, &policy, &env, &tasks, &ddpg_for_seed(&b.ddpg, seed))
                .with_context(|| format!("training the baseline, seed {seed}"))?;
            Some(res)
        }
        None => None,
    };
    Ok(SeedRun {
        seed,
        phi,
        record,
        baseline,
    })
}

pub fn train_all(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    cfg.seeds.par_iter().map(|&s| train_seed(cfg, s)).collect()
}

/// Median with NaN counted as worst.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v: Vec<f64> = xs
        .iter()
        .map(|x| if x.is_nan() { f64::INFINITY } else { *x })
        .collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-iteration median over seeds. A curve that stopped early keeps its
/// last value; one that diverged counts as infinite afterwards.
pub fn median_curve(curves: &[(Vec<f64>, bool)], len: usize) -> Vec<f64> {
    (0..len)
        .map(|it| {
            let at: Vec<f64> = curves
                .iter()
                .map(|(c, diverged)| match c.get(it) {
                    Some(&x) => x,
                    None if *diverged || c.is_empty() => f64::INFINITY,
                    None => *c.last().expect("nonempty"),
                })
                .collect();
            median(&at)
        })
        .collect()
}

pub fn first_below(curve: &[f64], threshold: f64) -> Option<usize> {
    curve.iter().position(|&x| x < threshold)
}

/// Per-method median training curves over seeds.
pub struct TrainingSummary {
    pub meta: Vec<f64>,
    pub baseline: Option<Vec<f64>>,
}

impl TrainingSummary {
    pub fn new(cfg: &ExperimentConfig, runs: &[SeedRun]) -> Self {
        let meta: Vec<(Vec<f64>, bool)> = runs
            .iter()
            .map(|r| (r.meta_curve(cfg), r.record.diverged.is_some()))
            .collect();
        let meta = median_curve(&meta, cfg.outer.iterations);
        let baseline = cfg.baseline.as_ref().map(|b| {
            let curves: Vec<(Vec<f64>, bool)> = runs
                .iter()
                .map(|r| {
                    let d = r.baseline.as_ref().is_some_and(|x| x.diverged.is_some());
                    (r.baseline_curve(cfg).unwrap_or_default(), d)
                })
                .collect();
            median_curve(&curves, b.ddpg.iterations)
        });
        TrainingSummary { meta, baseline }
    }
}

/// A frozen critic ready to train new policies.
#[derive(Debug, Clone)]
pub struct TrainedCritic {
    pub method: Method,
    pub seed: u64,
    pub model: CriticModel,
    pub params: Vec<f64>,
    pub lr: f64,
}

impl TrainedCritic {
    pub fn from_checkpoint(cfg: &ExperimentConfig, ck: &Checkpoint) -> Result<Self> {
        let method = Method::from_kind(&ck.header.kind)?;
        let lr = match method {
            Method::Meta => cfg.inner.lr,
            Method::Supervised => cfg.baseline.as_ref().map_or(cfg.inner.lr, |b| b.test_lr()),
        };
        Ok(TrainedCritic {
            method,
            seed: ck.header.seed,
            model: ck.header.model.clone(),
            params: ck.params.clone(),
            lr,
        })
    }
}

pub fn trained_critics(cfg: &ExperimentConfig, runs: &[SeedRun]) -> Vec<TrainedCritic> {
    let mut out = Vec::new();
    for method in [Method::Meta, Method::Supervised] {
        for r in runs {
            if let Some(ck) = r.checkpoint(cfg, method) {
                out.push(TrainedCritic::from_checkpoint(cfg, &ck).expect("own checkpoint kinds"));
            }
        }
    }
    out
}

/// One goal in one environment variant.
#[derive(Debug, Clone)]
pub struct TestCase {
    pub column: usize,
    pub goal_index: usize,
    pub goal: Vec<f64>,
    pub env: DynamicsModel,
}

#[derive(Debug, Clone)]
pub struct TestRun {
    pub method: Method,
    pub seed: u64,
    pub column: usize,
    pub goal_index: usize,
    pub init: usize,
    pub goal: Vec<f64>,
    /// Mean over joints of the squared final position error; NaN if the
    /// policy blew up.
    pub final_mse: f64,
}

/// Learns `inits` fresh policies per (critic, case) and records how close
/// each gets. Policy initializations do not depend on the method, so both
/// methods start from the same policies.
pub fn run_tests(
    cfg: &ExperimentConfig,
    critics: &[TrainedCritic],
    cases: &[TestCase],
) -> Result<Vec<TestRun>> {
    let policy = cfg.policy_model();
    let mut jobs = Vec::new();
    for c in critics {
        for case in cases {
            for init in 0..cfg.meta_test.inits {
                jobs.push((c, case, init));
            }
        }
    }
    jobs.par_iter()
        .map(|&(c, case, init)| {
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            rng.set_stream(
                ((case.column as u64) << 40) | ((case.goal_index as u64) << 20) | init as u64,
            );
            let theta0 = cfg.outer.theta_init.draw(&policy, &mut rng)?;
            let task = TaskSpec {
                goal: case.goal.clone(),
                horizon: cfg.horizon,
                cost: cfg.cost,
            };
            let inner = InnerLoopConfig { lr: c.lr, steps: 1 };
            let start = cfg.starts()[0].clone();
            let final_mse = match meta_test(
                &c.model,
                &c.params,
                &policy,
                &theta0,
                &task,
                &case.env,
                &start,
                &inner,
                cfg.meta_test.iterations,
            ) {
                Ok(r) => r.final_cost() / case.goal.len() as f64,
                Err(_) => f64::NAN,
            };
            Ok(TestRun {
                method: c.method,
                seed: c.seed,
                column: case.column,
                goal_index: case.goal_index,
                init,
                goal: case.goal.clone(),
                final_mse,
            })
        })
        .collect()
}

/// The training goals in the training environment.
pub fn training_cases(cfg: &ExperimentConfig, env: DynamicsModel, column: usize) -> Vec<TestCase> {
    cfg.goals
        .iter()
        .enumerate()
        .map(|(k, g)| TestCase {
            column,
            goal_index: k,
            goal: g.clone(),
            env: env.clone(),
        })
        .collect()
}

/// Cases of one sweep, one column per sweep value.
pub fn sweep_cases(cfg: &ExperimentConfig, kind: SweepKind) -> Result<Vec<TestCase>> {
    let spec = cfg.sweep.as_ref().context("config has no sweep section")?;
    let base = cfg.model();
    let mut cases = Vec::new();
    for (col, &v) in spec.values(kind).iter().enumerate() {
        match kind {
            SweepKind::Goals => {
                let mut rng = ChaCha8Rng::seed_from_u64(spec_goal_seed(cfg));
                rng.set_stream(col as u64);
                let noise = Normal::new(0.0, v).context("goal noise std must be positive")?;
                for k in 0..spec.goals_per_cell {
                    let centre = &cfg.goals[spec.around[k % spec.around.len()]];
                    let goal = centre.iter().map(|c| c + noise.sample(&mut rng)).collect();
                    cases.push(TestCase {
                        column: col,
                        goal_index: k,
                        goal,
                        env: base.clone(),
                    });
                }
            }
            SweepKind::Mass | SweepKind::Length => {
                let DynamicsModel::TwoLink { arm, dt } = base else {
                    bail!("dynamics sweeps need the arm");
                };
                let mut arm = arm;
                if kind == SweepKind::Mass {
                    arm.m2 *= v;
                } else {
                    arm.l2 = v;
                }
                cases.extend(training_cases(cfg, DynamicsModel::two_link(arm, dt), col));
            }
        }
    }
    Ok(cases)
}

fn spec_goal_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seeds[0]
}

/// Seeds whose training ended below the threshold, per method.
pub fn solved_seeds(cfg: &ExperimentConfig, runs: &[SeedRun], method: Method) -> Vec<u64> {
    runs.iter()
        .filter(|r| {
            let curve = match method {
                Method::Meta if r.record.diverged.is_none() => r.meta_curve(cfg),
                Method::Supervised => match &r.baseline {
                    Some(b) if b.diverged.is_none() => r.baseline_curve(cfg).unwrap_or_default(),
                    _ => Vec::new(),
                },
                _ => Vec::new(),
            };
            curve.last().is_some_and(|&c| c < cfg.threshold)
        })
        .map(|r| r.seed)
        .collect()
}

/// Summary statistics of one (method, column) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub count: usize,
}

pub fn cell_stats(
    runs: &[TestRun],
    method: Method,
    column: usize,
    seeds: Option<&[u64]>,
) -> Option<CellStats> {
    let xs: Vec<f64> = runs
        .iter()
        .filter(|r| r.method == method && r.column == column)
        .filter(|r| seeds.is_none_or(|s| s.contains(&r.seed)))
        .map(|r| r.final_mse)
        .collect();
    if xs.is_empty() {
        return None;
    }
    let (mean, std) = mean_std(&xs);
    Some(CellStats {
        mean,
        std,
        median: median(&xs),
        count: xs.len(),
    })
}

/// Argmin cells of the three landscapes for one goal.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeRow {
    pub goal_index: usize,
    pub goal: Vec<f64>,
    pub trained: bool,
    pub true_cell: (usize, usize),
    pub meta_cell: Option<(usize, usize)>,
    pub supervised_cell: Option<(usize, usize)>,
}

impl LandscapeRow {
    pub fn meta_distance(&self) -> Option<usize> {
        self.meta_cell.map(|c| cell_distance(c, self.true_cell))
    }

    pub fn supervised_distance(&self) -> Option<usize> {
        self.supervised_cell
            .map(|c| cell_distance(c, self.true_cell))
    }
}

pub struct LandscapeStudy {
    pub rows: Vec<LandscapeRow>,
    pub grids: Vec<(usize, Landscape)>,
}

/// Landscapes of the true return, the meta-trained critic and the fitted Q
/// of one seed, for every configured goal.
pub fn landscape_study(cfg: &ExperimentConfig, run: &SeedRun) -> Result<LandscapeStudy> {
    let spec = cfg
        .landscape
        .as_ref()
        .context("config has no landscape section")?;
    let env = cfg.model();
    let meta_model = cfg.critic_model();
    let sup_model = cfg.baseline.as_ref().map(|b| b.critic.model(&env));
    let per_goal: Vec<Result<(LandscapeRow, Vec<Landscape>)>> = spec
        .goals
        .par_iter()
        .enumerate()
        .map(|(k, goal)| {
            let grid = spec.grid(goal, cfg.horizon, cfg.cost);
            let truth = landscape_grid(Surface::TrueReturn, &env, &grid)?;
            let meta = landscape_grid(
                Surface::Critic {
                    kind: LandscapeKind::Meta,
                    model: &meta_model,
                    params: &run.phi.0,
                },
                &env,
                &grid,
            )?;
            let sup = match (&sup_model, &run.baseline) {
                (Some(m), Some(b)) => Some(landscape_grid(
                    Surface::Critic {
                        kind: LandscapeKind::Supervised,
                        model: m,
                        params: &b.q.0,
                    },
                    &env,
                    &grid,
                )?),
                _ => None,
            };
            let row = LandscapeRow {
                goal_index: k,
                goal: goal.clone(),
                trained: cfg.goals.contains(goal),
                true_cell: argmin_cell(&truth)?,
                meta_cell: argmin_cell(&meta).ok(),
                supervised_cell: sup.as_ref().and_then(|s| argmin_cell(s).ok()),
            };
            let mut grids = vec![truth, meta];
            grids.extend(sup);
            Ok((row, grids))
        })
        .collect();
    let mut rows = Vec::new();
    let mut grids = Vec::new();
    for r in per_goal {
        let (row, gs) = r?;
        grids.extend(gs.into_iter().map(|g| (row.goal_index, g)));
        rows.push(row);
    }
    Ok(LandscapeStudy { rows, grids })
}
