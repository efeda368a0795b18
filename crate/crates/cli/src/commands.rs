//! The subcommands, as library calls. Each writes its files plus a manifest
//! under the output directory and returns what it computed.

use crate::config::{ExperimentConfig, SweepKind};
use crate::experiment::{
    landscape_study, run_tests, sweep_cases, train_all, train_seed, trained_critics,
    training_cases, LandscapeStudy, SeedRun, TestCase, TestRun, TrainedCritic, TrainingSummary,
};
use crate::manifest::write_manifest;
use crate::report::{write_landscape, write_sweep, write_test_runs, write_training, Outputs};
use anyhow::{bail, Context, Result};
use critic_core::dynamics::DynamicsModel;
use critic_core::nets::Checkpoint;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

/// Flags shared by the experiment subcommands.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

struct Loaded {
    cfg: ExperimentConfig,
    source: Vec<u8>,
    out: Outputs,
}

fn load(common: &Common) -> Result<Loaded> {
    let (mut cfg, source) = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg = cfg.with_seed(s);
    }
    let Some(dir) = common.out.clone().or_else(|| cfg.out.clone()) else {
        bail!("no output directory: pass --out or set \"out\" in the config");
    };
    Ok(Loaded {
        cfg,
        source,
        out: Outputs::new(&dir)?,
    })
}

pub struct TrainOutcome {
    pub runs: Vec<SeedRun>,
    pub summary: TrainingSummary,
}

pub fn meta_train(common: &Common) -> Result<TrainOutcome> {
    let Loaded {
        cfg,
        source,
        mut out,
    } = load(common)?;
    let runs = train_all(&cfg)?;
    let summary = write_training(&mut out, &cfg, &runs)?;
    write_manifest(&mut out, "meta-train", Some(&cfg), Some(&source))?;
    Ok(TrainOutcome { runs, summary })
}

/// Replacements for the training task when meta-testing.
#[derive(Debug, Clone, Default)]
pub struct TaskOverrides {
    pub goals: Vec<Vec<f64>>,
    /// Multiplier on the distal link mass.
    pub mass_scale: Option<f64>,
    /// Distal link length.
    pub length: Option<f64>,
}

fn test_env(cfg: &ExperimentConfig, o: &TaskOverrides) -> Result<DynamicsModel> {
    let env = cfg.model();
    if o.mass_scale.is_none() && o.length.is_none() {
        return Ok(env);
    }
    let DynamicsModel::TwoLink { mut arm, dt } = env else {
        bail!("mass and length overrides need the arm");
    };
    if let Some(m) = o.mass_scale {
        arm.m2 *= m;
    }
    if let Some(l) = o.length {
        arm.l2 = l;
    }
    let env = DynamicsModel::two_link(arm, dt);
    env.validate()?;
    Ok(env)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Checkpoint::read_from(std::io::BufReader::new(f))
        .with_context(|| format!("reading {}", path.display()))
}

/// Learns fresh policies with each checkpointed critic.
pub fn meta_test(
    common: &Common,
    checkpoints: &[PathBuf],
    overrides: &TaskOverrides,
) -> Result<Vec<TestRun>> {
    let Loaded {
        mut cfg,
        source,
        mut out,
    } = load(common)?;
    if checkpoints.is_empty() {
        bail!("meta-test needs at least one --checkpoint");
    }
    if !overrides.goals.is_empty() {
        cfg.goals = overrides.goals.clone();
        // Sweep centres index the old goal list.
        cfg.sweep = None;
        cfg.validate()?;
    }
    let critics = checkpoints
        .iter()
        .map(|p| TrainedCritic::from_checkpoint(&cfg, &read_checkpoint(p)?))
        .collect::<Result<Vec<_>>>()?;
    let cases = training_cases(&cfg, test_env(&cfg, overrides)?, 0);
    let runs = run_tests(&cfg, &critics, &cases)?;
    write_test_runs(&mut out, "meta_test.csv", &runs)?;
    write_manifest(&mut out, "meta-test", Some(&cfg), Some(&source))?;
    Ok(runs)
}

/// Trains the first seed and draws its landscapes.
pub fn landscape(common: &Common) -> Result<(SeedRun, LandscapeStudy)> {
    let Loaded {
        cfg,
        source,
        mut out,
    } = load(common)?;
    let run = train_seed(&cfg, cfg.seeds[0])?;
    write_training(&mut out, &cfg, std::slice::from_ref(&run))?;
    let study = landscape_study(&cfg, &run)?;
    write_landscape(&mut out, &study)?;
    write_manifest(&mut out, "landscape", Some(&cfg), Some(&source))?;
    Ok((run, study))
}

pub struct SweepResult {
    pub kind: SweepKind,
    pub values: Vec<f64>,
    pub runs: Vec<TestRun>,
}

pub struct SweepOutcome {
    pub train: TrainOutcome,
    /// Wall time of training alone.
    pub train_time: Duration,
    /// New policies on the training goals and dynamics.
    pub at_train: Vec<TestRun>,
    pub sweeps: Vec<SweepResult>,
}

/// Trains every seed, then learns new policies across each sweep.
pub fn sweep(common: &Common) -> Result<SweepOutcome> {
    let Loaded {
        cfg,
        source,
        mut out,
    } = load(common)?;
    let spec = cfg.sweep.clone().context("config has no sweep section")?;
    let started = Instant::now();
    let runs = train_all(&cfg)?;
    let train_time = started.elapsed();
    let summary = write_training(&mut out, &cfg, &runs)?;
    let critics = trained_critics(&cfg, &runs);
    let at_train = run_tests(&cfg, &critics, &training_cases(&cfg, cfg.model(), 0))?;
    write_test_runs(&mut out, "meta_test_train.csv", &at_train)?;
    let mut sweeps = Vec::new();
    for &kind in &spec.kinds {
        let cases: Vec<TestCase> = sweep_cases(&cfg, kind)?;
        let values = spec.values(kind).to_vec();
        let results = run_tests(&cfg, &critics, &cases)?;
        write_sweep(&mut out, &cfg, &runs, kind, &values, &results)?;
        sweeps.push(SweepResult {
            kind,
            values,
            runs: results,
        });
    }
    write_manifest(&mut out, "sweep", Some(&cfg), Some(&source))?;
    Ok(SweepOutcome {
        train: TrainOutcome { runs, summary },
        train_time,
        at_train,
        sweeps,
    })
}
