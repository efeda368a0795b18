use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use critic_cli::checks::{toy_verify, Mutation};
use critic_cli::commands::{self, Common, TaskOverrides};
use critic_cli::experiment::{median, Method};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "critic",
    version,
    about = "Meta-learned critics for policy gradients"
)]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl From<CommonArgs> for Common {
    fn from(a: CommonArgs) -> Self {
        Common {
            config: a.config,
            seed: a.seed,
            out: a.out,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the scalar toy problem against its closed forms.
    ToyVerify {
        /// Perturb the oracles; every check should then fail.
        #[arg(long)]
        mutate: bool,
    },
    /// Meta-train critics (and the baseline, if configured) per seed.
    MetaTrain(CommonArgs),
    /// Learn new policies with frozen critics from checkpoints.
    MetaTest {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        /// Goal as comma-separated coordinates; repeatable. Replaces the
        /// training goals.
        #[arg(long, value_parser = parse_vec)]
        goal: Vec<Vec<f64>>,
        /// Multiplier on the distal link mass.
        #[arg(long)]
        mass_scale: Option<f64>,
        /// Distal link length.
        #[arg(long)]
        length: Option<f64>,
    },
    /// Train one seed and write value/gradient grids.
    Landscape(CommonArgs),
    /// Train all seeds and run the generalization sweeps.
    Sweep(CommonArgs),
}

fn parse_vec(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect()
}

fn print_medians(runs: &[critic_cli::experiment::TestRun]) {
    for m in [Method::Meta, Method::Supervised] {
        let xs: Vec<f64> = runs
            .iter()
            .filter(|r| r.method == m)
            .map(|r| r.final_mse)
            .collect();
        if !xs.is_empty() {
            println!(
                "{}: median final MSE {:.4} over {} policies",
                m.label(),
                median(&xs),
                xs.len()
            );
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("setting up the thread pool")?;
    }
    match cli.cmd {
        Cmd::ToyVerify { mutate } => {
            let checks = toy_verify(Mutation(mutate))?;
            for c in &checks {
                println!("{c}");
            }
            return Ok(checks.iter().all(|c| c.passed()));
        }
        Cmd::MetaTrain(c) => {
            let res = commands::meta_train(&c.into())?;
            println!(
                "meta-critic median final cost {:.4}",
                res.summary.meta.last().copied().unwrap_or(f64::NAN)
            );
            if let Some(b) = &res.summary.baseline {
                println!(
                    "supervised-q median final cost {:.4}",
                    b.last().copied().unwrap_or(f64::NAN)
                );
            }
        }
        Cmd::MetaTest {
            common,
            checkpoint,
            goal,
            mass_scale,
            length,
        } => {
            let o = TaskOverrides {
                goals: goal,
                mass_scale,
                length,
            };
            let runs = commands::meta_test(&common.into(), &checkpoint, &o)?;
            print_medians(&runs);
        }
        Cmd::Landscape(c) => {
            let (_, study) = commands::landscape(&c.into())?;
            for r in &study.rows {
                println!(
                    "goal {:?}: true argmin {:?}, meta distance {:?}, supervised distance {:?}",
                    r.goal,
                    r.true_cell,
                    r.meta_distance(),
                    r.supervised_distance()
                );
            }
        }
        Cmd::Sweep(c) => {
            let res = commands::sweep(&c.into())?;
            print_medians(&res.at_train);
            for s in &res.sweeps {
                println!("sweep {:?}:", s.kind);
                print_medians(&s.runs);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
