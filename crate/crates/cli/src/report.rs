//! CSV emission. Everything is written from one thread in a fixed order so
//! the files are byte-stable.

use crate::config::{ExperimentConfig, SweepKind};
use crate::experiment::{
    cell_stats, solved_seeds, CellStats, LandscapeStudy, Method, SeedRun, TestRun, TrainingSummary,
};
use anyhow::{Context, Result};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

/// Collects the paths written during one command.
#[derive(Debug, Default)]
pub struct Outputs {
    pub root: PathBuf,
    pub files: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Outputs {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Opens `rel` under the root for writing, creating parent directories.
    pub fn create(&mut self, rel: impl AsRef<Path>) -> Result<BufWriter<File>> {
        let path = self.root.join(rel.as_ref());
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.files.push(rel.as_ref().to_path_buf());
        Ok(BufWriter::new(f))
    }

    pub fn csv(
        &mut self,
        rel: impl AsRef<Path>,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(self.create(rel)?);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Short decimal with trailing zeros dropped, for column labels.
pub fn label(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

pub fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<usize>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// Per-seed checkpoints, loss curves and θ snapshots plus the summaries.
pub fn write_training(
    out: &mut Outputs,
    cfg: &ExperimentConfig,
    runs: &[SeedRun],
) -> Result<TrainingSummary> {
    for r in runs {
        let dir = PathBuf::from(format!("meta/seed{}", r.seed));
        if let Some(ck) = r.checkpoint(cfg, Method::Meta) {
            ck.write_to(out.create(dir.join("critic.ckpt"))?)?;
        }
        r.record
            .write_losses_csv(out.create(dir.join("losses.csv"))?)?;
        if !r.record.snapshots.is_empty() {
            r.record
                .write_snapshots_csv(out.create(dir.join("thetas.csv"))?)?;
        }
        for (it, phi) in &r.record.checkpoints {
            let ck = critic_core::nets::Checkpoint {
                header: critic_core::nets::CheckpointHeader {
                    kind: Method::Meta.kind().into(),
                    model: cfg.critic_model(),
                    seed: r.seed,
                    iteration: *it,
                },
                params: phi.clone(),
            };
            ck.write_to(out.create(dir.join(format!("critic_iter{it}.ckpt")))?)?;
        }
        if let Some(b) = &r.baseline {
            let dir = PathBuf::from(format!("baseline/seed{}", r.seed));
            if let Some(ck) = r.checkpoint(cfg, Method::Supervised) {
                ck.write_to(out.create(dir.join("q.ckpt"))?)?;
            }
            let rows: Vec<Vec<String>> = b
                .curve
                .iter()
                .enumerate()
                .flat_map(|(it, per_goal)| {
                    per_goal
                        .iter()
                        .enumerate()
                        .map(move |(g, c)| vec![it.to_string(), g.to_string(), num(*c)])
                })
                .collect();
            out.csv(
                dir.join("losses.csv"),
                &["iteration", "goal", "task_loss"],
                &rows,
            )?;
        }
    }

    let summary = TrainingSummary::new(cfg, runs);
    let len = summary
        .meta
        .len()
        .max(summary.baseline.as_ref().map_or(0, |b| b.len()));
    let rows: Vec<Vec<String>> = (0..len)
        .map(|it| {
            vec![
                it.to_string(),
                summary.meta.get(it).map_or_else(String::new, |x| num(*x)),
                summary
                    .baseline
                    .as_ref()
                    .and_then(|b| b.get(it))
                    .map_or_else(String::new, |x| num(*x)),
            ]
        })
        .collect();
    out.csv(
        "train_curves.csv",
        &["iteration", "meta_median", "baseline_median"],
        &rows,
    )?;

    let mut rows = Vec::new();
    for r in runs {
        let c = r.meta_curve(cfg);
        rows.push(vec![
            Method::Meta.label().into(),
            r.seed.to_string(),
            c.len().to_string(),
            opt(crate::experiment::first_below(&c, cfg.threshold)),
            c.last().map_or_else(String::new, |x| num(*x)),
            opt(r.record.diverged),
        ]);
        if let (Some(c), Some(b)) = (r.baseline_curve(cfg), &r.baseline) {
            rows.push(vec![
                Method::Supervised.label().into(),
                r.seed.to_string(),
                c.len().to_string(),
                opt(crate::experiment::first_below(&c, cfg.threshold)),
                c.last().map_or_else(String::new, |x| num(*x)),
                opt(b.diverged),
            ]);
        }
    }
    for (method, curve) in [
        (Method::Meta, Some(&summary.meta)),
        (Method::Supervised, summary.baseline.as_ref()),
    ] {
        if let Some(c) = curve {
            rows.push(vec![
                method.label().into(),
                "median".into(),
                c.len().to_string(),
                opt(crate::experiment::first_below(c, cfg.threshold)),
                c.last().map_or_else(String::new, |x| num(*x)),
                String::new(),
            ]);
        }
    }
    out.csv(
        "train_summary.csv",
        &[
            "method",
            "seed",
            "iterations",
            "first_below_threshold",
            "final_cost",
            "diverged_at",
        ],
        &rows,
    )?;
    Ok(summary)
}

pub fn write_test_runs(out: &mut Outputs, rel: impl AsRef<Path>, runs: &[TestRun]) -> Result<()> {
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            vec![
                r.method.label().into(),
                r.seed.to_string(),
                r.column.to_string(),
                r.goal_index.to_string(),
                r.init.to_string(),
                r.goal.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" "),
                num(r.final_mse),
            ]
        })
        .collect();
    out.csv(
        rel,
        &[
            "method",
            "seed",
            "column",
            "goal_index",
            "init",
            "goal",
            "final_mse",
        ],
        &rows,
    )
}

fn methods_in(runs: &[TestRun]) -> Vec<Method> {
    let mut m: Vec<Method> = runs.iter().map(|r| r.method).collect();
    m.sort();
    m.dedup();
    m
}

/// `method × column` table with cells produced by `cell`.
fn table(
    out: &mut Outputs,
    rel: &str,
    columns: &[String],
    runs: &[TestRun],
    seeds: impl Fn(Method) -> Option<Vec<u64>>,
    cell: impl Fn(&CellStats) -> String,
) -> Result<()> {
    let mut header = vec!["method".to_string()];
    header.extend(columns.iter().cloned());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = methods_in(runs)
        .into_iter()
        .map(|m| {
            let s = seeds(m);
            let mut row = vec![m.label().to_string()];
            row.extend((0..columns.len()).map(|c| {
                cell_stats(runs, m, c, s.as_deref()).map_or_else(|| "n/a".into(), |st| cell(&st))
            }));
            row
        })
        .collect();
    out.csv(rel, &header, &rows)
}

fn mean_std_cell(s: &CellStats) -> String {
    format!("{:.4}({:.4})", s.mean, s.std)
}

fn median_cell(s: &CellStats) -> String {
    format!("{:.4}", s.median)
}

pub fn column_labels(kind: SweepKind, values: &[f64]) -> Vec<String> {
    let name = match kind {
        SweepKind::Goals => "std",
        SweepKind::Mass => "mass",
        SweepKind::Length => "length",
    };
    values
        .iter()
        .map(|v| format!("{name}={}", label(*v)))
        .collect()
}

pub fn sweep_name(kind: SweepKind) -> &'static str {
    match kind {
        SweepKind::Goals => "goals",
        SweepKind::Mass => "mass",
        SweepKind::Length => "length",
    }
}

/// Runs, mean(std) table over all seeds, median table, and mean(std) over
/// the seeds that solved training.
pub fn write_sweep(
    out: &mut Outputs,
    cfg: &ExperimentConfig,
    train: &[SeedRun],
    kind: SweepKind,
    values: &[f64],
    runs: &[TestRun],
) -> Result<()> {
    let name = sweep_name(kind);
    let cols = column_labels(kind, values);
    write_test_runs(out, format!("sweep_{name}/runs.csv"), runs)?;
    table(
        out,
        &format!("sweep_{name}/table.csv"),
        &cols,
        runs,
        |_| None,
        mean_std_cell,
    )?;
    table(
        out,
        &format!("sweep_{name}/median.csv"),
        &cols,
        runs,
        |_| None,
        median_cell,
    )?;
    table(
        out,
        &format!("sweep_{name}/table_solved.csv"),
        &cols,
        runs,
        |m| Some(solved_seeds(cfg, train, m)),
        mean_std_cell,
    )?;
    Ok(())
}

pub fn write_landscape(out: &mut Outputs, study: &LandscapeStudy) -> Result<()> {
    for (goal, grid) in &study.grids {
        grid.write_csv(out.create(format!("landscape/{}_goal{goal}.csv", grid.kind.name()))?)?;
    }
    let cell =
        |c: Option<(usize, usize)>| c.map_or_else(|| ",".to_string(), |(i, j)| format!("{i},{j}"));
    let rows: Vec<Vec<String>> = study
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.goal_index.to_string(),
                r.goal.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" "),
                r.trained.to_string(),
                r.true_cell.0.to_string(),
                r.true_cell.1.to_string(),
            ];
            row.extend(cell(r.meta_cell).split(',').map(String::from));
            row.push(opt(r.meta_distance()));
            row.extend(cell(r.supervised_cell).split(',').map(String::from));
            row.push(opt(r.supervised_distance()));
            row
        })
        .collect();
    out.csv(
        "landscape/argmin.csv",
        &[
            "goal_index",
            "goal",
            "trained",
            "true_i",
            "true_j",
            "meta_i",
            "meta_j",
            "meta_distance",
            "supervised_i",
            "supervised_j",
            "supervised_distance",
        ],
        &rows,
    )
}
