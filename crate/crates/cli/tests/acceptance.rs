//! The eight acceptance criteria, each printed as one PASS/FAIL line.
//! Every criterion runs even when an earlier one fails; the test fails at
//! the end if any did.

use critic_cli::checks::{
    derivative_probes, meta_phi_oracle, outer_gradient_closed_form, supq_fixed_point,
    supq_phi_oracle, toy_recovery, Mutation,
};
use critic_cli::commands::{self, Common, SweepOutcome};
use critic_cli::config::SweepKind;
use critic_cli::experiment::{cell_stats, first_below, Method};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

/// Written straight to stdout so the lines show without `--nocapture`.
fn line(text: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").unwrap();
    out.flush().unwrap();
}

struct Verdicts(Vec<(u32, bool)>);

impl Verdicts {
    fn record(&mut self, n: u32, pass: bool, elapsed: Duration, limit: Duration, detail: String) {
        let in_time = elapsed <= limit;
        let ok = pass && in_time;
        line(&format!(
            "criterion {n}: {} {detail}; {:.1}s of {:.0}s allowed{}",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs_f64(),
            if in_time { "" } else { " (too slow)" }
        ));
        self.0.push((n, ok));
    }

    fn error(&mut self, n: u32, e: anyhow::Error) {
        line(&format!("criterion {n}: FAIL run error: {e:#}"));
        self.0.push((n, false));
    }
}

fn criterion_1(v: &mut Verdicts) {
    let t = Instant::now();
    match toy_recovery(-6.0, 0.0, Mutation::default()) {
        Ok(c) => v.record(
            1,
            c.passed(),
            t.elapsed(),
            Duration::from_secs(1),
            c.to_string(),
        ),
        Err(e) => v.error(1, e),
    }
}

fn criterion_2(v: &mut Verdicts) {
    let t = Instant::now();
    let res = (|| -> anyhow::Result<(bool, String)> {
        let main = supq_fixed_point(-6.0, -2.0, Mutation::default())?;
        let mut ok = main.passed();
        let mut worst = main.error;
        for (s0, s1) in [(-3.0, 1.0), (2.0, -0.5), (-1.0, -4.0), (0.5, 2.5)] {
            let c = supq_fixed_point(s0, s1, Mutation::default())?;
            ok &= c.passed();
            worst = worst.max(c.error);
        }
        Ok((ok, format!("{main}; worst over 5 instances {worst:.2e}")))
    })();
    match res {
        Ok((ok, d)) => v.record(2, ok, t.elapsed(), Duration::from_secs(1), d),
        Err(e) => v.error(2, e),
    }
}

fn criterion_3(v: &mut Verdicts) {
    let t = Instant::now();
    let res = (|| -> anyhow::Result<(bool, String)> {
        let checks = [
            meta_phi_oracle(100, 11, Mutation::default())?,
            supq_phi_oracle(100, 12, Mutation::default())?,
            outer_gradient_closed_form(100, 13, Mutation::default())?,
        ];
        let ok = checks.iter().all(|c| c.passed());
        let d = checks
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        Ok((ok, d))
    })();
    match res {
        Ok((ok, d)) => v.record(3, ok, t.elapsed(), Duration::from_secs(10), d),
        Err(e) => v.error(3, e),
    }
}

fn criterion_4(v: &mut Verdicts) {
    let t = Instant::now();
    match derivative_probes(100, 14) {
        Ok(r) => v.record(
            4,
            r.first.passed() && r.second.passed(),
            t.elapsed(),
            Duration::from_secs(30),
            format!("{}; {}", r.first, r.second),
        ),
        Err(e) => v.error(4, e),
    }
}

fn common(config: &str, out: &Path) -> Common {
    Common {
        config: configs().join(config),
        seed: None,
        out: Some(out.to_path_buf()),
    }
}

fn criterion_5(v: &mut Verdicts, out: &Path) {
    let t = Instant::now();
    let (_, study) = match commands::landscape(&common("point_mass_landscape.json", out)) {
        Ok(r) => r,
        Err(e) => return v.error(5, e),
    };
    let elapsed = t.elapsed();
    let near = |d: Option<usize>| d.is_some_and(|d| d <= 1);
    let trained_ok = study
        .rows
        .iter()
        .filter(|r| r.trained)
        .all(|r| near(r.meta_distance()));
    let unseen: Vec<_> = study.rows.iter().filter(|r| !r.trained).collect();
    let unseen_ok = unseen.iter().filter(|r| near(r.meta_distance())).count();
    let sup_misses = unseen
        .iter()
        .filter(|r| !near(r.supervised_distance()))
        .count();
    let dist = |d: Option<usize>| d.map_or("-".to_string(), |d| d.to_string());
    let meta: Vec<String> = study.rows.iter().map(|r| dist(r.meta_distance())).collect();
    let sup: Vec<String> = study
        .rows
        .iter()
        .map(|r| dist(r.supervised_distance()))
        .collect();
    v.record(
        5,
        trained_ok && unseen_ok >= 5 && sup_misses >= 1,
        elapsed,
        Duration::from_secs(300),
        format!(
            "training goal within one cell: {trained_ok}; unseen goals within one cell: {unseen_ok} of {} (need 5); \
             supervised misses {sup_misses}; meta distances [{}], supervised distances [{}]",
            unseen.len(),
            meta.join(" "),
            sup.join(" ")
        ),
    );
}

fn criterion_6(v: &mut Verdicts, res: &SweepOutcome, threshold: f64) {
    let s = &res.train.summary;
    let meta = first_below(&s.meta, threshold);
    let base = s.baseline.as_ref().and_then(|b| first_below(b, threshold));
    let pass = match (meta, base) {
        (Some(m), Some(b)) => m < b,
        (Some(_), None) => true,
        (None, _) => false,
    };
    let show = |x: Option<usize>| x.map_or("never".to_string(), |i| i.to_string());
    v.record(
        6,
        pass,
        res.train_time,
        Duration::from_secs(1800),
        format!(
            "median cost first below {threshold}: meta-critic at iteration {}, supervised-q at {} (budget {})",
            show(meta),
            show(base),
            s.baseline.as_ref().map_or(0, |b| b.len())
        ),
    );
}

fn criterion_7(v: &mut Verdicts, res: &SweepOutcome, elapsed: Duration) {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [SweepKind::Goals, SweepKind::Mass, SweepKind::Length] {
        let Some(s) = res.sweeps.iter().find(|s| s.kind == kind) else {
            pass = false;
            parts.push(format!("{kind:?} sweep missing"));
            continue;
        };
        let mut over = Vec::new();
        let mut baseline_worse = 0;
        let mut medians = Vec::new();
        for (c, value) in s.values.iter().enumerate() {
            let m = cell_stats(&s.runs, Method::Meta, c, None).map_or(f64::INFINITY, |x| x.median);
            let b = cell_stats(&s.runs, Method::Supervised, c, None).map_or(f64::NAN, |x| x.median);
            medians.push(format!("{m:.3}/{b:.3}"));
            if m.is_nan() || m > 0.1 {
                over.push(format!("{value}"));
            }
            if b > m {
                baseline_worse += 1;
            }
        }
        let ok = over.is_empty() && baseline_worse >= 8;
        pass &= ok;
        parts.push(format!(
            "{kind:?}: columns above 0.1 [{}], baseline worse in {baseline_worse} of {}, medians ours/baseline [{}]",
            over.join(" "),
            s.values.len(),
            medians.join(" ")
        ));
    }
    v.record(
        7,
        pass,
        elapsed,
        Duration::from_secs(3600),
        parts.join("; "),
    );
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

/// Names of files that differ, or that only one side has.
fn differing(a: &Path, b: &Path) -> Vec<String> {
    let (fa, fb) = (files(a), files(b));
    let mut bad: Vec<String> = fa
        .iter()
        .filter(|(k, v)| fb.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    bad.extend(
        fb.keys()
            .filter(|k| !fa.contains_key(*k))
            .map(|k| k.display().to_string()),
    );
    bad
}

fn small_reacher(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(configs().join("reacher.json")).unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(&text).unwrap();
    cfg["seeds"] = serde_json::json!([0, 1]);
    cfg["outer"]["iterations"] = 30.into();
    cfg["baseline"]["ddpg"]["iterations"] = 5.into();
    cfg["meta_test"] = serde_json::json!({ "iterations": 10, "inits": 2 });
    cfg["sweep"] = serde_json::json!({
        "kinds": ["goals", "mass", "length"],
        "stds": [0.1, 0.5], "masses": [1.0, 2.0], "lengths": [0.5, 1.0], "goals_per_cell": 2
    });
    let path = dir.join("small_reacher.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn criterion_8(v: &mut Verdicts, landscape_out: &Path, reacher_out: &Path, tmp: &Path) {
    let t = Instant::now();
    let res = (|| -> anyhow::Result<(bool, String)> {
        let mut bad = Vec::new();
        let mut compared = 0;

        let again = tmp.join("landscape_again");
        commands::landscape(&common("point_mass_landscape.json", &again))?;
        compared += files(landscape_out).len();
        bad.extend(differing(landscape_out, &again));

        let (a, b) = (tmp.join("toy_a"), tmp.join("toy_b"));
        commands::meta_train(&common("toy.json", &a))?;
        commands::meta_train(&common("toy.json", &b))?;
        compared += files(&a).len();
        bad.extend(differing(&a, &b));

        // Same reacher config on one and on three threads.
        let small = small_reacher(tmp);
        let run = |threads: usize, out: PathBuf| -> anyhow::Result<()> {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()?;
            let c = Common {
                config: small.clone(),
                seed: None,
                out: Some(out),
            };
            pool.install(|| commands::sweep(&c))?;
            Ok(())
        };
        let (r1, r3) = (tmp.join("reacher_1"), tmp.join("reacher_3"));
        run(1, r1.clone())?;
        run(3, r3.clone())?;
        compared += files(&r1).len();
        bad.extend(differing(&r1, &r3));

        // The full reacher run, seed 0 alone, against the seed-0 files of the five-seed run.
        let solo = tmp.join("reacher_seed0");
        commands::meta_train(&Common {
            config: configs().join("reacher.json"),
            seed: Some(0),
            out: Some(solo.clone()),
        })?;
        for f in [
            "meta/seed0/losses.csv",
            "baseline/seed0/losses.csv",
            "meta/seed0/critic.ckpt",
        ] {
            compared += 1;
            if std::fs::read(solo.join(f))? != std::fs::read(reacher_out.join(f))? {
                bad.push(format!("{f} (seed 0 alone vs within five seeds)"));
            }
        }
        Ok((
            bad.is_empty(),
            format!(
                "{compared} files compared across repeated runs, differing: [{}]",
                bad.join(", ")
            ),
        ))
    })();
    match res {
        Ok((ok, d)) => v.record(8, ok, t.elapsed(), Duration::from_secs(3600), d),
        Err(e) => v.error(8, e),
    }
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = Verdicts(Vec::new());
    criterion_1(&mut v);
    criterion_2(&mut v);
    criterion_3(&mut v);
    criterion_4(&mut v);

    let landscape_out = tmp.path().join("landscape");
    criterion_5(&mut v, &landscape_out);

    let reacher_out = tmp.path().join("reacher");
    let t = Instant::now();
    match commands::sweep(&common("reacher.json", &reacher_out)) {
        Ok(res) => {
            let elapsed = t.elapsed();
            criterion_6(&mut v, &res, 0.05);
            criterion_7(&mut v, &res, elapsed);
        }
        Err(e) => {
            let msg = format!("{e:#}");
            v.error(6, anyhow::anyhow!(msg.clone()));
            v.error(7, anyhow::anyhow!(msg));
        }
    }
    criterion_8(&mut v, &landscape_out, &reacher_out, tmp.path());

    let failed: Vec<u32> = v.0.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    line(&format!(
        "acceptance: {} of {} criteria passed",
        v.0.len() - failed.len(),
        v.0.len()
    ));
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
