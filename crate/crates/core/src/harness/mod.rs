//! Experiment harness: configuration, the per-task runners and sweeps.
//!
//! Every task writes CSV files that begin with `# key=value` metadata lines.
//! Identical configs reproduce byte-identical files, whatever the worker count.

pub mod config;
pub mod convergence;
pub mod crossval;
pub mod plot;
pub mod sweep;

use std::path::Path;
use std::sync::Arc;

use crate::coupling::{coupled_records, data_seed_for, CoupledSetup, Leg, COUPLING_COLUMNS};
use crate::data::DataStream;
use crate::error::{Error, Result};
use crate::io::{MetricTable, Snapshot};
use crate::metrics::{stationarity_monitor, TrajectoryView};
use crate::mf::{euler_evolve, ParticleSystem};
use crate::net::{train, NetworkParams, RecordGrid, TrajectoryRecorder};

pub use config::{DataSource, ExperimentConfig, Task};
pub use convergence::{convergence_run, ConvergenceReport};
pub use crossval::{crossval, CrossvalReport, PairCheck};
pub use sweep::{fit_slope, run_sweep, sweep_eps, sweep_n, RawRow, SlopeFit, SweepKind, SweepResult, SweepRow};

/// Thread pool sized by `cfg.workers` (all cores when unset).
pub fn worker_pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    let n = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Internal(format!("cannot build worker pool: {e}")))
}

fn sup_abs<'a>(v: impl Iterator<Item = &'a f64>) -> f64 {
    v.fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Outcome of one task invocation.
#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub lines: Vec<String>,
    /// Acceptance checks that failed; written outputs are kept.
    pub failures: Vec<String>,
}

fn write(out: Option<&Path>, name: &str, table: &MetricTable) -> Result<()> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        table.save(&dir.join(name))?;
    }
    Ok(())
}

fn task_train(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<TaskOutcome> {
    let spec = Arc::new(cfg.data.load()?);
    let grid = RecordGrid::uniform(cfg.t_end, cfg.record_intervals)?;
    let mut lines = Vec::new();
    for &seed in &cfg.seeds {
        let w0 = NetworkParams::new(cfg.embedding(spec.dim(), seed)?.sample(cfg.n1, cfg.n2)?);
        let stream = DataStream::new(Arc::clone(&spec), data_seed_for(seed));
        let mut rec = TrajectoryRecorder::default();
        let res = train(&w0, &stream, cfg.t_end, cfg.eps, &cfg.model, &grid, &mut rec)?;
        let mut t = MetricTable::new(&["t", "risk", "sup_w2", "sup_w3"]);
        t.meta = cfg.meta();
        t.meta.push(("widths".into(), format!("{}x{}", cfg.n1, cfg.n2)));
        t.meta.push(("eps".into(), cfg.eps.to_string()));
        t.meta.push(("seed".into(), seed.to_string()));
        for (time, w) in rec.times.iter().zip(&rec.snapshots) {
            t.push_f64(&[*time, w.risk(&spec, &cfg.model)?, sup_abs(w.w2.iter()), sup_abs(w.w3.iter())]);
        }
        write(out, &format!("train_seed{seed}.csv"), &t)?;
        if let Some(dir) = out {
            Snapshot {
                weights: res.params.weights.clone(),
                step_k: res.params.step_k,
                t: cfg.t_end,
            }
            .save(&dir.join(format!("snapshot_train_seed{seed}.txt")))?;
        }
        lines.push(format!(
            "train seed {seed}: {} steps, risk {:.4e} -> {:.4e}",
            res.samples_used,
            rec.snapshots[0].risk(&spec, &cfg.model)?,
            res.params.weights.risk(&spec, &cfg.model)?
        ));
    }
    Ok(TaskOutcome {
        lines,
        failures: vec![],
    })
}

fn task_mf(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<TaskOutcome> {
    let spec = cfg.data.load()?;
    let grid = RecordGrid::uniform(cfg.t_end, cfg.record_intervals)?;
    let mut lines = Vec::new();
    for &seed in &cfg.seeds {
        let p0 = ParticleSystem::new(cfg.embedding(spec.dim(), seed)?.sample(cfg.m1, cfg.m2)?);
        let mut rec = TrajectoryRecorder::default();
        let res = euler_evolve(&p0, &spec, &cfg.model, cfg.t_end, cfg.h, &grid, &mut rec)?;
        let view = TrajectoryView::from_recorder(rec)?;
        let monitor = stationarity_monitor(&view, &spec, &cfg.model)?;
        let c = &res.certificate;
        let mut t = MetricTable::new(&["t", "risk", "monitor", "sup_w2", "sup_w3"]);
        t.meta = cfg.meta();
        t.meta.push(("particles".into(), format!("{}x{}", cfg.m1, cfg.m2)));
        t.meta.push(("seed".into(), seed.to_string()));
        t.meta.push(("bound_w2".into(), format!("{:e}", c.bound_w2)));
        t.meta.push(("bound_w3".into(), format!("{:e}", c.bound_w3)));
        for ((time, w), m) in view.times.iter().zip(&view.snapshots).zip(&monitor) {
            t.push_f64(&[*time, w.risk(&spec, &cfg.model)?, m.1, sup_abs(w.w2.iter()), sup_abs(w.w3.iter())]);
        }
        write(out, &format!("mf_seed{seed}.csv"), &t)?;
        if let Some(dir) = out {
            Snapshot {
                weights: res.system.weights.clone(),
                step_k: res.steps,
                t: res.system.t,
            }
            .save(&dir.join(format!("snapshot_mf_seed{seed}.txt")))?;
        }
        lines.push(format!(
            "mf seed {seed}: {} steps, risk {:.4e}, sup|w2| {:.3} ≤ {:.3}, sup|w3| {:.3} ≤ {:.3}",
            res.steps,
            res.system.weights.risk(&spec, &cfg.model)?,
            c.observed_w2,
            c.bound_w2,
            c.observed_w3,
            c.bound_w3
        ));
    }
    Ok(TaskOutcome {
        lines,
        failures: vec![],
    })
}

fn task_couple(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<TaskOutcome> {
    let spec = Arc::new(cfg.data.load()?);
    let grid = RecordGrid::uniform(cfg.t_end, cfg.record_intervals)?;
    let leg = Leg {
        n1: cfg.n1,
        n2: cfg.n2,
        eps: cfg.eps,
    };
    let pool = worker_pool(cfg)?;
    use rayon::prelude::*;
    let records: Vec<_> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let e = cfg.embedding(spec.dim(), seed)?;
                let setup = CoupledSetup {
                    embedding: &e,
                    spec: &spec,
                    model: &cfg.model,
                    t_end: cfg.t_end,
                    h: cfg.h,
                    grid: &grid,
                    data_seed: data_seed_for(seed),
                    reference: cfg.reference,
                    labels: None,
                };
                Ok(coupled_records(&setup, &[leg])?.remove(0))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let mut text = String::new();
        for (k, v) in cfg.meta() {
            text.push_str(&format!("# {k}={v}\n"));
        }
        text.push_str(&format!("# reference={}\n", records[0].reference));
        text.push_str(&format!("# widths={}x{}\n", cfg.n1, cfg.n2));
        text.push_str(COUPLING_COLUMNS);
        text.push('\n');
        for r in &records {
            r.csv_rows(&mut text);
        }
        std::fs::write(dir.join("coupling.csv"), text)?;
    }
    let d: Vec<f64> = records.iter().map(|r| r.d_final()).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    Ok(TaskOutcome {
        lines: vec![format!(
            "couple {}x{} eps={} against {}: mean D_T {:.4e} over {} seeds",
            cfg.n1,
            cfg.n2,
            cfg.eps,
            records[0].reference,
            mean,
            d.len()
        )],
        failures: vec![],
    })
}

/// Runs `cfg.task`, writing outputs to `cfg.output_dir` when set.
pub fn run(cfg: &ExperimentConfig) -> Result<TaskOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir.as_deref();
    match cfg.task {
        Task::Train => task_train(cfg, out),
        Task::Mf => task_mf(cfg, out),
        Task::Couple => task_couple(cfg, out),
        Task::SweepN | Task::SweepEps => {
            let kind = if cfg.task == Task::SweepN {
                SweepKind::Width
            } else {
                SweepKind::Step
            };
            let r = run_sweep(cfg, kind, None, out)?;
            let mut lines: Vec<String> = r
                .rows
                .iter()
                .map(|row| format!("  level {}: mean D_T {:.4e} ± {:.1e} ({} seeds)", row.level, row.mean, row.stderr, row.seeds))
                .collect();
            lines.push(r.summary());
            let failures = if cfg.check {
                r.check(cfg.slope_range, cfg.stderr_max).err().map(|e| e.to_string()).into_iter().collect()
            } else {
                vec![]
            };
            Ok(TaskOutcome { lines, failures })
        }
        Task::Convergence => {
            let reports = convergence_run(cfg)?;
            let meta = cfg.meta();
            let mut out_lines = Vec::new();
            let mut failures = Vec::new();
            for r in &reports {
                write(out, &format!("convergence_seed{}.csv", r.seed), &r.table(&meta))?;
                out_lines.push(r.summary());
                if cfg.check && !r.passed() {
                    failures.push(format!(
                        "convergence seed {}: risk_ok={} monitor_ok={} monotone_ok={}",
                        r.seed, r.risk_ok, r.monitor_ok, r.monotone_ok
                    ));
                }
            }
            Ok(TaskOutcome {
                lines: out_lines,
                failures,
            })
        }
        Task::Crossval => {
            let reports = crossval(cfg)?;
            let meta = cfg.meta();
            let mut lines = Vec::new();
            let mut failures = Vec::new();
            for r in &reports {
                write(out, &format!("crossval_seed{}.csv", r.seed), &r.table(&meta))?;
                for p in &r.pairs {
                    lines.push(format!(
                        "crossval seed {} {}: {:.3e} (tolerance {:.3e})",
                        r.seed, p.name, p.distance, p.tolerance
                    ));
                }
                lines.push(format!(
                    "crossval seed {} picard: {} iterations, tail ratio {:.3}",
                    r.seed, r.picard_iterations, r.tail_ratio
                ));
                if cfg.check {
                    if let Err(e) = r.check() {
                        failures.push(e.to_string());
                    }
                }
            }
            Ok(TaskOutcome { lines, failures })
        }
        Task::Plot => plot::plot(cfg),
    }
}
