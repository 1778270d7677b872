//! Scaled-down versions of the end-to-end experiments.

use std::sync::Arc;

use mf3net::coupling::{coupled_records, data_seed_for, CoupledSetup, Leg, ReferenceKind};
use mf3net::harness::{convergence_run, run_sweep, ExperimentConfig, SweepKind, Task};
use mf3net::net::RecordGrid;
use mf3net::Error;

fn cfg(task: Task, text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(task, text).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn se(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64 / v.len() as f64).sqrt()
}

#[test]
fn wider_nets_track_the_particle_reference_more_closely() {
    let c = cfg(Task::Couple, "eps = 1e-3\nh = 1e-3\nT = 1\nrecord_intervals = 20\n");
    let spec = Arc::new(c.data.load().unwrap());
    let grid = RecordGrid::uniform(c.t_end, c.record_intervals).unwrap();
    let legs = [Leg { n1: 16, n2: 16, eps: c.eps }, Leg { n1: 64, n2: 64, eps: c.eps }];
    let (mut small, mut large) = (vec![], vec![]);
    for seed in 1..=10 {
        let e = c.embedding(spec.dim(), seed).unwrap();
        let setup = CoupledSetup {
            embedding: &e,
            spec: &spec,
            model: &c.model,
            t_end: c.t_end,
            h: c.h,
            grid: &grid,
            data_seed: data_seed_for(seed),
            reference: ReferenceKind::Particle { oversample: 4 },
            labels: None,
        };
        let r = coupled_records(&setup, &legs).unwrap();
        assert_eq!(r[0].m1, 256);
        small.push(r[0].d_final());
        large.push(r[1].d_final());
    }
    assert!(mean(&large) < mean(&small), "{} vs {}", mean(&large), mean(&small));
}

#[test]
fn frozen_schedule_gives_a_degenerate_sweep() {
    let c = cfg(Task::SweepN, "xi1 = 0\nxi2 = 0\nxi3 = 0\nn_levels = 8,16,32,64\nseeds = 1..3\n");
    let r = run_sweep(&c, SweepKind::Width, None, None).unwrap();
    assert!(r.raw.iter().all(|x| x.d_t == 0.0));
    assert!(r.fit.is_none());
    assert!(r.degenerate.is_some());
    assert!(matches!(r.check(c.slope_range, c.stderr_max), Err(Error::Assertion(_))));
}

#[test]
fn zero_horizon_sweep_has_zero_distance() {
    let c = cfg(Task::SweepEps, "T = 0\nn = 32\nseeds = 1..3\n");
    let r = run_sweep(&c, SweepKind::Step, None, None).unwrap();
    assert_eq!(r.raw.len(), 3 * c.eps_levels.len());
    assert!(r.raw.iter().all(|x| x.d_t == 0.0));
}

#[test]
fn disjoint_seed_sets_agree_on_the_width_slope() {
    let base = "n_levels = 16,32,64,128\nrecord_intervals = 10\n";
    let a = run_sweep(&cfg(Task::SweepN, &format!("{base}seeds = 1..6\n")), SweepKind::Width, None, None).unwrap();
    let b = run_sweep(&cfg(Task::SweepN, &format!("{base}seeds = 7..12\n")), SweepKind::Width, None, None).unwrap();
    let (fa, fb) = (a.fit.unwrap(), b.fit.unwrap());
    let bound = 2.0 * (fa.stderr.powi(2) + fb.stderr.powi(2)).sqrt();
    assert!((fa.slope - fb.slope).abs() <= bound, "{} vs {} (bound {bound})", fa.slope, fb.slope);
}

#[test]
fn doubling_width_at_fixed_step_does_not_hurt() {
    let base = "eps_levels = 0.04,0.02,0.01,0.005\nrecord_intervals = 10\nseeds = 1..8\n";
    let a = run_sweep(&cfg(Task::SweepEps, &format!("{base}n = 100\n")), SweepKind::Step, None, None).unwrap();
    let b = run_sweep(&cfg(Task::SweepEps, &format!("{base}n = 200\n")), SweepKind::Step, None, None).unwrap();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!(ra.level, rb.level);
        let bound = 2.0 * (ra.stderr.powi(2) + rb.stderr.powi(2)).sqrt();
        assert!(rb.mean <= ra.mean + bound, "eps {}: {} vs {}", ra.level, rb.mean, ra.mean);
    }
}

#[test]
fn per_level_spread_matches_the_raw_rows() {
    let c = cfg(Task::SweepN, "n_levels = 8,16,32,64\nseeds = 1..4\nrecord_intervals = 5\n");
    let r = run_sweep(&c, SweepKind::Width, None, None).unwrap();
    for row in &r.rows {
        let d: Vec<f64> = r.raw.iter().filter(|x| x.level == row.level).map(|x| x.d_t).collect();
        assert_eq!(row.seeds, 4);
        assert!((row.mean - mean(&d)).abs() < 1e-15);
        assert!((row.stderr - se(&d)).abs() < 1e-15);
    }
}

#[test]
fn zero_labels_are_learned() {
    let c = cfg(Task::Convergence, "data_constant = 0\nm1 = 50\nm2 = 50\n");
    let r = &convergence_run(&c).unwrap()[0];
    assert!(r.terminal_risk <= 1e-2 * r.initial_risk, "{}", r.summary());
    assert!(r.certificate.holds());
}

#[test]
fn stationarity_monitor_decays_on_a_converging_run() {
    let c = cfg(Task::Convergence, "T = 50\nrecord_intervals = 50\nm1 = 60\nm2 = 60\n");
    let r = &convergence_run(&c).unwrap()[0];
    assert!(r.monitor_end <= 0.1 * r.monitor_start, "{}", r.summary());
    assert!(r.lip_in_init.windows(2).all(|w| w[1] >= w[0]));
    assert!(r.lip_in_time.is_finite());
    assert!(r.risk.windows(2).all(|w| w[1] <= w[0] + r.monotone_slack));
}
