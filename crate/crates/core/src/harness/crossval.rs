//! Independent discretizations of the same MF flow compared against each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::io::MetricTable;
use crate::mf::{euler_evolve, latin_particle_system, picard_solve, reduced_evolve, trajectory_distance, ParticleSystem, ReducedSystem};
use crate::net::{RecordGrid, TrajectoryRecorder};

use super::config::ExperimentConfig;

/// One compared pair of integrators.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCheck {
    pub name: &'static str,
    pub distance: f64,
    pub tolerance: f64,
}

impl PairCheck {
    pub fn passed(&self) -> bool {
        self.distance <= self.tolerance
    }
}

#[derive(Debug, Clone)]
pub struct CrossvalReport {
    pub seed: u64,
    pub pairs: Vec<PairCheck>,
    pub picard_iterations: usize,
    pub picard_ratios: Vec<f64>,
    /// Largest Picard contraction ratio after the first half of the iterations.
    pub tail_ratio: f64,
    /// Sup distance of each integrator from the initial state.
    pub movement: f64,
}

impl CrossvalReport {
    pub fn check(&self) -> Result<()> {
        for p in &self.pairs {
            if !p.passed() {
                return Err(Error::Assertion(format!(
                    "{} disagree: sup distance {:.3e} exceeds {:.3e}",
                    p.name, p.distance, p.tolerance
                )));
            }
        }
        Ok(())
    }

    pub fn table(&self, meta: &[(String, String)]) -> MetricTable {
        let mut t = MetricTable::new(&["pair", "distance", "tolerance", "passed"]);
        t.meta = meta.to_vec();
        t.meta.push(("seed".into(), self.seed.to_string()));
        t.meta.push(("picard_iterations".into(), self.picard_iterations.to_string()));
        t.meta.push(("picard_tail_ratio".into(), format!("{:e}", self.tail_ratio)));
        for p in &self.pairs {
            t.push(vec![
                p.name.to_string(),
                format!("{:e}", p.distance),
                format!("{:e}", p.tolerance),
                p.passed().to_string(),
            ]);
        }
        t
    }
}

/// Latin instance from the embedding laws: `[c, r2, r3]` draws of ρ1, ρ2, ρ3.
fn latin_atoms(cfg: &ExperimentConfig, dim: usize, seed: u64) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_1A71);
    let [c, r2, r3] = cfg.latin_atoms;
    let u = Array2::from_shape_fn((c, dim), |_| cfg.rho1.sample(&mut rng));
    let a2 = (0..r2).map(|_| cfg.rho2.sample(&mut rng)).collect();
    let a3 = (0..r3).map(|_| cfg.rho3.sample(&mut rng)).collect();
    (u, a2, a3)
}

/// Sup over recorded times of the deviation between a reduced trajectory and
/// its Latin particle system.
pub fn reduced_vs_latin(cfg: &ExperimentConfig, dim: usize, seed: u64) -> Result<f64> {
    let spec = cfg.data.load()?;
    let (u, a2, a3) = latin_atoms(cfg, dim, seed);
    let (r2, r3) = (a2.len(), a3.len());
    let system = ReducedSystem::from_atoms(&u, &a2, &a3)?;
    let p0 = latin_particle_system(&u, &a2, &a3)?;
    let grid = RecordGrid::uniform(cfg.t_end, cfg.record_intervals)?;
    let red = reduced_evolve(&system, &spec, &cfg.model, cfg.t_end, cfg.h, &grid, None)?;
    let mut rec = TrajectoryRecorder::default();
    euler_evolve(&p0, &spec, &cfg.model, cfg.t_end, cfg.h, &grid, &mut rec)?;
    let mut sup = 0.0f64;
    for (i, w) in rec.snapshots.iter().enumerate() {
        let (w1s, w3s, a) = (&red.trajectory.w1[i], &red.trajectory.w3[i], &red.trajectory.a[i]);
        for j1 in 0..w.n1() {
            let c = j1 / r2;
            let d: f64 = w.w1.row(j1).iter().zip(w1s.row(c)).map(|(p, q)| (p - q).powi(2)).sum();
            sup = sup.max(d.sqrt());
            for j2 in 0..w.n2() {
                let u2 = p0.weights.w2[[j1, j2]];
                sup = sup.max((w.w2[[j1, j2]] - (u2 - a[[c, j2 % r3]])).abs());
            }
        }
        for j2 in 0..w.n2() {
            sup = sup.max((w.w3[j2] - w3s[j2 % r3]).abs());
        }
    }
    Ok(sup)
}

/// Euler vs Picard on an `m1 × m2` embedding draw; reduced vs Latin particles.
pub fn crossval(cfg: &ExperimentConfig) -> Result<Vec<CrossvalReport>> {
    cfg.validate()?;
    if cfg.m1 > 16 || cfg.m2 > 16 || cfg.t_end > 1.0 {
        return Err(Error::Config("crossval is meant for small instances (m ≤ 16, T ≤ 1)".into()));
    }
    let spec = cfg.data.load()?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let p0 = ParticleSystem::new(cfg.embedding(spec.dim(), seed)?.sample(cfg.m1, cfg.m2)?);
        let picard = picard_solve(
            &p0,
            &spec,
            &cfg.model,
            cfg.t_end,
            cfg.picard_grid,
            cfg.picard_tol,
            cfg.picard_max_iter,
        )?;
        let grid = RecordGrid {
            times: picard.times.clone(),
        };
        let mut rec = TrajectoryRecorder::default();
        euler_evolve(&p0, &spec, &cfg.model, cfg.t_end, cfg.h, &grid, &mut rec)?;
        let ep = trajectory_distance(&rec.snapshots, &picard.trajectory);
        let movement = trajectory_distance(&rec.snapshots, &vec![p0.weights.clone(); rec.snapshots.len()]);
        let rl = reduced_vs_latin(cfg, spec.dim(), seed)?;
        let tail = &picard.ratios[picard.ratios.len() / 2..];
        reports.push(CrossvalReport {
            seed,
            pairs: vec![
                PairCheck {
                    name: "euler/picard",
                    distance: ep,
                    tolerance: 5.0 * (cfg.h + cfg.t_end / cfg.picard_grid as f64),
                },
                PairCheck {
                    name: "reduced/particle",
                    distance: rl,
                    tolerance: 10.0 * cfg.h,
                },
            ],
            picard_iterations: picard.iterations,
            tail_ratio: tail.iter().copied().fold(0.0, f64::max),
            picard_ratios: picard.ratios,
            movement,
        });
    }
    Ok(reports)
}
