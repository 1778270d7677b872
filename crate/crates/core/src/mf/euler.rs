use crate::data::DataSpec;
use crate::error::{Error, Result};
use crate::math::ModelSpec;
use crate::net::{apply_update, RecordGrid, Recorder};

use super::{check_data, drift_into, DriftWorkspace, ParticleSystem, PriorBoundCertificate};

/// Step sizes above this are rejected.
pub const MAX_EULER_STEP: f64 = 0.1;

/// Resumable explicit Euler integration of the particle ODEs.
#[derive(Debug, Clone)]
pub struct EulerRunner<'a> {
    pub system: ParticleSystem,
    pub certificate: PriorBoundCertificate,
    pub steps: u64,
    spec: &'a DataSpec,
    model: &'a ModelSpec,
    h: f64,
    buf: DriftWorkspace,
}

impl<'a> EulerRunner<'a> {
    pub fn new(p0: &ParticleSystem, spec: &'a DataSpec, model: &'a ModelSpec, h: f64) -> Result<Self> {
        if !(h > 0.0) || h > MAX_EULER_STEP {
            return Err(Error::Config(format!(
                "Euler step must lie in (0, {MAX_EULER_STEP}], got {h}"
            )));
        }
        check_data(&p0.weights, spec)?;
        p0.weights.check_finite()?;
        let w = &p0.weights;
        Ok(Self {
            certificate: PriorBoundCertificate::start(w, model),
            buf: DriftWorkspace::new(w.n1(), w.n2(), w.dim()),
            system: p0.clone(),
            steps: 0,
            spec,
            model,
            h,
        })
    }

    pub fn t(&self) -> f64 {
        self.system.t
    }

    /// One step of size `dt` from the current time.
    fn step(&mut self, dt: f64) -> Result<()> {
        let t = self.system.t;
        let [xi1, xi2, xi3] = self.model.schedule.at(t);
        if xi1 != 0.0 || xi2 != 0.0 || xi3 != 0.0 {
            drift_into(&self.system.weights, self.spec, self.model, &mut self.buf)?;
            let f = &self.buf.field;
            apply_update(&mut self.system.weights, &f.d1, &f.d2, &f.d3, [dt * xi1, dt * xi2, dt * xi3])?;
        }
        self.system.t = t + dt;
        self.steps += 1;
        self.certificate.observe(&self.system.weights);
        self.certificate.check(self.system.t, self.h)
    }

    /// Integrates up to `target`, shortening the last step to land on it.
    pub fn advance_to(&mut self, target: f64) -> Result<()> {
        let tiny = 1e-9 * self.h;
        while target - self.system.t > tiny {
            let dt = self.h.min(target - self.system.t);
            self.step(dt)?;
        }
        if (target - self.system.t).abs() <= tiny {
            self.system.t = target;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EulerOutcome {
    pub system: ParticleSystem,
    pub certificate: PriorBoundCertificate,
    pub steps: u64,
}

/// Explicit Euler for the particle ODEs, `P ← P − h ξ(t) ⊙ drift(P)`.
///
/// Every step is checked against the a priori bound certificate.
pub fn euler_evolve(
    p0: &ParticleSystem,
    spec: &DataSpec,
    model: &ModelSpec,
    t_end: f64,
    h: f64,
    grid: &RecordGrid,
    recorder: &mut dyn Recorder,
) -> Result<EulerOutcome> {
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::Domain(format!("horizon must be non-negative, got {t_end}")));
    }
    let mut run = EulerRunner::new(p0, spec, model, h)?;
    for &t in grid.times.iter().filter(|t| **t <= t_end + 1e-12) {
        run.advance_to(t.max(run.t()))?;
        recorder.record(run.t(), &run.system.weights)?;
    }
    run.advance_to(t_end)?;
    run.certificate.check(t_end, h)?;
    Ok(EulerOutcome {
        system: run.system,
        certificate: run.certificate,
        steps: run.steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_grid_task, Target};
    use crate::math::ScheduleSpec;
    use crate::net::{NullRecorder, TrajectoryRecorder, Weights};
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(seed: u64, m: usize) -> ParticleSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ParticleSystem::new(Weights {
            w1: Array2::from_shape_fn((m, 2), |_| rng.gen_range(-1.0..1.0)),
            w2: Array2::from_shape_fn((m, m), |_| rng.gen_range(-1.0..1.0)),
            w3: Array1::from_shape_fn(m, |_| rng.gen_range(-1.0..1.0)),
        })
    }

    fn sup_diff(a: &Weights, b: &Weights) -> f64 {
        a.w1.iter()
            .chain(a.w2.iter())
            .chain(a.w3.iter())
            .zip(b.w1.iter().chain(b.w2.iter()).chain(b.w3.iter()))
            .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
    }

    #[test]
    fn frozen_schedule_keeps_initial_state() {
        let p0 = system(1, 4);
        let spec = make_grid_task(4, Target::Sin).unwrap();
        let model = ModelSpec::default().with_schedule(ScheduleSpec::zero());
        let grid = RecordGrid::uniform(1.0, 4).unwrap();
        let out = euler_evolve(&p0, &spec, &model, 1.0, 0.05, &grid, &mut NullRecorder).unwrap();
        assert_eq!(out.system.weights, p0.weights);
        assert!((out.system.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_guard() {
        let p0 = system(1, 2);
        let spec = make_grid_task(2, Target::Sin).unwrap();
        let grid = RecordGrid::uniform(1.0, 1).unwrap();
        let r = euler_evolve(&p0, &spec, &ModelSpec::default(), 1.0, 0.2, &grid, &mut NullRecorder);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn records_every_grid_time() {
        let p0 = system(2, 3);
        let spec = make_grid_task(3, Target::Sin).unwrap();
        let grid = RecordGrid::uniform(0.5, 5).unwrap();
        let mut rec = TrajectoryRecorder::default();
        euler_evolve(&p0, &spec, &ModelSpec::default(), 0.5, 0.01, &grid, &mut rec).unwrap();
        assert_eq!(rec.times.len(), 6);
        for (a, b) in rec.times.iter().zip(&grid.times) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(rec.snapshots[0], p0.weights);
    }

    #[test]
    fn first_order_self_convergence() {
        let p0 = system(3, 6);
        let spec = make_grid_task(5, Target::Sin).unwrap();
        let model = ModelSpec::default();
        let grid = RecordGrid::uniform(1.0, 1).unwrap();
        let run = |h: f64| {
            euler_evolve(&p0, &spec, &model, 1.0, h, &grid, &mut NullRecorder)
                .unwrap()
                .system
                .weights
        };
        let hs = [0.02, 0.01, 0.005, 0.0025];
        let sol: Vec<Weights> = hs.iter().map(|h| run(*h)).collect();
        let c: Vec<f64> = (0..3).map(|i| sup_diff(&sol[i], &sol[i + 1]) / hs[i]).collect();
        for w in c.windows(2) {
            assert!((w[0] / w[1] - 1.0).abs() < 0.2, "{c:?}");
        }
    }

    #[test]
    fn certificate_holds_and_w3_stays_in_envelope() {
        let p0 = system(4, 5);
        let spec = make_grid_task(6, Target::XorLike).unwrap();
        let model = ModelSpec::default();
        let grid = RecordGrid::uniform(2.0, 4).unwrap();
        let out = euler_evolve(&p0, &spec, &model, 2.0, 0.01, &grid, &mut NullRecorder).unwrap();
        let c = out.certificate;
        assert!(c.holds());
        assert!(c.observed_w3 <= p0.weights.sup_norm() + c.k * 2.0);
    }
}
