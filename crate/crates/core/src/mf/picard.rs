use crate::data::DataSpec;
use crate::error::{Error, Result};
use crate::math::ModelSpec;
use crate::net::Weights;

use super::{check_data, drift_into, DriftField, DriftWorkspace, ParticleSystem, PriorBoundCertificate};

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub times: Vec<f64>,
    pub trajectory: Vec<Weights>,
    pub iterations: usize,
    /// ‖W^(k) − W^(k−1)‖_T for every iteration.
    pub distances: Vec<f64>,
    /// Successive distance ratios.
    pub ratios: Vec<f64>,
    pub certificate: PriorBoundCertificate,
}

/// The pairwise trajectory distance ‖·‖_T: sup over grid times of the max of
/// the row-Euclidean w1 deviation and the sup deviations of w2 and w3.
pub fn trajectory_distance(a: &[Weights], b: &[Weights]) -> f64 {
    a.iter().zip(b).map(|(x, y)| snapshot_distance(x, y)).fold(0.0, f64::max)
}

pub(crate) fn snapshot_distance(x: &Weights, y: &Weights) -> f64 {
    let mut m = 0.0f64;
    for (r, s) in x.w1.rows().into_iter().zip(y.w1.rows()) {
        let d2: f64 = r.iter().zip(s.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
        m = m.max(d2.sqrt());
    }
    for (p, q) in x.w2.iter().zip(y.w2.iter()) {
        m = m.max((p - q).abs());
    }
    for (p, q) in x.w3.iter().zip(y.w3.iter()) {
        m = m.max((p - q).abs());
    }
    m
}

/// Fixed point of `F_{W(0)}(W)(t) = W(0) − ∫_0^t ξ(s) ⊙ drift(W(s)) ds` on a
/// uniform grid of `grid_n + 1` times, with trapezoidal quadrature.
pub fn picard_solve(
    p0: &ParticleSystem,
    spec: &DataSpec,
    model: &ModelSpec,
    t_end: f64,
    grid_n: usize,
    tol: f64,
    max_iter: usize,
) -> Result<PicardOutcome> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    if grid_n == 0 || max_iter == 0 {
        return Err(Error::Config("Picard needs grid_n ≥ 1 and max_iter ≥ 1".into()));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::Domain(format!("horizon must be non-negative, got {t_end}")));
    }
    check_data(&p0.weights, spec)?;
    let w0 = &p0.weights;
    let dt = t_end / grid_n as f64;
    let times: Vec<f64> = (0..=grid_n).map(|i| i as f64 * dt).collect();
    let mut traj = vec![w0.clone(); grid_n + 1];
    let mut buf = DriftWorkspace::new(w0.n1(), w0.n2(), w0.dim());
    let mut scaled = vec![DriftField::zeros(w0.n1(), w0.n2(), w0.dim()); grid_n + 1];
    let mut distances = Vec::new();
    let mut ratios = Vec::new();

    for iteration in 1..=max_iter {
        for (i, (w, t)) in traj.iter().zip(&times).enumerate() {
            let [xi1, xi2, xi3] = model.schedule.at(*t);
            drift_into(w, spec, model, &mut buf)?;
            let s = &mut scaled[i];
            s.d1.assign(&buf.field.d1);
            s.d1 *= xi1;
            s.d2.assign(&buf.field.d2);
            s.d2 *= xi2;
            s.d3.assign(&buf.field.d3);
            s.d3 *= xi3;
        }
        let mut next = Vec::with_capacity(grid_n + 1);
        let mut cur = w0.clone();
        next.push(cur.clone());
        for i in 0..grid_n {
            let (a, b) = (&scaled[i], &scaled[i + 1]);
            cur.w1.scaled_add(-0.5 * dt, &a.d1);
            cur.w1.scaled_add(-0.5 * dt, &b.d1);
            cur.w2.scaled_add(-0.5 * dt, &a.d2);
            cur.w2.scaled_add(-0.5 * dt, &b.d2);
            cur.w3.scaled_add(-0.5 * dt, &a.d3);
            cur.w3.scaled_add(-0.5 * dt, &b.d3);
            cur.check_finite()?;
            next.push(cur.clone());
        }
        let dist = trajectory_distance(&next, &traj);
        if let Some(prev) = distances.last() {
            ratios.push(if *prev > 0.0 { dist / prev } else { 0.0 });
        }
        distances.push(dist);
        traj = next;
        if dist < tol {
            let mut certificate = PriorBoundCertificate::start(w0, model);
            for w in &traj {
                certificate.observe(w);
            }
            certificate.check(t_end, dt)?;
            return Ok(PicardOutcome {
                times,
                trajectory: traj,
                iterations: iteration,
                distances,
                ratios,
                certificate,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        last_distance: *distances.last().unwrap_or(&f64::NAN),
        last_ratio: *ratios.last().unwrap_or(&f64::NAN),
    })
}
