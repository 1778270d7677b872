//! The mean-field limit realized through particle ODEs.
//!
//! A [`ParticleSystem`] stands for samples of the neuronal ensemble; the
//! expectations over neurons become uniform particle averages and the data
//! expectation is exact over the atoms of a [`DataSpec`]. Three integrators
//! discretize the same flow: [`euler_evolve`], [`picard_solve`] and, for
//! i.i.d. initializations, [`reduced_evolve`].

mod euler;
mod picard;
mod reduced;

pub use euler::{euler_evolve, EulerOutcome, EulerRunner, MAX_EULER_STEP};
pub use picard::{picard_solve, trajectory_distance, PicardOutcome};
pub use reduced::{
    latin_particle_system, reduced_evolve, ReducedOutcome, ReducedRunner, ReducedState, ReducedSystem,
    ReducedTrajectory, DEFAULT_HISTORY_LIMIT,
};

use ndarray::{Array1, Array2};

use crate::data::DataSpec;
use crate::error::{Error, Result};
use crate::math::{BoundConstants, ModelSpec};
use crate::net::{accumulate_gradient, Weights, Workspace};

/// Particle discretization of the MF state at continuous time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    pub weights: Weights,
    pub t: f64,
}

impl ParticleSystem {
    pub fn new(weights: Weights) -> Self {
        Self { weights, t: 0.0 }
    }

    pub fn m1(&self) -> usize {
        self.weights.n1()
    }

    pub fn m2(&self) -> usize {
        self.weights.n2()
    }
}

/// The drifts Δ1, Δ2, Δ3 at every particle (without schedule factors).
#[derive(Debug, Clone, PartialEq)]
pub struct DriftField {
    pub d1: Array2<f64>,
    pub d2: Array2<f64>,
    pub d3: Array1<f64>,
}

impl DriftField {
    pub fn zeros(m1: usize, m2: usize, d: usize) -> Self {
        Self {
            d1: Array2::zeros((m1, d)),
            d2: Array2::zeros((m1, m2)),
            d3: Array1::zeros(m2),
        }
    }

    fn fill_zero(&mut self) {
        self.d1.fill(0.0);
        self.d2.fill(0.0);
        self.d3.fill(0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.d1.iter().chain(self.d2.iter()).chain(self.d3.iter()).all(|v| *v == 0.0)
    }
}

/// Reusable buffers for drift evaluation.
#[derive(Debug, Clone)]
pub(crate) struct DriftWorkspace {
    ws: Workspace,
    pub(crate) field: DriftField,
}

impl DriftWorkspace {
    pub(crate) fn new(m1: usize, m2: usize, d: usize) -> Self {
        Self {
            ws: Workspace::new(m1, m2),
            field: DriftField::zeros(m1, m2, d),
        }
    }
}

pub(crate) fn check_data(w: &Weights, spec: &DataSpec) -> Result<()> {
    if spec.dim() != w.dim() {
        return Err(Error::Structural(format!(
            "data dimension {} does not match particle dimension {}",
            spec.dim(),
            w.dim()
        )));
    }
    Ok(())
}

/// Evaluates the drift into `buf.field`.
pub(crate) fn drift_into(w: &Weights, spec: &DataSpec, model: &ModelSpec, buf: &mut DriftWorkspace) -> Result<()> {
    buf.field.fill_zero();
    let f = &mut buf.field;
    for (k, atom) in spec.atoms().iter().enumerate() {
        accumulate_gradient(w, &atom.x, atom.y, model, atom.p, &mut buf.ws, &mut f.d1, &mut f.d2, &mut f.d3)
            .map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { what, index: k },
                other => other,
            })?;
    }
    Ok(())
}

/// Exact-expectation drift of the particle ODEs.
pub fn drift(p: &ParticleSystem, spec: &DataSpec, model: &ModelSpec) -> Result<DriftField> {
    check_data(&p.weights, spec)?;
    let w = &p.weights;
    let mut buf = DriftWorkspace::new(w.n1(), w.n2(), w.dim());
    drift_into(w, spec, model, &mut buf)?;
    Ok(buf.field)
}

/// A priori envelopes on sup|w3| and sup|w2| and what a run actually reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorBoundCertificate {
    pub t: f64,
    pub w0_norm: f64,
    pub k: f64,
    pub bound_w3: f64,
    pub bound_w2: f64,
    pub observed_w3: f64,
    pub observed_w2: f64,
}

impl PriorBoundCertificate {
    pub fn start(w0: &Weights, model: &ModelSpec) -> Self {
        let mut c = Self::from_sup(w0.sup_norm(), model);
        c.observe(w0);
        c
    }

    /// Certificate for an initial state with ⦀W⦀_0 = `w0_norm`.
    pub fn from_sup(w0_norm: f64, model: &ModelSpec) -> Self {
        Self {
            t: 0.0,
            w0_norm,
            k: BoundConstants::from_model(model).k,
            bound_w3: w0_norm,
            bound_w2: w0_norm,
            observed_w3: 0.0,
            observed_w2: 0.0,
        }
    }

    /// Envelopes at time `t`: ⦀W⦀_0 + K t and ⦀W⦀_0 + K t (⦀W⦀_0 + K t).
    pub fn bounds_at(&self, t: f64) -> (f64, f64) {
        let b3 = self.w0_norm + self.k * t;
        (b3, self.w0_norm + self.k * t * b3)
    }

    pub(crate) fn observe(&mut self, w: &Weights) {
        let s3 = w.w3.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let s2 = w.w2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.observe_sups(s2, s3);
    }

    pub(crate) fn observe_sups(&mut self, sup_w2: f64, sup_w3: f64) {
        self.observed_w3 = self.observed_w3.max(sup_w3);
        self.observed_w2 = self.observed_w2.max(sup_w2);
    }

    /// Advances the certificate to time `t` and checks it with slack `10 h K`.
    pub(crate) fn check(&mut self, t: f64, h: f64) -> Result<()> {
        let (b3, b2) = self.bounds_at(t);
        self.t = t;
        self.bound_w3 = b3;
        self.bound_w2 = b2;
        let slack = 10.0 * h * self.k + 1e-12 * (1.0 + b2);
        if self.observed_w3 > b3 + slack {
            return Err(Error::IntegratorStep {
                t,
                what: "sup|w3|",
                observed: self.observed_w3,
                bound: b3,
            });
        }
        if self.observed_w2 > b2 + slack {
            return Err(Error::IntegratorStep {
                t,
                what: "sup|w2|",
                observed: self.observed_w2,
                bound: b2,
            });
        }
        Ok(())
    }

    pub fn holds(&self) -> bool {
        self.observed_w3 <= self.bound_w3 + 1e-12 && self.observed_w2 <= self.bound_w2 + 1e-12
    }
}
