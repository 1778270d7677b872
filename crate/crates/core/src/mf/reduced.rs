//! Reduced dynamics under i.i.d. initialization.
//!
//! With `w1⁰ = u1 ~ ρ1`, `w2⁰ = u2 ~ ρ2`, `w3⁰ = u3 ~ ρ3` all independent, the
//! MF flow keeps the form
//!
//! ```text
//! w1(t, C1)     = w1*(t, u1)
//! w3(t, C2)     = w3*(t, u3)
//! w2(t, C1, C2) = u2 − A(t, u1, u3),   ∂t A = ξ2 E_Z[Δ2^H*(t, Z, u3) φ1(<w1*(t, u1), X>)]
//! ```
//!
//! so `ρ2` enters only through its mean. The `u1` and `u3` laws are carried
//! by weighted point sets (quadrature or uniform atoms); zero-weight points are
//! probes that follow the flow without feeding back into it.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use crate::data::DataSpec;
use crate::error::{Error, Result};
use crate::math::ModelSpec;
use crate::net::{RecordGrid, Weights};

use super::{ParticleSystem, PriorBoundCertificate, MAX_EULER_STEP};

/// Default cap on stored Δ2^H* history (256 MiB).
pub const DEFAULT_HISTORY_LIMIT: usize = 256 << 20;

/// Weighted point sets standing for ρ1 and ρ3, plus the moments of ρ2 that matter.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    pub u1: Array2<f64>,
    pub omega1: Array1<f64>,
    pub u3: Array1<f64>,
    pub omega3: Array1<f64>,
    pub mean_u2: f64,
    /// ess-sup |u2|, used by the a priori bound check.
    pub sup_u2: f64,
}

fn check_weights(w: &Array1<f64>, what: &str) -> Result<()> {
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Config(format!("{what} weights must be finite and non-negative")));
    }
    let total: f64 = w.sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::Config(format!("{what} weights sum to {total}, expected 1")));
    }
    Ok(())
}

impl ReducedSystem {
    pub fn new(
        u1: Array2<f64>,
        omega1: Array1<f64>,
        u3: Array1<f64>,
        omega3: Array1<f64>,
        mean_u2: f64,
        sup_u2: f64,
    ) -> Result<Self> {
        if u1.nrows() != omega1.len() || u3.len() != omega3.len() || u1.ncols() == 0 || u3.is_empty() {
            return Err(Error::Structural("point sets and weights disagree in length".into()));
        }
        check_weights(&omega1, "u1")?;
        check_weights(&omega3, "u3")?;
        if !mean_u2.is_finite() || !(sup_u2 >= mean_u2.abs()) || !sup_u2.is_finite() {
            return Err(Error::Config(format!("invalid ρ2 moments mean={mean_u2}, sup={sup_u2}")));
        }
        Ok(Self {
            u1: u1.as_standard_layout().to_owned(),
            omega1,
            u3,
            omega3,
            mean_u2,
            sup_u2,
        })
    }

    /// Uniform weights on a grid of `u1` points and on the `ρ3` atoms; `ρ2` given by its atoms.
    pub fn from_atoms(u_grid: &Array2<f64>, rho2: &[f64], rho3: &[f64]) -> Result<Self> {
        if rho2.is_empty() || rho3.is_empty() || u_grid.nrows() == 0 {
            return Err(Error::Config("atom lists must be nonempty".into()));
        }
        let c = u_grid.nrows();
        let mean = rho2.iter().sum::<f64>() / rho2.len() as f64;
        let sup = rho2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self::new(
            u_grid.clone(),
            Array1::from_elem(c, 1.0 / c as f64),
            Array1::from_vec(rho3.to_vec()),
            Array1::from_elem(rho3.len(), 1.0 / rho3.len() as f64),
            mean,
            sup,
        )
    }

    /// Appends zero-weight probe points; returns their offsets in the `u1` and `u3` sets.
    pub fn add_probes(&mut self, probes1: &Array2<f64>, probes3: &[f64]) -> Result<(usize, usize)> {
        if probes1.ncols() != self.u1.ncols() {
            return Err(Error::Structural(format!(
                "probe dimension {} does not match {}",
                probes1.ncols(),
                self.u1.ncols()
            )));
        }
        let off = (self.u1.nrows(), self.u3.len());
        self.u1 = ndarray::concatenate![Axis(0), self.u1, *probes1].as_standard_layout().to_owned();
        self.omega1 = ndarray::concatenate![Axis(0), self.omega1, Array1::zeros(probes1.nrows())];
        self.u3 = ndarray::concatenate![Axis(0), self.u3, ArrayView1::from(probes3)];
        self.omega3 = ndarray::concatenate![Axis(0), self.omega3, Array1::zeros(probes3.len())];
        Ok(off)
    }

    pub fn len1(&self) -> usize {
        self.u1.nrows()
    }

    pub fn len3(&self) -> usize {
        self.u3.len()
    }

    fn active(w: &Array1<f64>) -> usize {
        w.iter().rposition(|v| *v != 0.0).map_or(0, |i| i + 1)
    }
}

/// State of the reduced flow at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub t: f64,
    pub w1: Array2<f64>,
    pub w3: Array1<f64>,
    /// `A(t, u1, u3)`, so that `w2 = u2 − A`.
    pub a: Array2<f64>,
}

/// Data atoms in matrix form.
#[derive(Debug, Clone)]
struct AtomMatrix {
    x: Array2<f64>,
    y: Array1<f64>,
    p: Array1<f64>,
}

impl AtomMatrix {
    fn new(spec: &DataSpec) -> Self {
        let (m, d) = (spec.len(), spec.dim());
        let atoms = spec.atoms();
        Self {
            x: Array2::from_shape_fn((m, d), |(k, i)| atoms[k].x[i]),
            y: atoms.iter().map(|a| a.y).collect(),
            p: atoms.iter().map(|a| a.p).collect(),
        }
    }
}

/// Resumable Euler integration of the reduced flow.
#[derive(Debug, Clone)]
pub struct ReducedRunner<'a> {
    pub system: &'a ReducedSystem,
    pub state: ReducedState,
    pub certificate: PriorBoundCertificate,
    pub steps: u64,
    /// Δ2^H*(t_k, z, u3) per step (atoms × u3 points), when enabled.
    pub history: Option<Vec<Array2<f64>>>,
    model: &'a ModelSpec,
    data: AtomMatrix,
    h: f64,
    core1: usize,
    core3: usize,
}

impl<'a> ReducedRunner<'a> {
    pub fn new(system: &'a ReducedSystem, spec: &DataSpec, model: &'a ModelSpec, h: f64) -> Result<Self> {
        if !(h > 0.0) || h > MAX_EULER_STEP {
            return Err(Error::Config(format!(
                "Euler step must lie in (0, {MAX_EULER_STEP}], got {h}"
            )));
        }
        if spec.dim() != system.u1.ncols() {
            return Err(Error::Structural(format!(
                "data dimension {} does not match u1 dimension {}",
                spec.dim(),
                system.u1.ncols()
            )));
        }
        let sup3 = system.u3.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut certificate = PriorBoundCertificate::from_sup(system.sup_u2.max(sup3), model);
        certificate.observe_sups(system.sup_u2, sup3);
        Ok(Self {
            state: ReducedState {
                t: 0.0,
                w1: system.u1.clone(),
                w3: system.u3.clone(),
                a: Array2::zeros((system.len1(), system.len3())),
            },
            certificate,
            steps: 0,
            history: None,
            model,
            data: AtomMatrix::new(spec),
            h,
            core1: ReducedSystem::active(&system.omega1),
            core3: ReducedSystem::active(&system.omega3),
            system,
        })
    }

    /// Keeps Δ2^H* at every step, refusing if `steps` of it would exceed `limit` bytes.
    pub fn enable_history(&mut self, steps: usize, limit: usize) -> Result<()> {
        let needed = steps
            .saturating_mul(self.data.p.len())
            .saturating_mul(self.system.len3())
            .saturating_mul(std::mem::size_of::<f64>());
        if needed > limit {
            return Err(Error::MemoryGuard { needed, limit });
        }
        self.history = Some(Vec::with_capacity(steps));
        Ok(())
    }

    pub fn t(&self) -> f64 {
        self.state.t
    }

    fn step(&mut self, dt: f64) -> Result<()> {
        let model = self.model;
        let sys = self.system;
        let st = &mut self.state;
        let [xi1, xi2, xi3] = model.schedule.at(st.t);
        let data = &self.data;
        let m = data.p.len();
        let (c1, c3) = (self.core1, self.core3);

        // First layer on every atom: M × U1.
        let pre = data.x.dot(&st.w1.t());
        let a1 = pre.mapv(|u| model.phi1.value(u));
        let a1p = pre.mapv(|u| model.phi1.deriv(u));
        let om1 = sys.omega1.slice(s![..c1]);
        let s1 = a1.slice(s![.., ..c1]).dot(&om1);
        let aw = &a1.slice(s![.., ..c1]) * &om1;
        let mut h2 = aw.dot(&st.a.slice(s![..c1, ..]));
        for (mut row, s) in h2.rows_mut().into_iter().zip(s1.iter()) {
            row.mapv_inplace(|v| sys.mean_u2 * s - v);
        }
        let a2 = h2.mapv(|u| model.phi2.value(u));
        let a2p = h2.mapv(|u| model.phi2.deriv(u));
        let om3w3 = &sys.omega3 * &st.w3;
        let h3 = a2.dot(&om3w3);
        let mut g = Array1::zeros(m);
        for k in 0..m {
            let yhat = model.phi3.value(h3[k]);
            g[k] = model.loss.d2(data.y[k], yhat) * model.phi3.deriv(h3[k]);
            if !g[k].is_finite() {
                return Err(Error::NonFinite {
                    what: "reduced loss sensitivity".into(),
                    index: k,
                });
            }
        }
        let mut d2h = a2p;
        for (k, mut row) in d2h.rows_mut().into_iter().enumerate() {
            row.zip_mut_with(&st.w3, |v, w| *v *= g[k] * w);
        }
        let pg = &data.p * &g;
        let d3 = a2.t().dot(&pg);

        let mut pa1 = a1;
        for (mut row, p) in pa1.rows_mut().into_iter().zip(data.p.iter()) {
            row *= *p;
        }
        let da = pa1.t().dot(&d2h);

        let om3 = sys.omega3.slice(s![..c3]);
        let sd = d2h.slice(s![.., ..c3]).dot(&om3);
        let dw = &d2h.slice(s![.., ..c3]) * &om3;
        // c[u, k] = E[u2] Σ_v ω3 Δ2^H − Σ_v ω3 Δ2^H A[u, v]
        let mut c = st.a.slice(s![.., ..c3]).dot(&dw.t());
        for (mut col, s) in c.columns_mut().into_iter().zip(sd.iter()) {
            col.mapv_inplace(|v| sys.mean_u2 * s - v);
        }
        // B[u, k] = p_k c[u, k] φ1'(<w1*(u), x_k>)
        let mut b = c;
        b.zip_mut_with(&a1p.t(), |v, d| *v *= d);
        for (mut col, p) in b.columns_mut().into_iter().zip(data.p.iter()) {
            col *= *p;
        }
        let d1 = b.dot(&data.x);

        if let Some(hist) = self.history.as_mut() {
            hist.push(d2h);
        }
        st.w1.scaled_add(-dt * xi1, &d1);
        st.w3.scaled_add(-dt * xi3, &d3);
        st.a.scaled_add(dt * xi2, &da);
        if let Some(i) = st.w1.iter().chain(st.w3.iter()).chain(st.a.iter()).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "reduced state".into(),
                index: i,
            });
        }
        st.t += dt;
        self.steps += 1;
        let sup3 = st.w3.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sup_a = st.a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.certificate.observe_sups(sys.sup_u2 + sup_a, sup3);
        self.certificate.check(st.t, self.h)
    }

    pub fn advance_to(&mut self, target: f64) -> Result<()> {
        let tiny = 1e-9 * self.h;
        while target - self.state.t > tiny {
            let dt = self.h.min(target - self.state.t);
            self.step(dt)?;
        }
        if (target - self.state.t).abs() <= tiny {
            self.state.t = target;
        }
        Ok(())
    }
}

/// Recorded `w1*`, `w3*` and `A` on the recording grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedTrajectory {
    pub times: Vec<f64>,
    pub w1: Vec<Array2<f64>>,
    pub w3: Vec<Array1<f64>>,
    pub a: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct ReducedOutcome {
    pub trajectory: ReducedTrajectory,
    pub state: ReducedState,
    pub certificate: PriorBoundCertificate,
    pub history: Option<Vec<Array2<f64>>>,
}

/// Euler integration of the reduced flow with step `h`.
///
/// When `history_limit` is set, Δ2^H* is stored at every step, subject to that byte limit.
pub fn reduced_evolve(
    system: &ReducedSystem,
    spec: &DataSpec,
    model: &ModelSpec,
    t_end: f64,
    h: f64,
    grid: &RecordGrid,
    history_limit: Option<usize>,
) -> Result<ReducedOutcome> {
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::Domain(format!("horizon must be non-negative, got {t_end}")));
    }
    let mut run = ReducedRunner::new(system, spec, model, h)?;
    if let Some(limit) = history_limit {
        run.enable_history((t_end / h).ceil() as usize + 1, limit)?;
    }
    let mut traj = ReducedTrajectory {
        times: Vec::new(),
        w1: Vec::new(),
        w3: Vec::new(),
        a: Vec::new(),
    };
    for &t in grid.times.iter().filter(|t| **t <= t_end + 1e-12) {
        run.advance_to(t.max(run.t()))?;
        traj.times.push(run.t());
        traj.w1.push(run.state.w1.clone());
        traj.w3.push(run.state.w3.clone());
        traj.a.push(run.state.a.clone());
    }
    run.advance_to(t_end)?;
    Ok(ReducedOutcome {
        trajectory: traj,
        certificate: run.certificate,
        history: run.history.take(),
        state: run.state,
    })
}

/// Particle system that realizes a uniform-atom [`ReducedSystem`] exactly.
///
/// First-layer index `j1 = c·R2 + a'` carries `u_grid[c]`, second-layer index
/// `j2 = a''·R3 + b` carries `ρ3[b]`, and `w2⁰(j1, j2) = ρ2[(a' + a'') mod R2]`,
/// so every row and every column restricted to one `ρ3` atom sees each `ρ2`
/// atom exactly once.
pub fn latin_particle_system(u_grid: &Array2<f64>, rho2: &[f64], rho3: &[f64]) -> Result<ParticleSystem> {
    let (c, r2, r3) = (u_grid.nrows(), rho2.len(), rho3.len());
    if c == 0 || r2 == 0 || r3 == 0 {
        return Err(Error::Config("atom lists must be nonempty".into()));
    }
    let m1 = c * r2;
    let m2 = r2 * r3;
    let w1 = Array2::from_shape_fn((m1, u_grid.ncols()), |(j1, i)| u_grid[[j1 / r2, i]]);
    let w2 = Array2::from_shape_fn((m1, m2), |(j1, j2)| rho2[(j1 % r2 + j2 / r3) % r2]);
    let w3 = Array1::from_shape_fn(m2, |j2| rho3[j2 % r3]);
    Ok(ParticleSystem::new(Weights::new(w1, w2, w3)?))
}
