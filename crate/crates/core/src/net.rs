//! The width-(n1, n2) three-layer network and its one-pass SGD.
//!
//! Forward pass, with the mean-field `1/n` scaling:
//!
//! ```text
//! H2(x, j2) = (1/n1) Σ_j1 w2[j1, j2] φ1(<w1[j1], x>)
//! H3(x)     = (1/n2) Σ_j2 w3[j2] φ2(H2(x, j2))
//! ŷ(x)      = φ3(H3(x))
//! ```
//!
//! The gradients `Grad_i` are those of the per-sample loss with the `1/n`
//! factors removed, which is what makes the SGD step `ε·ξ(kε)·Grad` match
//! the continuous-time MF drift at time `kε`.

use ndarray::{Array1, Array2};

use crate::data::{DataSpec, DataStream};
use crate::error::{Error, Result};
use crate::math::ModelSpec;

/// The three weight arrays shared by the finite network and particle systems.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// First layer, one row per first-layer neuron (n1 × d).
    pub w1: Array2<f64>,
    /// Second layer (n1 × n2).
    pub w2: Array2<f64>,
    /// Third layer (n2).
    pub w3: Array1<f64>,
}

impl Weights {
    pub fn new(w1: Array2<f64>, w2: Array2<f64>, w3: Array1<f64>) -> Result<Self> {
        let w = Self { w1, w2, w3 };
        w.check_shapes()?;
        w.check_finite()?;
        Ok(w)
    }

    pub fn zeros(n1: usize, n2: usize, d: usize) -> Self {
        Self {
            w1: Array2::zeros((n1, d)),
            w2: Array2::zeros((n1, n2)),
            w3: Array1::zeros(n2),
        }
    }

    pub fn n1(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n2(&self) -> usize {
        self.w3.len()
    }

    pub fn dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (n1, n2) = (self.w1.nrows(), self.w3.len());
        if n1 == 0 || n2 == 0 || self.w1.ncols() == 0 {
            return Err(Error::Structural("widths and input dimension must be positive".into()));
        }
        if self.w2.dim() != (n1, n2) {
            return Err(Error::Structural(format!(
                "w2 is {:?}, expected ({n1}, {n2})",
                self.w2.dim()
            )));
        }
        if !self.w1.is_standard_layout() || !self.w2.is_standard_layout() {
            return Err(Error::Structural("weights must be row-major contiguous".into()));
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, arr) in [("w1", self.w1.as_slice()), ("w2", self.w2.as_slice())] {
            if let Some(i) = arr.unwrap_or(&[]).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: name.into(),
                    index: i,
                });
            }
        }
        if let Some(i) = self.w3.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "w3".into(),
                index: i,
            });
        }
        Ok(())
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Structural(format!(
                "input has {} coordinates, weights expect {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Top-left `(n1, n2)` block: the neurons indexed by the prefixes `[n1]`, `[n2]`.
    pub fn prefix(&self, n1: usize, n2: usize) -> Result<Weights> {
        if n1 > self.n1() || n2 > self.n2() {
            return Err(Error::Structural(format!(
                "prefix ({n1}, {n2}) exceeds widths ({}, {})",
                self.n1(),
                self.n2()
            )));
        }
        Ok(Weights {
            w1: self.w1.slice(ndarray::s![..n1, ..]).to_owned(),
            w2: self.w2.slice(ndarray::s![..n1, ..n2]).to_owned(),
            w3: self.w3.slice(ndarray::s![..n2]).to_owned(),
        })
    }

    /// max(sup|w2|, sup|w3|).
    pub fn sup_norm(&self) -> f64 {
        let s2 = self.w2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let s3 = self.w3.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        s2.max(s3)
    }

    pub fn forward(&self, x: &[f64], model: &ModelSpec) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut ws = Workspace::new(self.n1(), self.n2());
        let (h3, yhat) = forward_into(self, x, model, &mut ws);
        if !yhat.is_finite() {
            return Err(Error::NonFinite {
                what: "forward output".into(),
                index: 0,
            });
        }
        Ok(ForwardTrace {
            h2: Array1::from_vec(ws.h2.clone()),
            h3,
            yhat,
        })
    }

    /// Exact risk E_Z 𝓛(Y, ŷ(X)).
    pub fn risk(&self, data: &DataSpec, model: &ModelSpec) -> Result<f64> {
        let mut ws = Workspace::new(self.n1(), self.n2());
        let mut risk = 0.0;
        for (k, a) in data.atoms().iter().enumerate() {
            self.check_input(&a.x)?;
            let (_, yhat) = forward_into(self, &a.x, model, &mut ws);
            let v = model.loss.value(a.y, yhat);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "risk".into(),
                    index: k,
                });
            }
            risk += a.p * v;
        }
        Ok(risk)
    }

    /// Predictions ŷ on every data atom.
    pub fn predictions(&self, data: &DataSpec, model: &ModelSpec) -> Result<Vec<f64>> {
        let mut ws = Workspace::new(self.n1(), self.n2());
        data.atoms()
            .iter()
            .map(|a| {
                self.check_input(&a.x)?;
                Ok(forward_into(self, &a.x, model, &mut ws).1)
            })
            .collect()
    }
}

/// Forward quantities at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub h2: Array1<f64>,
    pub h3: f64,
    pub yhat: f64,
}

/// Per-sample gradients `Grad_1`, `Grad_2`, `Grad_3` and the sensitivity `Δ2^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub g3: Array1<f64>,
    pub g2: Array2<f64>,
    pub g1: Array2<f64>,
    pub d2h: Array1<f64>,
}

impl Gradients {
    pub fn zeros(n1: usize, n2: usize, d: usize) -> Self {
        Self {
            g3: Array1::zeros(n2),
            g2: Array2::zeros((n1, n2)),
            g1: Array2::zeros((n1, d)),
            d2h: Array1::zeros(n2),
        }
    }

    pub fn fill_zero(&mut self) {
        self.g3.fill(0.0);
        self.g2.fill(0.0);
        self.g1.fill(0.0);
        self.d2h.fill(0.0);
    }
}

/// Scratch buffers for the forward/backward kernels.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    pub(crate) a1: Vec<f64>,
    pub(crate) a1p: Vec<f64>,
    pub(crate) h2: Vec<f64>,
    pub(crate) a2: Vec<f64>,
    pub(crate) a2p: Vec<f64>,
    pub(crate) d2h: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(n1: usize, n2: usize) -> Self {
        Self {
            a1: vec![0.0; n1],
            a1p: vec![0.0; n1],
            h2: vec![0.0; n2],
            a2: vec![0.0; n2],
            a2p: vec![0.0; n2],
            d2h: vec![0.0; n2],
        }
    }
}

/// Runs the forward pass into `ws`; returns `(H3, ŷ)`.
pub(crate) fn forward_into(w: &Weights, x: &[f64], model: &ModelSpec, ws: &mut Workspace) -> (f64, f64) {
    let (n1, n2, d) = (w.n1(), w.n2(), w.dim());
    let w1 = w.w1.as_slice().expect("row-major w1");
    let w2 = w.w2.as_slice().expect("row-major w2");
    for j1 in 0..n1 {
        let row = &w1[j1 * d..(j1 + 1) * d];
        let pre: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
        let (v, dv) = model.phi1.value_deriv(pre);
        ws.a1[j1] = v;
        ws.a1p[j1] = dv;
    }
    ws.h2.iter_mut().for_each(|v| *v = 0.0);
    let inv_n1 = 1.0 / n1 as f64;
    for j1 in 0..n1 {
        let a = ws.a1[j1] * inv_n1;
        let row = &w2[j1 * n2..(j1 + 1) * n2];
        for (h, r) in ws.h2.iter_mut().zip(row) {
            *h += a * r;
        }
    }
    let mut h3 = 0.0;
    for j2 in 0..n2 {
        let (v, dv) = model.phi2.value_deriv(ws.h2[j2]);
        ws.a2[j2] = v;
        ws.a2p[j2] = dv;
        h3 += w.w3[j2] * v;
    }
    h3 /= n2 as f64;
    (h3, model.phi3.value(h3))
}

/// Adds `weight · Grad(z; w)` into `(g1, g2, g3)` and leaves `Δ2^H` in `ws.d2h`.
///
/// Used with `weight = 1` for a single SGD sample and with `weight = p_k`
/// summed over atoms for the exact-expectation MF drift.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_gradient(
    w: &Weights,
    x: &[f64],
    y: f64,
    model: &ModelSpec,
    weight: f64,
    ws: &mut Workspace,
    g1: &mut Array2<f64>,
    g2: &mut Array2<f64>,
    g3: &mut Array1<f64>,
) -> Result<()> {
    let (n1, n2, d) = (w.n1(), w.n2(), w.dim());
    let (h3, yhat) = forward_into(w, x, model, ws);
    let common = model.loss.d2(y, yhat) * model.phi3.deriv(h3);
    if !common.is_finite() {
        return Err(Error::NonFinite {
            what: "loss sensitivity".into(),
            index: 0,
        });
    }
    for j2 in 0..n2 {
        ws.d2h[j2] = common * w.w3[j2] * ws.a2p[j2];
        g3[j2] += weight * common * ws.a2[j2];
    }
    if common == 0.0 {
        return Ok(());
    }
    let w2 = w.w2.as_slice().expect("row-major w2");
    let g1s = g1.as_slice_mut().expect("row-major g1");
    let g2s = g2.as_slice_mut().expect("row-major g2");
    let inv_n2 = 1.0 / n2 as f64;
    for j1 in 0..n1 {
        let row = &w2[j1 * n2..(j1 + 1) * n2];
        let grow = &mut g2s[j1 * n2..(j1 + 1) * n2];
        let a = weight * ws.a1[j1];
        let mut back = 0.0;
        for ((g, r), dh) in grow.iter_mut().zip(row).zip(&ws.d2h) {
            *g += a * dh;
            back += dh * r;
        }
        let coef = weight * back * inv_n2 * ws.a1p[j1];
        for (g, xi) in g1s[j1 * d..(j1 + 1) * d].iter_mut().zip(x) {
            *g += coef * xi;
        }
    }
    Ok(())
}

/// Backward quantities for one sample `z = (x, y)`.
pub fn backward(w: &Weights, x: &[f64], y: f64, model: &ModelSpec) -> Result<Gradients> {
    w.check_input(x)?;
    let mut ws = Workspace::new(w.n1(), w.n2());
    let mut g = Gradients::zeros(w.n1(), w.n2(), w.dim());
    accumulate_gradient(w, x, y, model, 1.0, &mut ws, &mut g.g1, &mut g.g2, &mut g.g3)?;
    g.d2h = Array1::from_vec(ws.d2h);
    Ok(g)
}

/// Weights at discrete SGD time `step_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub weights: Weights,
    pub step_k: u64,
}

impl NetworkParams {
    pub fn new(weights: Weights) -> Self {
        Self { weights, step_k: 0 }
    }
}

/// Reusable buffers for repeated SGD steps.
#[derive(Debug, Clone)]
pub struct SgdWorkspace {
    ws: Workspace,
    grads: Gradients,
}

impl SgdWorkspace {
    pub fn new(n1: usize, n2: usize, d: usize) -> Self {
        Self {
            ws: Workspace::new(n1, n2),
            grads: Gradients::zeros(n1, n2, d),
        }
    }
}

/// One SGD step on sample `z = (x, y)` with learning rate `eps`.
pub fn sgd_step(params: &NetworkParams, x: &[f64], y: f64, eps: f64, model: &ModelSpec) -> Result<NetworkParams> {
    let mut next = params.clone();
    let w = &next.weights;
    let mut buf = SgdWorkspace::new(w.n1(), w.n2(), w.dim());
    sgd_step_in_place(&mut next, x, y, eps, model, &mut buf)?;
    Ok(next)
}

pub fn sgd_step_in_place(
    params: &mut NetworkParams,
    x: &[f64],
    y: f64,
    eps: f64,
    model: &ModelSpec,
    buf: &mut SgdWorkspace,
) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Domain(format!("learning rate must be positive, got {eps}")));
    }
    params.weights.check_input(x)?;
    let t = params.step_k as f64 * eps;
    let [xi1, xi2, xi3] = model.schedule.at(t);
    let g = &mut buf.grads;
    g.g1.fill(0.0);
    g.g2.fill(0.0);
    g.g3.fill(0.0);
    accumulate_gradient(&params.weights, x, y, model, 1.0, &mut buf.ws, &mut g.g1, &mut g.g2, &mut g.g3)?;
    apply_update(&mut params.weights, &g.g1, &g.g2, &g.g3, [eps * xi1, eps * xi2, eps * xi3])?;
    params.step_k += 1;
    Ok(())
}

/// `w_i ← w_i − rate_i · g_i`, checking the gradients for non-finite entries.
pub(crate) fn apply_update(
    w: &mut Weights,
    g1: &Array2<f64>,
    g2: &Array2<f64>,
    g3: &Array1<f64>,
    rates: [f64; 3],
) -> Result<()> {
    let layers: [(&str, &mut [f64], &[f64], f64); 3] = [
        ("w3", w.w3.as_slice_mut().unwrap(), g3.as_slice().unwrap(), rates[2]),
        ("w2", w.w2.as_slice_mut().unwrap(), g2.as_slice().unwrap(), rates[1]),
        ("w1", w.w1.as_slice_mut().unwrap(), g1.as_slice().unwrap(), rates[0]),
    ];
    for (name, ws, gs, rate) in layers {
        let mut bad = false;
        for (wv, gv) in ws.iter_mut().zip(gs) {
            bad |= !gv.is_finite();
            *wv -= rate * gv;
        }
        if bad {
            let index = gs.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::NonFinite {
                what: format!("gradient of {name}"),
                index,
            });
        }
    }
    Ok(())
}

/// Uniform recording grid on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordGrid {
    pub times: Vec<f64>,
}

impl RecordGrid {
    /// `intervals + 1` equispaced times `0, T/intervals, ..., T` (just `[0]` when `T = 0`).
    pub fn uniform(t_end: f64, intervals: usize) -> Result<Self> {
        if !(t_end >= 0.0) || !t_end.is_finite() {
            return Err(Error::Domain(format!("horizon must be non-negative, got {t_end}")));
        }
        if t_end == 0.0 {
            return Ok(Self { times: vec![0.0] });
        }
        if intervals == 0 {
            return Err(Error::Config("recording grid needs at least one interval".into()));
        }
        Ok(Self {
            times: (0..=intervals)
                .map(|i| t_end * i as f64 / intervals as f64)
                .collect(),
        })
    }

    pub fn spacing(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    /// Discrete step index `⌊t / step⌋` for every grid time.
    pub fn step_indices(&self, step: f64) -> Vec<u64> {
        self.times
            .iter()
            .map(|t| (t / step + 1e-9).floor() as u64)
            .collect()
    }
}

/// Receives snapshots on the recording grid.
pub trait Recorder {
    fn record(&mut self, t: f64, weights: &Weights) -> Result<()>;
}

impl<F> Recorder for F
where
    F: FnMut(f64, &Weights) -> Result<()>,
{
    fn record(&mut self, t: f64, weights: &Weights) -> Result<()> {
        self(t, weights)
    }
}

/// Discards snapshots.
#[derive(Debug, Default)]
pub struct NullRecorder;

impl Recorder for NullRecorder {
    fn record(&mut self, _t: f64, _weights: &Weights) -> Result<()> {
        Ok(())
    }
}

/// Keeps every snapshot in memory.
#[derive(Debug, Default, Clone)]
pub struct TrajectoryRecorder {
    pub times: Vec<f64>,
    pub snapshots: Vec<Weights>,
}

impl Recorder for TrajectoryRecorder {
    fn record(&mut self, t: f64, weights: &Weights) -> Result<()> {
        self.times.push(t);
        self.snapshots.push(weights.clone());
        Ok(())
    }
}

/// Resumable one-pass SGD: owns the parameters, the data stream and the buffers.
#[derive(Debug, Clone)]
pub struct SgdRunner<'a> {
    pub params: NetworkParams,
    pub stream: DataStream,
    pub eps: f64,
    model: &'a ModelSpec,
    buf: SgdWorkspace,
}

impl<'a> SgdRunner<'a> {
    pub fn new(w0: &NetworkParams, stream: &DataStream, eps: f64, model: &'a ModelSpec) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Domain(format!("learning rate must be positive, got {eps}")));
        }
        if stream.spec.dim() != w0.weights.dim() {
            return Err(Error::Structural(format!(
                "data dimension {} does not match weights {}",
                stream.spec.dim(),
                w0.weights.dim()
            )));
        }
        let w = &w0.weights;
        Ok(Self {
            buf: SgdWorkspace::new(w.n1(), w.n2(), w.dim()),
            params: w0.clone(),
            stream: stream.clone(),
            eps,
            model,
        })
    }

    /// Runs SGD until `step_k == k`.
    pub fn advance_to_step(&mut self, k: u64) -> Result<()> {
        let spec = std::sync::Arc::clone(&self.stream.spec);
        while self.params.step_k < k {
            let atom = &spec.atoms()[self.stream.advance()];
            sgd_step_in_place(&mut self.params, &atom.x, atom.y, self.eps, self.model, &mut self.buf)?;
        }
        Ok(())
    }

    /// Step index `⌊t/ε⌋` whose weights stand for continuous time `t`.
    pub fn step_for_time(&self, t: f64) -> u64 {
        (t / self.eps + 1e-9).floor() as u64
    }

    pub fn advance_to_time(&mut self, t: f64) -> Result<()> {
        self.advance_to_step(self.step_for_time(t))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub stream: DataStream,
    pub samples_used: u64,
}

/// Runs `⌊T/ε⌋` SGD steps on fresh samples, recording `W(⌊t/ε⌋)` at every grid time.
pub fn train(
    w0: &NetworkParams,
    stream: &DataStream,
    t_end: f64,
    eps: f64,
    model: &ModelSpec,
    grid: &RecordGrid,
    recorder: &mut dyn Recorder,
) -> Result<TrainOutcome> {
    if !(t_end >= 0.0) {
        return Err(Error::Domain(format!("horizon must be non-negative, got {t_end}")));
    }
    let mut run = SgdRunner::new(w0, stream, eps, model)?;
    let start = w0.step_k;
    let end = start + run.step_for_time(t_end);
    for &t in grid.times.iter().filter(|t| **t <= t_end + 1e-12) {
        run.advance_to_step(start + run.step_for_time(t))?;
        recorder.record(t, &run.params.weights)?;
    }
    run.advance_to_step(end)?;
    Ok(TrainOutcome {
        samples_used: run.params.step_k - start,
        params: run.params,
        stream: run.stream,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_grid_task, Target};
    use crate::math::ScheduleSpec;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_weights(rng: &mut ChaCha8Rng, n1: usize, n2: usize, d: usize) -> Weights {
        Weights {
            w1: Array2::from_shape_fn((n1, d), |_| rng.gen_range(-1.5..1.5)),
            w2: Array2::from_shape_fn((n1, n2), |_| rng.gen_range(-1.0..1.0)),
            w3: Array1::from_shape_fn(n2, |_| rng.gen_range(-1.0..1.0)),
        }
    }

    #[test]
    fn zero_first_layer_gives_zero_output() {
        let w = Weights::zeros(4, 3, 2);
        let tr = w.forward(&[0.3, 1.0], &ModelSpec::default()).unwrap();
        assert!(tr.h2.iter().all(|v| *v == 0.0));
        assert_eq!((tr.h3, tr.yhat), (0.0, 0.0));
    }

    #[test]
    fn single_neuron_closed_form() {
        let w = Weights::new(array![[1.0, 0.0]], array![[2.0]], array![1.0]).unwrap();
        let tr = w.forward(&[1.0, 1.0], &ModelSpec::default()).unwrap();
        assert_eq!(tr.h2[0], 2.0 * 1f64.tanh());
        assert_eq!(tr.h3, (2.0 * 1f64.tanh()).tanh());
        assert_eq!(tr.yhat, tr.h3);
    }

    #[test]
    fn duplicating_first_layer_neurons_preserves_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ModelSpec::default();
        let w = random_weights(&mut rng, 5, 4, 2);
        let dup = Weights {
            w1: ndarray::concatenate![ndarray::Axis(0), w.w1, w.w1],
            w2: ndarray::concatenate![ndarray::Axis(0), w.w2, w.w2],
            w3: w.w3.clone(),
        };
        let x = [0.4, 1.0];
        let a = w.forward(&x, &model).unwrap();
        let b = dup.forward(&x, &model).unwrap();
        for (p, q) in a.h2.iter().zip(b.h2.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!((a.yhat - b.yhat).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let w = Weights::zeros(2, 2, 3);
        assert!(matches!(w.forward(&[1.0, 1.0], &ModelSpec::default()), Err(Error::Structural(_))));
        assert!(Weights::new(Array2::zeros((2, 2)), Array2::zeros((3, 2)), Array1::zeros(2)).is_err());
    }

    #[test]
    fn zero_loss_sensitivity_kills_all_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = ModelSpec::default();
        let w = random_weights(&mut rng, 3, 2, 2);
        let x = [0.2, 1.0];
        let y = w.forward(&x, &model).unwrap().yhat;
        let g = backward(&w, &x, y, &model).unwrap();
        assert!(g.g1.iter().chain(g.g2.iter()).chain(g.g3.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn zero_third_layer_kills_lower_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = ModelSpec::default();
        let mut w = random_weights(&mut rng, 3, 2, 2);
        w.w3.fill(0.0);
        // Nonzero second-layer preactivations so φ2(H2) ≠ 0.
        let g = backward(&w, &[0.7, 1.0], 1.0, &model).unwrap();
        assert!(g.d2h.iter().all(|v| *v == 0.0));
        assert!(g.g1.iter().chain(g.g2.iter()).all(|v| *v == 0.0));
        assert!(g.g3.iter().any(|v| *v != 0.0));
    }

    /// Straight-line re-implementation of the four update formulas.
    fn oracle_step(w: &Weights, x: &[f64], y: f64, eps: f64, xi: [f64; 3]) -> Weights {
        let (n1, n2, d) = (w.n1(), w.n2(), w.dim());
        let pre: Vec<f64> = (0..n1).map(|j| (0..d).map(|k| w.w1[[j, k]] * x[k]).sum()).collect();
        let h2: Vec<f64> = (0..n2)
            .map(|j2| (0..n1).map(|j1| w.w2[[j1, j2]] * pre[j1].tanh()).sum::<f64>() / n1 as f64)
            .collect();
        let h3: f64 = (0..n2).map(|j2| w.w3[j2] * h2[j2].tanh()).sum::<f64>() / n2 as f64;
        let r = h3 - y;
        let dl = if r.abs() <= 1.0 { r } else { r.signum() };
        let sech2 = |u: f64| 1.0 - u.tanh().powi(2);
        let d2h: Vec<f64> = (0..n2).map(|j2| dl * w.w3[j2] * sech2(h2[j2])).collect();
        let mut out = w.clone();
        for j2 in 0..n2 {
            out.w3[j2] -= eps * xi[2] * dl * h2[j2].tanh();
        }
        for j1 in 0..n1 {
            for j2 in 0..n2 {
                out.w2[[j1, j2]] -= eps * xi[1] * d2h[j2] * pre[j1].tanh();
            }
            let back: f64 = (0..n2).map(|j2| d2h[j2] * w.w2[[j1, j2]]).sum::<f64>() / n2 as f64;
            for k in 0..d {
                out.w1[[j1, k]] -= eps * xi[0] * back * sech2(pre[j1]) * x[k];
            }
        }
        out
    }

    #[test]
    fn sgd_step_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = ModelSpec::default().with_schedule(ScheduleSpec::constant(0.7, 1.3, 0.4));
        let w = random_weights(&mut rng, 3, 4, 2);
        let p = NetworkParams::new(w.clone());
        let x = [0.3, 1.0];
        let next = sgd_step(&p, &x, 0.8, 0.05, &model).unwrap();
        let want = oracle_step(&w, &x, 0.8, 0.05, [0.7, 1.3, 0.4]);
        assert_eq!(next.step_k, 1);
        for (a, b) in next.weights.w1.iter().chain(next.weights.w2.iter()).chain(next.weights.w3.iter())
            .zip(want.w1.iter().chain(want.w2.iter()).chain(want.w3.iter()))
        {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_schedule_or_zero_gradient_leaves_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = random_weights(&mut rng, 3, 3, 2);
        let p = NetworkParams::new(w.clone());
        let frozen = ModelSpec::default().with_schedule(ScheduleSpec::zero());
        let next = sgd_step(&p, &[0.5, 1.0], 3.0, 0.5, &frozen).unwrap();
        assert_eq!(next.weights, w);
        assert_eq!(next.step_k, 1);

        let model = ModelSpec::default();
        let y = w.forward(&[0.5, 1.0], &model).unwrap().yhat;
        let next = sgd_step(&p, &[0.5, 1.0], y, 0.5, &model).unwrap();
        assert_eq!(next.weights, w);
        assert!(sgd_step(&p, &[0.5, 1.0], y, 0.0, &model).is_err());
    }

    #[test]
    fn non_finite_gradient_reports_layer() {
        let mut model = ModelSpec::default();
        model.loss = crate::math::LossSpec::custom("nan", |_, _| 0.0, |_, yh| if yh > -10.0 { f64::NAN } else { 0.0 }, 1.0, 1.0, true, false);
        let w = Weights::zeros(2, 2, 2);
        let err = sgd_step(&NetworkParams::new(w), &[0.0, 1.0], 0.0, 0.1, &model).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn train_empty_horizon_and_frozen_schedule() {
        let spec = Arc::new(make_grid_task(4, Target::Sin).unwrap());
        let stream = DataStream::new(spec, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w0 = NetworkParams::new(random_weights(&mut rng, 3, 3, 2));
        let model = ModelSpec::default();
        let grid = RecordGrid::uniform(0.0, 10).unwrap();
        let out = train(&w0, &stream, 0.0, 0.1, &model, &grid, &mut NullRecorder).unwrap();
        assert_eq!(out.params, w0);
        assert_eq!(out.samples_used, 0);

        let frozen = model.with_schedule(ScheduleSpec::zero());
        let grid = RecordGrid::uniform(1.0, 5).unwrap();
        let mut rec = TrajectoryRecorder::default();
        let out = train(&w0, &stream, 1.0, 0.1, &frozen, &grid, &mut rec).unwrap();
        assert_eq!(out.samples_used, 10);
        assert_eq!(out.stream.counter, 10);
        assert_eq!(out.params.weights, w0.weights);
        assert_eq!(rec.times.len(), 6);
    }

    #[test]
    fn train_is_bit_reproducible() {
        let spec = Arc::new(make_grid_task(5, Target::Sin).unwrap());
        let stream = DataStream::new(spec, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w0 = NetworkParams::new(random_weights(&mut rng, 6, 5, 2));
        let model = ModelSpec::default();
        let grid = RecordGrid::uniform(2.0, 8).unwrap();
        let mut a = TrajectoryRecorder::default();
        let mut b = TrajectoryRecorder::default();
        train(&w0, &stream, 2.0, 0.01, &model, &grid, &mut a).unwrap();
        train(&w0, &stream, 2.0, 0.01, &model, &grid, &mut b).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        assert_ne!(a.snapshots[0], a.snapshots[8]);
    }
}
