//! Distances, norms and diagnostics computed from recorded snapshots.

use ndarray::Array2;

use crate::data::DataSpec;
use crate::error::{Error, Result};
use crate::math::ModelSpec;
use crate::mf::{drift, ParticleSystem};
use crate::net::{TrajectoryRecorder, Weights};

/// Snapshots of one trajectory on a strictly increasing grid starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryView {
    pub times: Vec<f64>,
    pub snapshots: Vec<Weights>,
}

impl TrajectoryView {
    pub fn new(times: Vec<f64>, snapshots: Vec<Weights>) -> Result<Self> {
        if times.is_empty() || times.len() != snapshots.len() {
            return Err(Error::Structural("trajectory needs one snapshot per time".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::Structural(format!("trajectory starts at {} instead of 0", times[0])));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Structural("trajectory times must be strictly increasing".into()));
        }
        let shape = |w: &Weights| (w.n1(), w.n2(), w.dim());
        let s0 = shape(&snapshots[0]);
        if snapshots.iter().any(|w| shape(w) != s0) {
            return Err(Error::Structural("snapshot shapes differ along the trajectory".into()));
        }
        Ok(Self { times, snapshots })
    }

    pub fn from_recorder(rec: TrajectoryRecorder) -> Result<Self> {
        Self::new(rec.times, rec.snapshots)
    }

    /// Spacing of the recording grid (0 for a single snapshot).
    pub fn spacing(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

fn same_grid(a: &TrajectoryView, b: &TrajectoryView) -> Result<()> {
    if a.times.len() != b.times.len() || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-9) {
        return Err(Error::Structural("trajectories are recorded on different grids".into()));
    }
    Ok(())
}

/// Per-time layerwise deviations and the running sup D_t.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport {
    pub times: Vec<f64>,
    /// `[w1, w2, w3]` sup deviations over the overlap at each time.
    pub layers: Vec<[f64; 3]>,
    pub running: Vec<f64>,
}

impl DistanceReport {
    pub fn d_t(&self) -> f64 {
        self.running.last().copied().unwrap_or(0.0)
    }
}

/// `D_t = sup_{s ≤ t} max(max_j1 |Δw1|, max |Δw2|, max |Δw3|)` over `[n1] × [n2]`.
pub fn coupling_distance(a: &TrajectoryView, b: &TrajectoryView, overlap: (usize, usize)) -> Result<DistanceReport> {
    same_grid(a, b)?;
    let (n1, n2) = overlap;
    for w in [&a.snapshots[0], &b.snapshots[0]] {
        if n1 > w.n1() || n2 > w.n2() {
            return Err(Error::Structural(format!(
                "overlap ({n1}, {n2}) exceeds widths ({}, {})",
                w.n1(),
                w.n2()
            )));
        }
    }
    let mut layers = Vec::with_capacity(a.times.len());
    let mut running = Vec::with_capacity(a.times.len());
    let mut sup = 0.0f64;
    for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
        let mut dev = [0.0f64; 3];
        for j1 in 0..n1 {
            let d2: f64 = x.w1.row(j1).iter().zip(y.w1.row(j1).iter()).map(|(p, q)| (p - q).powi(2)).sum();
            dev[0] = dev[0].max(d2.sqrt());
            for j2 in 0..n2 {
                dev[1] = dev[1].max((x.w2[[j1, j2]] - y.w2[[j1, j2]]).abs());
            }
        }
        for j2 in 0..n2 {
            dev[2] = dev[2].max((x.w3[j2] - y.w3[j2]).abs());
        }
        sup = sup.max(dev[0]).max(dev[1]).max(dev[2]);
        layers.push(dev);
        running.push(sup);
    }
    Ok(DistanceReport {
        times: a.times.clone(),
        layers,
        running,
    })
}

/// Sup over recorded times and indices of |w2| and |w3|.
pub fn sup_norms(a: &TrajectoryView) -> (f64, f64) {
    a.snapshots.iter().fold((0.0f64, 0.0f64), |(s2, s3), w| {
        (
            w.w2.iter().fold(s2, |m, v| m.max(v.abs())),
            w.w3.iter().fold(s3, |m, v| m.max(v.abs())),
        )
    })
}

/// A test function ψ(y, ŷ).
pub struct TestFunction<'a> {
    pub name: String,
    pub f: Box<dyn Fn(f64, f64) -> f64 + 'a>,
}

impl<'a> TestFunction<'a> {
    pub fn new(name: impl Into<String>, f: impl Fn(f64, f64) -> f64 + 'a) -> Self {
        Self {
            name: name.into(),
            f: Box::new(f),
        }
    }

    /// ψ = 𝓛.
    pub fn loss(model: &'a ModelSpec) -> Self {
        Self::new(model.loss.name.clone(), move |y, yh| model.loss.value(y, yh))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub sup_gap: f64,
    pub per_time: Vec<(f64, f64)>,
    pub psi_name: String,
}

/// `|E_Z ψ(Y, ŷ_net(X)) − E_Z ψ(Y, ŷ_mf(X))|` at each recorded time.
pub fn test_function_gap(
    net: &TrajectoryView,
    mf: &TrajectoryView,
    spec: &DataSpec,
    model: &ModelSpec,
    psi: &TestFunction<'_>,
) -> Result<GapReport> {
    same_grid(net, mf)?;
    let mean_psi = |w: &Weights| -> Result<f64> {
        let yh = w.predictions(spec, model)?;
        Ok(spec.atoms().iter().zip(yh).map(|(a, y)| a.p * (psi.f)(a.y, y)).sum())
    };
    let mut per_time = Vec::with_capacity(net.times.len());
    for ((t, a), b) in net.times.iter().zip(&net.snapshots).zip(&mf.snapshots) {
        per_time.push((*t, (mean_psi(a)? - mean_psi(b)?).abs()));
    }
    Ok(GapReport {
        sup_gap: per_time.iter().map(|p| p.1).fold(0.0, f64::max),
        per_time,
        psi_name: psi.name.clone(),
    })
}

/// `max_j1 mean_j2 |ξ2(t) Δ2[j1, j2]|` at every recorded time.
pub fn stationarity_monitor(mf: &TrajectoryView, spec: &DataSpec, model: &ModelSpec) -> Result<Vec<(f64, f64)>> {
    mf.times
        .iter()
        .zip(&mf.snapshots)
        .map(|(t, w)| {
            let xi2 = model.schedule.xi2.eval(*t);
            let f = drift(&ParticleSystem { weights: w.clone(), t: *t }, spec, model)?;
            let m2 = f.d2.ncols() as f64;
            let v = f
                .d2
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|d| (xi2 * d).abs()).sum::<f64>() / m2)
                .fold(0.0, f64::max);
            Ok((*t, v))
        })
        .collect()
}

/// Empirical Lipschitz ratios of the first-layer flow map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzReport {
    /// `max sup_t |w1(t, u) − w1(t, u')| / |u − u'|` over pairs with `u ≠ u'`.
    pub lip_in_init: f64,
    /// `max |w1(t, u) − w1(t', u)| / |t − t'|` over consecutive times.
    pub lip_in_time: f64,
}

fn row_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

/// Lipschitz diagnostic for first-layer trajectories `w1[t]` (rows = initial points).
///
/// Pairs with coinciding initial points are excluded.
pub fn w1_lipschitz_diagnostic(times: &[f64], w1: &[Array2<f64>]) -> Result<LipschitzReport> {
    let profile = w1_lipschitz_profile(times, w1)?;
    let lip_in_init = profile.last().copied().unwrap_or(0.0);
    let mut lip_in_time = 0.0f64;
    for i in 1..times.len() {
        let dt = times[i] - times[i - 1];
        for (a, b) in w1[i].rows().into_iter().zip(w1[i - 1].rows()) {
            lip_in_time = lip_in_time.max(row_dist(a, b) / dt);
        }
    }
    Ok(LipschitzReport {
        lip_in_init,
        lip_in_time,
    })
}

/// `lip_in_init` restricted to times up to each recorded `t`.
pub fn w1_lipschitz_profile(times: &[f64], w1: &[Array2<f64>]) -> Result<Vec<f64>> {
    if times.len() < 2 || w1.len() != times.len() {
        return Err(Error::Structural("need at least two recorded times, one w1 array each".into()));
    }
    let u = &w1[0];
    if u.nrows() < 2 {
        return Err(Error::Structural("need at least two initial points".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Structural("times must be strictly increasing".into()));
    }
    let n = u.nrows();
    let mut best = 0.0f64;
    let mut profile = Vec::with_capacity(times.len());
    for w in w1 {
        for i in 0..n {
            for j in i + 1..n {
                let du = row_dist(u.row(i), u.row(j));
                if du == 0.0 {
                    continue;
                }
                best = best.max(row_dist(w.row(i), w.row(j)) / du);
            }
        }
        profile.push(best);
    }
    Ok(profile)
}
