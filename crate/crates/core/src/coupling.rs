//! Coupled runs: SGD networks against an MF reference on shared draws.

use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::Array2;

use crate::data::{DataSpec, DataStream};
use crate::embedding::{tensor_quadrature, CoupledPair, IIDEmbedding};
use crate::error::{Error, Result};
use crate::math::ModelSpec;
use crate::mf::{EulerRunner, ParticleSystem, PriorBoundCertificate, ReducedRunner, ReducedSystem};
use crate::net::{NetworkParams, RecordGrid, SgdRunner, Weights};

/// Layerwise sup deviations at one recording time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingRow {
    pub t: f64,
    pub dev_w1: f64,
    pub dev_w2: f64,
    pub dev_w3: f64,
    /// Running sup of the layerwise max up to `t`.
    pub d_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRecord {
    pub rows: Vec<CouplingRow>,
    pub n1: usize,
    pub n2: usize,
    pub m1: usize,
    pub m2: usize,
    pub eps: f64,
    pub seed: u64,
    pub reference: String,
    pub grid_spacing: f64,
}

pub const COUPLING_COLUMNS: &str = "t,dev_w1,dev_w2,dev_w3,D_t,n1,n2,m1,m2,eps,seed";

impl CouplingRecord {
    /// D_T at the last recorded time.
    pub fn d_final(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.d_t)
    }

    pub fn csv_rows(&self, out: &mut String) {
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{},{},{},{},{},{}",
                r.t, r.dev_w1, r.dev_w2, r.dev_w3, r.d_t, self.n1, self.n2, self.m1, self.m2, self.eps, self.seed
            );
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# reference={}", self.reference);
        let _ = writeln!(out, "# grid_spacing={}", self.grid_spacing);
        let _ = writeln!(out, "# widths={}x{}", self.n1, self.n2);
        let _ = writeln!(out, "# seed={}", self.seed);
        let _ = writeln!(out, "{COUPLING_COLUMNS}");
        self.csv_rows(&mut out);
        out
    }
}

/// Layerwise sup deviations between `net` and reference values on `[n1] × [n2]`.
///
/// `w1_ref(j1)` gives the reference first-layer row, `w2_ref(j1, j2)` and
/// `w3_ref(j2)` the scalar entries.
pub fn layer_deviations<'r>(
    net: &Weights,
    w1_ref: impl Fn(usize) -> ndarray::ArrayView1<'r, f64>,
    w2_ref: impl Fn(usize, usize) -> f64,
    w3_ref: impl Fn(usize) -> f64,
) -> [f64; 3] {
    let (n1, n2) = (net.n1(), net.n2());
    let mut dev = [0.0f64; 3];
    for j1 in 0..n1 {
        let r = w1_ref(j1);
        let d2: f64 = net.w1.row(j1).iter().zip(r.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        dev[0] = dev[0].max(d2.sqrt());
        for j2 in 0..n2 {
            dev[1] = dev[1].max((net.w2[[j1, j2]] - w2_ref(j1, j2)).abs());
        }
    }
    for j2 in 0..n2 {
        dev[2] = dev[2].max((net.w3[j2] - w3_ref(j2)).abs());
    }
    dev
}

/// An MF trajectory that coupled networks are measured against.
pub trait Reference {
    fn advance_to(&mut self, t: f64) -> Result<()>;
    fn t(&self) -> f64;
    /// Deviations of a network whose neurons are the reference's first `n1`, `n2`.
    fn deviations(&self, net: &Weights) -> Result<[f64; 3]>;
    /// Counts `(m1, m2)` of the reference's first- and second-layer points.
    fn size(&self) -> (usize, usize);
    fn certificate(&self) -> &PriorBoundCertificate;
    fn name(&self) -> &'static str;
}

fn check_overlap(net: &Weights, n1: usize, n2: usize) -> Result<()> {
    if net.n1() > n1 || net.n2() > n2 {
        return Err(Error::Internal(format!(
            "network ({}, {}) exceeds the reference's coupled indices ({n1}, {n2})",
            net.n1(),
            net.n2()
        )));
    }
    Ok(())
}

impl Reference for EulerRunner<'_> {
    fn advance_to(&mut self, t: f64) -> Result<()> {
        EulerRunner::advance_to(self, t)
    }

    fn t(&self) -> f64 {
        self.system.t
    }

    fn deviations(&self, net: &Weights) -> Result<[f64; 3]> {
        let p = &self.system.weights;
        check_overlap(net, p.n1(), p.n2())?;
        Ok(layer_deviations(net, |j1| p.w1.row(j1), |a, b| p.w2[[a, b]], |j2| p.w3[j2]))
    }

    fn size(&self) -> (usize, usize) {
        (self.system.m1(), self.system.m2())
    }

    fn certificate(&self) -> &PriorBoundCertificate {
        &self.certificate
    }

    fn name(&self) -> &'static str {
        "particle"
    }
}

/// Reduced-flow reference: quadrature points for ρ1 and ρ3 plus the
/// network's own draws as probes.
#[derive(Debug, Clone)]
pub struct ReducedReference<'a> {
    pub runner: ReducedRunner<'a>,
    off1: usize,
    off3: usize,
    w2_init: Array2<f64>,
}

impl<'a> ReducedReference<'a> {
    pub fn new(
        system: &'a ReducedSystem,
        offsets: (usize, usize),
        w2_init: Array2<f64>,
        spec: &DataSpec,
        model: &'a ModelSpec,
        h: f64,
    ) -> Result<Self> {
        if offsets.0 + w2_init.nrows() > system.len1() || offsets.1 + w2_init.ncols() > system.len3() {
            return Err(Error::Structural("probe block exceeds the reduced system".into()));
        }
        Ok(Self {
            runner: ReducedRunner::new(system, spec, model, h)?,
            off1: offsets.0,
            off3: offsets.1,
            w2_init,
        })
    }
}

impl Reference for ReducedReference<'_> {
    fn advance_to(&mut self, t: f64) -> Result<()> {
        self.runner.advance_to(t)
    }

    fn t(&self) -> f64 {
        self.runner.t()
    }

    fn deviations(&self, net: &Weights) -> Result<[f64; 3]> {
        check_overlap(net, self.w2_init.nrows(), self.w2_init.ncols())?;
        let st = &self.runner.state;
        let (o1, o3) = (self.off1, self.off3);
        Ok(layer_deviations(
            net,
            |j1| st.w1.row(o1 + j1),
            |a, b| self.w2_init[[a, b]] - st.a[[o1 + a, o3 + b]],
            |j2| st.w3[o3 + j2],
        ))
    }

    fn size(&self) -> (usize, usize) {
        (self.runner.system.len1(), self.runner.system.len3())
    }

    fn certificate(&self) -> &PriorBoundCertificate {
        &self.runner.certificate
    }

    fn name(&self) -> &'static str {
        "reduced"
    }
}

/// How the MF side of a coupled run is realized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceKind {
    /// Particle ODEs with `oversample · n_max` particles per layer.
    Particle { oversample: usize },
    /// Reduced flow with `nodes1` Gauss nodes per input coordinate for ρ1 and `nodes3` for ρ3.
    Reduced { nodes1: usize, nodes3: usize },
}

impl ReferenceKind {
    pub fn label(&self) -> String {
        match self {
            ReferenceKind::Particle { oversample } => format!("particle(x{oversample})"),
            ReferenceKind::Reduced { nodes1, nodes3 } => format!("reduced({nodes1},{nodes3})"),
        }
    }
}

/// Neuron labels for (first, second) layers; identity unless permuted.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub l1: Vec<u64>,
    pub l2: Vec<u64>,
}

impl Labels {
    pub fn identity(n1: usize, n2: usize) -> Self {
        Self {
            l1: (0..n1 as u64).collect(),
            l2: (0..n2 as u64).collect(),
        }
    }

    /// Extends with identity labels up to `(m1, m2)`.
    fn extended(&self, m1: usize, m2: usize) -> Self {
        let ext = |l: &[u64], m: usize| {
            let mut v = l.to_vec();
            v.extend(l.len() as u64..m as u64);
            v
        };
        Self {
            l1: ext(&self.l1, m1),
            l2: ext(&self.l2, m2),
        }
    }
}

/// One SGD leg of a coupled experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    pub n1: usize,
    pub n2: usize,
    pub eps: f64,
}

/// Checks `T ∈ εℕ`.
pub fn check_horizon(t_end: f64, eps: f64) -> Result<()> {
    let r = t_end / eps;
    if !(t_end >= 0.0) || (r - r.round()).abs() > 1e-9 * r.max(1.0) {
        return Err(Error::Config(format!("T = {t_end} is not a multiple of eps = {eps}")));
    }
    Ok(())
}

/// Advances every leg and the reference over the grid, returning one row list per leg.
pub fn track(reference: &mut dyn Reference, legs: &mut [SgdRunner<'_>], grid: &RecordGrid) -> Result<Vec<Vec<CouplingRow>>> {
    let mut rows: Vec<Vec<CouplingRow>> = vec![Vec::with_capacity(grid.times.len()); legs.len()];
    for &t in &grid.times {
        reference.advance_to(t)?;
        for (leg, out) in legs.iter_mut().zip(rows.iter_mut()) {
            leg.advance_to_time(t)?;
            let [a, b, c] = reference.deviations(&leg.params.weights)?;
            let prev = out.last().map_or(0.0, |r: &CouplingRow| r.d_t);
            out.push(CouplingRow {
                t,
                dev_w1: a,
                dev_w2: b,
                dev_w3: c,
                d_t: prev.max(a).max(b).max(c),
            });
        }
    }
    Ok(rows)
}

/// Data seed derived from a run seed, independent of the embedding draws.
pub fn data_seed_for(seed: u64) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ 0xD1B5_4A32_D192_ED03
}

/// Settings shared by every leg of a coupled experiment.
#[derive(Debug, Clone)]
pub struct CoupledSetup<'a> {
    pub embedding: &'a IIDEmbedding,
    pub spec: &'a Arc<DataSpec>,
    pub model: &'a ModelSpec,
    pub t_end: f64,
    pub h: f64,
    pub grid: &'a RecordGrid,
    pub data_seed: u64,
    pub reference: ReferenceKind,
    pub labels: Option<&'a Labels>,
}

/// Runs all legs against one reference built on the largest widths.
pub fn coupled_records(setup: &CoupledSetup<'_>, legs: &[Leg]) -> Result<Vec<CouplingRecord>> {
    if legs.is_empty() {
        return Ok(Vec::new());
    }
    for leg in legs {
        check_horizon(setup.t_end, leg.eps)?;
    }
    let n1 = legs.iter().map(|l| l.n1).max().unwrap();
    let n2 = legs.iter().map(|l| l.n2).max().unwrap();
    let labels = setup.labels.cloned().unwrap_or_else(|| Labels::identity(n1, n2));
    if labels.l1.len() < n1 || labels.l2.len() < n2 {
        return Err(Error::Config("label lists shorter than the widths".into()));
    }
    let e = setup.embedding;
    let base = e.sample_labels(&labels.l1[..n1], &labels.l2[..n2])?;
    let stream = DataStream::new(Arc::clone(setup.spec), setup.data_seed);
    let inits: Vec<NetworkParams> = legs
        .iter()
        .map(|l| base.prefix(l.n1, l.n2).map(NetworkParams::new))
        .collect::<Result<_>>()?;
    let mut runners: Vec<SgdRunner<'_>> = legs
        .iter()
        .zip(&inits)
        .map(|(l, w0)| SgdRunner::new(w0, &stream, l.eps, setup.model))
        .collect::<Result<_>>()?;

    let (rows, size) = match setup.reference {
        ReferenceKind::Particle { oversample } => {
            let (m1, m2) = (oversample.max(1) * n1, oversample.max(1) * n2);
            let ext = labels.extended(m1, m2);
            let particles = ParticleSystem::new(e.sample_labels(&ext.l1[..m1], &ext.l2[..m2])?);
            CoupledPair {
                net: NetworkParams::new(base.clone()),
                particles: particles.clone(),
            }
            .check_overlap()?;
            let mut reference = EulerRunner::new(&particles, setup.spec, setup.model, setup.h)?;
            (track(&mut reference, &mut runners, setup.grid)?, reference.size())
        }
        ReferenceKind::Reduced { nodes1, nodes3 } => {
            let (system, offsets) = reduced_reference_system(e, &base, nodes1, nodes3)?;
            let mut reference =
                ReducedReference::new(&system, offsets, base.w2.clone(), setup.spec, setup.model, setup.h)?;
            (track(&mut reference, &mut runners, setup.grid)?, reference.size())
        }
    };
    Ok(rows
        .into_iter()
        .zip(legs)
        .map(|(rows, l)| CouplingRecord {
            rows,
            n1: l.n1,
            n2: l.n2,
            m1: size.0,
            m2: size.1,
            eps: l.eps,
            seed: e.master_seed,
            reference: setup.reference.label(),
            grid_spacing: setup.grid.spacing(),
        })
        .collect())
}

/// Gauss quadrature for ρ1 and ρ3 with the draws of `base` appended as probes.
pub fn reduced_reference_system(
    e: &IIDEmbedding,
    base: &Weights,
    nodes1: usize,
    nodes3: usize,
) -> Result<(ReducedSystem, (usize, usize))> {
    let (u1, w1) = tensor_quadrature(&e.rho1, e.dim, nodes1)?;
    let (u3, w3) = e.rho3.quadrature(nodes3)?;
    let mut system = ReducedSystem::new(
        u1,
        w1,
        u3.into(),
        w3.into(),
        e.rho2.mean(),
        e.rho2.ess_sup(),
    )?;
    let w3p: Vec<f64> = base.w3.to_vec();
    let offsets = system.add_probes(&base.w1, &w3p)?;
    Ok((system, offsets))
}

/// Couples one network with its particle system and records the deviations.
#[allow(clippy::too_many_arguments)]
pub fn run_coupled(
    pair: &CoupledPair,
    spec: &Arc<DataSpec>,
    model: &ModelSpec,
    t_end: f64,
    eps: f64,
    h: f64,
    data_seed: u64,
    grid: &RecordGrid,
) -> Result<CouplingRecord> {
    check_horizon(t_end, eps)?;
    pair.check_overlap()?;
    let stream = DataStream::new(Arc::clone(spec), data_seed);
    let mut legs = [SgdRunner::new(&pair.net, &stream, eps, model)?];
    let mut reference = EulerRunner::new(&pair.particles, spec, model, h)?;
    let rows = track(&mut reference, &mut legs, grid)?.pop().unwrap();
    let (n1, n2) = pair.overlap();
    Ok(CouplingRecord {
        rows,
        n1,
        n2,
        m1: pair.particles.m1(),
        m2: pair.particles.m2(),
        eps,
        seed: data_seed,
        reference: "particle".into(),
        grid_spacing: grid.spacing(),
    })
}
