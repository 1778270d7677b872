//! i.i.d. neuronal embedding with counter-based per-index draws.
//!
//! The draw attached to a neuron depends only on `(master_seed, layer, index)`,
//! so the first `n` neurons of any width-`m` network are the width-`n`
//! network. This is what lets one embedding serve every width in a sweep.

use std::fmt;
use std::num::NonZeroUsize;

use gauss_quad::{hermite::GaussHermite, legendre::GaussLegendre};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mf::ParticleSystem;
use crate::net::{NetworkParams, Weights};

/// A one-dimensional initialization law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Law {
    Normal { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
    PointMass(f64),
}

impl fmt::Display for Law {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Law::Normal { mean, std } => write!(f, "normal({mean},{std})"),
            Law::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
            Law::PointMass(v) => write!(f, "point({v})"),
        }
    }
}

impl Law {
    pub fn standard_normal() -> Self {
        Law::Normal { mean: 0.0, std: 1.0 }
    }

    pub fn unit_uniform() -> Self {
        Law::Uniform { lo: -1.0, hi: 1.0 }
    }

    /// Parses `normal(m,s)`, `uniform(a,b)` or `point(v)`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        let bad = || Error::Config(format!("cannot parse law '{text}'"));
        let open = t.find('(').ok_or_else(bad)?;
        if !t.ends_with(')') {
            return Err(bad());
        }
        let args: Vec<f64> = t[open + 1..t.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let law = match (&t[..open], args.as_slice()) {
            ("normal", [m, s]) => Law::Normal { mean: *m, std: *s },
            ("uniform", [a, b]) => Law::Uniform { lo: *a, hi: *b },
            ("point", [v]) => Law::PointMass(*v),
            _ => return Err(bad()),
        };
        law.validate()?;
        Ok(law)
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Law::Normal { mean, std } => mean.is_finite() && std.is_finite() && std > 0.0,
            Law::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Law::PointMass(v) => v.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid law {self}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Law::Normal { mean, std } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + std * z
            }
            Law::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            Law::PointMass(v) => v,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Law::Normal { mean, .. } => mean,
            Law::Uniform { lo, hi } => 0.5 * (lo + hi),
            Law::PointMass(v) => v,
        }
    }

    pub fn std(&self) -> f64 {
        match *self {
            Law::Normal { std, .. } => std,
            Law::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
            Law::PointMass(_) => 0.0,
        }
    }

    /// ess-sup |u|.
    pub fn ess_sup(&self) -> f64 {
        match *self {
            Law::Normal { .. } => f64::INFINITY,
            Law::Uniform { lo, hi } => lo.abs().max(hi.abs()),
            Law::PointMass(v) => v.abs(),
        }
    }

    /// Gauss rule with `n` nodes integrating against the law (weights sum to 1).
    pub fn quadrature(&self, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let deg = NonZeroUsize::new(n).ok_or_else(|| Error::Config("quadrature needs at least one node".into()))?;
        let (nodes, weights) = match *self {
            Law::Normal { mean, std } => GaussHermite::new(deg)
                .as_node_weight_pairs()
                .iter()
                .map(|(x, w)| (mean + std * std::f64::consts::SQRT_2 * x, w / std::f64::consts::PI.sqrt()))
                .unzip(),
            Law::Uniform { lo, hi } => GaussLegendre::new(deg)
                .as_node_weight_pairs()
                .iter()
                .map(|(x, w)| (0.5 * (lo + hi) + 0.5 * (hi - lo) * x, 0.5 * w))
                .unzip(),
            Law::PointMass(v) => (vec![v], vec![1.0]),
        };
        Ok((nodes, weights))
    }
}

/// Tensor-product Gauss rule for the product law `law^{⊗d}`.
pub fn tensor_quadrature(law: &Law, d: usize, n: usize) -> Result<(Array2<f64>, Array1<f64>)> {
    let (x, w) = law.quadrature(n)?;
    let k = x.len();
    let total = k.checked_pow(d as u32).ok_or_else(|| Error::Config("tensor rule too large".into()))?;
    let mut nodes = Array2::zeros((total, d));
    let mut weights = Array1::ones(total);
    for idx in 0..total {
        let mut r = idx;
        for c in (0..d).rev() {
            nodes[[idx, c]] = x[r % k];
            weights[idx] *= w[r % k];
            r /= k;
        }
    }
    Ok((nodes, weights))
}

const TAG_W1: u64 = 1;
const TAG_W2: u64 = 2;
const TAG_W3: u64 = 3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn index_rng(seed: u64, tag: u64, i: u64, j: u64) -> ChaCha8Rng {
    let mut h = splitmix(seed ^ splitmix(tag));
    h = splitmix(h ^ i);
    h = splitmix(h ^ j.rotate_left(32));
    ChaCha8Rng::seed_from_u64(h)
}

/// i.i.d. initialization: `w1⁰ ~ ρ1^{⊗d}`, `w2⁰ ~ ρ2`, `w3⁰ ~ ρ3`.
#[derive(Debug, Clone, PartialEq)]
pub struct IIDEmbedding {
    pub rho1: Law,
    pub rho2: Law,
    pub rho3: Law,
    pub dim: usize,
    pub master_seed: u64,
}

impl IIDEmbedding {
    /// Rejects unbounded second- and third-layer laws.
    pub fn new(rho1: Law, rho2: Law, rho3: Law, dim: usize, master_seed: u64) -> Result<Self> {
        for l in [&rho1, &rho2, &rho3] {
            l.validate()?;
        }
        for (name, l) in [("rho2", &rho2), ("rho3", &rho3)] {
            if !l.ess_sup().is_finite() {
                return Err(Error::Config(format!(
                    "{name} = {l} is unbounded; second- and third-layer initializations must be bounded"
                )));
            }
        }
        if dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        Ok(Self {
            rho1,
            rho2,
            rho3,
            dim,
            master_seed,
        })
    }

    /// Standard normal first layer and uniform[−1, 1] second and third layers.
    pub fn default_laws(dim: usize, master_seed: u64) -> Result<Self> {
        Self::new(Law::standard_normal(), Law::unit_uniform(), Law::unit_uniform(), dim, master_seed)
    }

    pub fn w1_row(&self, j1: u64) -> Vec<f64> {
        let mut rng = index_rng(self.master_seed, TAG_W1, j1, 0);
        (0..self.dim).map(|_| self.rho1.sample(&mut rng)).collect()
    }

    pub fn w2_entry(&self, j1: u64, j2: u64) -> f64 {
        self.rho2.sample(&mut index_rng(self.master_seed, TAG_W2, j1, j2))
    }

    pub fn w3_entry(&self, j2: u64) -> f64 {
        self.rho3.sample(&mut index_rng(self.master_seed, TAG_W3, j2, 0))
    }

    /// Draws with neuron `j1` carrying label `labels1[j1]` and `j2` carrying `labels2[j2]`.
    pub fn sample_labels(&self, labels1: &[u64], labels2: &[u64]) -> Result<Weights> {
        if labels1.is_empty() || labels2.is_empty() {
            return Err(Error::Config("widths must be positive".into()));
        }
        let d = self.dim;
        let mut w1 = Array2::zeros((labels1.len(), d));
        for (j1, l) in labels1.iter().enumerate() {
            for (k, v) in self.w1_row(*l).into_iter().enumerate() {
                w1[[j1, k]] = v;
            }
        }
        let w2 = Array2::from_shape_fn((labels1.len(), labels2.len()), |(a, b)| self.w2_entry(labels1[a], labels2[b]));
        let w3 = labels2.iter().map(|l| self.w3_entry(*l)).collect();
        Weights::new(w1, w2, w3)
    }

    pub fn sample(&self, n1: usize, n2: usize) -> Result<Weights> {
        let l1: Vec<u64> = (0..n1 as u64).collect();
        let l2: Vec<u64> = (0..n2 as u64).collect();
        self.sample_labels(&l1, &l2)
    }
}

/// Initial weights of a width-(n1, n2) network drawn from the embedding.
pub fn sample_embedding(e: &IIDEmbedding, n1: usize, n2: usize) -> Result<Weights> {
    e.sample(n1, n2)
}

/// A network and a particle system sharing the draws on `[n1] × [n2]`.
#[derive(Debug, Clone)]
pub struct CoupledPair {
    pub net: NetworkParams,
    pub particles: ParticleSystem,
}

impl CoupledPair {
    pub fn overlap(&self) -> (usize, usize) {
        (self.net.weights.n1(), self.net.weights.n2())
    }

    /// Checks that the shared block is bit-identical.
    pub fn check_overlap(&self) -> Result<()> {
        let (n1, n2) = self.overlap();
        let block = self.particles.weights.prefix(n1, n2)?;
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        let w = &self.net.weights;
        if same(w.w1.as_slice().unwrap(), block.w1.as_slice().unwrap())
            && same(w.w2.as_slice().unwrap(), block.w2.as_slice().unwrap())
            && same(w.w3.as_slice().unwrap(), block.w3.as_slice().unwrap())
        {
            Ok(())
        } else {
            Err(Error::Internal("coupled initializations differ on the overlap".into()))
        }
    }
}

/// Couples a width-(n1, n2) network with an (m1, m2)-particle system.
pub fn couple(e: &IIDEmbedding, n1: usize, n2: usize, m1: usize, m2: usize) -> Result<CoupledPair> {
    if m1 < n1 || m2 < n2 {
        return Err(Error::Internal(format!(
            "particle counts ({m1}, {m2}) must dominate network widths ({n1}, {n2})"
        )));
    }
    let particles = ParticleSystem::new(e.sample(m1, m2)?);
    let pair = CoupledPair {
        net: NetworkParams::new(e.sample(n1, n2)?),
        particles,
    };
    pair.check_overlap()?;
    Ok(pair)
}
