//! Finite-support data distributions.
//!
//! A [`DataSpec`] is a list of weighted atoms `(x, y, p)`. The last coordinate
//! of every `x` is the constant bias input `1`. Expectations over the data
//! are exact sums over atoms; SGD reads i.i.d. draws through a [`DataStream`].

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub x: Vec<f64>,
    pub y: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    dim: usize,
    atoms: Vec<Atom>,
    x_bound: f64,
    label_fn_deterministic: bool,
    cumulative: Vec<f64>,
}

/// Targets for [`make_grid_task`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Sin,
    /// Alternating ±1 labels along the grid.
    XorLike,
    Constant(f64),
}

impl Target {
    pub fn parse(name: &str, constant: f64) -> Result<Self> {
        match name {
            "sin" => Ok(Target::Sin),
            "xor_like" | "xor" => Ok(Target::XorLike),
            "constant" => Ok(Target::Constant(constant)),
            other => Err(Error::Config(format!("unknown target `{other}`"))),
        }
    }
}

impl DataSpec {
    /// Validates and builds a distribution from atoms.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Config("data distribution needs at least one atom".into()));
        }
        let dim = atoms[0].x.len();
        if dim == 0 {
            return Err(Error::Config("inputs need at least the bias coordinate".into()));
        }
        let mut total = 0.0;
        let mut x_bound = 0.0f64;
        for (k, a) in atoms.iter().enumerate() {
            if a.x.len() != dim {
                return Err(Error::Structural(format!(
                    "atom {k} has {} coordinates, expected {dim}",
                    a.x.len()
                )));
            }
            if !(a.p >= 0.0) || !a.p.is_finite() {
                return Err(Error::Config(format!("atom {k} has invalid probability {}", a.p)));
            }
            if a.x.iter().any(|v| !v.is_finite()) || !a.y.is_finite() {
                return Err(Error::NonFinite {
                    what: "data atom".into(),
                    index: k,
                });
            }
            if a.x[dim - 1] != 1.0 {
                return Err(Error::Config(format!(
                    "atom {k} must carry the bias coordinate 1 last, got {}",
                    a.x[dim - 1]
                )));
            }
            total += a.p;
            x_bound = x_bound.max(a.x.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("probabilities sum to {total}, not 1")));
        }
        let mut label_fn_deterministic = true;
        for i in 0..atoms.len() {
            for j in (i + 1)..atoms.len() {
                if atoms[i].x == atoms[j].x && atoms[i].y != atoms[j].y {
                    label_fn_deterministic = false;
                }
            }
        }
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.p;
                acc
            })
            .collect();
        Ok(Self {
            dim,
            atoms,
            x_bound,
            label_fn_deterministic,
            cumulative,
        })
    }

    /// Input dimension including the bias coordinate.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// max over atoms of the Euclidean norm of x.
    pub fn x_bound(&self) -> f64 {
        self.x_bound
    }

    pub fn label_fn_deterministic(&self) -> bool {
        self.label_fn_deterministic
    }

    /// Index of the atom selected by a uniform draw in `[0, 1)`.
    pub fn atom_for_uniform(&self, u: f64) -> usize {
        let k = self.cumulative.partition_point(|&c| c <= u);
        k.min(self.atoms.len() - 1)
    }

    /// Serializes to the text format: header `d,n_atoms`, then `x_0,...,x_{d-1},y,p` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{},{}", self.dim, self.atoms.len()).unwrap();
        for a in &self.atoms {
            for v in &a.x {
                write!(out, "{v},").unwrap();
            }
            writeln!(out, "{},{}", a.y, a.p).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hl, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let parse_usize = |s: &str, line: usize| -> Result<usize> {
            s.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("expected integer, got `{s}`"),
            })
        };
        let head: Vec<&str> = header.split(',').collect();
        if head.len() != 2 {
            return Err(Error::Parse {
                line: hl + 1,
                msg: "header must be `d,n_atoms`".into(),
            });
        }
        let d = parse_usize(head[0], hl + 1)?;
        let n = parse_usize(head[1], hl + 1)?;
        let mut atoms = Vec::with_capacity(n);
        for (ln, line) in lines {
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line: ln + 1,
                        msg: format!("expected number, got `{s}`"),
                    })
                })
                .collect::<Result<_>>()?;
            if vals.len() != d + 2 {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: format!("expected {} fields, got {}", d + 2, vals.len()),
                });
            }
            atoms.push(Atom {
                x: vals[..d].to_vec(),
                y: vals[d],
                p: vals[d + 1],
            });
        }
        if atoms.len() != n {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header announces {n} atoms, found {}", atoms.len()),
            });
        }
        DataSpec::new(atoms)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// `m` atoms `x = (u_k, 1)` with `u_k` equispaced on `[-1, 1]`, uniform weights.
pub fn make_grid_task(m: usize, target: Target) -> Result<DataSpec> {
    if m < 2 {
        return Err(Error::Config(format!("grid task needs m >= 2 atoms, got {m}")));
    }
    let p = 1.0 / m as f64;
    let atoms = (0..m)
        .map(|k| {
            let u = -1.0 + 2.0 * k as f64 / (m - 1) as f64;
            let y = match target {
                Target::Sin => u.sin(),
                Target::XorLike => {
                    if k % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                Target::Constant(c) => c,
            };
            Atom { x: vec![u, 1.0], y, p }
        })
        .collect();
    DataSpec::new(atoms)
}

/// Exact expectation Σ_k p_k f(x_k, y_k) of a vector-valued function.
pub fn expect<F>(spec: &DataSpec, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64) -> Vec<f64>,
{
    let mut acc: Option<Vec<f64>> = None;
    for (k, a) in spec.atoms.iter().enumerate() {
        let v = f(&a.x, a.y);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "expectation integrand".into(),
                index: k,
            });
        }
        match acc.as_mut() {
            None => acc = Some(v.iter().map(|x| a.p * x).collect()),
            Some(acc) => {
                if acc.len() != v.len() {
                    return Err(Error::Structural("integrand changed output length".into()));
                }
                for (s, x) in acc.iter_mut().zip(&v) {
                    *s += a.p * x;
                }
            }
        }
    }
    Ok(acc.unwrap_or_default())
}

/// A deterministic i.i.d. stream of samples: draw `counter` depends only on `(seed, counter)`.
#[derive(Debug, Clone)]
pub struct DataStream {
    pub spec: Arc<DataSpec>,
    pub seed: u64,
    pub counter: u64,
}

/// One sample `z = (x, y)` together with its atom index.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub index: usize,
    pub x: &'a [f64],
    pub y: f64,
}

impl DataStream {
    pub fn new(spec: Arc<DataSpec>, seed: u64) -> Self {
        Self {
            spec,
            seed,
            counter: 0,
        }
    }

    /// Atom index of draw number `counter`, without advancing.
    pub fn index_at(&self, counter: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // Each draw consumes one 64-bit output, i.e. two 32-bit words.
        rng.set_word_pos(u128::from(counter) * 2);
        let u: f64 = rng.gen();
        self.spec.atom_for_uniform(u)
    }

    /// Returns the next sample and the advanced stream.
    pub fn next_sample(&self) -> (usize, DataStream) {
        let idx = self.index_at(self.counter);
        let next = DataStream {
            spec: Arc::clone(&self.spec),
            seed: self.seed,
            counter: self.counter + 1,
        };
        (idx, next)
    }

    /// In-place variant of [`DataStream::next_sample`].
    pub fn advance(&mut self) -> usize {
        let idx = self.index_at(self.counter);
        self.counter += 1;
        idx
    }

    pub fn sample(&self, index: usize) -> Sample<'_> {
        let a = &self.spec.atoms[index];
        Sample {
            index,
            x: &a.x,
            y: a.y,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_task_constant_two_atoms() {
        let s = make_grid_task(2, Target::Constant(0.0)).unwrap();
        assert_eq!(
            s.atoms(),
            &[
                Atom { x: vec![-1.0, 1.0], y: 0.0, p: 0.5 },
                Atom { x: vec![1.0, 1.0], y: 0.0, p: 0.5 },
            ]
        );
        assert!(s.label_fn_deterministic());
        assert_eq!(s.x_bound(), 2f64.sqrt());
    }

    #[test]
    fn grid_task_sin_and_xor() {
        let s = make_grid_task(3, Target::Sin).unwrap();
        let ys: Vec<f64> = s.atoms().iter().map(|a| a.y).collect();
        assert_eq!(ys, vec![(-1.0f64).sin(), 0.0, 1.0f64.sin()]);

        let s = make_grid_task(5, Target::XorLike).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.atoms().iter().all(|a| a.y == 1.0 || a.y == -1.0));
        let total: f64 = s.atoms().iter().map(|a| a.p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(matches!(make_grid_task(1, Target::Sin), Err(Error::Config(_))));
    }

    #[test]
    fn constructor_invariants() {
        let bad_bias = vec![Atom { x: vec![0.3, 0.9], y: 0.0, p: 1.0 }];
        assert!(DataSpec::new(bad_bias).is_err());
        let bad_sum = vec![Atom { x: vec![1.0], y: 0.0, p: 0.9 }];
        assert!(DataSpec::new(bad_sum).is_err());
        let noisy = vec![
            Atom { x: vec![1.0], y: 0.0, p: 0.5 },
            Atom { x: vec![1.0], y: 1.0, p: 0.5 },
        ];
        assert!(!DataSpec::new(noisy).unwrap().label_fn_deterministic());
    }

    #[test]
    fn expectation_examples() {
        let s = make_grid_task(7, Target::Sin).unwrap();
        assert!((expect(&s, |_, _| vec![1.0]).unwrap()[0] - 1.0).abs() < 1e-15);
        let z = make_grid_task(2, Target::Constant(0.0)).unwrap();
        assert_eq!(expect(&z, |_, y| vec![y]).unwrap(), vec![0.0]);
        let pm = DataSpec::new(vec![
            Atom { x: vec![1.0], y: 1.0, p: 0.5 },
            Atom { x: vec![1.0], y: -1.0, p: 0.5 },
        ])
        .unwrap();
        assert_eq!(expect(&pm, |_, y| vec![y * y]).unwrap(), vec![1.0]);
        let err = expect(&s, |x, _| vec![if x[0] > 0.5 { f64::NAN } else { 0.0 }]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 5, .. }));
    }

    #[test]
    fn stream_is_deterministic_and_degenerate_when_single_atom() {
        let single = Arc::new(DataSpec::new(vec![Atom { x: vec![0.5, 1.0], y: 2.0, p: 1.0 }]).unwrap());
        let mut st = DataStream::new(single, 9);
        for _ in 0..100 {
            assert_eq!(st.advance(), 0);
        }
        let spec = Arc::new(make_grid_task(4, Target::Sin).unwrap());
        let st = DataStream::new(spec, 42);
        let (a, st2) = st.next_sample();
        let (b, _) = st.next_sample();
        assert_eq!(a, b);
        assert_eq!(st2.counter, 1);
        assert_eq!(st.index_at(17), DataStream::new(st.spec.clone(), 42).index_at(17));
    }

    #[test]
    fn stream_frequencies_match_probabilities() {
        let atoms = vec![
            Atom { x: vec![-1.0, 1.0], y: 0.0, p: 0.1 },
            Atom { x: vec![0.0, 1.0], y: 1.0, p: 0.2 },
            Atom { x: vec![0.5, 1.0], y: 2.0, p: 0.3 },
            Atom { x: vec![1.0, 1.0], y: 3.0, p: 0.4 },
        ];
        let spec = Arc::new(DataSpec::new(atoms).unwrap());
        let n = 100_000u64;
        let mut counts = [0usize; 4];
        let mut st = DataStream::new(spec.clone(), 7);
        for _ in 0..n {
            counts[st.advance()] += 1;
        }
        for (k, a) in spec.atoms().iter().enumerate() {
            let freq = counts[k] as f64 / n as f64;
            let width = 3.0 * (a.p * (1.0 - a.p) / n as f64).sqrt();
            assert!((freq - a.p).abs() <= width, "atom {k}: {freq} vs {}", a.p);
        }
    }

    #[test]
    fn sample_mean_converges_to_exact_expectation() {
        let atoms = vec![
            Atom { x: vec![-1.0, 1.0], y: -2.0, p: 0.25 },
            Atom { x: vec![0.0, 1.0], y: 1.0, p: 0.35 },
            Atom { x: vec![0.5, 1.0], y: 0.5, p: 0.15 },
            Atom { x: vec![1.0, 1.0], y: 3.0, p: 0.25 },
        ];
        let spec = Arc::new(DataSpec::new(atoms).unwrap());
        let exact = expect(&spec, |x, y| vec![y * x[0]]).unwrap()[0];
        let mut st = DataStream::new(spec.clone(), 1234);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let a = &spec.atoms()[st.advance()];
            sum += a.y * a.x[0];
        }
        assert!((sum / n as f64 - exact).abs() < 5e-3);
    }

    #[test]
    fn csv_roundtrip() {
        let s = make_grid_task(5, Target::Sin).unwrap();
        let back = DataSpec::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back, s);
        assert!(DataSpec::from_csv("2,1\n0.5,1,0\n").is_err());
    }
}
