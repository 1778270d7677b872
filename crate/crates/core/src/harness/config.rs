//! Flat `key = value` experiment configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::coupling::ReferenceKind;
use crate::data::{make_grid_task, DataSpec, Target};
use crate::embedding::{IIDEmbedding, Law};
use crate::error::{Error, Result};
use crate::math::{validate_regularity, ActivationSpec, LossSpec, ModelSpec, Schedule, ScheduleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Train,
    Mf,
    Couple,
    SweepN,
    SweepEps,
    Convergence,
    Crossval,
    Plot,
}

impl Task {
    pub const ALL: [Task; 8] = [
        Task::Train,
        Task::Mf,
        Task::Couple,
        Task::SweepN,
        Task::SweepEps,
        Task::Convergence,
        Task::Crossval,
        Task::Plot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Train => "train",
            Task::Mf => "mf",
            Task::Couple => "couple",
            Task::SweepN => "sweep_n",
            Task::SweepEps => "sweep_eps",
            Task::Convergence => "convergence",
            Task::Crossval => "crossval",
            Task::Plot => "plot",
        }
    }

    /// Tasks that run SGD against a reference and so need `T ∈ εℕ`.
    pub fn is_coupling(self) -> bool {
        matches!(self, Task::Train | Task::Couple | Task::SweepN | Task::SweepEps)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }
}

/// Where the data distribution comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Grid { atoms: usize, target: Target },
    File(PathBuf),
}

impl DataSource {
    pub fn load(&self) -> Result<DataSpec> {
        match self {
            DataSource::Grid { atoms, target } => make_grid_task(*atoms, *target),
            DataSource::File(p) => DataSpec::load(p),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: Task,
    pub model: ModelSpec,
    pub data: DataSource,
    pub rho1: Law,
    pub rho2: Law,
    pub rho3: Law,
    /// Network widths for `train` and `couple`.
    pub n1: usize,
    pub n2: usize,
    /// Particle counts for `mf`, `convergence` and `crossval`.
    pub m1: usize,
    pub m2: usize,
    pub n_levels: Vec<usize>,
    pub eps_levels: Vec<f64>,
    pub eps: f64,
    pub h: f64,
    pub t_end: f64,
    pub record_intervals: usize,
    pub seeds: Vec<u64>,
    pub reference: ReferenceKind,
    pub picard_grid: usize,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Latin instance sizes (first-layer atoms, ρ2 atoms, ρ3 atoms) for `crossval`.
    pub latin_atoms: [usize; 3],
    pub risk_tol: f64,
    pub monitor_ratio: f64,
    /// Accepted slope range and stderr ceiling for sweeps.
    pub slope_range: (f64, f64),
    pub stderr_max: f64,
    pub check: bool,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Error::Config(format!("{key}: cannot parse `{s}`"))))
        .collect()
}

/// `a..b` (inclusive) or a comma list.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = v.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| Error::Config(format!("seeds: bad start `{a}`")))?;
        let b: u64 = b.trim().parse().map_err(|_| Error::Config(format!("seeds: bad end `{b}`")))?;
        if b < a {
            return Err(Error::Config(format!("seeds: empty range {a}..{b}")));
        }
        Ok((a..=b).collect())
    } else {
        parse_list("seeds", v)
    }
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

impl ExperimentConfig {
    /// Defaults for `task`; see `docs/config.md`.
    pub fn defaults(task: Task) -> Self {
        let mut c = Self {
            task,
            model: ModelSpec::default(),
            data: DataSource::Grid {
                atoms: 8,
                target: Target::Sin,
            },
            rho1: Law::standard_normal(),
            rho2: Law::unit_uniform(),
            rho3: Law::unit_uniform(),
            n1: 100,
            n2: 100,
            m1: 200,
            m2: 200,
            n_levels: vec![50, 100, 200, 400, 800],
            eps_levels: vec![0.04, 0.02, 0.01, 0.005],
            eps: 1e-3,
            h: 1e-3,
            t_end: 1.0,
            record_intervals: 50,
            seeds: (1..=10).collect(),
            reference: ReferenceKind::Reduced { nodes1: 16, nodes3: 32 },
            picard_grid: 500,
            picard_tol: 1e-8,
            picard_max_iter: 200,
            latin_atoms: [4, 3, 4],
            risk_tol: 1e-2,
            monitor_ratio: 0.1,
            slope_range: (-0.7, -0.3),
            stderr_max: 0.1,
            check: true,
            workers: None,
            output_dir: None,
            input: None,
        };
        match task {
            Task::SweepN | Task::SweepEps => {
                c.data = DataSource::Grid {
                    atoms: 8,
                    target: Target::Constant(1.0),
                };
                c.n1 = 800;
                c.n2 = 800;
                if task == Task::SweepEps {
                    c.slope_range = (0.3, 0.7);
                }
            }
            Task::Convergence => {
                c.data = DataSource::Grid {
                    atoms: 8,
                    target: Target::Constant(0.5),
                };
                c.model.schedule = ScheduleSpec::constant(1.0, 1.0, 0.0);
                c.h = 1e-2;
                c.t_end = 200.0;
                c.record_intervals = 200;
                c.seeds = vec![1];
            }
            Task::Crossval => {
                c.m1 = 8;
                c.m2 = 8;
                c.t_end = 0.5;
                c.record_intervals = 500;
                c.seeds = vec![1];
            }
            Task::Train | Task::Mf | Task::Couple => {
                c.seeds = vec![1];
            }
            Task::Plot => {}
        }
        c
    }

    /// Task defaults overridden by the `key = value` lines of `text`.
    pub fn parse(task: Task, text: &str) -> Result<Self> {
        let mut c = Self::defaults(task);
        let mut loss_name: Option<String> = None;
        let mut huber_delta = 1.0;
        let mut target_name: Option<String> = None;
        let mut constant = match &c.data {
            DataSource::Grid {
                target: Target::Constant(v),
                ..
            } => *v,
            _ => 0.0,
        };
        let mut atoms = 8;
        let mut data_file: Option<PathBuf> = None;
        let mut ref_kind: Option<String> = None;
        let (mut nodes1, mut nodes3, mut oversample) = (16, 32, 16);

        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got `{line}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            let located = |e: Error| match e {
                Error::Config(msg) => Error::Parse { line: i + 1, msg },
                other => other,
            };
            (|| -> Result<()> {
                match k {
                    "task" => {
                        let t: Task = v.parse()?;
                        if t != task {
                            return Err(Error::Config(format!("config is for task `{t}`, running `{task}`")));
                        }
                    }
                    "activation1" => c.model.phi1 = ActivationSpec::from_name(v)?,
                    "activation2" => c.model.phi2 = ActivationSpec::from_name(v)?,
                    "activation3" => c.model.phi3 = ActivationSpec::from_name(v)?,
                    "loss" => loss_name = Some(v.to_string()),
                    "huber_delta" => huber_delta = parse_one(k, v)?,
                    "xi1" => c.model.schedule.xi1 = Schedule::parse(v)?,
                    "xi2" => c.model.schedule.xi2 = Schedule::parse(v)?,
                    "xi3" => c.model.schedule.xi3 = Schedule::parse(v)?,
                    "data" => data_file = (v != "grid").then(|| PathBuf::from(v)),
                    "data_atoms" => atoms = parse_one(k, v)?,
                    "data_target" => target_name = Some(v.to_string()),
                    "data_constant" => {
                        constant = parse_one(k, v)?;
                        target_name.get_or_insert_with(|| "constant".into());
                    }
                    "rho1" => c.rho1 = Law::parse(v)?,
                    "rho2" => c.rho2 = Law::parse(v)?,
                    "rho3" => c.rho3 = Law::parse(v)?,
                    "n1" => c.n1 = parse_one(k, v)?,
                    "n2" => c.n2 = parse_one(k, v)?,
                    "n" => {
                        c.n1 = parse_one(k, v)?;
                        c.n2 = c.n1;
                    }
                    "m1" => c.m1 = parse_one(k, v)?,
                    "m2" => c.m2 = parse_one(k, v)?,
                    "n_levels" => c.n_levels = parse_list(k, v)?,
                    "eps_levels" => c.eps_levels = parse_list(k, v)?,
                    "eps" => c.eps = parse_one(k, v)?,
                    "h" => c.h = parse_one(k, v)?,
                    "T" => c.t_end = parse_one(k, v)?,
                    "record_intervals" => c.record_intervals = parse_one(k, v)?,
                    "seeds" => c.seeds = parse_seeds(v)?,
                    "reference" => ref_kind = Some(v.to_string()),
                    "reference_nodes1" => nodes1 = parse_one(k, v)?,
                    "reference_nodes3" => nodes3 = parse_one(k, v)?,
                    "oversample" => oversample = parse_one(k, v)?,
                    "picard_grid" => c.picard_grid = parse_one(k, v)?,
                    "picard_tol" => c.picard_tol = parse_one(k, v)?,
                    "picard_max_iter" => c.picard_max_iter = parse_one(k, v)?,
                    "latin_atoms" => {
                        let l: Vec<usize> = parse_list(k, v)?;
                        c.latin_atoms = l
                            .try_into()
                            .map_err(|_| Error::Config("latin_atoms needs three counts".into()))?;
                    }
                    "risk_tol" => c.risk_tol = parse_one(k, v)?,
                    "monitor_ratio" => c.monitor_ratio = parse_one(k, v)?,
                    "slope_min" => c.slope_range.0 = parse_one(k, v)?,
                    "slope_max" => c.slope_range.1 = parse_one(k, v)?,
                    "stderr_max" => c.stderr_max = parse_one(k, v)?,
                    "check" => c.check = parse_one(k, v)?,
                    "workers" => c.workers = Some(parse_one(k, v)?),
                    "out" => c.output_dir = Some(PathBuf::from(v)),
                    "input" => c.input = Some(PathBuf::from(v)),
                    _ => return Err(Error::Config(format!("unknown key `{k}`"))),
                }
                Ok(())
            })()
            .map_err(located)?;
        }

        match loss_name.as_deref() {
            None if huber_delta == 1.0 => {}
            None | Some("huber") => c.model.loss = LossSpec::huber(huber_delta)?,
            Some("squared") => c.model.loss = LossSpec::squared(),
            Some(other) => return Err(Error::Config(format!("unknown loss `{other}`"))),
        }
        if let Some(p) = data_file {
            c.data = DataSource::File(p);
        } else {
            let target = match target_name {
                Some(name) => Target::parse(&name, constant)?,
                None => match c.data {
                    DataSource::Grid { target, .. } => target,
                    DataSource::File(_) => unreachable!(),
                },
            };
            c.data = DataSource::Grid { atoms, target };
        }
        c.reference = match ref_kind.as_deref() {
            None | Some("reduced") => ReferenceKind::Reduced { nodes1, nodes3 },
            Some("particle") => ReferenceKind::Particle { oversample },
            Some(other) => return Err(Error::Config(format!("unknown reference `{other}`"))),
        };
        Ok(c)
    }

    /// Checks everything that can be checked before compute starts.
    pub fn validate(&self) -> Result<()> {
        if self.task == Task::Plot {
            return match self.input {
                Some(_) => Ok(()),
                None => Err(Error::Config("plot needs `input = <csv>`".into())),
            };
        }
        let report = validate_regularity(&self.model);
        if !report.passed() {
            return Err(Error::Validation(report.summary()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("h", self.h)?;
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::Config(format!("T must be non-negative, got {}", self.t_end)));
        }
        if self.record_intervals == 0 {
            return Err(Error::Config("record_intervals must be at least 1".into()));
        }
        let eps_list: Vec<f64> = match self.task {
            Task::SweepEps => self.eps_levels.clone(),
            t if t.is_coupling() => vec![self.eps],
            _ => vec![],
        };
        for e in &eps_list {
            positive("eps", *e)?;
            crate::coupling::check_horizon(self.t_end, *e)?;
        }
        match self.task {
            Task::SweepN if self.n_levels.len() < 4 => {
                return Err(Error::Config("sweep_n needs at least 4 width levels".into()))
            }
            Task::SweepEps if self.eps_levels.len() < 4 => {
                return Err(Error::Config("sweep_eps needs at least 4 eps levels".into()))
            }
            _ => {}
        }
        let widths: &[usize] = match self.task {
            Task::SweepN => &self.n_levels,
            Task::Train | Task::Couple | Task::SweepEps => &[self.n1, self.n2],
            _ => &[self.m1, self.m2],
        };
        if widths.iter().any(|w| *w == 0) {
            return Err(Error::Config("widths must be positive".into()));
        }
        if let Some(0) = self.workers {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let spec = self.data.load()?;
        self.embedding(spec.dim(), self.seeds[0])?;
        Ok(())
    }

    pub fn embedding(&self, dim: usize, seed: u64) -> Result<IIDEmbedding> {
        IIDEmbedding::new(self.rho1, self.rho2, self.rho3, dim, seed)
    }

    /// The `# key=value` header shared by every output of this config.
    pub fn meta(&self) -> Vec<(String, String)> {
        let data = match &self.data {
            DataSource::Grid { atoms, target } => format!("grid({atoms},{target:?})"),
            DataSource::File(p) => p.display().to_string(),
        };
        let s = &self.model.schedule;
        vec![
            ("task".into(), self.task.to_string()),
            (
                "model".into(),
                format!(
                    "{}/{}/{} {}",
                    self.model.phi1.name, self.model.phi2.name, self.model.phi3.name, self.model.loss.name
                ),
            ),
            ("xi".into(), format!("{:?}/{:?}/{:?}", s.xi1, s.xi2, s.xi3)),
            ("data".into(), data),
            ("laws".into(), format!("{}/{}/{}", self.rho1, self.rho2, self.rho3)),
            ("T".into(), self.t_end.to_string()),
            ("h".into(), self.h.to_string()),
            ("grid_spacing".into(), (self.t_end / self.record_intervals as f64).to_string()),
            (
                "seeds".into(),
                self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "),
            ),
        ]
    }
}
