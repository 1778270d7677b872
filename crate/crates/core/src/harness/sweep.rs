//! Width and step-size sweeps of the coupled deviation D_T.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::coupling::{coupled_records, data_seed_for, CoupledSetup, CouplingRecord, Labels, Leg};
use crate::error::{Error, Result};
use crate::io::MetricTable;
use crate::net::RecordGrid;

use super::config::ExperimentConfig;
use super::worker_pool;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Width,
    Step,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Width => "sweep_n",
            SweepKind::Step => "sweep_eps",
        }
    }

    fn level_name(self) -> &'static str {
        match self {
            SweepKind::Width => "n",
            SweepKind::Step => "eps",
        }
    }
}

/// D_T and the sup-over-time layer deviations of one (level, seed) run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRow {
    pub level: f64,
    pub seed: u64,
    pub d_t: f64,
    pub dev: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub level: f64,
    pub mean: f64,
    /// Standard error of the mean over seeds.
    pub stderr: f64,
    pub seeds: usize,
}

/// Least-squares fit of `log mean D_T` against `log level`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// `sqrt(se_ols² + se_jackknife²)`.
    pub stderr: f64,
    pub se_ols: f64,
    /// Leave-one-seed-out jackknife over whole seeds.
    pub se_jackknife: f64,
    /// Residuals from the pure power law, one per level.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub raw: Vec<RawRow>,
    pub rows: Vec<SweepRow>,
    /// `None` when some mean D_T is zero or non-finite, see `degenerate`.
    pub fit: Option<SlopeFit>,
    pub degenerate: Option<String>,
}

fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    (b, my - b * mx)
}

/// Slope fit for per-level samples `per_level[i][s]` (seed `s` at level `xs[i]`).
///
/// Returns `None` if any level mean is not a positive finite number.
pub fn fit_slope(xs: &[f64], per_level: &[Vec<f64>]) -> Option<SlopeFit> {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let log_means = |skip: Option<usize>| -> Option<Vec<f64>> {
        per_level
            .iter()
            .map(|v| {
                let kept: Vec<f64> = v.iter().enumerate().filter(|(i, _)| Some(*i) != skip).map(|(_, x)| *x).collect();
                let m = kept.iter().sum::<f64>() / kept.len() as f64;
                (m > 0.0 && m.is_finite()).then(|| m.ln())
            })
            .collect()
    };
    let ly = log_means(None)?;
    let (slope, intercept) = ols(&lx, &ly);
    let residuals: Vec<f64> = lx.iter().zip(&ly).map(|(x, y)| y - intercept - slope * x).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let se_ols = if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };

    let k = per_level.iter().map(Vec::len).min().unwrap_or(0);
    let se_jackknife = if k >= 2 {
        let jk: Vec<f64> = (0..k).filter_map(|s| log_means(Some(s)).map(|y| ols(&lx, &y).0)).collect();
        if jk.len() == k {
            let m = jk.iter().sum::<f64>() / k as f64;
            ((k as f64 - 1.0) / k as f64 * jk.iter().map(|v| (v - m).powi(2)).sum::<f64>()).sqrt()
        } else {
            f64::NAN
        }
    } else {
        0.0
    };
    Some(SlopeFit {
        slope,
        intercept,
        stderr: (se_ols * se_ols + se_jackknife * se_jackknife).sqrt(),
        se_ols,
        se_jackknife,
        residuals,
    })
}

impl SweepResult {
    /// Aggregates raw rows in sorted (level, seed) order.
    pub fn from_raw(kind: SweepKind, mut raw: Vec<RawRow>) -> Self {
        raw.sort_by(|a, b| a.level.total_cmp(&b.level).then(a.seed.cmp(&b.seed)));
        let mut levels: Vec<f64> = raw.iter().map(|r| r.level).collect();
        levels.dedup();
        let per_level: Vec<Vec<f64>> = levels
            .iter()
            .map(|l| raw.iter().filter(|r| r.level == *l).map(|r| r.d_t).collect())
            .collect();
        let rows = levels
            .iter()
            .zip(&per_level)
            .map(|(l, v)| {
                let k = v.len() as f64;
                let mean = v.iter().sum::<f64>() / k;
                let var = if v.len() > 1 {
                    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)
                } else {
                    0.0
                };
                SweepRow {
                    level: *l,
                    mean,
                    stderr: (var / k).sqrt(),
                    seeds: v.len(),
                }
            })
            .collect::<Vec<_>>();
        let fit = fit_slope(&levels, &per_level);
        let degenerate = fit.is_none().then(|| {
            let bad: Vec<String> = rows
                .iter()
                .filter(|r| !(r.mean > 0.0 && r.mean.is_finite()))
                .map(|r| format!("{}={}", kind.level_name(), r.level))
                .collect();
            format!("degenerate sweep: mean D_T is {} at {}; slope undefined", rows[0].mean, bad.join(", "))
        });
        Self {
            kind,
            raw,
            rows,
            fit,
            degenerate,
        }
    }

    pub fn summary(&self) -> String {
        match (&self.fit, &self.degenerate) {
            (Some(f), _) => format!(
                "{}: slope {:.4} ± {:.4} (ols {:.4}, jackknife {:.4}) over {} levels",
                self.kind.name(),
                f.slope,
                f.stderr,
                f.se_ols,
                f.se_jackknife,
                self.rows.len()
            ),
            (None, Some(d)) => format!("{}: {d}", self.kind.name()),
            (None, None) => format!("{}: no fit", self.kind.name()),
        }
    }

    /// Checks the slope range and stderr ceiling.
    pub fn check(&self, range: (f64, f64), stderr_max: f64) -> Result<()> {
        let f = self
            .fit
            .as_ref()
            .ok_or_else(|| Error::Assertion(self.degenerate.clone().unwrap_or_default()))?;
        if !(f.slope >= range.0 && f.slope <= range.1) {
            return Err(Error::Assertion(format!(
                "{} slope {:.4} outside [{}, {}]",
                self.kind.name(),
                f.slope,
                range.0,
                range.1
            )));
        }
        if !(f.stderr < stderr_max) {
            return Err(Error::Assertion(format!(
                "{} slope stderr {:.4} not below {stderr_max}",
                self.kind.name(),
                f.stderr
            )));
        }
        Ok(())
    }

    pub fn table(&self, meta: &[(String, String)]) -> MetricTable {
        let mut t = MetricTable::new(&[
            "kind", "level", "seed", "D_T", "stderr", "n_seeds", "dev_w1", "dev_w2", "dev_w3", "residual",
        ]);
        t.meta = meta.to_vec();
        t.meta.push(("level".into(), self.kind.level_name().into()));
        match &self.fit {
            Some(f) => {
                t.meta.push(("slope".into(), format!("{:e}", f.slope)));
                t.meta.push(("slope_stderr".into(), format!("{:e}", f.stderr)));
                t.meta.push(("slope_se_ols".into(), format!("{:e}", f.se_ols)));
                t.meta.push(("slope_se_jackknife".into(), format!("{:e}", f.se_jackknife)));
                t.meta.push(("intercept".into(), format!("{:e}", f.intercept)));
            }
            None => t.meta.push(("degenerate".into(), self.degenerate.clone().unwrap_or_default())),
        }
        for r in &self.raw {
            t.push(vec![
                "raw".into(),
                r.level.to_string(),
                r.seed.to_string(),
                format!("{:e}", r.d_t),
                String::new(),
                String::new(),
                format!("{:e}", r.dev[0]),
                format!("{:e}", r.dev[1]),
                format!("{:e}", r.dev[2]),
                String::new(),
            ]);
        }
        for (i, r) in self.rows.iter().enumerate() {
            let res = self.fit.as_ref().map_or(String::new(), |f| format!("{:e}", f.residuals[i]));
            t.push(vec![
                "mean".into(),
                r.level.to_string(),
                String::new(),
                format!("{:e}", r.mean),
                format!("{:e}", r.stderr),
                r.seeds.to_string(),
                String::new(),
                String::new(),
                String::new(),
                res,
            ]);
        }
        t
    }
}

fn raw_rows(kind: SweepKind, recs: &[CouplingRecord]) -> Vec<RawRow> {
    recs.iter()
        .map(|r| {
            let sup = |f: fn(&crate::coupling::CouplingRow) -> f64| r.rows.iter().map(f).fold(0.0, f64::max);
            RawRow {
                level: match kind {
                    SweepKind::Width => r.n1 as f64,
                    SweepKind::Step => r.eps,
                },
                seed: r.seed,
                d_t: r.d_final(),
                dev: [sup(|x| x.dev_w1), sup(|x| x.dev_w2), sup(|x| x.dev_w3)],
            }
        })
        .collect()
}

/// Per-seed computation: every level of the sweep against one shared reference.
fn seed_rows(cfg: &ExperimentConfig, kind: SweepKind, seed: u64, labels: Option<&Labels>) -> Result<Vec<RawRow>> {
    let spec = Arc::new(cfg.data.load()?);
    let e = cfg.embedding(spec.dim(), seed)?;
    let grid = RecordGrid::uniform(cfg.t_end, cfg.record_intervals)?;
    let legs = legs(cfg, kind);
    let setup = CoupledSetup {
        embedding: &e,
        spec: &spec,
        model: &cfg.model,
        t_end: cfg.t_end,
        h: cfg.h,
        grid: &grid,
        data_seed: data_seed_for(seed),
        reference: cfg.reference,
        labels,
    };
    Ok(raw_rows(kind, &coupled_records(&setup, &legs)?))
}

fn legs(cfg: &ExperimentConfig, kind: SweepKind) -> Vec<Leg> {
    match kind {
        SweepKind::Width => cfg.n_levels.iter().map(|&n| Leg { n1: n, n2: n, eps: cfg.eps }).collect(),
        SweepKind::Step => cfg
            .eps_levels
            .iter()
            .map(|&eps| Leg {
                n1: cfg.n1,
                n2: cfg.n2,
                eps,
            })
            .collect(),
    }
}

/// Runs a sweep over `cfg.seeds` on the worker pool.
///
/// With `out` set, the sweep CSV is written there, also when a run fails
/// (then holding the rows of the seeds that finished).
pub fn run_sweep(cfg: &ExperimentConfig, kind: SweepKind, labels: Option<&Labels>, out: Option<&Path>) -> Result<SweepResult> {
    cfg.validate()?;
    let pool = worker_pool(cfg)?;
    let per_seed: Vec<Result<Vec<RawRow>>> =
        pool.install(|| cfg.seeds.par_iter().map(|&s| seed_rows(cfg, kind, s, labels)).collect());
    let mut raw = Vec::new();
    let mut failure = None;
    for r in per_seed {
        match r {
            Ok(rows) => raw.extend(rows),
            Err(e) if failure.is_none() => failure = Some(e),
            Err(_) => {}
        }
    }
    let result = SweepResult::from_raw(kind, raw);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let mut meta = cfg.meta();
        if let Some(e) = &failure {
            meta.push(("partial".into(), e.to_string()));
        }
        result.table(&meta).save(&dir.join(format!("{}.csv", kind.name())))?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(result),
    }
}

pub fn sweep_n(cfg: &ExperimentConfig) -> Result<SweepResult> {
    run_sweep(cfg, SweepKind::Width, None, cfg.output_dir.as_deref())
}

pub fn sweep_eps(cfg: &ExperimentConfig) -> Result<SweepResult> {
    run_sweep(cfg, SweepKind::Step, None, cfg.output_dir.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_has_zero_residuals() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let per: Vec<Vec<f64>> = xs.iter().map(|x: &f64| vec![3.0 * x.powf(-0.5); 3]).collect();
        let f = fit_slope(&xs, &per).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-12));
        assert!(f.stderr < 1e-12);
    }

    #[test]
    fn slope_matches_two_point_formula() {
        let xs = [1.0, 10.0];
        let per = vec![vec![2.0], vec![20.0]];
        assert!((fit_slope(&xs, &per).unwrap().slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seed_scatter_enters_the_jackknife() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let per: Vec<Vec<f64>> = xs.iter().map(|x: &f64| vec![x.powf(-0.5), 2.0 * x.powf(-0.5), 1.5]).collect();
        let f = fit_slope(&xs, &per).unwrap();
        assert!(f.se_jackknife > 0.0);
        assert!(f.stderr >= f.se_ols && f.stderr >= f.se_jackknife);
    }

    #[test]
    fn zero_means_make_a_degenerate_report() {
        let raw = (0..4)
            .flat_map(|l| {
                (1..=2).map(move |s| RawRow {
                    level: 10.0 * (l + 1) as f64,
                    seed: s,
                    d_t: 0.0,
                    dev: [0.0; 3],
                })
            })
            .collect();
        let r = SweepResult::from_raw(SweepKind::Width, raw);
        assert!(r.fit.is_none());
        assert!(r.degenerate.as_ref().unwrap().contains("n=10"));
        assert!(matches!(r.check((-1.0, 0.0), 1.0), Err(Error::Assertion(_))));
    }

    #[test]
    fn aggregation_ignores_input_order() {
        let mk = |level: f64, seed: u64, d_t: f64| RawRow {
            level,
            seed,
            d_t,
            dev: [d_t; 3],
        };
        let a = vec![mk(1.0, 1, 0.5), mk(2.0, 1, 0.3), mk(1.0, 2, 0.7), mk(2.0, 2, 0.2), mk(4.0, 2, 0.1), mk(4.0, 1, 0.15)];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(SweepResult::from_raw(SweepKind::Step, a), SweepResult::from_raw(SweepKind::Step, b));
    }
}
