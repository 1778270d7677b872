//! Long-horizon particle runs checking global convergence of the MF flow.

use crate::error::{Error, Result};
use crate::io::MetricTable;
use crate::math::BoundConstants;
use crate::metrics::{stationarity_monitor, w1_lipschitz_profile, TrajectoryView};
use crate::mf::{euler_evolve, ParticleSystem, PriorBoundCertificate};
use crate::net::{RecordGrid, TrajectoryRecorder};

use super::config::ExperimentConfig;

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub seed: u64,
    pub times: Vec<f64>,
    pub risk: Vec<f64>,
    pub monitor: Vec<f64>,
    /// Running first-layer Lipschitz ratio in the initial point.
    pub lip_in_init: Vec<f64>,
    pub lip_in_time: f64,
    pub initial_risk: f64,
    pub terminal_risk: f64,
    /// Monitor at the recorded time closest to 1, and at T.
    pub monitor_start: f64,
    pub monitor_end: f64,
    /// `2 h K_T`.
    pub monotone_slack: f64,
    /// Largest increase of the risk between consecutive recorded times.
    pub max_risk_increase: f64,
    pub certificate: PriorBoundCertificate,
    pub risk_ok: bool,
    pub monitor_ok: bool,
    pub monotone_ok: bool,
}

impl ConvergenceReport {
    pub fn passed(&self) -> bool {
        self.risk_ok && self.monitor_ok && self.monotone_ok
    }

    pub fn summary(&self) -> String {
        format!(
            "seed {}: risk {:.3e} -> {:.3e} (ratio {:.3e}), monitor {:.3e} -> {:.3e}, max risk increase {:.1e} (slack {:.1e})",
            self.seed,
            self.initial_risk,
            self.terminal_risk,
            self.terminal_risk / self.initial_risk,
            self.monitor_start,
            self.monitor_end,
            self.max_risk_increase,
            self.monotone_slack
        )
    }

    pub fn table(&self, meta: &[(String, String)]) -> MetricTable {
        let mut t = MetricTable::new(&["t", "risk", "monitor", "lip_in_init"]);
        t.meta = meta.to_vec();
        t.meta.push(("seed".into(), self.seed.to_string()));
        t.meta.push(("lip_in_time".into(), format!("{:e}", self.lip_in_time)));
        t.meta.push(("passed".into(), self.passed().to_string()));
        for i in 0..self.times.len() {
            t.push_f64(&[self.times[i], self.risk[i], self.monitor[i], self.lip_in_init[i]]);
        }
        t
    }
}

/// Preconditions of the convergence theorem, checked before any compute.
pub fn check_preconditions(cfg: &ExperimentConfig, p0: &ParticleSystem) -> Result<()> {
    let spec = cfg.data.load()?;
    let model = &cfg.model;
    if !spec.label_fn_deterministic() && !model.loss.convex_in_second {
        return Err(Error::Validation(
            "convergence needs deterministic labels or a loss convex in its second argument".into(),
        ));
    }
    if model.schedule.xi3.is_zero() {
        if p0.weights.w3.iter().all(|v| *v == 0.0) {
            return Err(Error::Validation(
                "with xi3 = 0 the third layer stays at its initial value, which must not be identically zero".into(),
            ));
        }
    } else {
        let risk0 = p0.weights.risk(&spec, model)?;
        let y0 = model.phi3.value(0.0);
        let baseline: f64 = spec.atoms().iter().map(|a| a.p * model.loss.value(a.y, y0)).sum();
        if !(risk0 < baseline) {
            return Err(Error::Validation(format!(
                "with a trained third layer the initial risk {risk0:.4e} must be below E[L(Y, phi3(0))] = {baseline:.4e}"
            )));
        }
    }
    Ok(())
}

/// One convergence run per seed, on `m1 × m2` particles drawn from the embedding.
pub fn convergence_run(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceReport>> {
    cfg.validate()?;
    let spec = cfg.data.load()?;
    let inits: Vec<(u64, ParticleSystem)> = cfg
        .seeds
        .iter()
        .map(|&s| {
            let e = cfg.embedding(spec.dim(), s)?;
            Ok((s, ParticleSystem::new(e.sample(cfg.m1, cfg.m2)?)))
        })
        .collect::<Result<_>>()?;
    for (_, p0) in &inits {
        check_preconditions(cfg, p0)?;
    }
    let grid = RecordGrid::uniform(cfg.t_end, cfg.record_intervals)?;
    let k_t = BoundConstants::from_model(&cfg.model).k_t(cfg.t_end);
    let mut reports = Vec::with_capacity(inits.len());
    for (seed, p0) in inits {
        let mut rec = TrajectoryRecorder::default();
        let out = euler_evolve(&p0, &spec, &cfg.model, cfg.t_end, cfg.h, &grid, &mut rec)?;
        let view = TrajectoryView::from_recorder(rec)?;
        let risk = view
            .snapshots
            .iter()
            .map(|w| w.risk(&spec, &cfg.model))
            .collect::<Result<Vec<_>>>()?;
        let monitor: Vec<f64> = stationarity_monitor(&view, &spec, &cfg.model)?.into_iter().map(|p| p.1).collect();
        let w1: Vec<_> = view.snapshots.iter().map(|w| w.w1.clone()).collect();
        let (lip_in_init, lip_in_time) = if view.times.len() >= 2 && cfg.m1 >= 2 {
            let r = crate::metrics::w1_lipschitz_diagnostic(&view.times, &w1)?;
            (w1_lipschitz_profile(&view.times, &w1)?, r.lip_in_time)
        } else {
            (vec![0.0; view.times.len()], 0.0)
        };
        if lip_in_init.iter().any(|v| !v.is_finite()) || !lip_in_time.is_finite() {
            return Err(Error::Internal("first-layer Lipschitz diagnostic is not finite".into()));
        }
        let i1 = view
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1.0).abs().total_cmp(&(b.1 - 1.0).abs()))
            .map_or(0, |p| p.0);
        let (initial_risk, terminal_risk) = (risk[0], *risk.last().unwrap());
        let (monitor_start, monitor_end) = (monitor[i1], *monitor.last().unwrap());
        let monotone_slack = 2.0 * cfg.h * k_t;
        let max_risk_increase = risk.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        reports.push(ConvergenceReport {
            seed,
            risk_ok: terminal_risk <= cfg.risk_tol * initial_risk,
            monitor_ok: monitor_end <= cfg.monitor_ratio * monitor_start,
            monotone_ok: max_risk_increase <= monotone_slack,
            times: view.times,
            risk,
            monitor,
            lip_in_init,
            lip_in_time,
            initial_risk,
            terminal_risk,
            monitor_start,
            monitor_end,
            monotone_slack,
            max_risk_increase,
            certificate: out.certificate,
        });
    }
    Ok(reports)
}
