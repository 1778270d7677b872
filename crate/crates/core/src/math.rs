//! Activations, losses and learning-rate schedules.
//!
//! Every function carries its regularity constants as data (sup bounds,
//! Lipschitz constants of the derivative, non-vanishing derivatives), so the
//! regularity requirements of the mean-field theory can be checked by
//! [`validate_regularity`] instead of being taken on faith. The constants are
//! declared by the constructor and cross-checked on a finite grid.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type LossFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Number of grid points used by the regularity checks.
pub const GRID_POINTS: usize = 10_000;
/// Half-width of the regularity grid `[-GRID_RANGE, GRID_RANGE]`.
pub const GRID_RANGE: f64 = 10.0;

/// Sup of |tanh''| = 4 / (3 sqrt 3), attained at tanh(u) = ±1/sqrt 3.
const TANH_SECOND_DERIV_SUP: f64 = 0.769_800_358_919_501_3;

#[derive(Clone)]
pub enum ActivationKind {
    Tanh,
    Identity,
    Custom { value: ScalarFn, derivative: ScalarFn },
}

/// An activation together with its declared regularity constants.
#[derive(Clone)]
pub struct ActivationSpec {
    pub name: String,
    pub kind: ActivationKind,
    /// sup |φ|, possibly infinite.
    pub bound_value: f64,
    /// sup |φ'|.
    pub bound_deriv: f64,
    /// Lipschitz constant of φ'.
    pub lipschitz_deriv: f64,
    pub deriv_nonvanishing: bool,
}

impl fmt::Debug for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ActivationSpec")
            .field("name", &self.name)
            .field("bound_value", &self.bound_value)
            .field("bound_deriv", &self.bound_deriv)
            .field("lipschitz_deriv", &self.lipschitz_deriv)
            .field("deriv_nonvanishing", &self.deriv_nonvanishing)
            .finish()
    }
}

impl ActivationSpec {
    pub fn tanh() -> Self {
        Self {
            name: "tanh".into(),
            kind: ActivationKind::Tanh,
            bound_value: 1.0,
            bound_deriv: 1.0,
            lipschitz_deriv: TANH_SECOND_DERIV_SUP,
            deriv_nonvanishing: true,
        }
    }

    pub fn identity() -> Self {
        Self {
            name: "identity".into(),
            kind: ActivationKind::Identity,
            bound_value: f64::INFINITY,
            bound_deriv: 1.0,
            lipschitz_deriv: 0.0,
            deriv_nonvanishing: true,
        }
    }

    pub fn custom(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        bound_value: f64,
        bound_deriv: f64,
        lipschitz_deriv: f64,
        deriv_nonvanishing: bool,
    ) -> Self {
        Self {
            name: name.into(),
            kind: ActivationKind::Custom {
                value: Arc::new(value),
                derivative: Arc::new(derivative),
            },
            bound_value,
            bound_deriv,
            lipschitz_deriv,
            deriv_nonvanishing,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Self::tanh()),
            "identity" | "id" => Ok(Self::identity()),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }

    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        match &self.kind {
            ActivationKind::Tanh => u.tanh(),
            ActivationKind::Identity => u,
            ActivationKind::Custom { value, .. } => value(u),
        }
    }

    #[inline]
    pub fn deriv(&self, u: f64) -> f64 {
        match &self.kind {
            ActivationKind::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
            ActivationKind::Identity => 1.0,
            ActivationKind::Custom { derivative, .. } => derivative(u),
        }
    }

    /// Value and derivative in one call; shares the tanh evaluation.
    #[inline]
    pub fn value_deriv(&self, u: f64) -> (f64, f64) {
        match &self.kind {
            ActivationKind::Tanh => {
                let t = u.tanh();
                (t, 1.0 - t * t)
            }
            ActivationKind::Identity => (u, 1.0),
            ActivationKind::Custom { value, derivative } => (value(u), derivative(u)),
        }
    }

    /// Measured grid constants: (sup|φ|, sup|φ'|, Lip(φ'), min|φ'|, max FD defect).
    pub fn measure(&self) -> ActivationMeasurement {
        let grid = regularity_grid();
        let fd_step = 1e-4;
        let mut m = ActivationMeasurement {
            sup_value: 0.0,
            sup_deriv: 0.0,
            lip_deriv: 0.0,
            min_abs_deriv: f64::INFINITY,
            max_fd_defect: 0.0,
        };
        let mut prev: Option<(f64, f64)> = None;
        for &u in &grid {
            let (v, dv) = self.value_deriv(u);
            m.sup_value = m.sup_value.max(v.abs());
            m.sup_deriv = m.sup_deriv.max(dv.abs());
            m.min_abs_deriv = m.min_abs_deriv.min(dv.abs());
            if let Some((pu, pdv)) = prev {
                m.lip_deriv = m.lip_deriv.max((dv - pdv).abs() / (u - pu));
            }
            prev = Some((u, dv));
            let fd = (self.value(u + fd_step) - self.value(u - fd_step)) / (2.0 * fd_step);
            m.max_fd_defect = m.max_fd_defect.max((dv - fd).abs());
        }
        m
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ActivationMeasurement {
    pub sup_value: f64,
    pub sup_deriv: f64,
    pub lip_deriv: f64,
    pub min_abs_deriv: f64,
    pub max_fd_defect: f64,
}

/// Uniform grid of [`GRID_POINTS`] points on `[-GRID_RANGE, GRID_RANGE]`.
pub fn regularity_grid() -> Vec<f64> {
    let n = GRID_POINTS;
    (0..n)
        .map(|i| -GRID_RANGE + 2.0 * GRID_RANGE * i as f64 / (n - 1) as f64)
        .collect()
}

#[derive(Clone)]
pub enum LossKind {
    Huber { delta: f64 },
    Squared,
    Custom { value: LossFn, d2: LossFn },
}

/// A loss 𝓛(y, ŷ) with its derivative in the second argument.
#[derive(Clone)]
pub struct LossSpec {
    pub name: String,
    pub kind: LossKind,
    /// sup |∂₂𝓛|, possibly infinite.
    pub bound_d2: f64,
    /// Lipschitz constant of ∂₂𝓛 in the second argument.
    pub lipschitz_d2: f64,
    pub convex_in_second: bool,
    pub zero_grad_implies_zero_loss: bool,
}

impl fmt::Debug for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LossSpec")
            .field("name", &self.name)
            .field("bound_d2", &self.bound_d2)
            .field("lipschitz_d2", &self.lipschitz_d2)
            .field("convex_in_second", &self.convex_in_second)
            .field("zero_grad_implies_zero_loss", &self.zero_grad_implies_zero_loss)
            .finish()
    }
}

/// Huber loss of the residual `r = yhat - y` and its derivative in `yhat`.
pub fn huber_loss(y: f64, yhat: f64, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("huber delta must be positive, got {delta}")));
    }
    if !y.is_finite() || !yhat.is_finite() {
        return Err(Error::Domain(format!("non-finite huber input (y={y}, yhat={yhat})")));
    }
    Ok(huber_unchecked(yhat - y, delta))
}

#[inline]
fn huber_unchecked(r: f64, delta: f64) -> (f64, f64) {
    if r.abs() <= delta {
        (0.5 * r * r, r)
    } else {
        (delta * (r.abs() - 0.5 * delta), delta * r.signum())
    }
}

impl LossSpec {
    pub fn huber(delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Config(format!("huber_delta must be positive, got {delta}")));
        }
        Ok(Self {
            name: "huber".into(),
            kind: LossKind::Huber { delta },
            bound_d2: delta,
            lipschitz_d2: 1.0,
            convex_in_second: true,
            zero_grad_implies_zero_loss: true,
        })
    }

    pub fn squared() -> Self {
        Self {
            name: "squared".into(),
            kind: LossKind::Squared,
            bound_d2: f64::INFINITY,
            lipschitz_d2: 1.0,
            convex_in_second: true,
            zero_grad_implies_zero_loss: true,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        name: impl Into<String>,
        value: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        bound_d2: f64,
        lipschitz_d2: f64,
        convex_in_second: bool,
        zero_grad_implies_zero_loss: bool,
    ) -> Self {
        Self {
            name: name.into(),
            kind: LossKind::Custom {
                value: Arc::new(value),
                d2: Arc::new(d2),
            },
            bound_d2,
            lipschitz_d2,
            convex_in_second,
            zero_grad_implies_zero_loss,
        }
    }

    #[inline]
    pub fn value(&self, y: f64, yhat: f64) -> f64 {
        match &self.kind {
            LossKind::Huber { delta } => huber_unchecked(yhat - y, *delta).0,
            LossKind::Squared => 0.5 * (yhat - y) * (yhat - y),
            LossKind::Custom { value, .. } => value(y, yhat),
        }
    }

    /// ∂₂𝓛(y, ŷ).
    #[inline]
    pub fn d2(&self, y: f64, yhat: f64) -> f64 {
        match &self.kind {
            LossKind::Huber { delta } => huber_unchecked(yhat - y, *delta).1,
            LossKind::Squared => yhat - y,
            LossKind::Custom { d2, .. } => d2(y, yhat),
        }
    }

    /// Points `(y, ŷ)` of the loss test grid (201 × 201 on `[-10, 10]²`).
    pub fn test_grid() -> Vec<(f64, f64)> {
        let n = 201;
        let pts: Vec<f64> = (0..n)
            .map(|i| -GRID_RANGE + 2.0 * GRID_RANGE * i as f64 / (n - 1) as f64)
            .collect();
        let mut out = Vec::with_capacity(n * n);
        for &y in &pts {
            for &yh in &pts {
                out.push((y, yh));
            }
        }
        out
    }

    pub fn measure(&self) -> LossMeasurement {
        let n = 201;
        let pts: Vec<f64> = (0..n)
            .map(|i| -GRID_RANGE + 2.0 * GRID_RANGE * i as f64 / (n - 1) as f64)
            .collect();
        let mut m = LossMeasurement {
            min_value: f64::INFINITY,
            sup_d2: 0.0,
            lip_d2: 0.0,
            zero_grad_max_loss: 0.0,
        };
        for &y in &pts {
            let mut prev: Option<(f64, f64)> = None;
            for &yh in &pts {
                let v = self.value(y, yh);
                let g = self.d2(y, yh);
                m.min_value = m.min_value.min(v);
                m.sup_d2 = m.sup_d2.max(g.abs());
                if g.abs() < 1e-12 {
                    m.zero_grad_max_loss = m.zero_grad_max_loss.max(v);
                }
                if let Some((pyh, pg)) = prev {
                    m.lip_d2 = m.lip_d2.max((g - pg).abs() / (yh - pyh));
                }
                prev = Some((yh, g));
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossMeasurement {
    pub min_value: f64,
    pub sup_d2: f64,
    pub lip_d2: f64,
    /// Largest loss value among grid points with |∂₂𝓛| < 1e-12.
    pub zero_grad_max_loss: f64,
}

/// A learning-rate schedule ξ : [0, ∞) → [0, ∞).
#[derive(Clone)]
pub enum Schedule {
    Constant(f64),
    Custom {
        f: ScalarFn,
        bound: f64,
        lipschitz: f64,
    },
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Constant(c) => write!(f, "Constant({c})"),
            Schedule::Custom { bound, lipschitz, .. } => {
                write!(f, "Custom {{ bound: {bound}, lipschitz: {lipschitz} }}")
            }
        }
    }
}

impl Schedule {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Schedule::Constant(c) => *c,
            Schedule::Custom { f, .. } => f(t),
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            Schedule::Constant(c) => c.abs(),
            Schedule::Custom { bound, .. } => *bound,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Schedule::Constant(_) => 0.0,
            Schedule::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Schedule::Constant(c) if *c == 0.0)
    }

    /// Parses a config value: a non-negative constant or `zero`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "zero" {
            return Ok(Schedule::Constant(0.0));
        }
        let c: f64 = s
            .parse()
            .map_err(|_| Error::Config(format!("schedule must be a constant or `zero`, got `{s}`")))?;
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::Config(format!("schedule constant must be non-negative, got {c}")));
        }
        Ok(Schedule::Constant(c))
    }
}

#[derive(Debug, Clone)]
pub struct ScheduleSpec {
    pub xi1: Schedule,
    pub xi2: Schedule,
    pub xi3: Schedule,
}

impl ScheduleSpec {
    pub fn constant(xi1: f64, xi2: f64, xi3: f64) -> Self {
        Self {
            xi1: Schedule::Constant(xi1),
            xi2: Schedule::Constant(xi2),
            xi3: Schedule::Constant(xi3),
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0, 0.0, 0.0)
    }

    pub fn bound(&self) -> f64 {
        self.xi1.bound().max(self.xi2.bound()).max(self.xi3.bound())
    }

    pub fn lipschitz(&self) -> f64 {
        self.xi1
            .lipschitz()
            .max(self.xi2.lipschitz())
            .max(self.xi3.lipschitz())
    }

    #[inline]
    pub fn at(&self, t: f64) -> [f64; 3] {
        [self.xi1.eval(t), self.xi2.eval(t), self.xi3.eval(t)]
    }

    pub fn all_zero(&self) -> bool {
        self.xi1.is_zero() && self.xi2.is_zero() && self.xi3.is_zero()
    }
}

/// Activations, loss and schedules of the three-layer network.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub phi1: ActivationSpec,
    pub phi2: ActivationSpec,
    pub phi3: ActivationSpec,
    pub loss: LossSpec,
    pub schedule: ScheduleSpec,
}

impl Default for ModelSpec {
    /// tanh / tanh / identity with Huber(δ = 1) and unit schedules.
    fn default() -> Self {
        Self {
            phi1: ActivationSpec::tanh(),
            phi2: ActivationSpec::tanh(),
            phi3: ActivationSpec::identity(),
            loss: LossSpec::huber(1.0).expect("positive delta"),
            schedule: ScheduleSpec::constant(1.0, 1.0, 1.0),
        }
    }
}

impl ModelSpec {
    pub fn with_schedule(mut self, schedule: ScheduleSpec) -> Self {
        self.schedule = schedule;
        self
    }

    /// Bound on |Δ₃| (and on |Δ₂| per unit of |w₃|), times the schedule bound.
    pub fn drift_constant(&self) -> f64 {
        let s = &self.schedule;
        let common = self.loss.bound_d2 * self.phi3.bound_deriv;
        let k3 = s.xi3.bound() * common * self.phi2.bound_value;
        let k2 = s.xi2.bound() * common * self.phi2.bound_deriv * self.phi1.bound_value;
        k3.max(k2)
    }
}

/// The generic regularity constant K and its time-growth K_T = K(1 + T^K).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub k: f64,
}

impl BoundConstants {
    pub fn new(k: f64) -> Result<Self> {
        if !(k >= 0.0) {
            return Err(Error::Domain(format!("K must be non-negative, got {k}")));
        }
        Ok(Self { k })
    }

    /// K from the model's drift bounds.
    pub fn from_model(model: &ModelSpec) -> Self {
        Self {
            k: model.drift_constant(),
        }
    }

    pub fn k_t(&self, t: f64) -> f64 {
        self.k * (1.0 + t.max(0.0).powf(self.k))
    }
}

/// One checked clause of the regularity assumption.
#[derive(Debug, Clone)]
pub struct Clause {
    pub name: String,
    pub passed: bool,
    /// Declared constant (may be infinite).
    pub declared: f64,
    /// Constant measured on the grid.
    pub measured: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub clauses: Vec<Clause>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Clause> {
        self.clauses.iter().filter(|c| !c.passed)
    }

    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }

    pub fn summary(&self) -> String {
        let failed: Vec<String> = self
            .failures()
            .map(|c| match &c.note {
                Some(n) => format!("{} ({n})", c.name),
                None => c.name.clone(),
            })
            .collect();
        if failed.is_empty() {
            "all clauses pass".to_string()
        } else {
            format!("failed: {}", failed.join(", "))
        }
    }

    fn push(&mut self, name: String, declared: f64, measured: f64, note: Option<String>) {
        // A clause passes when the declared constant is finite and the grid
        // measurement does not contradict it.
        let tol = 1e-9 * (1.0 + declared.abs());
        let passed = declared.is_finite() && measured <= declared + tol;
        self.clauses.push(Clause {
            name,
            passed,
            declared,
            measured,
            note,
        });
    }
}

/// Checks every clause of the regularity assumption on the test grid.
pub fn validate_regularity(model: &ModelSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let acts = [(1, &model.phi1), (2, &model.phi2), (3, &model.phi3)];
    for (i, act) in acts {
        let m = act.measure();
        if i != 3 {
            let note = (!act.bound_value.is_finite()).then(|| format!("sup|φ{i}| = ∞"));
            report.push(format!("φ{i} K-bounded"), act.bound_value, m.sup_value, note);
        }
        report.push(format!("φ{i}' K-bounded"), act.bound_deriv, m.sup_deriv, None);
        report.push(format!("φ{i}' K-Lipschitz"), act.lipschitz_deriv, m.lip_deriv, None);
        // Central differences at step 1e-4 may deviate by Lip(φ')·h, plus roundoff.
        let fd_allow = 10.0 * act.lipschitz_deriv * 1e-4 + 1e-9;
        report.push(
            format!("φ{i}' consistent with φ{i}"),
            fd_allow,
            m.max_fd_defect,
            None,
        );
        if i != 1 {
            let ok = act.deriv_nonvanishing && m.min_abs_deriv > 0.0;
            report.clauses.push(Clause {
                name: format!("φ{i}' non-zero everywhere"),
                passed: ok,
                declared: if act.deriv_nonvanishing { 1.0 } else { 0.0 },
                measured: m.min_abs_deriv,
                note: (!ok).then(|| "derivative vanishes or not declared non-vanishing".into()),
            });
        }
    }

    let lm = model.loss.measure();
    report.clauses.push(Clause {
        name: "𝓛 non-negative".into(),
        passed: lm.min_value >= 0.0,
        declared: 0.0,
        measured: lm.min_value,
        note: None,
    });
    let note = (!model.loss.bound_d2.is_finite())
        .then(|| "unbounded ∂2𝓛; admissible only with the extra proviso |Y| ≤ K".to_string());
    report.push("∂2𝓛 K-bounded".into(), model.loss.bound_d2, lm.sup_d2, note);
    report.push("∂2𝓛 K-Lipschitz".into(), model.loss.lipschitz_d2, lm.lip_d2, None);
    if model.loss.zero_grad_implies_zero_loss {
        report.clauses.push(Clause {
            name: "∂2𝓛 = 0 implies 𝓛 = 0".into(),
            passed: lm.zero_grad_max_loss < 1e-10,
            declared: 1e-10,
            measured: lm.zero_grad_max_loss,
            note: None,
        });
    }

    let times: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.1).collect();
    for (i, xi) in [(1, &model.schedule.xi1), (2, &model.schedule.xi2), (3, &model.schedule.xi3)] {
        let mut sup = 0.0f64;
        let mut lip = 0.0f64;
        let mut min = f64::INFINITY;
        for w in times.windows(2) {
            let (a, b) = (xi.eval(w[0]), xi.eval(w[1]));
            sup = sup.max(a.abs()).max(b.abs());
            min = min.min(a).min(b);
            lip = lip.max((b - a).abs() / (w[1] - w[0]));
        }
        report.clauses.push(Clause {
            name: format!("ξ{i} non-negative"),
            passed: min >= 0.0,
            declared: 0.0,
            measured: min,
            note: None,
        });
        report.push(format!("ξ{i} K-bounded"), xi.bound(), sup, None);
        report.push(format!("ξ{i} K-Lipschitz"), xi.lipschitz(), lip, None);
    }
    report
}
