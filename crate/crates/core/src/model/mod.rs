//! Problem data, structural hypotheses and their sampled certificates.

mod tail;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{
    Bindings, DiffError, EvalError, ExprFn, Params, ScalarFunctionExpr, UnivariateFn, Var, VarSet,
};

pub use tail::{g_tail, g_tail_with, invert_tail, invert_tail_with, keller_osserman, InvertOptions, KoReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{name} must lie in (0,2], got {value}")]
    InvalidExponent { name: &'static str, value: f64 },
    #[error("invalid boundary condition: {0}")]
    InvalidBoundary(String),
    #[error("invalid sample grid: {0}")]
    InvalidGrid(String),
    #[error("`{0}` is required for this check but was not supplied")]
    MissingFunction(&'static str),
    #[error("{what} must be positive, got {value} at t = {t}")]
    NonPositive { what: &'static str, t: f64, value: f64 },
    #[error("tail test inconclusive: fitted decay exponent {exponent:.6} is too close to -1")]
    Inconclusive { exponent: f64 },
    #[error("tail integral from {s} diverges (fitted decay exponent {exponent:.6})")]
    TailDiverges { s: f64, exponent: f64 },
    #[error("tail value {z} outside the invertible range (0, {max})")]
    OutOfRange { z: f64, max: f64 },
}

/// How the coupling is given: a potential `F(x,u,v)` or its two partials.
#[derive(Clone, Debug)]
pub enum Coupling {
    Potential(ScalarFunctionExpr),
    Partials {
        fu: ScalarFunctionExpr,
        fv: ScalarFunctionExpr,
    },
}

/// Nonlinearities, coefficients and exponents of the system
/// `Δu + b1|∇u|^q1 = F_u`, `Δv + b2|∇v|^q2 = F_v`.
///
/// Coefficients are expressions in `x` (or `r`); `f1`, `f2`, `g` are in `t`.
#[derive(Clone, Debug)]
pub struct NonlinearitySpec {
    pub coupling: Coupling,
    fu: ScalarFunctionExpr,
    fv: ScalarFunctionExpr,
    pub a1: ScalarFunctionExpr,
    pub a2: ScalarFunctionExpr,
    pub a1_sq: ScalarFunctionExpr,
    pub a2_sq: ScalarFunctionExpr,
    pub f1: Option<ScalarFunctionExpr>,
    pub f2: Option<ScalarFunctionExpr>,
    pub g: Option<ScalarFunctionExpr>,
    pub b1: ScalarFunctionExpr,
    pub b2: ScalarFunctionExpr,
    pub q1: f64,
    pub q2: f64,
}

pub fn state_vars() -> VarSet {
    VarSet::of(&[Var::X, Var::R, Var::U, Var::V])
}

pub fn coefficient_vars() -> VarSet {
    VarSet::of(&[Var::X, Var::R])
}

pub fn profile_vars() -> VarSet {
    VarSet::of(&[Var::T])
}

impl NonlinearitySpec {
    /// Spec with unit `a`'s, zero convection and `q1 = q2 = 1`.
    pub fn from_coupling(coupling: Coupling) -> Result<Self, ModelError> {
        let (fu, fv) = match &coupling {
            Coupling::Potential(f) => (f.differentiate(Var::U)?, f.differentiate(Var::V)?),
            Coupling::Partials { fu, fv } => (fu.clone(), fv.clone()),
        };
        let one = ScalarFunctionExpr::constant(1.0);
        let zero = ScalarFunctionExpr::constant(0.0);
        Ok(NonlinearitySpec {
            coupling,
            fu,
            fv,
            a1: one.clone(),
            a2: one.clone(),
            a1_sq: one.clone(),
            a2_sq: one,
            f1: None,
            f2: None,
            g: None,
            b1: zero.clone(),
            b2: zero,
            q1: 1.0,
            q2: 1.0,
        })
    }

    pub fn from_potential(f: ScalarFunctionExpr) -> Result<Self, ModelError> {
        Self::from_coupling(Coupling::Potential(f))
    }

    pub fn from_partials(fu: ScalarFunctionExpr, fv: ScalarFunctionExpr) -> Result<Self, ModelError> {
        Self::from_coupling(Coupling::Partials { fu, fv })
    }

    /// Parses partials written over `x, r, u, v`.
    pub fn parse_partials(fu: &str, fv: &str, params: &Params) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let fu = ScalarFunctionExpr::parse(fu, state_vars(), params)?;
        let fv = ScalarFunctionExpr::parse(fv, state_vars(), params)?;
        Ok(Self::from_partials(fu, fv)?)
    }

    /// The example family `c1 u^ρ + c2 u^σ v^γ + c3 v^θ` as a potential.
    pub fn power_family(c: [f64; 3], rho: f64, sigma: f64, gamma: f64, theta: f64) -> Result<Self, ModelError> {
        let mut params = Params::new();
        for (k, v) in [("c1", c[0]), ("c2", c[1]), ("c3", c[2]), ("rho", rho), ("sigma", sigma), ("gamma", gamma), ("theta", theta)] {
            params.insert(k.to_string(), v);
        }
        let f = ScalarFunctionExpr::parse(
            "c1*u^rho + c2*u^sigma*v^gamma + c3*v^theta",
            state_vars(),
            &params,
        )
        .expect("family template parses");
        Self::from_potential(f)
    }

    pub fn fu(&self) -> &ScalarFunctionExpr {
        &self.fu
    }

    pub fn fv(&self) -> &ScalarFunctionExpr {
        &self.fv
    }

    pub fn with_profiles(mut self, f1: ScalarFunctionExpr, f2: ScalarFunctionExpr, g: ScalarFunctionExpr) -> Self {
        self.f1 = Some(f1);
        self.f2 = Some(f2);
        self.g = Some(g);
        self
    }

    pub fn with_convection(mut self, b1: ScalarFunctionExpr, q1: f64, b2: ScalarFunctionExpr, q2: f64) -> Self {
        self.b1 = b1;
        self.b2 = b2;
        self.q1 = q1;
        self.q2 = q2;
        self
    }

    pub fn with_weights(
        mut self,
        a1: ScalarFunctionExpr,
        a2: ScalarFunctionExpr,
        a1_sq: ScalarFunctionExpr,
        a2_sq: ScalarFunctionExpr,
    ) -> Self {
        self.a1 = a1;
        self.a2 = a2;
        self.a1_sq = a1_sq;
        self.a2_sq = a2_sq;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, q) in [("q1", self.q1), ("q2", self.q2)] {
            if !(q > 0.0 && q <= 2.0) {
                return Err(ModelError::InvalidExponent { name, value: q });
            }
        }
        Ok(())
    }

    /// `F_u(x,u,v)`, `F_v(x,u,v)` at one point.
    pub fn partials_at(&self, x: f64, u: f64, v: f64) -> Result<(f64, f64), EvalError> {
        let b = Bindings::at_point(x).with(Var::U, u).with(Var::V, v);
        Ok((self.fu.eval(&b)?, self.fv.eval(&b)?))
    }

    /// Strict positivity of `a1, a2, a1_sq, a2_sq` at the sampled points.
    pub fn check_coefficients(&self, xs: &[f64]) -> Result<CertificateReport, ModelError> {
        let mut report = CertificateReport::new();
        for (name, c) in [("a1 > 0", &self.a1), ("a2 > 0", &self.a2), ("a1_sq > 0", &self.a1_sq), ("a2_sq > 0", &self.a2_sq)] {
            let mut check = Check::new(name);
            for &x in xs {
                check.observe(strict(c.eval(&Bindings::at_point(x))?), &[("x", x)]);
            }
            report.push(check);
        }
        report.samples_used = 4 * xs.len();
        Ok(report)
    }
}

/// Boundary behaviour of the pair `(u, v)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCondition {
    Finite { alpha: f64, beta: f64 },
    Infinite,
    /// `u` blows up, `v = beta` on the boundary.
    SemifiniteU { beta: f64 },
    /// `v` blows up, `u = alpha` on the boundary.
    SemifiniteV { alpha: f64 },
}

impl BoundaryCondition {
    pub fn validate(&self) -> Result<(), ModelError> {
        let data: &[(&str, f64)] = match self {
            BoundaryCondition::Finite { alpha, beta } => &[("alpha", *alpha), ("beta", *beta)],
            BoundaryCondition::Infinite => &[],
            BoundaryCondition::SemifiniteU { beta } => &[("beta", *beta)],
            BoundaryCondition::SemifiniteV { alpha } => &[("alpha", *alpha)],
        };
        for (name, value) in data {
            if !(value.is_finite() && *value > 0.0) {
                return Err(ModelError::InvalidBoundary(format!(
                    "{name} must lie in (0, inf), got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// One named inequality with its worst sampled slack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub worst_margin: f64,
    pub worst_point: BTreeMap<String, f64>,
}

impl Check {
    pub fn new(name: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            worst_margin: f64::MAX,
            worst_point: BTreeMap::new(),
        }
    }

    /// Records a margin; NaN counts as a violation.
    pub fn observe(&mut self, margin: f64, point: &[(&str, f64)]) {
        let margin = if margin.is_nan() { f64::MIN } else { margin };
        if margin < self.worst_margin || self.worst_point.is_empty() {
            self.worst_margin = margin;
            self.worst_point = point.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        }
    }

    pub fn passed(&self) -> bool {
        self.worst_margin >= 0.0
    }
}

/// Slack of a strict inequality `value > 0`: zero and negatives fail.
pub fn strict(value: f64) -> f64 {
    if value > 0.0 {
        value
    } else {
        value.min(-f64::MIN_POSITIVE)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub passed: bool,
    pub checks: Vec<Check>,
    pub samples_used: usize,
}

impl CertificateReport {
    pub fn new() -> Self {
        CertificateReport {
            passed: true,
            checks: Vec::new(),
            samples_used: 0,
        }
    }

    pub fn push(&mut self, check: Check) {
        self.passed &= check.passed();
        self.checks.push(check);
    }

    /// Appends `other`'s checks with `prefix` prepended to their names.
    pub fn absorb(&mut self, prefix: &str, other: CertificateReport) {
        for mut c in other.checks {
            c.name = format!("{prefix}{}", c.name);
            self.push(c);
        }
        self.samples_used += other.samples_used;
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

const ZERO_TOL: f64 = 1e-12;

/// Sampled membership test for the class of profiles with `h(0) = 0`,
/// `h` nondecreasing and `h > 0` away from zero.
pub fn check_f_class(h: &dyn UnivariateFn, t_grid: &[f64]) -> Result<CertificateReport, ModelError> {
    if t_grid.first() != Some(&0.0) {
        return Err(ModelError::InvalidGrid("grid must start at 0".into()));
    }
    if t_grid.windows(2).any(|w| !(w[0] < w[1])) || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(ModelError::InvalidGrid("grid must be finite and strictly increasing".into()));
    }
    let values = t_grid.iter().map(|&t| h.value(t)).collect::<Result<Vec<_>, _>>()?;
    let mut report = CertificateReport::new();

    let mut zero = Check::new("h(0)=0");
    let h0 = values[0].abs();
    zero.observe(if h0 <= ZERO_TOL { 0.0 } else { -h0 }, &[("t", 0.0)]);
    report.push(zero);

    let mut monotone = Check::new("h nondecreasing");
    for (k, w) in values.windows(2).enumerate() {
        monotone.observe(w[1] - w[0], &[("t", t_grid[k + 1])]);
    }
    if values.len() == 1 {
        monotone.observe(0.0, &[("t", 0.0)]);
    }
    report.push(monotone);

    let mut positive = Check::new("h > 0");
    for (t, h) in t_grid.iter().zip(&values).skip(1) {
        positive.observe(strict(*h), &[("t", *t)]);
    }
    if values.len() == 1 {
        positive.observe(0.0, &[("t", 0.0)]);
    }
    report.push(positive);
    report.samples_used = t_grid.len();
    Ok(report)
}

/// `ρ > 2, θ > 2, σ + γ > 2, σ < 2, γ < 2`.
pub fn check_exponent_family(rho: f64, sigma: f64, gamma: f64, theta: f64) -> bool {
    exponent_family_report(rho, sigma, gamma, theta).passed
}

/// The exponent constraints with their slacks.
pub fn exponent_family_report(rho: f64, sigma: f64, gamma: f64, theta: f64) -> CertificateReport {
    let mut report = CertificateReport::new();
    let point = [("rho", rho), ("sigma", sigma), ("gamma", gamma), ("theta", theta)];
    for (name, slack) in [
        ("rho > 2", rho - 2.0),
        ("theta > 2", theta - 2.0),
        ("sigma + gamma > 2", sigma + gamma - 2.0),
        ("sigma < 2", 2.0 - sigma),
        ("gamma < 2", 2.0 - gamma),
    ] {
        let mut c = Check::new(name);
        c.observe(strict(slack), &point);
        report.push(c);
    }
    report.samples_used = 1;
    report
}

/// Sorted union of `{0}` and the positive samples, for F-class checks.
fn with_origin(ts: &[f64]) -> Vec<f64> {
    let mut grid: Vec<f64> = std::iter::once(0.0).chain(ts.iter().copied().filter(|t| *t > 0.0)).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Samples the lower bounds `F_u ≥ a1 f1(t)`, `F_v ≥ a2 f2(s)` (equality up
/// to rounding is accepted), the strict
/// domination `g(t) > max(F_u(x,t,t)/a1_sq, F_v(x,t,t)/a2_sq)` and the
/// F-class membership of `f1`, `f2`, `g` over the tensor grid.
pub fn verify_structural(
    spec: &NonlinearitySpec,
    xs: &[f64],
    ts: &[f64],
    ss: &[f64],
) -> Result<CertificateReport, ModelError> {
    if xs.is_empty() || ts.is_empty() || ss.is_empty() {
        return Err(ModelError::InvalidGrid("sample grids must be non-empty".into()));
    }
    if ts.iter().chain(ss).any(|t| !(t.is_finite() && *t > 0.0)) || xs.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::InvalidGrid("t and s samples must be finite and positive".into()));
    }
    let f1 = spec.f1.as_ref().ok_or(ModelError::MissingFunction("f1"))?;
    let f2 = spec.f2.as_ref().ok_or(ModelError::MissingFunction("f2"))?;
    let g = spec.g.as_ref().ok_or(ModelError::MissingFunction("g"))?;

    let mut report = CertificateReport::new();
    let mut lower_u = Check::new("F_u >= a1 f1");
    let mut lower_v = Check::new("F_v >= a2 f2");
    let mut dominate = Check::new("g > max F_i(x,t,t)/a_i_sq");
    let mut samples = 0;
    for &x in xs {
        let at_x = Bindings::at_point(x);
        let a1 = spec.a1.eval(&at_x)?;
        let a2 = spec.a2.eval(&at_x)?;
        let a1_sq = spec.a1_sq.eval(&at_x)?;
        let a2_sq = spec.a2_sq.eval(&at_x)?;
        for &t in ts {
            let f1t = f1.eval1(Var::T, t)?;
            for &s in ss {
                let (fu, fv) = spec.partials_at(x, t, s)?;
                let f2s = f2.eval1(Var::T, s)?;
                let point = [("x", x), ("t", t), ("s", s)];
                let (lu, lv) = (a1 * f1t, a2 * f2s);
                lower_u.observe(fu - lu + ZERO_TOL * (1.0 + lu.abs()), &point);
                lower_v.observe(fv - lv + ZERO_TOL * (1.0 + lv.abs()), &point);
                samples += 1;
            }
            let (fu, fv) = spec.partials_at(x, t, t)?;
            let gt = g.eval1(Var::T, t)?;
            let rhs = (fu / a1_sq).max(fv / a2_sq);
            let slack = ZERO_TOL * (1.0 + gt.abs());
            dominate.observe(strict(gt - rhs - slack), &[("x", x), ("t", t)]);
        }
    }
    report.push(lower_u);
    report.push(lower_v);
    report.push(dominate);
    report.samples_used = samples;

    let grid_t = with_origin(ts);
    let grid_s = with_origin(ss);
    report.absorb("f1: ", check_f_class(&ExprFn::new(f1, Var::T), &grid_t)?);
    report.absorb("f2: ", check_f_class(&ExprFn::new(f2, Var::T), &grid_s)?);
    report.absorb("g: ", check_f_class(&ExprFn::new(g, Var::T), &grid_t)?);
    Ok(report)
}
