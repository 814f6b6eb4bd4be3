//! Campaigns built on the solver: the finite sandwich, monotone boundary
//! escalation (infinite and semifinite data), comparison envelopes,
//! blow-up rate fits and the expanding-ball construction on all of space.

mod entire;
mod escalation;

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{Bindings, ScalarFunctionExpr, Var};
use crate::mesh::{GridFunction, Mesh, MeshError};
use crate::model::{verify_structural, CertificateReport, Check, Coupling, ModelError, NonlinearitySpec};
use crate::quad::linear_fit;
use crate::solver::{newton_solve, verify_subsuper, Dirichlet, DiscreteSystem, SolveOptions, SolveResult, SolverError};

pub use entire::{entire_campaign, radial_supersolution_z, radial_supersolution_z_with, BallRecord, EntireOptions, EntireOutcome};
pub use escalation::{
    infinite_campaign, semifinite_campaign, BoundaryTrace, Envelopes, EscalationOptions, EscalationTrace, LevelRecord,
    SemifiniteOutcome, TraceNode, TRACE_NODES,
};

#[derive(Debug, Clone, Error)]
pub enum DriverError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("structural gate failed: {}", failed_names(.0))]
    GateFailed(Box<CertificateReport>),
    #[error("barrier solve failed: {0}")]
    BarrierFailure(String),
    #[error("sub/supersolution certificate failed: {}", failed_names(.0))]
    CertificateFailure(Box<CertificateReport>),
    #[error("no convergence at boundary level {level} (scaled residual {residual:e})")]
    NonConvergence { level: f64, residual: f64 },
    #[error("escalation lost monotonicity at level {level}: min(u_next - u_prev) = {margin:e}")]
    MonotonicityViolation {
        level: f64,
        margin: f64,
        trace: Box<EscalationTrace>,
    },
    #[error("fixed component exceeds its boundary value {bound} at level {level}, node {node}: {value}")]
    BoundTrespass { level: f64, node: usize, value: f64, bound: f64 },
    #[error("rate window holds {found} nodes, at least {needed} are needed")]
    WindowTooSparse { found: usize, needed: usize },
    #[error("no decaying radial supersolution: {0}")]
    SlowDecay(String),
    #[error("barrier ordering violated on ball {ball}: {what} (margin {margin:e})")]
    BarrierOrderViolation { ball: usize, what: &'static str, margin: f64 },
}

fn failed_names(r: &CertificateReport) -> String {
    r.failed_checks().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    U,
    V,
}

impl Component {
    pub fn index(self) -> usize {
        match self {
            Component::U => 0,
            Component::V => 1,
        }
    }

    pub fn other(self) -> Component {
        match self {
            Component::U => Component::V,
            Component::V => Component::U,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::U => "u",
            Component::V => "v",
        }
    }
}

/// Sample grids on which the structural hypotheses are checked before a
/// campaign is allowed to run.
#[derive(Clone, Debug, Serialize)]
pub struct StructuralGate {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    pub ss: Vec<f64>,
}

impl StructuralGate {
    pub fn run(&self, spec: &NonlinearitySpec) -> Result<CertificateReport, DriverError> {
        let report = verify_structural(spec, &self.xs, &self.ts, &self.ss)?;
        if report.passed {
            Ok(report)
        } else {
            Err(DriverError::GateFailed(Box::new(report)))
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct FiniteOptions {
    pub solve: SolveOptions,
    pub r_trunc: Option<f64>,
    pub gate: Option<StructuralGate>,
}

#[derive(Clone, Debug)]
pub struct FiniteOutcome {
    pub psi: GridFunction,
    pub solution: SolveResult,
    /// Sub/supersolution report for `(ψ, ψ)` and `(M, M)`.
    pub certificate: CertificateReport,
    /// `ψ − tol ≤ u, v ≤ M + tol` at the computed solution.
    pub sandwich: CertificateReport,
    pub gate: Option<CertificateReport>,
}

/// Scalar problem `Δψ = (a1_sq + a2_sq) g(ψ)` posed as a decoupled pair.
fn barrier_spec(spec: &NonlinearitySpec) -> Result<NonlinearitySpec, DriverError> {
    let g = spec.g.as_ref().ok_or(ModelError::MissingFunction("g"))?;
    let weight = spec.a1_sq.add(&spec.a2_sq);
    let fu = weight.mul(&g.rename(Var::T, Var::U));
    let fv = weight.mul(&g.rename(Var::T, Var::V));
    Ok(NonlinearitySpec::from_coupling(Coupling::Partials { fu, fv })?)
}

/// Constant-datum sandwich: solve the barrier `ψ` with data `m`, certify
/// `(ψ, ψ)` below `(M, M)` and solve the system from their midpoint.
pub fn finite_campaign(
    spec: Arc<NonlinearitySpec>,
    mesh: Arc<Mesh>,
    alpha: f64,
    beta: f64,
    m: f64,
    big_m: f64,
    opts: &FiniteOptions,
) -> Result<FiniteOutcome, DriverError> {
    if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(DriverError::Precondition(format!("alpha, beta must lie in (0, inf), got {alpha}, {beta}")));
    }
    if !(m > 0.0 && m < alpha.min(beta)) {
        return Err(DriverError::Precondition(format!("need 0 < m < min(alpha, beta), got m = {m}")));
    }
    if !(big_m > alpha.max(beta) && big_m.is_finite()) {
        return Err(DriverError::Precondition(format!("need M > max(alpha, beta), got M = {big_m}")));
    }
    let gate = opts.gate.as_ref().map(|g| g.run(&spec)).transpose()?;

    let barrier = DiscreteSystem::new(Arc::new(barrier_spec(&spec)?), mesh.clone(), Dirichlet::uniform(m, m), f64::INFINITY)?;
    let flat = GridFunction::constant(mesh.clone(), m)?;
    let psi_res = newton_solve(&barrier, (&flat, &flat), &opts.solve)
        .map_err(|e| DriverError::BarrierFailure(e.to_string()))?;
    if !psi_res.converged {
        return Err(DriverError::BarrierFailure(format!(
            "Newton stopped at scaled residual {:e}",
            psi_res.residual_norm
        )));
    }
    let psi = psi_res.u;
    if let Some((i, p)) = psi.values().iter().enumerate().find(|(_, p)| **p <= 0.0) {
        return Err(DriverError::BarrierFailure(format!(
            "barrier is not positive: psi = {p} at x = {}",
            mesh.nodes()[i]
        )));
    }

    let r_trunc = opts.r_trunc.unwrap_or(f64::INFINITY);
    let sys = DiscreteSystem::new(spec, mesh.clone(), Dirichlet::uniform(alpha, beta), r_trunc)?;
    let top = GridFunction::constant(mesh.clone(), big_m)?;
    let certificate = verify_subsuper(&sys, (&psi, &psi), (&top, &top), opts.solve.tol)?;
    if !certificate.passed {
        return Err(DriverError::CertificateFailure(Box::new(certificate)));
    }

    let mid: Vec<f64> = psi.values().iter().map(|p| 0.5 * (p + big_m)).collect();
    let mid = GridFunction::new(mesh.clone(), mid)?;
    let mut solve = opts.solve.clone();
    solve.lower_barrier = Some((psi.values().to_vec(), psi.values().to_vec()));
    let solution = newton_solve(&sys, (&mid, &mid), &solve)?;
    if !solution.converged {
        return Err(DriverError::NonConvergence {
            level: alpha.max(beta),
            residual: solution.residual_norm,
        });
    }

    let scale = sys.residual_scale(&solution.u, &solution.v)?;
    let tol_cert = 10.0 * opts.solve.tol * scale.iter().copied().fold(1.0, f64::max);
    let mut sandwich = CertificateReport::new();
    for (name_lo, name_hi, w) in [
        ("psi <= u", "u <= M", &solution.u),
        ("psi <= v", "v <= M", &solution.v),
    ] {
        let mut lo = Check::new(name_lo);
        let mut hi = Check::new(name_hi);
        for (k, x) in mesh.nodes().iter().enumerate() {
            lo.observe(w.values()[k] - psi.values()[k] + tol_cert, &[("x", *x)]);
            hi.observe(big_m + tol_cert - w.values()[k], &[("x", *x)]);
        }
        sandwich.push(lo);
        sandwich.push(hi);
    }
    sandwich.samples_used = mesh.len();
    Ok(FiniteOutcome {
        psi,
        solution,
        certificate,
        sandwich,
        gate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeDirection {
    Lower,
    Upper,
}

/// Scalar comparison problem `Δw + b|∇w|^q = a f(w)` with constant `a, b`.
#[derive(Clone, Debug)]
pub struct EnvelopeSpec {
    pub direction: EnvelopeDirection,
    pub b: f64,
    pub q: f64,
    pub a: f64,
    /// Profile in `t`.
    pub f: ScalarFunctionExpr,
}

impl EnvelopeSpec {
    /// Upper envelopes use `‖b_i‖_∞` and `min a_i`; lower ones `min b_i`
    /// and `max a_i`, all sampled at `xs`.
    pub fn from_spec(
        spec: &NonlinearitySpec,
        component: Component,
        direction: EnvelopeDirection,
        xs: &[f64],
    ) -> Result<Self, DriverError> {
        let (a, b, f, q) = match component {
            Component::U => (&spec.a1, &spec.b1, spec.f1.as_ref(), spec.q1),
            Component::V => (&spec.a2, &spec.b2, spec.f2.as_ref(), spec.q2),
        };
        let f = f
            .ok_or(ModelError::MissingFunction(if component == Component::U { "f1" } else { "f2" }))?
            .clone();
        if xs.is_empty() {
            return Err(DriverError::Precondition("envelope needs coefficient samples".into()));
        }
        let sample = |e: &ScalarFunctionExpr| -> Result<Vec<f64>, DriverError> {
            Ok(xs.iter().map(|&x| e.eval(&Bindings::at_point(x))).collect::<Result<_, _>>().map_err(ModelError::from)?)
        };
        let av = sample(a)?;
        let bv = sample(b)?;
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let (a, b) = match direction {
            EnvelopeDirection::Upper => (min(&av), bv.iter().map(|b| b.abs()).fold(0.0, f64::max)),
            EnvelopeDirection::Lower => (max(&av), min(&bv)),
        };
        let env = EnvelopeSpec { direction, b, q, a, f };
        env.validate()?;
        Ok(env)
    }

    fn validate(&self) -> Result<(), DriverError> {
        if !(self.a > 0.0 && self.b >= 0.0 && self.a.is_finite() && self.b.is_finite()) {
            return Err(DriverError::Precondition(format!(
                "envelope coefficients must be positive, got a = {}, b = {}",
                self.a, self.b
            )));
        }
        Ok(())
    }

    /// The scalar problem as a decoupled pair with identical components.
    pub fn as_spec(&self) -> Result<NonlinearitySpec, DriverError> {
        self.validate()?;
        let a = ScalarFunctionExpr::constant(self.a);
        let b = ScalarFunctionExpr::constant(self.b);
        let fu = a.mul(&self.f.rename(Var::T, Var::U));
        let fv = a.mul(&self.f.rename(Var::T, Var::V));
        Ok(NonlinearitySpec::from_partials(fu, fv)?.with_convection(b.clone(), self.q, b, self.q))
    }
}

/// Escalates the scalar comparison problem and returns its last level.
pub fn solve_envelope(
    env: &EnvelopeSpec,
    mesh: Arc<Mesh>,
    schedule: &[f64],
    opts: &EscalationOptions,
) -> Result<GridFunction, DriverError> {
    let spec = Arc::new(env.as_spec()?);
    let mut opts = opts.clone();
    opts.envelope = None;
    let trace = infinite_campaign(spec, mesh, schedule, &[], &opts)?;
    Ok(trace.final_solution.expect("non-empty schedule").u)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    #[serde(rename = "C")]
    pub c: f64,
    pub tau: f64,
    pub window: (f64, f64),
    /// RMS of the log–log fit.
    pub residual: f64,
    pub nodes: usize,
}

impl RateFit {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rate fit serializes")
    }
}

pub const RATE_FIT_MIN_NODES: usize = 5;

/// Least-squares fit of `log u = log C − τ log d` over nodes whose
/// boundary distance lies in `window`.
pub fn fit_blowup_rate(u: &GridFunction, window: (f64, f64)) -> Result<RateFit, DriverError> {
    let mesh = u.mesh();
    let pairs: Vec<(f64, f64)> = (0..mesh.len())
        .map(|i| (mesh.boundary_distance(i), u.values()[i]))
        .collect();
    fit_rate_pairs(&pairs, window)
}

/// Same fit on explicit `(distance, value)` pairs.
pub fn fit_rate_pairs(pairs: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit, DriverError> {
    let (lo, hi) = window;
    if !(lo > 0.0 && lo < hi) {
        return Err(DriverError::Precondition(format!("rate window needs 0 < d_min < d_max, got ({lo}, {hi})")));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs
        .iter()
        .filter(|(d, v)| *d >= lo && *d <= hi && *v > 0.0)
        .map(|(d, v)| (d.ln(), v.ln()))
        .unzip();
    if xs.len() < RATE_FIT_MIN_NODES {
        return Err(DriverError::WindowTooSparse {
            found: xs.len(),
            needed: RATE_FIT_MIN_NODES,
        });
    }
    let (slope, intercept) = linear_fit(&xs, &ys);
    let rms = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    Ok(RateFit {
        c: intercept.exp(),
        tau: -slope,
        window,
        residual: rms,
        nodes: xs.len(),
    })
}
