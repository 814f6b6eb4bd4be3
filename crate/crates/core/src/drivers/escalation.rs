//! Monotone boundary escalation: solve with data `n_1 < n_2 < …` and watch
//! the iterates settle on compacts.

use std::io;
use std::sync::Arc;

use serde::Serialize;

use super::{fit_blowup_rate, Component, DriverError, RateFit};
use crate::mesh::{fmt_f64, Grading, GridFunction, Mesh, MeshError};
use crate::model::NonlinearitySpec;
use crate::solver::{
    certify_gradient_bound, newton_solve, Dirichlet, DiscreteSystem, GradientCertificate, SolveOptions, SolveResult,
};

#[derive(Clone, Debug)]
pub struct EscalationOptions {
    pub solve: SolveOptions,
    /// Truncation level of the convection term during the escalation.
    pub r_trunc: f64,
    /// Allowed dip is `monotone_tol · (1 + sup u_n)`.
    pub monotone_tol: f64,
    /// Relative change of every compact sup that counts as settled.
    pub compact_rel_tol: f64,
    /// Distance window of the blow-up rate fit; `None` means
    /// `[10, 100] · min_spacing`.
    pub rate_window: Option<(f64, f64)>,
    /// Re-solve each level with `R = 2 R*` and certify the gradient bound.
    pub certify_truncation: bool,
    /// Upper envelopes `ũ`, `ṽ` on the same mesh.
    pub envelope: Option<Envelopes>,
    pub keep_solutions: bool,
}

impl Default for EscalationOptions {
    fn default() -> Self {
        EscalationOptions {
            solve: SolveOptions::default(),
            r_trunc: f64::INFINITY,
            monotone_tol: 1e-8,
            compact_rel_tol: 1e-6,
            rate_window: None,
            certify_truncation: false,
            envelope: None,
            keep_solutions: false,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Envelopes {
    pub u: Option<GridFunction>,
    pub v: Option<GridFunction>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelRecord {
    /// Boundary datum of the escalated component(s).
    pub n: f64,
    pub compact_sups_u: Vec<f64>,
    pub compact_sups_v: Vec<f64>,
    /// `min_i (u_n − u_prev)`; absent on the first level.
    pub monotonicity_margin_u: Option<f64>,
    pub monotonicity_margin_v: Option<f64>,
    pub sup_u: f64,
    pub sup_v: f64,
    pub iterations: usize,
    pub picard_sweeps: usize,
    pub residual_norm: f64,
    pub converged: bool,
    /// `max(|u'|^q1, |v'|^q2)` at the solution.
    pub r_star: f64,
    pub truncation: Option<GradientCertificate>,
    /// `min_i (ũ − u_n)` over the supplied envelopes.
    pub envelope_margin: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EscalationTrace {
    pub levels: Vec<LevelRecord>,
    pub compacts: Vec<(f64, f64)>,
    pub converged_on_compacts: bool,
    pub rate_fit: Option<RateFit>,
    pub rate_fit_note: Option<String>,
    #[serde(skip)]
    pub final_solution: Option<SolveResult>,
    #[serde(skip)]
    pub solutions: Vec<SolveResult>,
}

impl EscalationTrace {
    fn empty(compacts: &[(f64, f64)]) -> Self {
        EscalationTrace {
            levels: Vec::new(),
            compacts: compacts.to_vec(),
            converged_on_compacts: false,
            rate_fit: None,
            rate_fit_note: None,
            final_solution: None,
            solutions: Vec::new(),
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["n".to_string()];
        for c in ["u", "v"] {
            for (lo, hi) in &self.compacts {
                h.push(format!("sup_{c}@{}:{}", fmt_f64(*lo), fmt_f64(*hi)));
            }
        }
        h.extend(
            [
                "margin_u",
                "margin_v",
                "sup_u",
                "sup_v",
                "iterations",
                "picard_sweeps",
                "residual_norm",
                "r_star",
            ]
            .map(String::from),
        );
        h
    }

    /// One row per level; absent values are empty fields.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), MeshError> {
        let err = |e: csv::Error| MeshError::Csv(e.to_string());
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header()).map_err(err)?;
        for l in &self.levels {
            let mut row = vec![fmt_f64(l.n)];
            row.extend(l.compact_sups_u.iter().chain(&l.compact_sups_v).map(|v| fmt_f64(*v)));
            row.push(opt(l.monotonicity_margin_u));
            row.push(opt(l.monotonicity_margin_v));
            row.push(fmt_f64(l.sup_u));
            row.push(fmt_f64(l.sup_v));
            row.push(l.iterations.to_string());
            row.push(l.picard_sweeps.to_string());
            row.push(fmt_f64(l.residual_norm));
            row.push(fmt_f64(l.r_star));
            w.write_record(row).map_err(err)?;
        }
        w.flush().map_err(|e| MeshError::Csv(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn rate_fit_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            rate_fit: Option<&'a RateFit>,
            note: Option<&'a str>,
        }
        serde_json::to_string_pretty(&Out {
            rate_fit: self.rate_fit.as_ref(),
            note: self.rate_fit_note.as_deref(),
        })
        .expect("rate fit serializes")
    }
}

#[derive(Clone, Copy, Debug)]
enum Mode {
    Both,
    One { escalated: Component, beta: f64 },
}

fn check_inputs(mesh: &Mesh, schedule: &[f64], compacts: &[(f64, f64)]) -> Result<(), DriverError> {
    if !matches!(mesh.grading(), Grading::GradedBoundary { .. }) {
        return Err(DriverError::Precondition("escalation needs a mesh graded toward the blow-up boundary".into()));
    }
    if schedule.is_empty() {
        return Err(DriverError::Precondition("empty schedule".into()));
    }
    if schedule.iter().any(|n| !(n.is_finite() && *n > 0.0)) || schedule.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(DriverError::Precondition(format!(
            "schedule must be positive and strictly increasing, got {schedule:?}"
        )));
    }
    for &(lo, hi) in compacts {
        if !(lo < hi) || mesh.nodes().iter().all(|x| *x < lo || *x > hi) {
            return Err(DriverError::Precondition(format!("compact [{lo}, {hi}] holds no mesh node")));
        }
    }
    Ok(())
}

fn min_diff(next: &[f64], prev: &[f64]) -> f64 {
    next.iter().zip(prev).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min)
}

fn envelope_margin(env: &Envelopes, res: &SolveResult) -> Result<Option<f64>, DriverError> {
    let mut margin: Option<f64> = None;
    for (e, w) in [(&env.u, &res.u), (&env.v, &res.v)] {
        if let Some(e) = e {
            if e.mesh().nodes() != w.mesh().nodes() {
                return Err(DriverError::Precondition("envelope lives on a different mesh".into()));
            }
            let m = min_diff(e.values(), w.values());
            margin = Some(margin.map_or(m, |old| old.min(m)));
        }
    }
    Ok(margin)
}

fn escalate(
    spec: Arc<NonlinearitySpec>,
    mesh: Arc<Mesh>,
    schedule: &[f64],
    compacts: &[(f64, f64)],
    opts: &EscalationOptions,
    mode: Mode,
) -> Result<EscalationTrace, DriverError> {
    check_inputs(&mesh, schedule, compacts)?;
    let bc = |n: f64| match mode {
        Mode::Both => Dirichlet::uniform(n, n),
        Mode::One { escalated: Component::U, beta } => Dirichlet::uniform(n, beta),
        Mode::One { escalated: Component::V, beta } => Dirichlet::uniform(beta, n),
    };
    let base = DiscreteSystem::new(spec, mesh.clone(), bc(schedule[0]), opts.r_trunc)?;
    let mut trace = EscalationTrace::empty(compacts);
    let mut prev: Option<SolveResult> = None;
    let len = mesh.len();
    for &n in schedule {
        let sys = base.with_bc(bc(n));
        let data = sys.bc();
        let (init_u, init_v) = match &prev {
            None => (
                GridFunction::constant(mesh.clone(), data.u[1])?,
                GridFunction::constant(mesh.clone(), data.v[1])?,
            ),
            Some(p) => (p.u.clone(), p.v.clone()),
        };
        let mut solve = opts.solve.clone();
        // the previous level is a subsolution for the escalated components
        let floor = |c: Component, p: &SolveResult| -> Vec<f64> {
            let escalated = match mode {
                Mode::Both => true,
                Mode::One { escalated, .. } => escalated == c,
            };
            if escalated {
                if c == Component::U { p.u.values() } else { p.v.values() }.to_vec()
            } else {
                vec![0.0; len]
            }
        };
        if let Some(p) = &prev {
            solve.lower_barrier = Some((floor(Component::U, p), floor(Component::V, p)));
        }
        let res = newton_solve(&sys, (&init_u, &init_v), &solve)?;
        if !res.converged {
            return Err(DriverError::NonConvergence {
                level: n,
                residual: res.residual_norm,
            });
        }

        let truncation = if opts.certify_truncation {
            let r_star = res.max_grad_u.powf(sys.spec().q1).max(res.max_grad_v.powf(sys.spec().q2));
            let cut = sys.with_r_trunc((2.0 * r_star).max(f64::MIN_POSITIVE))?;
            let rerun = newton_solve(&cut, (&res.u, &res.v), &solve)?;
            Some(certify_gradient_bound(&rerun, &cut)?)
        } else {
            None
        };

        let sups = |w: &GridFunction| -> Vec<f64> {
            compacts.iter().map(|&(lo, hi)| w.sup_on(lo, hi).expect("checked non-empty")).collect()
        };
        let (margin_u, margin_v) = match &prev {
            Some(p) => (
                Some(min_diff(res.u.values(), p.u.values())),
                Some(min_diff(res.v.values(), p.v.values())),
            ),
            None => (None, None),
        };
        let record = LevelRecord {
            n,
            compact_sups_u: sups(&res.u),
            compact_sups_v: sups(&res.v),
            monotonicity_margin_u: margin_u,
            monotonicity_margin_v: margin_v,
            sup_u: res.u.max(),
            sup_v: res.v.max(),
            iterations: res.iterations,
            picard_sweeps: res.picard_sweeps,
            residual_norm: res.residual_norm,
            converged: res.converged,
            r_star: res.max_grad_u.powf(sys.spec().q1).max(res.max_grad_v.powf(sys.spec().q2)),
            truncation,
            envelope_margin: match &opts.envelope {
                Some(e) => envelope_margin(e, &res)?,
                None => None,
            },
        };

        if let Some(p) = &prev {
            let checked: &[(Component, Option<f64>, f64)] = &[
                (Component::U, margin_u, p.u.max()),
                (Component::V, margin_v, p.v.max()),
            ];
            for &(c, margin, sup) in checked {
                let enforced = match mode {
                    Mode::Both => true,
                    Mode::One { escalated, .. } => escalated == c,
                };
                let margin = margin.expect("set when a previous level exists");
                if enforced && margin < -opts.monotone_tol * (1.0 + sup) {
                    trace.levels.push(record);
                    return Err(DriverError::MonotonicityViolation {
                        level: n,
                        margin,
                        trace: Box::new(trace),
                    });
                }
            }
        }
        if let Mode::One { escalated, beta } = mode {
            let fixed = if escalated == Component::U { &res.v } else { &res.u };
            if let Some((node, &value)) = fixed
                .values()
                .iter()
                .enumerate()
                .find(|(_, w)| **w > beta + opts.monotone_tol)
            {
                return Err(DriverError::BoundTrespass {
                    level: n,
                    node,
                    value,
                    bound: beta,
                });
            }
        }
        trace.levels.push(record);
        if opts.keep_solutions {
            trace.solutions.push(res.clone());
        }
        prev = Some(res);
    }

    if let [.., a, b] = trace.levels.as_slice() {
        let settled = |x: &[f64], y: &[f64]| {
            x.iter()
                .zip(y)
                .all(|(p, q)| (q - p).abs() < opts.compact_rel_tol * q.abs().max(f64::MIN_POSITIVE))
        };
        let watched_v = !matches!(mode, Mode::One { .. });
        trace.converged_on_compacts = !compacts.is_empty()
            && settled(&a.compact_sups_u, &b.compact_sups_u)
            && (!watched_v || settled(&a.compact_sups_v, &b.compact_sups_v));
    }

    let last = prev.expect("schedule is non-empty");
    if trace.levels.len() < 2 {
        trace.rate_fit_note = Some("a single level carries no rate information".into());
    } else {
        let ms = mesh.min_spacing();
        let window = opts.rate_window.unwrap_or((10.0 * ms, 100.0 * ms));
        let w = match mode {
            Mode::One { escalated: Component::V, .. } => &last.v,
            _ => &last.u,
        };
        match fit_blowup_rate(w, window) {
            Ok(fit) => trace.rate_fit = Some(fit),
            Err(e) => trace.rate_fit_note = Some(e.to_string()),
        }
    }
    trace.final_solution = Some(last);
    Ok(trace)
}

/// Escalates both boundary data through `schedule`, warm-starting each
/// level from the last.
pub fn infinite_campaign(
    spec: Arc<NonlinearitySpec>,
    mesh: Arc<Mesh>,
    schedule: &[f64],
    compacts: &[(f64, f64)],
    opts: &EscalationOptions,
) -> Result<EscalationTrace, DriverError> {
    escalate(spec, mesh, schedule, compacts, opts, Mode::Both)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceNode {
    pub x: f64,
    pub distance: f64,
    pub value: f64,
    pub deviation: f64,
}

/// Behaviour of the fixed component next to the boundary.
#[derive(Clone, Debug, Serialize)]
pub struct BoundaryTrace {
    pub component: Component,
    pub beta: f64,
    /// Interior nodes nearest each endpoint, nearest first.
    pub nodes: Vec<TraceNode>,
    /// `|w − β|` at the interior node closest to the boundary.
    pub nearest_deviation: f64,
    pub trace_tol: f64,
    pub within_tol: bool,
}

#[derive(Clone, Debug)]
pub struct SemifiniteOutcome {
    pub trace: EscalationTrace,
    pub boundary: BoundaryTrace,
}

/// Interior nodes inspected next to each endpoint.
pub const TRACE_NODES: usize = 3;

fn boundary_trace(w: &GridFunction, component: Component, beta: f64, trace_factor: f64) -> BoundaryTrace {
    let mesh = w.mesh();
    let last = mesh.last();
    let mut idx: Vec<usize> = (1..=TRACE_NODES.min(last - 1)).collect();
    if !mesh.is_radial() {
        idx.extend((1..=TRACE_NODES.min(last - 1)).map(|k| last - k));
    }
    let mut nodes: Vec<TraceNode> = idx
        .into_iter()
        .filter(|&i| !mesh.is_boundary(i))
        .map(|i| TraceNode {
            x: mesh.nodes()[i],
            distance: mesh.boundary_distance(i),
            value: w.values()[i],
            deviation: (w.values()[i] - beta).abs(),
        })
        .collect();
    nodes.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.x.total_cmp(&b.x)));
    let nearest_deviation = nodes.first().map_or(0.0, |n| n.deviation);
    let trace_tol = trace_factor * mesh.min_spacing().sqrt();
    BoundaryTrace {
        component,
        beta,
        within_tol: nearest_deviation <= trace_tol,
        nodes,
        nearest_deviation,
        trace_tol,
    }
}

/// Escalates `escalated` through `schedule` while the other component keeps
/// the finite datum `beta`, then inspects the fixed component's boundary
/// trace. `trace_factor` scales the allowed deviation `c · sqrt(h_min)`.
#[allow(clippy::too_many_arguments)]
pub fn semifinite_campaign(
    spec: Arc<NonlinearitySpec>,
    mesh: Arc<Mesh>,
    escalated: Component,
    beta: f64,
    schedule: &[f64],
    compacts: &[(f64, f64)],
    trace_factor: f64,
    opts: &EscalationOptions,
) -> Result<SemifiniteOutcome, DriverError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(DriverError::Precondition(format!("beta must lie in (0, inf), got {beta}")));
    }
    let trace = escalate(spec, mesh, schedule, compacts, opts, Mode::One { escalated, beta })?;
    let last = trace.final_solution.as_ref().expect("schedule is non-empty");
    let fixed = escalated.other();
    let w = if fixed == Component::U { &last.u } else { &last.v };
    let boundary = boundary_trace(w, fixed, beta, trace_factor);
    Ok(SemifiniteOutcome { trace, boundary })
}
