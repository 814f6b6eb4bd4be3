//! Entire large solutions: the radial potential `z`, the growing lower
//! barrier `w` with `∫_w^∞ dt/g = z`, and Dirichlet solves on expanding balls.

use std::convert::Infallible;
use std::sync::Arc;

use serde::Serialize;

use super::{DriverError, StructuralGate};
use crate::expr::{Bindings, ExprFn, Var};
use crate::mesh::{build_mesh, mesh_from_nodes, Geometry, Grading, GridFunction, Mesh};
use crate::model::{invert_tail_with, CertificateReport, Check, InvertOptions, ModelError, NonlinearitySpec};
use crate::quad::{integrate, integrate_tail, Cumulative, QuadOptions, TailOptions, TailVerdict};
use crate::solver::{newton_solve, Dirichlet, DiscreteSystem, SolveOptions, SolveResult};

/// Radial solution of `−Δz = a(r)` in dimension `dim` vanishing at infinity,
/// `z(r) = ∫_r^∞ s^{1−N} ∫_0^s t^{N−1} a(t) dt ds`, sampled on `mesh`.
pub fn radial_supersolution_z(
    a_sq_sum: &dyn Fn(f64) -> f64,
    dim: usize,
    mesh: Arc<Mesh>,
) -> Result<GridFunction, DriverError> {
    radial_supersolution_z_with(a_sq_sum, dim, mesh, &QuadOptions::default(), &TailOptions::default())
}

pub fn radial_supersolution_z_with(
    a_sq_sum: &dyn Fn(f64) -> f64,
    dim: usize,
    mesh: Arc<Mesh>,
    quad: &QuadOptions,
    tail: &TailOptions,
) -> Result<GridFunction, DriverError> {
    if dim < 3 {
        return Err(DriverError::Precondition(format!("a decaying radial potential needs N >= 3, got {dim}")));
    }
    let nodes = mesh.nodes();
    if nodes[0] != 0.0 {
        return Err(DriverError::Precondition("radial grid must start at r = 0".into()));
    }
    let n = dim as i32;
    let density = |t: f64| -> Result<f64, Infallible> { Ok(t.powi(n - 1) * a_sq_sum(t)) };
    let mass = Cumulative::new(density, 1.0, *quad);
    let flux = |s: f64| -> Result<f64, Infallible> {
        if s == 0.0 {
            return Ok(0.0);
        }
        Ok(mass.at(s)? * s.powi(1 - n))
    };

    let r_max = *nodes.last().unwrap();
    let out = integrate_tail(&flux, r_max, tail).unwrap_or_else(|e| match e {});
    match out.verdict {
        TailVerdict::Converges => {}
        TailVerdict::Diverges => {
            return Err(DriverError::SlowDecay(format!(
                "s^(1-N) * mass(s) decays like s^{:.3}, so the exterior integral diverges and the \
                 summed weights admit no radial potential vanishing at infinity",
                out.decay_exponent
            )))
        }
        TailVerdict::Inconclusive => {
            return Err(ModelError::Inconclusive {
                exponent: out.decay_exponent,
            }
            .into())
        }
    }

    let mut z = vec![0.0; nodes.len()];
    let mut acc = out.value;
    *z.last_mut().unwrap() = acc;
    for i in (0..nodes.len() - 1).rev() {
        let mut f = |s: f64| flux(s);
        acc += integrate(&mut f, nodes[i], nodes[i + 1], quad).unwrap_or_else(|e| match e {}).value;
        z[i] = acc;
    }
    if let Some((i, v)) = z.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(DriverError::Precondition(format!("weight sum produced non-finite z = {v} at r = {}", nodes[i])));
    }
    if z.windows(2).any(|w| !(w[0] > w[1])) || !(z[0] > 0.0) {
        return Err(DriverError::Precondition("z is not strictly decreasing; is the weight sum zero?".into()));
    }
    Ok(GridFunction::new(mesh, z)?)
}

#[derive(Clone, Debug)]
pub struct EntireOptions {
    pub dim: usize,
    /// Balls of radius `1, 2, …, n_max`.
    pub n_max: usize,
    pub cells_per_unit: usize,
    pub solve: SolveOptions,
    pub invert: InvertOptions,
    pub quad: QuadOptions,
    pub tail: TailOptions,
    /// Ordering checks accept a dip of `barrier_tol · (1 + w_n)`.
    pub barrier_tol: f64,
    pub gate: Option<StructuralGate>,
}

impl Default for EntireOptions {
    fn default() -> Self {
        EntireOptions {
            dim: 3,
            n_max: 6,
            cells_per_unit: 20,
            solve: SolveOptions::default(),
            invert: InvertOptions::default(),
            quad: QuadOptions::default(),
            tail: TailOptions::default(),
            barrier_tol: 1e-8,
            gate: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BallRecord {
    pub radius: f64,
    /// Dirichlet datum `w_n = w(n)`.
    pub datum: f64,
    pub iterations: usize,
    pub residual_norm: f64,
    pub sup_u: f64,
    pub sup_v: f64,
    /// `min (u_n − w)` over both components.
    pub lower_margin: f64,
    /// `min (w_n − u_n)`.
    pub upper_margin: f64,
    /// `min (u_n − u_{n−1})` on the previous ball.
    pub monotone_margin: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct EntireOutcome {
    /// `z` and `w` on the master grid of radius `n_max`.
    pub z: GridFunction,
    pub w: GridFunction,
    pub balls: Vec<BallRecord>,
    pub solutions: Vec<SolveResult>,
    pub checks: CertificateReport,
    /// `(r, u(r), w(r))` of the outermost ball at integer radii.
    pub growth: Vec<(f64, f64, f64)>,
    pub growth_monotone: bool,
    pub gate: Option<CertificateReport>,
}

/// Expanding-ball construction of an entire large solution.
pub fn entire_campaign(spec: Arc<NonlinearitySpec>, opts: &EntireOptions) -> Result<EntireOutcome, DriverError> {
    let gate = opts.gate.as_ref().map(|g| g.run(&spec)).transpose()?;
    if opts.n_max == 0 || opts.cells_per_unit < 4 {
        return Err(DriverError::Precondition("need n_max >= 1 and at least 4 cells per unit radius".into()));
    }
    let g = spec.g.as_ref().ok_or(ModelError::MissingFunction("g"))?;
    let weight = spec.a1_sq.add(&spec.a2_sq);
    let a_sq_sum = |r: f64| weight.eval(&Bindings::at_point(r)).unwrap_or(f64::NAN);

    let geo = |r: f64| Geometry::Radial { dim: opts.dim, r_max: r };
    let master = Arc::new(build_mesh(geo(opts.n_max as f64), opts.cells_per_unit * opts.n_max, Grading::Uniform)?);
    let z = radial_supersolution_z_with(&a_sq_sum, opts.dim, master.clone(), &opts.quad, &opts.tail)?;
    let gf = ExprFn::new(g, Var::T);
    let w_vals = z
        .values()
        .iter()
        .map(|&zr| invert_tail_with(&gf, zr, &opts.invert))
        .collect::<Result<Vec<f64>, _>>()?;
    let w = GridFunction::new(master.clone(), w_vals)?;

    let mut balls = Vec::new();
    let mut solutions: Vec<SolveResult> = Vec::new();
    let mut lower = Check::new("w <= u_n");
    let mut upper = Check::new("u_n <= w_n");
    let mut mono = Check::new("u_n <= u_{n+1}");
    for n in 1..=opts.n_max {
        let k = opts.cells_per_unit * n;
        let mesh = Arc::new(mesh_from_nodes(master.nodes()[..=k].to_vec(), geo(n as f64))?);
        let wn = w.values()[k];
        let w_ball = GridFunction::new(mesh.clone(), w.values()[..=k].to_vec())?;
        let sys = DiscreteSystem::new(spec.clone(), mesh.clone(), Dirichlet::uniform(wn, wn), f64::INFINITY)?;
        let mut solve = opts.solve.clone();
        solve.lower_barrier = Some((w_ball.values().to_vec(), w_ball.values().to_vec()));
        let res = newton_solve(&sys, (&w_ball, &w_ball), &solve)?;
        if !res.converged {
            return Err(DriverError::NonConvergence {
                level: wn,
                residual: res.residual_norm,
            });
        }
        let tol = opts.barrier_tol * (1.0 + wn);
        let mut lo_margin = f64::INFINITY;
        let mut hi_margin = f64::INFINITY;
        for comp in [&res.u, &res.v] {
            for (&x, (&u, &wv)) in mesh.nodes().iter().zip(comp.values().iter().zip(w_ball.values())) {
                lower.observe(u - wv + tol, &[("r", x), ("ball", n as f64)]);
                upper.observe(wn - u + tol, &[("r", x), ("ball", n as f64)]);
                lo_margin = lo_margin.min(u - wv);
                hi_margin = hi_margin.min(wn - u);
            }
        }
        if lo_margin < -tol {
            return Err(DriverError::BarrierOrderViolation { ball: n, what: "w <= u_n", margin: lo_margin });
        }
        if hi_margin < -tol {
            return Err(DriverError::BarrierOrderViolation { ball: n, what: "u_n <= w_n", margin: hi_margin });
        }
        let monotone_margin = match solutions.last() {
            Some(p) => {
                let m = p.u.values().len();
                let mut margin = f64::INFINITY;
                for (prev, next) in [(&p.u, &res.u), (&p.v, &res.v)] {
                    for i in 0..m {
                        let d = next.values()[i] - prev.values()[i];
                        mono.observe(d + tol, &[("r", mesh.nodes()[i]), ("ball", n as f64)]);
                        margin = margin.min(d);
                    }
                }
                if margin < -tol {
                    return Err(DriverError::BarrierOrderViolation { ball: n, what: "u_n <= u_{n+1}", margin });
                }
                Some(margin)
            }
            None => None,
        };
        balls.push(BallRecord {
            radius: n as f64,
            datum: wn,
            iterations: res.iterations,
            residual_norm: res.residual_norm,
            sup_u: res.u.max(),
            sup_v: res.v.max(),
            lower_margin: lo_margin,
            upper_margin: hi_margin,
            monotone_margin,
        });
        solutions.push(res);
    }

    let outer = solutions.last().expect("n_max >= 1");
    let growth: Vec<(f64, f64, f64)> = (1..=opts.n_max)
        .map(|r| {
            let k = opts.cells_per_unit * r;
            (master.nodes()[k], outer.u.values()[k].min(outer.v.values()[k]), w.values()[k])
        })
        .collect();
    let growth_monotone = growth.windows(2).all(|p| p[1].1 > p[0].1);

    let mut checks = CertificateReport::new();
    checks.push(lower);
    checks.push(upper);
    if opts.n_max > 1 {
        checks.push(mono);
    }
    checks.samples_used = solutions.iter().map(|s| s.u.values().len()).sum();
    Ok(EntireOutcome {
        z,
        w,
        balls,
        solutions,
        checks,
        growth,
        growth_monotone,
        gate,
    })
}
