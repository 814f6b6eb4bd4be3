//! `solve`: run the campaign named in a problem file and write its artifacts.

use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};

use osserman_core::drivers::{
    entire_campaign, finite_campaign, infinite_campaign, semifinite_campaign, solve_envelope, Component, DriverError,
    EntireOptions, EnvelopeDirection, EnvelopeSpec, Envelopes, EscalationOptions, EscalationTrace, FiniteOptions,
};
use osserman_core::mesh::{fmt_f64, GridFunction, Mesh};
use osserman_core::model::{ModelError, NonlinearitySpec};
use osserman_core::quad::TailOptions;
use osserman_core::solver::{SolveOptions, SolveResult};

use crate::artifacts::{sha256_hex, OutDir};
use crate::check::run_check;
use crate::problem::{default_schedule, CampaignKind, CampaignTable, DomainKind, ProblemFile};
use crate::Failure;

/// Command-line overrides applied on top of the problem file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub skip_check: bool,
    pub schedule: Option<Vec<f64>>,
    pub mesh_cells: Option<usize>,
    pub min_spacing: Option<f64>,
}

impl Overrides {
    fn apply(&self, p: &mut ProblemFile) -> Result<(), Failure> {
        if self.mesh_cells.is_some() || self.min_spacing.is_some() {
            let mesh = p
                .mesh
                .as_mut()
                .ok_or_else(|| Failure::Input("--mesh-cells/--min-spacing need a [mesh] table".into()))?;
            if let Some(n) = self.mesh_cells {
                mesh.cells = n;
            }
            if let Some(h) = self.min_spacing {
                mesh.min_spacing = Some(h);
            }
        }
        if let Some(s) = &self.schedule {
            let c = p
                .campaign
                .as_mut()
                .ok_or_else(|| Failure::Input("--schedule needs a [campaign] table".into()))?;
            c.schedule = Some(s.clone());
        }
        Ok(())
    }

    fn to_json(&self) -> Value {
        json!({
            "skip_check": self.skip_check,
            "schedule": self.schedule,
            "mesh_cells": self.mesh_cells,
            "min_spacing": self.min_spacing,
        })
    }
}

/// Outcome of a completed run; `code` is 0, or 2 when a campaign
/// certificate failed after the artifacts were written.
pub struct RunSummary {
    pub code: u8,
    pub summary: Value,
}

fn campaign_failure(e: DriverError) -> Failure {
    match e {
        DriverError::Precondition(m) => Failure::Input(m),
        DriverError::Model(m @ (ModelError::MissingFunction(_) | ModelError::InvalidBoundary(_))) => {
            Failure::Input(m.to_string())
        }
        DriverError::GateFailed(_) => Failure::Certificate(e.to_string()),
        DriverError::WindowTooSparse { .. } => Failure::Analysis(e.to_string()),
        other => Failure::Campaign(other.to_string()),
    }
}

fn solve_options(c: &CampaignTable) -> SolveOptions {
    let mut s = SolveOptions::default();
    if let Some(tol) = c.tol {
        s.tol = tol;
    }
    if let Some(n) = c.max_iter {
        s.max_iter = n;
    }
    s
}

fn gf_csv(g: &GridFunction) -> String {
    g.to_csv_string()
}

fn solution_csv(s: &SolveResult) -> String {
    let mut buf = Vec::new();
    s.write_csv(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

fn write_solution(out: &mut OutDir, prefix: &str, s: &SolveResult) -> Result<(), Failure> {
    out.write(&format!("{prefix}solution.csv"), solution_csv(s))?;
    out.write(&format!("{prefix}u.csv"), gf_csv(&s.u))?;
    out.write(&format!("{prefix}v.csv"), gf_csv(&s.v))?;
    out.write(&format!("{prefix}solution.json"), s.sidecar_json() + "\n")
}

fn mesh_json(mesh: &Mesh) -> Value {
    json!({
        "nodes": mesh.len(),
        "min_spacing": mesh.min_spacing(),
        "max_spacing": mesh.max_spacing(),
        "geometry": mesh.geometry(),
        "grading": mesh.grading(),
    })
}

pub fn run_solve(path: &Path, out_dir: &Path, ov: &Overrides) -> Result<RunSummary, Failure> {
    let (mut problem, raw) = ProblemFile::load(path)?;
    ov.apply(&mut problem)?;
    let campaign = problem.campaign_table()?.clone();
    let spec = Arc::new(problem.spec()?);
    let mesh = match campaign.kind {
        CampaignKind::Entire => None,
        _ => Some(problem.build_mesh()?),
    };
    if campaign.kind == CampaignKind::Entire && problem.domain.kind != DomainKind::Radial {
        return Err(Failure::Input("entire campaigns need a radial [domain]".into()));
    }

    let gate = if ov.skip_check {
        json!("skipped")
    } else {
        let outcome = run_check(&problem)?;
        if !outcome.passed {
            return Err(Failure::Certificate(format!(
                "hypothesis check failed (rerun `check` for details, or pass --skip-check):\n{}",
                outcome.summary_lines().join("\n")
            )));
        }
        outcome.to_json()
    };

    let mut out = OutDir::create(out_dir)?;
    let solve = solve_options(&campaign);
    let mut certs = serde_json::Map::new();
    certs.insert("gate".into(), gate);
    let mut cert_ok = true;
    let mut options = json!({ "solve": solve, "tail": TailOptions::default() });
    let mut headline = json!({});

    match campaign.kind {
        CampaignKind::Finite => {
            let mesh = mesh.expect("finite campaigns build a mesh");
            let (alpha, beta) = problem.finite_data()?;
            let m = campaign.m.unwrap_or(0.5 * alpha.min(beta));
            let big_m = campaign.big_m.unwrap_or(2.0 * alpha.max(beta));
            let opts = FiniteOptions {
                solve,
                r_trunc: campaign.r_trunc,
                gate: None,
            };
            let res = finite_campaign(spec, mesh.clone(), alpha, beta, m, big_m, &opts).map_err(campaign_failure)?;
            write_solution(&mut out, "", &res.solution)?;
            out.write("psi.csv", gf_csv(&res.psi))?;
            cert_ok &= res.certificate.passed && res.sandwich.passed;
            certs.insert("subsuper".into(), serde_json::to_value(&res.certificate).expect("serializes"));
            certs.insert("sandwich".into(), serde_json::to_value(&res.sandwich).expect("serializes"));
            options["finite"] = json!({ "alpha": alpha, "beta": beta, "m": m, "M": big_m });
            options["mesh"] = mesh_json(&mesh);
            headline = json!({
                "sup_u": res.solution.u.max(),
                "sup_v": res.solution.v.max(),
                "iterations": res.solution.iterations,
                "residual_norm": res.solution.residual_norm,
            });
        }
        CampaignKind::Infinite | CampaignKind::Semifinite => {
            let mesh = mesh.expect("escalations build a mesh");
            let schedule = campaign.schedule.clone().unwrap_or_else(default_schedule);
            let compacts: Vec<(f64, f64)> = campaign.compacts.iter().map(|[a, b]| (*a, *b)).collect();
            let mut opts = EscalationOptions {
                solve,
                r_trunc: campaign.r_trunc.unwrap_or(f64::INFINITY),
                rate_window: campaign.window.map(|[a, b]| (a, b)),
                certify_truncation: campaign.certify_truncation,
                keep_solutions: campaign.dump_levels,
                ..EscalationOptions::default()
            };
            if campaign.envelope {
                let env = envelopes(&spec, &mesh, &problem.x_samples()?, &schedule, &opts)?;
                for (name, g) in [("u", &env.u), ("v", &env.v)] {
                    out.write(&format!("envelope_{name}.csv"), gf_csv(g.as_ref().expect("both envelopes")))?;
                }
                opts.envelope = Some(env);
            }
            options["escalation"] = json!({
                "schedule": schedule,
                "compacts": compacts,
                "r_trunc": campaign.r_trunc,
                "monotone_tol": opts.monotone_tol,
                "compact_rel_tol": opts.compact_rel_tol,
                "rate_window": opts.rate_window,
                "certify_truncation": opts.certify_truncation,
                "envelope": campaign.envelope,
            });
            options["mesh"] = mesh_json(&mesh);

            let result = if campaign.kind == CampaignKind::Infinite {
                infinite_campaign(spec, mesh.clone(), &schedule, &compacts, &opts).map(|t| (t, None))
            } else {
                let (escalated, beta) = problem.semifinite_data()?;
                let factor = campaign.trace_factor.unwrap_or(1.0);
                options["semifinite"] = json!({ "escalated": escalated, "beta": beta, "trace_factor": factor });
                semifinite_campaign(spec, mesh.clone(), escalated, beta, &schedule, &compacts, factor, &opts)
                    .map(|o| (o.trace, Some(o.boundary)))
            };
            let (trace, boundary) = match result {
                Ok(r) => r,
                Err(DriverError::MonotonicityViolation { level, margin, trace }) => {
                    out.write("trace.csv", trace.to_csv_string())?;
                    return Err(Failure::Campaign(format!(
                        "escalation lost monotonicity at level {level}: min(u_next - u_prev) = {margin:e}; \
                         partial trace written to {}",
                        out.root().join("trace.csv").display()
                    )));
                }
                Err(e) => return Err(campaign_failure(e)),
            };
            write_trace(&mut out, &trace)?;
            if let Some(b) = &boundary {
                out.write_json("boundary_trace.json", b)?;
                certs.insert("boundary_trace".into(), serde_json::to_value(b).expect("serializes"));
            }
            let truncation: Vec<Value> = trace
                .levels
                .iter()
                .filter_map(|l| l.truncation.map(|t| json!({ "n": l.n, "certificate": t })))
                .collect();
            cert_ok &= truncation.iter().all(|t| t["certificate"]["ok"] == json!(true));
            if campaign.certify_truncation {
                certs.insert("truncation".into(), Value::Array(truncation));
            }
            let env_margins: Vec<Value> = trace.levels.iter().filter_map(|l| l.envelope_margin.map(|m| json!({ "n": l.n, "margin": m }))).collect();
            if !env_margins.is_empty() {
                certs.insert("envelope".into(), Value::Array(env_margins));
            }
            certs.insert("converged_on_compacts".into(), json!(trace.converged_on_compacts));
            let last = trace.levels.last().expect("non-empty schedule");
            headline = json!({
                "levels": trace.levels.len(),
                "final_n": last.n,
                "sup_u": last.sup_u,
                "sup_v": last.sup_v,
                "converged_on_compacts": trace.converged_on_compacts,
                "rate_fit": trace.rate_fit,
                "rate_fit_note": trace.rate_fit_note,
            });
            if let Some(b) = boundary {
                headline["boundary_deviation"] = json!(b.nearest_deviation);
            }
        }
        CampaignKind::Entire => {
            let dim = problem.domain.dim.ok_or_else(|| Failure::Input("[domain] radial needs N".into()))?;
            let opts = EntireOptions {
                dim,
                n_max: campaign.n_max.unwrap_or(6),
                cells_per_unit: campaign.cells_per_unit.unwrap_or(20),
                solve,
                gate: None,
                ..EntireOptions::default()
            };
            options["entire"] = json!({
                "N": dim,
                "n_max": opts.n_max,
                "cells_per_unit": opts.cells_per_unit,
                "barrier_tol": opts.barrier_tol,
                "invert": opts.invert,
            });
            let res = entire_campaign(spec, &opts).map_err(campaign_failure)?;
            out.write("z.csv", gf_csv(&res.z))?;
            out.write("w.csv", gf_csv(&res.w))?;
            out.write_json("balls.json", &res.balls)?;
            let mut growth = String::from("r,u,w\n");
            for (r, u, w) in &res.growth {
                growth.push_str(&format!("{},{},{}\n", fmt_f64(*r), fmt_f64(*u), fmt_f64(*w)));
            }
            out.write("growth.csv", growth)?;
            write_solution(&mut out, "", res.solutions.last().expect("n_max >= 1"))?;
            cert_ok &= res.checks.passed;
            certs.insert("ordering".into(), serde_json::to_value(&res.checks).expect("serializes"));
            certs.insert("growth_monotone".into(), json!(res.growth_monotone));
            headline = json!({
                "balls": res.balls.len(),
                "outer_datum": res.balls.last().map(|b| b.datum),
                "growth_monotone": res.growth_monotone,
            });
        }
    }

    out.write_json("certificates.json", &Value::Object(certs))?;
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "problem": { "path": path.display().to_string(), "sha256": sha256_hex(&raw) },
        "resolved_problem": problem,
        "flags": ov.to_json(),
        "gate": if ov.skip_check { "skipped" } else { "passed" },
        "seed": Value::Null,
        "options": options,
        "artifacts": out.artifacts(),
    });
    out.write_json("manifest.json", &manifest)?;

    let code = if cert_ok { 0 } else { 2 };
    Ok(RunSummary {
        code,
        summary: json!({
            "problem": path.display().to_string(),
            "out": out_dir.display().to_string(),
            "campaign": campaign.kind,
            "exit_code": code,
            "result": headline,
        }),
    })
}

fn write_trace(out: &mut OutDir, trace: &EscalationTrace) -> Result<(), Failure> {
    out.write("trace.csv", trace.to_csv_string())?;
    out.write("rate_fit.json", trace.rate_fit_json() + "\n")?;
    out.write_json("trace.json", trace)?;
    let last = trace.final_solution.as_ref().expect("non-empty schedule");
    write_solution(out, "", last)?;
    for (k, s) in trace.solutions.iter().enumerate() {
        out.write(&format!("levels/level_{k:03}.csv"), solution_csv(s))?;
    }
    Ok(())
}

/// Upper comparison envelopes for both components on the campaign mesh.
fn envelopes(
    spec: &NonlinearitySpec,
    mesh: &Arc<Mesh>,
    xs: &[f64],
    schedule: &[f64],
    opts: &EscalationOptions,
) -> Result<Envelopes, Failure> {
    let mut env = Envelopes::default();
    for comp in [Component::U, Component::V] {
        let e = EnvelopeSpec::from_spec(spec, comp, EnvelopeDirection::Upper, xs).map_err(campaign_failure)?;
        let g = solve_envelope(&e, mesh.clone(), schedule, opts).map_err(campaign_failure)?;
        match comp {
            Component::U => env.u = Some(g),
            Component::V => env.v = Some(g),
        }
    }
    Ok(env)
}
