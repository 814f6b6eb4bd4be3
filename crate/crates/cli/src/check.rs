//! The hypothesis gate: profile classes, Keller–Osserman, structural
//! inequalities and, for the power family, the exponent constraints.

use serde::Serialize;
use serde_json::{json, Value};

use osserman_core::expr::{ExprFn, Var};
use osserman_core::model::{
    check_f_class, exponent_family_report, keller_osserman, CertificateReport, ModelError, NonlinearitySpec,
};
use osserman_core::quad::TailOptions;

use crate::problem::ProblemFile;
use crate::Failure;

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub passed: bool,
    /// Certificate name to report, in a fixed order.
    pub certificates: Vec<(String, Value)>,
}

impl CheckOutcome {
    pub fn to_json(&self) -> Value {
        let certs: serde_json::Map<String, Value> = self.certificates.iter().cloned().collect();
        json!({ "passed": self.passed, "certificates": certs })
    }

    pub fn summary_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, cert) in &self.certificates {
            let ok = cert["passed"].as_bool().unwrap_or(false);
            out.push(format!("{name}: {}", if ok { "PASS" } else { "FAIL" }));
            if let Some(checks) = cert["checks"].as_array() {
                for c in checks.iter().filter(|c| c["worst_margin"].as_f64().is_none_or(|m| m < 0.0)) {
                    out.push(format!("  failed {} (worst margin {}, at {})", c["name"], c["worst_margin"], c["worst_point"]));
                }
            }
            if let Some(fns) = cert["functions"].as_object() {
                for (f, r) in fns {
                    if let Some(e) = r.get("error") {
                        out.push(format!("  {f}: {}", e.as_str().unwrap_or_default()));
                    } else if r["converges"] == json!(false) {
                        out.push(format!("  {f}: integral diverges (decay exponent {})", r["decay_exponent"]));
                    }
                }
            }
        }
        out
    }
}

fn report(r: &CertificateReport) -> Value {
    serde_json::to_value(r).expect("report serializes")
}

fn input(e: ModelError) -> Failure {
    Failure::Input(e.to_string())
}

pub fn run_check(problem: &ProblemFile) -> Result<CheckOutcome, Failure> {
    let spec: NonlinearitySpec = problem.spec()?;
    let gate = problem.gate()?;
    let need = |f: &Option<_>, name: &'static str| f.clone().ok_or(input(ModelError::MissingFunction(name)));
    let f1 = need(&spec.f1, "f1")?;
    let f2 = need(&spec.f2, "f2")?;
    let g = need(&spec.g, "g")?;

    let grid: Vec<f64> = {
        let mut t: Vec<f64> = std::iter::once(0.0).chain(gate.ts.iter().chain(&gate.ss).copied().filter(|t| *t > 0.0)).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    };
    let mut classes = CertificateReport::new();
    for (name, h) in [("f1: ", &f1), ("f2: ", &f2), ("g: ", &g)] {
        classes.absorb(name, check_f_class(&ExprFn::new(h, Var::T), &grid).map_err(input)?);
    }

    let mut ko_passed = true;
    let mut functions = serde_json::Map::new();
    for (name, h) in [("f1", &f1), ("f2", &f2)] {
        let entry = match keller_osserman(&ExprFn::new(h, Var::T), &TailOptions::default()) {
            Ok(r) => {
                ko_passed &= r.converges;
                serde_json::to_value(r).expect("ko serializes")
            }
            Err(e @ (ModelError::Inconclusive { .. } | ModelError::NonPositive { .. })) => {
                ko_passed = false;
                json!({ "error": e.to_string() })
            }
            Err(e) => return Err(input(e)),
        };
        functions.insert(name.to_string(), entry);
    }

    let mut structural = spec.check_coefficients(&gate.xs).map_err(input)?;
    let sampled = osserman_core::model::verify_structural(&spec, &gate.xs, &gate.ts, &gate.ss).map_err(input)?;
    structural.absorb("", sampled);

    let mut certificates = vec![
        ("f_class".to_string(), report(&classes)),
        ("keller_osserman".to_string(), json!({ "passed": ko_passed, "functions": functions })),
        ("structural".to_string(), report(&structural)),
    ];
    if let Some(fam) = problem.nonlinearity.family {
        certificates.push((
            "exponent_family".to_string(),
            report(&exponent_family_report(fam.rho, fam.sigma, fam.gamma, fam.theta)),
        ));
    }
    let passed = certificates.iter().all(|(_, c)| c["passed"] == json!(true));
    Ok(CheckOutcome { passed, certificates })
}
