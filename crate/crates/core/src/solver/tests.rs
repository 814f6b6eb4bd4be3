use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::expr::Params;
use crate::mesh::{build_mesh, Geometry, Grading, Sides};
use crate::model::{coefficient_vars, state_vars};

fn expr(src: &str) -> ScalarFunctionExpr {
    ScalarFunctionExpr::parse(src, state_vars(), &Params::new()).unwrap()
}

fn coef(src: &str) -> ScalarFunctionExpr {
    ScalarFunctionExpr::parse(src, coefficient_vars(), &Params::new()).unwrap()
}

fn decoupled(fu: &str, fv: &str) -> NonlinearitySpec {
    NonlinearitySpec::from_partials(expr(fu), expr(fv)).unwrap()
}

fn uniform(a: f64, b: f64, n: usize) -> Arc<Mesh> {
    Arc::new(build_mesh(Geometry::interval(a, b), n, Grading::Uniform).unwrap())
}

fn right_graded(n: usize, ratio: f64, ms: f64) -> Arc<Mesh> {
    let geo = Geometry::Interval { a: 0.0, b: 0.9, blowup: Sides::RIGHT };
    Arc::new(build_mesh(geo, n, Grading::GradedBoundary { ratio, min_spacing: ms }).unwrap())
}

fn gf(mesh: &Arc<Mesh>, f: impl Fn(f64) -> f64) -> GridFunction {
    GridFunction::from_fn(mesh.clone(), f).unwrap()
}

#[test]
fn xi_examples() {
    assert_eq!(xi_r(3.0, 5.0), 3.0);
    assert_eq!(xi_r(7.0, 5.0), 5.0);
    assert_eq!(xi_r(5.0, 5.0), 5.0);
}

#[test]
fn constant_state_is_supersolution_of_family() {
    let spec = Arc::new(NonlinearitySpec::power_family([1.0; 3], 3.0, 1.5, 1.0, 3.0).unwrap());
    let mesh = uniform(0.0, 1.0, 20);
    let sys = DiscreteSystem::new(spec.clone(), mesh.clone(), Dirichlet::uniform(50.0, 50.0), 10.0).unwrap();
    let m = gf(&mesh, |_| 50.0);
    let r = sys.residual(&m, &m).unwrap();
    for (k, x) in mesh.nodes()[1..20].iter().enumerate() {
        let (fu, fv) = spec.partials_at(*x, 50.0, 50.0).unwrap();
        assert!((r[2 * k] + fu).abs() <= 1e-9 * fu);
        assert!((r[2 * k + 1] + fv).abs() <= 1e-9 * fv);
        assert!(r[2 * k] < 0.0);
    }
}

#[test]
fn trivial_equilibrium_has_zero_residual() {
    let mesh = uniform(0.0, 1.0, 10);
    let spec = Arc::new(decoupled("u^2", "v^3"));
    let sys = DiscreteSystem::new(spec, mesh.clone(), Dirichlet::uniform(0.0, 0.0), 1.0).unwrap();
    let z = gf(&mesh, |_| 0.0);
    assert!(sys.residual(&z, &z).unwrap().iter().all(|r| *r == 0.0));
}

fn exact_profile(x: f64) -> f64 {
    6.0 / ((1.0 - x) * (1.0 - x))
}

#[test]
fn exact_blowup_profile_residual_is_second_order() {
    let spec = Arc::new(decoupled("u^2", "v^2"));
    let mut mesh = right_graded(100, 0.8, 2e-3);
    let mut errs = Vec::new();
    for _ in 0..3 {
        let sys = DiscreteSystem::new(spec.clone(), mesh.clone(), Dirichlet::uniform(6.0, 6.0), f64::INFINITY).unwrap();
        let u = gf(&mesh, exact_profile);
        let r = sys.residual(&u, &u).unwrap();
        let s = sys.residual_scale(&u, &u).unwrap();
        errs.push(r.iter().zip(&s).map(|(r, s)| (r / s).abs()).fold(0.0, f64::max));
        mesh = Arc::new(mesh.refine().unwrap());
    }
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order > 1.7, "orders from {errs:?}");
    }
}

#[test]
fn newton_recovers_exact_blowup_profile() {
    let spec = Arc::new(decoupled("u^2", "v^2"));
    let mut errs = Vec::new();
    let mut mesh = right_graded(200, 0.9, 1e-3);
    for _ in 0..2 {
        let sys = DiscreteSystem::new(spec.clone(), mesh.clone(), Dirichlet { u: [6.0, 600.0], v: [6.0, 600.0] }, f64::INFINITY)
            .unwrap();
        let init = gf(&mesh, |x| 6.0 + (600.0 - 6.0) * x / 0.9);
        let res = newton_solve(&sys, (&init, &init), &SolveOptions::default()).unwrap();
        assert!(res.converged, "{res:?}");
        assert!(res.residual_norm <= 1e-10);
        let i = mesh.nearest(0.45);
        let x = mesh.nodes()[i];
        errs.push((res.u.values()[i] - exact_profile(x)).abs() / exact_profile(x));
        mesh = Arc::new(mesh.refine().unwrap());
    }
    assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
}

#[test]
fn linear_problem_needs_one_step() {
    let mesh = uniform(0.0, 1.0, 16);
    let spec = Arc::new(decoupled("0", "0"));
    let sys = DiscreteSystem::new(spec, mesh.clone(), Dirichlet { u: [1.0, 3.0], v: [2.0, -1.0] }, f64::INFINITY).unwrap();
    let z = gf(&mesh, |_| 0.0);
    let res = newton_solve(&sys, (&z, &z), &SolveOptions::default()).unwrap();
    assert!(res.converged);
    assert_eq!(res.iterations, 1);
    for (x, (u, v)) in mesh.nodes().iter().zip(res.u.values().iter().zip(res.v.values())) {
        assert!((u - (1.0 + 2.0 * x)).abs() < 1e-12);
        assert!((v - (2.0 - 3.0 * x)).abs() < 1e-12);
    }
}

#[test]
fn negative_state_is_clipped_and_solved() {
    let mesh = uniform(0.0, 1.0, 20);
    let spec = Arc::new(decoupled("u^0.5", "v^0.5"));
    let sys = DiscreteSystem::new(spec, mesh.clone(), Dirichlet::uniform(1.0, 1.0), f64::INFINITY).unwrap();
    let bad = gf(&mesh, |_| -1.0);
    // the raw residual reports the offending node
    assert!(matches!(sys.residual(&bad, &bad), Err(SolverError::NegativeState { node: 1, component: "u", .. })));
    let res = newton_solve(&sys, (&bad, &bad), &SolveOptions::default()).unwrap();
    assert!(res.clipped_nodes > 0);
    assert!(res.converged, "{res:?}");
    assert!(res.u.values().iter().all(|u| *u > 0.0));
}

#[test]
fn decoupled_jacobian_structure() {
    let mesh = uniform(0.0, 1.0, 8);
    let spec = Arc::new(decoupled("u^2", "v^2"));
    let sys = DiscreteSystem::new(spec, mesh.clone(), Dirichlet::uniform(1.0, 2.0), f64::INFINITY).unwrap();
    let u = gf(&mesh, |x| 1.0 + x);
    let v = gf(&mesh, |x| 2.0 - x * x);
    let j = sys.jacobian(&u, &v).unwrap();
    for i in 1..8 {
        assert_eq!(j.get(2 * i, 2 * i + 1), 0.0);
        assert_eq!(j.get(2 * i + 1, 2 * i), 0.0);
        let row = mesh.laplacian_row(i);
        assert!((j.get(2 * i, 2 * i) - (row[1] - 2.0 * u.values()[i])).abs() < 1e-12);
        assert!((j.get(2 * i + 1, 2 * i + 1) - (row[1] - 2.0 * v.values()[i])).abs() < 1e-12);
        assert_eq!(j.get(2 * i, 2 * i + 2), row[2]);
    }
}

#[test]
fn saturated_node_has_no_convection_slope() {
    let mesh = uniform(0.0, 1.0, 10);
    let spec = Arc::new(decoupled("0", "0").with_convection(coef("1"), 1.0, coef("1"), 1.0));
    let sys = DiscreteSystem::new(spec, mesh.clone(), Dirichlet::uniform(0.0, 0.0), 2.0).unwrap();
    // slope 5 > R = 2 everywhere
    let u = gf(&mesh, |x| 5.0 * x);
    let j = sys.jacobian(&u, &u).unwrap();
    let row = mesh.laplacian_row(4);
    assert_eq!(j.get(8, 6), row[0]);
    assert_eq!(j.get(8, 8), row[1]);
    assert_eq!(j.get(8, 10), row[2]);
    let r = sys.residual(&u, &u).unwrap();
    assert!((r[6] - 2.0).abs() < 1e-9, "{}", r[6]);
}

/// Central-difference check of the Jacobian's interior rows at a random
/// positive state; returns the relative error.
pub(crate) fn jacobian_fd_error(sys: &DiscreteSystem, rng: &mut ChaCha8Rng) -> f64 {
    let mesh = sys.mesh().clone();
    let n = mesh.len();
    let base_u: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
    let base_v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
    let mut dir: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|d| *d *= 1e-6 / norm);
    let shift = |sgn: f64| {
        let u: Vec<f64> = (0..n).map(|i| base_u[i] + sgn * dir[2 * i]).collect();
        let v: Vec<f64> = (0..n).map(|i| base_v[i] + sgn * dir[2 * i + 1]).collect();
        (GridFunction::new(mesh.clone(), u).unwrap(), GridFunction::new(mesh.clone(), v).unwrap())
    };
    let (u0, v0) = shift(0.0);
    let (up, vp) = shift(1.0);
    let (um, vm) = shift(-1.0);
    let jd = sys.jacobian(&u0, &v0).unwrap().mul_vec(&dir);
    let rp = sys.residual(&up, &vp).unwrap();
    let rm = sys.residual(&um, &vm).unwrap();
    let interior: Vec<usize> = (0..n).filter(|&i| !mesh.is_boundary(i)).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for (k, &i) in interior.iter().enumerate() {
        for c in 0..2 {
            let fd = 0.5 * (rp[2 * k + c] - rm[2 * k + c]);
            num += (jd[2 * i + c] - fd).powi(2);
            den += fd * fd;
        }
    }
    (num / den).sqrt()
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mesh = uniform(0.0, 1.0, 24);
    for b in ["0", "1"] {
        for q in [0.5, 1.0, 2.0] {
            let spec = NonlinearitySpec::power_family([1.0, 0.5, 1.0], 3.0, 1.5, 1.0, 3.0)
                .unwrap()
                .with_convection(coef(b), q, coef(&format!("{b}*(1+x)")), q);
            let sys = DiscreteSystem::new(Arc::new(spec), mesh.clone(), Dirichlet::uniform(1.0, 1.0), f64::INFINITY).unwrap();
            for _ in 0..10 {
                let e = jacobian_fd_error(&sys, &mut rng);
                assert!(e <= 1e-5, "b={b} q={q}: {e}");
            }
        }
    }
}

#[test]
fn numeric_slopes_cover_non_differentiable_partials() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mesh = uniform(0.0, 1.0, 12);
    let spec = decoupled("max(u, 1)^3 + v", "abs(v)^2 + u");
    let sys = DiscreteSystem::new(Arc::new(spec), mesh, Dirichlet::uniform(1.0, 1.0), f64::INFINITY).unwrap();
    assert!(matches!(sys.slopes[0], Slope::Numeric));
    assert!(matches!(sys.slopes[1], Slope::Symbolic(_)));
    for _ in 0..5 {
        // the kink of max(u, 1) may fall inside the sample range
        let e = jacobian_fd_error(&sys, &mut rng);
        assert!(e <= 1e-4, "{e}");
    }
}

#[test]
fn radial_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mesh = Arc::new(
        build_mesh(Geometry::Radial { dim: 3, r_max: 2.0 }, 30, Grading::GradedBoundary { ratio: 0.8, min_spacing: 0.01 })
            .unwrap(),
    );
    let spec = decoupled("u^3 + u*v", "v^2 + u").with_convection(coef("1 + r"), 1.5, coef("2"), 0.5);
    let sys = DiscreteSystem::new(Arc::new(spec), mesh, Dirichlet::uniform(2.0, 2.0), f64::INFINITY).unwrap();
    for _ in 0..5 {
        let e = jacobian_fd_error(&sys, &mut rng);
        assert!(e <= 1e-5, "{e}");
    }
}

#[test]
fn subsuper_examples() {
    let mesh = right_graded(120, 0.85, 2e-3);
    let spec = Arc::new(decoupled("u^2", "v^2"));
    let sys = DiscreteSystem::new(spec, mesh.clone(), Dirichlet { u: [6.0, 600.0], v: [6.0, 600.0] }, f64::INFINITY).unwrap();
    let init = gf(&mesh, |x| 6.0 + 660.0 * x);
    let res = newton_solve(&sys, (&init, &init), &SolveOptions::default()).unwrap();
    assert!(res.converged);
    let tol = SolveOptions::default().tol;
    let rep = verify_subsuper(&sys, (&res.u, &res.v), (&res.u, &res.v), tol).unwrap();
    assert!(rep.passed, "{}", rep.to_json());

    let top = gf(&mesh, |_| 1e4);
    let rep = verify_subsuper(&sys, (&top, &top), (&res.u, &res.v), tol).unwrap();
    let order = rep.check("u_lower <= u_upper").unwrap();
    assert!(!rep.passed && order.worst_margin < 0.0);
}

#[test]
fn subsuper_rejects_mixed_meshes() {
    let a = uniform(0.0, 1.0, 10);
    let b = uniform(0.0, 1.0, 12);
    let sys = DiscreteSystem::new(Arc::new(decoupled("u", "v")), a.clone(), Dirichlet::uniform(1.0, 1.0), 1.0).unwrap();
    let fa = gf(&a, |_| 1.0);
    let fb = gf(&b, |_| 1.0);
    assert!(matches!(verify_subsuper(&sys, (&fa, &fa), (&fb, &fb), 1e-10), Err(SolverError::MeshMismatch)));
}

#[test]
fn gradient_certificate_examples() {
    let mesh = uniform(0.0, 1.0, 10);
    // b = 0 keeps the solution linear; only q enters the certificate
    let spec = Arc::new(decoupled("0", "0").with_convection(coef("0"), 2.0, coef("0"), 2.0));
    let sys = DiscreteSystem::new(spec, mesh.clone(), Dirichlet { u: [0.0, 1.0], v: [0.0, 1.0] }, 5.0).unwrap();
    let u = gf(&mesh, |x| x);
    let res = newton_solve(&sys, (&u, &u), &SolveOptions::default()).unwrap();
    assert!(res.converged);
    let cert = certify_gradient_bound(&res, &sys).unwrap();
    assert!(cert.ok);
    assert!((cert.r_star - 1.0).abs() < 1e-12);
    assert_eq!(cert.bitwise_identical, Some(true));

    let tight = sys.with_r_trunc(0.5).unwrap();
    let cert = certify_gradient_bound(&res, &tight).unwrap();
    assert!(!cert.ok);
    assert!((cert.r_star - 1.0).abs() < 1e-12);
}

#[test]
fn truncation_is_inactive_above_r_star() {
    let mesh = right_graded(80, 0.8, 4e-3);
    let spec = Arc::new(decoupled("u^2", "v^2 + u").with_convection(coef("1"), 1.0, coef("0.5"), 2.0));
    let base = DiscreteSystem::new(spec, mesh.clone(), Dirichlet { u: [1.0, 50.0], v: [1.0, 20.0] }, f64::INFINITY).unwrap();
    let init = gf(&mesh, |x| 1.0 + 50.0 * x);
    let free = newton_solve(&base, (&init, &init), &SolveOptions::default()).unwrap();
    assert!(free.converged);
    let cert_free = certify_gradient_bound(&free, &base).unwrap();
    let sys = base.with_r_trunc(2.0 * cert_free.r_star).unwrap();
    let trunc = newton_solve(&sys, (&init, &init), &SolveOptions::default()).unwrap();
    assert!(trunc.converged);
    let cert = certify_gradient_bound(&trunc, &sys).unwrap();
    assert!(cert.ok && cert.bitwise_identical == Some(true));
    for (a, b) in free.u.values().iter().zip(trunc.u.values()) {
        assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()));
    }
}

#[test]
fn sidecar_and_csv() {
    let mesh = uniform(0.0, 1.0, 4);
    let sys = DiscreteSystem::new(Arc::new(decoupled("0", "0")), mesh.clone(), Dirichlet::uniform(1.0, 2.0), f64::INFINITY).unwrap();
    let z = gf(&mesh, |_| 0.0);
    let res = newton_solve(&sys, (&z, &z), &SolveOptions::default()).unwrap();
    let json: serde_json::Value = serde_json::from_str(&res.sidecar_json()).unwrap();
    assert!(json["R_trunc"].is_null());
    assert_eq!(json["iterations"], 1);
    let mut buf = Vec::new();
    res.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("x,u,v\n0.0,1.0,2.0\n"), "{text}");
}

#[test]
fn invalid_systems_are_rejected() {
    let mesh = uniform(0.0, 1.0, 4);
    let spec = Arc::new(decoupled("u", "v"));
    assert!(DiscreteSystem::new(spec.clone(), mesh.clone(), Dirichlet::uniform(f64::INFINITY, 1.0), 1.0).is_err());
    assert!(DiscreteSystem::new(spec.clone(), mesh.clone(), Dirichlet::uniform(1.0, 1.0), 0.0).is_err());
    let mut bad = (*spec).clone();
    bad.q1 = 3.0;
    assert!(matches!(
        DiscreteSystem::new(Arc::new(bad), mesh, Dirichlet::uniform(1.0, 1.0), 1.0),
        Err(SolverError::Model(ModelError::InvalidExponent { name: "q1", .. }))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scalar_comparison_is_monotone(a1 in 0.5f64..20.0, gap in 0.01f64..20.0, p in 1.5f64..3.0) {
        let mesh = uniform(0.0, 1.0, 40);
        let spec = Arc::new(decoupled(&format!("u^{p}"), "v"));
        let solve = |alpha: f64| {
            let sys = DiscreteSystem::new(spec.clone(), mesh.clone(), Dirichlet::uniform(alpha, 1.0), f64::INFINITY).unwrap();
            let init = gf(&mesh, |_| alpha);
            newton_solve(&sys, (&init, &init), &SolveOptions::default()).unwrap()
        };
        let lo = solve(a1);
        let hi = solve(a1 + gap);
        prop_assert!(lo.converged && hi.converged);
        for (a, b) in lo.u.values().iter().zip(hi.u.values()) {
            prop_assert!(*a <= b + 1e-8);
        }
    }

    #[test]
    fn truncation_identity_below_knee(amp in 0.1f64..5.0, q in 0.3f64..2.0, r in 0.5f64..50.0) {
        let mesh = uniform(0.0, 1.0, 30);
        let spec = Arc::new(decoupled("u^2", "v").with_convection(coef("1"), q, coef("2"), q));
        let sys = DiscreteSystem::new(spec, mesh.clone(), Dirichlet::uniform(1.0, 1.0), r).unwrap();
        let u = gf(&mesh, |x| 1.0 + amp * x * x);
        let t = sys.residual(&u, &u).unwrap();
        let f = sys.residual_untruncated(&u, &u).unwrap();
        let interior: Vec<usize> = (1..mesh.last()).collect();
        for (k, &i) in interior.iter().enumerate() {
            if mesh.gradient_at(u.values(), i).abs().powf(q) < r {
                prop_assert_eq!(t[2 * k].to_bits(), f[2 * k].to_bits());
            } else {
                prop_assert!(t[2 * k] <= f[2 * k]);
            }
        }
    }
}
