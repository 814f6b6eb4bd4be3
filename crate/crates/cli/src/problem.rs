//! Problem files: strict TOML schema and its translation into core objects.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use osserman_core::drivers::{Component, StructuralGate};
use osserman_core::expr::{Params, ScalarFunctionExpr, VarSet};
use osserman_core::mesh::{build_mesh, Geometry, Grading, Mesh, Sides};
use osserman_core::model::{coefficient_vars, profile_vars, state_vars, NonlinearitySpec};

use crate::Failure;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub nonlinearity: NonlinearityTable,
    pub domain: DomainTable,
    pub boundary: Option<BoundaryTable>,
    pub mesh: Option<MeshTable>,
    pub campaign: Option<CampaignTable>,
    pub check: Option<CheckTable>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityTable {
    /// Potential `F(x,u,v)`.
    #[serde(rename = "F")]
    pub f: Option<String>,
    pub fu: Option<String>,
    pub fv: Option<String>,
    /// `c1 u^rho + c2 u^sigma v^gamma + c3 v^theta`.
    pub family: Option<FamilyTable>,
    pub f1: Option<String>,
    pub f2: Option<String>,
    pub g: Option<String>,
    pub a1: Option<String>,
    pub a2: Option<String>,
    pub a1_sq: Option<String>,
    pub a2_sq: Option<String>,
    pub b1: Option<String>,
    pub b2: Option<String>,
    #[serde(default = "one")]
    pub q1: f64,
    #[serde(default = "one")]
    pub q2: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyTable {
    #[serde(default = "unit_c")]
    pub c: [f64; 3],
    pub rho: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub theta: f64,
}

fn unit_c() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Interval,
    Radial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowupSides {
    Both,
    Left,
    Right,
    None,
}

impl BlowupSides {
    pub fn sides(self) -> Sides {
        match self {
            BlowupSides::Both => Sides::BOTH,
            BlowupSides::Left => Sides::LEFT,
            BlowupSides::Right => Sides::RIGHT,
            BlowupSides::None => Sides::NONE,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DomainTable {
    pub kind: DomainKind,
    /// `[a, b]` for intervals, `[0, r_max]` for balls.
    pub bounds: Option<[f64; 2]>,
    #[serde(rename = "N")]
    pub dim: Option<usize>,
    pub blowup: Option<BlowupSides>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Finite,
    Infinite,
    /// `u` blows up, `v = beta`.
    SemifiniteU,
    /// `v` blows up, `u = alpha`.
    SemifiniteV,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryTable {
    pub kind: BoundaryKind,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradingKind {
    Uniform,
    Graded,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MeshTable {
    pub cells: usize,
    pub grading: GradingKind,
    pub min_spacing: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignKind {
    Finite,
    Infinite,
    Semifinite,
    Entire,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignTable {
    #[serde(rename = "type")]
    pub kind: CampaignKind,
    pub schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub compacts: Vec<[f64; 2]>,
    pub window: Option<[f64; 2]>,
    pub m: Option<f64>,
    #[serde(rename = "M")]
    pub big_m: Option<f64>,
    pub trace_factor: Option<f64>,
    #[serde(default)]
    pub certify_truncation: bool,
    pub r_trunc: Option<f64>,
    #[serde(default)]
    pub envelope: bool,
    #[serde(default)]
    pub dump_levels: bool,
    pub n_max: Option<usize>,
    pub cells_per_unit: Option<usize>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CheckTable {
    pub xs: Option<Vec<f64>>,
    pub ts: Option<Vec<f64>>,
    pub ss: Option<Vec<f64>>,
}

/// Default schedule `2^0, …, 2^14`.
pub fn default_schedule() -> Vec<f64> {
    (0..=14).map(|k| 2f64.powi(k)).collect()
}

/// `1,2,4` or a power range such as `2^0..2^14`.
pub fn parse_schedule(text: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Input(format!("cannot read schedule `{text}`: use `1,2,4` or `2^0..2^14`"));
    if let Some((lo, hi)) = text.split_once("..") {
        let power = |s: &str| -> Result<(f64, i32), Failure> {
            let (b, e) = s.trim().split_once('^').ok_or_else(bad)?;
            Ok((b.trim().parse().map_err(|_| bad())?, e.trim().parse().map_err(|_| bad())?))
        };
        let (b0, e0) = power(lo)?;
        let (b1, e1) = power(hi)?;
        if b0 != b1 || e1 < e0 {
            return Err(bad());
        }
        return Ok((e0..=e1).map(|k| b0.powi(k)).collect());
    }
    text.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect()
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), Failure> {
        let bytes = std::fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let problem = toml::from_str(text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        Ok((problem, bytes))
    }

    pub fn mesh_table(&self) -> Result<&MeshTable, Failure> {
        self.mesh.as_ref().ok_or_else(|| Failure::Input("missing [mesh] table (cells, grading, min_spacing)".into()))
    }

    pub fn campaign_table(&self) -> Result<&CampaignTable, Failure> {
        self.campaign.as_ref().ok_or_else(|| Failure::Input("missing [campaign] table (type, schedule, compacts)".into()))
    }

    pub fn spec(&self) -> Result<NonlinearitySpec, Failure> {
        let nl = &self.nonlinearity;
        let params: Params = self.params.clone();
        let parse = |key: &str, src: &str, vars: VarSet| {
            ScalarFunctionExpr::parse(src, vars, &params)
                .map_err(|e| Failure::Input(format!("[nonlinearity] {key} = \"{src}\": {e}")))
        };
        let given = [nl.f.is_some(), nl.fu.is_some() || nl.fv.is_some(), nl.family.is_some()];
        if given.iter().filter(|g| **g).count() != 1 {
            return Err(Failure::Input(
                "[nonlinearity] needs exactly one of F, the pair fu/fv, or family".into(),
            ));
        }
        let mut spec = if let Some(f) = &nl.f {
            NonlinearitySpec::from_potential(parse("F", f, state_vars())?)
        } else if let Some(fam) = nl.family {
            NonlinearitySpec::power_family(fam.c, fam.rho, fam.sigma, fam.gamma, fam.theta)
        } else {
            let (fu, fv) = match (&nl.fu, &nl.fv) {
                (Some(fu), Some(fv)) => (fu, fv),
                _ => return Err(Failure::Input("[nonlinearity] fu and fv must be given together".into())),
            };
            NonlinearitySpec::from_partials(parse("fu", fu, state_vars())?, parse("fv", fv, state_vars())?)
        }
        .map_err(|e| Failure::Input(format!("[nonlinearity] {e}")))?;

        let coef = |key: &str, v: &Option<String>, default: &str| parse(key, v.as_deref().unwrap_or(default), coefficient_vars());
        spec = spec.with_weights(
            coef("a1", &nl.a1, "1")?,
            coef("a2", &nl.a2, "1")?,
            coef("a1_sq", &nl.a1_sq, "1")?,
            coef("a2_sq", &nl.a2_sq, "1")?,
        );
        spec = spec.with_convection(coef("b1", &nl.b1, "0")?, nl.q1, coef("b2", &nl.b2, "0")?, nl.q2);
        let profile = |key: &str, v: &Option<String>| v.as_deref().map(|s| parse(key, s, profile_vars())).transpose();
        spec.f1 = profile("f1", &nl.f1)?;
        spec.f2 = profile("f2", &nl.f2)?;
        spec.g = profile("g", &nl.g)?;
        spec.validate().map_err(|e| Failure::Input(e.to_string()))?;
        Ok(spec)
    }

    pub fn geometry(&self) -> Result<Geometry, Failure> {
        let d = &self.domain;
        match d.kind {
            DomainKind::Interval => {
                let [a, b] = d
                    .bounds
                    .ok_or_else(|| Failure::Input("[domain] interval needs bounds = [a, b]".into()))?;
                if d.dim.is_some() {
                    return Err(Failure::Input("[domain] N applies to radial domains only".into()));
                }
                let blowup = d.blowup.unwrap_or(BlowupSides::Both).sides();
                Ok(Geometry::Interval { a, b, blowup })
            }
            DomainKind::Radial => {
                if d.blowup.is_some() {
                    return Err(Failure::Input("[domain] blowup applies to intervals only".into()));
                }
                let dim = d.dim.ok_or_else(|| Failure::Input("[domain] radial needs N".into()))?;
                let r_max = match d.bounds {
                    Some([0.0, r]) => r,
                    Some(_) => return Err(Failure::Input("[domain] radial bounds must be [0, r_max]".into())),
                    None => 1.0,
                };
                Ok(Geometry::Radial { dim, r_max })
            }
        }
    }

    pub fn build_mesh(&self) -> Result<Arc<Mesh>, Failure> {
        let t = self.mesh_table()?;
        let grading = match t.grading {
            GradingKind::Uniform => Grading::Uniform,
            GradingKind::Graded => Grading::GradedBoundary {
                ratio: t.ratio.unwrap_or(0.9),
                min_spacing: t
                    .min_spacing
                    .ok_or_else(|| Failure::Input("[mesh] graded meshes need min_spacing".into()))?,
            },
        };
        let mesh = build_mesh(self.geometry()?, t.cells, grading).map_err(|e| Failure::Input(format!("[mesh] {e}")))?;
        Ok(Arc::new(mesh))
    }

    /// Coefficient sample points: the `[check]` list or nine points across
    /// the closed domain.
    pub fn x_samples(&self) -> Result<Vec<f64>, Failure> {
        if let Some(xs) = self.check.as_ref().and_then(|c| c.xs.clone()) {
            return Ok(xs);
        }
        let (a, b) = match self.geometry()? {
            Geometry::Interval { a, b, .. } => (a, b),
            Geometry::Radial { r_max, .. } => {
                let n = self.campaign.as_ref().and_then(|c| c.n_max).filter(|_| self.is_entire());
                (0.0, n.map_or(r_max, |n| n as f64))
            }
        };
        Ok((0..=8).map(|k| a + (b - a) * k as f64 / 8.0).collect())
    }

    fn is_entire(&self) -> bool {
        self.campaign.as_ref().is_some_and(|c| c.kind == CampaignKind::Entire)
    }

    pub fn gate(&self) -> Result<StructuralGate, Failure> {
        let c = self.check.clone().unwrap_or_default();
        let grid = || -> Vec<f64> { (0..=24).map(|k| 10f64.powf(-3.0 + k as f64 / 4.0)).collect() };
        Ok(StructuralGate {
            xs: self.x_samples()?,
            ts: c.ts.unwrap_or_else(grid),
            ss: c.ss.unwrap_or_else(grid),
        })
    }

    /// Which component escalates and the fixed datum of the other one.
    pub fn semifinite_data(&self) -> Result<(Component, f64), Failure> {
        let b = self.boundary_table()?;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Failure::Input(format!("[boundary] {:?} needs {name}", b.kind)))
        };
        match b.kind {
            BoundaryKind::SemifiniteU => Ok((Component::U, need(b.beta, "beta")?)),
            BoundaryKind::SemifiniteV => Ok((Component::V, need(b.alpha, "alpha")?)),
            _ => Err(Failure::Input("semifinite campaigns need [boundary] kind semifinite_u or semifinite_v".into())),
        }
    }

    pub fn finite_data(&self) -> Result<(f64, f64), Failure> {
        let b = self.boundary_table()?;
        match (b.kind, b.alpha, b.beta) {
            (BoundaryKind::Finite, Some(a), Some(bv)) => Ok((a, bv)),
            (BoundaryKind::Finite, ..) => Err(Failure::Input("[boundary] finite needs alpha and beta".into())),
            _ => Err(Failure::Input("finite campaigns need [boundary] kind = \"finite\"".into())),
        }
    }

    pub fn boundary_table(&self) -> Result<&BoundaryTable, Failure> {
        self.boundary.as_ref().ok_or_else(|| Failure::Input("missing [boundary] table (kind, alpha, beta)".into()))
    }
}
