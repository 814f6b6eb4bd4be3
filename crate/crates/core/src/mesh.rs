//! One-dimensional interval and radial meshes with boundary grading,
//! three-point stencils and grid functions.

use std::io;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("bad grading: {0}")]
    BadGrading(String),
    #[error("a mesh needs at least 4 cells, got {0}")]
    TooFewCells(usize),
    #[error("bad geometry: {0}")]
    BadGeometry(String),
    #[error("grid function has {found} values for {expected} nodes")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite value {value} at node {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("csv: {0}")]
    Csv(String),
}

/// Which interval endpoints carry blow-up data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sides {
    pub left: bool,
    pub right: bool,
}

impl Sides {
    pub const BOTH: Sides = Sides { left: true, right: true };
    pub const LEFT: Sides = Sides { left: true, right: false };
    pub const RIGHT: Sides = Sides { left: false, right: true };
    pub const NONE: Sides = Sides { left: false, right: false };

    fn any(self) -> bool {
        self.left || self.right
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Geometry {
    Interval { a: f64, b: f64, blowup: Sides },
    /// Ball of radius `r_max` in dimension `dim`; only `r_max` is a boundary.
    Radial { dim: usize, r_max: f64 },
}

impl Geometry {
    pub fn interval(a: f64, b: f64) -> Self {
        Geometry::Interval { a, b, blowup: Sides::BOTH }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            Geometry::Interval { a, b, .. } => (a, b),
            Geometry::Radial { r_max, .. } => (0.0, r_max),
        }
    }

    fn graded_sides(&self) -> Sides {
        match *self {
            Geometry::Interval { blowup, .. } => blowup,
            Geometry::Radial { .. } => Sides::RIGHT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Grading {
    Uniform,
    GradedBoundary { ratio: f64, min_spacing: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    nodes: Vec<f64>,
    geometry: Geometry,
    grading: Grading,
}

/// Cell sizes of one graded boundary layer, listed from the boundary inward.
fn layer(ratio: f64, min_spacing: f64, k: usize) -> Vec<f64> {
    let fill = (1.0 / (1.0 - ratio)).round().max(1.0) as usize;
    let mut cells = vec![min_spacing; fill];
    let mut h = min_spacing;
    for _ in 0..k {
        h /= ratio;
        cells.push(h);
    }
    cells
}

/// Builds a mesh with `n_cells` cells in total.
///
/// Graded meshes put `round(1/(1-ratio))` cells of size `min_spacing` at each
/// blow-up endpoint, then cells growing by `1/ratio`, as many as possible
/// while the uniform interior spacing stays at least the largest graded cell.
pub fn build_mesh(geometry: Geometry, n_cells: usize, grading: Grading) -> Result<Mesh, MeshError> {
    if n_cells < 4 {
        return Err(MeshError::TooFewCells(n_cells));
    }
    let (lo, hi) = geometry.bounds();
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(MeshError::BadGeometry(format!("need finite a < b, got [{lo}, {hi}]")));
    }
    if let Geometry::Radial { dim, .. } = geometry {
        if dim == 0 {
            return Err(MeshError::BadGeometry("radial dimension must be at least 1".into()));
        }
    }
    let nodes = match grading {
        Grading::Uniform => (0..=n_cells)
            .map(|k| {
                if k == n_cells {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / n_cells as f64
                }
            })
            .collect(),
        Grading::GradedBoundary { ratio, min_spacing } => {
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(MeshError::BadGrading(format!("ratio must lie in (0,1), got {ratio}")));
            }
            if !(min_spacing > 0.0 && min_spacing.is_finite()) {
                return Err(MeshError::BadGrading(format!("min_spacing must be positive, got {min_spacing}")));
            }
            let sides = geometry.graded_sides();
            if !sides.any() {
                return Err(MeshError::BadGrading("no blow-up endpoint to grade toward".into()));
            }
            graded_nodes(lo, hi, n_cells, ratio, min_spacing, sides)?
        }
    };
    Ok(Mesh { nodes, geometry, grading })
}

fn graded_nodes(lo: f64, hi: f64, n_cells: usize, ratio: f64, ms: f64, sides: Sides) -> Result<Vec<f64>, MeshError> {
    let n_sides = sides.left as usize + sides.right as usize;
    let fits = |cells: &[f64]| {
        let used = n_sides * cells.len();
        if used >= n_cells {
            return false;
        }
        let interior = (hi - lo) - n_sides as f64 * cells.iter().sum::<f64>();
        interior / (n_cells - used) as f64 >= *cells.last().unwrap()
    };
    let mut best = None;
    let mut k = 0;
    loop {
        let cells = layer(ratio, ms, k);
        if !fits(&cells) {
            break;
        }
        best = Some(cells);
        k += 1;
    }
    let cells = best.ok_or_else(|| {
        MeshError::BadGrading(format!(
            "{n_cells} cells cannot resolve min_spacing {ms} with ratio {ratio} on [{lo}, {hi}]"
        ))
    })?;
    let interior_cells = n_cells - n_sides * cells.len();
    let mut head = vec![lo];
    if sides.left {
        for h in &cells {
            head.push(head.last().unwrap() + h);
        }
    }
    let mut tail = vec![hi];
    if sides.right {
        for h in &cells {
            tail.push(tail.last().unwrap() - h);
        }
    }
    let left = *head.last().unwrap();
    let right = *tail.last().unwrap();
    let mut nodes = head;
    for k in 1..interior_cells {
        nodes.push(left + (right - left) * k as f64 / interior_cells as f64);
    }
    nodes.extend(tail.iter().rev());
    Ok(nodes)
}

impl Mesh {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn last(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn grading(&self) -> Grading {
        self.grading
    }

    pub fn is_radial(&self) -> bool {
        matches!(self.geometry, Geometry::Radial { .. })
    }

    /// Indices carrying Dirichlet data (radial meshes have only `r_max`).
    pub fn boundary_nodes(&self) -> Vec<usize> {
        if self.is_radial() {
            vec![self.last()]
        } else {
            vec![0, self.last()]
        }
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        i == self.last() || (i == 0 && !self.is_radial())
    }

    /// Width of cell `i`, i.e. `x_{i+1} - x_i`.
    pub fn spacing(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.n_cells()).map(|i| self.spacing(i)).fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.n_cells()).map(|i| self.spacing(i)).fold(0.0, f64::max)
    }

    /// The next mesh of a refinement study with twice as many cells.
    ///
    /// Uniform meshes are bisected. Graded meshes are rebuilt with ratio
    /// `sqrt(ratio)` and half the minimum spacing, so the spacing still
    /// varies smoothly and stencils keep their second order.
    pub fn refine(&self) -> Result<Mesh, MeshError> {
        match self.grading {
            Grading::Uniform => {
                let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
                for w in self.nodes.windows(2) {
                    nodes.push(w[0]);
                    nodes.push(0.5 * (w[0] + w[1]));
                }
                nodes.push(*self.nodes.last().unwrap());
                Ok(Mesh { nodes, geometry: self.geometry, grading: self.grading })
            }
            Grading::GradedBoundary { ratio, min_spacing } => build_mesh(
                self.geometry,
                2 * self.n_cells(),
                Grading::GradedBoundary { ratio: ratio.sqrt(), min_spacing: 0.5 * min_spacing },
            ),
        }
    }

    /// Stencil `(c_{i-1}, c_i, c_{i+1})` of the discrete Laplacian at `i`.
    ///
    /// At the radial centre the symmetric limit `2N (u_1 - u_0) / h^2` is
    /// used and `c_{i-1}` is zero.
    pub fn laplacian_row(&self, i: usize) -> [f64; 3] {
        if let Geometry::Radial { dim, .. } = self.geometry {
            if i == 0 {
                let h = self.spacing(0);
                let c = 2.0 * dim as f64 / (h * h);
                return [0.0, -c, c];
            }
        }
        assert!(i > 0 && i < self.last(), "laplacian_row needs an interior node, got {i}");
        let hm = self.spacing(i - 1);
        let hp = self.spacing(i);
        let mut row = [2.0 / (hm * (hm + hp)), -2.0 / (hm * hp), 2.0 / (hp * (hm + hp))];
        if let Geometry::Radial { dim, .. } = self.geometry {
            let w = (dim as f64 - 1.0) / self.nodes[i];
            let d = central_weights(hm, hp);
            for k in 0..3 {
                row[k] += w * d[k];
            }
        }
        row
    }

    /// First-derivative weights at node `i` as `(node index, weight)`.
    pub fn gradient_weights(&self, i: usize) -> [(usize, f64); 3] {
        let m = self.last();
        if i == 0 {
            if self.is_radial() {
                return [(0, 0.0), (1, 0.0), (2, 0.0)];
            }
            let (h1, h2) = (self.spacing(0), self.spacing(1));
            [
                (0, -(2.0 * h1 + h2) / (h1 * (h1 + h2))),
                (1, (h1 + h2) / (h1 * h2)),
                (2, -h1 / (h2 * (h1 + h2))),
            ]
        } else if i == m {
            let (h1, h2) = (self.spacing(m - 1), self.spacing(m - 2));
            [
                (m - 2, h1 / (h2 * (h1 + h2))),
                (m - 1, -(h1 + h2) / (h1 * h2)),
                (m, (2.0 * h1 + h2) / (h1 * (h1 + h2))),
            ]
        } else {
            let d = central_weights(self.spacing(i - 1), self.spacing(i));
            [(i - 1, d[0]), (i, d[1]), (i + 1, d[2])]
        }
    }

    /// Second-order derivative of `values` at node `i`.
    pub fn gradient_at(&self, values: &[f64], i: usize) -> f64 {
        self.gradient_weights(i).iter().map(|&(j, w)| w * values[j]).sum()
    }

    /// Distance from node `i` to the nearest blow-up endpoint (or to the
    /// nearest endpoint when none is flagged).
    pub fn boundary_distance(&self, i: usize) -> f64 {
        let x = self.nodes[i];
        match self.geometry {
            Geometry::Radial { r_max, .. } => r_max - x,
            Geometry::Interval { a, b, blowup } => {
                let sides = if blowup.any() { blowup } else { Sides::BOTH };
                let mut d = f64::INFINITY;
                if sides.left {
                    d = d.min(x - a);
                }
                if sides.right {
                    d = d.min(b - x);
                }
                d
            }
        }
    }

    /// Index of the node closest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let k = self.nodes.partition_point(|&n| n < x);
        if k == 0 {
            0
        } else if k == self.nodes.len() || x - self.nodes[k - 1] <= self.nodes[k] - x {
            k - 1
        } else {
            k
        }
    }
}

/// Three-point first-derivative weights exact for quadratics.
fn central_weights(hm: f64, hp: f64) -> [f64; 3] {
    [-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp))]
}

/// Nodal values of one unknown on a shared mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self, MeshError> {
        if values.len() != mesh.len() {
            return Err(MeshError::LengthMismatch {
                expected: mesh.len(),
                found: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(MeshError::NonFinite { index, value });
        }
        Ok(GridFunction { mesh, values })
    }

    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn(f64) -> f64) -> Result<Self, MeshError> {
        let values = mesh.nodes().iter().map(|&x| f(x)).collect();
        Self::new(mesh, values)
    }

    pub fn constant(mesh: Arc<Mesh>, c: f64) -> Result<Self, MeshError> {
        Self::from_fn(mesh, |_| c)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn gradient_at(&self, i: usize) -> f64 {
        self.mesh.gradient_at(&self.values, i)
    }

    /// Sup over nodes with coordinate in `[lo, hi]`.
    pub fn sup_on(&self, lo: f64, hi: f64) -> Option<f64> {
        self.mesh
            .nodes()
            .iter()
            .zip(&self.values)
            .filter(|(x, _)| **x >= lo && **x <= hi)
            .map(|(_, v)| *v)
            .reduce(f64::max)
    }

    /// Rows `x,value`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), MeshError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| MeshError::Csv(e.to_string());
        w.write_record(["x", "value"]).map_err(err)?;
        for (x, v) in self.mesh.nodes().iter().zip(&self.values) {
            w.write_record([fmt_f64(*x), fmt_f64(*v)]).map_err(err)?;
        }
        w.flush().map_err(|e| MeshError::Csv(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Reads two-column CSV data `(x, value)` with a header row.
pub fn read_xy_csv<R: io::Read>(input: R) -> Result<(Vec<f64>, Vec<f64>), MeshError> {
    let mut r = csv::Reader::from_reader(input);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| MeshError::Csv(e.to_string()))?;
        let field = |k: usize| -> Result<f64, MeshError> {
            rec.get(k)
                .ok_or_else(|| MeshError::Csv(format!("row {} has fewer than 2 columns", line + 2)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| MeshError::Csv(format!("row {}: {e}", line + 2)))
        };
        xs.push(field(0)?);
        ys.push(field(1)?);
    }
    Ok((xs, ys))
}

/// A mesh over `[a, b]` from explicit nodes, for data read back from disk.
pub fn mesh_from_nodes(nodes: Vec<f64>, geometry: Geometry) -> Result<Mesh, MeshError> {
    if nodes.len() < 3 || nodes.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(MeshError::BadGeometry("nodes must be strictly increasing, at least 3".into()));
    }
    Ok(Mesh { nodes, geometry, grading: Grading::Uniform })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn uniform_interval() {
        let m = build_mesh(Geometry::interval(0.0, 1.0), 10, Grading::Uniform).unwrap();
        assert_eq!(m.len(), 11);
        for (k, x) in m.nodes().iter().enumerate() {
            assert!(close(*x, k as f64 / 10.0, 1e-15));
        }
        assert_eq!(m.nodes()[10], 1.0);
    }

    #[test]
    fn graded_right_end_example() {
        let geo = Geometry::Interval { a: 0.0, b: 1.0, blowup: Sides::RIGHT };
        let m = build_mesh(geo, 6, Grading::GradedBoundary { ratio: 0.5, min_spacing: 0.0625 }).unwrap();
        let cells: Vec<f64> = (0..m.n_cells()).map(|i| m.spacing(i)).collect();
        let n = cells.len();
        assert_eq!(&cells[n - 4..], &[0.25, 0.125, 0.0625, 0.0625]);
        assert_eq!(m.nodes()[0], 0.0);
        assert_eq!(*m.nodes().last().unwrap(), 1.0);
        assert_eq!(m.n_cells(), 6);
    }

    #[test]
    fn grading_errors() {
        let g = Geometry::interval(0.0, 1.0);
        for ratio in [0.0, 1.0, 1.5, -0.2] {
            let e = build_mesh(g, 10, Grading::GradedBoundary { ratio, min_spacing: 0.01 });
            assert!(matches!(e, Err(MeshError::BadGrading(_))), "{ratio}");
        }
        assert!(matches!(build_mesh(g, 3, Grading::Uniform), Err(MeshError::TooFewCells(3))));
        assert!(build_mesh(g, 4, Grading::GradedBoundary { ratio: 0.9, min_spacing: 0.2 }).is_err());
    }

    #[test]
    fn radial_includes_centre_and_rim() {
        let m = build_mesh(Geometry::Radial { dim: 3, r_max: 2.0 }, 8, Grading::Uniform).unwrap();
        assert_eq!(m.nodes()[0], 0.0);
        assert_eq!(*m.nodes().last().unwrap(), 2.0);
        assert_eq!(m.boundary_nodes(), vec![8]);
    }

    #[test]
    fn stencil_examples() {
        let m = build_mesh(Geometry::interval(0.0, 1.0), 10, Grading::Uniform).unwrap();
        let [a, b, c] = m.laplacian_row(3);
        assert!(close(a, 100.0, 1e-12) && close(b, -200.0, 1e-12) && close(c, 100.0, 1e-12));

        let m = mesh_from_nodes(vec![0.0, 0.1, 0.3, 0.5], Geometry::interval(0.0, 0.5)).unwrap();
        let [a, b, c] = m.laplacian_row(1);
        assert!(close(a, 200.0 / 3.0, 1e-12));
        assert!(close(c, 100.0 / 3.0, 1e-12));
        assert!(close(b, -100.0, 1e-12));

        let m = build_mesh(Geometry::Radial { dim: 3, r_max: 1.0 }, 4, Grading::Uniform).unwrap();
        let [a, b, c] = m.laplacian_row(0);
        assert_eq!(a, 0.0);
        assert!(close(c, 6.0 / 0.0625, 1e-14) && close(b, -6.0 / 0.0625, 1e-14));
    }

    #[test]
    fn gradient_examples() {
        let m = Arc::new(
            build_mesh(Geometry::interval(0.0, 1.0), 40, Grading::GradedBoundary { ratio: 0.8, min_spacing: 0.002 })
                .unwrap(),
        );
        let id = GridFunction::from_fn(m.clone(), |x| x).unwrap();
        for i in 0..m.len() {
            assert!(close(id.gradient_at(i), 1.0, 1e-9), "node {i}");
        }

        let u = build_mesh(Geometry::interval(0.0, 1.0), 10, Grading::Uniform).unwrap();
        let sq: Vec<f64> = u.nodes().iter().map(|x| x * x).collect();
        assert!(close(u.gradient_at(&sq, 5), 1.0, 1e-13));
    }

    #[test]
    fn gradient_of_blowup_profile_converges() {
        let geo = Geometry::Interval { a: 0.0, b: 0.9, blowup: Sides::RIGHT };
        let mut errs = Vec::new();
        for n in [50, 100, 200] {
            let m = build_mesh(geo, n, Grading::GradedBoundary { ratio: 0.9, min_spacing: 2e-3 / n as f64 * 50.0 }).unwrap();
            let f: Vec<f64> = m.nodes().iter().map(|x| 6.0 / (1.0 - x).powi(2)).collect();
            let i = m.nearest(0.5);
            let exact = 12.0 / (1.0 - m.nodes()[i]).powi(3);
            errs.push((m.gradient_at(&f, i) - exact).abs() / exact);
        }
        assert!(errs[2] < 1e-3, "{errs:?}");
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn boundary_distance_examples() {
        let nodes = vec![0.0, 0.3, 0.6, 1.0];
        let both = mesh_from_nodes(nodes.clone(), Geometry::interval(0.0, 1.0)).unwrap();
        assert_eq!(both.boundary_distance(1), 0.3);
        let right = mesh_from_nodes(nodes, Geometry::Interval { a: 0.0, b: 1.0, blowup: Sides::RIGHT }).unwrap();
        assert_eq!(right.boundary_distance(1), 0.7);
        let radial = build_mesh(Geometry::Radial { dim: 3, r_max: 2.0 }, 4, Grading::Uniform).unwrap();
        assert_eq!(radial.boundary_distance(3), 0.5);
    }

    #[test]
    fn radial_laplacian_of_r_squared() {
        for dim in 1..=5 {
            let m = build_mesh(
                Geometry::Radial { dim, r_max: 3.0 },
                30,
                Grading::GradedBoundary { ratio: 0.7, min_spacing: 0.01 },
            )
            .unwrap();
            let f: Vec<f64> = m.nodes().iter().map(|r| r * r).collect();
            for i in 0..m.last() {
                let [a, b, c] = m.laplacian_row(i);
                let lap = if i == 0 { b * f[0] + c * f[1] } else { a * f[i - 1] + b * f[i] + c * f[i + 1] };
                assert!(close(lap, 2.0 * dim as f64, 1e-8), "dim {dim} node {i}: {lap}");
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let m = Arc::new(build_mesh(Geometry::interval(0.0, 1.0), 4, Grading::Uniform).unwrap());
        let f = GridFunction::from_fn(m, |x| 1.0 / (1.0 + x)).unwrap();
        let text = f.to_csv_string();
        assert!(text.starts_with("x,value\n0.0,1.0\n"));
        let (xs, ys) = read_xy_csv(text.as_bytes()).unwrap();
        assert_eq!(xs, f.mesh().nodes());
        assert_eq!(ys, f.values());
    }

    #[test]
    fn grid_function_validation() {
        let m = Arc::new(build_mesh(Geometry::interval(0.0, 1.0), 4, Grading::Uniform).unwrap());
        assert!(matches!(GridFunction::new(m.clone(), vec![1.0; 4]), Err(MeshError::LengthMismatch { .. })));
        assert!(matches!(
            GridFunction::new(m, vec![1.0, f64::NAN, 1.0, 1.0, 1.0]),
            Err(MeshError::NonFinite { index: 1, .. })
        ));
    }

    fn arb_mesh() -> impl Strategy<Value = Mesh> {
        (4usize..120, 0.3f64..0.95, 1e-4f64..1e-2, 0usize..4, 1usize..5).prop_filter_map(
            "grading must fit",
            |(n, ratio, ms, kind, dim)| {
                let geo = match kind {
                    0 => Geometry::interval(-1.0, 2.0),
                    1 => Geometry::Interval { a: 0.0, b: 1.0, blowup: Sides::LEFT },
                    2 => Geometry::Interval { a: 0.0, b: 0.9, blowup: Sides::RIGHT },
                    _ => Geometry::Radial { dim, r_max: 2.0 },
                };
                build_mesh(geo, n, Grading::GradedBoundary { ratio, min_spacing: ms }).ok()
            },
        )
    }

    proptest! {
        #[test]
        fn quadratics_are_exact(m in arb_mesh(), c0 in -5.0f64..5.0, c1 in -5.0f64..5.0, c2 in -5.0f64..5.0) {
            prop_assume!(!m.is_radial());
            let f: Vec<f64> = m.nodes().iter().map(|x| c0 + c1 * x + c2 * x * x).collect();
            for i in 1..m.last() {
                let [a, b, c] = m.laplacian_row(i);
                let lap = a * f[i - 1] + b * f[i] + c * f[i + 1];
                // exact up to cancellation in the stencil sum itself
                let mag = |j: usize| { let x = m.nodes()[j]; c0.abs() + (c1 * x).abs() + (c2 * x * x).abs() };
                let scale = a.abs() * mag(i - 1) + b.abs() * mag(i) + c.abs() * mag(i + 1);
                prop_assert!((lap - 2.0 * c2).abs() <= 1e-10 + 8.0 * f64::EPSILON * scale, "{lap} vs {}", 2.0 * c2);
            }
        }

        #[test]
        fn graded_meshes_are_well_formed(m in arb_mesh()) {
            let Grading::GradedBoundary { min_spacing, .. } = m.grading() else { unreachable!() };
            prop_assert!(m.nodes().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(m.min_spacing() >= min_spacing * (1.0 - 1e-9));
            let sides = m.geometry().graded_sides();
            let n = m.n_cells();
            // spacing is monotone toward each graded end through the layer
            if sides.right {
                let cells: Vec<f64> = (0..n).map(|i| m.spacing(i)).collect();
                let start = cells.iter().rposition(|h| *h > cells[n - 1] * 1.000001 && *h >= m.max_spacing() * (1.0 - 1e-9)).unwrap_or(0);
                prop_assert!(cells[start..].windows(2).all(|w| w[0] >= w[1] * (1.0 - 1e-9)));
            }
            if sides.left {
                let cells: Vec<f64> = (0..n).map(|i| m.spacing(i)).collect();
                let end = cells.iter().position(|h| *h >= m.max_spacing() * (1.0 - 1e-9)).unwrap_or(n - 1);
                prop_assert!(cells[..=end].windows(2).all(|w| w[0] <= w[1] * (1.0 + 1e-9)));
            }
        }
    }
}
