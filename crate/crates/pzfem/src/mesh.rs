//! Uniform meshes of [0,1] and [0,1]^2 with conforming piecewise-linear
//! elements, nodal quadrature and per-element gradient reconstruction.

use std::io::{self, Write};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("resolution must be at least 2, got {0}")]
    ResolutionTooSmall(usize),
    #[error("dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
    #[error("expected {expected} nodal values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Conforming P1 mesh. In 1D, elements are intervals; the third local node
/// slot duplicates the second with a zero gradient coefficient so element
/// loops are uniform across dimensions.
#[derive(Debug, Clone)]
pub struct Mesh {
    dimension: usize,
    resolution: usize,
    coords: Vec<[f64; 2]>,
    elem_nodes: Vec<[usize; 3]>,
    elem_grads: Vec<[[f64; 2]; 3]>,
    elem_measures: Vec<f64>,
    elem_mids: Vec<[f64; 2]>,
    boundary: Vec<bool>,
    node_weights: Vec<f64>,
}

pub fn build_mesh(dimension: usize, resolution: usize) -> Result<Mesh, MeshError> {
    if resolution < 2 {
        return Err(MeshError::ResolutionTooSmall(resolution));
    }
    match dimension {
        1 => Ok(build_1d(resolution)),
        2 => Ok(build_2d(resolution)),
        d => Err(MeshError::BadDimension(d)),
    }
}

fn build_1d(n: usize) -> Mesh {
    let h = 1.0 / n as f64;
    let coords: Vec<[f64; 2]> = (0..=n).map(|i| [i as f64 * h, 0.0]).collect();
    let mut elem_nodes = Vec::with_capacity(n);
    let mut elem_grads = Vec::with_capacity(n);
    let mut elem_mids = Vec::with_capacity(n);
    for i in 0..n {
        elem_nodes.push([i, i + 1, i + 1]);
        elem_grads.push([[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0, 0.0]]);
        elem_mids.push([(i as f64 + 0.5) * h, 0.0]);
    }
    let mut boundary = vec![false; n + 1];
    boundary[0] = true;
    boundary[n] = true;
    let mut node_weights = vec![h; n + 1];
    node_weights[0] = 0.5 * h;
    node_weights[n] = 0.5 * h;
    Mesh {
        dimension: 1,
        resolution: n,
        coords,
        elem_nodes,
        elem_grads,
        elem_measures: vec![h; n],
        elem_mids,
        boundary,
        node_weights,
    }
}

fn build_2d(n: usize) -> Mesh {
    let h = 1.0 / n as f64;
    let np = n + 1;
    let idx = |i: usize, j: usize| j * np + i;
    let mut coords = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            coords.push([i as f64 * h, j as f64 * h]);
        }
    }
    let mut elem_nodes = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            elem_nodes.push([a, b, c]);
            elem_nodes.push([a, c, d]);
        }
    }
    let mut elem_grads = Vec::with_capacity(elem_nodes.len());
    let mut elem_measures = Vec::with_capacity(elem_nodes.len());
    let mut elem_mids = Vec::with_capacity(elem_nodes.len());
    for nodes in &elem_nodes {
        let p0 = coords[nodes[0]];
        let p1 = coords[nodes[1]];
        let p2 = coords[nodes[2]];
        let d1 = [p1[0] - p0[0], p1[1] - p0[1]];
        let d2 = [p2[0] - p0[0], p2[1] - p0[1]];
        let det = d1[0] * d2[1] - d1[1] * d2[0];
        let g1 = [d2[1] / det, -d2[0] / det];
        let g2 = [-d1[1] / det, d1[0] / det];
        let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
        elem_grads.push([g0, g1, g2]);
        elem_measures.push(det.abs() / 2.0);
        elem_mids.push([
            (p0[0] + p1[0] + p2[0]) / 3.0,
            (p0[1] + p1[1] + p2[1]) / 3.0,
        ]);
    }
    let boundary: Vec<bool> = coords
        .iter()
        .map(|c| c[0] == 0.0 || c[0] == 1.0 || c[1] == 0.0 || c[1] == 1.0)
        .collect();
    let mut node_weights = vec![0.0; coords.len()];
    for (e, nodes) in elem_nodes.iter().enumerate() {
        for &k in nodes {
            node_weights[k] += elem_measures[e] / 3.0;
        }
    }
    Mesh {
        dimension: 2,
        resolution: n,
        coords,
        elem_nodes,
        elem_grads,
        elem_measures,
        elem_mids,
        boundary,
        node_weights,
    }
}

impl Mesh {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elem_nodes.len()
    }

    pub fn coord(&self, node: usize) -> [f64; 2] {
        self.coords[node]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_nodes()).filter(move |&i| !self.boundary[i])
    }

    pub fn elem_nodes(&self, e: usize) -> [usize; 3] {
        self.elem_nodes[e]
    }

    pub fn elem_grads(&self, e: usize) -> [[f64; 2]; 3] {
        self.elem_grads[e]
    }

    pub fn elem_measure(&self, e: usize) -> f64 {
        self.elem_measures[e]
    }

    pub fn elem_mid(&self, e: usize) -> [f64; 2] {
        self.elem_mids[e]
    }

    /// Weight of node i in the piecewise-linear-exact quadrature rule.
    pub fn node_weight(&self, node: usize) -> f64 {
        self.node_weights[node]
    }

    pub fn domain_measure(&self) -> f64 {
        self.elem_measures.iter().sum()
    }
}

/// One real value per mesh node; the discrete representative of a
/// zero-trace Sobolev function when boundary entries vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalFunction {
    pub values: Vec<f64>,
}

impl NodalFunction {
    pub fn zeros(mesh: &Mesh) -> Self {
        NodalFunction {
            values: vec![0.0; mesh.num_nodes()],
        }
    }

    /// Constant in the interior, zero on the boundary.
    pub fn constant_interior(mesh: &Mesh, c: f64) -> Self {
        let mut u = Self::zeros(mesh);
        for i in mesh.interior_nodes() {
            u.values[i] = c;
        }
        u
    }

    pub fn from_fn(mesh: &Mesh, mut f: impl FnMut([f64; 2]) -> f64) -> Self {
        NodalFunction {
            values: (0..mesh.num_nodes()).map(|i| f(mesh.coord(i))).collect(),
        }
    }

    /// Uniform(-1,1) values at interior nodes, zero trace.
    pub fn random_zero_trace(mesh: &Mesh, rng: &mut impl Rng) -> Self {
        let mut u = Self::zeros(mesh);
        for i in mesh.interior_nodes() {
            u.values[i] = rng.gen_range(-1.0..1.0);
        }
        u
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn scaled(&self, c: f64) -> Self {
        NodalFunction {
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn axpy(&self, c: f64, other: &NodalFunction) -> Self {
        NodalFunction {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        }
    }

    pub fn sup_diff(&self, other: &NodalFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Zero the boundary-masked entries; interior untouched.
pub fn apply_dirichlet(u: &NodalFunction, mesh: &Mesh) -> NodalFunction {
    let mut out = u.clone();
    apply_dirichlet_in_place(&mut out, mesh);
    out
}

pub fn apply_dirichlet_in_place(u: &mut NodalFunction, mesh: &Mesh) {
    for i in 0..mesh.num_nodes() {
        if mesh.is_boundary(i) {
            u.values[i] = 0.0;
        }
    }
}

/// Integral of the piecewise-linear interpolant of nodal values.
/// 1D trapezoid rule; 2D per-triangle vertex average times area.
pub fn integrate_zero_order(mesh: &Mesh, values: &[f64]) -> Result<f64, MeshError> {
    if values.len() != mesh.num_nodes() {
        return Err(MeshError::LengthMismatch {
            expected: mesh.num_nodes(),
            got: values.len(),
        });
    }
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, v)| mesh.node_weight(i) * v)
        .sum())
}

/// Constant per-element gradient of the P1 interpolant.
pub fn element_gradient(mesh: &Mesh, u: &NodalFunction) -> Vec<[f64; 2]> {
    let mut grads = Vec::with_capacity(mesh.num_elements());
    for e in 0..mesh.num_elements() {
        let nodes = mesh.elem_nodes(e);
        let gv = mesh.elem_grads(e);
        let mut g = [0.0, 0.0];
        for k in 0..3 {
            let v = u.values[nodes[k]];
            g[0] += v * gv[k][0];
            g[1] += v * gv[k][1];
        }
        grads.push(g);
    }
    grads
}

/// CSV columns: node-index, coordinates..., value.
pub fn write_nodal_csv(mesh: &Mesh, u: &NodalFunction, w: &mut impl Write) -> io::Result<()> {
    if mesh.dimension() == 1 {
        writeln!(w, "node,z,value")?;
        for i in 0..mesh.num_nodes() {
            writeln!(w, "{},{},{}", i, mesh.coord(i)[0], u.values[i])?;
        }
    } else {
        writeln!(w, "node,x,y,value")?;
        for i in 0..mesh.num_nodes() {
            let c = mesh.coord(i);
            writeln!(w, "{},{},{},{}", i, c[0], c[1], u.values[i])?;
        }
    }
    Ok(())
}
