//! Planar triangulations for P1 elements.
//!
//! A [`Mesh`] is immutable once built. Element geometry (areas and the
//! constant gradients of the three hat functions) is computed at
//! construction so assembly and gradient evaluation never redo it.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Off-diagonal stiffness entries above this count as violations of the
/// non-obtuse condition. Right angles produce exact zeros up to rounding.
pub const MESH_CONDITION_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    boundary_nodes: Vec<usize>,
    areas: Vec<f64>,
    /// Gradients of the local hat functions, one per element vertex.
    grads: Vec<[[f64; 2]; 3]>,
    h: f64,
}

impl Mesh {
    /// Builds a mesh from raw nodes and triangles.
    ///
    /// Clockwise triangles are reoriented. Fails on out-of-range indices,
    /// zero-area elements, edges shared by more than two elements, and
    /// hanging nodes on boundary edges.
    pub fn new(nodes: Vec<[f64; 2]>, elements: Vec<[usize; 3]>) -> Result<Self> {
        if nodes.is_empty() || elements.is_empty() {
            return Err(Error::InvalidMesh("mesh needs nodes and elements".into()));
        }
        let n_nodes = nodes.len();
        let mut elements = elements;
        let mut areas = Vec::with_capacity(elements.len());
        let mut grads = Vec::with_capacity(elements.len());
        let mut h: f64 = 0.0;

        for (e, tri) in elements.iter_mut().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= n_nodes) {
                return Err(Error::InvalidMesh(format!(
                    "element {e} references node {bad} of {n_nodes}"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateElement { element: e, area: 0.0 });
            }
            let mut signed = signed_area(&nodes, tri);
            if signed < 0.0 {
                tri.swap(1, 2);
                signed = -signed;
            }
            let scale = edge_lengths(&nodes, tri).iter().fold(0.0f64, |a, &b| a.max(b));
            if !(signed > 1e-14 * scale * scale) {
                return Err(Error::DegenerateElement { element: e, area: signed });
            }
            h = h.max(scale);
            areas.push(signed);
            grads.push(hat_gradients(&nodes, tri, signed));
        }

        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &elements {
            for (a, b) in tri_edges(tri) {
                *edge_count.entry(edge_key(a, b)).or_default() += 1;
            }
        }
        let mut on_boundary = vec![false; n_nodes];
        let mut boundary_edges = Vec::new();
        for (&(a, b), &count) in &edge_count {
            match count {
                1 => {
                    on_boundary[a] = true;
                    on_boundary[b] = true;
                    boundary_edges.push((a, b));
                }
                2 => {}
                _ => {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({a}, {b}) is shared by {count} elements"
                    )))
                }
            }
        }
        // A node in the interior of a boundary edge means a T-junction.
        for &(a, b) in &boundary_edges {
            for (i, p) in nodes.iter().enumerate() {
                if i != a && i != b && strictly_inside_segment(p, &nodes[a], &nodes[b]) {
                    return Err(Error::InvalidMesh(format!(
                        "hanging node {i} on edge ({a}, {b})"
                    )));
                }
            }
        }
        let boundary_nodes = (0..n_nodes).filter(|&i| on_boundary[i]).collect();

        Ok(Self { nodes, elements, boundary_nodes, areas, grads, h })
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    /// Longest edge over all elements.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn area(&self, element: usize) -> f64 {
        self.areas[element]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Constant gradients of the three local hat functions of `element`.
    pub fn hat_gradients(&self, element: usize) -> &[[f64; 2]; 3] {
        &self.grads[element]
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn centroid(&self, element: usize) -> [f64; 2] {
        let [a, b, c] = self.elements[element];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0]
    }

    /// Number of elements sharing each undirected edge.
    pub fn edge_multiplicity(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for tri in &self.elements {
            for (a, b) in tri_edges(tri) {
                *counts.entry(edge_key(a, b)).or_default() += 1;
            }
        }
        counts
    }
}

/// Uniform triangulation of (-0.5, 0.5)^2 with `n` cells per side, every
/// cell split along its bottom-left to top-right diagonal.
///
/// Nodes are numbered row by row from the bottom-left corner, so node
/// `(i, j)` (column `i`, row `j`) has index `j * (n + 1) + i`.
pub fn uniform_unit_square_mesh(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidParameter("mesh subdivisions must be >= 1".into()));
    }
    let step = 1.0 / n as f64;
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([-0.5 + i as f64 * step, -0.5 + j as f64 * step]);
        }
    }
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut elements = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (sw, se, nw, ne) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            elements.push([sw, se, ne]);
            elements.push([sw, ne, nw]);
        }
    }
    Mesh::new(nodes, elements)
}

/// Result of checking the non-obtuse (M-matrix) condition on a stiffness matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshCondition {
    pub satisfied: bool,
    /// Off-diagonal `(i, j)` pairs, `i < j`, whose stiffness coupling is positive.
    pub violations: Vec<(usize, usize)>,
}

/// Checks that every off-diagonal entry of the scalar P1 stiffness matrix is
/// non-positive (up to [`MESH_CONDITION_TOL`]).
pub fn check_mesh_condition(mesh: &Mesh, stiffness: &SparseMatrix) -> Result<MeshCondition> {
    let n = mesh.node_count();
    let (rows, cols) = stiffness.shape();
    if rows != n || cols != n {
        return Err(Error::DimensionMismatch { expected: n, found: if rows != n { rows } else { cols } });
    }
    let mut violations: Vec<(usize, usize)> = stiffness
        .iter()
        .filter(|&(i, j, v)| i < j && v > MESH_CONDITION_TOL)
        .map(|(i, j, _)| (i, j))
        .collect();
    violations.sort_unstable();
    Ok(MeshCondition { satisfied: violations.is_empty(), violations })
}

fn signed_area(nodes: &[[f64; 2]], tri: &[usize; 3]) -> f64 {
    let (a, b, c) = (nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn edge_lengths(nodes: &[[f64; 2]], tri: &[usize; 3]) -> [f64; 3] {
    let d = |p: usize, q: usize| {
        let (a, b) = (nodes[p], nodes[q]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    };
    [d(tri[0], tri[1]), d(tri[1], tri[2]), d(tri[2], tri[0])]
}

// grad phi_i = rot90(x_{i+2} - x_{i+1}) / (2 area) for a counter-clockwise triangle
fn hat_gradients(nodes: &[[f64; 2]], tri: &[usize; 3], area: f64) -> [[f64; 2]; 3] {
    let mut g = [[0.0; 2]; 3];
    for (i, gi) in g.iter_mut().enumerate() {
        let p = nodes[tri[(i + 1) % 3]];
        let q = nodes[tri[(i + 2) % 3]];
        *gi = [(p[1] - q[1]) / (2.0 * area), (q[0] - p[0]) / (2.0 * area)];
    }
    g
}

fn tri_edges(tri: &[usize; 3]) -> [(usize, usize); 3] {
    [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])]
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b { (a, b) } else { (b, a) }
}

fn strictly_inside_segment(p: &[f64; 2], a: &[f64; 2], b: &[f64; 2]) -> bool {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let cross = ab[0] * ap[1] - ab[1] * ap[0];
    if cross.abs() > 1e-12 * len2 {
        return false;
    }
    let t = (ab[0] * ap[0] + ab[1] * ap[1]) / len2;
    t > 1e-12 && t < 1.0 - 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble_stiffness;

    #[test]
    fn smallest_square_has_two_triangles() {
        let mesh = uniform_unit_square_mesh(1).unwrap();
        assert_eq!(mesh.node_count(), 4);
        assert_eq!(mesh.element_count(), 2);
        assert_eq!(mesh.boundary_nodes().len(), 4);
    }

    #[test]
    fn counts_and_diameter() {
        let mesh = uniform_unit_square_mesh(2).unwrap();
        assert_eq!(mesh.node_count(), 9);
        assert_eq!(mesh.element_count(), 8);

        let mesh = uniform_unit_square_mesh(10).unwrap();
        assert!((mesh.h() - 2f64.sqrt() / 10.0).abs() < 1e-15);
        assert!((mesh.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(uniform_unit_square_mesh(0).is_err());
    }

    #[test]
    fn interior_edges_shared_twice() {
        let n = 6;
        let mesh = uniform_unit_square_mesh(n).unwrap();
        let mult = mesh.edge_multiplicity();
        let boundary = mult.values().filter(|&&c| c == 1).count();
        let interior = mult.values().filter(|&&c| c == 2).count();
        assert_eq!(boundary, 4 * n);
        assert_eq!(boundary + interior, mult.len());
        // Euler: E = V + F - 1 for a disc
        assert_eq!(mult.len(), mesh.node_count() + mesh.element_count() - 1);
    }

    #[test]
    fn uniform_meshes_are_non_obtuse() {
        for n in [1, 2, 4, 9] {
            let mesh = uniform_unit_square_mesh(n).unwrap();
            let k = assemble_stiffness(&mesh).unwrap();
            let cond = check_mesh_condition(&mesh, &k).unwrap();
            assert!(cond.satisfied, "n={n}: {:?}", cond.violations);
        }
    }

    #[test]
    fn obtuse_triangle_fails_condition() {
        let mesh = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [-2.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let k = assemble_stiffness(&mesh).unwrap();
        let cond = check_mesh_condition(&mesh, &k).unwrap();
        assert!(!cond.satisfied);
        // obtuse at (0,0): the opposite edge joins the two acute vertices 1 and 2
        assert_eq!(cond.violations, vec![(1, 2)]);
    }

    #[test]
    fn right_triangle_passes_condition() {
        let mesh = Mesh::new(vec![[0.0, 0.0], [2.0, 0.0], [0.0, 0.5]], vec![[0, 1, 2]]).unwrap();
        let k = assemble_stiffness(&mesh).unwrap();
        assert!(check_mesh_condition(&mesh, &k).unwrap().satisfied);
    }

    #[test]
    fn condition_rejects_wrong_dimension() {
        let mesh = uniform_unit_square_mesh(2).unwrap();
        let other = assemble_stiffness(&uniform_unit_square_mesh(3).unwrap()).unwrap();
        assert!(matches!(
            check_mesh_condition(&mesh, &other),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn clockwise_elements_are_reoriented() {
        let mesh = Mesh::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        assert!((mesh.area(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn malformed_meshes_rejected() {
        let collinear = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![[0, 1, 2]]);
        assert!(matches!(collinear, Err(Error::DegenerateElement { .. })));

        let out_of_range = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 3]]);
        assert!(matches!(out_of_range, Err(Error::InvalidMesh(_))));

        // node 3 sits on the hypotenuse of the big triangle
        let hanging = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [1.0, 1.0]],
            vec![[0, 1, 2], [1, 4, 3], [3, 4, 2]],
        );
        assert!(matches!(hanging, Err(Error::InvalidMesh(_))));
    }
}
