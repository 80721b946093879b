//! P1 finite-element primitives on a [`Mesh`].
//!
//! Vector fields are stored nodewise as 3-vectors. Gradient terms are
//! integrated exactly (P1 gradients are elementwise constant); zeroth-order
//! inner products use nodal quadrature through the lumped mass, which keeps
//! the pointwise cross-product structure of the tangent-plane scheme exact.

use std::ops::{Index, IndexMut};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::{SparseMatrix, TripletBuilder};

pub type Vec3 = Vector3<f64>;

/// One 3-vector per mesh node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    values: Vec<Vec3>,
}

impl NodalField {
    pub fn from_values(values: Vec<Vec3>) -> Result<Self> {
        if let Some(node) = values.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite { node });
        }
        Ok(Self { values })
    }

    pub fn constant(len: usize, value: Vec3) -> Self {
        Self { values: vec![value; len] }
    }

    pub fn zeros(len: usize) -> Self {
        Self::constant(len, Vec3::zeros())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Vec3] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Vec3> {
        self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vec3> {
        self.values.iter()
    }

    /// Nodewise map into a new field.
    pub fn map(&self, f: impl FnMut(&Vec3) -> Vec3) -> Self {
        Self { values: self.values.iter().map(f).collect() }
    }

    /// Nodewise combination of two fields of equal length.
    pub fn zip_map(&self, other: &NodalField, mut f: impl FnMut(&Vec3, &Vec3) -> Vec3) -> Result<Self> {
        ensure_len(other.len(), self.len())?;
        Ok(Self { values: self.values.iter().zip(&other.values).map(|(a, b)| f(a, b)).collect() })
    }

    pub fn add_scaled(&self, scale: f64, other: &NodalField) -> Result<Self> {
        self.zip_map(other, |a, b| a + scale * b)
    }

    pub fn max_abs_diff(&self, other: &NodalField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    /// `max_n | |u(x_n)| - 1 |`
    pub fn max_unit_defect(&self) -> f64 {
        self.values.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        ensure_len(self.len(), mesh.node_count())
    }

    /// Component `c` of every node, flattened.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[c]).collect()
    }
}

impl Index<usize> for NodalField {
    type Output = Vec3;
    fn index(&self, i: usize) -> &Vec3 {
        &self.values[i]
    }
}

impl IndexMut<usize> for NodalField {
    fn index_mut(&mut self, i: usize) -> &mut Vec3 {
        &mut self.values[i]
    }
}

pub(crate) fn ensure_len(found: usize, expected: usize) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Nodal interpolation of `f`.
pub fn interpolate(mesh: &Mesh, mut f: impl FnMut([f64; 2]) -> Vec3) -> Result<NodalField> {
    NodalField::from_values(mesh.nodes().iter().map(|&x| f(x)).collect())
}

/// Elementwise constant gradient of a P1 vector field: `[d/dx, d/dy]`.
pub fn element_gradient(mesh: &Mesh, u: &NodalField, element: usize) -> [Vec3; 2] {
    let tri = mesh.elements()[element];
    let g = mesh.hat_gradients(element);
    let mut out = [Vec3::zeros(); 2];
    for (local, &node) in tri.iter().enumerate() {
        out[0] += u[node] * g[local][0];
        out[1] += u[node] * g[local][1];
    }
    out
}

pub fn element_gradients(mesh: &Mesh, u: &NodalField) -> Result<Vec<[Vec3; 2]>> {
    u.check_mesh(mesh)?;
    Ok((0..mesh.element_count()).map(|e| element_gradient(mesh, u, e)).collect())
}

/// Scalar P1 Laplacian `K_ij = ∫ ∇φ_i · ∇φ_j`, integrated exactly.
pub fn assemble_stiffness(mesh: &Mesh) -> Result<SparseMatrix> {
    let n = mesh.node_count();
    let mut b = TripletBuilder::with_capacity(n, n, 9 * mesh.element_count());
    for (e, tri) in mesh.elements().iter().enumerate() {
        let area = mesh.area(e);
        if !(area > 0.0) {
            return Err(Error::DegenerateElement { element: e, area });
        }
        let g = mesh.hat_gradients(e);
        for a in 0..3 {
            for c in 0..3 {
                b.add(tri[a], tri[c], area * (g[a][0] * g[c][0] + g[a][1] * g[c][1]));
            }
        }
    }
    Ok(b.finalize())
}

/// Row-sum lumped mass: one third of the area of every incident element.
pub fn lumped_mass_weights(mesh: &Mesh) -> Vec<f64> {
    let mut w = vec![0.0; mesh.node_count()];
    for (e, tri) in mesh.elements().iter().enumerate() {
        let third = mesh.area(e) / 3.0;
        for &i in tri {
            w[i] += third;
        }
    }
    w
}

pub fn assemble_lumped_mass(mesh: &Mesh) -> SparseMatrix {
    SparseMatrix::diagonal(&lumped_mass_weights(mesh))
}

/// `‖∇u‖²_{L²}` of a vector field, componentwise through the scalar stiffness.
pub fn dirichlet_energy(stiffness: &SparseMatrix, u: &NodalField) -> Result<f64> {
    ensure_len(u.len(), stiffness.rows())?;
    let mut total = 0.0;
    for c in 0..3 {
        let comp = u.component(c);
        total += stiffness.bilinear(&comp, &comp)?;
    }
    Ok(total)
}

/// Nodal-quadrature inner product `Σ_n ω_n u(x_n)·v(x_n)`.
pub fn lumped_inner(weights: &[f64], u: &NodalField, v: &NodalField) -> Result<f64> {
    ensure_len(u.len(), weights.len())?;
    ensure_len(v.len(), weights.len())?;
    Ok(weights.iter().zip(u.iter().zip(v.iter())).map(|(w, (a, b))| w * a.dot(b)).sum())
}

pub fn lumped_norm_sq(weights: &[f64], u: &NodalField) -> Result<f64> {
    lumped_inner(weights, u, u)
}

/// Discrete `L^p` norm `(h^d Σ_n |u(x_n)|^p)^{1/p}` with `d = 2`; for
/// `p = ∞` the nodal maximum.
pub fn discrete_lp_norm(mesh: &Mesh, u: &NodalField, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidParameter(format!("L^p exponent must be >= 1, got {p}")));
    }
    u.check_mesh(mesh)?;
    if p.is_infinite() {
        return Ok(u.max_modulus());
    }
    let h2 = mesh.h() * mesh.h();
    let sum: f64 = u.iter().map(|v| v.norm().powf(p)).sum();
    Ok((h2 * sum).powf(1.0 / p))
}

/// Nodewise normalization `u(x_n) / |u(x_n)|`.
pub fn project_to_sphere(u: &NodalField) -> Result<NodalField> {
    let mut out = Vec::with_capacity(u.len());
    for (node, v) in u.iter().enumerate() {
        let norm = v.norm();
        if !(norm > 0.0) {
            return Err(Error::ZeroVector { node });
        }
        out.push(v / norm);
    }
    Ok(NodalField { values: out })
}
