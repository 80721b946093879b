//! Pointwise operator calculus for the noise coefficient `g`.
//!
//! With `|g| = 1`, `G u = u × g` is skew and `G³ = -G`, so the semigroup
//! `e^{sG}` has the closed form `I + sin(s) G + (1 - cos s) G²`: a rotation
//! about `g` by angle `-s`. Everything here acts node by node except the
//! gradient coupling inside [`c_h_apply`].

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::fem::{element_gradients, ensure_len, lumped_mass_weights, NodalField, Vec3};
use crate::mesh::Mesh;

/// Tolerance on `|g(x_n)| = 1` when building a [`NoiseCoefficient`].
pub const UNIT_G_TOL: f64 = 1e-9;

/// Nodal samples of `g`, its first derivatives and its Laplacian.
#[derive(Debug, Clone)]
pub struct NoiseCoefficient {
    g: NodalField,
    grad_g: Vec<[Vec3; 2]>,
    lap_g: NodalField,
    /// `I_h(∂_i g)` evaluated at each element centroid.
    grad_g_centroid: Vec<[Vec3; 2]>,
    constant: bool,
}

/// Catalog of noise coefficients with known derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    /// Spatially constant unit vector.
    Constant(Vec3),
    /// `g = (cos φ, sin φ, 0)` with phase `φ = a x + b y`.
    PhaseWave { a: f64, b: f64 },
}

impl NoiseSpec {
    pub fn build(&self, mesh: &Mesh) -> Result<NoiseCoefficient> {
        match *self {
            NoiseSpec::Constant(g) => NoiseCoefficient::constant(mesh, g),
            NoiseSpec::PhaseWave { a, b } => NoiseCoefficient::analytic(
                mesh,
                |x| {
                    let phi = a * x[0] + b * x[1];
                    Vec3::new(phi.cos(), phi.sin(), 0.0)
                },
                |x| {
                    let phi = a * x[0] + b * x[1];
                    let d = Vec3::new(-phi.sin(), phi.cos(), 0.0);
                    [a * d, b * d]
                },
                |x| {
                    let phi = a * x[0] + b * x[1];
                    -(a * a + b * b) * Vec3::new(phi.cos(), phi.sin(), 0.0)
                },
            ),
        }
    }
}

impl NoiseCoefficient {
    pub fn constant(mesh: &Mesh, g: Vec3) -> Result<Self> {
        let norm = g.norm();
        if !((norm - 1.0).abs() <= UNIT_G_TOL) {
            return Err(Error::NotUnit { node: 0, modulus: norm });
        }
        let n = mesh.node_count();
        Ok(Self {
            g: NodalField::constant(n, g / norm),
            grad_g: vec![[Vec3::zeros(); 2]; n],
            lap_g: NodalField::zeros(n),
            grad_g_centroid: vec![[Vec3::zeros(); 2]; mesh.element_count()],
            constant: true,
        })
    }

    /// Samples a user-supplied `(g, ∇g, Δg)` triple at the mesh nodes.
    pub fn analytic(
        mesh: &Mesh,
        g: impl Fn([f64; 2]) -> Vec3,
        grad_g: impl Fn([f64; 2]) -> [Vec3; 2],
        lap_g: impl Fn([f64; 2]) -> Vec3,
    ) -> Result<Self> {
        let mut gv = Vec::with_capacity(mesh.node_count());
        for (node, &x) in mesh.nodes().iter().enumerate() {
            let v = g(x);
            let norm = v.norm();
            if !((norm - 1.0).abs() <= UNIT_G_TOL) {
                return Err(Error::NotUnit { node, modulus: norm });
            }
            gv.push(v / norm);
        }
        let grad: Vec<[Vec3; 2]> = mesh.nodes().iter().map(|&x| grad_g(x)).collect();
        if let Some(node) = grad.iter().position(|d| !d.iter().all(|v| v.iter().all(|c| c.is_finite()))) {
            return Err(Error::NonFinite { node });
        }
        let lap = NodalField::from_values(mesh.nodes().iter().map(|&x| lap_g(x)).collect())?;
        let grad_g_centroid = mesh
            .elements()
            .iter()
            .map(|tri| {
                let avg = |i: usize| (grad[tri[0]][i] + grad[tri[1]][i] + grad[tri[2]][i]) / 3.0;
                [avg(0), avg(1)]
            })
            .collect();
        let constant = grad.iter().all(|d| d[0] == Vec3::zeros() && d[1] == Vec3::zeros())
            && lap.iter().all(|v| *v == Vec3::zeros())
            && gv.iter().all(|v| *v == gv[0]);
        Ok(Self { g: NodalField::from_values(gv)?, grad_g: grad, lap_g: lap, grad_g_centroid, constant })
    }

    pub fn g(&self) -> &NodalField {
        &self.g
    }

    pub fn grad_g(&self) -> &[[Vec3; 2]] {
        &self.grad_g
    }

    pub fn lap_g(&self) -> &NodalField {
        &self.lap_g
    }

    /// True when `g` is spatially constant, so `C_h` and `R_{h,k}` vanish.
    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}

/// `u × g`
#[inline]
pub fn g_vec(u: &Vec3, g: &Vec3) -> Vec3 {
    u.cross(g)
}

/// `e^{sG} u = u + sin(s) Gu + (1 - cos s) G²u` for a single node.
#[inline]
pub fn rotate(s: f64, u: &Vec3, g: &Vec3) -> Vec3 {
    let gu = u.cross(g);
    let g2u = gu.cross(g);
    u + s.sin() * gu + (1.0 - s.cos()) * g2u
}

/// Matrix of `G` at a node: `G u = -[g]_× u`.
pub fn g_matrix(g: &Vec3) -> Matrix3<f64> {
    -g.cross_matrix()
}

pub fn g_apply(u: &NodalField, nc: &NoiseCoefficient) -> Result<NodalField> {
    u.zip_map(&nc.g, g_vec)
}

pub fn g2_apply(u: &NodalField, nc: &NoiseCoefficient) -> Result<NodalField> {
    u.zip_map(&nc.g, |u, g| u.cross(g).cross(g))
}

pub fn exp_sg_apply(s: f64, u: &NodalField, nc: &NoiseCoefficient) -> Result<NodalField> {
    ensure_len(u.len(), nc.len())?;
    let (sin, one_minus_cos) = (s.sin(), 1.0 - s.cos());
    u.zip_map(&nc.g, |u, g| {
        let gu = u.cross(g);
        u + sin * gu + one_minus_cos * gu.cross(g)
    })
}

/// `C_h(u) = u × I_h(Δg) + 2 ∇u × I_h(∇g)`.
///
/// `grad_u` holds the elementwise constant gradients of `u`. The gradient
/// term is formed per element with the centroid value of `I_h(∇g)` and
/// recovered at the nodes by an area-weighted average over incident
/// elements.
pub fn c_h_apply(mesh: &Mesh, u: &NodalField, grad_u: &[[Vec3; 2]], nc: &NoiseCoefficient) -> Result<NodalField> {
    ensure_len(u.len(), mesh.node_count())?;
    ensure_len(nc.len(), mesh.node_count())?;
    ensure_len(grad_u.len(), mesh.element_count())?;
    if nc.constant {
        return Ok(NodalField::zeros(u.len()));
    }
    let mut acc = vec![Vec3::zeros(); u.len()];
    let mut weight = vec![0.0; u.len()];
    for (e, tri) in mesh.elements().iter().enumerate() {
        let gc = &nc.grad_g_centroid[e];
        let du = &grad_u[e];
        let val = 2.0 * (du[0].cross(&gc[0]) + du[1].cross(&gc[1]));
        let area = mesh.area(e);
        for &i in tri {
            acc[i] += area * val;
            weight[i] += area;
        }
    }
    let values = u
        .iter()
        .zip(nc.lap_g.iter())
        .zip(acc.iter().zip(&weight))
        .map(|((u, lap), (a, w))| u.cross(lap) + a / *w)
        .collect();
    NodalField::from_values(values)
}

/// `C_h` of a P1 field, computing its gradients on the fly.
pub fn c_h_of_field(mesh: &Mesh, u: &NodalField, nc: &NoiseCoefficient) -> Result<NodalField> {
    let grads = element_gradients(mesh, u)?;
    c_h_apply(mesh, u, &grads, nc)
}

/// Precession/damping coefficients entering `R_{h,k}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damping {
    pub lambda1: f64,
    pub lambda2: f64,
}

/// The lower-order term `R_{h,k}(t, u)` for `W_k(t) = wk_value`:
///
/// ```text
/// D  = (sin W C_h + (1 - cos W)(G_h C_h + C_h G_h)) u
/// C̃  = (I - sin W G_h + (1 - cos W) G_h²) D
/// R  = λ₂² u × (u × C̃) - λ₁² C̃
/// ```
pub fn r_hk_apply(
    mesh: &Mesh,
    u: &NodalField,
    wk_value: f64,
    damping: Damping,
    nc: &NoiseCoefficient,
) -> Result<NodalField> {
    ensure_len(u.len(), mesh.node_count())?;
    ensure_len(nc.len(), mesh.node_count())?;
    let (sin, one_minus_cos) = (wk_value.sin(), 1.0 - wk_value.cos());
    if nc.constant || (sin == 0.0 && one_minus_cos == 0.0) {
        return Ok(NodalField::zeros(u.len()));
    }
    let c_u = c_h_of_field(mesh, u, nc)?;
    let g_c_u = g_apply(&c_u, nc)?;
    let c_g_u = c_h_of_field(mesh, &g_apply(u, nc)?, nc)?;

    let d = NodalField::from_values(
        c_u.iter()
            .zip(g_c_u.iter().zip(c_g_u.iter()))
            .map(|(c, (gc, cg))| sin * c + one_minus_cos * (gc + cg))
            .collect(),
    )?;
    let (l1, l2) = (damping.lambda1 * damping.lambda1, damping.lambda2 * damping.lambda2);
    let values = d
        .iter()
        .zip(nc.g.iter().zip(u.iter()))
        .map(|(d, (g, u))| {
            let gd = d.cross(g);
            let ct = d - sin * gd + one_minus_cos * gd.cross(g);
            l2 * u.cross(&u.cross(&ct)) - l1 * ct
        })
        .collect();
    NodalField::from_values(values)
}

/// Lumped `‖R_{h,k}‖²` helper used by diagnostics.
pub fn r_hk_norm_sq(mesh: &Mesh, r: &NodalField) -> Result<f64> {
    crate::fem::lumped_norm_sq(&lumped_mass_weights(mesh), r)
}

/// Matrix of `φ ↦ λ₁ φ + λ₂ φ × ζ`.
pub fn cross_shift_matrix(lambda1: f64, lambda2: f64, zeta: &Vec3) -> Matrix3<f64> {
    Matrix3::identity() * lambda1 - zeta.cross_matrix() * lambda2
}

/// Solves `λ₁ φ + λ₂ φ × ζ = ψ` for unit `ζ`.
///
/// Uses the exact inverse `φ = ψ/λ₁ + b Bψ + c B²ψ` with `Bφ = φ × ζ`,
/// `b = -λ₂/(λ₁² + λ₂²)` and `c = λ₂²/(λ₁(λ₁² + λ₂²))`, which follows from
/// `B³ = -B`.
pub fn cross_shift_solve(lambda1: f64, lambda2: f64, zeta: &Vec3, psi: &Vec3) -> Result<Vec3> {
    if lambda1 == 0.0 || !lambda1.is_finite() || !lambda2.is_finite() {
        return Err(Error::InvalidParameter(format!("cross-shift needs finite nonzero lambda1, got {lambda1}")));
    }
    let norm = zeta.norm();
    if !((norm - 1.0).abs() <= UNIT_G_TOL) {
        return Err(Error::NotUnit { node: 0, modulus: norm });
    }
    let mu = lambda1 * lambda1 + lambda2 * lambda2;
    let b_psi = psi.cross(zeta);
    let b2_psi = b_psi.cross(zeta);
    Ok(psi / lambda1 - (lambda2 / mu) * b_psi + (lambda2 * lambda2 / (lambda1 * mu)) * b2_psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::uniform_unit_square_mesh;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn g_apply_cross_product() {
        let mesh = uniform_unit_square_mesh(1).unwrap();
        let nc = NoiseCoefficient::constant(&mesh, Vec3::x()).unwrap();
        let u = NodalField::constant(4, Vec3::y());
        let gu = g_apply(&u, &nc).unwrap();
        assert_eq!(gu[0], Vec3::new(0.0, 0.0, -1.0));
        let par = NodalField::constant(4, 2.0 * Vec3::x());
        assert_eq!(g_apply(&par, &nc).unwrap()[2], Vec3::zeros());
    }

    #[test]
    fn quarter_turn() {
        let mesh = uniform_unit_square_mesh(1).unwrap();
        let nc = NoiseCoefficient::constant(&mesh, Vec3::x()).unwrap();
        let u = NodalField::constant(4, Vec3::y());
        let r = exp_sg_apply(FRAC_PI_2, &u, &nc).unwrap();
        assert!((r[0] - Vec3::new(0.0, 0.0, -1.0)).amax() < 1e-15);
        assert_eq!(exp_sg_apply(0.0, &u, &nc).unwrap(), u);
    }

    #[test]
    fn constant_g_has_vanishing_c_and_r() {
        let mesh = uniform_unit_square_mesh(3).unwrap();
        let nc = NoiseCoefficient::constant(&mesh, Vec3::new(0.0, 0.6, 0.8)).unwrap();
        let u = crate::fem::interpolate(&mesh, |x| Vec3::new(x[0], x[1], 1.0).normalize()).unwrap();
        assert!(c_h_of_field(&mesh, &u, &nc).unwrap().iter().all(|v| *v == Vec3::zeros()));
        let d = Damping { lambda1: 1.0, lambda2: 1.0 };
        assert!(r_hk_apply(&mesh, &u, 0.7, d, &nc).unwrap().iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn zero_wiener_value_gives_zero_r() {
        let mesh = uniform_unit_square_mesh(3).unwrap();
        let nc = NoiseSpec::PhaseWave { a: 2.0, b: 1.0 }.build(&mesh).unwrap();
        assert!(!nc.is_constant());
        let u = crate::fem::interpolate(&mesh, |x| Vec3::new(x[0], x[1], 1.0).normalize()).unwrap();
        let d = Damping { lambda1: 1.0, lambda2: 0.5 };
        assert!(r_hk_apply(&mesh, &u, 0.0, d, &nc).unwrap().iter().all(|v| *v == Vec3::zeros()));
        assert!(r_hk_apply(&mesh, &u, 0.3, d, &nc).unwrap().max_modulus() > 0.0);
    }

    #[test]
    fn constant_u_with_harmonic_g_gives_zero_c() {
        // zero phase: analytic g with Δg = 0, ∇u = 0
        let mesh = uniform_unit_square_mesh(2).unwrap();
        let nc = NoiseSpec::PhaseWave { a: 0.0, b: 0.0 }.build(&mesh).unwrap();
        assert!(nc.is_constant());
        let u = NodalField::constant(mesh.node_count(), Vec3::z());
        assert!(c_h_of_field(&mesh, &u, &nc).unwrap().iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn c_h_matches_hand_evaluation_on_two_elements() {
        // single cell split in two; u = (x, 0, 0)-dependent rotation
        let mesh = uniform_unit_square_mesh(1).unwrap();
        let (a, b) = (1.5, -0.5);
        let nc = NoiseSpec::PhaseWave { a, b }.build(&mesh).unwrap();
        let u = crate::fem::interpolate(&mesh, |x| Vec3::new(x[0].cos(), 0.0, x[0].sin())).unwrap();
        let got = c_h_of_field(&mesh, &u, &nc).unwrap();

        let grad_at = |x: [f64; 2]| {
            let phi = a * x[0] + b * x[1];
            let d = Vec3::new(-phi.sin(), phi.cos(), 0.0);
            [a * d, b * d]
        };
        let nodes = mesh.nodes();
        let elems = mesh.elements();
        // element gradients by finite differences of nodal data along the legs
        let mut per_elem = Vec::new();
        for tri in elems {
            let (p0, p1, p2) = (nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            // solve [p1-p0; p2-p0] G = [u1-u0; u2-u0]
            let m = nalgebra::Matrix2::new(p1[0] - p0[0], p1[1] - p0[1], p2[0] - p0[0], p2[1] - p0[1]);
            let inv = m.try_inverse().unwrap();
            let du1 = u[tri[1]] - u[tri[0]];
            let du2 = u[tri[2]] - u[tri[0]];
            let dx = inv[(0, 0)] * du1 + inv[(0, 1)] * du2;
            let dy = inv[(1, 0)] * du1 + inv[(1, 1)] * du2;
            let gc = [0, 1].map(|i| (grad_at(p0)[i] + grad_at(p1)[i] + grad_at(p2)[i]) / 3.0);
            per_elem.push(2.0 * (dx.cross(&gc[0]) + dy.cross(&gc[1])));
        }
        // both elements have equal area: node average is a plain mean
        for (n, &x) in nodes.iter().enumerate() {
            let incident: Vec<_> = elems.iter().enumerate().filter(|(_, t)| t.contains(&n)).map(|(e, _)| e).collect();
            let avg = incident.iter().map(|&e| per_elem[e]).sum::<Vec3>() / incident.len() as f64;
            let phi = a * x[0] + b * x[1];
            let lap = -(a * a + b * b) * Vec3::new(phi.cos(), phi.sin(), 0.0);
            let expected = u[n].cross(&lap) + avg;
            assert!((got[n] - expected).amax() < 1e-12, "node {n}");
        }
    }

    #[test]
    fn cross_shift_examples() {
        let zeta = Vec3::z();
        let psi = Vec3::new(1.0, 2.0, 3.0);
        assert!((cross_shift_solve(2.0, 0.0, &zeta, &psi).unwrap() - psi / 2.0).amax() < 1e-15);
        let phi = cross_shift_solve(1.0, 1.0, &zeta, &Vec3::x()).unwrap();
        assert!((phi - Vec3::new(0.5, 0.5, 0.0)).amax() < 1e-15);
        assert!((phi + phi.cross(&zeta) - Vec3::x()).amax() < 1e-15);
    }

    #[test]
    fn cross_shift_rejects_bad_input() {
        assert!(cross_shift_solve(0.0, 1.0, &Vec3::z(), &Vec3::x()).is_err());
        assert!(cross_shift_solve(1.0, 1.0, &Vec3::new(0.0, 0.0, 1.1), &Vec3::x()).is_err());
    }

    #[test]
    fn non_unit_g_rejected() {
        let mesh = uniform_unit_square_mesh(1).unwrap();
        assert!(NoiseCoefficient::constant(&mesh, Vec3::new(1.0, 1.0, 0.0)).is_err());
        assert!(NoiseCoefficient::analytic(&mesh, |_| Vec3::zeros(), |_| [Vec3::zeros(); 2], |_| Vec3::zeros()).is_err());
    }
}
