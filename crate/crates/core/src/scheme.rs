//! One realization of the θ-linear tangent-plane scheme.
//!
//! Given `m^{(j)}` with unit nodal moduli, each step
//!
//! 1. builds an orthonormal frame of the nodal tangent planes,
//! 2. assembles the `2N × 2N` system for the frame coordinates of `v^{(j)}`,
//! 3. solves it with GMRES,
//! 4. sets `m^{(j+1)} = (m + k v) / |m + k v|` nodewise.

use crate::algebra::{exp_sg_apply, r_hk_apply, Damping, NoiseCoefficient};
use crate::error::{Error, Result};
use crate::fem::{
    assemble_stiffness, dirichlet_energy, ensure_len, lumped_mass_weights, lumped_norm_sq, project_to_sphere,
    NodalField, Vec3,
};
use crate::krylov::{dense_solve, gmres, relative_residual, GmresOptions};
use crate::mesh::Mesh;
use crate::sparse::{SparseMatrix, TripletBuilder};

/// Default relative residual for the step solve.
pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;
/// Frames are only built for fields this close to the unit sphere.
pub const FRAME_UNIT_TOL: f64 = 1e-8;
/// Largest node count for which a failed Krylov solve falls back to dense LU.
pub const DENSE_FALLBACK_MAX_NODES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub theta: f64,
    pub final_time: f64,
    pub steps: usize,
}

impl SchemeParams {
    pub fn new(lambda1: f64, lambda2: f64, theta: f64, final_time: f64, steps: usize) -> Result<Self> {
        let p = Self { lambda1, lambda2, theta, final_time, steps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lambda1.is_finite() && self.lambda1 != 0.0) {
            return bad(format!("lambda1 must be finite and nonzero, got {}", self.lambda1));
        }
        if !(self.lambda2.is_finite() && self.lambda2 > 0.0) {
            return bad(format!("lambda2 must be positive, got {}", self.lambda2));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad(format!("theta must lie in [0, 1], got {}", self.theta));
        }
        if !(self.final_time.is_finite() && self.final_time > 0.0) {
            return bad(format!("final time must be positive, got {}", self.final_time));
        }
        if self.steps == 0 {
            return bad("number of steps must be >= 1".into());
        }
        Ok(())
    }

    /// `μ = λ₁² + λ₂²`
    pub fn mu(&self) -> f64 {
        self.lambda1 * self.lambda1 + self.lambda2 * self.lambda2
    }

    /// Time step `k = T / J`.
    pub fn k(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.k()
    }

    pub fn damping(&self) -> Damping {
        Damping { lambda1: self.lambda1, lambda2: self.lambda2 }
    }

    /// Warning for θ ≤ 1/2 when the step is not small against the mesh.
    ///
    /// Below θ = 1/2 convergence needs `k = o(h²)`, at θ = 1/2 it needs
    /// `k = o(h)`. A run with `k ≥ h²` (resp. `k ≥ h`) is allowed but flagged.
    pub fn stability_warning(&self, h: f64) -> Option<String> {
        let k = self.k();
        if self.theta < 0.5 && k >= h * h {
            Some(format!(
                "theta = {} < 1/2 requires k = o(h²); got k = {k:.4e}, h² = {:.4e}",
                self.theta,
                h * h
            ))
        } else if self.theta == 0.5 && k >= h {
            Some(format!("theta = 1/2 requires k = o(h); got k = {k:.4e}, h = {h:.4e}"))
        } else {
            None
        }
    }
}

/// Mesh plus the matrices that never change during a run.
#[derive(Debug, Clone)]
pub struct Discretization {
    mesh: Mesh,
    stiffness: SparseMatrix,
    weights: Vec<f64>,
}

impl Discretization {
    pub fn new(mesh: Mesh) -> Result<Self> {
        let stiffness = assemble_stiffness(&mesh)?;
        let weights = lumped_mass_weights(&mesh);
        Ok(Self { mesh, stiffness, weights })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn stiffness(&self) -> &SparseMatrix {
        &self.stiffness
    }

    /// Diagonal of the lumped mass.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn node_count(&self) -> usize {
        self.mesh.node_count()
    }

    pub fn energy(&self, u: &NodalField) -> Result<f64> {
        dirichlet_energy(&self.stiffness, u)
    }

    pub fn mass_norm_sq(&self, u: &NodalField) -> Result<f64> {
        lumped_norm_sq(&self.weights, u)
    }
}

/// Orthonormal basis `(e¹_n, e²_n)` of the plane orthogonal to `m(x_n)`,
/// with `e² = m × e¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame {
    e1: Vec<Vec3>,
    e2: Vec<Vec3>,
}

impl TangentFrame {
    pub fn len(&self) -> usize {
        self.e1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e1.is_empty()
    }

    pub fn basis(&self, node: usize) -> [Vec3; 2] {
        [self.e1[node], self.e2[node]]
    }

    /// Field `Σ_n (c_{2n} e¹_n + c_{2n+1} e²_n) φ_n`.
    pub fn to_field(&self, coords: &[f64]) -> Result<NodalField> {
        ensure_len(coords.len(), 2 * self.len())?;
        NodalField::from_values(
            self.e1
                .iter()
                .zip(&self.e2)
                .zip(coords.chunks_exact(2))
                .map(|((a, b), c)| c[0] * a + c[1] * b)
                .collect(),
        )
    }

    /// Frame coordinates of the tangential part of `v`.
    pub fn coordinates(&self, v: &NodalField) -> Result<Vec<f64>> {
        ensure_len(v.len(), self.len())?;
        Ok(v.iter().enumerate().flat_map(|(n, v)| [v.dot(&self.e1[n]), v.dot(&self.e2[n])]).collect())
    }
}

/// Picks the coordinate axis least aligned with `m(x_n)`, orthogonalizes
/// it against `m`, and completes the frame with a cross product.
pub fn build_tangent_frame(m: &NodalField) -> Result<TangentFrame> {
    let mut e1 = Vec::with_capacity(m.len());
    let mut e2 = Vec::with_capacity(m.len());
    for (node, mv) in m.iter().enumerate() {
        let modulus = mv.norm();
        if !((modulus - 1.0).abs() <= FRAME_UNIT_TOL) {
            return Err(Error::NotUnit { node, modulus });
        }
        let axis = mv.iamin();
        let mut a = Vec3::zeros();
        a[axis] = 1.0;
        let t = (a - a.dot(mv) * mv).normalize();
        e2.push(mv.cross(&t));
        e1.push(t);
    }
    Ok(TangentFrame { e1, e2 })
}

/// Matrix and right-hand side of one step, in frame coordinates.
#[derive(Debug, Clone)]
pub struct StepSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
}

/// Assembles, for all `v, w` in the discrete tangent space,
///
/// ```text
/// a(v, w) = λ₂⟨v, w⟩_h − λ₁⟨m × v, w⟩_h + μθk⟨∇v, ∇w⟩
/// f(w)    = −μ⟨∇m, ∇w⟩ − ⟨r, w⟩_h
/// ```
///
/// where `⟨·,·⟩_h` is the lumped inner product. Row `2n + β` tests with
/// `e^β_n φ_n`, column `2p + α` is the coefficient of `e^α_p φ_p`.
pub fn assemble_step_system(
    disc: &Discretization,
    m: &NodalField,
    frame: &TangentFrame,
    params: &SchemeParams,
    r_field: &NodalField,
) -> Result<StepSystem> {
    let n = disc.node_count();
    ensure_len(m.len(), n)?;
    ensure_len(frame.len(), n)?;
    ensure_len(r_field.len(), n)?;
    params.validate()?;

    let mu = params.mu();
    let diffusion = mu * params.theta * params.k();
    let k_mat = disc.stiffness();
    let mut b = TripletBuilder::with_capacity(2 * n, 2 * n, 4 * k_mat.nnz() + 4 * n);

    for row in 0..n {
        let basis_row = frame.basis(row);
        let w = disc.weights()[row];
        let mv = m[row];
        for beta in 0..2 {
            for alpha in 0..2 {
                let mass = if alpha == beta { params.lambda2 * w } else { 0.0 };
                let precession = -params.lambda1 * w * mv.cross(&basis_row[alpha]).dot(&basis_row[beta]);
                b.add(2 * row + beta, 2 * row + alpha, mass + precession);
            }
        }
        if diffusion != 0.0 {
            for (col, kval) in k_mat.row(row) {
                let basis_col = frame.basis(col);
                for (beta, eb) in basis_row.iter().enumerate() {
                    for (alpha, ea) in basis_col.iter().enumerate() {
                        b.add(2 * row + beta, 2 * col + alpha, diffusion * kval * ea.dot(eb));
                    }
                }
            }
        }
    }

    let mut km = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (c, out) in km.iter_mut().enumerate() {
        k_mat.mul_vec_into(&m.component(c), out);
    }
    let mut rhs = vec![0.0; 2 * n];
    for node in 0..n {
        let grad_term = Vec3::new(km[0][node], km[1][node], km[2][node]);
        let load = -mu * grad_term - disc.weights()[node] * r_field[node];
        let basis = frame.basis(node);
        rhs[2 * node] = load.dot(&basis[0]);
        rhs[2 * node + 1] = load.dot(&basis[1]);
    }
    Ok(StepSystem { matrix: b.finalize(), rhs })
}

#[derive(Debug, Clone)]
pub struct StepSolution {
    /// Tangential update, nodally orthogonal to `m` by construction.
    pub v: NodalField,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves the step system to relative residual `tolerance` and maps the
/// coordinates back to a nodal field.
///
/// GMRES is capped at `10 · 2N` iterations; on failure, meshes with at
/// most [`DENSE_FALLBACK_MAX_NODES`] nodes fall back to dense LU.
pub fn solve_step(system: &StepSystem, frame: &TangentFrame, tolerance: f64) -> Result<StepSolution> {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidParameter(format!("solver tolerance must be positive, got {tolerance}")));
    }
    ensure_len(system.rhs.len(), 2 * frame.len())?;
    let opts = GmresOptions::for_size(system.rhs.len(), tolerance);
    let (coords, iterations, residual) = match gmres(&system.matrix, &system.rhs, opts) {
        Ok(rep) => (rep.x, rep.iterations, rep.residual),
        Err(Error::SolverFailed { iterations, residual }) if frame.len() <= DENSE_FALLBACK_MAX_NODES => {
            let x = dense_solve(&system.matrix, &system.rhs)?;
            let res = relative_residual(&system.matrix, &system.rhs, &x);
            if res > tolerance {
                return Err(Error::SolverFailed { iterations, residual: residual.min(res) });
            }
            (x, iterations, res)
        }
        Err(e) => return Err(e),
    };
    Ok(StepSolution { v: frame.to_field(&coords)?, iterations, residual })
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub j: usize,
    pub t: f64,
    /// `‖∇m^{(j)}‖²` before the step.
    pub energy: f64,
    /// Lumped `‖v^{(j)}‖²`.
    pub v_norm_sq: f64,
    /// `‖∇v^{(j)}‖²`.
    pub grad_v_norm_sq: f64,
    pub iterations: usize,
    pub residual: f64,
    /// `max_n |v(x_n) · m(x_n)|`
    pub tangency_defect: f64,
}

/// State of one path: current iterate and its traces.
#[derive(Debug, Clone)]
pub struct PathState {
    pub j: usize,
    pub m: NodalField,
    /// `‖∇m^{(i)}‖²` for `i = 0..=j`.
    pub energy_trace: Vec<f64>,
    /// Lumped `‖v^{(i)}‖²` for `i < j`.
    pub v_norm_trace: Vec<f64>,
    /// `‖∇v^{(i)}‖²` for `i < j`.
    pub grad_v_trace: Vec<f64>,
    pub records: Vec<StepRecord>,
}

impl PathState {
    pub fn new(disc: &Discretization, m0: NodalField) -> Result<Self> {
        ensure_len(m0.len(), disc.node_count())?;
        if let Some((node, v)) = m0.iter().enumerate().find(|(_, v)| (v.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::NotUnit { node, modulus: v.norm() });
        }
        let e0 = disc.energy(&m0)?;
        Ok(Self { j: 0, m: m0, energy_trace: vec![e0], v_norm_trace: vec![], grad_v_trace: vec![], records: vec![] })
    }

    /// `‖∇m^{(j)}‖² + λ₂μ⁻¹ Σ k‖v‖² + (2θ−1) k² Σ ‖∇v‖²` after each step,
    /// starting with `‖∇m^{(0)}‖²`.
    pub fn energy_functional(&self, params: &SchemeParams) -> Vec<f64> {
        let k = params.k();
        let c_v = params.lambda2 / params.mu() * k;
        let c_g = (2.0 * params.theta - 1.0) * k * k;
        let mut out = Vec::with_capacity(self.energy_trace.len());
        let (mut sv, mut sg) = (0.0, 0.0);
        for (i, e) in self.energy_trace.iter().enumerate() {
            out.push(e + c_v * sv + c_g * sg);
            if i < self.v_norm_trace.len() {
                sv += self.v_norm_trace[i];
                sg += self.grad_v_trace[i];
            }
        }
        out
    }
}

/// Nodal interpolant of `f`, renormalized where the samples drift from the
/// unit sphere by more than `1e-12`.
pub fn initial_field(mesh: &Mesh, f: impl FnMut([f64; 2]) -> Vec3) -> Result<NodalField> {
    normalize_initial(crate::fem::interpolate(mesh, f)?)
}

/// Renormalizes nodal samples that drift from unit modulus by more than `1e-12`.
pub fn normalize_initial(mut m: NodalField) -> Result<NodalField> {
    for (node, v) in m.values_mut().iter_mut().enumerate() {
        let norm = v.norm();
        if !(norm > 0.0) {
            return Err(Error::ZeroVector { node });
        }
        if (norm - 1.0).abs() > 1e-12 {
            *v /= norm;
        }
    }
    Ok(m)
}

/// One step of the scheme with `W_k(t_j) = wk_value`.
pub fn advance(
    disc: &Discretization,
    state: &mut PathState,
    params: &SchemeParams,
    nc: &NoiseCoefficient,
    wk_value: f64,
    tolerance: f64,
) -> Result<StepRecord> {
    let j = state.j;
    let wrap = |e: Error| Error::Step { step: j, source: Box::new(e) };

    let frame = build_tangent_frame(&state.m).map_err(wrap)?;
    let r = r_hk_apply(disc.mesh(), &state.m, wk_value, params.damping(), nc).map_err(wrap)?;
    let system = assemble_step_system(disc, &state.m, &frame, params, &r).map_err(wrap)?;
    let sol = solve_step(&system, &frame, tolerance).map_err(wrap)?;

    let tangency_defect = sol.v.iter().zip(state.m.iter()).map(|(v, m)| v.dot(m).abs()).fold(0.0, f64::max);
    let v_norm_sq = disc.mass_norm_sq(&sol.v)?;
    let grad_v_norm_sq = disc.energy(&sol.v)?;
    let next = project_to_sphere(&state.m.add_scaled(params.k(), &sol.v)?).map_err(wrap)?;

    let record = StepRecord {
        j,
        t: params.time(j),
        energy: *state.energy_trace.last().expect("trace starts non-empty"),
        v_norm_sq,
        grad_v_norm_sq,
        iterations: sol.iterations,
        residual: sol.residual,
        tangency_defect,
    };
    state.energy_trace.push(disc.energy(&next)?);
    state.v_norm_trace.push(v_norm_sq);
    state.grad_v_trace.push(grad_v_norm_sq);
    state.records.push(record);
    state.m = next;
    state.j += 1;
    Ok(record)
}

/// `M = e^{W G_h} m`.
pub fn transform_to_magnetization(m: &NodalField, wk_value: f64, nc: &NoiseCoefficient) -> Result<NodalField> {
    exp_sg_apply(wk_value, m, nc)
}

/// `m = e^{−W G_h} M`.
pub fn transform_from_magnetization(big_m: &NodalField, wk_value: f64, nc: &NoiseCoefficient) -> Result<NodalField> {
    exp_sg_apply(-wk_value, big_m, nc)
}
