//! Finite-element simulation of the stochastic Landau-Lifshitz-Gilbert
//! equation with a linear θ tangent-plane scheme.
//!
//! The noisy equation for the magnetization `M` is transformed into a PDE
//! with random coefficients for `m = e^{-W(t)G} M`, which is advanced by
//! solving one linear `2N × 2N` system per time step for a tangential
//! update `v`, followed by nodewise projection onto the unit sphere. Monte
//! Carlo averages over Brownian paths recover expectations of `M`.
//!
//! Module map:
//!
//! - [`mesh`]: uniform triangulations and the non-obtuse condition
//! - [`fem`]: nodal fields, P1 assembly, norms, sphere projection
//! - [`algebra`]: the operator `G`, the rotation `e^{sG}`, `C_h`, `R_{h,k}`
//! - [`scheme`]: tangent frames, the step system, Krylov solve, `advance`
//! - [`stochastic`]: Brownian paths, ensembles and estimators
//! - [`io`]: configuration, builtin initial datum, CSV/VTK/manifest output
//!
//! The guide under `book/` walks through each piece; its code listings are
//! compiled and run as doctests of this crate.

// `!(x <= tol)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod io;
pub mod krylov;
pub mod mesh;
pub mod scheme;
pub mod sparse;
pub mod stochastic;
pub mod vtk;

pub use error::{Error, Result};
pub use fem::{NodalField, Vec3};
pub use mesh::Mesh;
pub use sparse::SparseMatrix;

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../README.md")]
    pub mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/mesh.md")]
    pub mod mesh {}
    #[doc = include_str!("../../../book/src/operators.md")]
    pub mod operators {}
    #[doc = include_str!("../../../book/src/scheme.md")]
    pub mod scheme {}
    #[doc = include_str!("../../../book/src/monte_carlo.md")]
    pub mod monte_carlo {}
    #[doc = include_str!("../../../book/src/outputs.md")]
    pub mod outputs {}
}
