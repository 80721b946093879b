//! Restarted GMRES with right Jacobi preconditioning.
//!
//! The step matrix is non-symmetric (the precession block is skew), so a
//! symmetric method such as CG does not apply. Right preconditioning keeps
//! the monitored residual equal to the true residual `b - A x`.

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    /// Relative residual target `‖b - Ax‖ / ‖b‖`.
    pub tolerance: f64,
    pub restart: usize,
    pub max_iterations: usize,
}

impl GmresOptions {
    pub fn for_size(n: usize, tolerance: f64) -> Self {
        Self { tolerance, restart: 80.min(n.max(1)), max_iterations: 10 * n.max(1) }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual of the returned `x`, recomputed from scratch.
    pub residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn residual(a: &SparseMatrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    let ax = a.mul_vec(x);
    b.iter().zip(ax).map(|(bi, ai)| bi - ai).collect()
}

pub fn relative_residual(a: &SparseMatrix, b: &[f64], x: &[f64]) -> f64 {
    let bn = norm(b);
    let rn = norm(&residual(a, b, x));
    if bn == 0.0 { rn } else { rn / bn }
}

pub fn gmres(a: &SparseMatrix, b: &[f64], opts: GmresOptions) -> Result<SolveReport> {
    let n = b.len();
    let (rows, cols) = a.shape();
    if rows != n || cols != n {
        return Err(Error::DimensionMismatch { expected: n, found: rows });
    }
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(SolveReport { x, iterations: 0, residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a.diag().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let m = opts.restart.max(1);
    let mut iterations = 0;

    loop {
        let r = residual(a, b, &x);
        let beta = norm(&r);
        if beta / bnorm <= opts.tolerance {
            return Ok(SolveReport { x, iterations, residual: beta / bnorm });
        }
        if iterations >= opts.max_iterations {
            return Err(Error::SolverFailed { iterations, residual: beta / bnorm });
        }

        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut hess = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut used = 0;

        for j in 0..m {
            iterations += 1;
            used = j + 1;
            let z: Vec<f64> = basis[j].iter().zip(&inv_diag).map(|(v, d)| v * d).collect();
            let mut w = a.mul_vec(&z);
            // modified Gram-Schmidt
            for (i, vi) in basis.iter().enumerate() {
                let hij = dot(&w, vi);
                hess[i][j] = hij;
                w.iter_mut().zip(vi).for_each(|(wk, vk)| *wk -= hij * vk);
            }
            let wnorm = norm(&w);
            hess[j + 1][j] = wnorm;

            for i in 0..j {
                let tmp = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = tmp;
            }
            let denom = hess[j][j].hypot(hess[j + 1][j]);
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = hess[j][j] / denom;
                sn[j] = hess[j + 1][j] / denom;
            }
            hess[j][j] = cs[j] * hess[j][j] + sn[j] * hess[j + 1][j];
            hess[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];

            let estimate = g[j + 1].abs() / bnorm;
            if estimate <= 0.5 * opts.tolerance || wnorm == 0.0 || iterations >= opts.max_iterations {
                break;
            }
            basis.push(w.iter().map(|v| v / wnorm).collect());
        }

        // back substitution on the triangular Hessenberg block
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let s: f64 = (i + 1..used).map(|k| hess[i][k] * y[k]).sum();
            y[i] = if hess[i][i] != 0.0 { (g[i] - s) / hess[i][i] } else { 0.0 };
        }
        let mut update = vec![0.0; n];
        for (yi, vi) in y.iter().zip(&basis) {
            update.iter_mut().zip(vi).for_each(|(u, v)| *u += yi * v);
        }
        x.iter_mut().zip(update.iter().zip(&inv_diag)).for_each(|(xi, (u, d))| *xi += u * d);
    }
}

/// Dense LU solve, used as a fallback and as a test oracle.
pub fn dense_solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let lu = a.to_dense().lu();
    lu.solve(&nalgebra::DVector::from_column_slice(b))
        .map(|x| x.as_slice().to_vec())
        .ok_or(Error::SolverFailed { iterations: 0, residual: f64::INFINITY })
}
