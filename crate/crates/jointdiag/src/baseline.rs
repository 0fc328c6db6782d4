//! Deterministic Jacobi-rotation joint diagonalization, used as a point
//! estimate to compare the sampler against.
//!
//! Inputs are symmetrized and then repeatedly swept with Givens rotations.
//! For a pair (p, q) the angle comes in closed form from the principal
//! eigenvector of the 2 x 2 matrix `sum_k g_k g_k'` with
//! `g_k = (a_pp - a_qq, 2 a_pq)`, which maximizes the joint reduction of
//! off-diagonal mass over all rotations of that pair.

use nalgebra::{DMatrix, DVector};

use crate::model::{MatrixSet, StiefelPoint};
use crate::{Error, Result};

/// Default stopping threshold on |sin| of the sweep's rotations.
pub const JACOBI_TOL: f64 = 1e-8;

/// Default sweep cap.
pub const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone)]
pub struct JacobiResult {
    /// Accumulated orthogonal basis (N x N).
    pub basis: StiefelPoint,
    /// Diagonals of `V' sym(C_k) V`, one vector per input matrix.
    pub diagonals: Vec<DVector<f64>>,
    pub sweeps: usize,
    /// False when the sweep cap was hit before all |sin| fell under `tol`.
    pub converged: bool,
}

/// Joint approximate diagonalization of `sym(C_k) = (C_k + C_k')/2` for all
/// matrices in the set.
pub fn jacobi_jd(c: &MatrixSet, tol: f64, max_sweeps: usize) -> Result<JacobiResult> {
    if !(tol > 0.0) || max_sweeps == 0 {
        return Err(Error::InvalidArgument("tol must be positive and max_sweeps non-zero".into()));
    }
    let n = c.dim();
    let mut work: Vec<DMatrix<f64>> =
        c.matrices().iter().map(|m| (m + m.transpose()) * 0.5).collect();
    let mut v = DMatrix::<f64>::identity(n, n);

    let mut sweeps = 0;
    let mut converged = n < 2;
    while sweeps < max_sweeps && !converged {
        sweeps += 1;
        let mut max_sin: f64 = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
                for a in &work {
                    let gx = a[(p, p)] - a[(q, q)];
                    let gy = 2.0 * a[(p, q)];
                    gxx += gx * gx;
                    gxy += gx * gy;
                    gyy += gy * gy;
                }
                let half_diff = 0.5 * (gxx - gyy);
                let lam = 0.5 * (gxx + gyy) + (half_diff * half_diff + gxy * gxy).sqrt();
                // Principal eigenvector of [[gxx, gxy], [gxy, gyy]]; take the
                // better-conditioned of the two analytic forms.
                let cand1 = (gxy, lam - gxx);
                let cand2 = (lam - gyy, gxy);
                let (mut x, mut y) = if cand1.0 * cand1.0 + cand1.1 * cand1.1
                    >= cand2.0 * cand2.0 + cand2.1 * cand2.1
                {
                    cand1
                } else {
                    cand2
                };
                let r = (x * x + y * y).sqrt();
                if r < 1e-300 {
                    continue;
                }
                if x < 0.0 {
                    x = -x;
                    y = -y;
                } else if x == 0.0 {
                    y = y.abs();
                }
                let cos = ((x + r) / (2.0 * r)).sqrt();
                let sin = y / (2.0 * r * (x + r)).sqrt();
                max_sin = max_sin.max(sin.abs());

                for a in work.iter_mut() {
                    rotate_sym(a, p, q, cos, sin);
                }
                // Accumulate V <- V G (columns p, q only).
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = cos * vp + sin * vq;
                    v[(i, q)] = -sin * vp + cos * vq;
                }
            }
        }
        converged = max_sin < tol;
    }

    let diagonals = work.iter().map(|a| a.diagonal()).collect();
    Ok(JacobiResult { basis: StiefelPoint::new_unchecked(v), diagonals, sweeps, converged })
}

/// In-place two-sided Givens update `A <- G' A G` for symmetric `A`, where
/// `G` is the identity except `G[p][p] = G[q][q] = cos`, `G[p][q] = -sin`,
/// `G[q][p] = sin`.
fn rotate_sym(a: &mut DMatrix<f64>, p: usize, q: usize, cos: f64, sin: f64) {
    let n = a.nrows();
    for j in 0..n {
        let apj = a[(p, j)];
        let aqj = a[(q, j)];
        a[(p, j)] = cos * apj + sin * aqj;
        a[(q, j)] = -sin * apj + cos * aqj;
    }
    for i in 0..n {
        let aip = a[(i, p)];
        let aiq = a[(i, q)];
        a[(i, p)] = cos * aip + sin * aiq;
        a[(i, q)] = -sin * aip + cos * aiq;
    }
}
