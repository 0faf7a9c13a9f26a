//! Factorized update primitives shared by the Dion-family steps.
//!
//! `orth` is Gram–Schmidt with a second re-orthogonalization pass. The
//! diagonal of the implied triangular factor is always non-negative, so the
//! output is a deterministic function of the input. Columns whose residual
//! norm drops below `√ε_mach · ‖W‖_F` are replaced by seeded random
//! directions orthogonalized against the columns accepted so far, and the
//! result is flagged as degenerate.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{Mat, TOL_ORTHO};
use crate::rng::SeededRng;

/// Output of [`orth`].
#[derive(Debug, Clone)]
pub struct Orthonormalized {
    pub q: Mat,
    /// True when at least one column was replaced by the completion rule.
    pub degenerate: bool,
    /// Indices of the replaced columns.
    pub replaced: Vec<usize>,
}

/// Left factor and un-normalized right factor of one subspace-iteration step.
#[derive(Debug, Clone)]
pub struct PowerStep {
    pub u: Mat,
    pub w: Mat,
    pub degenerate: bool,
}

/// Scales each column to unit 2-norm. Columns with norm at or below
/// `TOL_ORTHO · max_column_norm` come back as zero.
pub fn colnorm(w: &Mat) -> Mat {
    let norms: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let max = norms.iter().copied().fold(0.0f64, f64::max);
    let cutoff = TOL_ORTHO * max;
    let mut out = Mat::zeros(w.nrows(), w.ncols());
    for (j, &norm) in norms.iter().enumerate() {
        if norm > cutoff && norm > 0.0 {
            out.set_column(j, &(w.column(j) / norm));
        }
    }
    out
}

fn project_out(v: &mut DVector<f64>, q: &Mat, accepted: usize) {
    // two passes ("twice is enough")
    for _ in 0..2 {
        for i in 0..accepted {
            let c = q.column(i).dot(v);
            v.axpy(-c, &q.column(i), 1.0);
        }
    }
}

/// Orthonormal basis for the column space of `W` (thin Q of a QR
/// factorization with non-negative diagonal).
///
/// `rng` is only consumed when a column is rank-deficient.
///
/// # Panics
///
/// If `W` has more columns than rows.
pub fn orth(w: &Mat, rng: &mut SeededRng) -> Orthonormalized {
    let (rows, cols) = w.shape();
    assert!(
        cols <= rows,
        "orth needs cols <= rows, got {rows}x{cols}"
    );
    let cutoff = f64::EPSILON.sqrt() * w.norm();
    let mut q = Mat::zeros(rows, cols);
    let mut replaced = Vec::new();

    for j in 0..cols {
        let mut v = w.column(j).clone_owned();
        project_out(&mut v, &q, j);
        let mut norm = v.norm();
        if norm <= cutoff || norm == 0.0 {
            replaced.push(j);
            loop {
                v = DVector::from_fn(rows, |_, _| StandardNormal.sample(rng));
                project_out(&mut v, &q, j);
                norm = v.norm();
                if norm > 1e-6 {
                    break;
                }
            }
        }
        q.set_column(j, &(v / norm));
    }

    if !replaced.is_empty() {
        log::debug!(
            "orth: {} of {} columns rank-deficient, completed with seeded directions",
            replaced.len(),
            cols
        );
    }
    Orthonormalized {
        q,
        degenerate: !replaced.is_empty(),
        replaced,
    }
}

/// One half-step of subspace iteration: `U = orth(M·V_prev)`, `W = MᵀU`.
pub fn power_iter_half(m: &Mat, v_prev: &Mat, rng: &mut SeededRng) -> Result<PowerStep> {
    if m.ncols() != v_prev.nrows() {
        return Err(Error::Shape(format!(
            "M is {}x{} but V_prev has {} rows",
            m.nrows(),
            m.ncols(),
            v_prev.nrows()
        )));
    }
    if v_prev.ncols() > m.nrows() {
        return Err(Error::Shape(format!(
            "rank {} exceeds row count {}",
            v_prev.ncols(),
            m.nrows()
        )));
    }
    let orth_out = orth(&(m * v_prev), rng);
    let w = m.transpose() * &orth_out.q;
    Ok(PowerStep {
        u: orth_out.q,
        w,
        degenerate: orth_out.degenerate,
    })
}
