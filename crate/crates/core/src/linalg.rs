//! Matrix norms and spectral primitives.
//!
//! Everything here is a pure function of its inputs. Singular values are
//! always reported in non-increasing order, and a singular value counts
//! toward the numerical rank iff `σ_i > max(m, n) · ε_mach · σ_1`.
//!
//! The Ky Fan dual norm is `max{σ_1(A), ‖A‖_* / r}`. The tempting variant
//! `max{σ_1(A), ‖A‖_F / √r}` underestimates it (e.g. `A = I_3`, `r = 2`
//! gives `√1.5` instead of `1.5`) and is deliberately not provided.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense real matrix holding one layer's parameter, gradient or factor.
pub type Mat = DMatrix<f64>;

/// Tolerance for orthonormality checks (`‖QᵀQ − I‖_max`).
pub const TOL_ORTHO: f64 = 1e-10;

/// Relative tolerance for spectral comparisons.
pub const TOL_REL: f64 = 1e-8;

/// Looser orthonormality gate used when validating caller-supplied bases.
pub const TOL_BASIS_INPUT: f64 = 1e-8;

/// Non-increasing singular values plus the numerical rank they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSummary {
    pub singular_values: Vec<f64>,
    pub rank_numerical: usize,
}

impl SpectrumSummary {
    pub fn sigma(&self, i: usize) -> f64 {
        self.singular_values.get(i).copied().unwrap_or(0.0)
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma(0)
    }
}

/// Rank-`k` truncated SVD, `A ≈ U · diag(s) · Vᵀ`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

/// Rejects empty matrices and non-finite entries.
pub fn validate(a: &Mat) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::Validation(format!(
            "matrix must be non-empty, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if let Some(idx) = a.iter().position(|x| !x.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite entry at linear index {idx}"
        )));
    }
    Ok(())
}

fn check_rank_arg(a: &Mat, r: usize) -> Result<()> {
    let max = a.nrows().min(a.ncols());
    if r == 0 || r > max {
        return Err(Error::range("rank", r, 1, max));
    }
    Ok(())
}

/// Threshold below which a singular value is treated as zero.
pub fn rank_threshold(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

/// Frobenius inner product `⟨A, B⟩ = tr(AᵀB)`.
pub fn inner(a: &Mat, b: &Mat) -> f64 {
    a.dot(b)
}

/// Full singular spectrum, sorted non-increasing.
pub fn spectrum(a: &Mat) -> Result<SpectrumSummary> {
    validate(a)?;
    let mut sv: Vec<f64> = a.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    let thresh = rank_threshold(a.nrows(), a.ncols(), sv[0]);
    let rank_numerical = sv.iter().filter(|&&s| s > thresh).count();
    Ok(SpectrumSummary {
        singular_values: sv,
        rank_numerical,
    })
}

/// Top-`k` singular triplets.
pub fn svd_truncated(a: &Mat, k: usize) -> Result<TruncatedSvd> {
    validate(a)?;
    check_rank_arg(a, k)?;
    let svd = a.clone().svd(true, true);
    let (u_full, vt_full) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Validation("SVD did not produce factors".into())),
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    order.truncate(k);

    let u = Mat::from_fn(a.nrows(), k, |row, c| u_full[(row, order[c])]);
    let v = Mat::from_fn(a.ncols(), k, |row, c| vt_full[(order[c], row)]);
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    Ok(TruncatedSvd { u, s, v })
}

pub fn operator_norm(a: &Mat) -> Result<f64> {
    Ok(spectrum(a)?.sigma_max())
}

pub fn nuclear_norm(a: &Mat) -> Result<f64> {
    Ok(spectrum(a)?.singular_values.iter().sum())
}

/// Sum of the top `r` singular values.
pub fn kyfan_norm(a: &Mat, r: usize) -> Result<f64> {
    check_rank_arg(a, r)?;
    Ok(spectrum(a)?.singular_values[..r].iter().sum())
}

/// Dual of the Ky Fan `r`-norm: `max{σ_1(A), ‖A‖_* / r}`.
pub fn kyfan_dual_norm(a: &Mat, r: usize) -> Result<f64> {
    check_rank_arg(a, r)?;
    let spec = spectrum(a)?;
    Ok(dual_norm_from_spectrum(&spec.singular_values, r))
}

pub(crate) fn dual_norm_from_spectrum(sv: &[f64], r: usize) -> f64 {
    let sigma1 = sv.first().copied().unwrap_or(0.0);
    let nuclear: f64 = sv.iter().sum();
    sigma1.max(nuclear / r as f64)
}

fn require_nondegenerate(a: &Mat, spec: &SpectrumSummary, r: usize) -> Result<()> {
    let thresh = rank_threshold(a.nrows(), a.ncols(), spec.sigma_max());
    if spec.sigma(r - 1) <= thresh {
        return Err(Error::DegenerateRank {
            requested: r,
            numerical_rank: spec.rank_numerical,
        });
    }
    Ok(())
}

/// Rank-`r` polar factor `U_r V_rᵀ`, the maximizer of `⟨A, B⟩` over the
/// Ky Fan dual unit ball.
pub fn polar_rank_r(a: &Mat, r: usize) -> Result<Mat> {
    Ok(polar_with_factors(a, r)?.0)
}

/// Polar factor together with the truncated SVD it was built from.
pub fn polar_with_factors(a: &Mat, r: usize) -> Result<(Mat, TruncatedSvd)> {
    check_rank_arg(a, r)?;
    let spec = spectrum(a)?;
    require_nondegenerate(a, &spec, r)?;
    let svd = svd_truncated(a, r)?;
    Ok((&svd.u * svd.v.transpose(), svd))
}

/// `κ_r(A) = σ_1 / σ_r`.
pub fn condition_at_rank(a: &Mat, r: usize) -> Result<f64> {
    check_rank_arg(a, r)?;
    let spec = spectrum(a)?;
    require_nondegenerate(a, &spec, r)?;
    Ok(spec.sigma(0) / spec.sigma(r - 1))
}

/// `γ̃ = σ_{r+1} / σ_r`.
pub fn spectral_ratio(a: &Mat, r: usize) -> Result<f64> {
    let max = a.nrows().min(a.ncols());
    if r == 0 || r + 1 > max {
        return Err(Error::range("rank", r, 1, max.saturating_sub(1)));
    }
    let spec = spectrum(a)?;
    require_nondegenerate(a, &spec, r)?;
    Ok(spec.sigma(r) / spec.sigma(r - 1))
}

/// `max_{ij} |(QᵀQ − I)_{ij}|`.
pub fn orthonormality_defect(q: &Mat) -> f64 {
    let gram = q.transpose() * q;
    let k = gram.nrows();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn check_orthonormal(q: &Mat, tol: f64) -> Result<()> {
    validate(q)?;
    let defect = orthonormality_defect(q);
    if defect > tol {
        return Err(Error::Validation(format!(
            "columns not orthonormal: max |QᵀQ - I| = {defect:.3e} > {tol:.1e}"
        )));
    }
    Ok(())
}

fn check_basis_pair(u1: &Mat, u2: &Mat) -> Result<()> {
    if u1.shape() != u2.shape() {
        return Err(Error::Shape(format!(
            "subspace bases differ: {:?} vs {:?}",
            u1.shape(),
            u2.shape()
        )));
    }
    check_orthonormal(u1, TOL_BASIS_INPUT)?;
    check_orthonormal(u2, TOL_BASIS_INPUT)
}

/// `sin θ_max = ‖(I − U1U1ᵀ)U2‖_op`, accurate for small angles. For
/// equal-dimension subspaces this equals `‖U1U1ᵀ − U2U2ᵀ‖_op`.
fn sin_max_angle(u1: &Mat, u2: &Mat) -> f64 {
    let residual = u2 - u1 * (u1.transpose() * u2);
    let s = residual
        .singular_values()
        .iter()
        .copied()
        .fold(0.0f64, f64::max);
    s.clamp(0.0, 1.0)
}

/// Largest principal angle between `span(U1)` and `span(U2)`, in `[0, π/2]`.
pub fn principal_angle_max(u1: &Mat, u2: &Mat) -> Result<f64> {
    check_basis_pair(u1, u2)?;
    Ok(sin_max_angle(u1, u2).asin())
}

/// `‖U Uᵀ − U_ref U_refᵀ‖_op`, in `[0, 1]`.
pub fn projector_error(u: &Mat, uref: &Mat) -> Result<f64> {
    check_basis_pair(u, uref)?;
    Ok(sin_max_angle(u, uref))
}

/// Projector error without the input orthonormality gate; used on the hot
/// path where both bases come from `orth` or an SVD.
pub(crate) fn projector_error_unchecked(u: &Mat, uref: &Mat) -> f64 {
    sin_max_angle(u, uref)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(vals: &[f64]) -> Mat {
        Mat::from_diagonal(&nalgebra::DVector::from_row_slice(vals))
    }

    #[test]
    fn identity_truncated_svd() {
        let svd = svd_truncated(&Mat::identity(3, 3), 2).unwrap();
        assert_eq!(svd.s.len(), 2);
        for s in &svd.s {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn diagonal_truncated_svd_picks_canonical_vectors() {
        let svd = svd_truncated(&diag(&[3.0, 2.0, 1.0]), 2).unwrap();
        assert!((svd.s[0] - 3.0).abs() < 1e-14 && (svd.s[1] - 2.0).abs() < 1e-14);
        for c in 0..2 {
            assert!((svd.u[(c, c)].abs() - 1.0).abs() < 1e-14);
            assert!((svd.v[(c, c)].abs() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_argument_is_range_checked() {
        let a = Mat::identity(3, 2);
        assert!(matches!(svd_truncated(&a, 0), Err(Error::Range { .. })));
        assert!(matches!(svd_truncated(&a, 3), Err(Error::Range { .. })));
        assert!(matches!(kyfan_norm(&a, 3), Err(Error::Range { .. })));
        assert!(matches!(kyfan_dual_norm(&a, 0), Err(Error::Range { .. })));
        assert!(matches!(spectral_ratio(&a, 2), Err(Error::Range { .. })));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut a = Mat::identity(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(svd_truncated(&a, 1), Err(Error::Validation(_))));
        assert!(matches!(spectrum(&a), Err(Error::Validation(_))));
    }

    #[test]
    fn kyfan_examples() {
        assert!((kyfan_norm(&Mat::identity(3, 3), 2).unwrap() - 2.0).abs() < 1e-14);
        assert!((kyfan_norm(&diag(&[3.0, 2.0, 1.0]), 2).unwrap() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn dual_norm_uses_nuclear_not_frobenius() {
        let d = kyfan_dual_norm(&Mat::identity(3, 3), 2).unwrap();
        assert!((d - 1.5).abs() < 1e-14);
        assert!((d - 1.5f64.sqrt()).abs() > 0.2);
    }

    #[test]
    fn polar_examples() {
        let p = polar_rank_r(&diag(&[3.0, 2.0, 1.0]), 2).unwrap();
        let expect = diag(&[1.0, 1.0, 0.0]);
        assert!((p - expect).abs().max() < 1e-14);
        let p = polar_rank_r(&Mat::identity(3, 3), 3).unwrap();
        assert!((p - Mat::identity(3, 3)).abs().max() < 1e-14);
    }

    #[test]
    fn polar_degenerate_rank_reports_numerical_rank() {
        let a = diag(&[2.0, 1.0, 0.0]);
        match polar_rank_r(&a, 3) {
            Err(Error::DegenerateRank {
                requested,
                numerical_rank,
            }) => {
                assert_eq!(requested, 3);
                assert_eq!(numerical_rank, 2);
            }
            other => panic!("expected degenerate rank, got {other:?}"),
        }
    }

    #[test]
    fn condition_and_ratio_examples() {
        assert!((condition_at_rank(&Mat::identity(4, 4), 4).unwrap() - 1.0).abs() < 1e-15);
        assert!((condition_at_rank(&diag(&[10.0, 5.0, 1.0]), 3).unwrap() - 10.0).abs() < 1e-13);
        assert!((spectral_ratio(&diag(&[3.0, 2.0, 1.0]), 2).unwrap() - 0.5).abs() < 1e-14);
        assert_eq!(spectral_ratio(&diag(&[3.0, 2.0, 0.0, 0.0]), 2).unwrap(), 0.0);
        assert!(matches!(
            condition_at_rank(&diag(&[1.0, 0.0]), 2),
            Err(Error::DegenerateRank { .. })
        ));
    }

    #[test]
    fn principal_angle_basics() {
        let e12 = Mat::identity(4, 2);
        assert_eq!(principal_angle_max(&e12, &e12).unwrap(), 0.0);

        let e1 = Mat::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let e2 = Mat::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let angle = principal_angle_max(&e1, &e2).unwrap();
        assert!((angle - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((projector_error(&e1, &e2).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn principal_angle_rejects_bad_inputs() {
        let a = Mat::identity(4, 2);
        let b = Mat::identity(4, 3);
        assert!(matches!(principal_angle_max(&a, &b), Err(Error::Shape(_))));
        let c = Mat::from_element(4, 2, 1.0);
        assert!(matches!(
            principal_angle_max(&a, &c),
            Err(Error::Validation(_))
        ));
    }
}
