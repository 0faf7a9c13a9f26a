//! Per-step geometry measurements and theory-side checkers.
//!
//! Quantities recorded for every step:
//!
//! | field         | meaning                                                     |
//! |---------------|-------------------------------------------------------------|
//! | `nu`          | Ky Fan dual norm of the applied direction `D̂`              |
//! | `delta`       | oracle defect `‖M‖_(r) − ⟨M, D̂⟩`, signed                   |
//! | `eps_proj`    | `‖UUᵀ − U_r U_rᵀ‖_op` against the top-r space of the buffer |
//! | `eps_proj_g`  | same, against the top-r space of the gradient               |
//! | `eps_hat`     | `‖(I − UUᵀ)M‖_F / ‖M‖_F`                                    |
//! | `phi`         | cosine between consecutive out-of-subspace gradients        |
//! | `r_ratio`     | `‖R‖_F / ‖G‖_F` for the incoming residual                   |
//! | `gamma_tilde` | `σ_{r+1}(M) / σ_r(M)`                                       |
//! | `kappa_g`     | `σ_1(G) / σ_r(G)`                                           |
//! | `rho`         | `γ̃ · (1 + κ_G)`                                            |
//! | `erank`       | entropy effective rank of the column norms of `W`           |
//!
//! In [`DiagnosticsMode::Fast`] the fields that need an SVD of `M` or `G`
//! are left as `None`, and `nu` is taken from the `r × r` Gram matrix of the
//! right factor.

use serde::{Deserialize, Serialize};

use crate::adarank::effective_rank_estimate;
use crate::error::{Error, Result};
use crate::linalg::{
    dual_norm_from_spectrum, inner, kyfan_dual_norm, kyfan_norm, projector_error_unchecked,
    rank_threshold, svd_truncated, Mat, TruncatedSvd,
};

/// Below this Frobenius norm a vector is treated as zero for `phi`/`eps_hat`.
pub const NORM_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagnosticsMode {
    #[default]
    Full,
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub nu: f64,
    pub delta: Option<f64>,
    pub eps_proj: Option<f64>,
    pub eps_proj_g: Option<f64>,
    pub eps_hat: f64,
    pub phi: f64,
    pub r_ratio: f64,
    pub gamma_tilde: Option<f64>,
    pub kappa_g: Option<f64>,
    pub rho: Option<f64>,
    pub erank: f64,
    pub degenerate: bool,
}

/// `ν = ‖D‖_(r)*`, the Ky Fan dual norm of an update direction.
pub fn measure_nu(d: &Mat, r: usize) -> Result<f64> {
    kyfan_dual_norm(d, r)
}

/// `ν` for `D = U V̄ᵀ` with orthonormal `U`, from the singular values of `V̄`
/// (via its `r × r` Gram matrix).
pub fn nu_from_right_factor(vbar: &Mat) -> f64 {
    let r = vbar.ncols();
    let gram = vbar.transpose() * vbar;
    let mut sv: Vec<f64> = gram
        .symmetric_eigenvalues()
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    dual_norm_from_spectrum(&sv, r)
}

/// Oracle defect `δ = ‖M‖_(r) − ⟨M, D⟩`. Reported signed.
pub fn measure_defect(m: &Mat, d: &Mat, r: usize) -> Result<f64> {
    if m.shape() != d.shape() {
        return Err(Error::Shape(format!(
            "buffer {:?} vs direction {:?}",
            m.shape(),
            d.shape()
        )));
    }
    Ok(kyfan_norm(m, r)? - inner(m, d))
}

/// Cosine similarity of two out-of-subspace gradient components, `0` when
/// either is (numerically) zero.
pub fn measure_persistence(now: &Mat, prev: &Mat) -> f64 {
    let (na, nb) = (now.norm(), prev.norm());
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return 0.0;
    }
    (inner(now, prev) / (na * nb)).clamp(-1.0, 1.0)
}

/// `ε̂ = ‖(I − UUᵀ)M‖_F / ‖M‖_F`.
pub fn tracking_error(u: &Mat, m: &Mat) -> f64 {
    let mn = m.norm();
    if mn < NORM_FLOOR {
        return 0.0;
    }
    let out = m - u * (u.transpose() * m);
    (out.norm() / mn).clamp(0.0, 1.0)
}

/// Outcome of [`check_suffix_contraction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuffixCheck {
    pub passed: bool,
    /// First `(s, t)` with `∏_{i=s}^{t-1} ρ_i > C ρ̄^{t-s}`, ordered by `t`
    /// then `s`.
    pub first_violation: Option<(usize, usize)>,
}

/// Checks every window product `∏_{i=s}^{t-1} ρ_i ≤ C · ρ̄^{t-s}` in log space.
pub fn check_suffix_contraction(rhos: &[f64], rho_bar: f64, c: f64) -> Result<SuffixCheck> {
    if !(rho_bar > 0.0 && rho_bar < 1.0) {
        return Err(Error::Validation(format!("rho_bar = {rho_bar} not in (0,1)")));
    }
    if !(c >= 1.0) {
        return Err(Error::Validation(format!("C = {c} < 1")));
    }
    if let Some(bad) = rhos.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::Validation(format!("rho[{bad}] = {} not positive", rhos[bad])));
    }

    let log_bar = rho_bar.ln();
    let log_c = c.ln();
    // prefix[k] = Σ_{i<k} ln ρ_i
    let mut prefix = Vec::with_capacity(rhos.len() + 1);
    prefix.push(0.0f64);
    for &x in rhos {
        let last = *prefix.last().unwrap();
        prefix.push(last + x.ln());
    }

    for t in 1..=rhos.len() {
        for s in 0..t {
            let window = prefix[t] - prefix[s];
            let bound = log_c + (t - s) as f64 * log_bar;
            if window > bound + 1e-12 * (1.0 + bound.abs()) {
                return Ok(SuffixCheck {
                    passed: false,
                    first_violation: Some((s, t)),
                });
            }
        }
    }
    Ok(SuffixCheck {
        passed: true,
        first_violation: None,
    })
}

/// Admissibility ceilings on `γ̃` for the original Dion analysis and the
/// Ky Fan dual-norm analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionCeilings {
    /// `1 / (1 + 2√(2r)·κ)`
    pub original: f64,
    /// `1 / (1 + κ)`
    pub ours: f64,
    /// Factor by which the residual-amplification coefficient shrinks,
    /// `(1/original − 1) / (1/ours − 1) = 2√(2r)`.
    pub relaxation: f64,
}

impl ContractionCeilings {
    /// Plain ratio of the two ceilings, `ours / original`.
    pub fn ceiling_ratio(&self) -> f64 {
        self.ours / self.original
    }
}

pub fn contraction_ceilings(r: usize, kappa: f64) -> ContractionCeilings {
    let amplification = 2.0 * (2.0 * r as f64).sqrt();
    ContractionCeilings {
        original: 1.0 / (1.0 + amplification * kappa),
        ours: 1.0 / (1.0 + kappa),
        relaxation: amplification,
    }
}

/// Heavy-ball coefficient implied by error feedback at tracking error `ε̂`.
pub fn implicit_momentum_coeff(eps_hat: f64) -> f64 {
    eps_hat * eps_hat
}

/// Reported (never applied) suggestion `β* ≈ 1 − 2ε̂`, clamped to `[0, 1]`.
pub fn suggested_beta(eps_hat: f64) -> f64 {
    (1.0 - 2.0 * eps_hat).clamp(0.0, 1.0)
}

/// Cost of ColNorm relative to a partial isometry at rank `r`:
/// smoothness `ν² = r` and residual coupling `(1 + √r) / 2`.
pub fn smoothness_coupling_ratios(r: usize) -> (f64, f64) {
    let r = r as f64;
    (r, (1.0 + r.sqrt()) / 2.0)
}

/// Inputs for [`measure_step`]; all matrices are for one layer at step t.
pub(crate) struct StepArtifacts<'a> {
    pub m: &'a Mat,
    pub g: &'a Mat,
    pub residual_in: &'a Mat,
    pub u: &'a Mat,
    pub w: &'a Mat,
    pub vbar: &'a Mat,
    pub direction: &'a Mat,
    pub rank: usize,
    pub prev_out_grad: Option<&'a Mat>,
    pub degenerate: bool,
    pub mode: DiagnosticsMode,
    /// Full SVD of `M` if the step already computed it.
    pub m_svd: Option<&'a TruncatedSvd>,
}

fn full_svd(a: &Mat) -> Result<TruncatedSvd> {
    svd_truncated(a, a.nrows().min(a.ncols()))
}

/// Computes the diagnostics for one step and returns the out-of-subspace
/// gradient `(I − UUᵀ)G`, which the next step needs for `phi`.
pub(crate) fn measure_step(a: &StepArtifacts<'_>) -> Result<(StepDiagnostics, Mat)> {
    let r = a.rank;
    let out_grad = a.g - a.u * (a.u.transpose() * a.g);
    let phi = a
        .prev_out_grad
        .map(|prev| measure_persistence(&out_grad, prev))
        .unwrap_or(0.0);
    let gn = a.g.norm();
    let r_ratio = if gn < NORM_FLOOR {
        0.0
    } else {
        a.residual_in.norm() / gn
    };
    let eps_hat = tracking_error(a.u, a.m);
    let erank = effective_rank_estimate(a.w).unwrap_or(1.0);

    let mut diag = StepDiagnostics {
        nu: 0.0,
        delta: None,
        eps_proj: None,
        eps_proj_g: None,
        eps_hat,
        phi,
        r_ratio,
        gamma_tilde: None,
        kappa_g: None,
        rho: None,
        erank,
        degenerate: a.degenerate,
    };

    match a.mode {
        DiagnosticsMode::Fast => {
            diag.nu = nu_from_right_factor(a.vbar);
        }
        DiagnosticsMode::Full => {
            diag.nu = measure_nu(a.direction, r)?;

            let owned;
            let msvd = match a.m_svd {
                Some(s) => s,
                None => {
                    owned = full_svd(a.m)?;
                    &owned
                }
            };
            let gsvd = full_svd(a.g)?;
            let kyfan_m: f64 = msvd.s[..r].iter().sum();
            diag.delta = Some(kyfan_m - inner(a.m, a.direction));

            let (rows, cols) = a.m.shape();
            let m_thresh = rank_threshold(rows, cols, msvd.s[0]);
            let g_thresh = rank_threshold(rows, cols, gsvd.s[0]);
            let m_ok = msvd.s[r - 1] > m_thresh;
            let g_ok = gsvd.s[r - 1] > g_thresh;

            if m_ok {
                let top = msvd.u.columns(0, r).into_owned();
                diag.eps_proj = Some(projector_error_unchecked(a.u, &top));
                if r < msvd.s.len() {
                    diag.gamma_tilde = Some(msvd.s[r] / msvd.s[r - 1]);
                }
            }
            if g_ok {
                let top = gsvd.u.columns(0, r).into_owned();
                diag.eps_proj_g = Some(projector_error_unchecked(a.u, &top));
                diag.kappa_g = Some(gsvd.s[0] / gsvd.s[r - 1]);
            }
            if let (Some(gt), Some(k)) = (diag.gamma_tilde, diag.kappa_g) {
                diag.rho = Some(gt * (1.0 + k));
            }
        }
    }
    Ok((diag, out_grad))
}
