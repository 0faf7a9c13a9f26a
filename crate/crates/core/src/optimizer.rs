//! Per-layer optimizer steps.
//!
//! All four algorithms share the same skeleton on the buffer `M = G + R`:
//!
//! ```text
//! U  = orth(M V_prev)          one step of subspace iteration
//! W  = Mᵀ U
//! V̄  = ColNorm(W)  (Dion)  |  orth(W)  (Orth-Dion, PolyakDion)
//! D̂  = U V̄ᵀ
//! X ← X − η D̂
//! R ← β (M − U (Uᵀ M))
//! V ← orth(V̄)                   or V̄ itself with `WarmStart::Raw`
//! ```
//!
//! `exact_polar_step` replaces the power step by a truncated SVD of `M` and
//! applies the rank-`r` polar factor. `polyak_dion_step` accumulates explicit
//! momentum `P ← μP + G`, runs the Orth-Dion step on `M = P` and keeps the
//! residual pinned at zero.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{measure_step, DiagnosticsMode, StepArtifacts, StepDiagnostics};
use crate::error::{Error, Result};
use crate::factor::{colnorm, orth, power_iter_half};
use crate::linalg::{check_orthonormal, polar_with_factors, validate, Mat, TOL_ORTHO};
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dion,
    OrthDion,
    ExactPolar,
    PolyakDion,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dion => "dion",
            Algorithm::OrthDion => "orth_dion",
            Algorithm::ExactPolar => "exact_polar",
            Algorithm::PolyakDion => "polyak_dion",
        }
    }
}

/// What gets stored as the warm-start right factor after a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// `V ← orth(V̄)` for every algorithm.
    #[default]
    Orthonormalized,
    /// `V ← V̄` as produced by the normalization (column-normalized for Dion).
    Raw,
}

#[derive(Debug, Clone)]
pub struct PolyakMomentum {
    pub mu: f64,
    pub buffer: Mat,
}

#[derive(Debug, Clone)]
pub struct LayerOptState {
    pub x: Mat,
    pub residual: Mat,
    /// Warm-start right factor, `n × rank`.
    pub v: Mat,
    pub rank: usize,
    pub eta: f64,
    pub beta: f64,
    pub momentum: Option<PolyakMomentum>,
    pub warm_start: WarmStart,
    pub diagnostics: DiagnosticsMode,
    prev_out_grad: Option<Mat>,
    rng: SeededRng,
}

impl LayerOptState {
    /// Fresh state with zero residual and a seeded random orthonormal `V`.
    pub fn new(x: Mat, rank: usize, eta: f64, beta: f64, seed: u64) -> Result<Self> {
        validate(&x)?;
        let (m, n) = x.shape();
        if rank == 0 || rank > m.min(n) {
            return Err(Error::range("rank", rank, 1, m.min(n)));
        }
        let mut rng = rng::seeded(seed);
        let v = rng::orthonormal(n, rank, &mut rng);
        let state = Self {
            residual: Mat::zeros(m, n),
            x,
            v,
            rank,
            eta,
            beta,
            momentum: None,
            warm_start: WarmStart::default(),
            diagnostics: DiagnosticsMode::default(),
            prev_out_grad: None,
            rng,
        };
        state.validate()?;
        Ok(state)
    }

    /// Enables explicit Polyak momentum with a zero buffer.
    pub fn with_momentum(mut self, mu: f64) -> Result<Self> {
        self.momentum = Some(PolyakMomentum {
            mu,
            buffer: Mat::zeros(self.x.nrows(), self.x.ncols()),
        });
        self.validate()?;
        Ok(self)
    }

    pub fn with_warm_start(mut self, warm_start: WarmStart) -> Self {
        self.warm_start = warm_start;
        self
    }

    pub fn with_diagnostics(mut self, mode: DiagnosticsMode) -> Self {
        self.diagnostics = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.x.shape();
        if self.rank == 0 || self.rank > m.min(n) {
            return Err(Error::range("rank", self.rank, 1, m.min(n)));
        }
        if self.residual.shape() != (m, n) {
            return Err(Error::Shape(format!(
                "residual {:?} vs parameter {:?}",
                self.residual.shape(),
                (m, n)
            )));
        }
        if self.v.shape() != (n, self.rank) {
            return Err(Error::Shape(format!(
                "warm-start V is {:?}, expected {:?}",
                self.v.shape(),
                (n, self.rank)
            )));
        }
        validate(&self.residual)?;
        if self.warm_start == WarmStart::Orthonormalized {
            check_orthonormal(&self.v, TOL_ORTHO)?;
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("eta", format!("{} must be positive", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("beta", format!("{} not in [0,1]", self.beta)));
        }
        if let Some(p) = &self.momentum {
            if !(0.0..1.0).contains(&p.mu) {
                return Err(Error::config("mu", format!("{} not in [0,1)", p.mu)));
            }
            if p.buffer.shape() != (m, n) {
                return Err(Error::Shape("momentum buffer shape".into()));
            }
        }
        Ok(())
    }

    /// Changes the working rank, truncating or padding `V`.
    pub fn set_rank(&mut self, r_new: usize) -> Result<()> {
        let (m, n) = self.x.shape();
        if r_new == 0 || r_new > m.min(n) {
            return Err(Error::range("rank", r_new, 1, m.min(n)));
        }
        if r_new != self.rank {
            self.v = crate::adarank::resize_one(&self.v, r_new, &mut self.rng);
            self.rank = r_new;
        }
        Ok(())
    }
}

/// Result of one step. `buffer`, `left`, `w` and `right` expose the
/// intermediate factors `M`, `U`, `W` and `V̄`.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub new_state: LayerOptState,
    pub direction: Mat,
    pub diagnostics: StepDiagnostics,
    pub buffer: Mat,
    pub left: Mat,
    pub w: Mat,
    pub right: Mat,
}

#[derive(Clone, Copy)]
enum RightNorm {
    ColNorm,
    Qr,
}

fn check_gradient(state: &LayerOptState, g: &Mat) -> Result<()> {
    if g.shape() != state.x.shape() {
        return Err(Error::Shape(format!(
            "gradient {:?} vs parameter {:?}",
            g.shape(),
            state.x.shape()
        )));
    }
    validate(g)
}

fn factorized_step(
    state: &LayerOptState,
    g: &Mat,
    m: Mat,
    norm: RightNorm,
    keep_residual: bool,
) -> Result<StepOutcome> {
    let mut next = state.clone();
    let r = state.rank;

    let power = power_iter_half(&m, &state.v, &mut next.rng)?;
    let mut degenerate = power.degenerate;
    let vbar = match norm {
        RightNorm::ColNorm => colnorm(&power.w),
        RightNorm::Qr => {
            let o = orth(&power.w, &mut next.rng);
            degenerate |= o.degenerate;
            o.q
        }
    };
    let u = power.u;
    let direction = &u * vbar.transpose();

    next.x -= state.eta * &direction;
    next.residual = if keep_residual {
        state.beta * (&m - &u * (u.transpose() * &m))
    } else {
        Mat::zeros(m.nrows(), m.ncols())
    };
    next.v = match state.warm_start {
        WarmStart::Orthonormalized => orth(&vbar, &mut next.rng).q,
        WarmStart::Raw => vbar.clone(),
    };

    let (diagnostics, out_grad) = measure_step(&StepArtifacts {
        m: &m,
        g,
        residual_in: &state.residual,
        u: &u,
        w: &power.w,
        vbar: &vbar,
        direction: &direction,
        rank: r,
        prev_out_grad: state.prev_out_grad.as_ref(),
        degenerate,
        mode: state.diagnostics,
        m_svd: None,
    })?;
    next.prev_out_grad = Some(out_grad);

    Ok(StepOutcome {
        new_state: next,
        direction,
        diagnostics,
        buffer: m,
        left: u,
        w: power.w,
        right: vbar,
    })
}

/// Stripped Dion: column-normalized right factor.
pub fn dion_step(state: &LayerOptState, g: &Mat) -> Result<StepOutcome> {
    check_gradient(state, g)?;
    let m = g + &state.residual;
    factorized_step(state, g, m, RightNorm::ColNorm, true)
}

/// Orth-Dion: QR-orthonormalized right factor, so `D̂` is a partial isometry.
pub fn orth_dion_step(state: &LayerOptState, g: &Mat) -> Result<StepOutcome> {
    check_gradient(state, g)?;
    let m = g + &state.residual;
    factorized_step(state, g, m, RightNorm::Qr, true)
}

/// Baseline that applies the exact rank-`r` polar factor of the buffer.
pub fn exact_polar_step(state: &LayerOptState, g: &Mat) -> Result<StepOutcome> {
    check_gradient(state, g)?;
    let r = state.rank;
    let m = g + &state.residual;
    let (direction, svd) = polar_with_factors(&m, r)?;
    let u = svd.u;
    let w = m.transpose() * &u;

    let mut next = state.clone();
    next.x -= state.eta * &direction;
    next.residual = state.beta * (&m - &u * (u.transpose() * &m));
    next.v = svd.v.clone();

    let (diagnostics, out_grad) = measure_step(&StepArtifacts {
        m: &m,
        g,
        residual_in: &state.residual,
        u: &u,
        w: &w,
        vbar: &svd.v,
        direction: &direction,
        rank: r,
        prev_out_grad: state.prev_out_grad.as_ref(),
        degenerate: false,
        mode: state.diagnostics,
        m_svd: None,
    })?;
    next.prev_out_grad = Some(out_grad);

    Ok(StepOutcome {
        new_state: next,
        direction,
        diagnostics,
        buffer: m,
        left: u,
        w,
        right: svd.v,
    })
}

/// Explicit momentum `P ← μP + G` followed by an Orth-Dion step on `P` with
/// no error feedback.
pub fn polyak_dion_step(state: &LayerOptState, g: &Mat) -> Result<StepOutcome> {
    check_gradient(state, g)?;
    let Some(mom) = &state.momentum else {
        return Err(Error::config("mu", "polyak_dion needs a momentum buffer"));
    };
    let p = mom.mu * &mom.buffer + g;
    let mut out = factorized_step(state, g, p.clone(), RightNorm::Qr, false)?;
    if let Some(next_mom) = out.new_state.momentum.as_mut() {
        next_mom.buffer = p;
    }
    Ok(out)
}

/// Dispatches to the step function for `alg`.
pub fn step(alg: Algorithm, state: &LayerOptState, g: &Mat) -> Result<StepOutcome> {
    match alg {
        Algorithm::Dion => dion_step(state, g),
        Algorithm::OrthDion => orth_dion_step(state, g),
        Algorithm::ExactPolar => exact_polar_step(state, g),
        Algorithm::PolyakDion => polyak_dion_step(state, g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kyfan_norm, principal_angle_max};
    use nalgebra::DVector;

    fn diag(vals: &[f64]) -> Mat {
        Mat::from_diagonal(&DVector::from_row_slice(vals))
    }

    fn state_with_v(x: Mat, v: Mat, eta: f64, beta: f64) -> LayerOptState {
        let mut s = LayerOptState::new(x, v.ncols(), eta, beta, 0).unwrap();
        s.v = v;
        s
    }

    #[test]
    fn diagonal_case_both_normalizations() {
        for f in [dion_step, orth_dion_step] {
            let s = state_with_v(Mat::zeros(2, 2), Mat::identity(2, 2), 1.0, 1.0);
            let out = f(&s, &diag(&[3.0, 2.0])).unwrap();
            assert_eq!(out.left, Mat::identity(2, 2));
            assert_eq!(out.w, diag(&[3.0, 2.0]));
            assert_eq!(out.right, Mat::identity(2, 2));
            assert_eq!(out.direction, Mat::identity(2, 2));
            assert_eq!(out.new_state.x, -Mat::identity(2, 2));
            assert_eq!(out.new_state.residual, Mat::zeros(2, 2));
            assert!((out.diagnostics.nu - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_gradient_is_captured_exactly() {
        let u = DVector::from_row_slice(&[0.6, 0.8, 0.0]);
        let v = DVector::from_row_slice(&[0.0, 1.0, 0.0, 0.0]);
        let g = 5.0 * &u * v.transpose();
        let s = state_with_v(Mat::zeros(3, 4), Mat::from_columns(std::slice::from_ref(&v)), 0.1, 1.0);
        let out = dion_step(&s, &g).unwrap();
        let expect = &u * v.transpose();
        assert!((&out.direction - &expect).abs().max() < 1e-15);
        assert!(out.new_state.residual.abs().max() < 1e-15);
        assert!(out.diagnostics.delta.unwrap().abs() < 1e-12);
    }

    /// Two unit columns at angle θ: Gram eigenvalues 1 ± cos θ, so
    /// σ_1(V̄) = √(1 + cos θ).
    #[test]
    fn correlated_columns_inflate_nu() {
        let theta = 10f64.to_radians();
        // M with Mᵀe1 = a, Mᵀe2 = 0.5·b, where a, b are unit vectors at angle θ
        let a = DVector::from_row_slice(&[1.0, 0.0, 0.0]);
        let b = DVector::from_row_slice(&[theta.cos(), theta.sin(), 0.0]);
        let mut m = Mat::zeros(3, 3);
        m.set_row(0, &a.transpose());
        m.set_row(1, &(0.5 * b.transpose()));
        // V_prev = [v1, b] with v1 ⟂ b makes M·V_prev upper triangular with a
        // positive diagonal, so U = [e1, e2] and W = [a, 0.5·b].
        let v1 = DVector::from_row_slice(&[theta.sin(), -theta.cos(), 0.0]);
        let v_prev = Mat::from_columns(&[v1, b.clone()]);
        let s = state_with_v(Mat::zeros(3, 3), v_prev, 0.1, 1.0);

        let dion = dion_step(&s, &m).unwrap();
        let oracle = (1.0 + theta.cos()).sqrt();
        assert!((dion.diagnostics.nu - oracle).abs() < 1e-10);
        assert!((dion.diagnostics.nu - 1.4088).abs() < 1e-4);
        // direct inner-product oracle for the (negative) defect
        let direct = kyfan_norm(&m, 2).unwrap() - dion.buffer.dot(&dion.direction);
        assert!((dion.diagnostics.delta.unwrap() - direct).abs() < 1e-12);
        assert!(direct < 0.0);

        let od = orth_dion_step(&s, &m).unwrap();
        assert!((od.diagnostics.nu - 1.0).abs() < 1e-10);
        assert!(principal_angle_max(&od.right, &orth(&dion.right, &mut rng::seeded(0)).q).unwrap() < 1e-8);
        assert!(od.diagnostics.delta.unwrap() >= -1e-8);
    }

    #[test]
    fn exact_polar_diagonal() {
        let s = LayerOptState::new(Mat::zeros(3, 3), 2, 1.0, 0.5, 1).unwrap();
        let out = exact_polar_step(&s, &diag(&[3.0, 2.0, 1.0])).unwrap();
        assert!((&out.direction - diag(&[1.0, 1.0, 0.0])).abs().max() < 1e-14);
        assert!((out.buffer.dot(&out.direction) - 5.0).abs() < 1e-13);
        assert!(out.diagnostics.delta.unwrap().abs() < 1e-12);
        // residual keeps β times the dropped direction
        assert!((&out.new_state.residual - diag(&[0.0, 0.0, 0.5])).abs().max() < 1e-14);
    }

    #[test]
    fn exact_polar_full_rank_leaves_no_residual() {
        let g = rng::gaussian(4, 3, &mut rng::seeded(6));
        let s = LayerOptState::new(Mat::zeros(4, 3), 3, 1.0, 0.7, 1).unwrap();
        let out = exact_polar_step(&s, &g).unwrap();
        assert!(out.new_state.residual.abs().max() < 1e-13);
    }

    #[test]
    fn polyak_accumulates_geometrically() {
        let g = rng::gaussian(5, 4, &mut rng::seeded(2));
        let mut s = LayerOptState::new(Mat::zeros(5, 4), 2, 0.01, 1.0, 3)
            .unwrap()
            .with_momentum(0.5)
            .unwrap();
        for _ in 0..3 {
            let out = polyak_dion_step(&s, &g).unwrap();
            assert_eq!(out.new_state.residual, Mat::zeros(5, 4));
            assert_eq!(out.diagnostics.r_ratio, 0.0);
            s = out.new_state;
        }
        let p = &s.momentum.as_ref().unwrap().buffer;
        assert!((p - 1.75 * &g).abs().max() < 1e-14);
    }

    #[test]
    fn polyak_without_momentum_is_config_error() {
        let s = LayerOptState::new(Mat::zeros(3, 3), 1, 0.1, 1.0, 0).unwrap();
        assert!(matches!(
            polyak_dion_step(&s, &Mat::zeros(3, 3)),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn shape_and_state_validation() {
        let s = LayerOptState::new(Mat::zeros(3, 4), 2, 0.1, 1.0, 0).unwrap();
        assert!(matches!(dion_step(&s, &Mat::zeros(4, 3)), Err(Error::Shape(_))));
        assert!(LayerOptState::new(Mat::zeros(3, 4), 4, 0.1, 1.0, 0).is_err());
        assert!(LayerOptState::new(Mat::zeros(3, 4), 2, 0.0, 1.0, 0).is_err());
        assert!(LayerOptState::new(Mat::zeros(3, 4), 2, 0.1, 1.5, 0).is_err());
        assert!(s.clone().with_momentum(1.0).is_err());
    }

    #[test]
    fn zero_gradient_flags_degenerate_but_steps() {
        let s = LayerOptState::new(Mat::zeros(4, 4), 2, 0.1, 1.0, 0).unwrap();
        let out = orth_dion_step(&s, &Mat::zeros(4, 4)).unwrap();
        assert!(out.diagnostics.degenerate);
        assert!(out.new_state.x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn set_rank_resizes_v() {
        let mut s = LayerOptState::new(Mat::zeros(6, 5), 2, 0.1, 1.0, 0).unwrap();
        let v0 = s.v.clone();
        s.set_rank(4).unwrap();
        assert_eq!(s.v.shape(), (5, 4));
        assert_eq!(s.v.columns(0, 2).into_owned(), v0);
        s.validate().unwrap();
        assert!(s.set_rank(6).is_err());
    }
}
