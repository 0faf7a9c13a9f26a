//! Synthetic problems with a controlled gradient spectrum.
//!
//! * [`PlantedQuadratic`]: `f(X) = ½‖A_L (X − X*) A_R‖_F²` with diagonal
//!   `A_L`, `A_R`. The start point is chosen so that `∇f(X_0)` has exactly
//!   the requested singular values. Its smoothness constants are known in
//!   closed form: `L_F = max(A_L)² · max(A_R)²`, and `L_r = r · L_F` bounds
//!   the curvature in the Ky Fan dual norm because `‖Δ‖_F ≤ √r ‖Δ‖_(r)*` for
//!   rank-`r` `Δ`.
//! * [`GradientStream`]: `G_t = P diag(s) Qᵀ + ξ_t` with `ξ_t` orthogonal to
//!   the planted column space, realizing the coherent / stochastic /
//!   anti-correlated error-feedback regimes.
//!
//! These are test instruments, not models of real training.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectrum, Mat};
use crate::rng::{self, derive_seed, SeededRng};

/// Fraction of fresh noise mixed into the anti-correlated regime.
pub const ANTICORRELATED_FRESH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    PlantedQuadratic,
    GradientStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Coherent,
    #[default]
    Stochastic,
    Anticorrelated,
}

fn default_curvature() -> [f64; 2] {
    [0.5, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub m: usize,
    pub n: usize,
    /// Planted singular values, non-increasing.
    pub target_spectrum: Vec<f64>,
    /// Rank `r` at which the spectral gap is asserted.
    pub gap_index: usize,
    /// Upper bound `τ` on `σ_{r+1}(G_t)`.
    #[serde(default)]
    pub tail: Option<f64>,
    /// Required gap `Δ_gap`; defaults to the planted gap.
    #[serde(default)]
    pub delta_gap: Option<f64>,
    /// Lower bound `σ_min` on `σ_r(G_t)`.
    #[serde(default)]
    pub sigma_min: Option<f64>,
    /// Bound `G_F` on `‖G_t‖_F`.
    #[serde(default)]
    pub grad_bound: Option<f64>,
    #[serde(default)]
    pub regime: Regime,
    #[serde(default)]
    pub noise_scale: f64,
    /// Range for the diagonal entries of `A_L` and `A_R` (quadratic only).
    #[serde(default = "default_curvature")]
    pub curvature: [f64; 2],
    #[serde(default)]
    pub seed: u64,
}

impl ProblemSpec {
    pub fn planted_quadratic(m: usize, n: usize, spectrum: Vec<f64>, gap_index: usize, seed: u64) -> Self {
        Self {
            kind: ProblemKind::PlantedQuadratic,
            m,
            n,
            target_spectrum: spectrum,
            gap_index,
            tail: None,
            delta_gap: None,
            sigma_min: None,
            grad_bound: None,
            regime: Regime::default(),
            noise_scale: 0.0,
            curvature: default_curvature(),
            seed,
        }
    }

    pub fn gradient_stream(
        m: usize,
        n: usize,
        spectrum: Vec<f64>,
        regime: Regime,
        noise_scale: f64,
        seed: u64,
    ) -> Self {
        let gap_index = spectrum.len();
        Self {
            kind: ProblemKind::GradientStream,
            regime,
            noise_scale,
            ..Self::planted_quadratic(m, n, spectrum, gap_index, seed)
        }
    }

    fn spectrum_at(&self, i: usize) -> f64 {
        self.target_spectrum.get(i).copied().unwrap_or(0.0)
    }

    /// `spectrum[r−1] − spectrum[r]` at `r = gap_index`.
    pub fn planted_gap(&self) -> f64 {
        self.spectrum_at(self.gap_index - 1) - self.spectrum_at(self.gap_index)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::config("problem.m", "dimensions must be positive"));
        }
        let max = self.m.min(self.n);
        let s = &self.target_spectrum;
        if s.is_empty() || s.len() > max {
            return Err(Error::config(
                "problem.target_spectrum",
                format!("length {} must be in [1, {max}]", s.len()),
            ));
        }
        if s.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::config("problem.target_spectrum", "entries must be finite and >= 0"));
        }
        if s.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::config("problem.target_spectrum", "must be non-increasing"));
        }
        if self.gap_index == 0 || self.gap_index > max {
            return Err(Error::config(
                "problem.gap_index",
                format!("{} must be in [1, {max}]", self.gap_index),
            ));
        }
        if !(self.planted_gap() > 0.0) {
            return Err(Error::config("problem.gap_index", "no spectral gap at gap_index"));
        }
        if let Some(tau) = self.tail {
            if !(tau >= self.spectrum_at(self.gap_index)) {
                return Err(Error::config("problem.tail", "tail must be >= spectrum[gap_index]"));
            }
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::config("problem.noise_scale", "must be finite and >= 0"));
        }
        let [lo, hi] = self.curvature;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::config("problem.curvature", "need 0 < lo <= hi"));
        }
        Ok(())
    }
}

/// Closed-form smoothness constants for a planted quadratic at rank `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessCertificate {
    pub l_r: f64,
    pub l_f: f64,
    pub derivation: String,
}

#[derive(Debug, Clone)]
pub struct PlantedQuadratic {
    left: DVector<f64>,
    right: DVector<f64>,
    x_star: Mat,
    x0: Mat,
    l_f: f64,
}

fn planted_frame(spec: &ProblemSpec, rng: &mut SeededRng) -> (Mat, Mat) {
    let k = spec.target_spectrum.len();
    let p = rng::orthonormal(spec.m, k, rng);
    let q = rng::orthonormal(spec.n, k, rng);
    (p, q)
}

fn planted_signal(spec: &ProblemSpec, p: &Mat, q: &Mat) -> Mat {
    let s = DVector::from_row_slice(&spec.target_spectrum);
    let mut ps = p.clone();
    for (j, mut col) in ps.column_iter_mut().enumerate() {
        col *= s[j];
    }
    ps * q.transpose()
}

impl PlantedQuadratic {
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        spec.validate()?;
        if spec.kind != ProblemKind::PlantedQuadratic {
            return Err(Error::config("problem.kind", "expected planted_quadratic"));
        }
        let mut rng = rng::seeded(derive_seed(spec.seed, 0x9a11));
        let [lo, hi] = spec.curvature;
        let mut draw = |len: usize| {
            DVector::from_fn(len, |_, _| {
                if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            })
        };
        let left = draw(spec.m);
        let right = draw(spec.n);
        let x_star = rng::gaussian(spec.m, spec.n, &mut rng);
        let (p, q) = planted_frame(spec, &mut rng);
        let g0 = planted_signal(spec, &p, &q);
        let x0 = Mat::from_fn(spec.m, spec.n, |i, j| {
            x_star[(i, j)] + g0[(i, j)] / (left[i] * left[i] * right[j] * right[j])
        });
        let l_f = left.max().powi(2) * right.max().powi(2);
        Ok(Self {
            left,
            right,
            x_star,
            x0,
            l_f,
        })
    }

    /// Identity-curvature quadratic `½‖X − X*‖_F²` around a given optimum.
    pub fn isotropic(x_star: Mat, x0: Mat) -> Self {
        let (m, n) = x_star.shape();
        Self {
            left: DVector::from_element(m, 1.0),
            right: DVector::from_element(n, 1.0),
            x_star,
            x0,
            l_f: 1.0,
        }
    }

    pub fn start(&self) -> &Mat {
        &self.x0
    }

    pub fn optimum(&self) -> &Mat {
        &self.x_star
    }

    fn weight(&self, i: usize, j: usize) -> f64 {
        self.left[i] * self.right[j]
    }

    pub fn value(&self, x: &Mat) -> f64 {
        let mut acc = 0.0;
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                let e = self.weight(i, j) * (x[(i, j)] - self.x_star[(i, j)]);
                acc += e * e;
            }
        }
        0.5 * acc
    }

    pub fn gradient(&self, x: &Mat) -> Mat {
        Mat::from_fn(x.nrows(), x.ncols(), |i, j| {
            self.weight(i, j).powi(2) * (x[(i, j)] - self.x_star[(i, j)])
        })
    }

    /// Largest Hessian eigenvalue.
    pub fn l_f(&self) -> f64 {
        self.l_f
    }

    pub fn certificate(&self, r: usize) -> SmoothnessCertificate {
        SmoothnessCertificate {
            l_r: r as f64 * self.l_f,
            l_f: self.l_f,
            derivation: format!(
                "quadratic: L_F = max(A_L)^2 max(A_R)^2 = {:.6e}; L_r = r L_F with r = {r}",
                self.l_f
            ),
        }
    }
}

/// Seeded stream of synthetic gradients.
#[derive(Debug, Clone)]
pub struct GradientStream {
    p: Mat,
    signal: Mat,
    regime: Regime,
    noise_scale: f64,
    fixed: Mat,
    prev: Option<Mat>,
    rng: SeededRng,
}

impl GradientStream {
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        spec.validate()?;
        if spec.kind != ProblemKind::GradientStream {
            return Err(Error::config("problem.kind", "expected gradient_stream"));
        }
        let mut frame_rng = rng::seeded(derive_seed(spec.seed, 0x57e4));
        let (p, q) = planted_frame(spec, &mut frame_rng);
        let signal = planted_signal(spec, &p, &q);
        let mut rng = rng::seeded(derive_seed(spec.seed, 0x4015e));
        let mut stream = Self {
            p,
            signal,
            regime: spec.regime,
            noise_scale: spec.noise_scale,
            fixed: Mat::zeros(spec.m, spec.n),
            prev: None,
            rng: rng.clone(),
        };
        stream.fixed = stream.out_of_subspace(spec.noise_scale, &mut rng);
        stream.rng = rng;
        Ok(stream)
    }

    /// Orthonormal basis of the planted column space.
    pub fn planted_basis(&self) -> &Mat {
        &self.p
    }

    /// Noise-free part `P diag(s) Qᵀ`.
    pub fn signal(&self) -> &Mat {
        &self.signal
    }

    /// `(I − PPᵀ) Z` rescaled to Frobenius norm `scale`.
    fn out_of_subspace(&self, scale: f64, rng: &mut SeededRng) -> Mat {
        let (m, n) = self.signal.shape();
        if scale == 0.0 {
            return Mat::zeros(m, n);
        }
        let z = rng::gaussian(m, n, rng);
        let proj = &z - &self.p * (self.p.transpose() * &z);
        let norm = proj.norm();
        proj * (scale / norm)
    }

    /// Noise component of the next gradient.
    fn next_noise(&mut self) -> Mat {
        let mut rng = self.rng.clone();
        let xi = match self.regime {
            Regime::Coherent => self.fixed.clone(),
            Regime::Stochastic => self.out_of_subspace(self.noise_scale, &mut rng),
            Regime::Anticorrelated => match &self.prev {
                None => self.out_of_subspace(self.noise_scale, &mut rng),
                Some(prev) => {
                    let fresh =
                        self.out_of_subspace(ANTICORRELATED_FRESH * self.noise_scale, &mut rng);
                    let raw = fresh - prev;
                    let norm = raw.norm();
                    if norm > 0.0 {
                        raw * (self.noise_scale / norm)
                    } else {
                        raw
                    }
                }
            },
        };
        self.rng = rng;
        self.prev = Some(xi.clone());
        xi
    }

    pub fn next_gradient(&mut self) -> Mat {
        let xi = self.next_noise();
        &self.signal + xi
    }
}

impl Iterator for GradientStream {
    type Item = Mat;

    fn next(&mut self) -> Option<Mat> {
        Some(self.next_gradient())
    }
}

/// Per-step outcome of [`verify_assumptions`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub step: usize,
    pub sigma_r: f64,
    pub sigma_r1: f64,
    pub gap: f64,
    pub gap_ok: bool,
    pub tail_ok: bool,
    pub grad_norm: f64,
    pub bound_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub rank: usize,
    pub steps: Vec<AssumptionCheck>,
    pub min_gap: f64,
    pub max_tail: f64,
    pub max_grad_norm: f64,
}

impl AssumptionReport {
    pub fn all_gap_ok(&self) -> bool {
        self.steps.iter().all(|s| s.gap_ok)
    }

    pub fn all_tail_ok(&self) -> bool {
        self.steps.iter().all(|s| s.tail_ok)
    }

    pub fn all_bound_ok(&self) -> bool {
        self.steps.iter().all(|s| s.bound_ok)
    }
}

/// Checks the gap, tail and gradient-bound assumptions at `r = gap_index`
/// along a recorded gradient trajectory. Failures are reported, not raised.
pub fn verify_assumptions(spec: &ProblemSpec, gradients: &[Mat]) -> Result<AssumptionReport> {
    spec.validate()?;
    let r = spec.gap_index;
    let required_gap = spec.delta_gap.unwrap_or_else(|| spec.planted_gap());
    let mut steps = Vec::with_capacity(gradients.len());
    for (t, g) in gradients.iter().enumerate() {
        let sv = spectrum(g)?;
        let sigma_r = sv.sigma(r - 1);
        let sigma_r1 = sv.sigma(r);
        let gap = sigma_r - sigma_r1;
        let gap_ok = gap >= required_gap * (1.0 - 1e-9)
            && spec.sigma_min.is_none_or(|smin| sigma_r >= smin);
        let tail_ok = spec
            .tail
            .is_none_or(|tau| sigma_r1 <= tau * (1.0 + 1e-12));
        let grad_norm = g.norm();
        let bound_ok = spec.grad_bound.is_none_or(|gf| grad_norm <= gf);
        steps.push(AssumptionCheck {
            step: t,
            sigma_r,
            sigma_r1,
            gap,
            gap_ok,
            tail_ok,
            grad_norm,
            bound_ok,
        });
    }
    let min_gap = steps.iter().map(|s| s.gap).fold(f64::INFINITY, f64::min);
    let max_tail = steps.iter().map(|s| s.sigma_r1).fold(0.0, f64::max);
    let max_grad_norm = steps.iter().map(|s| s.grad_norm).fold(0.0, f64::max);
    Ok(AssumptionReport {
        rank: r,
        steps,
        min_gap,
        max_tail,
        max_grad_norm,
    })
}
