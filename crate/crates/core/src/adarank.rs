//! Adaptive rank selection.
//!
//! The estimator reads the column norms of the power-iteration factor
//! `W = MᵀU` as a proxy spectrum and returns the exponential of their
//! normalized entropy. The policy smooths it with an EMA, applies a buffer
//! multiplier, clips to `[r_min, r_max]` and rounds up to the granularity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_ratio, condition_at_rank, Mat};
use crate::rng::SeededRng;

/// `exp(−Σ p̂_i ln p̂_i)` with `p̂_i ∝ ‖W[:, i]‖₂` and `0 · ln 0 = 0`.
pub fn effective_rank_estimate(w: &Mat) -> Result<f64> {
    let norms: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let total: f64 = norms.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Validation(
            "effective rank needs at least one nonzero finite column".into(),
        ));
    }
    let entropy: f64 = norms
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp().clamp(1.0, w.ncols() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPolicyState {
    pub r_current: usize,
    pub ema: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub r_min: usize,
    pub r_max: usize,
    pub round_to: usize,
}

/// Default buffer multiplier.
pub const DEFAULT_GAMMA: f64 = 1.1;
pub const DEFAULT_ROUND_TO: usize = 8;

impl RankPolicyState {
    /// New policy with the EMA seeded at the starting rank.
    pub fn new(r0: usize, r_min: usize, r_max: usize, alpha: f64, gamma: f64) -> Result<Self> {
        let state = Self {
            r_current: r0,
            ema: r0 as f64,
            alpha,
            gamma,
            r_min,
            r_max,
            round_to: DEFAULT_ROUND_TO,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn with_round_to(mut self, round_to: usize) -> Self {
        self.round_to = round_to;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_min == 0 || self.r_min > self.r_max {
            return Err(Error::config(
                "rank_policy.r_min",
                format!("need 1 <= r_min <= r_max, got {}..{}", self.r_min, self.r_max),
            ));
        }
        if !(self.r_min..=self.r_max).contains(&self.r_current) {
            return Err(Error::config(
                "rank_policy.r_current",
                format!("{} outside [{}, {}]", self.r_current, self.r_min, self.r_max),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("rank_policy.alpha", "must be in (0, 1]"));
        }
        if !(self.gamma >= 1.0) {
            return Err(Error::config("rank_policy.gamma", "must be >= 1"));
        }
        if self.round_to == 0 {
            return Err(Error::config("rank_policy.round_to", "must be positive"));
        }
        if !(self.ema >= 0.0 && self.ema.is_finite()) {
            return Err(Error::config("rank_policy.ema", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One EMA/clip/round step of the rank policy.
pub fn rank_policy_update(state: &RankPolicyState, estimate: f64) -> RankPolicyState {
    let ema = state.alpha * estimate + (1.0 - state.alpha) * state.ema;
    // shave a few ulps so that e.g. 1.1 * 100 does not ceil to 111
    let scaled = state.gamma * ema;
    let target = (scaled - 4.0 * f64::EPSILON * scaled.abs()).ceil().max(0.0) as usize;
    let clipped = target.clamp(state.r_min, state.r_max);
    let rounded = clipped.div_ceil(state.round_to) * state.round_to;
    RankPolicyState {
        r_current: rounded.min(state.r_max),
        ema,
        ..state.clone()
    }
}

/// Truncates or pads `V` (n × r_old) and `U` (m × r_old) to `r_new` columns.
/// Padding appends seeded random directions orthogonalized against the
/// existing columns; existing columns are never modified.
pub fn resize_factors(
    v: &Mat,
    u: &Mat,
    r_new: usize,
    rng: &mut SeededRng,
) -> Result<(Mat, Mat)> {
    let max = v.nrows().min(u.nrows());
    if r_new == 0 || r_new > max {
        return Err(Error::range("r_new", r_new, 1, max));
    }
    if v.ncols() != u.ncols() {
        return Err(Error::Shape(format!(
            "U has {} columns, V has {}",
            u.ncols(),
            v.ncols()
        )));
    }
    Ok((resize_one(v, r_new, rng), resize_one(u, r_new, rng)))
}

pub(crate) fn resize_one(q: &Mat, r_new: usize, rng: &mut SeededRng) -> Mat {
    let r_old = q.ncols();
    if r_new <= r_old {
        return q.columns(0, r_new).into_owned();
    }
    let mut padded = q.clone().resize_horizontally(r_new, 0.0);
    let fresh = crate::rng::gaussian(q.nrows(), r_new - r_old, rng);
    for j in 0..(r_new - r_old) {
        let mut v = fresh.column(j).clone_owned();
        let accepted = r_old + j;
        for _ in 0..2 {
            for i in 0..accepted {
                let c = padded.column(i).dot(&v);
                v.axpy(-c, &padded.column(i), 1.0);
            }
        }
        let n = v.norm();
        padded.set_column(accepted, &(v / n));
    }
    padded
}

/// Largest `r ≤ r_max` with `γ̃_r(M) · (1 + κ_r(G)) < 1`, or `0` if none.
/// Ranks where either spectral quantity is degenerate are skipped.
pub fn critical_rank(m: &Mat, g: &Mat, r_max: usize) -> Result<usize> {
    if m.shape() != g.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", m.shape(), g.shape())));
    }
    let max = m.nrows().min(m.ncols()).saturating_sub(1);
    if r_max == 0 || r_max > max {
        return Err(Error::range("r_max", r_max, 1, max));
    }
    let mut best = 0;
    for r in 1..=r_max {
        let (Ok(gt), Ok(k)) = (spectral_ratio(m, r), condition_at_rank(g, r)) else {
            continue;
        };
        if gt * (1.0 + k) < 1.0 {
            best = r;
        }
    }
    Ok(best)
}
