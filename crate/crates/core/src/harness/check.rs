//! Quick self-check of core invariants on seeded random instances.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{check_suffix_contraction, measure_nu};
use crate::error::Result;
use crate::linalg::{inner, kyfan_dual_norm, kyfan_norm, orthonormality_defect, Mat};
use crate::optimizer::{step, Algorithm, LayerOptState};
use crate::rng::{derive_seed, gaussian, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Runs the invariant checks for `trials` random instances each.
pub fn run_invariant_suite(seed: u64, trials: usize) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut worst_holder = f64::NEG_INFINITY;
    let mut worst_ortho = 0.0f64;
    let mut worst_orth_nu = 0.0f64;
    let mut min_dion_nu = f64::INFINITY;
    let mut worst_polar = 0.0f64;

    for trial in 0..trials {
        let mut rng = seeded(derive_seed(seed, trial as u64));
        let (m, n, r) = (12, 9, 1 + trial % 5);
        let a = gaussian(m, n, &mut rng);
        let b = gaussian(m, n, &mut rng);
        // ⟨A, B⟩ ≤ ‖A‖_(r) ‖B‖_(r)*
        let lhs = inner(&a, &b);
        let rhs = kyfan_norm(&a, r)? * kyfan_dual_norm(&b, r)?;
        worst_holder = worst_holder.max(lhs - rhs * (1.0 + 1e-12));

        let state = LayerOptState::new(Mat::zeros(m, n), r, 0.1, 1.0, derive_seed(seed, 1000 + trial as u64))?;
        let orth = step(Algorithm::OrthDion, &state, &a)?;
        worst_ortho = worst_ortho
            .max(orthonormality_defect(&orth.left))
            .max(orthonormality_defect(&orth.right));
        worst_orth_nu = worst_orth_nu.max((measure_nu(&orth.direction, r)? - 1.0).abs());

        let dion = step(Algorithm::Dion, &state, &a)?;
        min_dion_nu = min_dion_nu.min(measure_nu(&dion.direction, r)?);

        let polar = step(Algorithm::ExactPolar, &state, &a)?;
        let gap = (inner(&a, &polar.direction) - kyfan_norm(&a, r)?).abs();
        worst_polar = worst_polar.max(gap / kyfan_norm(&a, r)?.max(1.0));
    }

    out.push(result(
        "holder_inequality",
        worst_holder <= 0.0,
        format!("max <A,B> - |A|_(r)|B|_(r)* = {worst_holder:.3e}"),
    ));
    out.push(result(
        "factor_orthonormality",
        worst_ortho <= 1e-10,
        format!("max defect = {worst_ortho:.3e}"),
    ));
    out.push(result(
        "orth_dion_nu_is_one",
        worst_orth_nu <= 1e-8,
        format!("max |nu - 1| = {worst_orth_nu:.3e}"),
    ));
    out.push(result(
        "dion_nu_at_least_one",
        min_dion_nu >= 1.0 - 1e-10,
        format!("min nu = {min_dion_nu:.6}"),
    ));
    out.push(result(
        "exact_polar_attains_kyfan",
        worst_polar <= 1e-10,
        format!("max relative gap = {worst_polar:.3e}"),
    ));

    let suffix = check_suffix_contraction(&[0.5, 0.5, 2.0], 0.9, 1.0)?;
    out.push(result(
        "suffix_checker_reports_violation",
        suffix.first_violation == Some((1, 3)),
        format!("first violation = {:?}", suffix.first_violation),
    ));
    Ok(out)
}
