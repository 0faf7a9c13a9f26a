//! Test-side oracles, independent of the library's SVD path.
#![allow(dead_code)]

use dion_core::Mat;

/// One-sided Jacobi SVD. Returns `(U, σ, V)` with σ sorted descending and
/// `A = U diag(σ) Vᵀ` for the leading `min(m, n)` triplets.
pub fn jacobi_svd(a: &Mat) -> (Mat, Vec<f64>, Mat) {
    let transpose = a.nrows() < a.ncols();
    let work = if transpose { a.transpose() } else { a.clone() };
    let (m, n) = work.shape();
    let mut u = work;
    let mut v = Mat::identity(n, n);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = u.column(p).norm_squared();
                let beta: f64 = u.column(q).norm_squared();
                let gamma: f64 = u.column(p).dot(&u.column(q));
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (u[(i, p)], u[(i, q)]);
                    u[(i, p)] = c * x - s * y;
                    u[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let mut uu = Mat::zeros(m, n);
    let mut vv = Mat::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 {
            uu.set_column(k, &(u.column(j) / norms[j]));
        }
        vv.set_column(k, &v.column(j));
    }
    if transpose {
        (vv, sigma, uu)
    } else {
        (uu, sigma, vv)
    }
}

pub fn singular_values(a: &Mat) -> Vec<f64> {
    jacobi_svd(a).1
}

pub fn kyfan(a: &Mat, r: usize) -> f64 {
    singular_values(a).iter().take(r).sum()
}

pub fn kyfan_dual(a: &Mat, r: usize) -> f64 {
    let s = singular_values(a);
    let nuclear: f64 = s.iter().sum();
    s[0].max(nuclear / r as f64)
}

/// Largest principal angle sine between two orthonormal bases of equal
/// width, `‖(I − U1 U1ᵀ) U2‖_op`. Avoids the cancellation in `√(1 − cos²)`.
pub fn sin_theta_max(u1: &Mat, u2: &Mat) -> f64 {
    let resid = u2 - u1 * (u1.transpose() * u2);
    singular_values(&resid)[0].min(1.0)
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Brute-force suffix-product check in linear space with `f64` products
/// computed left to right. Same ordering convention as the library.
pub fn suffix_oracle(rhos: &[f64], rho_bar: f64, c: f64) -> Option<(usize, usize)> {
    for t in 1..=rhos.len() {
        for s in 0..t {
            let mut lhs = 1.0f64;
            let mut lhs_log = 0.0f64;
            for rho in &rhos[s..t] {
                lhs *= rho;
                lhs_log += rho.ln();
            }
            let rhs_log = c.ln() + (t - s) as f64 * rho_bar.ln();
            // decide in log space only when the linear product is out of range
            let violated = if lhs.is_finite() && lhs > 1e-300 {
                lhs > c * rho_bar.powi((t - s) as i32) * (1.0 + 1e-12)
            } else {
                lhs_log > rhs_log + 1e-12
            };
            if violated {
                return Some((s, t));
            }
        }
    }
    None
}
