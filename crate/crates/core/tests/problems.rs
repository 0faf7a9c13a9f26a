mod common;

use dion_core::diagnostics::measure_persistence;
use dion_core::linalg::kyfan_norm;
use dion_core::problems::{GradientStream, PlantedQuadratic, ProblemSpec, Regime};
use dion_core::rng::{gaussian, seeded};
use dion_core::Mat;

fn quadratic(seed: u64) -> PlantedQuadratic {
    let spec = ProblemSpec::planted_quadratic(7, 5, vec![3.0, 2.0, 0.5], 2, seed);
    PlantedQuadratic::new(&spec).unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..4 {
        let q = quadratic(seed);
        let x = gaussian(7, 5, &mut seeded(seed + 100));
        let g = q.gradient(&x);
        let h = 1e-5;
        for i in 0..7 {
            for j in 0..5 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[(i, j)] += h;
                xm[(i, j)] -= h;
                let fd = (q.value(&xp) - q.value(&xm)) / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() <= 1e-6 * g[(i, j)].abs().max(1.0));
            }
        }
    }
}

#[test]
fn smoothness_certificate_bounds_hessian() {
    let q = quadratic(3);
    let lf = q.l_f();
    // the Hessian is diagonal in vec(X); probe it with unit matrices
    let zero = Mat::zeros(7, 5);
    let g0 = q.gradient(&zero);
    let mut lambda_max: f64 = 0.0;
    for i in 0..7 {
        for j in 0..5 {
            let mut e = Mat::zeros(7, 5);
            e[(i, j)] = 1.0;
            let he = q.gradient(&e) - &g0;
            lambda_max = lambda_max.max(he[(i, j)]);
            // no off-diagonal coupling
            assert!((he.norm() - he[(i, j)].abs()).abs() < 1e-12);
        }
    }
    assert!((lf - lambda_max).abs() <= 1e-12 * lf);
    for r in [1, 2, 5] {
        let cert = q.certificate(r);
        assert!((cert.l_r - r as f64 * lambda_max).abs() <= 1e-12 * cert.l_r);
        assert_eq!(cert.l_f, lf);
    }
}

#[test]
fn initial_gradient_carries_planted_spectrum() {
    let q = quadratic(9);
    let s = common::singular_values(&q.gradient(q.start()));
    for (got, want) in s.iter().zip([3.0, 2.0, 0.5, 0.0, 0.0]) {
        assert!((got - want).abs() < 1e-10, "{s:?}");
    }
    assert!(q.value(q.optimum()).abs() < 1e-24);
    assert!((kyfan_norm(&q.gradient(q.start()), 2).unwrap() - 5.0).abs() < 1e-10);
}

fn mean_phi(regime: Regime, steps: usize) -> f64 {
    let spec = ProblemSpec::gradient_stream(16, 12, vec![4.0, 2.0], regime, 1.0, 5);
    let mut stream = GradientStream::new(&spec).unwrap();
    let p = stream.planted_basis().clone();
    let out = |g: &Mat| g - &p * (p.transpose() * g);
    let mut prev = out(&stream.next_gradient());
    let mut acc = 0.0;
    for _ in 0..steps {
        let now = out(&stream.next_gradient());
        acc += measure_persistence(&now, &prev);
        prev = now;
    }
    acc / steps as f64
}

#[test]
fn regime_persistence_statistics() {
    let stochastic = mean_phi(Regime::Stochastic, 1000);
    assert!(stochastic.abs() <= 0.1, "{stochastic}");
    let anti = mean_phi(Regime::Anticorrelated, 1000);
    assert!(anti <= -0.9, "{anti}");
    let coherent = mean_phi(Regime::Coherent, 50);
    assert!((coherent - 1.0).abs() <= 1e-8, "{coherent}");
}
