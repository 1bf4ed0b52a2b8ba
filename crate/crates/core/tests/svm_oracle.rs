mod common;

use common::*;
use nalgebra::DMatrix;
use xmorph::svm::{solve_binary_dual, train_svm, Gamma, SvmConfig};

#[test]
fn xor_is_separated() {
    assert_eq!(xor_accuracy(), 1.0);
}

#[test]
fn duals_match_projected_gradient() {
    let r = svm_dual_oracle(10, 17);
    assert_eq!(r.label_agreement, 1.0, "dual gap {:e}", r.max_dual_gap);
    assert!(r.max_dual_gap <= 1e-3, "dual gap {:e}", r.max_dual_gap);
}

#[test]
fn projected_gradient_oracle_solves_two_points() {
    // Two opposite points: both multipliers equal 1 / (1 - k) when below C.
    let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 1.0]);
    let a = projected_gradient_dual(&k, &[1.0, -1.0], 10.0, 5000);
    for v in &a {
        assert!((v - 1.0 / 0.75).abs() < 1e-9, "{v}");
    }
    let sol = solve_binary_dual(&k, &[1.0, -1.0], 10.0, 1e-6, 10_000);
    assert!((sol.alpha[0] - 1.0 / 0.75).abs() < 1e-6);
    assert!(sol.bias.abs() < 1e-9);
}

#[test]
fn duplicating_training_points_keeps_predictions() {
    let mut rng = rng(8);
    let n = 30;
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x = DMatrix::from_fn(n, 2, |i, j| normal(&mut rng) + if j == 0 { 2.0 * labels[i] as f64 } else { 0.0 });
    let y: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
    let config = SvmConfig {
        gamma: Gamma::Value(0.5),
        kkt_tolerance: 1e-6,
        ..Default::default()
    };
    let once = train_svm(&x, &y, &config).unwrap();
    let xx = DMatrix::from_fn(2 * n, 2, |i, j| x[(i % n, j)]);
    let yy: Vec<String> = (0..2 * n).map(|i| y[i % n].clone()).collect();
    // Each duplicated pair shares one multiplier bounded by 2C, so C is halved.
    let twice = train_svm(&xx, &yy, &SvmConfig { c: config.c / 2.0, ..config }).unwrap();
    let probe = DMatrix::from_fn(200, 2, |_, j| 3.0 * normal(&mut rng) + if j == 0 { 2.0 } else { 0.0 });
    let a = once.decision_values(&probe).unwrap();
    let b = twice.decision_values(&probe).unwrap();
    assert!((&a - &b).amax() < 1e-3, "decision gap {}", (&a - &b).amax());
    assert_eq!(once.predict(&probe).unwrap(), twice.predict(&probe).unwrap());
}
