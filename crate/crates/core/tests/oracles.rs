//! Library results against independently computed values.

use derlab::analysis::inverse_normal_cdf;
use derlab::autodiff::{finite_difference_check, Tape};
use derlab::losses::{sample_loss, sample_loss_and_grad, LossConfig, LossKind, ResidualPower};
use derlab::network::{Activation, Architecture, Parameters};
use ndarray::Array2;

/// 1 → 2 → 4 with tanh, every weight written out by hand.
fn tiny() -> (Parameters, impl Fn(f64) -> [f64; 4]) {
    let w1 = [0.3, -1.2];
    let b1 = [0.1, 0.05];
    let w2 = [[0.5, -0.25, 1.5, 0.75], [-0.6, 0.9, 0.2, -1.1]];
    let b2 = [0.01, -0.02, 0.03, 0.4];
    let mut values = vec![w1[0], w1[1], b1[0], b1[1]];
    for row in &w2 {
        values.extend_from_slice(row);
    }
    values.extend_from_slice(&b2);
    let arch = Architecture::mlp(&[2], Activation::Tanh);
    let params = Parameters::from_values(&arch, values).unwrap();
    let by_hand = move |x: f64| {
        let h0 = (w1[0] * x + b1[0]).tanh();
        let h1 = (w1[1] * x + b1[1]).tanh();
        let mut out = [0.0; 4];
        for (k, o) in out.iter_mut().enumerate() {
            *o = h0 * w2[0][k] + h1 * w2[1][k] + b2[k];
        }
        out
    };
    (params, by_hand)
}

#[test]
fn forward_matches_hand_arithmetic() {
    let (params, by_hand) = tiny();
    let xs = [-3.0, -0.5, 0.0, 0.7, 2.0];
    let batch = params.forward_batch(&xs).unwrap();
    for (row, &x) in xs.iter().enumerate() {
        let want = by_hand(x);
        let plain = params.theta(x);
        let mut tape = Tape::new();
        let nodes = params.forward(&mut tape, x).unwrap();
        for k in 0..4 {
            assert!((plain[k] - want[k]).abs() < 1e-12);
            assert!((tape.value(nodes[k]) - want[k]).abs() < 1e-12);
            assert!((batch.theta[[row, k]] - want[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn relu_forward_matches_hand_arithmetic() {
    let arch = Architecture::mlp(&[1], Activation::Relu);
    let params = Parameters::from_values(&arch, vec![2.0, -1.0, 1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.5]).unwrap();
    assert_eq!(params.theta(0.25), [0.0, 0.0, 0.0, 0.5]);
    assert_eq!(params.theta(1.0), [1.0, 2.0, 3.0, 4.5]);
}

fn loss_configs() -> Vec<LossConfig> {
    vec![
        LossConfig::new(LossKind::DerOriginal, 0.01),
        LossConfig {
            p: ResidualPower::One,
            ..LossConfig::new(LossKind::DerNormalized, 0.05)
        },
        LossConfig::new(LossKind::DerNormalized, 0.05),
        LossConfig::new(LossKind::GaussianAlt, 2.0),
        LossConfig::new(LossKind::NaiveExtension, 0.01),
    ]
}

#[test]
fn loss_gradient_wrt_weights_matches_finite_differences() {
    let arch = Architecture::mlp(&[8, 8], Activation::Tanh);
    for seed in 0..5 {
        let params = Parameters::init(&arch, seed).unwrap();
        for cfg in loss_configs() {
            for (x, y) in [(-1.3, -2.5), (0.4, 1.1), (2.2, 9.0)] {
                let err = finite_difference_check(
                    |t, w| {
                        let theta = params.forward_with(t, w, x).unwrap();
                        sample_loss(t, theta, y, &cfg).unwrap()
                    },
                    params.as_slice(),
                    1e-6,
                )
                .unwrap();
                assert!(err < 1e-5, "{:?} seed {seed} x {x}: {err}", cfg.kind);
            }
        }
    }
}

#[test]
fn batched_backward_agrees_with_tape() {
    let arch = Architecture::mlp(&[6, 5], Activation::Tanh);
    let params = Parameters::init(&arch, 11).unwrap();
    let xs = [-2.0, -0.3, 0.8, 1.9];
    let ys = [-7.5, 0.4, 1.0, 6.2];
    for cfg in loss_configs() {
        let cache = params.forward_batch(&xs).unwrap();
        let mut d_theta = Array2::zeros((xs.len(), 4));
        let mut scratch = Tape::new();
        let mut want = vec![0.0; params.len()];
        for (i, (&x, &y)) in xs.iter().zip(&ys).enumerate() {
            let theta = params.theta(x);
            let (_, g) = sample_loss_and_grad(&mut scratch, theta, y, &cfg).unwrap();
            for k in 0..4 {
                d_theta[[i, k]] = g[k];
            }
            let mut tape = Tape::new();
            let out = params.forward(&mut tape, x).unwrap();
            let loss = sample_loss(&mut tape, out, y, &cfg).unwrap();
            let grad = tape.backward(loss).unwrap();
            for (w, p) in want.iter_mut().zip(&grad.partials[..params.len()]) {
                *w += p;
            }
        }
        let got = params.backward_batch(&cache, &d_theta);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{:?}: {a} vs {b}", cfg.kind);
        }
    }
}

/// Φ(z) by composite Simpson integration of the density from 0.
fn simpson_cdf(z: f64) -> f64 {
    let n = 20_000;
    let h = z / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(0.0) + pdf(z);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h);
    }
    0.5 + s * h / 3.0
}

#[test]
fn normal_quantile_matches_quadrature() {
    for q in [0.001, 0.025, 0.05, 0.2, 0.5, 0.6, 0.9, 0.975, 0.999] {
        let (mut lo, mut hi) = (-8.0, 8.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if simpson_cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let z = inverse_normal_cdf(q).unwrap();
        assert!((z - 0.5 * (lo + hi)).abs() < 1e-9, "q {q}: {z} vs {}", 0.5 * (lo + hi));
    }
}
