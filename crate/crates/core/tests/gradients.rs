//! Backprop against central differences computed here from `eval` alone.

use ctcs_hrrl::neural::Approximator;
use proptest::prelude::*;

fn objective(net: &Approximator, x: &[f64], w: &[f64]) -> f64 {
    net.eval(x).unwrap().iter().zip(w).map(|(o, u)| o * u).sum()
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Fourth-order central difference. The wider step keeps rounding noise far
/// below the tolerance even for gradients near 1e-5.
fn diff(f: impl Fn(f64) -> f64) -> f64 {
    let h = 1e-3;
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

fn check(net: &Approximator, x: &[f64], w: &[f64], params: impl Iterator<Item = usize>, tol: f64) {
    let trace = net.trace(x).unwrap();
    let gp = net.grad_params(&trace, w).unwrap();
    let gx = net.input_gradient(&trace, w).unwrap();
    for i in params {
        let n = diff(|d| {
            let mut p = net.clone();
            p.params_mut()[i] += d;
            objective(&p, x, w)
        });
        assert!(rel(gp[i], n) <= tol, "param {i}: {} vs {n}", gp[i]);
    }
    for i in 0..x.len() {
        let n = diff(|d| {
            let mut xp = x.to_vec();
            xp[i] += d;
            objective(net, &xp, w)
        });
        assert!(rel(gx[i], n) <= tol, "input {i}: {} vs {n}", gx[i]);
    }
}

#[test]
fn full_size_deviation_network() {
    let net = Approximator::standard(6, 1, 0.0, 21);
    let x = [0.3, -0.9, 0.1, 0.05, 0.4, 0.6];
    let stride = net.num_params() / 97;
    check(&net, &x, &[1.0], (0..net.num_params()).step_by(stride), 1e-4);
}

#[test]
fn full_size_transition_network() {
    let net = Approximator::standard(12, 6, 0.0, 22);
    let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
    let w = [0.5, -1.0, 0.25, 0.0, 2.0, -0.75];
    let stride = net.num_params() / 101;
    check(&net, &x, &w, (0..net.num_params()).step_by(stride), 1e-4);
}

#[test]
fn scalar_input_gradient_agrees_with_general_path() {
    let net = Approximator::standard(6, 1, 0.15, 5);
    let x = [0.1, 0.2, -0.3, 0.4, 0.5, 0.6];
    let (v, g) = net.value_and_grad_input(&x).unwrap();
    let trace = net.trace(&x).unwrap();
    assert_eq!(v, trace.output[0]);
    assert_eq!(g, net.input_gradient(&trace, &[1.0]).unwrap());
}

fn toy_net() -> impl Strategy<Value = (Vec<usize>, u64)> {
    (prop::collection::vec(1usize..6, 2..5), any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn toy_networks_match_finite_differences((sizes, seed) in toy_net(), shift in -0.5..0.5f64) {
        let mut net = Approximator::new(&sizes, 0.0, seed);
        net.params_mut().iter_mut().enumerate().for_each(|(i, p)| *p += shift * ((i as f64) * 0.7).cos());
        let x: Vec<f64> = (0..sizes[0]).map(|i| ((i as f64) + shift).sin()).collect();
        let w: Vec<f64> = (0..*sizes.last().unwrap()).map(|i| 1.0 - 0.3 * i as f64).collect();
        check(&net, &x, &w, 0..net.num_params(), 1e-6);
    }
}
