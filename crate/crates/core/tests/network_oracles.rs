mod common;

use common::*;
use ndarray::Array2;
use rand::Rng;
use sparse_kan::network::{GateValues, GatedKan, KanConfig, KanShape};
use sparse_kan::objective::data_loss_grad;
use sparse_kan::{EdgeKind, GateSample};

#[test]
fn forward_matches_scalar_interpreter() {
    let mut r = rng(11);
    for case in 0..40 {
        let net = random_net(&mut r, case % 2 == 0, case % 3 == 0, case % 4 < 2);
        let x = random_inputs(&mut r, 5, net.shape().input_dim());
        let u_e = noise(&mut r, net.num_edges());
        let u_n = noise(&mut r, net.ngates.as_ref().map_or(0, |b| b.len()));
        let gates = gates_from_noise(&net, &u_e, &u_n);
        let (y, _) = net.forward(x.view(), &gates).unwrap();
        for row in 0..x.nrows() {
            let want = interpret(&net, x.row(row).as_slice().unwrap(), &gates);
            for (c, w) in want.iter().enumerate() {
                let got = y[(row, c)];
                assert!((got - w).abs() <= 1e-12 * (1.0 + w.abs()), "case {case}: {got} vs {w}");
            }
        }
    }
}

#[test]
fn small_sum_network_matches_interpreter_with_open_gates() {
    let mut r = rng(5);
    let net = random_net_with(&mut r, &[2, 3, 1], false, false, false);
    let x = random_inputs(&mut r, 8, 2);
    let gates = GateValues::ones(&net);
    let (y, _) = net.forward(x.view(), &gates).unwrap();
    for row in 0..8 {
        let want = interpret(&net, x.row(row).as_slice().unwrap(), &gates)[0];
        assert!((y[(row, 0)] - want).abs() < 1e-12);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut r = rng(23);
    for case in 0..24 {
        let net = random_net(&mut r, case % 2 == 1, case % 3 != 0, case % 4 >= 2);
        let check = gradient_check(&net, &mut r, 0.3);
        assert!(check.worst_rel < 1e-4, "case {case}: {} over {} params", check.worst_rel, check.params);
    }
}

#[test]
fn closed_fc_gates_reduce_to_the_trunk() {
    let mut r = rng(31);
    for case in 0..20 {
        let mut net = random_net(&mut r, true, case % 2 == 0, case % 3 == 0);
        let kinds = net.edge_kinds();
        for (e, k) in kinds.iter().enumerate() {
            net.egates.logits[e] = if *k == EdgeKind::Fc { -20.0 } else { r.random_range(0.0..3.0) };
        }
        let plain = trunk_only(&net);
        let x = random_inputs(&mut r, 16, net.shape().input_dim());
        let a = net.predict(x.view()).unwrap();
        let b = plain.predict(x.view()).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).abs() <= 1e-12, "case {case}: {p} vs {q}");
        }
    }
}

#[test]
fn half_gates_on_duplicated_edges_halve_spline_gradients() {
    let mut r = rng(3);
    let mut cfg = KanConfig::new(KanShape::new(&[2, 1], false).unwrap());
    cfg.egates_trainable = true;
    let mut net = GatedKan::init(&cfg, &mut r).unwrap();
    let copy = net.edge(0).clone();
    *net.edge_mut(1) = copy;
    let col = random_inputs(&mut r, 6, 1);
    let x = Array2::from_shape_fn((6, 2), |(i, _)| col[(i, 0)]);
    let y = random_inputs(&mut r, 6, 1);

    let grads_at = |g: f64| {
        let gates = GateValues {
            edges: GateSample::from_values(vec![g, g]),
            nodes: None,
        };
        let (pred, cache) = net.forward(x.view(), &gates).unwrap();
        (pred.clone(), net.backward(&cache, data_loss_grad(pred.view(), y.view()).unwrap().view()).unwrap())
    };
    let (p_full, full) = grads_at(1.0);
    let (p_half, half) = grads_at(0.5);
    let single = net.forward(x.view(), &GateValues { edges: GateSample::from_values(vec![1.0, 0.0]), nodes: None }).unwrap().0;
    // two half-open copies of one edge compute the same function as one open copy
    for (a, b) in p_half.iter().zip(single.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
    // with the upstream gradient held fixed, each copy's parameter gradient halves
    let (_, cache) = net.forward(x.view(), &GateValues { edges: GateSample::from_values(vec![0.5, 0.5]), nodes: None }).unwrap();
    let fixed_up = data_loss_grad(p_full.view(), y.view()).unwrap();
    let half_fixed = net.backward(&cache, fixed_up.view()).unwrap();
    for e in 0..2 {
        for (a, b) in full.edge_coeffs(e).iter().zip(half_fixed.edge_coeffs(e)) {
            assert!((a / 2.0 - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        assert!((full.edge_w_b(e) / 2.0 - half_fixed.edge_w_b(e)).abs() < 1e-12);
        assert!((full.edge_w_s(e) / 2.0 - half_fixed.edge_w_s(e)).abs() < 1e-12);
    }
    assert!(half.flat.iter().all(|g| g.is_finite()));
}
