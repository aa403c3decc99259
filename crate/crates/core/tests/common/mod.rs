//! Independent oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sparse_kan::gate::GateParams;
use sparse_kan::network::{GateValues, GatedKan, KanConfig, KanShape, NodeKind};
use sparse_kan::objective::{complexity_grad, complexity_loss, data_loss, data_loss_grad, MdlConfig};
use sparse_kan::{EdgeKind, GateBank};

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Recursive Cox-de Boor on an explicit knot vector, half-open spans.
pub fn cox_de_boor(knots: &[f64], m: usize, k: usize, x: f64) -> f64 {
    if k == 0 {
        return if knots[m] <= x && x < knots[m + 1] { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[m + k] - knots[m];
    if d1 != 0.0 {
        v += (x - knots[m]) / d1 * cox_de_boor(knots, m, k - 1, x);
    }
    let d2 = knots[m + k + 1] - knots[m + 1];
    if d2 != 0.0 {
        v += (knots[m + k + 1] - x) / d2 * cox_de_boor(knots, m + 1, k - 1, x);
    }
    v
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// `w_b silu(x) + w_s sum_m c_m B_m(x)`, straight from the definition.
pub fn phi_oracle(net: &GatedKan<f64>, e: usize, x: f64) -> f64 {
    let act = net.edge(e);
    let knots = act.grid.knots();
    let k = act.grid.degree();
    let spline: f64 = act
        .coeffs
        .iter()
        .enumerate()
        .map(|(m, c)| c * cox_de_boor(&knots, m, k, x))
        .sum();
    act.w_b * silu(x) + act.w_s * spline
}

/// Evaluates the network node by node with scalar arithmetic.
/// Sources are enumerated from the widths alone, without the library's index helpers.
pub fn interpret(net: &GatedKan<f64>, input: &[f64], gates: &GateValues<f64>) -> Vec<f64> {
    let shape = net.shape();
    let widths = shape.widths().to_vec();
    let fc = shape.forward_connections();
    let mut layers: Vec<Vec<f64>> = vec![input.to_vec()];
    let mut e = 0;
    let mut hidden = 0;
    for l in 0..widths.len() - 1 {
        let sources: Vec<f64> = if fc {
            layers.iter().flatten().copied().collect()
        } else {
            layers[l].clone()
        };
        let mut next = Vec::new();
        for j in 0..widths[l + 1] {
            let kind = shape.aggregation()[l][j];
            let mut acc = if kind == NodeKind::Sum { 0.0 } else { 1.0 };
            for &s in &sources {
                let g = gates.edges.values[e];
                let p = phi_oracle(net, e, s);
                if kind == NodeKind::Sum {
                    acc += g * p;
                } else {
                    acc *= g * p + 1.0 - g;
                }
                e += 1;
            }
            let is_hidden = l + 1 < widths.len() - 1;
            let zn = match (&gates.nodes, is_hidden) {
                (Some(n), true) => n.values[hidden],
                _ => 1.0,
            };
            if is_hidden {
                hidden += 1;
            }
            next.push(zn * acc);
        }
        layers.push(next);
    }
    layers.pop().unwrap()
}

/// Random widths (depth 1..=3, widths 1..=4), FC flag, aggregation mix and node gates.
pub fn random_net(rng: &mut ChaCha8Rng, fc: bool, ngates: bool, products: bool) -> GatedKan<f64> {
    let depth = rng.random_range(1..=3);
    let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=4)).collect();
    random_net_with(rng, &widths, fc, ngates, products)
}

pub fn random_net_with(
    rng: &mut ChaCha8Rng,
    widths: &[usize],
    fc: bool,
    ngates: bool,
    products: bool,
) -> GatedKan<f64> {
    let aggregation = widths
        .iter()
        .skip(1)
        .map(|&w| {
            (0..w)
                .map(|_| {
                    if products && rng.random_bool(0.4) {
                        NodeKind::Product
                    } else {
                        NodeKind::Sum
                    }
                })
                .collect()
        })
        .collect();
    let shape = KanShape::with_aggregation(widths, aggregation, fc).unwrap();
    let mut cfg = KanConfig::new(shape);
    cfg.egates_trainable = true;
    cfg.ngate_init = if ngates { Some(0.0) } else { None };
    let mut net = GatedKan::init(&cfg, rng).unwrap();
    net.visit_params_mut(|_, p| *p = rng.random_range(-1.5..1.5));
    for e in 0..net.num_edges() {
        let act = net.edge_mut(e);
        act.w_b = rng.random_range(-1.0..1.0);
        act.w_s = rng.random_range(-1.0..1.0);
    }
    net
}

pub fn random_inputs(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.3..1.3))
}

/// Uniform noise kept away from 0 and 1.
pub fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.02..0.98)).collect()
}

pub fn gates_from_noise(net: &GatedKan<f64>, u_e: &[f64], u_n: &[f64]) -> GateValues<f64> {
    GateValues {
        edges: net.egates.sample_gates(u_e).unwrap(),
        nodes: net.ngates.as_ref().map(|b| b.sample_gates(u_n).unwrap()),
    }
}

pub struct GradCheck {
    pub params: usize,
    pub worst_rel: f64,
}

/// Compares every analytic gradient of the total objective against central
/// differences at fixed gate noise. Returns the worst relative error.
pub fn gradient_check(net: &GatedKan<f64>, rng: &mut ChaCha8Rng, beta: f64) -> GradCheck {
    let shape = net.shape();
    let x = random_inputs(rng, 4, shape.input_dim());
    let y = random_inputs(rng, 4, shape.output_dim());
    let u_e = noise(rng, net.num_edges());
    let u_n = noise(rng, net.ngates.as_ref().map_or(0, |b| b.len()));
    let mut mdl = MdlConfig::unit(net, beta, 100);
    for c in mdl.edge_costs.iter_mut().chain(mdl.node_costs.iter_mut()) {
        *c = rng.random_range(0.5..2.0);
    }
    let w = mdl.complexity_weight().unwrap();

    let loss = |n: &GatedKan<f64>| {
        let g = gates_from_noise(n, &u_e, &u_n);
        let (pred, _) = n.forward(x.view(), &g).unwrap();
        data_loss(pred.view(), y.view()).unwrap() + w * complexity_loss(n, &mdl).unwrap()
    };

    let g = gates_from_noise(net, &u_e, &u_n);
    let (pred, cache) = net.forward(x.view(), &g).unwrap();
    let up = data_loss_grad(pred.view(), y.view()).unwrap();
    let mut grads = net.backward(&cache, up.view()).unwrap();
    let (de, dn) = complexity_grad(net, &mdl).unwrap();
    for (a, b) in grads.egate_logits_mut().iter_mut().zip(de) {
        *a += w * b;
    }
    for (a, b) in grads.ngate_logits_mut().iter_mut().zip(dn) {
        *a += w * b;
    }

    let base = net.params_flat();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params_flat(&p).unwrap();
        let up = loss(&probe);
        p[i] = base[i] - h;
        probe.set_params_flat(&p).unwrap();
        let down = loss(&probe);
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.flat[i];
        // tiny gradients are compared against a floor above the round-off level
        let scale = analytic.abs().max(numeric.abs()).max(1e-4);
        let rel = (analytic - numeric).abs() / scale;
        worst = worst.max(rel);
    }
    GradCheck {
        params: base.len(),
        worst_rel: worst,
    }
}

/// Copies the trunk of an FC net into a plain net with the same widths and aggregation.
pub fn trunk_only(net: &GatedKan<f64>) -> GatedKan<f64> {
    let shape = net.shape();
    let plain = KanShape::with_aggregation(shape.widths(), shape.aggregation().to_vec(), false).unwrap();
    let mut edges = Vec::new();
    let mut logits = Vec::new();
    let kinds = net.edge_kinds();
    for e in 0..net.num_edges() {
        if kinds[e] == EdgeKind::Trunk {
            edges.push(net.edge(e).clone());
            logits.push(net.egates.logits[e]);
        }
    }
    let mut egates = GateBank::new(edges.len(), 0.0, GateParams::default(), net.egates.trainable);
    egates.logits = logits;
    GatedKan::from_parts(plain, edges, egates, net.ngates.clone()).unwrap()
}
