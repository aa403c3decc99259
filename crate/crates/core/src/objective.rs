//! Minimum-description-length training objective:
//! `MSE + beta * (ln n / n) * C`, where `C` is the expected-L0 count
//! `sum_l sum_j E[z_{l+1,j}] (c_{l+1,j} + sum_i E[z_{lij}] c_{lij})`.
//!
//! Output nodes carry no node gate (their expectation is 1). Frozen gate
//! banks are deterministic, so their expectation is their thresholded state.

use ndarray::{Array2, ArrayView2};

use crate::error::{invalid, Result};
use crate::gate::GateBank;
use crate::network::GatedKan;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct MdlConfig<T> {
    pub beta: T,
    /// Training-set size `n`, not the batch size.
    pub n_train: usize,
    /// One cost per edge, in edge order.
    pub edge_costs: Vec<T>,
    /// One cost per non-input node (layers `1..=L`), in global node order.
    pub node_costs: Vec<T>,
}

impl<T: Real> MdlConfig<T> {
    /// Unit costs for every edge and node.
    pub fn unit(net: &GatedKan<T>, beta: T, n_train: usize) -> Self {
        let shape = net.shape();
        Self {
            beta,
            n_train,
            edge_costs: vec![T::one(); net.num_edges()],
            node_costs: vec![T::one(); shape.num_nodes() - shape.input_dim()],
        }
    }

    /// `beta * ln(n) / n`.
    pub fn complexity_weight(&self) -> Result<T> {
        if self.n_train < 2 {
            return Err(invalid("n_train must be at least 2 for the ln(n)/n weight"));
        }
        let n = T::from_usize_lossy(self.n_train);
        Ok(self.beta * n.ln() / n)
    }

    fn check(&self, net: &GatedKan<T>) -> Result<()> {
        let shape = net.shape();
        if self.edge_costs.len() != net.num_edges() {
            return Err(invalid(format!(
                "{} edge costs for {} edges",
                self.edge_costs.len(),
                net.num_edges()
            )));
        }
        let nodes = shape.num_nodes() - shape.input_dim();
        if self.node_costs.len() != nodes {
            return Err(invalid(format!("{} node costs for {nodes} nodes", self.node_costs.len())));
        }
        if self.edge_costs.iter().chain(&self.node_costs).any(|c| !(*c >= T::zero())) {
            return Err(invalid("complexity costs must be nonnegative"));
        }
        if !(self.beta >= T::zero()) {
            return Err(invalid("beta must be nonnegative"));
        }
        Ok(())
    }
}

fn check_shapes<T>(pred: &ArrayView2<T>, target: &ArrayView2<T>) -> Result<()> {
    if pred.dim() != target.dim() {
        return Err(invalid(format!(
            "prediction is {:?}, target is {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.nrows() == 0 {
        return Err(invalid("empty prediction"));
    }
    Ok(())
}

/// Mean over rows of the squared residual norm.
pub fn data_loss<T: Real>(pred: ArrayView2<T>, target: ArrayView2<T>) -> Result<T> {
    check_shapes(&pred, &target)?;
    let sse: T = pred
        .iter()
        .zip(target.iter())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(sse / T::from_usize_lossy(pred.nrows()))
}

/// Gradient of [`data_loss`] with respect to the predictions.
pub fn data_loss_grad<T: Real>(pred: ArrayView2<T>, target: ArrayView2<T>) -> Result<Array2<T>> {
    check_shapes(&pred, &target)?;
    let scale = T::lit(2.0) / T::from_usize_lossy(pred.nrows());
    Ok((&pred - &target).mapv(|r| r * scale))
}

fn expectations<T: Real>(bank: &GateBank<T>) -> Vec<T> {
    if bank.trainable {
        bank.expected_open()
    } else {
        bank.inference_gates_threshold()
            .into_iter()
            .map(|open| if open { T::one() } else { T::zero() })
            .collect()
    }
}

/// Derivative of each gate's expectation with respect to its logit.
fn expectation_slopes<T: Real>(bank: &GateBank<T>) -> Vec<T> {
    if bank.trainable {
        bank.expected_open()
            .into_iter()
            .map(|p| p * (T::one() - p))
            .collect()
    } else {
        vec![T::zero(); bank.len()]
    }
}

/// Per-target-node terms shared by the loss and its gradient.
struct NodeTerms<T> {
    /// `E[z]` of the node's gate (1 when ungated).
    gate: Vec<T>,
    /// `c_j + sum_i E[z_ij] c_ij`.
    inner: Vec<T>,
}

fn node_terms<T: Real>(net: &GatedKan<T>, cfg: &MdlConfig<T>) -> NodeTerms<T> {
    let shape = net.shape();
    let e_edge = expectations(&net.egates);
    let e_node = net.ngates.as_ref().map(expectations);
    let n_hidden = shape.num_hidden();
    let mut gate = Vec::with_capacity(cfg.node_costs.len());
    let mut inner = Vec::with_capacity(cfg.node_costs.len());
    let mut e = 0;
    let mut j_global = 0;
    for layer in 0..shape.depth() {
        let sd = shape.source_dim(layer);
        for _ in 0..shape.widths()[layer + 1] {
            let mut acc = cfg.node_costs[j_global];
            for _ in 0..sd {
                acc += e_edge[e] * cfg.edge_costs[e];
                e += 1;
            }
            let g = match &e_node {
                Some(en) if j_global < n_hidden => en[j_global],
                _ => T::one(),
            };
            gate.push(g);
            inner.push(acc);
            j_global += 1;
        }
    }
    NodeTerms { gate, inner }
}

/// Expected-L0 complexity `C`.
pub fn complexity_loss<T: Real>(net: &GatedKan<T>, cfg: &MdlConfig<T>) -> Result<T> {
    cfg.check(net)?;
    let terms = node_terms(net, cfg);
    Ok(terms.gate.iter().zip(&terms.inner).map(|(&g, &i)| g * i).sum())
}

/// `dC/d alpha` for the edge-gate logits and the node-gate logits.
pub fn complexity_grad<T: Real>(net: &GatedKan<T>, cfg: &MdlConfig<T>) -> Result<(Vec<T>, Vec<T>)> {
    cfg.check(net)?;
    let shape = net.shape();
    let terms = node_terms(net, cfg);
    let edge_slope = expectation_slopes(&net.egates);
    let mut d_edge = vec![T::zero(); net.num_edges()];
    let mut e = 0;
    let mut j_global = 0;
    for layer in 0..shape.depth() {
        let sd = shape.source_dim(layer);
        for _ in 0..shape.widths()[layer + 1] {
            for _ in 0..sd {
                d_edge[e] = terms.gate[j_global] * cfg.edge_costs[e] * edge_slope[e];
                e += 1;
            }
            j_global += 1;
        }
    }
    let d_node = match &net.ngates {
        Some(bank) => expectation_slopes(bank)
            .into_iter()
            .zip(&terms.inner)
            .map(|(s, &inner)| s * inner)
            .collect(),
        None => Vec::new(),
    };
    Ok((d_edge, d_node))
}

/// `data_loss + beta * ln(n)/n * C`.
pub fn total_loss<T: Real>(
    pred: ArrayView2<T>,
    target: ArrayView2<T>,
    net: &GatedKan<T>,
    cfg: &MdlConfig<T>,
) -> Result<T> {
    let weight = cfg.complexity_weight()?;
    let data = data_loss(pred, target)?;
    if weight == T::zero() {
        cfg.check(net)?;
        return Ok(data);
    }
    Ok(data + weight * complexity_loss(net, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{KanConfig, KanShape};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net(widths: &[usize], fc: bool, init: f64, trainable: bool, ngates: Option<f64>) -> GatedKan<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cfg = KanConfig::new(KanShape::new(widths, fc).unwrap());
        cfg.egate_init = init;
        cfg.egates_trainable = trainable;
        cfg.ngate_init = ngates;
        GatedKan::init(&cfg, &mut rng).unwrap()
    }

    #[test]
    fn data_loss_examples() {
        let t = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(data_loss(t.view(), t.view()).unwrap(), 0.0);
        let p = array![[3.0, 4.0]];
        let z = array![[0.0, 0.0]];
        assert_eq!(data_loss(p.view(), z.view()).unwrap(), 25.0);
        assert!(data_loss(p.view(), t.view()).is_err());
    }

    #[test]
    fn data_loss_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Array2<f64> = Array2::from_shape_fn((100, 2), |_| rng.random_range(-3.0..3.0));
        let t = Array2::from_shape_fn((100, 2), |_| rng.random_range(-3.0..3.0));
        let mut acc = 0.0;
        for r in 0..100 {
            let mut row = 0.0;
            for c in 0..2 {
                row += (p[(r, c)] - t[(r, c)]) * (p[(r, c)] - t[(r, c)]);
            }
            acc += row;
        }
        assert!((data_loss(p.view(), t.view()).unwrap() - acc / 100.0).abs() < 1e-12);
    }

    #[test]
    fn fully_open_complexity_is_a_count() {
        // 48 edge terms plus one node term for each of the 4 + 4 + 4 + 2 non-input nodes
        let n = net(&[2, 4, 4, 4, 2], false, 20.0, false, None);
        let cfg = MdlConfig::unit(&n, 1.0, 100);
        assert_eq!(complexity_loss(&n, &cfg).unwrap(), 62.0);
        let trainable = net(&[2, 4, 4, 4, 2], false, 20.0, true, None);
        assert!((complexity_loss(&trainable, &cfg).unwrap() - 62.0).abs() < 1e-7);
        let fc = net(&[2, 4, 4, 4, 2], true, 20.0, false, None);
        assert_eq!(complexity_loss(&fc, &MdlConfig::unit(&fc, 1.0, 100)).unwrap(), 100.0 + 14.0);
    }

    #[test]
    fn single_gate_complexity() {
        let n = net(&[1, 1], false, -1.0, true, None);
        let c = complexity_loss(&n, &MdlConfig::unit(&n, 1.0, 10)).unwrap();
        assert!((c - 1.6453).abs() < 1e-4, "{c}");
    }

    #[test]
    fn node_gates_scale_their_subtree() {
        let n = net(&[1, 2, 1], false, 20.0, false, Some(-1.0));
        let p = n.ngates.as_ref().unwrap().expected_open()[0];
        // hidden nodes: p * (1 + 1); output: 1 + 2
        let c = complexity_loss(&n, &MdlConfig::unit(&n, 1.0, 10)).unwrap();
        assert!((c - (2.0 * p * 2.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn beta_zero_is_pure_data_loss() {
        let n = net(&[2, 3, 1], true, -1.0, true, None);
        let p = array![[0.5], [1.0]];
        let t = array![[0.0], [2.0]];
        let cfg = MdlConfig::unit(&n, 0.0, 50);
        assert_eq!(
            total_loss(p.view(), t.view(), &n, &cfg).unwrap(),
            data_loss(p.view(), t.view()).unwrap()
        );
    }

    #[test]
    fn complexity_weight_uses_natural_log() {
        let n = net(&[1, 1], false, 20.0, false, None);
        let p = array![[1.0]];
        let cfg = MdlConfig::unit(&n, 1.0, 3);
        let c = complexity_loss(&n, &cfg).unwrap();
        let total = total_loss(p.view(), p.view(), &n, &cfg).unwrap();
        assert!((total - 3f64.ln() / 3.0 * c).abs() < 1e-15);
        assert!(MdlConfig::unit(&n, 1.0, 1).complexity_weight().is_err());
    }

    #[test]
    fn total_is_sum_of_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = net(&[2, 3, 1], true, -0.5, true, Some(0.2));
        let x = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let t = Array2::from_shape_fn((6, 1), |_| rng.random_range(-1.0..1.0));
        let pred = n.predict(x.view()).unwrap();
        let cfg = MdlConfig::unit(&n, 0.3, 1000);
        let mut sse = 0.0;
        for r in 0..6 {
            sse += (pred[(r, 0)] - t[(r, 0)]).powi(2);
        }
        let c = complexity_loss(&n, &cfg).unwrap();
        let expected = sse / 6.0 + 0.3 * (1000f64).ln() / 1000.0 * c;
        assert!((total_loss(pred.view(), t.view(), &n, &cfg).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn misaligned_costs_rejected() {
        let n = net(&[2, 3, 1], false, -1.0, true, None);
        let mut cfg = MdlConfig::unit(&n, 1.0, 10);
        cfg.edge_costs.pop();
        assert!(complexity_loss(&n, &cfg).is_err());
        let mut cfg = MdlConfig::unit(&n, 1.0, 10);
        cfg.node_costs.push(1.0);
        assert!(complexity_loss(&n, &cfg).is_err());
    }

    #[test]
    fn complexity_gradient_matches_finite_differences() {
        let base = net(&[2, 3, 2], true, 0.0, true, Some(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut n = base.clone();
        n.egates.logits.iter_mut().for_each(|a| *a = rng.random_range(-3.0..3.0));
        n.ngates.as_mut().unwrap().logits.iter_mut().for_each(|a| *a = rng.random_range(-3.0..3.0));
        let mut cfg = MdlConfig::unit(&n, 1.0, 10);
        cfg.edge_costs.iter_mut().for_each(|c| *c = rng.random_range(0.5..2.0));
        let (de, dn) = complexity_grad(&n, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..n.egates.len() {
            let (mut a, mut b) = (n.clone(), n.clone());
            a.egates.logits[i] += h;
            b.egates.logits[i] -= h;
            let fd = (complexity_loss(&a, &cfg).unwrap() - complexity_loss(&b, &cfg).unwrap()) / (2.0 * h);
            assert!((fd - de[i]).abs() < 1e-7, "edge {i}: {fd} vs {}", de[i]);
        }
        for i in 0..dn.len() {
            let (mut a, mut b) = (n.clone(), n.clone());
            a.ngates.as_mut().unwrap().logits[i] += h;
            b.ngates.as_mut().unwrap().logits[i] -= h;
            let fd = (complexity_loss(&a, &cfg).unwrap() - complexity_loss(&b, &cfg).unwrap()) / (2.0 * h);
            assert!((fd - dn[i]).abs() < 1e-7, "node {i}: {fd} vs {}", dn[i]);
        }
    }

    proptest! {
        #[test]
        fn complexity_monotone_in_every_logit(seed in 0u64..1000, which in 0usize..20, delta in 0.01f64..3.0) {
            let mut n = net(&[2, 2, 2], true, 0.0, true, Some(0.0));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            n.egates.logits.iter_mut().for_each(|a| *a = rng.random_range(-4.0..4.0));
            n.ngates.as_mut().unwrap().logits.iter_mut().for_each(|a| *a = rng.random_range(-4.0..4.0));
            let cfg = MdlConfig::unit(&n, 1.0, 10);
            let before = complexity_loss(&n, &cfg).unwrap();
            let total = n.egates.len() + 2;
            let idx = which % total;
            if idx < n.egates.len() {
                n.egates.logits[idx] += delta;
            } else {
                n.ngates.as_mut().unwrap().logits[idx - n.egates.len()] += delta;
            }
            prop_assert!(complexity_loss(&n, &cfg).unwrap() >= before);
        }
    }
}
