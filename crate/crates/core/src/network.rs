//! The gated KAN computation graph.
//!
//! Nodes are numbered globally: the `n_0` inputs first, then each layer in
//! order. Layer `l` maps its source vector to the `n_{l+1}` nodes of the next
//! layer. Without forward connections the sources are the nodes of layer `l`;
//! with them the sources are the concatenation `[x^(0), ..., x^(l)]`, which is
//! exactly global nodes `0 .. n_0 + ... + n_l`.
//!
//! Edges are stored layer by layer, then by target node, then by source, so
//! the incoming edges of a node are contiguous.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, KanError, Result};
use crate::gate::{GateBank, GateParams, GateSample};
use crate::scalar::{silu, silu_deriv, Real};
use crate::spline::{GridRefit, SplineActivation, SplineGrid};

/// Node values beyond this magnitude are reported as overflow.
pub const OVERFLOW_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Sum,
    Product,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Trunk,
    Fc,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KanShape {
    widths: Vec<usize>,
    /// One entry per layer `1..=L`, one kind per node.
    aggregation: Vec<Vec<NodeKind>>,
    forward_connections: bool,
}

impl KanShape {
    /// All-summation shape.
    pub fn new(widths: &[usize], forward_connections: bool) -> Result<Self> {
        let aggregation = widths
            .iter()
            .skip(1)
            .map(|&w| vec![NodeKind::Sum; w])
            .collect();
        Self::with_aggregation(widths, aggregation, forward_connections)
    }

    pub fn with_aggregation(
        widths: &[usize],
        aggregation: Vec<Vec<NodeKind>>,
        forward_connections: bool,
    ) -> Result<Self> {
        let shape = Self {
            widths: widths.to_vec(),
            aggregation,
            forward_connections,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(invalid("a KAN shape needs at least an input and an output width"));
        }
        if self.widths.contains(&0) {
            return Err(invalid(format!("zero layer width in {:?}", self.widths)));
        }
        let ok = self.aggregation.len() == self.widths.len() - 1
            && self
                .aggregation
                .iter()
                .zip(&self.widths[1..])
                .all(|(kinds, &w)| kinds.len() == w);
        if !ok {
            return Err(invalid("aggregation kinds do not match layer widths"));
        }
        Ok(())
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn aggregation(&self) -> &[Vec<NodeKind>] {
        &self.aggregation
    }

    pub fn forward_connections(&self) -> bool {
        self.forward_connections
    }

    /// Number of edge layers `L`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.depth()]
    }

    pub fn num_nodes(&self) -> usize {
        self.widths.iter().sum()
    }

    /// Global index of the first node of `layer`.
    pub fn node_start(&self, layer: usize) -> usize {
        self.widths[..layer].iter().sum()
    }

    /// Width of the source vector feeding edge layer `layer`.
    pub fn source_dim(&self, layer: usize) -> usize {
        if self.forward_connections {
            self.widths[..=layer].iter().sum()
        } else {
            self.widths[layer]
        }
    }

    /// Global node index of the first source of edge layer `layer`.
    pub fn source_base(&self, layer: usize) -> usize {
        if self.forward_connections {
            0
        } else {
            self.node_start(layer)
        }
    }

    /// Whether source `source` of edge layer `layer` comes from `x^(layer)`.
    pub fn is_trunk_source(&self, layer: usize, source: usize) -> bool {
        self.source_base(layer) + source >= self.node_start(layer)
    }

    /// Nodes in layers `1..L`, the ones that may carry node gates.
    pub fn num_hidden(&self) -> usize {
        self.widths[1..self.depth()].iter().sum()
    }

    pub fn num_edges(&self) -> usize {
        (0..self.depth())
            .map(|l| self.source_dim(l) * self.widths[l + 1])
            .sum()
    }

    /// `(trunk, fc)` edge counts.
    pub fn edge_counts(&self) -> (usize, usize) {
        let trunk: usize = self.widths.windows(2).map(|w| w[0] * w[1]).sum();
        (trunk, self.num_edges() - trunk)
    }
}

/// Exact trunk and forward-connection edge counts for a shape.
pub fn edge_counts(shape: &KanShape) -> (usize, usize) {
    shape.edge_counts()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeRef {
    pub layer: usize,
    /// Index into the (possibly concatenated) source vector of `layer`.
    pub source: usize,
    /// Node index within layer `layer + 1`.
    pub target: usize,
    pub kind: EdgeKind,
}

/// Static configuration of a fresh network.
#[derive(Clone, Debug, PartialEq)]
pub struct KanConfig<T> {
    pub shape: KanShape,
    pub num_intervals: usize,
    pub degree: usize,
    pub domain: (T, T),
    pub gate_params: GateParams<T>,
    pub egate_init: T,
    pub egates_trainable: bool,
    /// Node-gate initial logit, or `None` to build without node gates.
    pub ngate_init: Option<T>,
}

impl<T: Real> KanConfig<T> {
    /// G = 10, K = 3 on `[-1, 1]`, edge gates frozen open, no node gates.
    pub fn new(shape: KanShape) -> Self {
        Self {
            shape,
            num_intervals: 10,
            degree: 3,
            domain: (-T::one(), T::one()),
            gate_params: GateParams::default(),
            egate_init: T::lit(crate::gate::OPEN_LOGIT),
            egates_trainable: false,
            ngate_init: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatedKan<T> {
    shape: KanShape,
    edges: Vec<SplineActivation<T>>,
    pub egates: GateBank<T>,
    pub ngates: Option<GateBank<T>>,
}

/// Gate values used for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GateValues<T> {
    pub edges: GateSample<T>,
    pub nodes: Option<GateSample<T>>,
}

impl<T: Real> GateValues<T> {
    /// Every gate open.
    pub fn ones(net: &GatedKan<T>) -> Self {
        Self {
            edges: GateSample::ones(net.num_edges()),
            nodes: net.ngates.as_ref().map(|b| GateSample::ones(b.len())),
        }
    }

    /// Deterministic inference gates, `1[E[z] > 1/2]`.
    pub fn threshold(net: &GatedKan<T>) -> Self {
        Self {
            edges: threshold_values(&net.egates),
            nodes: net.ngates.as_ref().map(threshold_values),
        }
    }

    /// One hard-concrete draw per trainable gate; frozen banks sit at their thresholded state.
    pub fn sample<R: Rng + ?Sized>(net: &GatedKan<T>, rng: &mut R) -> Self {
        let draw = |bank: &GateBank<T>, rng: &mut R| {
            if bank.trainable {
                bank.sample_with(rng)
            } else {
                threshold_values(bank)
            }
        };
        let edges = draw(&net.egates, rng);
        let nodes = net.ngates.as_ref().map(|b| draw(b, rng));
        Self { edges, nodes }
    }
}

fn threshold_values<T: Real>(bank: &GateBank<T>) -> GateSample<T> {
    GateSample::from_values(
        bank.inference_gates_threshold()
            .into_iter()
            .map(|open| if open { T::one() } else { T::zero() })
            .collect(),
    )
}

/// Intermediates recorded by [`GatedKan::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    batch: usize,
    num_nodes: usize,
    num_edges: usize,
    degree: usize,
    /// `batch x num_nodes` node outputs, after node gating.
    nodes: Vec<T>,
    /// `batch x num_nodes` aggregates before node gating.
    pre: Vec<T>,
    /// `batch x num_edges` activation outputs.
    phi: Vec<T>,
    dphi_dx: Vec<T>,
    silu: Vec<T>,
    spline: Vec<T>,
    /// `batch x num_edges` index of the first local basis function, or `None` outside support.
    basis_first: Vec<Option<isize>>,
    /// `batch x num_edges x (degree + 1)` local basis values.
    basis: Vec<T>,
    gates: GateValues<T>,
}

impl<T: Real> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Node values of one sample, indexed globally.
    pub fn node_values(&self, row: usize) -> &[T] {
        &self.nodes[row * self.num_nodes..(row + 1) * self.num_nodes]
    }

    pub fn gates(&self) -> &GateValues<T> {
        &self.gates
    }
}

/// Position of each parameter group inside the flat parameter vector.
///
/// Per edge: `G + K` coefficients, then `w_b`, then `w_s`. After all edges
/// come the edge-gate logits, then the node-gate logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub num_edges: usize,
    pub num_basis: usize,
    pub num_ngates: usize,
}

impl ParamLayout {
    pub fn edge_block(&self) -> usize {
        self.num_basis + 2
    }

    pub fn edge_offset(&self, edge: usize) -> usize {
        edge * self.edge_block()
    }

    pub fn egate_start(&self) -> usize {
        self.num_edges * self.edge_block()
    }

    pub fn ngate_start(&self) -> usize {
        self.egate_start() + self.num_edges
    }

    pub fn len(&self) -> usize {
        self.ngate_start() + self.num_ngates
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradient of a scalar loss with respect to every parameter, in [`ParamLayout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layout: ParamLayout,
    pub flat: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            layout,
            flat: vec![T::zero(); layout.len()],
        }
    }

    pub fn edge_coeffs(&self, edge: usize) -> &[T] {
        let o = self.layout.edge_offset(edge);
        &self.flat[o..o + self.layout.num_basis]
    }

    pub fn edge_w_b(&self, edge: usize) -> T {
        self.flat[self.layout.edge_offset(edge) + self.layout.num_basis]
    }

    pub fn edge_w_s(&self, edge: usize) -> T {
        self.flat[self.layout.edge_offset(edge) + self.layout.num_basis + 1]
    }

    pub fn egate_logits(&self) -> &[T] {
        &self.flat[self.layout.egate_start()..self.layout.ngate_start()]
    }

    pub fn egate_logits_mut(&mut self) -> &mut [T] {
        let (a, b) = (self.layout.egate_start(), self.layout.ngate_start());
        &mut self.flat[a..b]
    }

    pub fn ngate_logits(&self) -> &[T] {
        &self.flat[self.layout.ngate_start()..]
    }

    pub fn ngate_logits_mut(&mut self) -> &mut [T] {
        let a = self.layout.ngate_start();
        &mut self.flat[a..]
    }
}

/// Active edge counts under the inference threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveCounts {
    pub trunk: usize,
    pub fc: usize,
    pub sparsity_pct: f64,
}

impl<T: Real> GatedKan<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &KanConfig<T>, rng: &mut R) -> Result<Self> {
        cfg.shape.validate()?;
        cfg.gate_params.validate()?;
        let grid = SplineGrid::uniform(cfg.num_intervals, cfg.degree, cfg.domain.0, cfg.domain.1)?;
        let num_edges = cfg.shape.num_edges();
        let edges = (0..num_edges)
            .map(|_| SplineActivation::random(grid.clone(), rng))
            .collect();
        let egates = GateBank::new(num_edges, cfg.egate_init, cfg.gate_params, cfg.egates_trainable);
        let ngates = cfg
            .ngate_init
            .map(|init| GateBank::new(cfg.shape.num_hidden(), init, cfg.gate_params, true));
        Ok(Self {
            shape: cfg.shape.clone(),
            edges,
            egates,
            ngates,
        })
    }

    /// Assembles a network from explicit parts, checking every alignment invariant.
    pub fn from_parts(
        shape: KanShape,
        edges: Vec<SplineActivation<T>>,
        egates: GateBank<T>,
        ngates: Option<GateBank<T>>,
    ) -> Result<Self> {
        let net = Self {
            shape,
            edges,
            egates,
            ngates,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        let e = self.shape.num_edges();
        if self.edges.len() != e {
            return Err(invalid(format!("{} activations for {e} edges", self.edges.len())));
        }
        if self.egates.len() != e {
            return Err(invalid(format!("{} edge gates for {e} edges", self.egates.len())));
        }
        self.egates.params.validate()?;
        if let Some(ng) = &self.ngates {
            if ng.len() != self.shape.num_hidden() {
                return Err(invalid(format!(
                    "{} node gates for {} hidden nodes",
                    ng.len(),
                    self.shape.num_hidden()
                )));
            }
            ng.params.validate()?;
        }
        let first = &self.edges[0].grid;
        for act in &self.edges {
            act.validate()?;
            if act.grid.num_intervals() != first.num_intervals() || act.grid.degree() != first.degree() {
                return Err(invalid("all edges must share G and K"));
            }
        }
        if !self.egates.logits.iter().all(|a| a.is_finite()) {
            return Err(invalid("edge gate logits must be finite"));
        }
        Ok(())
    }

    pub fn shape(&self) -> &KanShape {
        &self.shape
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[SplineActivation<T>] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &SplineActivation<T> {
        &self.edges[e]
    }

    pub fn edge_mut(&mut self, e: usize) -> &mut SplineActivation<T> {
        &mut self.edges[e]
    }

    pub fn degree(&self) -> usize {
        self.edges[0].grid.degree()
    }

    /// First edge index of edge layer `layer`.
    pub fn layer_offset(&self, layer: usize) -> usize {
        (0..layer)
            .map(|l| self.shape.source_dim(l) * self.shape.widths[l + 1])
            .sum()
    }

    pub fn edge_index(&self, layer: usize, source: usize, target: usize) -> usize {
        self.layer_offset(layer) + target * self.shape.source_dim(layer) + source
    }

    pub fn edge_ref(&self, e: usize) -> EdgeRef {
        let mut rest = e;
        for layer in 0..self.shape.depth() {
            let sd = self.shape.source_dim(layer);
            let count = sd * self.shape.widths[layer + 1];
            if rest < count {
                let (target, source) = (rest / sd, rest % sd);
                let kind = if self.shape.is_trunk_source(layer, source) {
                    EdgeKind::Trunk
                } else {
                    EdgeKind::Fc
                };
                return EdgeRef {
                    layer,
                    source,
                    target,
                    kind,
                };
            }
            rest -= count;
        }
        panic!("edge {e} out of range");
    }

    pub fn edge_kinds(&self) -> Vec<EdgeKind> {
        (0..self.num_edges()).map(|e| self.edge_ref(e).kind).collect()
    }

    pub fn param_layout(&self) -> ParamLayout {
        ParamLayout {
            num_edges: self.num_edges(),
            num_basis: self.edges[0].grid.num_basis(),
            num_ngates: self.ngates.as_ref().map_or(0, |b| b.len()),
        }
    }

    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_layout().len());
        for act in &self.edges {
            out.extend_from_slice(&act.coeffs);
            out.push(act.w_b);
            out.push(act.w_s);
        }
        out.extend_from_slice(&self.egates.logits);
        if let Some(ng) = &self.ngates {
            out.extend_from_slice(&ng.logits);
        }
        out
    }

    /// Visits every parameter mutably in [`ParamLayout`] order.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(usize, &mut T)) {
        let mut i = 0;
        for act in &mut self.edges {
            for c in &mut act.coeffs {
                f(i, c);
                i += 1;
            }
            f(i, &mut act.w_b);
            f(i + 1, &mut act.w_s);
            i += 2;
        }
        for a in &mut self.egates.logits {
            f(i, a);
            i += 1;
        }
        if let Some(ng) = &mut self.ngates {
            for a in &mut ng.logits {
                f(i, a);
                i += 1;
            }
        }
    }

    pub fn set_params_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_layout().len() {
            return Err(invalid("flat parameter vector has the wrong length"));
        }
        self.visit_params_mut(|i, p| *p = flat[i]);
        Ok(())
    }

    fn check_gates(&self, gates: &GateValues<T>) -> Result<()> {
        if gates.edges.values.len() != self.num_edges() {
            return Err(invalid("edge gate values not aligned with edges"));
        }
        let expected = self.ngates.as_ref().map(|b| b.len());
        let got = gates.nodes.as_ref().map(|g| g.values.len());
        if expected != got {
            return Err(invalid("node gate values not aligned with node gates"));
        }
        Ok(())
    }

    /// Node gate value of global node `node`, 1 for inputs and outputs.
    #[inline]
    fn node_gate(&self, gates: &GateValues<T>, node: usize) -> T {
        match &gates.nodes {
            Some(ng) => {
                let first_hidden = self.shape.widths[0];
                if node >= first_hidden && node - first_hidden < ng.values.len() {
                    ng.values[node - first_hidden]
                } else {
                    T::one()
                }
            }
            None => T::one(),
        }
    }

    pub fn forward(&self, x: ArrayView2<T>, gates: &GateValues<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        let shape = &self.shape;
        if x.ncols() != shape.input_dim() {
            return Err(invalid(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                shape.input_dim()
            )));
        }
        self.check_gates(gates)?;
        let batch = x.nrows();
        let nn = shape.num_nodes();
        let ne = self.num_edges();
        let k1 = self.degree() + 1;
        let limit = T::lit(OVERFLOW_LIMIT);

        let mut cache = ForwardCache {
            batch,
            num_nodes: nn,
            num_edges: ne,
            degree: self.degree(),
            nodes: vec![T::zero(); batch * nn],
            pre: vec![T::zero(); batch * nn],
            phi: vec![T::zero(); batch * ne],
            dphi_dx: vec![T::zero(); batch * ne],
            silu: vec![T::zero(); batch * ne],
            spline: vec![T::zero(); batch * ne],
            basis_first: vec![None; batch * ne],
            basis: vec![T::zero(); batch * ne * k1],
            gates: gates.clone(),
        };

        let egate = &gates.edges.values;
        for row in 0..batch {
            let nodes = &mut cache.nodes[row * nn..(row + 1) * nn];
            for (i, &v) in x.row(row).iter().enumerate() {
                if !v.is_finite() {
                    return Err(invalid(format!("non-finite input at row {row}, column {i}")));
                }
                nodes[i] = v;
            }
            let mut e = 0;
            for layer in 0..shape.depth() {
                let sd = shape.source_dim(layer);
                let base = shape.source_base(layer);
                let tstart = shape.node_start(layer + 1);
                for (target, &kind) in shape.aggregation[layer].iter().enumerate() {
                    let mut agg = match kind {
                        NodeKind::Sum => T::zero(),
                        NodeKind::Product => T::one(),
                    };
                    for source in 0..sd {
                        let xv = cache.nodes[row * nn + base + source];
                        let act = &self.edges[e];
                        let slot = row * ne + e;
                        let sx = silu(xv);
                        let (spline, spline_dx) = match act.grid.local_basis(xv) {
                            Some(local) => {
                                cache.basis_first[slot] = Some(local.first);
                                cache.basis[slot * k1..(slot + 1) * k1].copy_from_slice(&local.values[..k1]);
                                (act.dot_local(&local), act.dot_local_derivs(&local))
                            }
                            None => (T::zero(), T::zero()),
                        };
                        let phi = act.w_b * sx + act.w_s * spline;
                        cache.phi[slot] = phi;
                        cache.dphi_dx[slot] = act.w_b * silu_deriv(xv) + act.w_s * spline_dx;
                        cache.silu[slot] = sx;
                        cache.spline[slot] = spline;
                        let g = egate[e];
                        match kind {
                            NodeKind::Sum => agg += g * phi,
                            NodeKind::Product => agg *= g * phi + (T::one() - g),
                        }
                        e += 1;
                    }
                    let node = tstart + target;
                    let value = self.node_gate(gates, node) * agg;
                    if !(value.abs() <= limit) {
                        return Err(KanError::Overflow {
                            layer: layer + 1,
                            node: target,
                            magnitude: value.abs().as_f64(),
                        });
                    }
                    cache.pre[row * nn + node] = agg;
                    cache.nodes[row * nn + node] = value;
                }
            }
        }

        let out_start = shape.node_start(shape.depth());
        let p = shape.output_dim();
        let y = Array2::from_shape_fn((batch, p), |(r, c)| cache.nodes[r * nn + out_start + c]);
        Ok((y, cache))
    }

    /// Reverse-mode pass. `upstream` is `dLoss/dOutput` for every sample.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: ArrayView2<T>) -> Result<Gradients<T>> {
        let shape = &self.shape;
        let nn = shape.num_nodes();
        let ne = self.num_edges();
        if cache.num_nodes != nn || cache.num_edges != ne || cache.degree != self.degree() {
            return Err(KanError::InvalidState("forward cache belongs to a different network".into()));
        }
        if upstream.nrows() != cache.batch || upstream.ncols() != shape.output_dim() {
            return Err(KanError::InvalidState(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.nrows(),
                upstream.ncols(),
                cache.batch,
                shape.output_dim()
            )));
        }
        let layout = self.param_layout();
        let mut grads = Gradients::zeros(layout);
        let k1 = self.degree() + 1;
        let nb = layout.num_basis;
        let egate = &cache.gates.edges.values;
        let mut d_egate = vec![T::zero(); ne];
        let mut d_ngate = vec![T::zero(); layout.num_ngates];
        let first_hidden = shape.widths[0];
        let out_start = shape.node_start(shape.depth());
        let mut dnode = vec![T::zero(); nn];
        let mut terms: Vec<T> = Vec::new();
        let mut suffix: Vec<T> = Vec::new();

        for row in 0..cache.batch {
            dnode.iter_mut().for_each(|d| *d = T::zero());
            for c in 0..shape.output_dim() {
                dnode[out_start + c] = upstream[(row, c)];
            }
            for layer in (0..shape.depth()).rev() {
                let sd = shape.source_dim(layer);
                let base = shape.source_base(layer);
                let tstart = shape.node_start(layer + 1);
                let offset = self.layer_offset(layer);
                for (target, &kind) in shape.aggregation[layer].iter().enumerate() {
                    let node = tstart + target;
                    let dx = dnode[node];
                    if dx == T::zero() {
                        continue;
                    }
                    let ng = self.node_gate(&cache.gates, node);
                    if cache.gates.nodes.is_some() && node >= first_hidden && node - first_hidden < d_ngate.len() {
                        d_ngate[node - first_hidden] += dx * cache.pre[row * nn + node];
                    }
                    let dpre = dx * ng;
                    let e0 = offset + target * sd;

                    if kind == NodeKind::Product {
                        terms.clear();
                        terms.extend((0..sd).map(|s| {
                            let g = egate[e0 + s];
                            g * cache.phi[row * ne + e0 + s] + (T::one() - g)
                        }));
                        suffix.clear();
                        suffix.resize(sd + 1, T::one());
                        for s in (0..sd).rev() {
                            suffix[s] = suffix[s + 1] * terms[s];
                        }
                    }

                    let mut prefix = T::one();
                    for source in 0..sd {
                        let e = e0 + source;
                        let slot = row * ne + e;
                        let g = egate[e];
                        let phi = cache.phi[slot];
                        let dphi = match kind {
                            NodeKind::Sum => {
                                d_egate[e] += dpre * phi;
                                dpre * g
                            }
                            NodeKind::Product => {
                                let others = prefix * suffix[source + 1];
                                prefix *= terms[source];
                                let dterm = dpre * others;
                                d_egate[e] += dterm * (phi - T::one());
                                dterm * g
                            }
                        };
                        if dphi == T::zero() {
                            continue;
                        }
                        let act = &self.edges[e];
                        let o = layout.edge_offset(e);
                        if let Some(first) = cache.basis_first[slot] {
                            let scale = dphi * act.w_s;
                            for r in 0..k1 {
                                let m = first + r as isize;
                                if m >= 0 && (m as usize) < nb {
                                    grads.flat[o + m as usize] += scale * cache.basis[slot * k1 + r];
                                }
                            }
                        }
                        grads.flat[o + nb] += dphi * cache.silu[slot];
                        grads.flat[o + nb + 1] += dphi * cache.spline[slot];
                        dnode[base + source] += dphi * cache.dphi_dx[slot];
                    }
                }
            }
        }

        let slopes = &cache.gates.edges.dvalue_dlogit;
        for (dst, (dg, slope)) in grads.egate_logits_mut().iter_mut().zip(d_egate.iter().zip(slopes)) {
            *dst = *dg * *slope;
        }
        if let Some(ns) = &cache.gates.nodes {
            for (dst, (dg, slope)) in grads
                .ngate_logits_mut()
                .iter_mut()
                .zip(d_ngate.iter().zip(&ns.dvalue_dlogit))
            {
                *dst = *dg * *slope;
            }
        }
        Ok(grads)
    }

    /// Output under deterministic inference gates.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.forward(x, &GateValues::threshold(self))?.0)
    }

    /// Edge counts whose threshold gates are open. An edge touching a hidden
    /// node whose node gate is closed is inactive as well.
    pub fn active_counts(&self) -> ActiveCounts {
        let open_e = self.egates.inference_gates_threshold();
        let open_n = self.ngates.as_ref().map(|b| b.inference_gates_threshold());
        let first_hidden = self.shape.widths[0];
        let node_open = |node: usize| match &open_n {
            Some(v) if node >= first_hidden && node - first_hidden < v.len() => v[node - first_hidden],
            _ => true,
        };
        let (mut trunk, mut fc) = (0, 0);
        for (e, &open) in open_e.iter().enumerate() {
            let r = self.edge_ref(e);
            let source = self.shape.source_base(r.layer) + r.source;
            let target = self.shape.node_start(r.layer + 1) + r.target;
            if open && node_open(source) && node_open(target) {
                match r.kind {
                    EdgeKind::Trunk => trunk += 1,
                    EdgeKind::Fc => fc += 1,
                }
            }
        }
        let (t_total, f_total) = self.shape.edge_counts();
        ActiveCounts {
            trunk,
            fc,
            sparsity_pct: sparsity_pct(trunk + fc, t_total + f_total),
        }
    }

    /// Refits every edge grid to the values its source node takes on `x`.
    pub fn update_grids(&mut self, x: ArrayView2<T>, gates: &GateValues<T>) -> Result<()> {
        let (_, cache) = self.forward(x, gates)?;
        let nn = self.shape.num_nodes();
        let mut column = vec![T::zero(); cache.batch];
        for layer in 0..self.shape.depth() {
            let sd = self.shape.source_dim(layer);
            let base = self.shape.source_base(layer);
            for source in 0..sd {
                for (row, slot) in column.iter_mut().enumerate() {
                    *slot = cache.nodes[row * nn + base + source];
                }
                let first = self.edge_index(layer, source, 0);
                let refit = GridRefit::new(&self.edges[first].grid, &column)?;
                for target in 0..self.shape.widths[layer + 1] {
                    let e = self.edge_index(layer, source, target);
                    self.edges[e] = refit.apply(&self.edges[e], &column);
                }
            }
        }
        Ok(())
    }

    /// `(x, phi(x))` samples across the interior of one edge's grid.
    pub fn activation_samples(&self, e: usize, n: usize) -> Vec<(T, T)> {
        let act = &self.edges[e];
        let (lo, hi) = act.grid.domain();
        let denom = T::from_usize_lossy(n.max(2) - 1);
        (0..n)
            .map(|i| {
                let x = lo + (hi - lo) * T::from_usize_lossy(i) / denom;
                (x, act.eval(x).unwrap_or_else(|_| T::nan()))
            })
            .collect()
    }
}

pub fn sparsity_pct(active: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * active as f64 / total as f64
    }
}
