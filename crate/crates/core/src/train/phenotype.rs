//! Executable network compiled from a genome.
//!
//! Activations are stored `[position][sample]` so that every kernel's
//! inner loop runs over the batch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::conv::ConvGeometry;
use super::pool::{pooling_partition, PoolWindows};
use super::scalar::Scalar;
use crate::dataset::ImageSet;
use crate::genome::{EdgeId, EdgeWeights, Genome, GenomeError, NodeId, NodeKind};

#[derive(Debug, Error)]
pub enum PhenotypeError {
    #[error("invalid genome: {0}")]
    Genome(#[from] GenomeError),
    #[error("input images are {found:?}, network expects {expected:?}")]
    InputShape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("dataset has {found} classes, network has {expected} outputs")]
    Classes { expected: usize, found: usize },
}

/// Forward-pass flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics updated.
    Train,
    /// Batch statistics, running statistics left alone.
    Probe,
    /// Running statistics.
    Infer,
}

/// Per-network numeric settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub bn_alpha: f64,
    pub bn_eps: f64,
    pub relu_max: f64,
    pub relu_leak: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            bn_alpha: 0.1,
            bn_eps: 1e-5,
            relu_max: 5.5,
            relu_leak: 0.1,
        }
    }
}

/// Leaky on both sides of `[0, max]`, continuous everywhere.
#[derive(Debug, Clone, Copy)]
struct Relu<S> {
    max: S,
    leak: S,
}

impl<S: Scalar> Relu<S> {
    #[inline]
    fn value(self, y: S) -> S {
        if y < S::ZERO {
            self.leak * y
        } else if y > self.max {
            self.max + self.leak * (y - self.max)
        } else {
            y
        }
    }

    #[inline]
    fn slope(self, y: S) -> S {
        if y < S::ZERO || y > self.max {
            self.leak
        } else {
            S::ONE
        }
    }

    #[inline]
    fn region(self, y: S) -> u32 {
        if y < S::ZERO {
            0
        } else if y > self.max {
            2
        } else {
            1
        }
    }
}

struct Node<S> {
    id: NodeId,
    kind: NodeKind,
    len: usize,
    act: Vec<S>,
    norm: Vec<S>,
    delta: Vec<S>,
    gamma: S,
    beta: S,
    grad_gamma: S,
    grad_beta: S,
    vel_gamma: S,
    vel_beta: S,
    running_mean: f64,
    running_var: f64,
    inv_std: f64,
    incoming: Vec<usize>,
}

enum Op {
    Conv(ConvGeometry),
    Pool {
        in_dims: (usize, usize),
        out_dims: (usize, usize),
        windows: PoolWindows,
    },
}

struct Edge<S> {
    id: EdgeId,
    from: usize,
    op: Op,
    weights: Vec<S>,
    grad: Vec<S>,
    velocity: Vec<S>,
    argmax: Vec<u32>,
}

/// Which trainable quantity a [`ParamRef`] points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Filter,
    Scale,
    Gamma,
    Beta,
}

/// Address of one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef {
    pub kind: ParamKind,
    pub index: usize,
    pub offset: usize,
}

pub struct Phenotype<S: Scalar> {
    nodes: Vec<Node<S>>,
    edges: Vec<Edge<S>>,
    outputs: Vec<usize>,
    input_dims: (usize, usize),
    batch: usize,
    labels: Vec<u8>,
    probs: Vec<f64>,
    relu: Relu<S>,
    config: NetConfig,
    rng: ChaCha8Rng,
    frozen: bool,
}

impl<S: Scalar> Phenotype<S> {
    /// Builds the network for the enabled part of `genome` that lies on some
    /// input-to-output path. `seed` drives the pooling window order.
    pub fn compile(genome: &Genome, config: NetConfig, seed: u64) -> Result<Self, PhenotypeError> {
        genome.validate()?;
        let order = genome.evaluation_order()?;
        let fwd = genome.forward_reach();
        let bwd = genome.backward_reach();
        let active = |id: NodeId| {
            let i = genome.nodes.binary_search_by_key(&id, |n| n.id).expect("node exists");
            fwd[i] && bwd[i]
        };
        let order: Vec<NodeId> = order.into_iter().filter(|&id| active(id)).collect();
        let slot = |id: NodeId| order.iter().position(|&o| o == id);

        let mut nodes: Vec<Node<S>> = order
            .iter()
            .map(|&id| {
                let g = genome.node(id).expect("ordered node exists");
                Node {
                    id,
                    kind: g.kind,
                    len: g.size_x * g.size_y,
                    act: Vec::new(),
                    norm: Vec::new(),
                    delta: Vec::new(),
                    gamma: S::from_f64(g.bn.gamma),
                    beta: S::from_f64(g.bn.beta),
                    grad_gamma: S::ZERO,
                    grad_beta: S::ZERO,
                    vel_gamma: S::ZERO,
                    vel_beta: S::ZERO,
                    running_mean: g.bn.running_mean,
                    running_var: g.bn.running_var,
                    inv_std: 1.0,
                    incoming: Vec::new(),
                }
            })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for e in genome.enabled_edges() {
            let (Some(from), Some(to)) = (slot(e.in_node), slot(e.out_node)) else {
                continue;
            };
            let in_dims = genome.node(e.in_node).expect("validated").dims();
            let out_dims = genome.node(e.out_node).expect("validated").dims();
            let (op, weights) = match &e.weights {
                EdgeWeights::Convolutional { filter, .. } => (
                    Op::Conv(ConvGeometry::new(in_dims, out_dims)),
                    filter.iter().map(|&w| S::from_f64(w)).collect::<Vec<S>>(),
                ),
                EdgeWeights::Pooling { scale } => (
                    Op::Pool {
                        in_dims,
                        out_dims,
                        windows: shuffled_windows(in_dims, out_dims, &mut rng),
                    },
                    vec![S::from_f64(*scale)],
                ),
            };
            nodes[to].incoming.push(edges.len());
            edges.push(Edge {
                id: e.id,
                from,
                grad: vec![S::ZERO; weights.len()],
                velocity: vec![S::ZERO; weights.len()],
                weights,
                op,
                argmax: Vec::new(),
            });
        }
        let outputs = genome
            .output_nodes()
            .map(|o| slot(o.id).expect("outputs are reachable"))
            .collect();
        Ok(Phenotype {
            nodes,
            edges,
            outputs,
            input_dims: genome.input_dims(),
            batch: 0,
            labels: Vec::new(),
            probs: Vec::new(),
            relu: Relu {
                max: S::from_f64(config.relu_max),
                leak: S::from_f64(config.relu_leak),
            },
            config,
            rng,
            frozen: false,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.outputs.len()
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Trainable parameters: every active edge weight plus gamma and beta
    /// of every active hidden node.
    pub fn weight_count(&self) -> usize {
        let edges: usize = self.edges.iter().map(|e| e.weights.len()).sum();
        edges + 2 * self.nodes.iter().filter(|n| n.kind == NodeKind::Hidden).count()
    }

    /// Stops (or resumes) reshuffling pooling windows between passes.
    pub fn freeze_pooling(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    fn resize(&mut self, batch: usize) {
        if batch == self.batch {
            return;
        }
        self.batch = batch;
        for n in &mut self.nodes {
            n.act = vec![S::ZERO; n.len * batch];
            n.delta = vec![S::ZERO; n.len * batch];
            n.norm = if n.kind == NodeKind::Hidden {
                vec![S::ZERO; n.len * batch]
            } else {
                Vec::new()
            };
        }
        for e in &mut self.edges {
            if let Op::Pool { out_dims, .. } = e.op {
                e.argmax = vec![0; out_dims.0 * out_dims.1 * batch];
            }
        }
    }

    /// Copies the chosen samples into the input buffer.
    pub fn load_batch(&mut self, set: &ImageSet, indices: &[usize]) -> Result<(), PhenotypeError> {
        if set.dims() != self.input_dims {
            return Err(PhenotypeError::InputShape {
                expected: self.input_dims,
                found: set.dims(),
            });
        }
        if set.classes != self.num_classes() {
            return Err(PhenotypeError::Classes {
                expected: self.num_classes(),
                found: set.classes,
            });
        }
        let batch = indices.len();
        self.resize(batch);
        let input = &mut self.nodes[0].act;
        for (b, &i) in indices.iter().enumerate() {
            for (p, &v) in set.image(i).iter().enumerate() {
                input[p * batch + b] = S::from_f64(v as f64);
            }
        }
        self.labels.clear();
        self.labels.extend(indices.iter().map(|&i| set.labels[i]));
        Ok(())
    }

    /// Runs the loaded batch through the network and leaves class
    /// probabilities in [`Self::probabilities`].
    pub fn forward(&mut self, mode: Mode) {
        let batch = self.batch;
        if !self.frozen {
            for e in &mut self.edges {
                if let Op::Pool {
                    in_dims,
                    out_dims,
                    windows,
                } = &mut e.op
                {
                    *windows = shuffled_windows(*in_dims, *out_dims, &mut self.rng);
                }
            }
        }
        for j in 1..self.nodes.len() {
            let (done, rest) = self.nodes.split_at_mut(j);
            let node = &mut rest[0];
            node.act.fill(S::ZERO);
            for &ei in &node.incoming {
                let e = &mut self.edges[ei];
                let input = &done[e.from].act;
                match &e.op {
                    Op::Conv(geo) => geo.forward(input, &e.weights, &mut node.act, batch),
                    Op::Pool { windows, .. } => {
                        windows.forward(input, &mut node.act, &mut e.argmax, e.weights[0], batch)
                    }
                }
            }
            if node.kind == NodeKind::Hidden {
                self.normalize(j, mode);
            }
        }
        self.softmax();
    }

    fn normalize(&mut self, j: usize, mode: Mode) {
        let NetConfig { bn_alpha, bn_eps, .. } = self.config;
        let relu = self.relu;
        let node = &mut self.nodes[j];
        let (mean, var) = match mode {
            Mode::Infer => (node.running_mean, node.running_var),
            Mode::Train | Mode::Probe => {
                let n = node.act.len() as f64;
                let mean = node.act.iter().map(|v| v.to_f64()).sum::<f64>() / n;
                let var = node.act.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / n;
                if mode == Mode::Train {
                    node.running_mean = (1.0 - bn_alpha) * node.running_mean + bn_alpha * mean;
                    node.running_var = (1.0 - bn_alpha) * node.running_var + bn_alpha * var;
                }
                (mean, var)
            }
        };
        node.inv_std = 1.0 / (var + bn_eps).sqrt();
        let (m, s) = (S::from_f64(mean), S::from_f64(node.inv_std));
        let (g, b) = (node.gamma, node.beta);
        for (a, x) in node.act.iter_mut().zip(node.norm.iter_mut()) {
            *x = (*a - m) * s;
            *a = relu.value(g * *x + b);
        }
    }

    fn softmax(&mut self) {
        let (batch, classes) = (self.batch, self.outputs.len());
        self.probs.resize(batch * classes, 0.0);
        for b in 0..batch {
            let row = &mut self.probs[b * classes..(b + 1) * classes];
            for (c, &o) in self.outputs.iter().enumerate() {
                row[c] = self.nodes[o].act[b].to_f64();
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }

    /// Class probabilities of the last forward pass, sample-major.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Summed cross-entropy and number of correct predictions for the last
    /// forward pass.
    pub fn loss_and_correct(&self) -> (f64, usize) {
        let classes = self.outputs.len();
        let mut loss = 0.0;
        let mut correct = 0;
        for (b, &label) in self.labels.iter().enumerate() {
            let logits: Vec<f64> = self.outputs.iter().map(|&o| self.nodes[o].act[b].to_f64()).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            loss += lse - logits[label as usize];
            let row = &self.probs[b * classes..(b + 1) * classes];
            let best = (0..classes).fold(0, |best, c| if row[c] > row[best] { c } else { best });
            if best == label as usize {
                correct += 1;
            }
        }
        (loss, correct)
    }

    /// Mean cross-entropy of the last forward pass.
    pub fn mean_loss(&self) -> f64 {
        self.loss_and_correct().0 / self.batch.max(1) as f64
    }

    /// Gradients of the mean cross-entropy for the last forward pass.
    pub fn backward(&mut self) {
        let (batch, classes) = (self.batch, self.outputs.len());
        for n in &mut self.nodes {
            n.delta.fill(S::ZERO);
            n.grad_gamma = S::ZERO;
            n.grad_beta = S::ZERO;
        }
        for e in &mut self.edges {
            e.grad.fill(S::ZERO);
        }
        let inv_b = 1.0 / batch as f64;
        for (c, &o) in self.outputs.iter().enumerate() {
            for b in 0..batch {
                let target = if self.labels[b] as usize == c { 1.0 } else { 0.0 };
                self.nodes[o].delta[b] = S::from_f64((self.probs[b * classes + c] - target) * inv_b);
            }
        }
        for j in (1..self.nodes.len()).rev() {
            if self.nodes[j].kind == NodeKind::Hidden {
                self.normalize_backward(j);
            }
            let (done, rest) = self.nodes.split_at_mut(j);
            let node = &rest[0];
            for &ei in &node.incoming {
                let e = &mut self.edges[ei];
                let Node { act, delta, .. } = &mut done[e.from];
                let grad_input = if e.from == 0 { None } else { Some(delta.as_mut_slice()) };
                match &e.op {
                    Op::Conv(geo) => geo.backward(act, &e.weights, &node.delta, &mut e.grad, grad_input, batch),
                    Op::Pool { windows, .. } => {
                        e.grad[0] += windows.backward(act, &node.delta, &e.argmax, e.weights[0], grad_input, batch);
                    }
                }
            }
        }
    }

    /// Turns `delta` from d/d(activation) into d/d(pre-normalization sum).
    fn normalize_backward(&mut self, j: usize) {
        let relu = self.relu;
        let node = &mut self.nodes[j];
        let (g, b) = (node.gamma, node.beta);
        let mut sum_dy = 0.0;
        let mut sum_dy_x = 0.0;
        for (d, x) in node.delta.iter_mut().zip(&node.norm) {
            *d *= relu.slope(g * *x + b);
            sum_dy += d.to_f64();
            sum_dy_x += (*d * *x).to_f64();
        }
        node.grad_gamma = S::from_f64(sum_dy_x);
        node.grad_beta = S::from_f64(sum_dy);
        let n = node.delta.len() as f64;
        let scale = S::from_f64(g.to_f64() * node.inv_std / n);
        let (n_s, sdy, sdx) = (S::from_f64(n), S::from_f64(sum_dy), S::from_f64(sum_dy_x));
        for (d, x) in node.delta.iter_mut().zip(&node.norm) {
            *d = scale * (n_s * *d - sdy - *x * sdx);
        }
    }

    /// Nesterov momentum step; `lambda` shrinks filters and pooling scales
    /// outside the loss gradient.
    pub fn sgd_step(&mut self, mu: f64, eta: f64, lambda: f64) {
        let (mu, eta) = (S::from_f64(mu), S::from_f64(eta));
        let decay = eta * S::from_f64(lambda);
        let step = |w: &mut S, v: &mut S, g: S, decay: S| {
            let old = *w;
            *v = mu * *v - eta * g;
            *w = old + mu * *v - eta * g - decay * old;
        };
        for e in &mut self.edges {
            for ((w, v), g) in e.weights.iter_mut().zip(e.velocity.iter_mut()).zip(&e.grad) {
                step(w, v, *g, decay);
            }
        }
        for n in &mut self.nodes {
            if n.kind == NodeKind::Hidden {
                step(&mut n.gamma, &mut n.vel_gamma, n.grad_gamma, S::ZERO);
                step(&mut n.beta, &mut n.vel_beta, n.grad_beta, S::ZERO);
            }
        }
    }

    /// Copies trained weights and batch-norm state into `genome`.
    pub fn write_back(&self, genome: &mut Genome) {
        for e in &self.edges {
            let gene = genome.edge_mut(e.id).expect("compiled edge exists");
            match &mut gene.weights {
                EdgeWeights::Convolutional { filter, .. } => {
                    for (dst, src) in filter.iter_mut().zip(&e.weights) {
                        *dst = src.to_f64();
                    }
                }
                EdgeWeights::Pooling { scale } => *scale = e.weights[0].to_f64(),
            }
        }
        for n in &self.nodes {
            if n.kind == NodeKind::Hidden {
                let bn = &mut genome.node_mut(n.id).expect("compiled node exists").bn;
                bn.gamma = n.gamma.to_f64();
                bn.beta = n.beta.to_f64();
                bn.running_mean = n.running_mean;
                bn.running_var = n.running_var;
            }
        }
    }

    /// Every trainable scalar, edges first.
    pub fn params(&self) -> Vec<ParamRef> {
        let mut out = Vec::new();
        for (index, e) in self.edges.iter().enumerate() {
            let kind = match e.op {
                Op::Conv(_) => ParamKind::Filter,
                Op::Pool { .. } => ParamKind::Scale,
            };
            out.extend((0..e.weights.len()).map(|offset| ParamRef { kind, index, offset }));
        }
        for (index, n) in self.nodes.iter().enumerate() {
            if n.kind == NodeKind::Hidden {
                for kind in [ParamKind::Gamma, ParamKind::Beta] {
                    out.push(ParamRef { kind, index, offset: 0 });
                }
            }
        }
        out
    }

    pub fn param(&self, p: ParamRef) -> S {
        match p.kind {
            ParamKind::Filter | ParamKind::Scale => self.edges[p.index].weights[p.offset],
            ParamKind::Gamma => self.nodes[p.index].gamma,
            ParamKind::Beta => self.nodes[p.index].beta,
        }
    }

    pub fn set_param(&mut self, p: ParamRef, v: S) {
        match p.kind {
            ParamKind::Filter | ParamKind::Scale => self.edges[p.index].weights[p.offset] = v,
            ParamKind::Gamma => self.nodes[p.index].gamma = v,
            ParamKind::Beta => self.nodes[p.index].beta = v,
        }
    }

    pub fn grad(&self, p: ParamRef) -> S {
        match p.kind {
            ParamKind::Filter | ParamKind::Scale => self.edges[p.index].grad[p.offset],
            ParamKind::Gamma => self.nodes[p.index].grad_gamma,
            ParamKind::Beta => self.nodes[p.index].grad_beta,
        }
    }

    /// Edge id a parameter belongs to, if it is an edge weight.
    pub fn param_edge(&self, p: ParamRef) -> Option<EdgeId> {
        matches!(p.kind, ParamKind::Filter | ParamKind::Scale).then(|| self.edges[p.index].id)
    }

    /// Identifies the piecewise-linear region the last forward pass ran in:
    /// the activation segment of every hidden unit and every pooling
    /// argmax. Two passes with equal signatures lie on the same smooth
    /// piece of the loss.
    pub fn region_signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        for n in &self.nodes {
            if n.kind == NodeKind::Hidden {
                sig.extend(n.norm.iter().map(|x| self.relu.region(n.gamma * *x + n.beta)));
            }
        }
        for e in &self.edges {
            sig.extend_from_slice(&e.argmax);
        }
        sig
    }

    /// Mean and variance of a hidden node's normalized, affine-transformed
    /// output for the last pass, before the activation.
    pub fn normalized_moments(&self, id: NodeId) -> Option<(f64, f64)> {
        let n = self.nodes.iter().find(|n| n.id == id && n.kind == NodeKind::Hidden)?;
        let ys: Vec<f64> = n.norm.iter().map(|x| (n.gamma * *x + n.beta).to_f64()).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
        Some((mean, var))
    }

    /// Node ids in evaluation order, pruned nodes excluded.
    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.iter().map(|n| n.id).collect()
    }
}

fn shuffled_windows(in_dims: (usize, usize), out_dims: (usize, usize), rng: &mut ChaCha8Rng) -> PoolWindows {
    let cols = pooling_partition(in_dims.0, out_dims.0, rng).expect("validated pooling shape");
    let rows = pooling_partition(in_dims.1, out_dims.1, rng).expect("validated pooling shape");
    PoolWindows::new(in_dims, &rows, &cols)
}
