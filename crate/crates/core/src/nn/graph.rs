use std::collections::HashSet;

use super::init::{fill_uniform, he_bound, linear_bound};
use super::layers::*;
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::seeding::Rng;

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    /// Output shape for a single sample (`n == 1`).
    pub shape: Shape,
}

/// A directed acyclic network stored in topological order. Node 0 is the
/// input, the last node is the output.
#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<Node>,
}

/// Activations and per-node caches from a training forward pass.
pub struct Tape {
    acts: Vec<Tensor>,
    caches: Vec<Cache>,
}

impl Tape {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("network has at least one node")
    }
}

impl Network {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn input_shape(&self) -> Shape {
        self.nodes[0].shape
    }

    pub fn output_shape(&self) -> Shape {
        self.nodes.last().expect("non-empty").shape
    }

    pub fn node_index(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Every stored value, including batch-norm running statistics.
    pub fn param_count(&self) -> usize {
        self.params().map(|(_, p)| p.numel()).sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.params().filter(|(_, p)| p.trainable()).map(|(_, p)| p.numel()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = (String, &Param)> {
        self.nodes
            .iter()
            .flat_map(|n| n.op.params().into_iter().map(move |p| (format!("{}.{}", n.name, p.name), p)))
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for n in self.nodes.iter_mut() {
            let name = n.name.clone();
            for p in n.op.params_mut() {
                out.push((format!("{name}.{}", p.name), p));
            }
        }
        out
    }

    pub fn is_allocated(&self) -> bool {
        self.params().all(|(_, p)| p.is_allocated())
    }

    /// Allocates and initializes every parameter: He-uniform for
    /// convolutions and hidden dense layers, unit/zero batch-norm state.
    pub fn initialize(&mut self, rng: &mut Rng) {
        let last = self.nodes.len() - 1;
        for (i, node) in self.nodes.iter_mut().enumerate() {
            init_op(&mut node.op, i == last, rng);
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn set_frozen(&mut self, upto: NodeId, frozen: bool) {
        for node in self.nodes.iter_mut().take(upto) {
            for p in node.op.params_mut() {
                p.frozen = frozen;
            }
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = self.input_shape();
        let got = x.shape;
        if (got.c, got.h, got.w) != (want.c, want.h, want.w) || got.n == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("(n, {}, {}, {})", want.c, want.h, want.w),
                got: got.to_string(),
            });
        }
        if !self.is_allocated() {
            return Err(Error::InvalidConfig("network parameters are not initialized".into()));
        }
        Ok(())
    }

    /// Inference pass; batch norm uses running statistics and dropout is
    /// the identity.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut remaining = vec![0usize; self.nodes.len()];
        for node in &self.nodes {
            for &i in &node.inputs {
                remaining[i] += 1;
            }
        }
        let last = self.nodes.len() - 1;
        let mut acts: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let out = if i == 0 {
                x.clone()
            } else {
                let inputs: Vec<&Tensor> = node
                    .inputs
                    .iter()
                    .map(|&j| acts[j].as_ref().expect("input activation alive"))
                    .collect();
                eval_op(&node.op, &inputs)
            };
            for &j in &node.inputs {
                remaining[j] -= 1;
                if remaining[j] == 0 && j != last {
                    acts[j] = None;
                }
            }
            acts[i] = Some(out);
        }
        Ok(acts.pop().flatten().expect("output computed"))
    }

    /// Training pass: batch-statistics normalization, stochastic dropout,
    /// running statistics updated in place.
    pub fn forward_train(&mut self, x: &Tensor, rng: &mut Rng) -> Result<Tape> {
        self.check_input(x)?;
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut caches = Vec::with_capacity(self.nodes.len());
        for i in 0..self.nodes.len() {
            if i == 0 {
                acts.push(x.clone());
                caches.push(Cache::None);
                continue;
            }
            let node = &mut self.nodes[i];
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&j| &acts[j]).collect();
            let (out, cache) = match &mut node.op {
                Op::BatchNorm(bn) => bn_forward_train(bn, inputs[0]),
                Op::MaxPool(p) => maxpool_forward(p, inputs[0], true),
                Op::Dropout(rate) if *rate > 0.0 => {
                    let mask = dropout_mask(*rate, inputs[0].data.len(), rng);
                    (apply_mask(inputs[0], &mask, 1), Cache::Mask(mask))
                }
                Op::DropPath(rate) if *rate > 0.0 => {
                    let s = inputs[0].shape;
                    let mask = dropout_mask(*rate, s.n, rng);
                    (apply_mask(inputs[0], &mask, s.sample_len()), Cache::Mask(mask))
                }
                op => (eval_op(op, &inputs), Cache::None),
            };
            acts.push(out);
            caches.push(cache);
        }
        Ok(Tape { acts, caches })
    }

    /// Accumulates parameter gradients for `d loss / d output = dy`.
    pub fn backward(&mut self, tape: &Tape, dy: Tensor) {
        let count = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; count];
        grads[count - 1] = Some(dy);
        for i in (1..count).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &mut self.nodes[i];
            let inputs = node.inputs.clone();
            let x = &tape.acts[inputs[0]];
            let need_dx = inputs[0] != 0;
            let input_grads: Vec<Option<Tensor>> = match &mut node.op {
                Op::Input => Vec::new(),
                Op::Conv(c) => vec![conv_backward(c, x, &g, need_dx)],
                Op::Dense(d) => vec![dense_backward(d, x, &g, need_dx)],
                Op::BatchNorm(bn) => vec![Some(bn_backward(bn, &tape.caches[i], &g))],
                op @ (Op::Relu | Op::Sigmoid | Op::Swish) => {
                    vec![Some(activation_backward(op, x, &tape.acts[i], &g))]
                }
                Op::MaxPool(_) => vec![Some(maxpool_backward(x, &tape.caches[i], &g))],
                Op::AvgPool(p) => vec![Some(avgpool_backward(p, x, &g))],
                Op::GlobalAvgPool => vec![Some(gap_backward(x, &g))],
                Op::AdaptiveAvgPool(..) => vec![Some(adaptive_avgpool_backward(x, &g))],
                Op::Flatten => vec![Some(Tensor { shape: x.shape, data: g.data })],
                Op::Add => inputs.iter().map(|_| Some(g.clone())).collect(),
                Op::Concat => {
                    let shapes: Vec<Shape> = inputs.iter().map(|&j| tape.acts[j].shape).collect();
                    concat_backward(&shapes, &g).into_iter().map(Some).collect()
                }
                Op::ChannelScale => {
                    let (dx, ds) = channel_scale_backward(x, &tape.acts[inputs[1]], &g);
                    vec![Some(dx), Some(ds)]
                }
                Op::Dropout(_) => match &tape.caches[i] {
                    Cache::Mask(mask) => vec![Some(apply_mask(&g, mask, 1))],
                    _ => vec![Some(g)],
                },
                Op::DropPath(_) => match &tape.caches[i] {
                    Cache::Mask(mask) => vec![Some(apply_mask(&g, mask, x.shape.sample_len()))],
                    _ => vec![Some(g)],
                },
            };
            for (&j, dg) in inputs.iter().zip(input_grads) {
                let Some(dg) = dg else { continue };
                if j == 0 {
                    continue;
                }
                match grads[j].as_mut() {
                    Some(acc) => acc.add_assign(&dg),
                    None => grads[j] = Some(dg),
                }
            }
        }
    }

    /// Drops every node from `at` onward. Fails if a retained node is not a
    /// prefix-closed subgraph (nothing before `at` may read a removed node).
    pub fn truncate(&mut self, at: NodeId) -> Result<()> {
        if at == 0 || at > self.nodes.len() {
            return Err(Error::InvalidConfig(format!("cannot truncate at node {at}")));
        }
        self.nodes.truncate(at);
        Ok(())
    }

    /// Appends a dense layer on top of the current output, initialized with
    /// the default linear-classifier bound.
    pub fn append_dense(&mut self, name: &str, out_f: usize, rng: &mut Rng) -> NodeId {
        let last = self.nodes.len() - 1;
        let in_f = self.nodes[last].shape.sample_len();
        let mut op = Op::Dense(Dense {
            in_f,
            out_f,
            weight: Param::new("weight", vec![out_f, in_f], ParamKind::Weight),
            bias: Param::new("bias", vec![out_f], ParamKind::Weight),
        });
        init_op(&mut op, true, rng);
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs: vec![last],
            shape: Shape::new(1, out_f, 1, 1),
        });
        self.nodes.len() - 1
    }

    /// Parameters stored in nodes before `end`.
    pub fn param_count_before(&self, end: NodeId) -> usize {
        self.nodes[..end]
            .iter()
            .flat_map(|n| n.op.params())
            .map(|p| p.numel())
            .sum()
    }
}

fn eval_op(op: &Op, inputs: &[&Tensor]) -> Tensor {
    let x = inputs[0];
    match op {
        Op::Input => x.clone(),
        Op::Conv(c) => conv_forward(c, x),
        Op::BatchNorm(bn) => bn_forward_eval(bn, x),
        Op::Dense(d) => dense_forward(d, x),
        Op::Relu | Op::Sigmoid | Op::Swish => activation_forward(op, x),
        Op::MaxPool(p) => maxpool_forward(p, x, false).0,
        Op::AvgPool(p) => avgpool_forward(p, x),
        Op::GlobalAvgPool => gap_forward(x),
        Op::AdaptiveAvgPool(h, w) => adaptive_avgpool_forward(x, *h, *w),
        Op::Flatten => Tensor {
            shape: Shape::new(x.shape.n, x.shape.sample_len(), 1, 1),
            data: x.data.clone(),
        },
        Op::Add => {
            let mut out = x.clone();
            for t in &inputs[1..] {
                out.add_assign(t);
            }
            out
        }
        Op::Concat => concat_forward(inputs),
        Op::ChannelScale => channel_scale_forward(x, inputs[1]),
        Op::Dropout(_) | Op::DropPath(_) => x.clone(),
    }
}

fn alloc(p: &mut Param, fill: f32) {
    p.value = vec![fill; p.numel()];
    p.grad = Vec::new();
}

fn init_op(op: &mut Op, is_output: bool, rng: &mut Rng) {
    match op {
        Op::Conv(c) => {
            let fan_in = if c.depthwise { c.kernel.0 * c.kernel.1 } else { c.in_c * c.kernel.0 * c.kernel.1 };
            alloc(&mut c.weight, 0.0);
            fill_uniform(&mut c.weight.value, he_bound(fan_in), rng);
            if let Some(b) = c.bias.as_mut() {
                alloc(b, 0.0);
            }
        }
        Op::Dense(d) => {
            alloc(&mut d.weight, 0.0);
            let bound = if is_output { linear_bound(d.in_f) } else { he_bound(d.in_f) };
            fill_uniform(&mut d.weight.value, bound, rng);
            alloc(&mut d.bias, 0.0);
        }
        Op::BatchNorm(bn) => {
            if let Some(g) = bn.gamma.as_mut() {
                alloc(g, 1.0);
            }
            alloc(&mut bn.beta, 0.0);
            alloc(&mut bn.running_mean, 0.0);
            alloc(&mut bn.running_var, 1.0);
        }
        _ => {}
    }
}

/// Builds a [`Network`] while inferring shapes. Invalid geometry (input too
/// small for a kernel) is recorded and reported by [`GraphBuilder::finish`].
pub struct GraphBuilder {
    nodes: Vec<Node>,
    error: Option<String>,
}

impl GraphBuilder {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        GraphBuilder {
            nodes: vec![Node {
                name: "input".into(),
                op: Op::Input,
                inputs: Vec::new(),
                shape: Shape::new(1, channels, height, width),
            }],
            error: None,
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id].shape
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.nodes[id].shape.c
    }

    fn fail(&mut self, msg: String) -> Shape {
        if self.error.is_none() {
            self.error = Some(msg);
        }
        Shape::new(1, 1, 1, 1)
    }

    fn push(&mut self, name: impl Into<String>, op: Op, inputs: Vec<NodeId>) -> NodeId {
        let name = name.into();
        let first = self.nodes[inputs[0]].shape;
        let shape = match &op {
            Op::Conv(c) => match conv_output_shape(c, first) {
                Some(s) => s,
                None => self.fail(format!("{name}: input {}x{} too small", first.h, first.w)),
            },
            Op::MaxPool(p) | Op::AvgPool(p) => match pool_output_shape(p, first) {
                Some(s) => s,
                None => self.fail(format!("{name}: input {}x{} too small", first.h, first.w)),
            },
            Op::Dense(d) => Shape::new(1, d.out_f, 1, 1),
            Op::GlobalAvgPool => Shape::new(1, first.c, 1, 1),
            Op::AdaptiveAvgPool(h, w) => Shape::new(1, first.c, *h, *w),
            Op::Flatten => Shape::new(1, first.sample_len(), 1, 1),
            Op::Concat => {
                let c = inputs.iter().map(|&i| self.nodes[i].shape.c).sum();
                if inputs.iter().any(|&i| (self.nodes[i].shape.h, self.nodes[i].shape.w) != (first.h, first.w)) {
                    self.fail(format!("{name}: concat inputs disagree spatially"));
                }
                Shape::new(1, c, first.h, first.w)
            }
            Op::Add => {
                if inputs.iter().any(|&i| self.nodes[i].shape != first) {
                    let shapes: Vec<String> = inputs.iter().map(|&i| self.nodes[i].shape.to_string()).collect();
                    self.fail(format!("{name}: add inputs disagree: {}", shapes.join(" vs ")));
                }
                first
            }
            _ => first,
        };
        self.nodes.push(Node { name, op, inputs, shape });
        self.nodes.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        x: NodeId,
        out_c: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
        bias: bool,
    ) -> NodeId {
        let in_c = self.channels(x);
        let op = Op::Conv(Conv2d {
            in_c,
            out_c,
            kernel,
            stride,
            padding,
            depthwise: false,
            weight: Param::new("weight", vec![out_c, in_c, kernel.0, kernel.1], ParamKind::Weight),
            bias: bias.then(|| Param::new("bias", vec![out_c], ParamKind::Weight)),
        });
        self.push(name, op, vec![x])
    }

    pub fn depthwise(&mut self, name: &str, x: NodeId, kernel: usize, stride: usize, padding: Padding, bias: bool) -> NodeId {
        let c = self.channels(x);
        let op = Op::Conv(Conv2d {
            in_c: c,
            out_c: c,
            kernel: (kernel, kernel),
            stride,
            padding,
            depthwise: true,
            weight: Param::new("weight", vec![c, 1, kernel, kernel], ParamKind::Weight),
            bias: bias.then(|| Param::new("bias", vec![c], ParamKind::Weight)),
        });
        self.push(name, op, vec![x])
    }

    pub fn batch_norm(&mut self, name: &str, x: NodeId, eps: f32, scale: bool) -> NodeId {
        let c = self.channels(x);
        let op = Op::BatchNorm(BatchNorm {
            channels: c,
            eps,
            momentum: 0.1,
            gamma: scale.then(|| Param::new("gamma", vec![c], ParamKind::Weight)),
            beta: Param::new("beta", vec![c], ParamKind::Weight),
            running_mean: Param::new("running_mean", vec![c], ParamKind::Statistic),
            running_var: Param::new("running_var", vec![c], ParamKind::Statistic),
        });
        self.push(name, op, vec![x])
    }

    pub fn dense(&mut self, name: &str, x: NodeId, out_f: usize) -> NodeId {
        let in_f = self.shape(x).sample_len();
        let op = Op::Dense(Dense {
            in_f,
            out_f,
            weight: Param::new("weight", vec![out_f, in_f], ParamKind::Weight),
            bias: Param::new("bias", vec![out_f], ParamKind::Weight),
        });
        self.push(name, op, vec![x])
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push(name, Op::Relu, vec![x])
    }

    pub fn sigmoid(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push(name, Op::Sigmoid, vec![x])
    }

    pub fn swish(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push(name, Op::Swish, vec![x])
    }

    pub fn max_pool(&mut self, name: &str, x: NodeId, kernel: usize, stride: usize, padding: Padding) -> NodeId {
        self.push(name, Op::MaxPool(Pool { kernel, stride, padding }), vec![x])
    }

    pub fn avg_pool(&mut self, name: &str, x: NodeId, kernel: usize, stride: usize, padding: Padding) -> NodeId {
        self.push(name, Op::AvgPool(Pool { kernel, stride, padding }), vec![x])
    }

    pub fn global_avg_pool(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push(name, Op::GlobalAvgPool, vec![x])
    }

    pub fn adaptive_avg_pool(&mut self, name: &str, x: NodeId, out: (usize, usize)) -> NodeId {
        self.push(name, Op::AdaptiveAvgPool(out.0, out.1), vec![x])
    }

    pub fn flatten(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push(name, Op::Flatten, vec![x])
    }

    pub fn add(&mut self, name: &str, xs: &[NodeId]) -> NodeId {
        self.push(name, Op::Add, xs.to_vec())
    }

    pub fn concat(&mut self, name: &str, xs: &[NodeId]) -> NodeId {
        self.push(name, Op::Concat, xs.to_vec())
    }

    pub fn channel_scale(&mut self, name: &str, x: NodeId, scale: NodeId) -> NodeId {
        self.push(name, Op::ChannelScale, vec![x, scale])
    }

    pub fn dropout(&mut self, name: &str, x: NodeId, rate: f32) -> NodeId {
        self.push(name, Op::Dropout(rate), vec![x])
    }

    pub fn drop_path(&mut self, name: &str, x: NodeId, rate: f32) -> NodeId {
        self.push(name, Op::DropPath(rate), vec![x])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn finish(self) -> Result<Network> {
        if let Some(e) = self.error {
            return Err(Error::InvalidConfig(e));
        }
        let mut seen = HashSet::new();
        for n in &self.nodes {
            if !n.op.params().is_empty() && !seen.insert(n.name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate layer name {}", n.name)));
            }
        }
        Ok(Network { nodes: self.nodes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    // Smooth activations and average pooling keep finite differences away
    // from kinks.
    fn tiny() -> Network {
        let mut b = GraphBuilder::new(3, 8, 8);
        let x = b.input();
        let c1 = b.conv("c1", x, 4, (3, 3), 1, Padding::Same, false);
        let n1 = b.batch_norm("bn1", c1, 1e-3, true);
        let r1 = b.swish("r1", n1);
        let c2 = b.conv("c2", r1, 4, (3, 3), 1, Padding::Same, true);
        let s = b.add("res", &[c2, r1]);
        let g = b.global_avg_pool("gap", s);
        let se = b.sigmoid("gate", g);
        let scaled = b.channel_scale("scale", s, se);
        let p = b.avg_pool("pool", scaled, 2, 2, Padding::Valid);
        let f = b.flatten("flat", p);
        let d = b.dropout("drop", f, 0.0);
        b.dense("fc", d, 3);
        let mut net = b.finish().unwrap();
        net.initialize(&mut Rng::seed_from_u64(1));
        net
    }

    #[test]
    fn shapes_and_counts() {
        let net = tiny();
        assert_eq!(net.output_shape(), Shape::new(1, 3, 1, 1));
        // c1 108 + bn 16 + c2 148 + fc (64*3+3)
        assert_eq!(net.param_count(), 108 + 16 + 148 + 195);
        assert_eq!(net.trainable_param_count(), 108 + 8 + 148 + 195);
    }

    #[test]
    fn too_small_input_is_reported() {
        let mut b = GraphBuilder::new(3, 2, 2);
        let x = b.input();
        b.conv("c", x, 2, (3, 3), 1, Padding::Valid, false);
        assert!(matches!(b.finish(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn train_and_eval_agree_without_bn_or_dropout_noise() {
        let mut net = tiny();
        let mut rng = Rng::seed_from_u64(3);
        let mut x = Tensor::zeros(Shape::new(2, 3, 8, 8));
        fill_uniform(&mut x.data, 1.0, &mut rng);
        let eval = net.forward(&x).unwrap();
        assert_eq!(eval.shape, Shape::new(2, 3, 1, 1));
        let tape = net.forward_train(&x, &mut rng).unwrap();
        assert_eq!(tape.output().shape, eval.shape);
    }

    #[test]
    fn whole_network_gradient_matches_finite_differences() {
        let mut net = tiny();
        let mut rng = Rng::seed_from_u64(5);
        let mut x = Tensor::zeros(Shape::new(3, 3, 8, 8));
        fill_uniform(&mut x.data, 1.0, &mut rng);
        let w: Vec<f32> = (0..9).map(|i| (i as f32 - 4.0) / 4.0).collect();
        let objective = |net: &mut Network| -> f64 {
            let tape = net.forward_train(&x, &mut Rng::seed_from_u64(0)).unwrap();
            tape.output().data.iter().zip(&w).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let base = net.clone();
        let tape = net.forward_train(&x, &mut Rng::seed_from_u64(0)).unwrap();
        net.backward(&tape, Tensor::from_vec(Shape::new(3, 3, 1, 1), w.clone()));
        let analytic: Vec<(String, Vec<f32>)> = net.params().map(|(n, p)| (n, p.grad.clone())).collect();
        for (name, grad) in analytic {
            if name.contains("running") {
                continue;
            }
            for i in (0..grad.len()).step_by(3) {
                let mut plus = base.clone();
                let mut minus = base.clone();
                for (pn, p) in plus.params_mut() {
                    if pn == name {
                        p.value[i] += 1e-2;
                    }
                }
                for (pn, p) in minus.params_mut() {
                    if pn == name {
                        p.value[i] -= 1e-2;
                    }
                }
                let num = (objective(&mut plus) - objective(&mut minus)) / 2e-2;
                assert!(
                    (num - grad[i] as f64).abs() < 2e-2 * (1.0 + num.abs()),
                    "{name}[{i}]: numeric {num} analytic {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn input_shape_is_checked() {
        let net = tiny();
        let x = Tensor::zeros(Shape::new(1, 3, 9, 8));
        assert!(matches!(net.forward(&x), Err(Error::ShapeMismatch { .. })));
    }
}
