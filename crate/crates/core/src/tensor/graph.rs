//! Append-only reverse-mode autodiff graph.
//!
//! Nodes are appended in topological order by construction (an op can only
//! reference already-inserted nodes), so a forward pass is a single sweep in
//! insertion order and a backward pass is the reverse sweep.  Gradients are
//! kept for every node, not just leaves, because attribution maps need the
//! gradient at an interior activation.

use super::conv::ConvGeom;
use super::{conv, Tensor};
use crate::error::{Error, Result};

/// Index of a node in its graph.  Valid only for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Spatial padding scheme for `conv2d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output shrinks by k-1 before striding.
    Valid,
    /// Output is ceil(in/stride); odd total padding goes bottom/right.
    Same,
}

/// One differentiable operation.  Inputs are node indices into the same graph.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    /// input [N,CI,H,W], weight [CO,CI,K,K], bias [CO].
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: Padding,
    },
    /// Transposed convolution: input [N,CI,H,W], weight [CI,CO,K,K], bias [CO].
    Deconv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
        out_pad: usize,
    },
    /// input [N,FI], weight [FO,FI], bias [FO].
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Relu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Clamp {
        input: NodeId,
        lo: f64,
        hi: f64,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddScalar(NodeId, f64),
    MulScalar(NodeId, f64),
    /// Sum of all elements, producing shape [1].
    ReduceSum(NodeId),
    Reshape(NodeId, Vec<usize>),
}

struct Node {
    op: Op,
    out: Tensor,
    grad: Tensor,
}

/// The tape.  `leaf` inserts inputs/parameters, op builders append compute
/// nodes with shape validation, `forward` evaluates every node in insertion
/// order, `backward` propagates from a scalar root in reverse order.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            grad: Tensor::zeros(&shape),
            out: Tensor::zeros(&shape),
        });
        id
    }

    fn shape_err(&self, detail: String) -> Error {
        Error::ShapeMismatch {
            node: self.nodes.len(),
            detail,
        }
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.node(id).out.shape()
    }

    /// Cached output of `id` from the last `forward` call.
    pub fn output(&self, id: NodeId) -> &Tensor {
        &self.node(id).out
    }

    /// Gradient of the last `backward` root with respect to node `id`.
    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.node(id).grad
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        let id = self.push(Op::Leaf, shape);
        self.nodes[id.0].out = value;
        id
    }

    /// Rebind a leaf's value without changing graph structure.  The new value
    /// must keep the leaf's shape so downstream geometry stays valid.
    pub fn set_leaf(&mut self, id: NodeId, value: &Tensor) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::ShapeMismatch {
                node: id.0,
                detail: "set_leaf target is not a leaf".into(),
            });
        }
        if node.out.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                node: id.0,
                detail: format!(
                    "leaf shape {:?} cannot be rebound to {:?}",
                    node.out.shape(),
                    value.shape()
                ),
            });
        }
        node.out.data_mut().copy_from_slice(value.data());
        Ok(())
    }

    /// Mutable access to a leaf's value buffer, for in-place optimizer
    /// updates.  The shape cannot change through this path.
    pub fn leaf_mut(&mut self, id: NodeId) -> Result<&mut [f64]> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::ShapeMismatch {
                node: id.0,
                detail: "leaf_mut target is not a leaf".into(),
            });
        }
        Ok(node.out.data_mut())
    }

    fn conv_geom(&self, op: &Op) -> Option<ConvGeom> {
        match op {
            Op::Conv2d {
                input,
                weight,
                stride,
                padding,
                ..
            } => {
                let xs = self.shape(*input);
                let k = self.shape(*weight)[2];
                match padding {
                    Padding::Valid => ConvGeom::valid(xs[2], xs[3], k, *stride),
                    Padding::Same => Some(ConvGeom::same(xs[2], xs[3], k, *stride)),
                }
            }
            Op::Deconv2d {
                input,
                weight,
                stride,
                pad,
                out_pad,
                ..
            } => {
                let xs = self.shape(*input);
                let k = self.shape(*weight)[2];
                ConvGeom::deconv(xs[2], xs[3], k, *stride, *pad, *out_pad)
            }
            _ => None,
        }
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.shape(input).to_vec(),
            self.shape(weight).to_vec(),
            self.shape(bias).to_vec(),
        );
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 {
            return Err(self.shape_err(format!(
                "conv2d expects input [N,CI,H,W], weight [CO,CI,K,K], bias [CO]; got {xs:?}, {ws:?}, {bs:?}"
            )));
        }
        if ws[1] != xs[1] || ws[2] != ws[3] || bs[0] != ws[0] || stride == 0 {
            return Err(self.shape_err(format!(
                "conv2d weight {ws:?} incompatible with input {xs:?}, bias {bs:?}, stride {stride}"
            )));
        }
        let op = Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            padding,
        };
        let geom = self
            .conv_geom(&op)
            .ok_or_else(|| self.shape_err(format!("conv2d kernel {} exceeds input {xs:?}", ws[2])))?;
        let shape = vec![xs[0], ws[0], geom.out_h, geom.out_w];
        Ok(self.push(op, shape))
    }

    pub fn deconv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.shape(input).to_vec(),
            self.shape(weight).to_vec(),
            self.shape(bias).to_vec(),
        );
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 {
            return Err(self.shape_err(format!(
                "deconv2d expects input [N,CI,H,W], weight [CI,CO,K,K], bias [CO]; got {xs:?}, {ws:?}, {bs:?}"
            )));
        }
        if ws[0] != xs[1] || ws[2] != ws[3] || bs[0] != ws[1] || stride == 0 || out_pad >= stride {
            return Err(self.shape_err(format!(
                "deconv2d weight {ws:?} incompatible with input {xs:?}, bias {bs:?}, stride {stride}, out_pad {out_pad}"
            )));
        }
        let op = Op::Deconv2d {
            input,
            weight,
            bias,
            stride,
            pad,
            out_pad,
        };
        let geom = self.conv_geom(&op).ok_or_else(|| {
            self.shape_err(format!(
                "deconv2d geometry collapses: input {xs:?}, k {}, stride {stride}, pad {pad}",
                ws[2]
            ))
        })?;
        let shape = vec![xs[0], ws[1], geom.in_h, geom.in_w];
        Ok(self.push(op, shape))
    }

    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.shape(input).to_vec(),
            self.shape(weight).to_vec(),
            self.shape(bias).to_vec(),
        );
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || ws[1] != xs[1] || bs[0] != ws[0] {
            return Err(self.shape_err(format!(
                "linear expects input [N,FI], weight [FO,FI], bias [FO]; got {xs:?}, {ws:?}, {bs:?}"
            )));
        }
        let shape = vec![xs[0], ws[0]];
        Ok(self.push(
            Op::Linear {
                input,
                weight,
                bias,
            },
            shape,
        ))
    }

    fn unary(&mut self, op: Op, input: NodeId) -> NodeId {
        let shape = self.shape(input).to_vec();
        self.push(op, shape)
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        self.unary(Op::Relu(input), input)
    }

    pub fn softplus(&mut self, input: NodeId) -> NodeId {
        self.unary(Op::Softplus(input), input)
    }

    pub fn exp(&mut self, input: NodeId) -> NodeId {
        self.unary(Op::Exp(input), input)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        self.unary(Op::Sigmoid(input), input)
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        self.unary(Op::Tanh(input), input)
    }

    pub fn clamp(&mut self, input: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if !(lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "clamp bounds must satisfy lo < hi; got [{lo}, {hi}]"
            )));
        }
        Ok(self.unary(Op::Clamp { input, lo, hi }, input))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, make: impl FnOnce(NodeId, NodeId) -> Op) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err(format!(
                "elementwise op requires equal shapes; got {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(make(a, b), shape))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Add)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Mul)
    }

    pub fn add_scalar(&mut self, input: NodeId, c: f64) -> NodeId {
        self.unary(Op::AddScalar(input, c), input)
    }

    pub fn mul_scalar(&mut self, input: NodeId, c: f64) -> NodeId {
        self.unary(Op::MulScalar(input, c), input)
    }

    pub fn reduce_sum(&mut self, input: NodeId) -> NodeId {
        self.push(Op::ReduceSum(input), vec![1])
    }

    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n != self.node(input).out.numel() {
            return Err(self.shape_err(format!(
                "reshape of {:?} to {shape:?} changes element count",
                self.shape(input)
            )));
        }
        Ok(self.push(Op::Reshape(input, shape.clone()), shape))
    }

    /// Evaluate every node in insertion order and return the root's output.
    /// Purity: identical leaf values produce bit-identical outputs.
    pub fn forward(&mut self, root: NodeId) -> Result<&Tensor> {
        for i in 0..self.nodes.len() {
            // Split so the node being written never aliases its inputs;
            // ops only reference earlier nodes.
            let (done, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let out_of = |id: NodeId| &done[id.0].out;
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    ..
                } => {
                    let g = conv_geom_of(done, &node.op);
                    let xs = out_of(*input).shape();
                    let (n, ci, co) = (xs[0], xs[1], out_of(*weight).shape()[0]);
                    conv::conv_forward(
                        &g,
                        n,
                        ci,
                        co,
                        out_of(*input).data(),
                        out_of(*weight).data(),
                        Some(out_of(*bias).data()),
                        node.out.data_mut(),
                    );
                }
                Op::Deconv2d {
                    input,
                    weight,
                    bias,
                    ..
                } => {
                    let g = conv_geom_of(done, &node.op);
                    let xs = out_of(*input).shape();
                    let ws = out_of(*weight).shape();
                    // The deconv input plays the mirror conv's output role.
                    let (n, co_mirror, ci_mirror) = (xs[0], xs[1], ws[1]);
                    let bias_v = out_of(*bias).data();
                    let plane = g.in_h * g.in_w;
                    for b in 0..n {
                        for c in 0..ci_mirror {
                            let row = &mut node.out.data_mut()[(b * ci_mirror + c) * plane..][..plane];
                            row.fill(bias_v[c]);
                        }
                    }
                    conv::conv_backward_input(
                        &g,
                        n,
                        ci_mirror,
                        co_mirror,
                        out_of(*input).data(),
                        out_of(*weight).data(),
                        node.out.data_mut(),
                    );
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let x = out_of(*input);
                    let w = out_of(*weight);
                    let bv = out_of(*bias).data();
                    let (n, fi) = (x.shape()[0], x.shape()[1]);
                    let fo = w.shape()[0];
                    let (xd, wd) = (x.data(), w.data());
                    let yd = node.out.data_mut();
                    for b in 0..n {
                        let x_row = &xd[b * fi..][..fi];
                        for o in 0..fo {
                            let w_row = &wd[o * fi..][..fi];
                            let mut acc = bv[o];
                            for (xv, wv) in x_row.iter().zip(w_row) {
                                acc += xv * wv;
                            }
                            yd[b * fo + o] = acc;
                        }
                    }
                }
                Op::Relu(a) => map_unary(out_of(*a), &mut node.out, |v| v.max(0.0)),
                Op::Softplus(a) => {
                    // Stable: softplus(x) = max(x,0) + ln(1 + e^{-|x|}).
                    map_unary(out_of(*a), &mut node.out, |v| v.max(0.0) + (-v.abs()).exp().ln_1p())
                }
                Op::Exp(a) => map_unary(out_of(*a), &mut node.out, f64::exp),
                Op::Sigmoid(a) => map_unary(out_of(*a), &mut node.out, sigmoid),
                Op::Tanh(a) => map_unary(out_of(*a), &mut node.out, f64::tanh),
                Op::Clamp { input, lo, hi } => {
                    let (lo, hi) = (*lo, *hi);
                    map_unary(out_of(*input), &mut node.out, |v| v.clamp(lo, hi))
                }
                Op::Add(a, b) => map_binary(out_of(*a), out_of(*b), &mut node.out, |x, y| x + y),
                Op::Mul(a, b) => map_binary(out_of(*a), out_of(*b), &mut node.out, |x, y| x * y),
                Op::AddScalar(a, c) => {
                    let c = *c;
                    map_unary(out_of(*a), &mut node.out, |v| v + c)
                }
                Op::MulScalar(a, c) => {
                    let c = *c;
                    map_unary(out_of(*a), &mut node.out, |v| v * c)
                }
                Op::ReduceSum(a) => {
                    node.out.data_mut()[0] = out_of(*a).data().iter().sum();
                }
                Op::Reshape(a, _) => node.out.data_mut().copy_from_slice(out_of(*a).data()),
            }
        }
        Ok(&self.node(root).out)
    }

    /// Propagate d(root)/d(node) into every node's gradient buffer.  The root
    /// must be a single-element tensor and `forward` must have run since the
    /// last leaf rebinding.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.node(root).out.numel() != 1 {
            return Err(Error::NonScalarRoot(self.shape(root).to_vec()));
        }
        for node in &mut self.nodes {
            node.grad.data_mut().fill(0.0);
        }
        self.nodes[root.0].grad.data_mut()[0] = 1.0;
        for i in (0..=root.0).rev() {
            let (done, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if node.grad.data().iter().all(|&g| g == 0.0) {
                continue;
            }
            let dy = &node.grad;
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    ..
                } => {
                    let g = conv_geom_of(done, &node.op);
                    let xs = done[input.0].out.shape().to_vec();
                    let (n, ci, co) = (xs[0], xs[1], done[weight.0].out.shape()[0]);
                    let dyd = dy.data();
                    {
                        let (w_slot, x_slot) = two_mut(done, weight.0, input.0);
                        conv::conv_backward_input(&g, n, ci, co, dyd, w_slot.out.data(), x_slot.grad.data_mut());
                        conv::conv_backward_weight(&g, n, ci, co, x_slot.out.data(), dyd, w_slot.grad.data_mut());
                    }
                    let db = done[bias.0].grad.data_mut();
                    let plane = g.out_h * g.out_w;
                    for b in 0..n {
                        for c in 0..co {
                            db[c] += dyd[(b * co + c) * plane..][..plane].iter().sum::<f64>();
                        }
                    }
                }
                Op::Deconv2d {
                    input,
                    weight,
                    bias,
                    ..
                } => {
                    let g = conv_geom_of(done, &node.op);
                    let xs = done[input.0].out.shape().to_vec();
                    let ws = done[weight.0].out.shape().to_vec();
                    let (n, co_mirror, ci_mirror) = (xs[0], xs[1], ws[1]);
                    let dyd = dy.data();
                    {
                        let (w_slot, x_slot) = two_mut(done, weight.0, input.0);
                        // Mirror roles: dX = conv_forward(dY), dW = backward_weight
                        // with the deconv output gradient as the mirror input.
                        let mut dx = vec![0.0; x_slot.grad.numel()];
                        conv::conv_forward(&g, n, ci_mirror, co_mirror, dyd, w_slot.out.data(), None, &mut dx);
                        for (gd, v) in x_slot.grad.data_mut().iter_mut().zip(&dx) {
                            *gd += v;
                        }
                        conv::conv_backward_weight(&g, n, ci_mirror, co_mirror, dyd, x_slot.out.data(), w_slot.grad.data_mut());
                    }
                    let db = done[bias.0].grad.data_mut();
                    let plane = g.in_h * g.in_w;
                    for b in 0..n {
                        for c in 0..ci_mirror {
                            db[c] += dyd[(b * ci_mirror + c) * plane..][..plane].iter().sum::<f64>();
                        }
                    }
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let xs = done[input.0].out.shape().to_vec();
                    let (n, fi) = (xs[0], xs[1]);
                    let fo = done[weight.0].out.shape()[0];
                    let dyd = dy.data();
                    {
                        let (w_slot, x_slot) = two_mut(done, weight.0, input.0);
                        let wd = w_slot.out.data();
                        let xd = x_slot.out.data();
                        let dw = w_slot.grad.data_mut();
                        for b in 0..n {
                            let x_row = &xd[b * fi..][..fi];
                            for o in 0..fo {
                                let g = dyd[b * fo + o];
                                if g == 0.0 {
                                    continue;
                                }
                                for (dwv, xv) in dw[o * fi..][..fi].iter_mut().zip(x_row) {
                                    *dwv += g * xv;
                                }
                            }
                        }
                        let dx = x_slot.grad.data_mut();
                        for b in 0..n {
                            let dx_row = &mut dx[b * fi..][..fi];
                            for o in 0..fo {
                                let g = dyd[b * fo + o];
                                if g == 0.0 {
                                    continue;
                                }
                                for (dxv, wv) in dx_row.iter_mut().zip(&wd[o * fi..][..fi]) {
                                    *dxv += g * wv;
                                }
                            }
                        }
                    }
                    let db = done[bias.0].grad.data_mut();
                    for b in 0..n {
                        for o in 0..fo {
                            db[o] += dyd[b * fo + o];
                        }
                    }
                }
                Op::Relu(a) => {
                    // Subgradient at 0 is 0.
                    accumulate(done, *a, dy, &node.out, |x, _y| if x > 0.0 { 1.0 } else { 0.0 })
                }
                Op::Softplus(a) => accumulate(done, *a, dy, &node.out, |x, _y| sigmoid(x)),
                Op::Exp(a) => accumulate(done, *a, dy, &node.out, |_x, y| y),
                Op::Sigmoid(a) => accumulate(done, *a, dy, &node.out, |_x, y| y * (1.0 - y)),
                Op::Tanh(a) => accumulate(done, *a, dy, &node.out, |_x, y| 1.0 - y * y),
                Op::Clamp { input, lo, hi } => {
                    let (lo, hi) = (*lo, *hi);
                    accumulate(done, *input, dy, &node.out, move |x, _y| {
                        if x > lo && x < hi {
                            1.0
                        } else {
                            0.0
                        }
                    })
                }
                Op::Add(a, b) => {
                    for (gd, d) in done[a.0].grad.data_mut().iter_mut().zip(dy.data()) {
                        *gd += d;
                    }
                    for (gd, d) in done[b.0].grad.data_mut().iter_mut().zip(dy.data()) {
                        *gd += d;
                    }
                }
                Op::Mul(a, b) if a == b => {
                    let Node { out, grad, .. } = &mut done[a.0];
                    for ((ga, &xv), &d) in grad.data_mut().iter_mut().zip(out.data()).zip(dy.data()) {
                        *ga += 2.0 * d * xv;
                    }
                }
                Op::Mul(a, b) => {
                    let (a_slot, b_slot) = two_mut(done, a.0, b.0);
                    for ((ga, &bv), d) in a_slot.grad.data_mut().iter_mut().zip(b_slot.out.data()).zip(dy.data()) {
                        *ga += d * bv;
                    }
                    for ((gb, &av), d) in b_slot.grad.data_mut().iter_mut().zip(a_slot.out.data()).zip(dy.data()) {
                        *gb += d * av;
                    }
                }
                Op::AddScalar(a, _) => {
                    for (gd, d) in done[a.0].grad.data_mut().iter_mut().zip(dy.data()) {
                        *gd += d;
                    }
                }
                Op::MulScalar(a, c) => {
                    let c = *c;
                    for (gd, d) in done[a.0].grad.data_mut().iter_mut().zip(dy.data()) {
                        *gd += c * d;
                    }
                }
                Op::ReduceSum(a) => {
                    let d = dy.data()[0];
                    for gd in done[a.0].grad.data_mut().iter_mut() {
                        *gd += d;
                    }
                }
                Op::Reshape(a, _) => {
                    for (gd, d) in done[a.0].grad.data_mut().iter_mut().zip(dy.data()) {
                        *gd += d;
                    }
                }
            }
        }
        Ok(())
    }
}

fn conv_geom_of(done: &[Node], op: &Op) -> ConvGeom {
    match op {
        Op::Conv2d {
            input,
            weight,
            stride,
            padding,
            ..
        } => {
            let xs = done[input.0].out.shape();
            let k = done[weight.0].out.shape()[2];
            match padding {
                Padding::Valid => ConvGeom::valid(xs[2], xs[3], k, *stride).expect("validated at build"),
                Padding::Same => ConvGeom::same(xs[2], xs[3], k, *stride),
            }
        }
        Op::Deconv2d {
            input,
            weight,
            stride,
            pad,
            out_pad,
            ..
        } => {
            let xs = done[input.0].out.shape();
            let k = done[weight.0].out.shape()[2];
            ConvGeom::deconv(xs[2], xs[3], k, *stride, *pad, *out_pad).expect("validated at build")
        }
        _ => unreachable!("conv geometry requested for non-conv op"),
    }
}

/// Disjoint mutable references to two distinct nodes of one slice.
fn two_mut(nodes: &mut [Node], i: usize, j: usize) -> (&mut Node, &mut Node) {
    assert_ne!(i, j, "op reuses one node in two roles");
    if i < j {
        let (a, b) = nodes.split_at_mut(j);
        (&mut a[i], &mut b[0])
    } else {
        let (a, b) = nodes.split_at_mut(i);
        (&mut b[0], &mut a[j])
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map_unary(x: &Tensor, y: &mut Tensor, f: impl Fn(f64) -> f64) {
    for (yo, &xi) in y.data_mut().iter_mut().zip(x.data()) {
        *yo = f(xi);
    }
}

fn map_binary(a: &Tensor, b: &Tensor, y: &mut Tensor, f: impl Fn(f64, f64) -> f64) {
    for ((yo, &av), &bv) in y.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        *yo = f(av, bv);
    }
}

/// dx += dy * local(x, y) for a unary op, where x is the input's cached
/// output and y the op's own cached output.
fn accumulate(done: &mut [Node], a: NodeId, dy: &Tensor, y: &Tensor, local: impl Fn(f64, f64) -> f64) {
    let Node { out, grad, .. } = &mut done[a.0];
    for (((gd, &xv), &yv), &d) in grad
        .data_mut()
        .iter_mut()
        .zip(out.data())
        .zip(y.data())
        .zip(dy.data())
    {
        *gd += d * local(xv, yv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_matches_hand_computed_affine() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.leaf(Tensor::new(vec![1, 2], vec![0.5, -1.0]).unwrap());
        let b = g.leaf(Tensor::new(vec![1], vec![0.25]).unwrap());
        let y = g.linear(x, w, b).unwrap();
        let out = g.forward(y).unwrap();
        assert_eq!(out.data(), &[1.0 * 0.5 - 2.0 + 0.25, 3.0 * 0.5 - 4.0 + 0.25]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2]));
        let y = g.relu(x);
        g.forward(y).unwrap();
        assert!(matches!(g.backward(y), Err(Error::NonScalarRoot(_))));
    }
}
