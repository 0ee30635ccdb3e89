//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation evaluates
//! eagerly, stores its output together with whatever it needs for the
//! backward rule, and returns a [`NodeId`]. Because a node can only refer to
//! nodes that already exist, insertion order is a topological order and the
//! backward pass is a single reverse sweep.
//!
//! ```
//! use rehar_core::graph::Graph;
//! use rehar_core::tensor::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let a = g.parameter(Tensor::scalar(2.0));
//! let b = g.parameter(Tensor::scalar(3.0));
//! let y = g.mul(a, b).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(a).unwrap().data(), &[3.0]);
//! assert_eq!(grads.get(b).unwrap().data(), &[2.0]);
//! ```

use crate::error::{Error, Result};
use crate::scalar::{MatRef, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so the output keeps the input's spatial size.
    Same,
    /// No padding; the output shrinks by `k - 1` along each axis.
    Valid,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    height: usize,
    width: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    out_channels: usize,
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        geom: ConvGeometry,
        patches: Vec<T>,
    },
    Relu(NodeId),
    MaxPool2 {
        input: NodeId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(NodeId),
    GlobalMaxPool {
        input: NodeId,
        argmax: Vec<usize>,
    },
    VecMat {
        x: NodeId,
        w: NodeId,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Slice {
        input: NodeId,
        start: usize,
    },
    Softmax(NodeId),
    CrossEntropy {
        probs: NodeId,
        target: usize,
        floor: T,
    },
    Sum(NodeId),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::MaxPool2 { .. } => "max_pool2d",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::GlobalMaxPool { .. } => "global_max_pool",
            Op::VecMat { .. } => "vecmat",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Slice { .. } => "slice",
            Op::Softmax(_) => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(_) => "sum",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => vec![input, kernel, bias],
            Op::Relu(a)
            | Op::GlobalAvgPool(a)
            | Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::Sum(a) => vec![a],
            Op::MaxPool2 { input, .. }
            | Op::GlobalMaxPool { input, .. }
            | Op::Slice { input, .. } => vec![input],
            Op::CrossEntropy { probs, .. } => vec![probs],
            Op::VecMat { x, w } => vec![x, w],
            Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Recorded computation for one forward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar output with respect to the leaves of a [`Graph`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a leaf node, or `None` if the output does not depend on
    /// it (or the leaf is a constant).
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Like [`get`](Self::get) but materialises zeros for unreached leaves.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor<T> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Every node in insertion (topological) order.
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Operation name of a node (`"leaf"`, `"conv2d"`, ...).
    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.inputs()
    }

    /// A differentiable leaf.
    pub fn parameter(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check_same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn check_vector(&self, a: NodeId, what: &str) -> Result<usize> {
        let t = self.value(a);
        t.expect_rank(1, what)?;
        Ok(t.len())
    }

    /// 2-D convolution of an `H×W×Cin` input with a `kh×kw×Cin×Cout` kernel
    /// bank plus a per-output-channel bias.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        padding: Padding,
    ) -> Result<NodeId> {
        let x = self.value(input);
        let k = self.value(kernel);
        x.expect_rank(3, "conv2d input")?;
        k.expect_rank(4, "conv2d kernel")?;
        let (height, width, in_channels) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kernel_h, kernel_w, k_in, out_channels) =
            (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        if k_in != in_channels {
            return Err(Error::Shape(format!(
                "conv2d: input has {in_channels} channels but kernel expects {k_in} (kernel shape {:?})",
                k.shape()
            )));
        }
        if kernel_h % 2 == 0 || kernel_w % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv2d: kernel spatial size {kernel_h}x{kernel_w} must be odd"
            )));
        }
        if self.value(bias).shape() != [out_channels] {
            return Err(Error::Shape(format!(
                "conv2d: bias shape {:?}, expected [{out_channels}]",
                self.value(bias).shape()
            )));
        }
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Same => (height, width, kernel_h / 2, kernel_w / 2),
            Padding::Valid => {
                if height < kernel_h || width < kernel_w {
                    return Err(Error::Shape(format!(
                        "conv2d: valid padding needs input ≥ kernel, got {height}x{width} < {kernel_h}x{kernel_w}"
                    )));
                }
                (height - kernel_h + 1, width - kernel_w + 1, 0, 0)
            }
        };
        let geom = ConvGeometry {
            height,
            width,
            in_channels,
            kernel_h,
            kernel_w,
            out_channels,
            out_h,
            out_w,
            pad_top,
            pad_left,
        };
        let patches = im2col(x.data(), &geom);
        let mut out = vec![T::zero(); geom.positions() * out_channels];
        T::gemm(
            MatRef::row_major(&patches, geom.positions(), geom.patch_len()),
            MatRef::row_major(k.data(), geom.patch_len(), out_channels),
            &mut out,
            false,
        );
        let b = self.value(bias).data();
        for row in out.chunks_exact_mut(out_channels) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let value = Tensor::new(&[out_h, out_w, out_channels], out)?;
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                patches,
            },
            value,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|v| v.max(T::zero()));
        self.push(Op::Relu(input), value)
    }

    /// 2×2 max pooling with stride 2 over an `H×W×C` map.
    pub fn max_pool2d(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        x.expect_rank(3, "max_pool2d input")?;
        let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "max_pool2d: spatial size {h}x{w} must be even"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let data = x.data();
        let mut out = Vec::with_capacity(oh * ow * c);
        let mut argmax = Vec::with_capacity(oh * ow * c);
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = ((2 * oy) * w + 2 * ox) * c + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&[oh, ow, c], out)?;
        Ok(self.push(Op::MaxPool2 { input, argmax }, value))
    }

    /// Mean of each channel of an `h×w×C` map; no learnable parameters.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        x.expect_rank(3, "global_avg_pool input")?;
        let c = x.shape()[2];
        let n = x.shape()[0] * x.shape()[1];
        let mut sums = vec![T::zero(); c];
        for px in x.data().chunks_exact(c) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        let denom = T::from_usize(n).unwrap();
        let value = Tensor::vector(sums.into_iter().map(|s| s / denom).collect());
        Ok(self.push(Op::GlobalAvgPool(input), value))
    }

    /// Maximum of each channel of an `h×w×C` map (first position wins ties).
    pub fn global_max_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        x.expect_rank(3, "global_max_pool input")?;
        let c = x.shape()[2];
        let data = x.data();
        let mut argmax: Vec<usize> = (0..c).collect();
        for (p, px) in data.chunks_exact(c).enumerate().skip(1) {
            for ch in 0..c {
                if px[ch] > data[argmax[ch]] {
                    argmax[ch] = p * c + ch;
                }
            }
        }
        let value = Tensor::vector(argmax.iter().map(|&i| data[i]).collect());
        Ok(self.push(Op::GlobalMaxPool { input, argmax }, value))
    }

    /// Row vector times matrix: `[D] · [D, N] → [N]`.
    pub fn vecmat(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let d = self.check_vector(x, "vecmat lhs")?;
        let wt = self.value(w);
        wt.expect_rank(2, "vecmat rhs")?;
        if wt.shape()[0] != d {
            return Err(Error::Shape(format!(
                "vecmat: vector length {d} vs matrix shape {:?}",
                wt.shape()
            )));
        }
        let n = wt.shape()[1];
        let mut out = vec![T::zero(); n];
        T::gemm(
            MatRef::row_major(self.value(x).data(), 1, d),
            MatRef::row_major(wt.data(), d, n),
            &mut out,
            false,
        );
        let value = Tensor::vector(out);
        Ok(self.push(Op::VecMat { x, w }, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "add")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(va.shape(), data)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(va.shape(), data)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> NodeId {
        let value = self.value(a).map(|v| v * factor);
        self.push(Op::Scale(a, factor), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.tanh());
        self.push(Op::Tanh(a), value)
    }

    /// Contiguous sub-range `[start, start + len)` of a vector.
    pub fn slice(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let n = self.check_vector(input, "slice input")?;
        if len == 0 || start + len > n {
            return Err(Error::Shape(format!(
                "slice [{start}, {}) out of range for length {n}",
                start + len
            )));
        }
        let value = Tensor::vector(self.value(input).data()[start..start + len].to_vec());
        Ok(self.push(Op::Slice { input, start }, value))
    }

    /// Numerically stable softmax of a logit vector.
    pub fn softmax(&mut self, logits: NodeId) -> Result<NodeId> {
        self.check_vector(logits, "softmax input")?;
        let value = softmax(self.value(logits).data())?;
        Ok(self.push(Op::Softmax(logits), Tensor::vector(value)))
    }

    /// `−log(max(p[target], floor))` for a probability vector `p`.
    pub fn cross_entropy(&mut self, probs: NodeId, target: usize, floor: T) -> Result<NodeId> {
        let n = self.check_vector(probs, "cross_entropy input")?;
        if target >= n {
            return Err(Error::InvalidArgument(format!(
                "target index {target} out of range for {n} categories"
            )));
        }
        let p = self.value(probs).data();
        check_distribution(p)?;
        let value = Tensor::scalar(-p[target].max(floor).ln());
        Ok(self.push(
            Op::CrossEntropy {
                probs,
                target,
                floor,
            },
            value,
        ))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    /// Reverse sweep from a scalar output. Forward values are left untouched;
    /// gradients are returned for leaf nodes only.
    pub fn backward(&self, output: NodeId) -> Result<Gradients<T>> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(vec![T::one()]);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) if node.requires_grad => {
                    Some(Tensor::new(node.value.shape(), g).expect("gradient shape matches"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                patches,
            } => {
                let (m, kdim, cout) = (geom.positions(), geom.patch_len(), geom.out_channels);
                if needs(*bias) {
                    let gb = grad_buf(grads, *bias, cout);
                    for row in g.chunks_exact(cout) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
                if needs(*kernel) {
                    let gk = grad_buf(grads, *kernel, kdim * cout);
                    T::gemm(
                        MatRef::transposed(patches, m, kdim),
                        MatRef::row_major(g, m, cout),
                        gk,
                        true,
                    );
                }
                if needs(*input) {
                    let mut dpatches = vec![T::zero(); m * kdim];
                    T::gemm(
                        MatRef::row_major(g, m, cout),
                        MatRef::transposed(self.value(*kernel).data(), kdim, cout),
                        &mut dpatches,
                        false,
                    );
                    let gx = grad_buf(grads, *input, geom.height * geom.width * geom.in_channels);
                    col2im(&dpatches, geom, gx);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let ga = grad_buf(grads, *a, x.len());
                for ((acc, &gv), &xv) in ga.iter_mut().zip(g).zip(x) {
                    if xv > T::zero() {
                        *acc += gv;
                    }
                }
            }
            Op::MaxPool2 { input, argmax } | Op::GlobalMaxPool { input, argmax } => {
                let n = self.value(*input).len();
                let ga = grad_buf(grads, *input, n);
                for (&src, &gv) in argmax.iter().zip(g) {
                    ga[src] += gv;
                }
            }
            Op::GlobalAvgPool(a) => {
                let x = self.value(*a);
                let c = x.shape()[2];
                let denom = T::from_usize(x.shape()[0] * x.shape()[1]).unwrap();
                let ga = grad_buf(grads, *a, x.len());
                for px in ga.chunks_exact_mut(c) {
                    for (acc, &gv) in px.iter_mut().zip(g) {
                        *acc += gv / denom;
                    }
                }
            }
            Op::VecMat { x, w } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w);
                let (d, n) = (wv.shape()[0], wv.shape()[1]);
                if needs(*x) {
                    let gx = grad_buf(grads, *x, d);
                    T::gemm(
                        MatRef::row_major(wv.data(), d, n),
                        MatRef::row_major(g, n, 1),
                        gx,
                        true,
                    );
                }
                if needs(*w) {
                    let gw = grad_buf(grads, *w, d * n);
                    T::gemm(
                        MatRef::row_major(xv, d, 1),
                        MatRef::row_major(g, 1, n),
                        gw,
                        true,
                    );
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if needs(id) {
                        let acc = grad_buf(grads, id, g.len());
                        for (s, &gv) in acc.iter_mut().zip(g) {
                            *s += gv;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                for (id, other) in [(*a, *b), (*b, *a)] {
                    if needs(id) {
                        let o = self.value(other).data();
                        let acc = grad_buf(grads, id, g.len());
                        for ((s, &gv), &ov) in acc.iter_mut().zip(g).zip(o) {
                            *s += gv * ov;
                        }
                    }
                }
            }
            Op::Scale(a, factor) => {
                let acc = grad_buf(grads, *a, g.len());
                for (s, &gv) in acc.iter_mut().zip(g) {
                    *s += gv * *factor;
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let acc = grad_buf(grads, *a, g.len());
                for ((s, &gv), &yv) in acc.iter_mut().zip(g).zip(y) {
                    *s += gv * yv * (T::one() - yv);
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let acc = grad_buf(grads, *a, g.len());
                for ((s, &gv), &yv) in acc.iter_mut().zip(g).zip(y) {
                    *s += gv * (T::one() - yv * yv);
                }
            }
            Op::Slice { input, start } => {
                let n = self.value(*input).len();
                let acc = grad_buf(grads, *input, n);
                for (s, &gv) in acc[*start..*start + g.len()].iter_mut().zip(g) {
                    *s += gv;
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let dot: T = g.iter().zip(y).map(|(&gv, &yv)| gv * yv).sum();
                let acc = grad_buf(grads, *a, g.len());
                for ((s, &gv), &yv) in acc.iter_mut().zip(g).zip(y) {
                    *s += yv * (gv - dot);
                }
            }
            Op::CrossEntropy {
                probs,
                target,
                floor,
            } => {
                let p = self.value(*probs).data();
                let n = p.len();
                let acc = grad_buf(grads, *probs, n);
                if p[*target] > *floor {
                    acc[*target] -= g[0] / p[*target];
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let acc = grad_buf(grads, *a, n);
                for s in acc.iter_mut() {
                    *s += g[0];
                }
            }
        }
    }
}

fn grad_buf<T: Scalar>(grads: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut [T] {
    grads[id.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn im2col<T: Scalar>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let kdim = g.patch_len();
    let cin = g.in_channels;
    let mut patches = vec![T::zero(); g.positions() * kdim];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut patches[(oy * g.out_w + ox) * kdim..][..kdim];
            for ky in 0..g.kernel_h {
                let iy = (oy + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.height as isize {
                    continue;
                }
                for kx in 0..g.kernel_w {
                    let ix = (ox + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.width as isize {
                        continue;
                    }
                    let src = (iy as usize * g.width + ix as usize) * cin;
                    row[(ky * g.kernel_w + kx) * cin..][..cin]
                        .copy_from_slice(&input[src..src + cin]);
                }
            }
        }
    }
    patches
}

fn col2im<T: Scalar>(dpatches: &[T], g: &ConvGeometry, dinput: &mut [T]) {
    let kdim = g.patch_len();
    let cin = g.in_channels;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &dpatches[(oy * g.out_w + ox) * kdim..][..kdim];
            for ky in 0..g.kernel_h {
                let iy = (oy + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.height as isize {
                    continue;
                }
                for kx in 0..g.kernel_w {
                    let ix = (ox + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.width as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.width + ix as usize) * cin;
                    let src = &row[(ky * g.kernel_w + kx) * cin..][..cin];
                    for (d, &s) in dinput[dst..dst + cin].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Softmax with max-subtraction. Rejects NaN and empty input.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN logit passed to softmax".into()));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub(crate) fn check_distribution<T: Scalar>(p: &[T]) -> Result<()> {
    let total: T = p.iter().copied().sum();
    let tol = T::from_f64_lossy(crate::loss::DISTRIBUTION_TOLERANCE);
    if p.iter().any(|&v| v < T::zero() || !v.is_finite()) || (total - T::one()).abs() > tol {
        return Err(Error::InvalidArgument(format!(
            "not a probability distribution (sum {total})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_convolution() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[4, 5, 3], |i| i as f64 * 0.1 - 1.0));
        let mut kdata = vec![0.0; 9];
        for c in 0..3 {
            kdata[c * 3 + c] = 1.0;
        }
        let k = g.parameter(t(&[1, 1, 3, 3], &kdata));
        let b = g.parameter(Tensor::zeros(&[3]));
        let y = g.conv2d(x, k, b, Padding::Same).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[6, 6, 2], |i| i as f64));
        let k = g.parameter(Tensor::zeros(&[3, 3, 2, 4]));
        let b = g.parameter(Tensor::zeros(&[4]));
        let y = g.conv2d(x, k, b, Padding::Same).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(g.value(y).shape(), &[6, 6, 4]);
    }

    #[test]
    fn averaging_kernel_valid_padding() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[3, 3, 1], |i| (i + 1) as f64));
        let k = g.parameter(Tensor::full(&[3, 3, 1, 1], 1.0 / 9.0));
        let b = g.parameter(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b, Padding::Valid).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1]);
        assert!((g.value(y).data()[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::<f64>::zeros(&[4, 4, 3]));
        let k = g.parameter(Tensor::zeros(&[3, 3, 2, 4]));
        let b = g.parameter(Tensor::zeros(&[4]));
        let err = g.conv2d(x, k, b, Padding::Same).unwrap_err();
        assert!(matches!(err, Error::Shape(msg) if msg.contains("3 channels")));
        let k_even = g.parameter(Tensor::zeros(&[2, 2, 3, 4]));
        assert!(g.conv2d(x, k_even, b, Padding::Same).is_err());
        let big = g.parameter(Tensor::zeros(&[5, 5, 3, 4]));
        let small = g.constant(Tensor::zeros(&[3, 3, 3]));
        assert!(g.conv2d(small, big, b, Padding::Valid).is_err());
    }

    #[test]
    fn max_pool_forward_and_ties() {
        let mut g = Graph::new();
        let x = g.parameter(t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.max_pool2d(x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);

        let c = g.parameter(Tensor::full(&[4, 4, 2], 7.0));
        let yc = g.max_pool2d(c).unwrap();
        assert!(g.value(yc).data().iter().all(|&v| v == 7.0));
        let s = g.sum(yc);
        let grads = g.backward(s).unwrap();
        let gc = grads.get(c).unwrap();
        // ties route to the top-left cell of each window
        assert_eq!(gc.data()[0], 1.0);
        assert_eq!(gc.data()[2], 0.0);
        assert_eq!(gc.sum(), 8.0);

        let odd = g.constant(Tensor::zeros(&[3, 4, 1]));
        assert!(g.max_pool2d(odd).is_err());
    }

    #[test]
    fn global_pools() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
        let avg = g.global_avg_pool(x).unwrap();
        let max = g.global_max_pool(x).unwrap();
        assert_eq!(g.value(avg).data(), &[2.5]);
        assert_eq!(g.value(max).data(), &[4.0]);
        let c = g.constant(Tensor::full(&[3, 3, 2], 3.0));
        let avg = g.global_avg_pool(c).unwrap();
        let max = g.global_max_pool(c).unwrap();
        assert_eq!(g.value(avg).data(), &[3.0, 3.0]);
        assert_eq!(g.value(max).data(), &[3.0, 3.0]);
        let big = g.constant(Tensor::zeros(&[7, 7, 512]));
        let v = g.global_avg_pool(big).unwrap();
        assert_eq!(g.value(v).shape(), &[512]);
        let v = g.global_max_pool(big).unwrap();
        assert_eq!(g.value(v).shape(), &[512]);
    }

    #[test]
    fn softmax_basics() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        let big: Vec<f64> = softmax(&[1000.0, 1000.0, 999.0]).unwrap();
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn backward_requires_scalar_output() {
        let mut g = Graph::new();
        let x = g.parameter(Tensor::vector(vec![1.0, 2.0]));
        let y = g.tanh(x);
        assert!(matches!(g.backward(y), Err(Error::Shape(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(2.0));
        let b = g.parameter(Tensor::scalar(5.0));
        let y = g.mul(a, b).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().data(), &[2.0]);
    }

    #[test]
    fn no_broadcasting() {
        let mut g = Graph::new();
        let a = g.parameter(Tensor::vector(vec![1.0, 2.0]));
        let b = g.parameter(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(g.add(a, b).is_err());
        assert!(g.mul(a, b).is_err());
    }

    #[test]
    fn topological_order() {
        let mut g = Graph::new();
        let a = g.parameter(Tensor::vector(vec![0.3, -0.2]));
        let b = g.sigmoid(a);
        let c = g.mul(a, b).unwrap();
        let _ = g.sum(c);
        for i in 0..g.len() {
            for inp in g.inputs(NodeId(i)) {
                assert!(inp.index() < i);
            }
        }
        assert_eq!(g.op_name(c), "mul");
    }
}
