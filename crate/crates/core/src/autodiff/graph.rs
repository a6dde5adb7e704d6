//! Differentiable expression graph with reverse-mode gradients.
//!
//! The backward pass emits ordinary graph nodes, so a gradient is itself a
//! differentiable expression; calling [`ExprGraph::grad`] on (a scalar of) a
//! gradient node yields second derivatives. That closure property is what the
//! gradient-norm penalty needs: its parameter gradient differentiates through
//! an input-gradient computation.
//!
//! Nodes are append-only and reference only earlier nodes, so ascending id
//! order is a topological order. Values are cached per node and recomputed
//! lazily after rebinding.

use crate::error::{GraphError, Result};
use crate::scalar::Scalar;

use super::kernels;
use super::tensor::{numel, Tensor};

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub enum Op<F: Scalar> {
    Var { name: String },
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    AddScalar(NodeId, F),
    MulScalar(NodeId, F),
    /// x^p elementwise; negative bases are only valid for integral p.
    PowScalar(NodeId, F),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    Relu(NodeId),
    /// Rectified quadratic unit: (max{0,x})^2, once continuously differentiable.
    Requ(NodeId),
    ClampMin(NodeId, F),
    /// 1 where x > t else 0. Not differentiable; acts as a constant mask.
    StepGt(NodeId, F),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Sum(NodeId),
    SumAxis(NodeId, usize),
    LogSumExpAxis(NodeId, usize),
    Broadcast(NodeId, Vec<usize>),
    Reshape(NodeId, Vec<usize>),
    Conv2d {
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
    },
    ConvBwdInput {
        dy: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
        in_hw: (usize, usize),
    },
    ConvBwdWeight {
        x: NodeId,
        dy: NodeId,
        stride: usize,
        pad: usize,
        k_hw: (usize, usize),
    },
}

impl<F: Scalar> Op<F> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Var { .. } => "var",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::PowScalar(..) => "pow_scalar",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Sqrt(..) => "sqrt",
            Op::Relu(..) => "relu",
            Op::Requ(..) => "requ",
            Op::ClampMin(..) => "clamp_min",
            Op::StepGt(..) => "step_gt",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::LogSumExpAxis(..) => "logsumexp",
            Op::Broadcast(..) => "broadcast",
            Op::Reshape(..) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvBwdInput { .. } => "conv2d_bwd_input",
            Op::ConvBwdWeight { .. } => "conv2d_bwd_weight",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Var { .. } | Op::Const => vec![],
            Op::Neg(a)
            | Op::AddScalar(a, _)
            | Op::MulScalar(a, _)
            | Op::PowScalar(a, _)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Sqrt(a)
            | Op::Relu(a)
            | Op::Requ(a)
            | Op::ClampMin(a, _)
            | Op::StepGt(a, _)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::SumAxis(a, _)
            | Op::LogSumExpAxis(a, _)
            | Op::Broadcast(a, _)
            | Op::Reshape(a, _) => vec![a],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b) => vec![a, b],
            Op::Conv2d { x, w, .. } => vec![x, w],
            Op::ConvBwdInput { dy, w, .. } => vec![dy, w],
            Op::ConvBwdWeight { x, dy, .. } => vec![x, dy],
        }
    }
}

struct Node<F: Scalar> {
    op: Op<F>,
    shape: Vec<usize>,
    requires_grad: bool,
}

/// Expression graph. See the module docs for the evaluation contract.
pub struct ExprGraph<F: Scalar> {
    nodes: Vec<Node<F>>,
    values: Vec<Option<Tensor<F>>>,
    /// Set once a backward pass has been asked to keep its nodes
    /// differentiable (it always does; the flag records intent).
    pub retain_graph: bool,
}

impl<F: Scalar> Default for ExprGraph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ExprGraph<F> {
    pub fn new() -> Self {
        ExprGraph {
            nodes: Vec::new(),
            values: Vec::new(),
            retain_graph: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> Result<&[usize], GraphError> {
        self.nodes
            .get(id)
            .map(|n| n.shape.as_slice())
            .ok_or(GraphError::NoSuchNode(id))
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes.get(id).map(|n| n.requires_grad).unwrap_or(false)
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes.get(id).map(|n| n.op.name()).unwrap_or("?")
    }

    fn push(&mut self, op: Op<F>, shape: Vec<usize>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            shape,
            requires_grad,
        });
        self.values.push(None);
        self.nodes.len() - 1
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    fn check(&self, id: NodeId) -> Result<(), GraphError> {
        if id < self.nodes.len() {
            Ok(())
        } else {
            Err(GraphError::NoSuchNode(id))
        }
    }

    // ── Leaves ───────────────────────────────────────────────────────────

    /// Unbound placeholder; bind a value with [`bind`](Self::bind) before
    /// evaluation.
    pub fn var(&mut self, name: &str, shape: &[usize], requires_grad: bool) -> NodeId {
        self.push(
            Op::Var {
                name: name.to_string(),
            },
            shape.to_vec(),
            requires_grad,
        )
    }

    /// Variable bound immediately.
    pub fn input(&mut self, name: &str, value: Tensor<F>, requires_grad: bool) -> NodeId {
        let id = self.var(name, value.shape(), requires_grad);
        self.values[id] = Some(value);
        id
    }

    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        let id = self.push(Op::Const, value.shape().to_vec(), false);
        self.values[id] = Some(value);
        id
    }

    pub fn scalar_const(&mut self, v: F) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    /// Rebind a named variable. Clears every cached non-leaf value.
    pub fn bind(&mut self, name: &str, value: Tensor<F>) -> Result<(), GraphError> {
        let id = self
            .nodes
            .iter()
            .position(|n| matches!(&n.op, Op::Var { name: vn } if vn == name))
            .ok_or_else(|| GraphError::NoSuchVar(name.to_string()))?;
        if self.nodes[id].shape != value.shape() {
            return Err(GraphError::ShapeMismatch {
                op: "bind",
                lhs: self.nodes[id].shape.clone(),
                rhs: value.shape().to_vec(),
            });
        }
        self.values[id] = Some(value);
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Var { .. } | Op::Const) {
                self.values[i] = None;
            }
        }
        Ok(())
    }

    // ── Elementwise and structural ops ───────────────────────────────────

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        make: impl FnOnce(NodeId, NodeId) -> Op<F>,
    ) -> Result<NodeId, GraphError> {
        self.check(a)?;
        self.check(b)?;
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(GraphError::ShapeMismatch {
                op: op_name,
                lhs: self.nodes[a].shape.clone(),
                rhs: self.nodes[b].shape.clone(),
            });
        }
        let shape = self.nodes[a].shape.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(make(a, b), shape, rg))
    }

    fn unary(
        &mut self,
        a: NodeId,
        make: impl FnOnce(NodeId) -> Op<F>,
    ) -> Result<NodeId, GraphError> {
        self.check(a)?;
        let shape = self.nodes[a].shape.clone();
        let rg = self.rg(a);
        Ok(self.push(make(a), shape, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary_same_shape("add", a, b, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary_same_shape("sub", a, b, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary_same_shape("mul", a, b, Op::Mul)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary_same_shape("div", a, b, Op::Div)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.unary(a, Op::Neg)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: F) -> Result<NodeId, GraphError> {
        self.unary(a, |a| Op::AddScalar(a, c))
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: F) -> Result<NodeId, GraphError> {
        self.unary(a, |a| Op::MulScalar(a, c))
    }

    pub fn pow_scalar(&mut self, a: NodeId, p: F) -> Result<NodeId, GraphError> {
        self.unary(a, |a| Op::PowScalar(a, p))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.unary(a, Op::Exp)
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.unary(a, Op::Ln)
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.unary(a, Op::Sqrt)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.unary(a, Op::Relu)
    }

    pub fn requ(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.unary(a, Op::Requ)
    }

    pub fn clamp_min(&mut self, a: NodeId, c: F) -> Result<NodeId, GraphError> {
        self.unary(a, |a| Op::ClampMin(a, c))
    }

    /// Indicator mask (x > t); the result never requires grad.
    pub fn step_gt(&mut self, a: NodeId, t: F) -> Result<NodeId, GraphError> {
        self.check(a)?;
        let shape = self.nodes[a].shape.clone();
        Ok(self.push(Op::StepGt(a, t), shape, false))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (&self.nodes[a].shape, &self.nodes[b].shape);
        match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => {
                let shape = vec![*m, *n];
                let rg = self.rg(a) || self.rg(b);
                Ok(self.push(Op::MatMul(a, b), shape, rg))
            }
            _ => Err(GraphError::ShapeMismatch {
                op: "matmul",
                lhs: sa.clone(),
                rhs: sb.clone(),
            }),
        }
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.check(a)?;
        match self.nodes[a].shape.as_slice() {
            [m, n] => {
                let shape = vec![*n, *m];
                let rg = self.rg(a);
                Ok(self.push(Op::Transpose(a), shape, rg))
            }
            s => Err(GraphError::InvalidShape {
                op: "transpose",
                shape: s.to_vec(),
                reason: "must be rank 2".into(),
            }),
        }
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.check(a)?;
        let rg = self.rg(a);
        Ok(self.push(Op::Sum(a), vec![], rg))
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId, GraphError> {
        self.check(a)?;
        let shape = &self.nodes[a].shape;
        if axis >= shape.len() {
            return Err(GraphError::InvalidShape {
                op: "sum_axis",
                shape: shape.clone(),
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut out = shape.clone();
        out[axis] = 1;
        let rg = self.rg(a);
        Ok(self.push(Op::SumAxis(a, axis), out, rg))
    }

    /// Stable log-sum-exp along `axis` (keepdim).
    pub fn logsumexp_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId, GraphError> {
        self.check(a)?;
        let shape = &self.nodes[a].shape;
        if axis >= shape.len() {
            return Err(GraphError::InvalidShape {
                op: "logsumexp",
                shape: shape.clone(),
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut out = shape.clone();
        out[axis] = 1;
        let rg = self.rg(a);
        Ok(self.push(Op::LogSumExpAxis(a, axis), out, rg))
    }

    pub fn broadcast(&mut self, a: NodeId, target: &[usize]) -> Result<NodeId, GraphError> {
        self.check(a)?;
        if !kernels::broadcast_compatible(&self.nodes[a].shape, target) {
            return Err(GraphError::ShapeMismatch {
                op: "broadcast",
                lhs: self.nodes[a].shape.clone(),
                rhs: target.to_vec(),
            });
        }
        let rg = self.rg(a);
        Ok(self.push(Op::Broadcast(a, target.to_vec()), target.to_vec(), rg))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, GraphError> {
        self.check(a)?;
        if numel(shape) != numel(&self.nodes[a].shape) {
            return Err(GraphError::InvalidShape {
                op: "reshape",
                shape: shape.to_vec(),
                reason: format!("source has shape {:?}", self.nodes[a].shape),
            });
        }
        let rg = self.rg(a);
        Ok(self.push(Op::Reshape(a, shape.to_vec()), shape.to_vec(), rg))
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, GraphError> {
        self.check(x)?;
        self.check(w)?;
        let shape =
            kernels::conv2d_out_shape(&self.nodes[x].shape, &self.nodes[w].shape, stride, pad)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Op::Conv2d { x, w, stride, pad }, shape, rg))
    }

    pub fn conv2d_bwd_input(
        &mut self,
        dy: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
        in_hw: (usize, usize),
    ) -> Result<NodeId, GraphError> {
        self.check(dy)?;
        self.check(w)?;
        let n = self.nodes[dy].shape[0];
        let ci = self.nodes[w].shape[1];
        let shape = vec![n, ci, in_hw.0, in_hw.1];
        let rg = self.rg(dy) || self.rg(w);
        Ok(self.push(
            Op::ConvBwdInput {
                dy,
                w,
                stride,
                pad,
                in_hw,
            },
            shape,
            rg,
        ))
    }

    pub fn conv2d_bwd_weight(
        &mut self,
        x: NodeId,
        dy: NodeId,
        stride: usize,
        pad: usize,
        k_hw: (usize, usize),
    ) -> Result<NodeId, GraphError> {
        self.check(x)?;
        self.check(dy)?;
        let (xs, dys) = (&self.nodes[x].shape, &self.nodes[dy].shape);
        if xs.len() != 4 || dys.len() != 4 {
            return Err(GraphError::InvalidShape {
                op: "conv2d_bwd_weight",
                shape: xs.clone(),
                reason: "expects rank-4 inputs".into(),
            });
        }
        let shape = vec![dys[1], xs[1], k_hw.0, k_hw.1];
        let rg = self.rg(x) || self.rg(dy);
        Ok(self.push(
            Op::ConvBwdWeight {
                x,
                dy,
                stride,
                pad,
                k_hw,
            },
            shape,
            rg,
        ))
    }

    // ── Composites ───────────────────────────────────────────────────────

    /// log softmax along `axis` via the stable log-sum-exp primitive.
    pub fn log_softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId, GraphError> {
        let lse = self.logsumexp_axis(a, axis)?;
        let shape = self.nodes[a].shape.clone();
        let b = self.broadcast(lse, &shape)?;
        self.sub(a, b)
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId, GraphError> {
        let ls = self.log_softmax(a, axis)?;
        self.exp(ls)
    }

    /// Mean of all elements.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let n = numel(&self.nodes[a].shape);
        let s = self.sum(a)?;
        self.mul_scalar(s, F::one() / F::of(n as f64))
    }

    // ── Evaluation ───────────────────────────────────────────────────────

    pub fn value(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.values.get(id).and_then(|v| v.as_ref())
    }

    /// Evaluate `id` (and any unevaluated ancestors) and return its value.
    pub fn eval(&mut self, id: NodeId) -> Result<&Tensor<F>, GraphError> {
        self.check(id)?;
        if self.values[id].is_none() {
            let mut needed = vec![false; id + 1];
            let mut stack = vec![id];
            while let Some(n) = stack.pop() {
                if needed[n] || self.values[n].is_some() {
                    continue;
                }
                needed[n] = true;
                stack.extend(self.nodes[n].op.inputs());
            }
            for i in 0..=id {
                if needed[i] && self.values[i].is_none() {
                    let v = self.compute(i)?;
                    if !v.is_finite() {
                        return Err(GraphError::NonFinite {
                            op: self.nodes[i].op.name(),
                            node: i,
                        });
                    }
                    self.values[i] = Some(v);
                }
            }
        }
        Ok(self.values[id].as_ref().unwrap())
    }

    /// Bind every (name, tensor) pair and evaluate `root`.
    pub fn forward(
        &mut self,
        root: NodeId,
        bindings: &[(&str, Tensor<F>)],
    ) -> Result<Tensor<F>, GraphError> {
        for (name, value) in bindings {
            self.bind(name, value.clone())?;
        }
        Ok(self.eval(root)?.clone())
    }

    fn arg(&self, id: NodeId) -> &Tensor<F> {
        self.values[id]
            .as_ref()
            .expect("ancestor evaluated before dependent node")
    }

    fn compute(&self, i: NodeId) -> Result<Tensor<F>, GraphError> {
        let node = &self.nodes[i];
        let out = match &node.op {
            Op::Var { name } => return Err(GraphError::UnboundVar(name.clone())),
            Op::Const => unreachable!("constants are bound at creation"),
            Op::Add(a, b) => self.arg(*a).zip_map(self.arg(*b), |x, y| x + y)?,
            Op::Sub(a, b) => self.arg(*a).zip_map(self.arg(*b), |x, y| x - y)?,
            Op::Mul(a, b) => self.arg(*a).zip_map(self.arg(*b), |x, y| x * y)?,
            Op::Div(a, b) => self.arg(*a).zip_map(self.arg(*b), |x, y| x / y)?,
            Op::Neg(a) => self.arg(*a).map(|x| -x),
            Op::AddScalar(a, c) => self.arg(*a).map(|x| x + *c),
            Op::MulScalar(a, c) => self.arg(*a).map(|x| x * *c),
            Op::PowScalar(a, p) => self.arg(*a).map(|x| x.powf(*p)),
            Op::Exp(a) => self.arg(*a).map(|x| x.exp()),
            Op::Ln(a) => self.arg(*a).map(|x| x.ln()),
            Op::Sqrt(a) => self.arg(*a).map(|x| x.sqrt()),
            Op::Relu(a) => self.arg(*a).map(|x| if x > F::zero() { x } else { F::zero() }),
            Op::Requ(a) => self.arg(*a).map(|x| {
                let r = if x > F::zero() { x } else { F::zero() };
                r * r
            }),
            Op::ClampMin(a, c) => self.arg(*a).map(|x| if x > *c { x } else { *c }),
            Op::StepGt(a, t) => self
                .arg(*a)
                .map(|x| if x > *t { F::one() } else { F::zero() }),
            Op::MatMul(a, b) => kernels::matmul(self.arg(*a), self.arg(*b))?,
            Op::Transpose(a) => kernels::transpose2d(self.arg(*a))?,
            Op::Sum(a) => Tensor::scalar(self.arg(*a).data().iter().copied().sum()),
            Op::SumAxis(a, ax) => kernels::sum_axis_keepdim(self.arg(*a), *ax)?,
            Op::LogSumExpAxis(a, ax) => kernels::logsumexp_axis_keepdim(self.arg(*a), *ax)?,
            Op::Broadcast(a, target) => kernels::broadcast_to(self.arg(*a), target)?,
            Op::Reshape(a, shape) => self.arg(*a).reshaped(shape)?,
            Op::Conv2d { x, w, stride, pad } => {
                kernels::conv2d(self.arg(*x), self.arg(*w), *stride, *pad)?
            }
            Op::ConvBwdInput {
                dy,
                w,
                stride,
                pad,
                in_hw,
            } => kernels::conv2d_bwd_input(self.arg(*dy), self.arg(*w), *stride, *pad, *in_hw)?,
            Op::ConvBwdWeight {
                x,
                dy,
                stride,
                pad,
                k_hw,
            } => kernels::conv2d_bwd_weight(self.arg(*x), self.arg(*dy), *stride, *pad, *k_hw)?,
        };
        Ok(out)
    }

    // ── Reverse-mode differentiation ─────────────────────────────────────

    /// Reverse-mode gradient of a scalar `output` w.r.t. each node in `wrt`.
    ///
    /// Returns gradient node ids (already evaluated). The emitted nodes are
    /// ordinary graph nodes; with `retain` they may be differentiated again.
    /// A `wrt` entry that does not influence `output` yields a zero tensor.
    pub fn grad(
        &mut self,
        output: NodeId,
        wrt: &[NodeId],
        retain: bool,
    ) -> Result<Vec<NodeId>, GraphError> {
        self.check(output)?;
        for &w in wrt {
            self.check(w)?;
            if !self.nodes[w].requires_grad {
                return Err(GraphError::NoGrad(w));
            }
        }
        if numel(&self.nodes[output].shape) != 1 {
            return Err(GraphError::NonScalarOutput(self.nodes[output].shape.clone()));
        }
        self.eval(output)?;
        self.retain_graph |= retain;

        let n0 = self.nodes.len();
        // Differentiable ancestors of `output`.
        let mut active = vec![false; n0];
        let mut stack = vec![output];
        while let Some(n) = stack.pop() {
            if active[n] || !self.nodes[n].requires_grad {
                continue;
            }
            active[n] = true;
            stack.extend(self.nodes[n].op.inputs());
        }
        if !active[output] {
            // Output is constant w.r.t. everything; all gradients are zero.
            let mut out = Vec::with_capacity(wrt.len());
            for &w in wrt {
                let shape = self.nodes[w].shape.clone();
                out.push(self.constant(Tensor::zeros(&shape)));
            }
            return Ok(out);
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; n0];
        let seed_shape = self.nodes[output].shape.clone();
        adjoint[output] = Some(self.constant(Tensor::full(&seed_shape, F::one())));

        for i in (0..n0).rev() {
            if !active[i] {
                continue;
            }
            let u = match adjoint[i] {
                Some(u) => u,
                None => continue,
            };
            let contributions = self.vjp(i, u)?;
            for (input, contrib) in contributions {
                adjoint[input] = Some(match adjoint[input] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            let id = match adjoint[w] {
                Some(id) => id,
                None => {
                    let shape = self.nodes[w].shape.clone();
                    self.constant(Tensor::zeros(&shape))
                }
            };
            out.push(id);
        }
        for &id in &out {
            self.eval(id)?;
        }
        Ok(out)
    }

    /// Like [`grad`](Self::grad) but returns the gradient tensors directly.
    pub fn grad_values(
        &mut self,
        output: NodeId,
        wrt: &[NodeId],
        retain: bool,
    ) -> Result<Vec<Tensor<F>>, GraphError> {
        let ids = self.grad(output, wrt, retain)?;
        Ok(ids
            .into_iter()
            .map(|id| self.values[id].clone().expect("gradient evaluated"))
            .collect())
    }

    /// Vector-Jacobian product of node `i` with upstream adjoint `u`,
    /// expressed as new graph nodes. Returns (input, contribution) pairs for
    /// inputs that require grad.
    fn vjp(&mut self, i: NodeId, u: NodeId) -> Result<Vec<(NodeId, NodeId)>, GraphError> {
        let op = self.nodes[i].op.clone();
        let mut out = Vec::new();
        let push = |this: &mut Self,
                        out: &mut Vec<(NodeId, NodeId)>,
                        input: NodeId,
                        contrib: Result<NodeId, GraphError>|
         -> Result<(), GraphError> {
            if this.nodes[input].requires_grad {
                out.push((input, contrib?));
            }
            Ok(())
        };
        match op {
            Op::Var { .. } | Op::Const | Op::StepGt(..) => {}
            Op::Add(a, b) => {
                push(self, &mut out, a, Ok(u))?;
                push(self, &mut out, b, Ok(u))?;
            }
            Op::Sub(a, b) => {
                push(self, &mut out, a, Ok(u))?;
                let nb = self.neg(u);
                push(self, &mut out, b, nb)?;
            }
            Op::Mul(a, b) => {
                let da = self.mul(u, b);
                push(self, &mut out, a, da)?;
                let db = self.mul(u, a);
                push(self, &mut out, b, db)?;
            }
            Op::Div(a, b) => {
                let da = self.div(u, b);
                push(self, &mut out, a, da)?;
                if self.nodes[b].requires_grad {
                    // d/db (a/b) = -(a/b)/b; reuse this node's own value.
                    let q = self.div(i, b)?;
                    let uq = self.mul(u, q)?;
                    let db = self.neg(uq);
                    push(self, &mut out, b, db)?;
                }
            }
            Op::Neg(a) => {
                let da = self.neg(u);
                push(self, &mut out, a, da)?;
            }
            Op::AddScalar(a, _) => push(self, &mut out, a, Ok(u))?,
            Op::MulScalar(a, c) => {
                let da = self.mul_scalar(u, c);
                push(self, &mut out, a, da)?;
            }
            Op::PowScalar(a, p) => {
                if self.nodes[a].requires_grad {
                    let pm1 = self.pow_scalar(a, p - F::one())?;
                    let t = self.mul(u, pm1)?;
                    let da = self.mul_scalar(t, p);
                    push(self, &mut out, a, da)?;
                }
            }
            Op::Exp(a) => {
                let da = self.mul(u, i); // u * exp(a)
                push(self, &mut out, a, da)?;
            }
            Op::Ln(a) => {
                let da = self.div(u, a);
                push(self, &mut out, a, da)?;
            }
            Op::Sqrt(a) => {
                if self.nodes[a].requires_grad {
                    let two_y = self.mul_scalar(i, F::of(2.0))?;
                    let da = self.div(u, two_y);
                    push(self, &mut out, a, da)?;
                }
            }
            Op::Relu(a) => {
                if self.nodes[a].requires_grad {
                    let mask = self.step_gt(a, F::zero())?;
                    let da = self.mul(u, mask);
                    push(self, &mut out, a, da)?;
                }
            }
            Op::Requ(a) => {
                if self.nodes[a].requires_grad {
                    // d/dx (max{0,x})^2 = 2·max{0,x}, which is C⁰ and itself
                    // differentiable again through the relu node.
                    let r = self.relu(a)?;
                    let r2 = self.mul_scalar(r, F::of(2.0))?;
                    let da = self.mul(u, r2);
                    push(self, &mut out, a, da)?;
                }
            }
            Op::ClampMin(a, c) => {
                if self.nodes[a].requires_grad {
                    let mask = self.step_gt(a, c)?;
                    let da = self.mul(u, mask);
                    push(self, &mut out, a, da)?;
                }
            }
            Op::MatMul(a, b) => {
                if self.nodes[a].requires_grad {
                    let bt = self.transpose(b)?;
                    let da = self.matmul(u, bt);
                    push(self, &mut out, a, da)?;
                }
                if self.nodes[b].requires_grad {
                    let at = self.transpose(a)?;
                    let db = self.matmul(at, u);
                    push(self, &mut out, b, db)?;
                }
            }
            Op::Transpose(a) => {
                let da = self.transpose(u);
                push(self, &mut out, a, da)?;
            }
            Op::Sum(a) => {
                if self.nodes[a].requires_grad {
                    let shape = self.nodes[a].shape.clone();
                    let da = self.broadcast(u, &shape);
                    push(self, &mut out, a, da)?;
                }
            }
            Op::SumAxis(a, _) => {
                if self.nodes[a].requires_grad {
                    let shape = self.nodes[a].shape.clone();
                    let da = self.broadcast(u, &shape);
                    push(self, &mut out, a, da)?;
                }
            }
            Op::LogSumExpAxis(a, _) => {
                if self.nodes[a].requires_grad {
                    // d lse/da = softmax(a) along the axis = exp(a - lse).
                    let shape = self.nodes[a].shape.clone();
                    let lse_b = self.broadcast(i, &shape)?;
                    let centered = self.sub(a, lse_b)?;
                    let sm = self.exp(centered)?;
                    let u_b = self.broadcast(u, &shape)?;
                    let da = self.mul(u_b, sm);
                    push(self, &mut out, a, da)?;
                }
            }
            Op::Broadcast(a, _) => {
                if self.nodes[a].requires_grad {
                    let src_shape = self.nodes[a].shape.clone();
                    let da = if src_shape.is_empty() {
                        self.sum(u)
                    } else {
                        let mut acc = u;
                        for ax in 0..src_shape.len() {
                            if src_shape[ax] == 1 && self.nodes[acc].shape[ax] != 1 {
                                acc = self.sum_axis(acc, ax)?;
                            }
                        }
                        Ok(acc)
                    };
                    push(self, &mut out, a, da)?;
                }
            }
            Op::Reshape(a, _) => {
                if self.nodes[a].requires_grad {
                    let shape = self.nodes[a].shape.clone();
                    let da = self.reshape(u, &shape);
                    push(self, &mut out, a, da)?;
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                if self.nodes[x].requires_grad {
                    let hw = (self.nodes[x].shape[2], self.nodes[x].shape[3]);
                    let dx = self.conv2d_bwd_input(u, w, stride, pad, hw);
                    push(self, &mut out, x, dx)?;
                }
                if self.nodes[w].requires_grad {
                    let k_hw = (self.nodes[w].shape[2], self.nodes[w].shape[3]);
                    let dw = self.conv2d_bwd_weight(x, u, stride, pad, k_hw);
                    push(self, &mut out, w, dw)?;
                }
            }
            Op::ConvBwdInput {
                dy,
                w,
                stride,
                pad,
                ..
            } => {
                if self.nodes[dy].requires_grad {
                    let ddy = self.conv2d(u, w, stride, pad);
                    push(self, &mut out, dy, ddy)?;
                }
                if self.nodes[w].requires_grad {
                    let k_hw = (self.nodes[w].shape[2], self.nodes[w].shape[3]);
                    let dw = self.conv2d_bwd_weight(u, dy, stride, pad, k_hw);
                    push(self, &mut out, w, dw)?;
                }
            }
            Op::ConvBwdWeight {
                x,
                dy,
                stride,
                pad,
                ..
            } => {
                if self.nodes[x].requires_grad {
                    let hw = (self.nodes[x].shape[2], self.nodes[x].shape[3]);
                    let dx = self.conv2d_bwd_input(dy, u, stride, pad, hw);
                    push(self, &mut out, x, dx)?;
                }
                if self.nodes[dy].requires_grad {
                    let ddy = self.conv2d(x, u, stride, pad);
                    push(self, &mut out, dy, ddy)?;
                }
            }
        }
        Ok(out)
    }
}
