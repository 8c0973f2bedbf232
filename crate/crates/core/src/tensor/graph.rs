//! Define-by-run computation tape over [`Tensor`] values.
//!
//! Ops evaluate eagerly when recorded, so builders can branch on forward
//! values (the graph-attention layer sorts neighbors by score, the frame
//! weighting reads the current uncertainty). `backward` walks the tape once
//! in reverse; `recompute` re-runs the forward pass after leaf edits, which
//! is what the finite-difference checker perturbs.

use super::{Tensor, TensorError};
use crate::loss::{abl_closed_form, abl_gradient, LossConfig};

pub type NodeId = usize;

/// Op kinds recorded on the tape. Shape contracts live in the builder
/// methods; `eval` assumes they were enforced at record time.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    AddScalar(f64),
    MulScalar(f64),
    Recip,
    Matmul,
    LeakyRelu(f64),
    Elu,
    Sigmoid,
    Softplus,
    Exp,
    Ln,
    Softmax { axis: usize },
    LogSoftmax { axis: usize },
    Conv2d { stride: usize, pad: usize },
    DepthwiseConv2d { pad_h: usize, pad_w: usize },
    Conv1dDepthwise,
    ReplicatePad1d { pad: usize },
    GlobalAvgPool,
    Concat0,
    Slice { axis: usize, start: usize, end: usize },
    AddChan,
    AddRow,
    MulSpatial,
    ScaleVec,
    SumAll,
    MeanAll,
    Reshape,
    /// Per-label asymmetric Beta loss with analytic gradients; inputs are
    /// the α and β vectors.
    AblLoss {
        labels: Vec<bool>,
        gamma_pos: u32,
        gamma_neg: u32,
        shift_c: f64,
    },
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
    name: Option<String>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn name(&self, id: NodeId) -> Option<&str> {
        self.nodes[id].name.as_deref()
    }

    /// Constant input; gradients do not flow into it.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push_leaf(t, false, None)
    }

    /// Named trainable parameter leaf.
    pub fn param(&mut self, name: &str, t: Tensor) -> NodeId {
        self.push_leaf(t, true, Some(name.to_string()))
    }

    fn push_leaf(&mut self, t: Tensor, requires_grad: bool, name: Option<String>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value: t,
            requires_grad,
            name,
        });
        self.nodes.len() - 1
    }

    /// Iterate (name, id) over named trainable leaves in insertion order.
    pub fn named_params(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| {
            if n.requires_grad && matches!(n.op, Op::Leaf) {
                n.name.as_deref().map(|s| (s, i))
            } else {
                None
            }
        })
    }

    /// Replace a leaf's data (same shape); used by the finite-difference
    /// checker and by optimizers probing the graph.
    pub fn set_leaf(&mut self, id: NodeId, data: &[f64]) -> Result<(), TensorError> {
        if !matches!(self.nodes[id].op, Op::Leaf) {
            return Err(TensorError::NotALeaf(id));
        }
        let value = &mut self.nodes[id].value;
        if data.len() != value.len() {
            return Err(TensorError::DataLen {
                shape: value.shape().to_vec(),
                expected: value.len(),
                got: data.len(),
            });
        }
        value.data_mut().copy_from_slice(data);
        Ok(())
    }

    fn push_op(&mut self, op: Op, inputs: Vec<NodeId>) -> Result<NodeId, TensorError> {
        let vals: Vec<&Tensor> = inputs.iter().map(|&i| &self.nodes[i].value).collect();
        let value = eval(&op, &vals)?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
            name: None,
        });
        Ok(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("add", a, b)?;
        self.push_op(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("sub", a, b)?;
        self.push_op(Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("mul", a, b)?;
        self.push_op(Op::Mul, vec![a, b])
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId, TensorError> {
        self.push_op(Op::AddScalar(c), vec![a])
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId, TensorError> {
        self.push_op(Op::MulScalar(c), vec![a])
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.push_op(Op::Recip, vec![a])
    }

    /// [m,k] x [k,n] -> [m,n], or [m,k] x [k] -> [m].
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        let ok = match (sa.len(), sb.len()) {
            (2, 2) => sa[1] == sb[0],
            (2, 1) => sa[1] == sb[0],
            _ => false,
        };
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        self.push_op(Op::Matmul, vec![a, b])
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId, TensorError> {
        self.push_op(Op::LeakyRelu(slope), vec![a])
    }

    pub fn elu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.push_op(Op::Elu, vec![a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.push_op(Op::Sigmoid, vec![a])
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.push_op(Op::Softplus, vec![a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.push_op(Op::Exp, vec![a])
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.push_op(Op::Ln, vec![a])
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        self.check_axis("softmax", a, axis)?;
        self.push_op(Op::Softmax { axis }, vec![a])
    }

    pub fn log_softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        self.check_axis("log_softmax", a, axis)?;
        self.push_op(Op::LogSoftmax { axis }, vec![a])
    }

    /// input [Cin,H,W], weight [Cout,Cin,kh,kw].
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        let (si, sw) = (self.shape_of(input), self.shape_of(weight));
        if si.len() != 3 || sw.len() != 4 || si[0] != sw[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: si.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        if stride == 0 || sw[2] > si[1] + 2 * pad || sw[3] > si[2] + 2 * pad {
            return Err(TensorError::BadShape {
                op: "conv2d",
                shape: sw.to_vec(),
                detail: format!("kernel/stride {stride} exceeds padded input {si:?}"),
            });
        }
        self.push_op(Op::Conv2d { stride, pad }, vec![input, weight])
    }

    /// input [C,H,W], weight [C,kh,kw]; stride 1.
    pub fn depthwise_conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        pad_h: usize,
        pad_w: usize,
    ) -> Result<NodeId, TensorError> {
        let (si, sw) = (self.shape_of(input), self.shape_of(weight));
        if si.len() != 3 || sw.len() != 3 || si[0] != sw[0] {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_conv2d",
                lhs: si.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        if sw[1] > si[1] + 2 * pad_h || sw[2] > si[2] + 2 * pad_w {
            return Err(TensorError::BadShape {
                op: "depthwise_conv2d",
                shape: sw.to_vec(),
                detail: format!("kernel exceeds padded input {si:?}"),
            });
        }
        self.push_op(Op::DepthwiseConv2d { pad_h, pad_w }, vec![input, weight])
    }

    /// input [T,C], weight [C,k]; valid (no padding), stride 1.
    pub fn conv1d_depthwise(&mut self, input: NodeId, weight: NodeId) -> Result<NodeId, TensorError> {
        let (si, sw) = (self.shape_of(input), self.shape_of(weight));
        if si.len() != 2 || sw.len() != 2 || si[1] != sw[0] || sw[1] > si[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_depthwise",
                lhs: si.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        self.push_op(Op::Conv1dDepthwise, vec![input, weight])
    }

    /// [T,C] -> [T+2*pad, C] by duplicating the first and last rows.
    pub fn replicate_pad_1d(&mut self, input: NodeId, pad: usize) -> Result<NodeId, TensorError> {
        let si = self.shape_of(input);
        if si.len() != 2 || si[0] == 0 {
            return Err(TensorError::BadShape {
                op: "replicate_pad_1d",
                shape: si.to_vec(),
                detail: "need a non-empty [T,C] input".into(),
            });
        }
        self.push_op(Op::ReplicatePad1d { pad }, vec![input])
    }

    /// [C,H,W] -> [C].
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let si = self.shape_of(input);
        if si.len() != 3 {
            return Err(TensorError::BadShape {
                op: "global_avg_pool",
                shape: si.to_vec(),
                detail: "need [C,H,W]".into(),
            });
        }
        self.push_op(Op::GlobalAvgPool, vec![input])
    }

    /// Concatenate along axis 0; trailing dims must match.
    pub fn concat0(&mut self, inputs: &[NodeId]) -> Result<NodeId, TensorError> {
        if inputs.is_empty() {
            return Err(TensorError::BadShape {
                op: "concat0",
                shape: vec![],
                detail: "no inputs".into(),
            });
        }
        let first = self.shape_of(inputs[0]).to_vec();
        for &i in &inputs[1..] {
            let s = self.shape_of(i);
            if s.len() != first.len() || s.is_empty() || s[1..] != first[1..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat0",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        if first.is_empty() {
            return Err(TensorError::BadShape {
                op: "concat0",
                shape: first,
                detail: "reshape scalars to [1] before concatenating".into(),
            });
        }
        self.push_op(Op::Concat0, inputs.to_vec())
    }

    pub fn slice(
        &mut self,
        input: NodeId,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<NodeId, TensorError> {
        let s = self.shape_of(input);
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(TensorError::BadShape {
                op: "slice",
                shape: s.to_vec(),
                detail: format!("axis {axis}, range {start}..{end}"),
            });
        }
        self.push_op(Op::Slice { axis, start, end }, vec![input])
    }

    /// [C,H,W] + [C] broadcast over spatial positions.
    pub fn add_chan(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(bias));
        if sa.len() != 3 || sb.len() != 1 || sa[0] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_chan",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        self.push_op(Op::AddChan, vec![a, bias])
    }

    /// [m,n] + [n] broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(bias));
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        self.push_op(Op::AddRow, vec![a, bias])
    }

    /// [C,H,W] * [H,W] broadcast over channels.
    pub fn mul_spatial(&mut self, a: NodeId, w: NodeId) -> Result<NodeId, TensorError> {
        let (sa, sw) = (self.shape_of(a), self.shape_of(w));
        if sa.len() != 3 || sw.len() != 2 || sa[1] != sw[0] || sa[2] != sw[1] {
            return Err(TensorError::ShapeMismatch {
                op: "mul_spatial",
                lhs: sa.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        self.push_op(Op::MulSpatial, vec![a, w])
    }

    /// Any tensor scaled by a length-1 node.
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, TensorError> {
        if self.value(s).len() != 1 {
            return Err(TensorError::BadShape {
                op: "scale_by",
                shape: self.shape_of(s).to_vec(),
                detail: "scale must be a length-1 node".into(),
            });
        }
        self.push_op(Op::ScaleVec, vec![a, s])
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.push_op(Op::SumAll, vec![a])
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.push_op(Op::MeanAll, vec![a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(TensorError::DataLen {
                shape,
                expected: self.value(a).len(),
                got: n,
            });
        }
        let vals = vec![&self.nodes[a].value];
        let mut value = eval(&Op::Reshape, &vals)?;
        value.shape = shape;
        let requires_grad = self.nodes[a].requires_grad;
        self.nodes.push(Node {
            op: Op::Reshape,
            inputs: vec![a],
            value,
            requires_grad,
            name: None,
        });
        Ok(self.nodes.len() - 1)
    }

    /// Per-label asymmetric Beta loss over α, β vectors -> loss vector.
    pub fn abl_loss(
        &mut self,
        alpha: NodeId,
        beta: NodeId,
        labels: &[bool],
        cfg: &LossConfig,
    ) -> Result<NodeId, TensorError> {
        let (sa, sb) = (self.shape_of(alpha), self.shape_of(beta));
        if sa.len() != 1 || sa != sb || sa[0] != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "abl_loss",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        self.push_op(
            Op::AblLoss {
                labels: labels.to_vec(),
                gamma_pos: cfg.gamma_pos,
                gamma_neg: cfg.gamma_neg,
                shift_c: cfg.shift_c,
            },
            vec![alpha, beta],
        )
    }

    fn shape_of(&self, id: NodeId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), TensorError> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape_of(a).to_vec(),
                rhs: self.shape_of(b).to_vec(),
            });
        }
        Ok(())
    }

    fn check_axis(&self, op: &'static str, a: NodeId, axis: usize) -> Result<(), TensorError> {
        let s = self.shape_of(a);
        if axis >= s.len() {
            return Err(TensorError::BadShape {
                op,
                shape: s.to_vec(),
                detail: format!("axis {axis} out of range"),
            });
        }
        Ok(())
    }

    /// Re-run the forward pass in tape order (after leaf edits).
    pub fn recompute(&mut self) -> Result<(), TensorError> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let vals: Vec<&Tensor> = self.nodes[i]
                .inputs
                .iter()
                .map(|&j| &self.nodes[j].value)
                .collect();
            let mut value = eval(&self.nodes[i].op, &vals)?;
            if matches!(self.nodes[i].op, Op::Reshape) {
                value.shape = self.nodes[i].value.shape().to_vec();
            }
            self.nodes[i].value = value;
        }
        Ok(())
    }

    /// Reverse pass from a scalar loss; returns per-node gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        if self.nodes[loss].value.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.nodes[loss].value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor {
            shape: self.nodes[loss].value.shape().to_vec(),
            data: vec![1.0],
        });
        for id in (0..=loss).rev() {
            if grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let dy = grads[id].take().unwrap();
            self.backprop_node(id, &dy, &mut grads)?;
            grads[id] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(
        &self,
        id: NodeId,
        dy: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), TensorError> {
        let node = &self.nodes[id];
        let needs: Vec<bool> = node
            .inputs
            .iter()
            .map(|&i| self.nodes[i].requires_grad)
            .collect();
        if needs.iter().all(|&b| !b) {
            return Ok(());
        }
        let in_vals: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
        let contributions = backward_op(&node.op, &in_vals, &node.value, dy)?;
        for ((&input, contrib), need) in node.inputs.iter().zip(contributions).zip(needs) {
            if !need {
                continue;
            }
            if let Some(c) = contrib {
                match &mut grads[input] {
                    Some(g) => {
                        for (gv, cv) in g.data_mut().iter_mut().zip(c.data()) {
                            *gv += cv;
                        }
                    }
                    slot => *slot = Some(c),
                }
            }
        }
        Ok(())
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Axis geometry: (outer, len, inner) such that element (o, i, j) sits at
/// (o * len + i) * inner + j.
fn axis_geometry(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Output columns [lo, hi] hit by kernel tap `v` of a row convolution, plus
/// the first input column. Returns None when the tap never lands in bounds.
#[inline]
fn conv_tap_range(
    out_w: usize,
    in_w: usize,
    stride: usize,
    pad: usize,
    v: usize,
) -> Option<(usize, usize, usize)> {
    let base = v as isize - pad as isize;
    let lo = if base < 0 {
        ((-base) as usize).div_ceil(stride)
    } else {
        0
    };
    let max_ix = in_w as isize - 1;
    if base > max_ix {
        return None;
    }
    let hi = (((max_ix - base) as usize) / stride).min(out_w - 1);
    if lo > hi {
        return None;
    }
    let first_ix = (lo * stride) as isize + base;
    Some((lo, hi, first_ix as usize))
}

/// out[ox] += Σ_v w[v] · x[ox·stride + v − pad] over in-bounds taps.
#[inline]
fn conv_row_acc(out: &mut [f64], x: &[f64], w: &[f64], stride: usize, pad: usize) {
    for (v, &wv) in w.iter().enumerate() {
        if wv == 0.0 {
            continue;
        }
        let Some((lo, hi, first_ix)) = conv_tap_range(out.len(), x.len(), stride, pad, v) else {
            continue;
        };
        let xs = &x[first_ix..];
        for (o, xv) in out[lo..=hi].iter_mut().zip(xs.iter().step_by(stride)) {
            *o += wv * xv;
        }
    }
}

/// dx[ox·stride + v − pad] += w[v] · dy[ox] and dw[v] += x[...] · dy[ox].
#[inline]
fn conv_row_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    dx: &mut [f64],
    dw: &mut [f64],
    stride: usize,
    pad: usize,
) {
    for v in 0..w.len() {
        let Some((lo, hi, first_ix)) = conv_tap_range(dy.len(), x.len(), stride, pad, v) else {
            continue;
        };
        let wv = w[v];
        let mut dw_acc = 0.0;
        let dxs = &mut dx[first_ix..];
        let xs = &x[first_ix..];
        for ((dyv, dxv), xv) in dy[lo..=hi]
            .iter()
            .zip(dxs.iter_mut().step_by(stride))
            .zip(xs.iter().step_by(stride))
        {
            *dxv += wv * dyv;
            dw_acc += xv * dyv;
        }
        dw[v] += dw_acc;
    }
}

/// Forward evaluation shared by op recording and recomputation.
fn eval(op: &Op, inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
    let out = match op {
        Op::Leaf => unreachable!("leaves carry their value"),
        Op::Add => {
            let mut d = inputs[0].data.clone();
            for (v, b) in d.iter_mut().zip(&inputs[1].data) {
                *v += b;
            }
            Tensor { shape: inputs[0].shape.clone(), data: d }
        }
        Op::Sub => {
            let mut d = inputs[0].data.clone();
            for (v, b) in d.iter_mut().zip(&inputs[1].data) {
                *v -= b;
            }
            Tensor { shape: inputs[0].shape.clone(), data: d }
        }
        Op::Mul => {
            let mut d = inputs[0].data.clone();
            for (v, b) in d.iter_mut().zip(&inputs[1].data) {
                *v *= b;
            }
            Tensor { shape: inputs[0].shape.clone(), data: d }
        }
        Op::AddScalar(c) => Tensor {
            shape: inputs[0].shape.clone(),
            data: inputs[0].data.iter().map(|v| v + c).collect(),
        },
        Op::MulScalar(c) => Tensor {
            shape: inputs[0].shape.clone(),
            data: inputs[0].data.iter().map(|v| v * c).collect(),
        },
        Op::Recip => Tensor {
            shape: inputs[0].shape.clone(),
            data: inputs[0].data.iter().map(|v| 1.0 / v).collect(),
        },
        Op::Matmul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = (a.shape[0], a.shape[1]);
            if b.rank() == 2 {
                let n = b.shape[1];
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    for l in 0..k {
                        let av = a.data[i * k + l];
                        if av == 0.0 {
                            continue;
                        }
                        let brow = &b.data[l * n..(l + 1) * n];
                        let drow = &mut d[i * n..(i + 1) * n];
                        for (dv, bv) in drow.iter_mut().zip(brow) {
                            *dv += av * bv;
                        }
                    }
                }
                Tensor { shape: vec![m, n], data: d }
            } else {
                let mut d = vec![0.0; m];
                for i in 0..m {
                    let mut acc = 0.0;
                    for l in 0..k {
                        acc += a.data[i * k + l] * b.data[l];
                    }
                    d[i] = acc;
                }
                Tensor { shape: vec![m], data: d }
            }
        }
        Op::LeakyRelu(slope) => Tensor {
            shape: inputs[0].shape.clone(),
            data: inputs[0]
                .data
                .iter()
                .map(|&v| if v > 0.0 { v } else { slope * v })
                .collect(),
        },
        Op::Elu => Tensor {
            shape: inputs[0].shape.clone(),
            data: inputs[0]
                .data
                .iter()
                .map(|&v| if v > 0.0 { v } else { v.exp_m1() })
                .collect(),
        },
        Op::Sigmoid => Tensor {
            shape: inputs[0].shape.clone(),
            data: inputs[0].data.iter().map(|&v| stable_sigmoid(v)).collect(),
        },
        Op::Softplus => Tensor {
            shape: inputs[0].shape.clone(),
            data: inputs[0].data.iter().map(|&v| stable_softplus(v)).collect(),
        },
        Op::Exp => Tensor {
            shape: inputs[0].shape.clone(),
            data: inputs[0].data.iter().map(|v| v.exp()).collect(),
        },
        Op::Ln => Tensor {
            shape: inputs[0].shape.clone(),
            data: inputs[0].data.iter().map(|v| v.ln()).collect(),
        },
        Op::Softmax { axis } => {
            let x = inputs[0];
            let (outer, len, inner) = axis_geometry(&x.shape, *axis);
            let mut d = vec![0.0; x.data.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let at = |i: usize| (o * len + i) * inner + j;
                    let mut mx = f64::NEG_INFINITY;
                    for i in 0..len {
                        mx = mx.max(x.data[at(i)]);
                    }
                    let mut denom = 0.0;
                    for i in 0..len {
                        let e = (x.data[at(i)] - mx).exp();
                        d[at(i)] = e;
                        denom += e;
                    }
                    for i in 0..len {
                        d[at(i)] /= denom;
                    }
                }
            }
            Tensor { shape: x.shape.clone(), data: d }
        }
        Op::LogSoftmax { axis } => {
            let x = inputs[0];
            let (outer, len, inner) = axis_geometry(&x.shape, *axis);
            let mut d = vec![0.0; x.data.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let at = |i: usize| (o * len + i) * inner + j;
                    let mut mx = f64::NEG_INFINITY;
                    for i in 0..len {
                        mx = mx.max(x.data[at(i)]);
                    }
                    let mut denom = 0.0;
                    for i in 0..len {
                        denom += (x.data[at(i)] - mx).exp();
                    }
                    let lse = mx + denom.ln();
                    for i in 0..len {
                        d[at(i)] = x.data[at(i)] - lse;
                    }
                }
            }
            Tensor { shape: x.shape.clone(), data: d }
        }
        Op::Conv2d { stride, pad } => {
            let (x, w) = (inputs[0], inputs[1]);
            let (cin, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
            let (cout, kh, kw) = (w.shape[0], w.shape[2], w.shape[3]);
            let oh = (h + 2 * pad - kh) / stride + 1;
            let ow = (wd + 2 * pad - kw) / stride + 1;
            let mut d = vec![0.0; cout * oh * ow];
            for co in 0..cout {
                for ci in 0..cin {
                    for u in 0..kh {
                        let w_row = &w.data[((co * cin + ci) * kh + u) * kw..][..kw];
                        for oy in 0..oh {
                            let iy = (oy * stride + u) as isize - *pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let x_row = &x.data[(ci * h + iy as usize) * wd..][..wd];
                            let out_row = &mut d[(co * oh + oy) * ow..][..ow];
                            conv_row_acc(out_row, x_row, w_row, *stride, *pad);
                        }
                    }
                }
            }
            Tensor { shape: vec![cout, oh, ow], data: d }
        }
        Op::DepthwiseConv2d { pad_h, pad_w } => {
            let (x, w) = (inputs[0], inputs[1]);
            let (c, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
            let (kh, kw) = (w.shape[1], w.shape[2]);
            let oh = h + 2 * pad_h - kh + 1;
            let ow = wd + 2 * pad_w - kw + 1;
            let mut d = vec![0.0; c * oh * ow];
            for ch in 0..c {
                for u in 0..kh {
                    let w_row = &w.data[(ch * kh + u) * kw..][..kw];
                    for oy in 0..oh {
                        let iy = (oy + u) as isize - *pad_h as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x_row = &x.data[(ch * h + iy as usize) * wd..][..wd];
                        let out_row = &mut d[(ch * oh + oy) * ow..][..ow];
                        conv_row_acc(out_row, x_row, w_row, 1, *pad_w);
                    }
                }
            }
            Tensor { shape: vec![c, oh, ow], data: d }
        }
        Op::Conv1dDepthwise => {
            let (x, w) = (inputs[0], inputs[1]);
            let (t, c) = (x.shape[0], x.shape[1]);
            let k = w.shape[1];
            let ot = t - k + 1;
            let mut d = vec![0.0; ot * c];
            for ch in 0..c {
                for o in 0..ot {
                    let mut acc = 0.0;
                    for u in 0..k {
                        acc += x.data[(o + u) * c + ch] * w.data[ch * k + u];
                    }
                    d[o * c + ch] = acc;
                }
            }
            Tensor { shape: vec![ot, c], data: d }
        }
        Op::ReplicatePad1d { pad } => {
            let x = inputs[0];
            let (t, c) = (x.shape[0], x.shape[1]);
            let mut d = vec![0.0; (t + 2 * pad) * c];
            for o in 0..t + 2 * pad {
                let src = o.saturating_sub(*pad).min(t - 1);
                d[o * c..(o + 1) * c].copy_from_slice(&x.data[src * c..(src + 1) * c]);
            }
            Tensor { shape: vec![t + 2 * pad, c], data: d }
        }
        Op::GlobalAvgPool => {
            let x = inputs[0];
            let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
            let inv = 1.0 / (h * w) as f64;
            let mut d = vec![0.0; c];
            for ch in 0..c {
                let mut acc = 0.0;
                for i in 0..h * w {
                    acc += x.data[ch * h * w + i];
                }
                d[ch] = acc * inv;
            }
            Tensor { shape: vec![c], data: d }
        }
        Op::Concat0 => {
            let mut shape = inputs[0].shape.clone();
            shape[0] = inputs.iter().map(|t| t.shape[0]).sum();
            let mut d = Vec::with_capacity(shape.iter().product());
            for t in inputs {
                d.extend_from_slice(&t.data);
            }
            Tensor { shape, data: d }
        }
        Op::Slice { axis, start, end } => {
            let x = inputs[0];
            let (outer, len, inner) = axis_geometry(&x.shape, *axis);
            let n = end - start;
            let mut shape = x.shape.clone();
            shape[*axis] = n;
            let mut d = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for i in 0..n {
                    let src = (o * len + start + i) * inner;
                    let dst = (o * n + i) * inner;
                    d[dst..dst + inner].copy_from_slice(&x.data[src..src + inner]);
                }
            }
            Tensor { shape, data: d }
        }
        Op::AddChan => {
            let (x, b) = (inputs[0], inputs[1]);
            let (c, hw) = (x.shape[0], x.shape[1] * x.shape[2]);
            let mut d = x.data.clone();
            for ch in 0..c {
                let bv = b.data[ch];
                for v in &mut d[ch * hw..(ch + 1) * hw] {
                    *v += bv;
                }
            }
            Tensor { shape: x.shape.clone(), data: d }
        }
        Op::AddRow => {
            let (x, b) = (inputs[0], inputs[1]);
            let (m, n) = (x.shape[0], x.shape[1]);
            let mut d = x.data.clone();
            for i in 0..m {
                for j in 0..n {
                    d[i * n + j] += b.data[j];
                }
            }
            Tensor { shape: x.shape.clone(), data: d }
        }
        Op::MulSpatial => {
            let (x, w) = (inputs[0], inputs[1]);
            let (c, hw) = (x.shape[0], x.shape[1] * x.shape[2]);
            let mut d = x.data.clone();
            for ch in 0..c {
                for i in 0..hw {
                    d[ch * hw + i] *= w.data[i];
                }
            }
            Tensor { shape: x.shape.clone(), data: d }
        }
        Op::ScaleVec => {
            let s = inputs[1].data[0];
            Tensor {
                shape: inputs[0].shape.clone(),
                data: inputs[0].data.iter().map(|v| v * s).collect(),
            }
        }
        Op::SumAll => Tensor::scalar(inputs[0].data.iter().sum()),
        Op::MeanAll => {
            Tensor::scalar(inputs[0].data.iter().sum::<f64>() / inputs[0].data.len() as f64)
        }
        Op::Reshape => Tensor {
            shape: inputs[0].shape.clone(),
            data: inputs[0].data.clone(),
        },
        Op::AblLoss { labels, gamma_pos, gamma_neg, shift_c } => {
            let (a, b) = (inputs[0], inputs[1]);
            let cfg = LossConfig {
                gamma_pos: *gamma_pos,
                gamma_neg: *gamma_neg,
                shift_c: *shift_c,
                ..LossConfig::defaults(labels.len())
            };
            let mut d = vec![0.0; labels.len()];
            for (i, &y) in labels.iter().enumerate() {
                d[i] = abl_closed_form(a.data[i], b.data[i], y, &cfg)?;
            }
            Tensor { shape: vec![labels.len()], data: d }
        }
    };
    Ok(out)
}

/// Per-input gradient contributions for one op. `None` entries mean no
/// gradient flows to that input.
fn backward_op(
    op: &Op,
    inputs: &[&Tensor],
    output: &Tensor,
    dy: &Tensor,
) -> Result<Vec<Option<Tensor>>, TensorError> {
    let like = |t: &Tensor, data: Vec<f64>| Tensor { shape: t.shape.clone(), data };
    let out = match op {
        Op::Leaf => vec![],
        Op::Add => vec![Some(dy.clone()), Some(dy.clone())],
        Op::Sub => vec![
            Some(dy.clone()),
            Some(like(dy, dy.data.iter().map(|v| -v).collect())),
        ],
        Op::Mul => vec![
            Some(like(dy, dy.data.iter().zip(&inputs[1].data).map(|(d, b)| d * b).collect())),
            Some(like(dy, dy.data.iter().zip(&inputs[0].data).map(|(d, a)| d * a).collect())),
        ],
        Op::AddScalar(_) => vec![Some(dy.clone())],
        Op::MulScalar(c) => vec![Some(like(dy, dy.data.iter().map(|v| v * c).collect()))],
        Op::Recip => vec![Some(like(
            dy,
            dy.data
                .iter()
                .zip(&output.data)
                .map(|(d, y)| -d * y * y)
                .collect(),
        ))],
        Op::Matmul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = (a.shape[0], a.shape[1]);
            if b.rank() == 2 {
                let n = b.shape[1];
                // dA = dY B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for l in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += dy.data[i * n + j] * b.data[l * n + j];
                        }
                        da[i * k + l] = acc;
                    }
                }
                // dB = A^T dY
                let mut db = vec![0.0; k * n];
                for l in 0..k {
                    for i in 0..m {
                        let av = a.data[i * k + l];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[l * n + j] += av * dy.data[i * n + j];
                        }
                    }
                }
                vec![
                    Some(Tensor { shape: vec![m, k], data: da }),
                    Some(Tensor { shape: vec![k, n], data: db }),
                ]
            } else {
                // y = A x: dA = dy ⊗ x, dx = A^T dy
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for l in 0..k {
                        da[i * k + l] = dy.data[i] * b.data[l];
                    }
                }
                let mut db = vec![0.0; k];
                for l in 0..k {
                    let mut acc = 0.0;
                    for i in 0..m {
                        acc += a.data[i * k + l] * dy.data[i];
                    }
                    db[l] = acc;
                }
                vec![
                    Some(Tensor { shape: vec![m, k], data: da }),
                    Some(Tensor { shape: vec![k], data: db }),
                ]
            }
        }
        Op::LeakyRelu(slope) => vec![Some(like(
            dy,
            dy.data
                .iter()
                .zip(&inputs[0].data)
                .map(|(d, &x)| if x > 0.0 { *d } else { d * slope })
                .collect(),
        ))],
        Op::Elu => vec![Some(like(
            dy,
            dy.data
                .iter()
                .zip(inputs[0].data.iter().zip(&output.data))
                .map(|(d, (&x, &y))| if x > 0.0 { *d } else { d * (y + 1.0) })
                .collect(),
        ))],
        Op::Sigmoid => vec![Some(like(
            dy,
            dy.data
                .iter()
                .zip(&output.data)
                .map(|(d, &y)| d * y * (1.0 - y))
                .collect(),
        ))],
        Op::Softplus => vec![Some(like(
            dy,
            dy.data
                .iter()
                .zip(&inputs[0].data)
                .map(|(d, &x)| d * stable_sigmoid(x))
                .collect(),
        ))],
        Op::Exp => vec![Some(like(
            dy,
            dy.data.iter().zip(&output.data).map(|(d, y)| d * y).collect(),
        ))],
        Op::Ln => vec![Some(like(
            dy,
            dy.data
                .iter()
                .zip(&inputs[0].data)
                .map(|(d, x)| d / x)
                .collect(),
        ))],
        Op::Softmax { axis } => {
            let (outer, len, inner) = axis_geometry(&output.shape, *axis);
            let mut dx = vec![0.0; output.data.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let at = |i: usize| (o * len + i) * inner + j;
                    let mut dot = 0.0;
                    for i in 0..len {
                        dot += dy.data[at(i)] * output.data[at(i)];
                    }
                    for i in 0..len {
                        dx[at(i)] = output.data[at(i)] * (dy.data[at(i)] - dot);
                    }
                }
            }
            vec![Some(like(output, dx))]
        }
        Op::LogSoftmax { axis } => {
            let (outer, len, inner) = axis_geometry(&output.shape, *axis);
            let mut dx = vec![0.0; output.data.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let at = |i: usize| (o * len + i) * inner + j;
                    let mut sum = 0.0;
                    for i in 0..len {
                        sum += dy.data[at(i)];
                    }
                    for i in 0..len {
                        dx[at(i)] = dy.data[at(i)] - output.data[at(i)].exp() * sum;
                    }
                }
            }
            vec![Some(like(output, dx))]
        }
        Op::Conv2d { stride, pad } => {
            let (x, w) = (inputs[0], inputs[1]);
            let (cin, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
            let (cout, kh, kw) = (w.shape[0], w.shape[2], w.shape[3]);
            let (oh, ow) = (output.shape[1], output.shape[2]);
            let mut dx = vec![0.0; x.data.len()];
            let mut dw = vec![0.0; w.data.len()];
            for co in 0..cout {
                for ci in 0..cin {
                    for u in 0..kh {
                        let wbase = ((co * cin + ci) * kh + u) * kw;
                        let w_row = &w.data[wbase..][..kw];
                        let dw_row = &mut dw[wbase..][..kw];
                        for oy in 0..oh {
                            let iy = (oy * stride + u) as isize - *pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xbase = (ci * h + iy as usize) * wd;
                            let dy_row = &dy.data[(co * oh + oy) * ow..][..ow];
                            conv_row_backward(
                                dy_row,
                                &x.data[xbase..][..wd],
                                w_row,
                                &mut dx[xbase..][..wd],
                                dw_row,
                                *stride,
                                *pad,
                            );
                        }
                    }
                }
            }
            vec![
                Some(like(x, dx)),
                Some(like(w, dw)),
            ]
        }
        Op::DepthwiseConv2d { pad_h, pad_w } => {
            let (x, w) = (inputs[0], inputs[1]);
            let (c, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
            let (kh, kw) = (w.shape[1], w.shape[2]);
            let (oh, ow) = (output.shape[1], output.shape[2]);
            let mut dx = vec![0.0; x.data.len()];
            let mut dw = vec![0.0; w.data.len()];
            for ch in 0..c {
                for u in 0..kh {
                    let wbase = (ch * kh + u) * kw;
                    let w_row = &w.data[wbase..][..kw];
                    let dw_row = &mut dw[wbase..][..kw];
                    for oy in 0..oh {
                        let iy = (oy + u) as isize - *pad_h as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xbase = (ch * h + iy as usize) * wd;
                        let dy_row = &dy.data[(ch * oh + oy) * ow..][..ow];
                        conv_row_backward(
                            dy_row,
                            &x.data[xbase..][..wd],
                            w_row,
                            &mut dx[xbase..][..wd],
                            dw_row,
                            1,
                            *pad_w,
                        );
                    }
                }
            }
            vec![Some(like(x, dx)), Some(like(w, dw))]
        }
        Op::Conv1dDepthwise => {
            let (x, w) = (inputs[0], inputs[1]);
            let (_t, c) = (x.shape[0], x.shape[1]);
            let k = w.shape[1];
            let ot = output.shape[0];
            let mut dx = vec![0.0; x.data.len()];
            let mut dw = vec![0.0; w.data.len()];
            for ch in 0..c {
                for o in 0..ot {
                    let g = dy.data[o * c + ch];
                    if g == 0.0 {
                        continue;
                    }
                    for u in 0..k {
                        dx[(o + u) * c + ch] += g * w.data[ch * k + u];
                        dw[ch * k + u] += g * x.data[(o + u) * c + ch];
                    }
                }
            }
            vec![Some(like(x, dx)), Some(like(w, dw))]
        }
        Op::ReplicatePad1d { pad } => {
            let x = inputs[0];
            let (t, c) = (x.shape[0], x.shape[1]);
            let mut dx = vec![0.0; x.data.len()];
            for o in 0..t + 2 * pad {
                let src = o.saturating_sub(*pad).min(t - 1);
                for j in 0..c {
                    dx[src * c + j] += dy.data[o * c + j];
                }
            }
            vec![Some(like(x, dx))]
        }
        Op::GlobalAvgPool => {
            let x = inputs[0];
            let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
            let inv = 1.0 / (h * w) as f64;
            let mut dx = vec![0.0; x.data.len()];
            for ch in 0..c {
                let g = dy.data[ch] * inv;
                for i in 0..h * w {
                    dx[ch * h * w + i] = g;
                }
            }
            vec![Some(like(x, dx))]
        }
        Op::Concat0 => {
            let mut outs = Vec::with_capacity(inputs.len());
            let mut offset = 0;
            for t in inputs {
                let n = t.data.len();
                outs.push(Some(like(t, dy.data[offset..offset + n].to_vec())));
                offset += n;
            }
            outs
        }
        Op::Slice { axis, start, end } => {
            let x = inputs[0];
            let (outer, len, inner) = axis_geometry(&x.shape, *axis);
            let n = end - start;
            let mut dx = vec![0.0; x.data.len()];
            for o in 0..outer {
                for i in 0..n {
                    let dst = (o * len + start + i) * inner;
                    let src = (o * n + i) * inner;
                    dx[dst..dst + inner].copy_from_slice(&dy.data[src..src + inner]);
                }
            }
            vec![Some(like(x, dx))]
        }
        Op::AddChan => {
            let (x, b) = (inputs[0], inputs[1]);
            let (c, hw) = (x.shape[0], x.shape[1] * x.shape[2]);
            let mut db = vec![0.0; c];
            for ch in 0..c {
                db[ch] = dy.data[ch * hw..(ch + 1) * hw].iter().sum();
            }
            vec![Some(dy.clone()), Some(like(b, db))]
        }
        Op::AddRow => {
            let (x, b) = (inputs[0], inputs[1]);
            let (m, n) = (x.shape[0], x.shape[1]);
            let mut db = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    db[j] += dy.data[i * n + j];
                }
            }
            vec![Some(dy.clone()), Some(like(b, db))]
        }
        Op::MulSpatial => {
            let (x, w) = (inputs[0], inputs[1]);
            let (c, hw) = (x.shape[0], x.shape[1] * x.shape[2]);
            let mut dx = vec![0.0; x.data.len()];
            let mut dw = vec![0.0; w.data.len()];
            for ch in 0..c {
                for i in 0..hw {
                    dx[ch * hw + i] = dy.data[ch * hw + i] * w.data[i];
                    dw[i] += dy.data[ch * hw + i] * x.data[ch * hw + i];
                }
            }
            vec![Some(like(x, dx)), Some(like(w, dw))]
        }
        Op::ScaleVec => {
            let (x, s) = (inputs[0], inputs[1]);
            let sv = s.data[0];
            let dx: Vec<f64> = dy.data.iter().map(|d| d * sv).collect();
            let ds: f64 = dy.data.iter().zip(&x.data).map(|(d, a)| d * a).sum();
            vec![Some(like(x, dx)), Some(like(s, vec![ds]))]
        }
        Op::SumAll => {
            let g = dy.data[0];
            vec![Some(like(inputs[0], vec![g; inputs[0].data.len()]))]
        }
        Op::MeanAll => {
            let g = dy.data[0] / inputs[0].data.len() as f64;
            vec![Some(like(inputs[0], vec![g; inputs[0].data.len()]))]
        }
        Op::Reshape => vec![Some(like(inputs[0], dy.data.clone()))],
        Op::AblLoss { labels, gamma_pos, gamma_neg, shift_c } => {
            let (a, b) = (inputs[0], inputs[1]);
            let cfg = LossConfig {
                gamma_pos: *gamma_pos,
                gamma_neg: *gamma_neg,
                shift_c: *shift_c,
                ..LossConfig::defaults(labels.len())
            };
            let mut da = vec![0.0; labels.len()];
            let mut db = vec![0.0; labels.len()];
            for (i, &y) in labels.iter().enumerate() {
                let (ga, gb) = abl_gradient(a.data[i], b.data[i], y, &cfg)?;
                da[i] = dy.data[i] * ga;
                db[i] = dy.data[i] * gb;
            }
            vec![Some(like(a, da)), Some(like(b, db))]
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let eye = g.input(Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap());
        let a = g.input(Tensor::new(vec![3, 3], (1..=9).map(|v| v as f64).collect()).unwrap());
        let out = g.matmul(eye, a).unwrap();
        assert_eq!(g.value(out).data(), g.value(a).data());
    }

    #[test]
    fn softmax_uniform_at_zero_logits() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let s = g.softmax(x, 0).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let total: f64 = g.value(s).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn global_avg_pool_mean() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 2, 2], vec![1., 2., 3., 4.]).unwrap());
        let p = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(p).data(), &[2.5]);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn softmax_cross_entropy_gradient_at_uniform_logits() {
        let mut g = Graph::new();
        let x = g.param("logits", Tensor::vector(vec![0.0, 0.0, 0.0]));
        let lsm = g.log_softmax(x, 0).unwrap();
        let picked = g.slice(lsm, 0, 0, 1).unwrap();
        let summed = g.sum_all(picked).unwrap();
        let loss = g.mul_scalar(summed, -1.0).unwrap();
        let grads = g.backward(loss).unwrap();
        let got = grads.get(x).unwrap().data();
        let want = [1.0 / 3.0 - 1.0, 1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::vector(vec![0.0, 0.0]));
        let s = g.sigmoid(x).unwrap();
        let loss = g.sum_all(s).unwrap();
        let grads = g.backward(loss).unwrap();
        for v in grads.get(x).unwrap().data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::vector(vec![1.0, 2.0]));
        let y = g.mul(x, x).unwrap();
        assert!(matches!(g.backward(y), Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn constant_loss_leaves_parameters_without_gradient() {
        let mut g = Graph::new();
        let _x = g.param("x", Tensor::vector(vec![1.0, 2.0]));
        let c = g.input(Tensor::scalar(5.0));
        let loss = g.mul_scalar(c, 2.0).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(_x).is_none());
    }

    #[test]
    fn shape_errors_name_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.input(Tensor::vector(vec![1.0, 2.0]));
        let b = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
        match g.add(a, b) {
            Err(TensorError::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "add");
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn replicate_pad_duplicates_edges() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap());
        let p = g.replicate_pad_1d(x, 2).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let build = || {
            let mut g = Graph::new();
            let x = g.input(Tensor::new(vec![2, 4, 4], (0..32).map(|v| v as f64 * 0.1).collect()).unwrap());
            let w = g.input(Tensor::new(vec![3, 2, 2, 2], (0..24).map(|v| v as f64 * 0.01).collect()).unwrap());
            let c = g.conv2d(x, w, 2, 0).unwrap();
            let s = g.sigmoid(c).unwrap();
            let out = g.sum_all(s).unwrap();
            g.value(out).item().to_bits()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn recompute_tracks_leaf_edits() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(2.0));
        let y = g.mul(x, x).unwrap();
        assert_eq!(g.value(y).item(), 4.0);
        g.set_leaf(x, &[5.0]).unwrap();
        g.recompute().unwrap();
        assert_eq!(g.value(y).item(), 25.0);
    }
}
