//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Everything is 64-bit. A [`Tape`] owns the recorded computation; a
//! [`Tensor`] is a cheap copyable handle (tape reference + node id).
//! Operations compute values eagerly, record enough to replay the chain rule,
//! and [`Tape::backward`] walks the records in reverse to populate leaf
//! gradients. Repeated backward calls accumulate into the same leaf buffers.
//!
//! The op set is exactly what the encoder/decoder model needs: matmul,
//! row-broadcast bias, elementwise add/mul/scale, transpose, axis softmax,
//! erf-form GeLU, layer norm, depthwise 1-D convolution, embedding lookup,
//! and negative-log-likelihood cross-entropy. All loops are plain sequential
//! f64 so identical inputs give bit-identical outputs.

pub mod gradcheck;

use std::cell::{Ref, RefCell};

use crate::error::{AmpsError, Result};

pub type NodeId = usize;

/// Reduction mode for cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

// ── Recorded operations ─────────────────────────────────────────────────────

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    /// Matrix plus row-vector bias broadcast over rows.
    AddBias(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Softmax {
        x: NodeId,
        axis: usize,
    },
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    DepthwiseConv1d {
        x: NodeId,
        kernel: NodeId,
    },
    Embed {
        table: NodeId,
        ids: Vec<u32>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<u32>,
        reduce: Reduce,
    },
    Sum(NodeId),
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<NodeId>),
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    /// Persistent gradient accumulator; leaves only.
    acc_grad: Option<Vec<f64>>,
    op: Op,
}

/// Growable record of one forward computation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to one node on a tape.
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, op: Op) -> Tensor<'_> {
        debug_assert_eq!(numel(&shape), values.len());
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            shape,
            values,
            requires_grad,
            acc_grad: None,
            op,
        });
        Tensor { tape: self, id }
    }

    /// New differentiable leaf (parameter or input that needs a gradient).
    pub fn leaf(&self, shape: &[usize], values: Vec<f64>) -> Result<Tensor<'_>> {
        if numel(shape) != values.len() {
            return Err(AmpsError::ShapeMismatch {
                op: "leaf",
                lhs: shape.to_vec(),
                rhs: vec![values.len()],
            });
        }
        Ok(self.push(shape.to_vec(), values, true, Op::Leaf))
    }

    /// New constant leaf (no gradient is tracked).
    pub fn constant(&self, shape: &[usize], values: Vec<f64>) -> Result<Tensor<'_>> {
        if numel(shape) != values.len() {
            return Err(AmpsError::ShapeMismatch {
                op: "constant",
                lhs: shape.to_vec(),
                rhs: vec![values.len()],
            });
        }
        Ok(self.push(shape.to_vec(), values, false, Op::Leaf))
    }

    /// Token-id row gather from an embedding table `[V × D]`.
    pub fn embed<'t>(&'t self, table: Tensor<'t>, ids: &[u32]) -> Result<Tensor<'t>> {
        self.assert_same_tape(table);
        let tshape = self.nodes.borrow()[table.id].shape.clone();
        if tshape.len() != 2 {
            return Err(AmpsError::ShapeMismatch {
                op: "embed",
                lhs: tshape,
                rhs: vec![0, 0],
            });
        }
        let (v, d) = (tshape[0], tshape[1]);
        if ids.is_empty() {
            return Err(AmpsError::EmptyInput {
                op: "embed",
                what: "ids",
            });
        }
        for &id in ids {
            if id as usize >= v {
                return Err(AmpsError::TokenOutOfVocab {
                    op: "embed",
                    id,
                    vocab: v,
                });
            }
        }
        let mut out = vec![0.0; ids.len() * d];
        {
            let nodes = self.nodes.borrow();
            let tv = &nodes[table.id].values;
            for (t, &id) in ids.iter().enumerate() {
                let row = id as usize;
                out[t * d..(t + 1) * d].copy_from_slice(&tv[row * d..(row + 1) * d]);
            }
        }
        Ok(self.push(
            vec![ids.len(), d],
            out,
            false,
            Op::Embed {
                table: table.id,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Column-wise concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols<'t>(&'t self, parts: &[Tensor<'t>]) -> Result<Tensor<'t>> {
        if parts.is_empty() {
            return Err(AmpsError::EmptyInput {
                op: "concat_cols",
                what: "parts",
            });
        }
        for p in parts {
            self.assert_same_tape(*p);
        }
        let nodes = self.nodes.borrow();
        let rows = nodes[parts[0].id].shape[0];
        let mut total_cols = 0usize;
        for p in parts {
            let s = &nodes[p.id].shape;
            if s.len() != 2 || s[0] != rows {
                return Err(AmpsError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: nodes[parts[0].id].shape.clone(),
                    rhs: s.clone(),
                });
            }
            total_cols += s[1];
        }
        let mut out = vec![0.0; rows * total_cols];
        for r in 0..rows {
            let mut col = 0usize;
            for p in parts {
                let s = &nodes[p.id].shape;
                let c = s[1];
                out[r * total_cols + col..r * total_cols + col + c]
                    .copy_from_slice(&nodes[p.id].values[r * c..(r + 1) * c]);
                col += c;
            }
        }
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        drop(nodes);
        Ok(self.push(vec![rows, total_cols], out, false, Op::ConcatCols(ids)))
    }

    fn assert_same_tape(&self, t: Tensor<'_>) {
        assert!(
            std::ptr::eq(self, t.tape),
            "tensor belongs to a different tape"
        );
    }

    /// Reset all accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.acc_grad = None;
        }
    }

    /// Reverse sweep from a scalar loss. Populates (accumulates into) the
    /// gradient buffers of every differentiable leaf the loss depends on.
    pub fn backward(&self, loss: Tensor<'_>) -> Result<()> {
        self.assert_same_tape(loss);
        {
            let nodes = self.nodes.borrow();
            if numel(&nodes[loss.id].shape) != 1 {
                return Err(AmpsError::ShapeMismatch {
                    op: "backward",
                    lhs: nodes[loss.id].shape.clone(),
                    rhs: vec![1],
                });
            }
        }

        let nodes = self.nodes.borrow();
        let n = nodes.len();
        // Transient adjoints for this sweep; leaf accumulators are updated at
        // the end so repeated backward calls add up.
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        let add_into = |slot: &mut Option<Vec<f64>>, len: usize, f: &mut dyn FnMut(&mut [f64])| {
            let buf = slot.get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    // Re-attach: adjoint for a leaf is final once we reach it.
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    for &p in [a, b].iter() {
                        add_into(&mut grads[*p], g.len(), &mut |buf| {
                            for (o, gi) in buf.iter_mut().zip(g.iter()) {
                                *o += gi;
                            }
                        });
                    }
                }
                Op::AddBias(a, b) => {
                    let cols = nodes[*b].values.len();
                    add_into(&mut grads[*a], g.len(), &mut |buf| {
                        for (o, gi) in buf.iter_mut().zip(g.iter()) {
                            *o += gi;
                        }
                    });
                    add_into(&mut grads[*b], cols, &mut |buf| {
                        for (i, gi) in g.iter().enumerate() {
                            buf[i % cols] += gi;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[*a].values, &nodes[*b].values);
                    add_into(&mut grads[*a], g.len(), &mut |buf| {
                        for i in 0..g.len() {
                            buf[i] += g[i] * bv[i];
                        }
                    });
                    add_into(&mut grads[*b], g.len(), &mut |buf| {
                        for i in 0..g.len() {
                            buf[i] += g[i] * av[i];
                        }
                    });
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    add_into(&mut grads[*a], g.len(), &mut |buf| {
                        for i in 0..g.len() {
                            buf[i] += c * g[i];
                        }
                    });
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                    let nn = nodes[*b].shape[1];
                    let (av, bv) = (&nodes[*a].values, &nodes[*b].values);
                    // dA = G · Bᵀ, dB = Aᵀ · G
                    add_into(&mut grads[*a], m * k, &mut |buf| {
                        matmul_nt_acc(&g, bv, m, k, nn, buf);
                    });
                    add_into(&mut grads[*b], k * nn, &mut |buf| {
                        matmul_tn_acc(av, &g, m, k, nn, buf);
                    });
                }
                Op::Transpose(a) => {
                    let (r, c) = (node.shape[0], node.shape[1]);
                    add_into(&mut grads[*a], g.len(), &mut |buf| {
                        // node is [r × c] = xᵀ, so x is [c × r]
                        for i in 0..r {
                            for j in 0..c {
                                buf[j * r + i] += g[i * c + j];
                            }
                        }
                    });
                }
                Op::Softmax { x, axis } => {
                    let y = &node.values;
                    let shape = &node.shape;
                    let (outer, lane, inner) = lane_dims(shape, *axis);
                    add_into(&mut grads[*x], g.len(), &mut |buf| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let at = |k: usize| (o * lane + k) * inner + i;
                                let mut dot = 0.0;
                                for k in 0..lane {
                                    dot += g[at(k)] * y[at(k)];
                                }
                                for k in 0..lane {
                                    buf[at(k)] += y[at(k)] * (g[at(k)] - dot);
                                }
                            }
                        }
                    });
                }
                Op::Gelu(a) => {
                    let xv = &nodes[*a].values;
                    add_into(&mut grads[*a], g.len(), &mut |buf| {
                        for i in 0..g.len() {
                            buf[i] += g[i] * gelu_grad(xv[i]);
                        }
                    });
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let xs = &nodes[*x].shape;
                    let d = *xs.last().unwrap();
                    let rows = numel(xs) / d;
                    let xv = &nodes[*x].values;
                    let gv = &nodes[*gain].values;
                    // Recompute per-row statistics.
                    for r in 0..rows {
                        let row = &xv[r * d..(r + 1) * d];
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                            / d as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gr = &g[r * d..(r + 1) * d];
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let dxhat: Vec<f64> =
                            gr.iter().zip(gv.iter()).map(|(gi, ga)| gi * ga).collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dxhat_xhat = dxhat
                            .iter()
                            .zip(xhat.iter())
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / d as f64;
                        add_into(&mut grads[*x], xv.len(), &mut |buf| {
                            for j in 0..d {
                                buf[r * d + j] +=
                                    inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                            }
                        });
                        add_into(&mut grads[*gain], d, &mut |buf| {
                            for j in 0..d {
                                buf[j] += gr[j] * xhat[j];
                            }
                        });
                        add_into(&mut grads[*bias], d, &mut |buf| {
                            for j in 0..d {
                                buf[j] += gr[j];
                            }
                        });
                    }
                }
                Op::DepthwiseConv1d { x, kernel } => {
                    let (l, d) = (nodes[*x].shape[0], nodes[*x].shape[1]);
                    let w = nodes[*kernel].shape[0];
                    let pad = (w - 1) / 2;
                    let xv = &nodes[*x].values;
                    let kv = &nodes[*kernel].values;
                    add_into(&mut grads[*x], l * d, &mut |buf| {
                        for t in 0..l {
                            for j in 0..w {
                                let s = t as isize + j as isize - pad as isize;
                                if s < 0 || s as usize >= l {
                                    continue;
                                }
                                let s = s as usize;
                                for c in 0..d {
                                    buf[s * d + c] += kv[j * d + c] * g[t * d + c];
                                }
                            }
                        }
                    });
                    add_into(&mut grads[*kernel], w * d, &mut |buf| {
                        for t in 0..l {
                            for j in 0..w {
                                let s = t as isize + j as isize - pad as isize;
                                if s < 0 || s as usize >= l {
                                    continue;
                                }
                                let s = s as usize;
                                for c in 0..d {
                                    buf[j * d + c] += xv[s * d + c] * g[t * d + c];
                                }
                            }
                        }
                    });
                }
                Op::Embed { table, ids } => {
                    let d = nodes[*table].shape[1];
                    let tlen = nodes[*table].values.len();
                    add_into(&mut grads[*table], tlen, &mut |buf| {
                        for (t, &id) in ids.iter().enumerate() {
                            let row = id as usize;
                            for c in 0..d {
                                buf[row * d + c] += g[t * d + c];
                            }
                        }
                    });
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    reduce,
                } => {
                    let (t_rows, v) = (nodes[*logits].shape[0], nodes[*logits].shape[1]);
                    let lv = &nodes[*logits].values;
                    let scale = match reduce {
                        Reduce::Mean => g[0] / t_rows as f64,
                        Reduce::Sum => g[0],
                    };
                    add_into(&mut grads[*logits], t_rows * v, &mut |buf| {
                        for t in 0..t_rows {
                            let row = &lv[t * v..(t + 1) * v];
                            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let denom: f64 = row.iter().map(|x| (x - m).exp()).sum();
                            for j in 0..v {
                                let p = (row[j] - m).exp() / denom;
                                let delta = if j == targets[t] as usize { 1.0 } else { 0.0 };
                                buf[t * v + j] += scale * (p - delta);
                            }
                        }
                    });
                }
                Op::Sum(a) => {
                    let alen = nodes[*a].values.len();
                    add_into(&mut grads[*a], alen, &mut |buf| {
                        for o in buf.iter_mut() {
                            *o += g[0];
                        }
                    });
                }
                Op::SliceCols { x, start, len } => {
                    let (rows, cols_out) = (node.shape[0], node.shape[1]);
                    let cols_in = nodes[*x].shape[1];
                    add_into(&mut grads[*x], rows * cols_in, &mut |buf| {
                        for r in 0..rows {
                            for j in 0..*len {
                                buf[r * cols_in + start + j] += g[r * cols_out + j];
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let rows = node.shape[0];
                    let total = node.shape[1];
                    let mut col = 0usize;
                    for &p in parts {
                        let c = nodes[p].shape[1];
                        let plen = nodes[p].values.len();
                        add_into(&mut grads[p], plen, &mut |buf| {
                            for r in 0..rows {
                                for j in 0..c {
                                    buf[r * c + j] += g[r * total + col + j];
                                }
                            }
                        });
                        col += c;
                    }
                }
            }
        }
        drop(nodes);

        // Fold transient leaf adjoints into the persistent accumulators.
        let mut nodes = self.nodes.borrow_mut();
        for (id, slot) in grads.into_iter().enumerate() {
            let Some(g) = slot else { continue };
            let node = &mut nodes[id];
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                continue;
            }
            let acc = node
                .acc_grad
                .get_or_insert_with(|| vec![0.0; node.values.len()]);
            for (o, gi) in acc.iter_mut().zip(g.iter()) {
                *o += gi;
            }
        }
        Ok(())
    }
}

// ── Tensor accessors and ops ────────────────────────────────────────────────

impl<'t> Tensor<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        numel(&self.tape.nodes.borrow()[self.id].shape)
    }

    /// Borrowed view of the forward values.
    pub fn values_ref(&self) -> Ref<'t, [f64]> {
        Ref::map(self.tape.nodes.borrow(), |nodes| {
            nodes[self.id].values.as_slice()
        })
    }

    /// Cloned forward values.
    pub fn values(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].values.clone()
    }

    /// Scalar readout; panics if the tensor is not a single element.
    pub fn value(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        assert_eq!(
            nodes[self.id].values.len(),
            1,
            "value() on non-scalar tensor"
        );
        nodes[self.id].values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient (leaves after backward; None otherwise).
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.nodes.borrow()[self.id].acc_grad.clone()
    }

    fn shape_of(&self, id: NodeId) -> Vec<usize> {
        self.tape.nodes.borrow()[id].shape.clone()
    }

    /// Elementwise addition; shapes must match exactly.
    pub fn add(&self, rhs: Tensor<'t>) -> Result<Tensor<'t>> {
        self.tape.assert_same_tape(rhs);
        let (ls, rs) = (self.shape_of(self.id), self.shape_of(rhs.id));
        if ls != rs {
            return Err(AmpsError::ShapeMismatch {
                op: "add",
                lhs: ls,
                rhs: rs,
            });
        }
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].values, &nodes[rhs.id].values);
            a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()
        };
        Ok(self.tape.push(ls, out, false, Op::Add(self.id, rhs.id)))
    }

    /// `[m × n]` matrix plus `[n]` bias broadcast over rows.
    pub fn add_bias(&self, bias: Tensor<'t>) -> Result<Tensor<'t>> {
        self.tape.assert_same_tape(bias);
        let (ls, bs) = (self.shape_of(self.id), self.shape_of(bias.id));
        if ls.len() != 2 || bs.len() != 1 || bs[0] != ls[1] {
            return Err(AmpsError::ShapeMismatch {
                op: "add_bias",
                lhs: ls,
                rhs: bs,
            });
        }
        let cols = ls[1];
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].values, &nodes[bias.id].values);
            a.iter()
                .enumerate()
                .map(|(i, x)| x + b[i % cols])
                .collect()
        };
        Ok(self
            .tape
            .push(ls, out, false, Op::AddBias(self.id, bias.id)))
    }

    /// Elementwise (Hadamard) product; shapes must match exactly.
    pub fn mul(&self, rhs: Tensor<'t>) -> Result<Tensor<'t>> {
        self.tape.assert_same_tape(rhs);
        let (ls, rs) = (self.shape_of(self.id), self.shape_of(rhs.id));
        if ls != rs {
            return Err(AmpsError::ShapeMismatch {
                op: "mul",
                lhs: ls,
                rhs: rs,
            });
        }
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].values, &nodes[rhs.id].values);
            a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()
        };
        Ok(self.tape.push(ls, out, false, Op::Mul(self.id, rhs.id)))
    }

    /// Multiply every element by a constant (not differentiated through).
    pub fn scale(&self, c: f64) -> Tensor<'t> {
        let (shape, out) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.values.iter().map(|x| x * c).collect())
        };
        self.tape.push(shape, out, false, Op::Scale(self.id, c))
    }

    /// Dense `[m × k] · [k × n]` product.
    pub fn matmul(&self, rhs: Tensor<'t>) -> Result<Tensor<'t>> {
        self.tape.assert_same_tape(rhs);
        let (ls, rs) = (self.shape_of(self.id), self.shape_of(rhs.id));
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(AmpsError::ShapeMismatch {
                op: "matmul",
                lhs: ls,
                rhs: rs,
            });
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let mut out = vec![0.0; m * n];
        {
            let nodes = self.tape.nodes.borrow();
            matmul_nn_acc(
                &nodes[self.id].values,
                &nodes[rhs.id].values,
                m,
                k,
                n,
                &mut out,
            );
        }
        Ok(self
            .tape
            .push(vec![m, n], out, false, Op::Matmul(self.id, rhs.id)))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor<'t>> {
        let s = self.shape_of(self.id);
        if s.len() != 2 {
            return Err(AmpsError::ShapeMismatch {
                op: "transpose",
                lhs: s,
                rhs: vec![0, 0],
            });
        }
        let (r, c) = (s[0], s[1]);
        let mut out = vec![0.0; r * c];
        {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].values;
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = v[i * c + j];
                }
            }
        }
        Ok(self
            .tape
            .push(vec![c, r], out, false, Op::Transpose(self.id)))
    }

    /// Numerically stable softmax along `axis`. Rejects non-finite inputs.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<'t>> {
        let shape = self.shape_of(self.id);
        if axis >= shape.len() {
            return Err(AmpsError::InvalidAxis {
                op: "softmax",
                axis,
                shape,
            });
        }
        let (outer, lane, inner) = lane_dims(&shape, axis);
        let mut out = vec![0.0; numel(&shape)];
        {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].values;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(AmpsError::NonFinite { op: "softmax" });
            }
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * lane + k) * inner + i;
                    let mut m = f64::NEG_INFINITY;
                    for k in 0..lane {
                        m = m.max(v[at(k)]);
                    }
                    let mut denom = 0.0;
                    for k in 0..lane {
                        denom += (v[at(k)] - m).exp();
                    }
                    for k in 0..lane {
                        out[at(k)] = (v[at(k)] - m).exp() / denom;
                    }
                }
            }
        }
        Ok(self
            .tape
            .push(shape, out, false, Op::Softmax { x: self.id, axis }))
    }

    /// GeLU in its exact error-function form, `x · Φ(x)`.
    pub fn gelu(&self) -> Tensor<'t> {
        let (shape, out) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (
                n.shape.clone(),
                n.values.iter().map(|&x| gelu_val(x)).collect(),
            )
        };
        self.tape.push(shape, out, false, Op::Gelu(self.id))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layernorm(&self, gain: Tensor<'t>, bias: Tensor<'t>, eps: f64) -> Result<Tensor<'t>> {
        self.tape.assert_same_tape(gain);
        self.tape.assert_same_tape(bias);
        let shape = self.shape_of(self.id);
        let d = *shape.last().ok_or(AmpsError::EmptyInput {
            op: "layernorm",
            what: "shape",
        })?;
        if d < 2 {
            return Err(AmpsError::DegenerateExtent {
                op: "layernorm",
                extent: d,
                shape,
            });
        }
        let (gs, bs) = (self.shape_of(gain.id), self.shape_of(bias.id));
        if gs != vec![d] || bs != vec![d] {
            return Err(AmpsError::ShapeMismatch {
                op: "layernorm",
                lhs: gs,
                rhs: vec![d],
            });
        }
        let rows = numel(&shape) / d;
        let mut out = vec![0.0; numel(&shape)];
        {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].values;
            let gv = &nodes[gain.id].values;
            let bv = &nodes[bias.id].values;
            for r in 0..rows {
                let row = &v[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var =
                    row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                for j in 0..d {
                    out[r * d + j] = (row[j] - mean) * inv * gv[j] + bv[j];
                }
            }
        }
        Ok(self.tape.push(
            shape,
            out,
            false,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                eps,
            },
        ))
    }

    /// Per-channel 1-D convolution over rows of `[L × d]` with an odd-width
    /// `[w × d]` kernel and zero padding that keeps the length.
    pub fn depthwise_conv1d(&self, kernel: Tensor<'t>) -> Result<Tensor<'t>> {
        self.tape.assert_same_tape(kernel);
        let (xs, ks) = (self.shape_of(self.id), self.shape_of(kernel.id));
        if xs.len() != 2 || ks.len() != 2 || xs[1] != ks[1] {
            return Err(AmpsError::ShapeMismatch {
                op: "depthwise_conv1d",
                lhs: xs,
                rhs: ks,
            });
        }
        let (l, d) = (xs[0], xs[1]);
        let w = ks[0];
        if w % 2 == 0 {
            return Err(AmpsError::Config(format!(
                "depthwise_conv1d: kernel width must be odd, got {w}"
            )));
        }
        let pad = (w - 1) / 2;
        let mut out = vec![0.0; l * d];
        {
            let nodes = self.tape.nodes.borrow();
            let xv = &nodes[self.id].values;
            let kv = &nodes[kernel.id].values;
            for t in 0..l {
                for j in 0..w {
                    let s = t as isize + j as isize - pad as isize;
                    if s < 0 || s as usize >= l {
                        continue;
                    }
                    let s = s as usize;
                    for c in 0..d {
                        out[t * d + c] += kv[j * d + c] * xv[s * d + c];
                    }
                }
            }
        }
        Ok(self.tape.push(
            vec![l, d],
            out,
            false,
            Op::DepthwiseConv1d {
                x: self.id,
                kernel: kernel.id,
            },
        ))
    }

    /// Mean or summed negative log-likelihood of `targets` under row-wise
    /// softmax of `[T × V]` logits. Log-sum-exp is max-shifted for stability.
    pub fn cross_entropy_nll(&self, targets: &[u32], reduce: Reduce) -> Result<Tensor<'t>> {
        let shape = self.shape_of(self.id);
        if shape.len() != 2 {
            return Err(AmpsError::ShapeMismatch {
                op: "cross_entropy_nll",
                lhs: shape,
                rhs: vec![0, 0],
            });
        }
        let (t_rows, v) = (shape[0], shape[1]);
        if targets.len() != t_rows {
            return Err(AmpsError::ShapeMismatch {
                op: "cross_entropy_nll",
                lhs: vec![t_rows],
                rhs: vec![targets.len()],
            });
        }
        if t_rows == 0 {
            return Err(AmpsError::EmptyInput {
                op: "cross_entropy_nll",
                what: "logits",
            });
        }
        for &t in targets {
            if t as usize >= v {
                return Err(AmpsError::TokenOutOfVocab {
                    op: "cross_entropy_nll",
                    id: t,
                    vocab: v,
                });
            }
        }
        let mut total = 0.0;
        {
            let nodes = self.tape.nodes.borrow();
            let lv = &nodes[self.id].values;
            for t in 0..t_rows {
                let row = &lv[t * v..(t + 1) * v];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                total += lse - row[targets[t] as usize];
            }
        }
        let scalar = match reduce {
            Reduce::Mean => total / t_rows as f64,
            Reduce::Sum => total,
        };
        Ok(self.tape.push(
            vec![1],
            vec![scalar],
            false,
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                reduce,
            },
        ))
    }

    /// Sum of all elements → scalar.
    pub fn sum(&self) -> Tensor<'t> {
        let total = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].values.iter().sum::<f64>()
        };
        self.tape
            .push(vec![1], vec![total], false, Op::Sum(self.id))
    }

    /// Columns `[start, start+len)` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor<'t>> {
        let s = self.shape_of(self.id);
        if s.len() != 2 || start + len > s[1] {
            return Err(AmpsError::ShapeMismatch {
                op: "slice_cols",
                lhs: s,
                rhs: vec![start, len],
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let mut out = vec![0.0; rows * len];
        {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].values;
            for r in 0..rows {
                out[r * len..(r + 1) * len]
                    .copy_from_slice(&v[r * cols + start..r * cols + start + len]);
            }
        }
        Ok(self.tape.push(
            vec![rows, len],
            out,
            false,
            Op::SliceCols {
                x: self.id,
                start,
                len,
            },
        ))
    }
}

// ── Raw kernels and scalar math ─────────────────────────────────────────────

/// `out += A · B` for row-major `A [m × k]`, `B [k × n]`.
fn matmul_nn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// `out += A · Bᵀ` for `A [m × k]`, `B [n × k]` → `[m × n]`.
fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += arow[p] * brow[p];
            }
            out[i * n + j] += s;
        }
    }
}

/// `out += Aᵀ · B` for `A [m × k]`, `B [m × n]` → `[k × n]`.
fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[i * n..(i + 1) * n];
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// Decompose `shape` around `axis` into (outer, lane, inner) extents.
fn lane_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let lane = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, lane, inner)
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn gelu_val(x: f64) -> f64 {
    x * norm_cdf(x)
}

fn gelu_grad(x: f64) -> f64 {
    norm_cdf(x) + x * norm_pdf(x)
}

// ── Tests ───────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let tape = Tape::new();
        let a = tape
            .leaf(&[2, 2], vec![1.0, 2.0, 3.0, 4.0])
            .unwrap();
        let eye = tape.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a.matmul(eye).unwrap().values(), vec![1.0, 2.0, 3.0, 4.0]);

        let ones = tape.constant(&[2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(a.matmul(ones).unwrap().values(), vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(&[2, 3], vec![0.0; 6]).unwrap();
        let b = tape.leaf(&[2, 3], vec![0.0; 6]).unwrap();
        let err = a.matmul(b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "message was: {err}");
    }

    #[test]
    fn softmax_uniform_and_large_inputs() {
        let tape = Tape::new();
        let x = tape.leaf(&[1, 2], vec![0.0, 0.0]).unwrap();
        assert_eq!(x.softmax(1).unwrap().values(), vec![0.5, 0.5]);

        let big = tape.leaf(&[1, 2], vec![1000.0, 1000.0]).unwrap();
        let y = big.softmax(1).unwrap().values();
        assert!(y.iter().all(|v| v.is_finite()));
        assert_eq!(y, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let vals: Vec<f64> = (0..12).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let shift: f64 = rng.gen_range(-100.0..100.0);
            let tape = Tape::new();
            let x = tape.leaf(&[3, 4], vals.clone()).unwrap();
            let y = x.softmax(1).unwrap().values();
            for r in 0..3 {
                let s: f64 = y[r * 4..(r + 1) * 4].iter().sum();
                assert_close(s, 1.0, 1e-9);
            }
            let shifted: Vec<f64> = vals.iter().map(|v| v + shift).collect();
            let xs = tape.leaf(&[3, 4], shifted).unwrap();
            let ys = xs.softmax(1).unwrap().values();
            for i in 0..12 {
                assert_close(y[i], ys[i], 1e-9);
            }
        }
    }

    #[test]
    fn softmax_axis_zero_normalizes_columns() {
        let tape = Tape::new();
        let x = tape.leaf(&[2, 3], vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]).unwrap();
        let y = x.softmax(0).unwrap().values();
        for c in 0..3 {
            assert_eq!(y[c], 0.5);
            assert_eq!(y[3 + c], 0.5);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let tape = Tape::new();
        let x = tape.leaf(&[1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(
            x.softmax(1),
            Err(crate::AmpsError::NonFinite { .. })
        ));
        let inf = tape.leaf(&[1, 2], vec![f64::INFINITY, 0.0]).unwrap();
        assert!(inf.softmax(1).is_err());
    }

    #[test]
    fn gelu_fixed_points() {
        let tape = Tape::new();
        let x = tape
            .leaf(&[4], vec![0.0, 1.0, -1.0, -10.0])
            .unwrap();
        let y = x.gelu().values();
        assert_eq!(y[0], 0.0);
        assert_close(y[1], 0.8413447460685429, 1e-12);
        assert_close(y[2], -0.15865525393145707, 1e-12);
        assert!(y[3].abs() < 1e-8);
    }

    #[test]
    fn norm_cdf_spot_values() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert_close(norm_cdf(1.96), 0.9750021048517795, 1e-9);
        assert_close(norm_cdf(-1.96), 1.0 - 0.9750021048517795, 1e-9);
    }

    #[test]
    fn layernorm_constant_row_is_zero() {
        let tape = Tape::new();
        let x = tape.leaf(&[1, 4], vec![3.5; 4]).unwrap();
        let g = tape.constant(&[4], vec![1.0; 4]).unwrap();
        let b = tape.constant(&[4], vec![0.0; 4]).unwrap();
        assert_eq!(x.layernorm(g, b, 1e-5).unwrap().values(), vec![0.0; 4]);
    }

    #[test]
    fn layernorm_unit_moments() {
        let tape = Tape::new();
        let x = tape.leaf(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let g = tape.constant(&[3], vec![1.0; 3]).unwrap();
        let b = tape.constant(&[3], vec![0.0; 3]).unwrap();
        let y = x.layernorm(g, b, 1e-12).unwrap().values();
        let mean: f64 = y.iter().sum::<f64>() / 3.0;
        let var: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        assert_close(mean, 0.0, 1e-9);
        assert_close(var, 1.0, 1e-9);
    }

    #[test]
    fn layernorm_degenerate_extent_errors() {
        let tape = Tape::new();
        let x = tape.leaf(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let g = tape.constant(&[1], vec![1.0]).unwrap();
        let b = tape.constant(&[1], vec![0.0]).unwrap();
        assert!(matches!(
            x.layernorm(g, b, 1e-5),
            Err(crate::AmpsError::DegenerateExtent { .. })
        ));
    }

    #[test]
    fn conv_hand_case_and_impulse() {
        let tape = Tape::new();
        let x = tape.leaf(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let k = tape.leaf(&[3, 1], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(
            x.depthwise_conv1d(k).unwrap().values(),
            vec![3.0, 6.0, 5.0]
        );
        // Centered impulse kernel is the identity.
        let imp = tape.leaf(&[3, 1], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(
            x.depthwise_conv1d(imp).unwrap().values(),
            vec![1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn conv_rejects_even_width() {
        let tape = Tape::new();
        let x = tape.leaf(&[3, 2], vec![0.0; 6]).unwrap();
        let k = tape.leaf(&[2, 2], vec![0.0; 4]).unwrap();
        assert!(x.depthwise_conv1d(k).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let tape = Tape::new();
        let l16 = tape.leaf(&[1, 16], vec![0.0; 16]).unwrap();
        let loss = l16.cross_entropy_nll(&[3], Reduce::Mean).unwrap().value();
        assert_close(loss, 2.772588722239781, 1e-12); // ln 16

        let l200 = tape.leaf(&[1, 200], vec![0.0; 200]).unwrap();
        let loss = l200.cross_entropy_nll(&[0], Reduce::Mean).unwrap().value();
        assert_close(loss, 5.298317366548036, 1e-12); // ln 200
    }

    #[test]
    fn cross_entropy_margin_limit_and_reduction() {
        let tape = Tape::new();
        let mut vals = vec![0.0; 8];
        vals[5] = 100.0;
        let x = tape.leaf(&[1, 8], vals).unwrap();
        assert!(x.cross_entropy_nll(&[5], Reduce::Mean).unwrap().value() < 1e-12);

        let two = tape.leaf(&[2, 4], vec![0.0; 8]).unwrap();
        let mean = two.cross_entropy_nll(&[1, 2], Reduce::Mean).unwrap().value();
        let sum = two.cross_entropy_nll(&[1, 2], Reduce::Sum).unwrap().value();
        assert_close(sum, 2.0 * mean, 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_out_of_vocab_target() {
        let tape = Tape::new();
        let x = tape.leaf(&[1, 4], vec![0.0; 4]).unwrap();
        assert!(matches!(
            x.cross_entropy_nll(&[4], Reduce::Mean),
            Err(crate::AmpsError::TokenOutOfVocab { .. })
        ));
    }

    #[test]
    fn backward_sum_gives_ones_and_square_gives_2x() {
        let tape = Tape::new();
        let x = tape.leaf(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        tape.backward(x.sum()).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);

        let tape2 = Tape::new();
        let x2 = tape2.leaf(&[4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let loss = x2.mul(x2).unwrap().sum();
        tape2.backward(loss).unwrap();
        assert_eq!(x2.grad().unwrap(), vec![2.0, -4.0, 6.0, 1.0]);
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let tape = Tape::new();
        let x = tape.leaf(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = x.sum();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 3]);
        tape.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let tape = Tape::new();
        let x = tape.leaf(&[2], vec![1.0, 2.0]).unwrap();
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn embed_gathers_rows_and_scatters_grads() {
        let tape = Tape::new();
        let table = tape
            .leaf(&[3, 2], vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0])
            .unwrap();
        let e = tape.embed(table, &[0, 2, 0]).unwrap();
        assert_eq!(e.values(), vec![0.0, 1.0, 20.0, 21.0, 0.0, 1.0]);
        tape.backward(e.sum()).unwrap();
        assert_eq!(
            table.grad().unwrap(),
            vec![2.0, 2.0, 0.0, 0.0, 1.0, 1.0]
        );
        assert!(matches!(
            tape.embed(table, &[3]),
            Err(crate::AmpsError::TokenOutOfVocab { .. })
        ));
    }

    #[test]
    fn add_bias_broadcasts_and_sums_column_grads() {
        let tape = Tape::new();
        let a = tape.leaf(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = tape.leaf(&[2], vec![10.0, 20.0]).unwrap();
        let y = a.add_bias(b).unwrap();
        assert_eq!(y.values(), vec![11.0, 22.0, 13.0, 24.0]);
        tape.backward(y.sum()).unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn slice_and_concat_round_trip() {
        let tape = Tape::new();
        let a = tape
            .leaf(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        let left = a.slice_cols(0, 1).unwrap();
        let right = a.slice_cols(1, 2).unwrap();
        let back = tape.concat_cols(&[left, right]).unwrap();
        assert_eq!(back.values(), a.values());
    }

    #[test]
    fn transpose_hand_case() {
        let tape = Tape::new();
        let a = tape
            .leaf(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        let t = a.transpose().unwrap();
        assert_eq!(t.shape(), vec![3, 2]);
        assert_eq!(t.values(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn identical_graphs_are_bit_identical() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let run = || {
            let tape = Tape::new();
            let x = tape.leaf(&[3, 4], vals.clone()).unwrap();
            let ww = tape.leaf(&[4, 3], w.clone()).unwrap();
            let y = x.matmul(ww).unwrap().gelu().softmax(1).unwrap();
            let loss = y.sum();
            tape.backward(loss).unwrap();
            (y.values(), x.grad().unwrap())
        };
        let (y1, g1) = run();
        let (y2, g2) = run();
        for (a, b) in y1.iter().zip(y2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
