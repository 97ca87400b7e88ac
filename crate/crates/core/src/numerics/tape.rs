use std::cell::{Cell, RefCell};
use std::fmt;
use std::sync::Arc;

use super::{Tensor, TensorError};

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// `a · bᵀ`
    MatMulNt(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    MulConst(usize, Vec<f64>),
    Relu(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather(usize, Vec<usize>),
    SliceCols(usize, usize, usize),
    SliceRows(usize, usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    MeanRows(usize),
    Sum(usize),
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward computation.
///
/// Nodes are appended in evaluation order, so walking them backwards is a
/// valid reverse topological order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
    consumed: Cell<bool>,
    first_non_finite: Cell<Option<usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a trainable leaf that shares storage with `value`.
    pub fn param_shared(&self, value: &Arc<Tensor>) -> Var<'_> {
        self.push_arc(Arc::clone(value), Op::Leaf, true)
    }

    pub fn constant_shared(&self, value: &Arc<Tensor>) -> Var<'_> {
        self.push_arc(Arc::clone(value), Op::Leaf, false)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        self.push_arc(Arc::new(value), op, requires_grad)
    }

    fn push_arc(&self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        if cfg!(debug_assertions) && self.first_non_finite.get().is_none() && !value.all_finite() {
            self.first_non_finite.set(Some(nodes.len()));
        }
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// First node whose value held a NaN or infinity. Only tracked in debug
    /// builds; release builds rely on the finiteness check of the loss.
    pub fn non_finite_node(&self) -> Option<usize> {
        self.first_non_finite.get()
    }

    /// Gradient of the last backward pass with respect to `var`, if it was
    /// reached.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let grads = self.grads.borrow();
        let g = grads.get(var.id)?.as_ref()?;
        let shape = self.nodes.borrow()[var.id].value.shape().to_vec();
        Some(Tensor::from_parts(shape, g.clone()))
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    ///
    /// The tape can be differentiated only once.
    pub fn backward(&self, loss: Var<'_>) -> Result<(), TensorError> {
        if self.consumed.get() {
            return Err(TensorError::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: root.value.shape().to_vec(),
            });
        }
        if let Some(node) = self.first_non_finite.get() {
            return Err(TensorError::NonFiniteNode { node });
        }
        if !root.value.all_finite() {
            return Err(TensorError::NonFiniteNode { node: loss.id });
        }
        self.consumed.set(true);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if root.requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }

    fn value_of<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, contrib: &[f64]) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contrib.to_vec()),
    }
}

fn accumulate_with(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = &mut grads[id];
    if slot.is_none() {
        *slot = Some(vec![0.0; nodes[id].value.len()]);
    }
    f(slot.as_mut().unwrap());
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if nodes[*a].requires_grad {
                // dA = G Bᵀ
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * bv.data()[p * n + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                accumulate(nodes, grads, *a, &da);
            }
            if nodes[*b].requires_grad {
                // dB = Aᵀ G
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let x = av.data()[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += x * g[i * n + j];
                        }
                    }
                }
                accumulate(nodes, grads, *b, &db);
            }
        }
        Op::MatMulNt(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.rows(), av.cols(), bv.rows());
            if nodes[*a].requires_grad {
                // dA = G B
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            da[i * k + p] += gij * bv.data()[j * k + p];
                        }
                    }
                }
                accumulate(nodes, grads, *a, &da);
            }
            if nodes[*b].requires_grad {
                // dB = Gᵀ A
                accumulate_with(nodes, grads, *b, |db| {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                db[j * k + p] += gij * av.data()[i * k + p];
                            }
                        }
                    }
                });
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g);
            accumulate(nodes, grads, *b, g);
        }
        Op::AddRow(a, bias) => {
            accumulate(nodes, grads, *a, g);
            let n = out.cols();
            accumulate_with(nodes, grads, *bias, |db| {
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
            });
        }
        Op::Scale(a, factor) => {
            let d: Vec<f64> = g.iter().map(|v| v * factor).collect();
            accumulate(nodes, grads, *a, &d);
        }
        Op::MulConst(a, mask) => {
            let d: Vec<f64> = g.iter().zip(mask).map(|(v, m)| v * m).collect();
            accumulate(nodes, grads, *a, &d);
        }
        Op::Relu(a) => {
            let x = nodes[*a].value.data();
            let d: Vec<f64> = g
                .iter()
                .zip(x)
                .map(|(v, &xi)| if xi > 0.0 { *v } else { 0.0 })
                .collect();
            accumulate(nodes, grads, *a, &d);
        }
        Op::Softmax(a) => {
            let n = out.cols();
            let mut d = vec![0.0; out.len()];
            for ((dr, yr), gr) in d.chunks_mut(n).zip(out.data().chunks(n)).zip(g.chunks(n)) {
                let dot: f64 = yr.iter().zip(gr).map(|(y, gv)| y * gv).sum();
                for ((dv, y), gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *dv = y * (gv - dot);
                }
            }
            accumulate(nodes, grads, *a, &d);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let n = out.cols();
            let gamma = nodes[*gain].value.data();
            if nodes[*x].requires_grad {
                let mut dx = vec![0.0; out.len()];
                for (r, ((dr, hr), gr)) in dx
                    .chunks_mut(n)
                    .zip(xhat.chunks(n))
                    .zip(g.chunks(n))
                    .enumerate()
                {
                    let dh: Vec<f64> = gr.iter().zip(gamma).map(|(a, b)| a * b).collect();
                    let sum_dh: f64 = dh.iter().sum();
                    let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                    let nf = n as f64;
                    for j in 0..n {
                        dr[j] = inv_std[r] / nf * (nf * dh[j] - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                accumulate(nodes, grads, *x, &dx);
            }
            accumulate_with(nodes, grads, *gain, |dg| {
                for (hr, gr) in xhat.chunks(n).zip(g.chunks(n)) {
                    for j in 0..n {
                        dg[j] += gr[j] * hr[j];
                    }
                }
            });
            accumulate_with(nodes, grads, *bias, |db| {
                for gr in g.chunks(n) {
                    db.iter_mut().zip(gr).for_each(|(d, v)| *d += v);
                }
            });
        }
        Op::Gather(table, ids) => {
            let d = out.cols();
            accumulate_with(nodes, grads, *table, |dt| {
                for (r, &row) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[row * d + j] += g[r * d + j];
                    }
                }
            });
        }
        Op::SliceCols(a, start, end) => {
            let src_cols = nodes[*a].value.cols();
            let w = end - start;
            accumulate_with(nodes, grads, *a, |da| {
                for (r, gr) in g.chunks(w).enumerate() {
                    for (j, v) in gr.iter().enumerate() {
                        da[r * src_cols + start + j] += v;
                    }
                }
            });
        }
        Op::SliceRows(a, start, _end) => {
            let c = out.cols();
            accumulate_with(nodes, grads, *a, |da| {
                let off = start * c;
                da[off..off + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, v)| *d += v);
            });
        }
        Op::ConcatCols(parts) => {
            let total = out.cols();
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].value.cols();
                accumulate_with(nodes, grads, p, |dp| {
                    for (r, gr) in g.chunks(total).enumerate() {
                        for j in 0..w {
                            dp[r * w + j] += gr[offset + j];
                        }
                    }
                });
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                accumulate(nodes, grads, p, &g[offset..offset + len]);
                offset += len;
            }
        }
        Op::MeanRows(a) => {
            let src = &nodes[*a].value;
            let scale = 1.0 / src.rows() as f64;
            let n = src.cols();
            accumulate_with(nodes, grads, *a, |da| {
                for row in da.chunks_mut(n) {
                    for j in 0..n {
                        row[j] += g[j] * scale;
                    }
                }
            });
        }
        Op::Sum(a) => {
            let d = vec![g[0]; nodes[*a].value.len()];
            accumulate(nodes, grads, *a, &d);
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let n = nodes[*logits].value.cols();
            let scale = g[0] / targets.len() as f64;
            let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (r, &t) in targets.iter().enumerate() {
                d[r * n + t] -= scale;
            }
            accumulate(nodes, grads, *logits, &d);
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn matrix_shape(rows: usize, cols: usize) -> Vec<usize> {
    vec![rows, cols]
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id, Tensor::clone)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_of(self.id, |t| t.shape().to_vec())
    }

    pub fn rows(&self) -> usize {
        self.tape.value_of(self.id, Tensor::rows)
    }

    pub fn cols(&self) -> usize {
        self.tape.value_of(self.id, Tensor::cols)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
    }

    fn record(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'t> {
        let rg = self.tape.requires(inputs);
        self.tape.push(value, op, rg)
    }

    /// Matrix product `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.cols() != b.rows() {
                return Err(shape_err("matmul", a, b));
            }
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let x = a.data()[i * k + p];
                    let brow = &b.data()[p * n..(p + 1) * n];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o += x * bv;
                    }
                }
            }
            Tensor::from_parts(matrix_shape(m, n), out)
        };
        Ok(self.record(value, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    /// `self · otherᵀ` for `[m×k]` and `[n×k]`.
    pub fn matmul_nt(&self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.cols() != b.cols() {
                return Err(shape_err("matmul_nt", a, b));
            }
            let (m, k, n) = (a.rows(), a.cols(), b.rows());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let arow = &a.data()[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b.data()[j * k..(j + 1) * k];
                    let mut s = 0.0;
                    for (x, y) in arow.iter().zip(brow) {
                        s += x * y;
                    }
                    out[i * n + j] = s;
                }
            }
            Tensor::from_parts(matrix_shape(m, n), out)
        };
        Ok(self.record(value, Op::MatMulNt(self.id, other.id), &[self.id, other.id]))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape() != b.shape() {
                return Err(shape_err("add", a, b));
            }
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        };
        Ok(self.record(value, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    /// Adds a bias row (length = column count) to every row.
    pub fn add_row(&self, bias: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.same_tape(&bias);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            if b.len() != a.cols() {
                return Err(shape_err("add_row", a, b));
            }
            let n = a.cols();
            let mut data = a.data().to_vec();
            for row in data.chunks_mut(n) {
                row.iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
            }
            Tensor::from_parts(a.shape().to_vec(), data)
        };
        Ok(self.record(value, Op::AddRow(self.id, bias.id), &[self.id, bias.id]))
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        let value = self.tape.value_of(self.id, |a| {
            Tensor::from_parts(
                a.shape().to_vec(),
                a.data().iter().map(|x| x * factor).collect(),
            )
        });
        self.record(value, Op::Scale(self.id, factor), &[self.id])
    }

    /// Elementwise product with a constant mask of the same length.
    pub fn mul_const(&self, mask: Vec<f64>) -> Result<Var<'t>, TensorError> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            if mask.len() != a.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "mul_const",
                    left: a.shape().to_vec(),
                    right: vec![mask.len()],
                });
            }
            let data = a.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        };
        Ok(self.record(value, Op::MulConst(self.id, mask), &[self.id]))
    }

    /// Elementwise `max(0, x)`; the subgradient at zero is zero.
    pub fn relu(&self) -> Var<'t> {
        let value = self.tape.value_of(self.id, |a| {
            Tensor::from_parts(
                a.shape().to_vec(),
                a.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
            )
        });
        self.record(value, Op::Relu(self.id), &[self.id])
    }

    /// Softmax over the last axis, stabilised by subtracting each row's max.
    pub fn row_softmax(&self) -> Var<'t> {
        let value = self.tape.value_of(self.id, |a| {
            let n = a.cols();
            let mut data = Vec::with_capacity(a.len());
            for row in a.data().chunks(n) {
                data.extend(softmax_row(row));
            }
            Tensor::from_parts(a.shape().to_vec(), data)
        });
        self.record(value, Op::Softmax(self.id), &[self.id])
    }

    /// Row-wise layer normalisation with learned gain and bias.
    pub fn layer_norm(&self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>, TensorError> {
        let (value, xhat, inv_std) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (gm, bt) = (&nodes[gain.id].value, &nodes[bias.id].value);
            let n = x.cols();
            if gm.len() != n {
                return Err(shape_err("layer_norm", x, gm));
            }
            if bt.len() != n {
                return Err(shape_err("layer_norm", x, bt));
            }
            let mut out = Vec::with_capacity(x.len());
            let mut xhat = Vec::with_capacity(x.len());
            let mut inv_std = Vec::with_capacity(x.rows());
            for row in x.data().chunks(n) {
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std.push(is);
                for j in 0..n {
                    let h = (row[j] - mean) * is;
                    xhat.push(h);
                    out.push(h * gm.data()[j] + bt.data()[j]);
                }
            }
            (Tensor::from_parts(x.shape().to_vec(), out), xhat, inv_std)
        };
        Ok(self.record(
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
            &[self.id, gain.id, bias.id],
        ))
    }

    /// Row gather from an embedding table; backward scatter-adds.
    pub fn embedding_lookup(&self, ids: &[usize]) -> Result<Var<'t>, TensorError> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let table = &nodes[self.id].value;
            let (v, d) = (table.rows(), table.cols());
            if ids.is_empty() {
                return Err(TensorError::Contract {
                    op: "embedding_lookup",
                    reason: "empty id list".into(),
                });
            }
            let mut data = Vec::with_capacity(ids.len() * d);
            for &i in ids {
                if i >= v {
                    return Err(TensorError::IndexOutOfRange {
                        op: "embedding_lookup",
                        index: i,
                        bound: v,
                    });
                }
                data.extend_from_slice(table.row(i));
            }
            Tensor::from_parts(matrix_shape(ids.len(), d), data)
        };
        Ok(self.record(value, Op::Gather(self.id, ids.to_vec()), &[self.id]))
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t>, TensorError> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            if start >= end || end > a.cols() {
                return Err(TensorError::IndexOutOfRange {
                    op: "slice_cols",
                    index: end,
                    bound: a.cols(),
                });
            }
            let mut data = Vec::with_capacity(a.rows() * (end - start));
            for r in 0..a.rows() {
                data.extend_from_slice(&a.row(r)[start..end]);
            }
            Tensor::from_parts(matrix_shape(a.rows(), end - start), data)
        };
        Ok(self.record(value, Op::SliceCols(self.id, start, end), &[self.id]))
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Var<'t>, TensorError> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            if start >= end || end > a.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "slice_rows",
                    index: end,
                    bound: a.rows(),
                });
            }
            let c = a.cols();
            let data = a.data()[start * c..end * c].to_vec();
            Tensor::from_parts(matrix_shape(end - start, c), data)
        };
        Ok(self.record(value, Op::SliceRows(self.id, start, end), &[self.id]))
    }

    /// Juxtaposes two tensors along the last axis.
    pub fn concat_last(&self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        concat_cols(&[*self, other])
    }

    pub fn mean_rows(&self) -> Var<'t> {
        let value = self.tape.value_of(self.id, |a| {
            let n = a.cols();
            let mut acc = vec![0.0; n];
            for row in a.data().chunks(n) {
                acc.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            let r = a.rows() as f64;
            acc.iter_mut().for_each(|s| *s /= r);
            Tensor::from_parts(matrix_shape(1, n), acc)
        });
        self.record(value, Op::MeanRows(self.id), &[self.id])
    }

    pub fn sum(&self) -> Var<'t> {
        let value = self
            .tape
            .value_of(self.id, |a| Tensor::from_parts(Vec::new(), vec![a.data().iter().sum()]));
        self.record(value, Op::Sum(self.id), &[self.id])
    }

    /// Mean negative log-likelihood of `targets` under a row softmax of the
    /// logits, computed with log-sum-exp.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Var<'t>, TensorError> {
        let (value, probs) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let (b, n) = (a.rows(), a.cols());
            if targets.len() != b {
                return Err(TensorError::ShapeMismatch {
                    op: "cross_entropy",
                    left: a.shape().to_vec(),
                    right: vec![targets.len()],
                });
            }
            let mut probs = Vec::with_capacity(a.len());
            let mut total = 0.0;
            for (row, &t) in a.data().chunks(n).zip(targets) {
                if t >= n {
                    return Err(TensorError::IndexOutOfRange {
                        op: "cross_entropy",
                        index: t,
                        bound: n,
                    });
                }
                let lse = log_sum_exp(row);
                total += lse - row[t];
                probs.extend(row.iter().map(|x| (x - lse).exp()));
            }
            (Tensor::from_parts(Vec::new(), vec![total / b as f64]), probs)
        };
        Ok(self.record(
            value,
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                probs,
            },
            &[self.id],
        ))
    }
}

/// Concatenates along the last axis. All parts must share a row count.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
    let first = parts.first().ok_or(TensorError::Contract {
        op: "concat_cols",
        reason: "no inputs".into(),
    })?;
    let tape = first.tape;
    let value = {
        let nodes = tape.nodes.borrow();
        let rows = nodes[first.id].value.rows();
        let lead = leading_shape(&nodes[first.id].value);
        for p in parts {
            first.same_tape(p);
            let v = &nodes[p.id].value;
            if v.rows() != rows || leading_shape(v) != lead {
                return Err(shape_err("concat", &nodes[first.id].value, v));
            }
        }
        let total: usize = parts.iter().map(|p| nodes[p.id].value.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(nodes[p.id].value.row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        Tensor::from_parts(shape, data)
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(first.record(value, Op::ConcatCols(ids.clone()), &ids))
}

/// Stacks matrices (or row vectors) with equal column counts.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
    let first = parts.first().ok_or(TensorError::Contract {
        op: "concat_rows",
        reason: "no inputs".into(),
    })?;
    let tape = first.tape;
    let value = {
        let nodes = tape.nodes.borrow();
        let cols = nodes[first.id].value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            first.same_tape(p);
            let v = &nodes[p.id].value;
            if v.cols() != cols {
                return Err(shape_err("concat_rows", &nodes[first.id].value, v));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        Tensor::from_parts(matrix_shape(rows, cols), data)
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(first.record(value, Op::ConcatRows(ids.clone()), &ids))
}

fn leading_shape(t: &Tensor) -> Vec<usize> {
    let s = t.shape();
    if s.is_empty() {
        Vec::new()
    } else {
        s[..s.len() - 1].to_vec()
    }
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
