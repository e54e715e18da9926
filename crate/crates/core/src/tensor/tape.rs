use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::{matmul_into, Tensor};
use crate::error::{Error, Result};

/// Shared row-index list for gather and segment operations.
pub type Index = Rc<[usize]>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat { parts: Vec<Var>, axis: usize },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Square(Var),
    Sqrt(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmaxRows(Var),
    SegmentSum { x: Var, seg: Index },
    SegmentSoftmax { x: Var, seg: Index, segments: usize },
    GatherRows { x: Var, idx: Index },
    SliceCols { x: Var, start: usize },
    RowScale { x: Var, s: Var },
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    Pick { x: Var, cols: Index },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation record for one forward pass.
///
/// Operations append nodes in execution order, so the node list is already
/// topologically sorted and backward simply walks it in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    node_grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` needed one.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.node_grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Parameter gradients, one entry per use of a parameter on the tape.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, node)| self.node_grads[node].as_ref().map(|g| (id, g)))
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
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

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite output from {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// A value that needs no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf whose gradient is reported under `id`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = Tensor::zeros(ta.rows(), tb.cols());
        matmul_into(ta, tb, &mut out);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_vec(ta.rows(), ta.cols(), data).unwrap())
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        Tensor::from_vec(t.rows(), t.cols(), t.data().iter().map(|&v| f(v)).collect()).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// `a + b` with the `1 × c` row `b` broadcast over the rows of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(mismatch("add_bias", ta, tb));
        }
        let c = ta.cols();
        let mut out = ta.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tb.data()[i % c];
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::AddBias(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |x| x * s);
        let rg = self.needs(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Concatenation along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::InvalidArgument {
                op: "concat",
                msg: format!("{} parts along axis {axis}", parts.len()),
            });
        }
        let first = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            let t = self.value(p);
            let ok = if axis == 0 {
                t.cols() == first.cols()
            } else {
                t.rows() == first.rows()
            };
            if !ok {
                return Err(mismatch("concat", &first, t));
            }
        }
        let out = if axis == 0 {
            let rows = parts.iter().map(|&p| self.value(p).rows()).sum();
            let mut data = Vec::with_capacity(rows * first.cols());
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::from_vec(rows, first.cols(), data).unwrap()
        } else {
            let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
            let mut data = Vec::with_capacity(first.rows() * cols);
            for r in 0..first.rows() {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row_slice(r));
                }
            }
            Tensor::from_vec(first.rows(), cols, data).unwrap()
        };
        let rg = self.needs(parts);
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.map(x, sigmoid);
        let rg = self.needs(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::tanh);
        let rg = self.needs(&[x]);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.max(0.0));
        let rg = self.needs(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.map(x, |v| if v > 0.0 { v } else { slope * v });
        let rg = self.needs(&[x]);
        self.push(out, Op::LeakyRelu(x, slope), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v * v);
        let rg = self.needs(&[x]);
        self.push(out, Op::Square(x), rg)
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument {
                op: "sqrt",
                msg: "negative input".into(),
            });
        }
        let out = self.map(x, f64::sqrt);
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Sqrt(x), rg))
    }

    /// Softmax over rows (`axis = 0`, per column) or columns (`axis = 1`, per row).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        if axis > 1 {
            return Err(Error::InvalidArgument {
                op: "softmax",
                msg: format!("axis {axis}"),
            });
        }
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = t.clone();
        let (outer, inner, stride_o, stride_i) = if axis == 1 {
            (rows, cols, cols, 1)
        } else {
            (cols, rows, 1, cols)
        };
        let d = out.data_mut();
        for o in 0..outer {
            let at = |i: usize| o * stride_o + i * stride_i;
            let max = (0..inner).map(|i| d[at(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..inner {
                d[at(i)] = (d[at(i)] - max).exp();
                total += d[at(i)];
            }
            for i in 0..inner {
                d[at(i)] /= total;
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Softmax { x, axis }, rg))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let cols = out.cols();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row {
                *v -= lse;
            }
        }
        let rg = self.needs(&[x]);
        self.push(out, Op::LogSoftmaxRows(x), rg)
    }

    /// Sums rows of `x` that share a segment id: `out[s] = Σ_{i: seg[i]=s} x[i]`.
    pub fn segment_sum(&mut self, x: Var, seg: &Index, segments: usize) -> Result<Var> {
        let t = self.value(x);
        check_segments("segment_sum", t.rows(), seg, segments)?;
        let c = t.cols();
        let mut out = Tensor::zeros(segments, c);
        for (i, &s) in seg.iter().enumerate() {
            let src = t.row_slice(i);
            for (o, v) in out.data_mut()[s * c..(s + 1) * c].iter_mut().zip(src) {
                *o += v;
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::SegmentSum { x, seg: seg.clone() }, rg))
    }

    /// Softmax of a column of scores within each segment.
    pub fn segment_softmax(&mut self, x: Var, seg: &Index, segments: usize) -> Result<Var> {
        let t = self.value(x);
        if t.cols() != 1 {
            return Err(Error::InvalidArgument {
                op: "segment_softmax",
                msg: format!("expects a column of scores, got {:?}", t.shape()),
            });
        }
        check_segments("segment_softmax", t.rows(), seg, segments)?;
        let mut max = vec![f64::NEG_INFINITY; segments];
        for (&v, &s) in t.data().iter().zip(seg.iter()) {
            max[s] = max[s].max(v);
        }
        let mut total = vec![0.0; segments];
        let mut out = t.clone();
        for (v, &s) in out.data_mut().iter_mut().zip(seg.iter()) {
            *v = (*v - max[s]).exp();
            total[s] += *v;
        }
        for (v, &s) in out.data_mut().iter_mut().zip(seg.iter()) {
            *v /= total[s];
        }
        let rg = self.needs(&[x]);
        Ok(self.push(
            out,
            Op::SegmentSoftmax {
                x,
                seg: seg.clone(),
                segments,
            },
            rg,
        ))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &Index) -> Result<Var> {
        let t = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::InvalidArgument {
                op: "gather_rows",
                msg: format!("row {bad} out of range for {:?}", t.shape()),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &i in idx.iter() {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::from_vec(idx.len(), t.cols(), data).unwrap();
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::GatherRows { x, idx: idx.clone() }, rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if start > end || end > t.cols() {
            return Err(Error::InvalidArgument {
                op: "slice_cols",
                msg: format!("range {start}..{end} for {:?}", t.shape()),
            });
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let out = Tensor::from_vec(t.rows(), end - start, data).unwrap();
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::SliceCols { x, start }, rg))
    }

    /// Multiplies row `i` of `x` by the scalar `s[i]` (`s` is `n × 1`).
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        if ts.cols() != 1 || ts.rows() != tx.rows() {
            return Err(mismatch("row_scale", tx, ts));
        }
        let c = tx.cols();
        let mut out = tx.clone();
        for (r, row) in out.data_mut().chunks_mut(c.max(1)).enumerate() {
            let k = ts.data()[r];
            for v in row {
                *v *= k;
            }
        }
        let rg = self.needs(&[x, s]);
        Ok(self.push(out, Op::RowScale { x, s }, rg))
    }

    /// Sum of each row, as an `n × 1` column.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data: Vec<f64> = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let out = Tensor::column(&data);
        let rg = self.needs(&[x]);
        self.push(out, Op::RowSum(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.needs(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::InvalidArgument {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        let out = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Mean(x), rg))
    }

    /// `out[i] = x[i, cols[i]]`, as an `n × 1` column.
    pub fn pick(&mut self, x: Var, cols: &Index) -> Result<Var> {
        let t = self.value(x);
        if cols.len() != t.rows() || cols.iter().any(|&c| c >= t.cols()) {
            return Err(Error::InvalidArgument {
                op: "pick",
                msg: format!("{} column indices for {:?}", cols.len(), t.shape()),
            });
        }
        let data: Vec<f64> = cols.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        let out = Tensor::column(&data);
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Pick { x, cols: cols.clone() }, rg))
    }

    /// `x W + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    /// One LSTM step. `w_ih` is `in × 4d`, `w_hh` is `d × 4d`, `b` is
    /// `1 × 4d`, gate order input, forget, cell, output. Returns `(h, c)`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, b: Var) -> Result<(Var, Var)> {
        let d = self.shape(h)[1];
        if self.shape(w_hh) != [d, 4 * d] || self.shape(c) != self.shape(h) {
            return Err(mismatch("lstm_cell", self.value(w_hh), self.value(h)));
        }
        let xi = self.matmul(x, w_ih)?;
        let hh = self.matmul(h, w_hh)?;
        let pre = self.add(xi, hh)?;
        let gates = self.add_bias(pre, b)?;
        let i_pre = self.slice_cols(gates, 0, d)?;
        let f_pre = self.slice_cols(gates, d, 2 * d)?;
        let g_pre = self.slice_cols(gates, 2 * d, 3 * d)?;
        let o_pre = self.slice_cols(gates, 3 * d, 4 * d)?;
        let i = self.sigmoid(i_pre);
        let f = self.sigmoid(f_pre);
        let g = self.tanh(g_pre);
        let o = self.sigmoid(o_pre);
        let keep = self.mul(f, c)?;
        let write = self.mul(i, g)?;
        let c_next = self.add(keep, write)?;
        let squashed = self.tanh(c_next);
        let h_next = self.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Reverse pass from a `1 × 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut params = Vec::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if let Op::Param(id) = node.op {
                params.push((id, i));
            }
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        params.reverse();
        Ok(Gradients {
            node_grads: grads,
            params,
        })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let [r, c] = node.value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = self.slot(grads, *a) {
                    // ga += g · bᵀ
                    let gd = ga.data_mut();
                    for r in 0..n {
                        let grow = g.row_slice(r);
                        for p in 0..k {
                            let brow = tb.row_slice(p);
                            gd[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    // gb += aᵀ · g
                    let gd = gb.data_mut();
                    for r in 0..n {
                        let grow = g.row_slice(r);
                        for p in 0..k {
                            let a = ta.data()[r * k + p];
                            if a == 0.0 {
                                continue;
                            }
                            for (o, &x) in gd[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *o += a * x;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.add_assign(g);
                }
            }
            Op::AddBias(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let c = gb.cols();
                    for (idx, v) in g.data().iter().enumerate() {
                        gb.data_mut()[idx % c] += v;
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (o, v) in gb.data_mut().iter_mut().zip(g.data()) {
                        *o -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).clone(), self.value(*b).clone());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, gv), bv) in ga.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                        *o += gv * bv;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((o, gv), av) in gb.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *o += gv * av;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (o, gv) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += s * gv;
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let [pr, pc] = self.shape(p);
                    if let Some(gp) = self.slot(grads, p) {
                        if *axis == 0 {
                            for (o, v) in gp.data_mut().iter_mut().zip(&g.data()[offset * pc..]) {
                                *o += v;
                            }
                        } else {
                            for r in 0..pr {
                                let src = &g.row_slice(r)[offset..offset + pc];
                                for (o, v) in gp.data_mut()[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                    *o += v;
                                }
                            }
                        }
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Sigmoid(x) => self.unary(grads, *x, g, |k| y.data()[k] * (1.0 - y.data()[k])),
            Op::Tanh(x) => self.unary(grads, *x, g, |k| 1.0 - y.data()[k] * y.data()[k]),
            Op::Relu(x) => self.unary(grads, *x, g, |k| if y.data()[k] > 0.0 { 1.0 } else { 0.0 }),
            Op::LeakyRelu(x, slope) => {
                let tx = self.value(*x);
                self.unary(grads, *x, g, |k| if tx.data()[k] > 0.0 { 1.0 } else { *slope })
            }
            Op::Square(x) => {
                let tx = self.value(*x);
                self.unary(grads, *x, g, |k| 2.0 * tx.data()[k])
            }
            Op::Sqrt(x) => self.unary(grads, *x, g, |k| {
                let v = y.data()[k];
                if v > 0.0 {
                    0.5 / v
                } else {
                    0.0
                }
            }),
            Op::Softmax { x, axis } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let (rows, cols) = (y.rows(), y.cols());
                    let (outer, inner, so, si) = if *axis == 1 {
                        (rows, cols, cols, 1)
                    } else {
                        (cols, rows, 1, cols)
                    };
                    for o in 0..outer {
                        let at = |i: usize| o * so + i * si;
                        let dot: f64 = (0..inner).map(|i| g.data()[at(i)] * y.data()[at(i)]).sum();
                        for i in 0..inner {
                            gx.data_mut()[at(i)] += y.data()[at(i)] * (g.data()[at(i)] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let c = y.cols();
                    for r in 0..y.rows() {
                        let gsum: f64 = g.row_slice(r).iter().sum();
                        for j in 0..c {
                            gx.data_mut()[r * c + j] += g.get(r, j) - y.get(r, j).exp() * gsum;
                        }
                    }
                }
            }
            Op::SegmentSum { x, seg } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let c = gx.cols();
                    for (r, &s) in seg.iter().enumerate() {
                        for (o, v) in gx.data_mut()[r * c..(r + 1) * c].iter_mut().zip(g.row_slice(s)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::SegmentSoftmax { x, seg, segments } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let mut dot = vec![0.0; *segments];
                    for ((gv, yv), &s) in g.data().iter().zip(y.data()).zip(seg.iter()) {
                        dot[s] += gv * yv;
                    }
                    for (r, &s) in seg.iter().enumerate() {
                        gx.data_mut()[r] += y.data()[r] * (g.data()[r] - dot[s]);
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let c = gx.cols();
                    for (r, &src) in idx.iter().enumerate() {
                        for (o, v) in gx.data_mut()[src * c..(src + 1) * c].iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let (c, w) = (gx.cols(), g.cols());
                    for r in 0..g.rows() {
                        let dst = &mut gx.data_mut()[r * c + start..r * c + start + w];
                        for (o, v) in dst.iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::RowScale { x, s } => {
                let (tx, ts) = (self.value(*x), self.value(*s));
                let c = tx.cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for r in 0..tx.rows() {
                        let k = ts.data()[r];
                        for (o, v) in gx.data_mut()[r * c..(r + 1) * c].iter_mut().zip(g.row_slice(r)) {
                            *o += k * v;
                        }
                    }
                }
                if let Some(gs) = self.slot(grads, *s) {
                    for r in 0..tx.rows() {
                        gs.data_mut()[r] += g.row_slice(r).iter().zip(tx.row_slice(r)).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            Op::RowSum(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let c = gx.cols();
                    for (r, row) in gx.data_mut().chunks_mut(c.max(1)).enumerate() {
                        for o in row {
                            *o += g.data()[r];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let gv = g.item();
                if let Some(gx) = self.slot(grads, *x) {
                    for o in gx.data_mut() {
                        *o += gv;
                    }
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let gv = g.item() / gx.len() as f64;
                    for o in gx.data_mut() {
                        *o += gv;
                    }
                }
            }
            Op::Pick { x, cols } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let c = gx.cols();
                    for (r, &col) in cols.iter().enumerate() {
                        gx.data_mut()[r * c + col] += g.data()[r];
                    }
                }
            }
        }
    }

    fn unary(&self, grads: &mut [Option<Tensor>], x: Var, g: &Tensor, local: impl Fn(usize) -> f64) {
        if let Some(gx) = self.slot(grads, x) {
            for (k, (o, gv)) in gx.data_mut().iter_mut().zip(g.data()).enumerate() {
                *o += gv * local(k);
            }
        }
    }
}

fn check_segments(op: &'static str, rows: usize, seg: &Index, segments: usize) -> Result<()> {
    if seg.len() != rows {
        return Err(Error::InvalidArgument {
            op,
            msg: format!("{} segment ids for {rows} rows", seg.len()),
        });
    }
    if let Some(&bad) = seg.iter().find(|&&s| s >= segments) {
        return Err(Error::InvalidArgument {
            op,
            msg: format!("segment id {bad} out of range for {segments} segments"),
        });
    }
    Ok(())
}
