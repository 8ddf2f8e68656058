//! A tape-based reverse-mode differentiator over [`Matrix`] values.
//!
//! Sequences are laid out as `(batch * len, width)` matrices with row
//! `b * len + t`. A [`Graph`] records one forward pass; [`Graph::backward`]
//! walks it in reverse and returns gradients for every node that needs one.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{gemm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SliceCols {
        src: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        src: Var,
        rows: Vec<usize>,
    },
    Interleave(Vec<Var>),
    TimeShift {
        src: Var,
        len: usize,
        shift: usize,
    },
    BlockMatMulNT {
        a: Var,
        b: Var,
        block: usize,
    },
    BlockMatMul {
        a: Var,
        b: Var,
        block: usize,
    },
    RowSoftmax(Var),
    LayerNorm {
        src: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    LstmSequence {
        proj: Var,
        w_hh: Var,
        len: usize,
        /// Time-major `(len, batch, 4h)` gate activations.
        acts: Vec<f64>,
        /// Time-major `(len, batch, h)` cell states, their tanh, and hidden states.
        cells: Vec<f64>,
        tanh_c: Vec<f64>,
        hidden: Vec<f64>,
    },
    Dropout {
        src: Var,
        mask: Vec<f64>,
    },
    RowMaskedMse {
        pred: Var,
        target: Matrix,
        rows: Vec<bool>,
        count: f64,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by node; `None` where no gradient flowed.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

fn grad_buf<'a>(nodes: &[Node], grads: &'a mut [Option<Matrix>], v: Var) -> Option<&'a mut Matrix> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let (r, c) = nodes[v.0].value.shape();
    Some(grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c)))
}

use crate::activation::{self, sigmoid, sigmoid_slice, tanh_slice};

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Constant, false)
    }

    /// A leaf that receives a gradient, tagged with a caller-chosen parameter index.
    pub fn param(&mut self, m: Matrix, id: usize) -> Var {
        self.push(m, Op::Param(id), true)
    }

    /// Leaf with gradient but no parameter tag (used for input-gradient checks).
    pub fn variable(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Constant, true)
    }

    /// Pairs of (parameter id, node) for every parameter leaf on the tape.
    pub fn param_nodes(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((id, Var(i))),
            _ => None,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let mut out = Matrix::zeros(m, n);
        gemm(
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            out.data_mut(),
        );
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape");
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(bias), (1, c), "bias shape");
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for i in 0..r {
            for (x, y) in out.row_mut(i).iter_mut().zip(&b) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(out, Op::AddRow(a, bias), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape");
        let (r, c) = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(Matrix::from_vec(r, c, data), Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(activation::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(src);
        assert!(start + len <= c, "slice out of bounds");
        let v = self.value(src);
        let mut out = Matrix::zeros(r, len);
        for i in 0..r {
            out.row_mut(i).copy_from_slice(&v.row(i)[start..start + len]);
        }
        let ng = self.ng(src);
        self.push(out, Op::SliceCols { src, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let r = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Matrix::zeros(r, total);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), r, "concat row count");
            let c = v.cols();
            for i in 0..r {
                out.row_mut(i)[off..off + c].copy_from_slice(v.row(i));
            }
            off += c;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Output row `i` is `src` row `rows[i]`.
    pub fn gather_rows(&mut self, src: Var, rows: Vec<usize>) -> Var {
        let v = self.value(src);
        let c = v.cols();
        let mut out = Matrix::zeros(rows.len(), c);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(v.row(r));
        }
        let ng = self.ng(src);
        self.push(out, Op::GatherRows { src, rows }, ng)
    }

    /// Stacks per-step `(batch, c)` matrices into `(batch * len, c)` sequence layout.
    pub fn interleave(&mut self, parts: &[Var]) -> Var {
        let len = parts.len();
        let (b, c) = self.shape(parts[0]);
        let mut out = Matrix::zeros(b * len, c);
        for (t, &p) in parts.iter().enumerate() {
            let v = self.value(p);
            for i in 0..b {
                out.row_mut(i * len + t).copy_from_slice(v.row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::Interleave(parts.to_vec()), ng)
    }

    /// Delays each sequence by `shift` steps, zero-filling the start.
    pub fn time_shift(&mut self, src: Var, len: usize, shift: usize) -> Var {
        let (r, c) = self.shape(src);
        assert_eq!(r % len, 0, "rows not a multiple of sequence length");
        let v = self.value(src);
        let mut out = Matrix::zeros(r, c);
        for b in 0..r / len {
            for t in shift..len {
                out.row_mut(b * len + t).copy_from_slice(v.row(b * len + t - shift));
            }
        }
        let ng = self.ng(src);
        self.push(out, Op::TimeShift { src, len, shift }, ng)
    }

    /// Per block of `block` rows: `a_i * b_i^T`, giving `(rows, block)`.
    pub fn block_matmul_nt(&mut self, a: Var, b: Var, block: usize) -> Var {
        let (r, d) = self.shape(a);
        assert_eq!(self.shape(b), (r, d));
        assert_eq!(r % block, 0);
        let mut out = Matrix::zeros(r, block);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..r / block {
            let s = i * block * d;
            gemm(
                block,
                d,
                block,
                1.0,
                &av[s..s + block * d],
                false,
                &bv[s..s + block * d],
                true,
                0.0,
                &mut out.data_mut()[i * block * block..(i + 1) * block * block],
            );
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::BlockMatMulNT { a, b, block }, ng)
    }

    /// Per block: `(block x block) * (block x d)`.
    pub fn block_matmul(&mut self, a: Var, b: Var, block: usize) -> Var {
        let (r, l) = self.shape(a);
        assert_eq!(l, block);
        let (r2, d) = self.shape(b);
        assert_eq!(r, r2);
        let mut out = Matrix::zeros(r, d);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..r / block {
            gemm(
                block,
                block,
                d,
                1.0,
                &av[i * block * block..(i + 1) * block * block],
                false,
                &bv[i * block * d..(i + 1) * block * d],
                false,
                0.0,
                &mut out.data_mut()[i * block * d..(i + 1) * block * d],
            );
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::BlockMatMul { a, b, block }, ng)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = activation::exp(*x - mx);
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::RowSoftmax(a), ng)
    }

    pub fn layer_norm(&mut self, src: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (r, c) = self.shape(src);
        assert_eq!(self.shape(gamma), (1, c));
        assert_eq!(self.shape(beta), (1, c));
        let x = self.value(src);
        let mut xhat = Matrix::zeros(r, c);
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / libm::sqrt(var + eps);
            for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for i in 0..r {
            for ((o, gj), bj) in out.row_mut(i).iter_mut().zip(g).zip(b) {
                *o = *o * gj + bj;
            }
        }
        let ng = self.ng(src) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                src,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// A whole LSTM layer over `(batch * len, 4h)` input projections (bias
    /// included), gate blocks `[input | forget | cell | output]`, zero initial
    /// state. Returns hidden states `(batch * len, h)`.
    pub fn lstm_sequence(&mut self, proj: Var, w_hh: Var, len: usize) -> Var {
        let (rows, h4) = self.shape(proj);
        let h = h4 / 4;
        assert_eq!(self.shape(w_hh), (h, h4), "lstm recurrent weight shape");
        assert_eq!(rows % len, 0, "lstm rows not a multiple of len");
        let b = rows / len;
        let p = self.value(proj);
        let w = self.value(w_hh).data();
        let mut acts = vec![0.0; len * b * h4];
        let mut cells = vec![0.0; len * b * h];
        let mut tanh_c = vec![0.0; len * b * h];
        let mut hidden = vec![0.0; len * b * h];
        for t in 0..len {
            let (prev_h, rest_h) = hidden.split_at_mut(t * b * h);
            let gates = &mut acts[t * b * h4..(t + 1) * b * h4];
            for i in 0..b {
                gates[i * h4..(i + 1) * h4].copy_from_slice(p.row(i * len + t));
            }
            if t > 0 {
                gemm(b, h, h4, 1.0, &prev_h[(t - 1) * b * h..], false, w, false, 1.0, gates);
            }
            for a in gates.chunks_exact_mut(h4) {
                sigmoid_slice(&mut a[..2 * h]);
                tanh_slice(&mut a[2 * h..3 * h]);
                sigmoid_slice(&mut a[3 * h..]);
            }
            let (prev_c, rest_c) = cells.split_at_mut(t * b * h);
            let c_t = &mut rest_c[..b * h];
            for i in 0..b {
                let a = &gates[i * h4..(i + 1) * h4];
                let c_row = &mut c_t[i * h..(i + 1) * h];
                if t > 0 {
                    let c_prev = &prev_c[((t - 1) * b + i) * h..((t - 1) * b + i + 1) * h];
                    for j in 0..h {
                        c_row[j] = a[h + j] * c_prev[j] + a[j] * a[2 * h + j];
                    }
                } else {
                    for j in 0..h {
                        c_row[j] = a[j] * a[2 * h + j];
                    }
                }
            }
            let tc_t = &mut tanh_c[t * b * h..(t + 1) * b * h];
            tc_t.copy_from_slice(c_t);
            tanh_slice(tc_t);
            let h_t = &mut rest_h[..b * h];
            for i in 0..b {
                let og = &gates[i * h4 + 3 * h..(i + 1) * h4];
                for j in 0..h {
                    h_t[i * h + j] = og[j] * tc_t[i * h + j];
                }
            }
        }
        let mut out = Matrix::zeros(rows, h);
        for t in 0..len {
            for i in 0..b {
                out.row_mut(i * len + t)
                    .copy_from_slice(&hidden[(t * b + i) * h..(t * b + i + 1) * h]);
            }
        }
        let ng = self.ng(proj) || self.ng(w_hh);
        self.push(
            out,
            Op::LstmSequence {
                proj,
                w_hh,
                len,
                acts,
                cells,
                tanh_c,
                hidden,
            },
            ng,
        )
    }

    /// Inverted dropout with a precomputed keep mask already scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, src: Var, mask: Vec<f64>) -> Var {
        let v = self.value(src);
        assert_eq!(mask.len(), v.len());
        let data = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Matrix::from_vec(v.rows(), v.cols(), data);
        let ng = self.ng(src);
        self.push(out, Op::Dropout { src, mask }, ng)
    }

    /// Mean squared error over rows where `rows[i]` is true; a `1 x 1` result.
    pub fn row_masked_mse(&mut self, pred: Var, target: Matrix, rows: Vec<bool>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "mse shape");
        assert_eq!(rows.len(), p.rows());
        let active = rows.iter().filter(|&&x| x).count();
        let count = (active * p.cols()) as f64;
        let mut sum = 0.0;
        for (i, _) in rows.iter().enumerate().filter(|(_, &m)| m) {
            for (a, b) in p.row(i).iter().zip(target.row(i)) {
                sum += (a - b) * (a - b);
            }
        }
        let loss = if count > 0.0 { sum / count } else { 0.0 };
        let ng = self.ng(pred);
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::RowMaskedMse {
                pred,
                target,
                rows,
                count,
            },
            ng,
        )
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        match &nodes[i].op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).shape();
                let n = val(*b).cols();
                let (av, bv) = (val(*a).data(), val(*b).data());
                if let Some(ga) = grad_buf(nodes, grads, *a) {
                    gemm(m, n, k, 1.0, g.data(), false, bv, true, 1.0, ga.data_mut());
                }
                if let Some(gb) = grad_buf(nodes, grads, *b) {
                    gemm(k, m, n, 1.0, av, true, g.data(), false, 1.0, gb.data_mut());
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = grad_buf(nodes, grads, v) {
                        gv.add_assign(g);
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(ga) = grad_buf(nodes, grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = grad_buf(nodes, grads, *bias) {
                    let gbd = gb.data_mut();
                    for r in 0..g.rows() {
                        for (x, y) in gbd.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if let Some(ga) = grad_buf(nodes, grads, *a) {
                    for ((x, gi), bi) in ga.data_mut().iter_mut().zip(g.data()).zip(bv) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = grad_buf(nodes, grads, *b) {
                    for ((x, gi), ai) in gb.data_mut().iter_mut().zip(g.data()).zip(av) {
                        *x += gi * ai;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = grad_buf(nodes, grads, *a) {
                    for (x, gi) in ga.data_mut().iter_mut().zip(g.data()) {
                        *x += s * gi;
                    }
                }
            }
            Op::Sigmoid(a) | Op::Tanh(a) | Op::Relu(a) => {
                let y = nodes[i].value.data();
                let op = &nodes[i].op;
                if let Some(ga) = grad_buf(nodes, grads, *a) {
                    for ((x, gi), yi) in ga.data_mut().iter_mut().zip(g.data()).zip(y) {
                        let d = match op {
                            Op::Sigmoid(_) => yi * (1.0 - yi),
                            Op::Tanh(_) => 1.0 - yi * yi,
                            _ => {
                                if *yi > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        *x += gi * d;
                    }
                }
            }
            Op::SliceCols { src, start } => {
                if let Some(gs) = grad_buf(nodes, grads, *src) {
                    let w = g.cols();
                    for r in 0..g.rows() {
                        for (x, y) in gs.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = val(p).cols();
                    if let Some(gp) = grad_buf(nodes, grads, p) {
                        for r in 0..g.rows() {
                            for (x, y) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + c]) {
                                *x += y;
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::GatherRows { src, rows } => {
                if let Some(gs) = grad_buf(nodes, grads, *src) {
                    for (i, &r) in rows.iter().enumerate() {
                        for (x, y) in gs.row_mut(r).iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Interleave(parts) => {
                let len = parts.len();
                for (t, &p) in parts.iter().enumerate() {
                    if let Some(gp) = grad_buf(nodes, grads, p) {
                        for b in 0..gp.rows() {
                            for (x, y) in gp.row_mut(b).iter_mut().zip(g.row(b * len + t)) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            Op::TimeShift { src, len, shift } => {
                if let Some(gs) = grad_buf(nodes, grads, *src) {
                    for b in 0..g.rows() / len {
                        for t in *shift..*len {
                            for (x, y) in gs.row_mut(b * len + t - shift).iter_mut().zip(g.row(b * len + t)) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            Op::BlockMatMulNT { a, b, block } => {
                let l = *block;
                let (r, d) = val(*a).shape();
                let (av, bv) = (val(*a).data(), val(*b).data());
                if let Some(ga) = grad_buf(nodes, grads, *a) {
                    for blk in 0..r / l {
                        gemm(
                            l,
                            l,
                            d,
                            1.0,
                            &g.data()[blk * l * l..(blk + 1) * l * l],
                            false,
                            &bv[blk * l * d..(blk + 1) * l * d],
                            false,
                            1.0,
                            &mut ga.data_mut()[blk * l * d..(blk + 1) * l * d],
                        );
                    }
                }
                if let Some(gb) = grad_buf(nodes, grads, *b) {
                    for blk in 0..r / l {
                        gemm(
                            l,
                            l,
                            d,
                            1.0,
                            &g.data()[blk * l * l..(blk + 1) * l * l],
                            true,
                            &av[blk * l * d..(blk + 1) * l * d],
                            false,
                            1.0,
                            &mut gb.data_mut()[blk * l * d..(blk + 1) * l * d],
                        );
                    }
                }
            }
            Op::BlockMatMul { a, b, block } => {
                let l = *block;
                let (r, d) = val(*b).shape();
                let (av, bv) = (val(*a).data(), val(*b).data());
                if let Some(ga) = grad_buf(nodes, grads, *a) {
                    for blk in 0..r / l {
                        gemm(
                            l,
                            d,
                            l,
                            1.0,
                            &g.data()[blk * l * d..(blk + 1) * l * d],
                            false,
                            &bv[blk * l * d..(blk + 1) * l * d],
                            true,
                            1.0,
                            &mut ga.data_mut()[blk * l * l..(blk + 1) * l * l],
                        );
                    }
                }
                if let Some(gb) = grad_buf(nodes, grads, *b) {
                    for blk in 0..r / l {
                        gemm(
                            l,
                            l,
                            d,
                            1.0,
                            &av[blk * l * l..(blk + 1) * l * l],
                            true,
                            &g.data()[blk * l * d..(blk + 1) * l * d],
                            false,
                            1.0,
                            &mut gb.data_mut()[blk * l * d..(blk + 1) * l * d],
                        );
                    }
                }
            }
            Op::RowSoftmax(a) => {
                let y = &nodes[i].value;
                if let Some(ga) = grad_buf(nodes, grads, *a) {
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((x, yi), gi) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *x += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                src,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = xhat.cols();
                let gam = val(*gamma).data();
                if let Some(gg) = grad_buf(nodes, grads, *gamma) {
                    let d = gg.data_mut();
                    for r in 0..g.rows() {
                        for ((x, gi), xh) in d.iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *x += gi * xh;
                        }
                    }
                }
                if let Some(gb) = grad_buf(nodes, grads, *beta) {
                    let d = gb.data_mut();
                    for r in 0..g.rows() {
                        for (x, gi) in d.iter_mut().zip(g.row(r)) {
                            *x += gi;
                        }
                    }
                }
                if let Some(gs) = grad_buf(nodes, grads, *src) {
                    let n = c as f64;
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let (gr, xr) = (g.row(r), xhat.row(r));
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..c {
                            let d = gr[j] * gam[j];
                            sum_d += d;
                            sum_dx += d * xr[j];
                        }
                        for (j, x) in gs.row_mut(r).iter_mut().enumerate() {
                            let d = gr[j] * gam[j];
                            *x += inv / n * (n * d - sum_d - xr[j] * sum_dx);
                        }
                    }
                }
            }
            Op::LstmSequence {
                proj,
                w_hh,
                len,
                acts,
                cells,
                tanh_c,
                hidden,
            } => {
                let len = *len;
                let (rows, h) = g.shape();
                let (b, h4) = (rows / len, 4 * h);
                let w = val(*w_hh).data();
                let mut dproj = vec![0.0; rows * h4];
                let mut dw = vec![0.0; h * h4];
                let mut dh_next = vec![0.0; b * h];
                let mut dc_next = vec![0.0; b * h];
                let mut dgates = vec![0.0; b * h4];
                for t in (0..len).rev() {
                    let a_t = &acts[t * b * h4..(t + 1) * b * h4];
                    for i in 0..b {
                        let a = &a_t[i * h4..(i + 1) * h4];
                        let gr = g.row(i * len + t);
                        let dg = &mut dgates[i * h4..(i + 1) * h4];
                        for j in 0..h {
                            let idx = i * h + j;
                            let (ig, fg, gg, og) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                            let tc = tanh_c[t * b * h + idx];
                            let dh = gr[j] + dh_next[idx];
                            let dc = dc_next[idx] + dh * og * (1.0 - tc * tc);
                            let cprev = if t > 0 { cells[(t - 1) * b * h + idx] } else { 0.0 };
                            dg[j] = dc * gg * ig * (1.0 - ig);
                            dg[h + j] = dc * cprev * fg * (1.0 - fg);
                            dg[2 * h + j] = dc * ig * (1.0 - gg * gg);
                            dg[3 * h + j] = dh * tc * og * (1.0 - og);
                            dc_next[idx] = dc * fg;
                        }
                        dproj[(i * len + t) * h4..(i * len + t + 1) * h4].copy_from_slice(dg);
                    }
                    if t > 0 {
                        let h_prev = &hidden[(t - 1) * b * h..t * b * h];
                        gemm(h, b, h4, 1.0, h_prev, true, &dgates, false, 1.0, &mut dw);
                        gemm(b, h4, h, 1.0, &dgates, false, w, true, 0.0, &mut dh_next);
                    }
                }
                if let Some(gp) = grad_buf(nodes, grads, *proj) {
                    for (x, y) in gp.data_mut().iter_mut().zip(&dproj) {
                        *x += y;
                    }
                }
                if let Some(gw) = grad_buf(nodes, grads, *w_hh) {
                    for (x, y) in gw.data_mut().iter_mut().zip(&dw) {
                        *x += y;
                    }
                }
            }
            Op::Dropout { src, mask } => {
                if let Some(gs) = grad_buf(nodes, grads, *src) {
                    for ((x, gi), m) in gs.data_mut().iter_mut().zip(g.data()).zip(mask) {
                        *x += gi * m;
                    }
                }
            }
            Op::RowMaskedMse {
                pred,
                target,
                rows,
                count,
            } => {
                let p = val(*pred);
                let scale = g.get(0, 0) * 2.0 / count;
                if let Some(gp) = grad_buf(nodes, grads, *pred) {
                    for (r, _) in rows.iter().enumerate().filter(|(_, &m)| m) {
                        for ((x, a), b) in gp.row_mut(r).iter_mut().zip(p.row(r)).zip(target.row(r)) {
                            *x += scale * (a - b);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of d(sum(w * f(x)))/dx for a unary graph builder.
    fn check_unary(x: Matrix, build: impl Fn(&mut Graph, Var) -> Var) {
        let (r, c) = x.shape();
        let weights = Matrix::from_fn(r, c, |i, j| 0.3 + 0.1 * i as f64 - 0.07 * j as f64);
        let eval = |x: &Matrix| -> (f64, Option<Matrix>, Graph, Var) {
            let mut g = Graph::new();
            let xv = g.variable(x.clone());
            let y = build(&mut g, xv);
            let (yr, yc) = g.shape(y);
            let w = Matrix::from_fn(yr, yc, |i, j| weights.get(i % r, j % c) + 0.01 * (i * yc + j) as f64);
            let wv = g.constant(w);
            let prod = g.mul(y, wv);
            let ones = g.constant(Matrix::filled(yc, 1, 1.0));
            let s = g.matmul(prod, ones);
            let ones_r = g.constant(Matrix::filled(1, yr, 1.0));
            let total = g.matmul(ones_r, s);
            (g.value(total).get(0, 0), None, g, xv)
        };
        let (_, _, g, xv) = eval(&x);
        let total = Var(g.len() - 1);
        let grads = g.backward(total);
        let analytic = grads.get(xv).unwrap().clone();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (eval(&xp).0 - eval(&xm).0) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                (fd - a).abs() <= 1e-6 * (1.0 + fd.abs()),
                "index {i}: fd {fd} vs analytic {a}"
            );
        }
    }

    fn sample(r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |i, j| libm::sin(1.3 * i as f64 + 0.7 * j as f64 + 0.2))
    }

    #[test]
    fn elementwise_grads() {
        check_unary(sample(3, 4), |g, x| g.sigmoid(x));
        check_unary(sample(3, 4), |g, x| g.tanh(x));
        check_unary(sample(3, 4), |g, x| g.scale(x, -2.5));
        check_unary(sample(3, 4), |g, x| g.mul(x, x));
        check_unary(sample(3, 4), |g, x| g.row_softmax(x));
    }

    #[test]
    fn structural_grads() {
        check_unary(sample(4, 5), |g, x| g.slice_cols(x, 1, 3));
        check_unary(sample(4, 2), |g, x| {
            let s = g.scale(x, 2.0);
            g.concat_cols(&[x, s, x])
        });
        check_unary(sample(6, 3), |g, x| g.gather_rows(x, vec![5, 0, 0, 2]));
        check_unary(sample(6, 3), |g, x| g.time_shift(x, 3, 1));
        check_unary(sample(3, 2), |g, x| {
            let y = g.scale(x, 0.5);
            g.interleave(&[x, y])
        });
    }

    #[test]
    fn matmul_and_block_grads() {
        let w = sample(4, 3);
        check_unary(sample(5, 4), |g, x| {
            let wv = g.constant(w.clone());
            g.matmul(x, wv)
        });
        check_unary(sample(4, 5), |g, x| {
            let a = g.constant(sample(3, 4));
            g.matmul(a, x)
        });
        let other = sample(6, 2);
        check_unary(sample(6, 2), |g, x| {
            let o = g.constant(other.clone());
            let s = g.block_matmul_nt(x, o, 3);
            let t = g.block_matmul_nt(o, x, 3);
            g.add(s, t)
        });
        let v = sample(6, 4);
        check_unary(sample(6, 3), |g, p| {
            let vv = g.constant(v.clone());
            g.block_matmul(p, vv, 3)
        });
        check_unary(sample(6, 4), |g, x| {
            let p = g.constant(sample(6, 3));
            g.block_matmul(p, x, 3)
        });
    }

    #[test]
    fn layer_norm_and_bias_grads() {
        let gamma = Matrix::from_vec(1, 4, vec![1.0, 0.5, -0.3, 2.0]);
        let beta = Matrix::from_vec(1, 4, vec![0.1, 0.0, 0.2, -0.4]);
        check_unary(sample(3, 4), |g, x| {
            let gv = g.constant(gamma.clone());
            let bv = g.constant(beta.clone());
            g.layer_norm(x, gv, bv, 1e-5)
        });
        check_unary(Matrix::from_vec(1, 4, vec![0.3, -0.2, 0.9, 1.1]), |g, gam| {
            let x = g.constant(sample(3, 4));
            let bv = g.constant(beta.clone());
            g.layer_norm(x, gam, bv, 1e-5)
        });
        check_unary(Matrix::from_vec(1, 3, vec![0.3, -0.2, 0.9]), |g, b| {
            let x = g.constant(sample(4, 3));
            g.add_row(x, b)
        });
    }

    #[test]
    fn lstm_sequence_grads() {
        // batch 2, len 3, hidden 2
        let w = Matrix::from_fn(2, 8, |i, j| 0.4 * libm::cos(0.9 * i as f64 + 0.5 * j as f64));
        check_unary(sample(6, 8), |g, p| {
            let wv = g.constant(w.clone());
            g.lstm_sequence(p, wv, 3)
        });
        check_unary(w.clone(), |g, wv| {
            let p = g.constant(sample(6, 8));
            g.lstm_sequence(p, wv, 3)
        });
    }

    #[test]
    fn lstm_sequence_first_step() {
        let mut g = Graph::new();
        let p = g.constant(Matrix::from_vec(1, 4, vec![0.0, 1.0, 0.5, 2.0]));
        let w = g.constant(Matrix::zeros(1, 4));
        let out = g.lstm_sequence(p, w, 1);
        let c = 0.5 * libm::tanh(0.5);
        let expect = sigmoid(2.0) * libm::tanh(c);
        assert!((g.value(out).get(0, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn relu_grad_away_from_kink() {
        check_unary(Matrix::from_vec(2, 2, vec![0.5, -0.5, 1.5, -2.0]), |g, x| g.relu(x));
    }

    #[test]
    fn masked_mse_value_and_grad() {
        let target = Matrix::from_vec(3, 1, vec![0.0, 0.0, 0.0]);
        check_unary(sample(3, 1), |g, p| {
            g.row_masked_mse(p, target.clone(), vec![true, false, true])
        });
        let mut g = Graph::new();
        let p = g.variable(Matrix::from_vec(2, 1, vec![1.0, 2.0]));
        let l = g.row_masked_mse(p, Matrix::zeros(2, 1), vec![true, true]);
        assert_eq!(g.value(l).get(0, 0), 2.5);
        let grads = g.backward(l);
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 2.0]);
    }
}
