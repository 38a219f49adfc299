//! Tape-based reverse-mode differentiation over 2-D row-major tensors.
//!
//! A [`Graph`] records each operation as it is applied. Parameters are read
//! from a borrowed [`ParamStore`] without copying; [`Graph::backward`] walks
//! the tape in reverse and returns the gradient of every reachable parameter.

use std::collections::HashMap;

use super::kernels::{gelu, gelu_grad, gemm, layer_norm_row, softmax_in_place};
use super::param::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Target value that excludes a row from [`Graph::cross_entropy`].
pub const IGNORE_INDEX: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    /// Mean over non-ignored rows; zero when every row is ignored.
    Mean,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul { a: NodeId, b: NodeId, trans_b: bool },
    Add { a: NodeId, b: NodeId },
    AddRow { a: NodeId, row: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, factor: f64 },
    Gelu { a: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, stats: Vec<(f64, f64)> },
    Softmax { a: NodeId },
    Gather { table: NodeId, rows: Vec<usize> },
    SliceCols { a: NodeId, start: usize },
    ConcatCols { parts: Vec<NodeId> },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, probs: Vec<f64>, scale: f64 },
    Sum { a: NodeId },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    needs_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(p), _) => self.store.value(*p),
            (_, Some(v)) => v,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Input,
            value: Some(value),
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, node);
        node
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 {
            return Err(Error::shape(
                "matmul",
                format!("needs matrices, got {:?} and {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k) = dims2(av);
        let (n, kb) = if trans_b {
            dims2(bv)
        } else {
            let (r, c) = dims2(bv);
            (c, r)
        };
        if k != kb {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?} (transpose_b={trans_b})", av.shape(), bv.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), trans_b, 0.0, &mut out);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(Op::MatMul { a, b, trans_b }, value, &[a, b]))
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Add { a, b }, value, &[a, b]))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (av, rv) = (self.value(a), self.value(row));
        let cols = av.cols();
        if rv.numel() != cols {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + broadcast {:?}", av.shape(), rv.shape()),
            ));
        }
        let r = rv.data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + r[i % cols])
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::AddRow { a, row }, value, &[a, row]))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul { a, b }, value, &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let av = self.value(a);
        let value = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * factor).collect())
            .expect("same shape");
        self.push(Op::Scale { a, factor }, value, &[a])
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let value = Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| gelu(x)).collect())
            .expect("same shape");
        self.push(Op::Gelu { a }, value, &[a])
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain` and `bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let (rows, cols) = dims2(xv);
        if gv.numel() != cols || bv.numel() != cols {
            return Err(Error::shape(
                "layer_norm",
                format!("input {:?}, gain {:?}, bias {:?}", xv.shape(), gv.shape(), bv.shape()),
            ));
        }
        let mut out = vec![0.0; rows * cols];
        let mut stats = Vec::with_capacity(rows);
        for r in 0..rows {
            stats.push(layer_norm_row(
                xv.row(r),
                gv.data(),
                bv.data(),
                &mut out[r * cols..(r + 1) * cols],
            ));
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(Op::LayerNorm { x, gain, bias, stats }, value, &[x, gain, bias]))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let cols = av.cols();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(Op::Softmax { a }, value, &[a])
    }

    /// Row-wise softmax of a square score matrix where row `i` only attends
    /// to columns `0..=i`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let (rows, cols) = dims2(av);
        if rows != cols {
            return Err(Error::shape("causal_softmax", format!("{:?} is not square", av.shape())));
        }
        let mut data = av.data().to_vec();
        for (i, row) in data.chunks_mut(cols).enumerate() {
            softmax_in_place(&mut row[..=i]);
            row[i + 1..].iter_mut().for_each(|v| *v = 0.0);
        }
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Softmax { a }, value, &[a]))
    }

    /// Selects rows of a matrix (embedding lookup when `table` is an
    /// embedding table).
    pub fn gather(&mut self, table: NodeId, rows: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        let (n, cols) = dims2(tv);
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(Error::shape(
                    "gather",
                    format!("row {r} out of range for {:?}", tv.shape()),
                ));
            }
            out.extend_from_slice(tv.row(r));
        }
        let value = Tensor::matrix(rows.len(), cols, out)?;
        Ok(self.push(
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            value,
            &[table],
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let av = self.value(a);
        let (rows, cols) = dims2(av);
        if start + len > cols {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} of {:?}", start + len, av.shape()),
            ));
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let value = Tensor::matrix(rows, len, out)?;
        Ok(self.push(Op::SliceCols { a, start }, value, &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows || v.shape().len() != 2 {
                return Err(Error::shape(
                    "concat_cols",
                    format!("part {:?} does not have {rows} rows", v.shape()),
                ));
            }
            total += v.cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(rows, total, out)?;
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            value,
            parts,
        ))
    }

    /// Softmax cross-entropy of `logits` rows against integer targets; rows
    /// whose target is [`IGNORE_INDEX`] contribute nothing.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], reduction: Reduction) -> Result<NodeId> {
        let lv = self.value(logits);
        let (rows, cols) = dims2(lv);
        if targets.len() != rows {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for logits {:?}", targets.len(), lv.shape()),
            ));
        }
        let mut probs = lv.data().to_vec();
        let mut total = 0.0;
        let mut count = 0usize;
        for (r, row) in probs.chunks_mut(cols).enumerate() {
            let t = targets[r];
            if t == IGNORE_INDEX {
                continue;
            }
            if t >= cols {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("target {t} out of range for {cols} classes"),
                ));
            }
            let logit_t = row[t];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - logit_t;
            count += 1;
            softmax_in_place(row);
        }
        let scale = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean if count > 0 => 1.0 / count as f64,
            Reduction::Mean => 0.0,
        };
        let value = Tensor::scalar(total * scale);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                scale,
            },
            value,
            &[logits],
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum { a }, value, &[a])
    }

    /// Gradients of the scalar `loss` with respect to every parameter it
    /// depends on.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(p) => out.push(*p, g),
                Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = dims2(av);
                    let n = g.cols();
                    if self.needs(*a) {
                        let mut da = vec![0.0; m * k];
                        // dA = dC · b'ᵀ
                        gemm(m, n, k, g.data(), false, bv.data(), !trans_b, 0.0, &mut da);
                        self.acc(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = vec![0.0; k * n];
                        if *trans_b {
                            // b is n×k: dB = dCᵀ · a
                            gemm(n, m, k, g.data(), true, av.data(), false, 0.0, &mut db);
                        } else {
                            gemm(k, m, n, av.data(), true, g.data(), false, 0.0, &mut db);
                        }
                        self.acc(&mut grads, *b, db);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        self.acc(&mut grads, *a, g.data().to_vec());
                    }
                    if self.needs(*b) {
                        self.acc(&mut grads, *b, g.data().to_vec());
                    }
                }
                Op::AddRow { a, row } => {
                    if self.needs(*row) {
                        let cols = g.cols();
                        let mut dr = vec![0.0; cols];
                        for (j, v) in g.data().iter().enumerate() {
                            dr[j % cols] += v;
                        }
                        self.acc(&mut grads, *row, dr);
                    }
                    if self.needs(*a) {
                        self.acc(&mut grads, *a, g.into_data());
                    }
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let d = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                        self.acc(&mut grads, *a, d);
                    }
                    if self.needs(*b) {
                        let d = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                        self.acc(&mut grads, *b, d);
                    }
                }
                Op::Scale { a, factor } => {
                    let d = g.data().iter().map(|x| x * factor).collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::Gelu { a } => {
                    let av = self.value(*a);
                    let d = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(gy, &x)| gy * gelu_grad(x))
                        .collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::LayerNorm { x, gain, bias, stats } => {
                    let (xv, gv) = (self.value(*x), self.value(*gain));
                    let (rows, cols) = dims2(xv);
                    let mut dx = vec![0.0; rows * cols];
                    let mut dgain = vec![0.0; cols];
                    let mut dbias = vec![0.0; cols];
                    let mut xhat = vec![0.0; cols];
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        let (mean, rstd) = stats[r];
                        let xr = xv.row(r);
                        let gr = g.row(r);
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..cols {
                            xhat[j] = (xr[j] - mean) * rstd;
                            dgain[j] += gr[j] * xhat[j];
                            dbias[j] += gr[j];
                            dxhat[j] = gr[j] * gv.data()[j];
                            mean_dxhat += dxhat[j];
                            mean_dxhat_xhat += dxhat[j] * xhat[j];
                        }
                        mean_dxhat /= cols as f64;
                        mean_dxhat_xhat /= cols as f64;
                        for j in 0..cols {
                            dx[r * cols + j] = rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                        }
                    }
                    if self.needs(*x) {
                        self.acc(&mut grads, *x, dx);
                    }
                    if self.needs(*gain) {
                        self.acc(&mut grads, *gain, dgain);
                    }
                    if self.needs(*bias) {
                        self.acc(&mut grads, *bias, dbias);
                    }
                }
                Op::Softmax { a } => {
                    let y = self.nodes[i].value.as_ref().expect("softmax value");
                    let cols = y.cols();
                    let mut d = vec![0.0; y.numel()];
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            d[r * cols + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    self.acc(&mut grads, *a, d);
                }
                Op::Gather { table, rows } => {
                    let tv = self.value(*table);
                    let cols = tv.cols();
                    let mut d = vec![0.0; tv.numel()];
                    for (k, &r) in rows.iter().enumerate() {
                        let src = g.row(k);
                        for j in 0..cols {
                            d[r * cols + j] += src[j];
                        }
                    }
                    self.acc(&mut grads, *table, d);
                }
                Op::SliceCols { a, start } => {
                    let av = self.value(*a);
                    let (rows, cols) = dims2(av);
                    let len = g.cols();
                    let mut d = vec![0.0; rows * cols];
                    for r in 0..rows {
                        d[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
                    }
                    self.acc(&mut grads, *a, d);
                }
                Op::ConcatCols { parts } => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.needs(p) {
                            let mut d = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                            }
                            self.acc(&mut grads, p, d);
                        }
                        offset += w;
                    }
                }
                Op::CrossEntropy { logits, targets, probs, scale } => {
                    let cols = self.value(*logits).cols();
                    let upstream = g.item() * scale;
                    let mut d = vec![0.0; probs.len()];
                    for (r, &t) in targets.iter().enumerate() {
                        if t == IGNORE_INDEX {
                            continue;
                        }
                        for j in 0..cols {
                            d[r * cols + j] = upstream * probs[r * cols + j];
                        }
                        d[r * cols + t] -= upstream;
                    }
                    self.acc(&mut grads, *logits, d);
                }
                Op::Sum { a } => {
                    let n = self.value(*a).numel();
                    self.acc(&mut grads, *a, vec![g.item(); n]);
                }
            }
        }
        Ok(out)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn acc(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: Vec<f64>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(&delta) {
                    *e += d;
                }
            }
            slot @ None => {
                let shape = self.value(id).shape().to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient matches value shape"));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
        let mut store = ParamStore::new();
        let ids = values.iter().map(|(n, t)| store.add(*n, t.clone())).collect();
        (store, ids)
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let y = g.softmax(x);
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn confident_correct_cross_entropy_is_zero() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::matrix(2, 3, vec![0.0, 800.0, 0.0, 900.0, 0.0, 0.0]).unwrap());
        let loss = g.cross_entropy(x, &[1, 0], Reduction::Sum).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn ignored_rows_do_not_count() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::matrix(2, 2, vec![0.0, 0.0, 5.0, -5.0]).unwrap());
        let loss = g.cross_entropy(x, &[0, IGNORE_INDEX], Reduction::Mean).unwrap();
        assert!((g.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
        let none = g.cross_entropy(x, &[IGNORE_INDEX, IGNORE_INDEX], Reduction::Mean).unwrap();
        assert_eq!(g.value(none).item(), 0.0);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let (store, ids) = store_with(&[
            ("g", Tensor::vector(vec![1.0; 4])),
            ("b", Tensor::vector(vec![0.0; 4])),
        ]);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, -7.0, 0.5, 2.0, 9.0]).unwrap());
        let (gain, bias) = (g.param(ids[0]), g.param(ids[1]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        for r in 0..2 {
            let row = g.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
    }

    #[test]
    fn sum_of_squares_gradient() {
        let (store, ids) = store_with(&[("x", Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap())]);
        let mut g = Graph::new(&store);
        let x = g.param(ids[0]);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(ids[0]).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn unused_parameter_gets_no_gradient() {
        let (store, ids) = store_with(&[
            ("x", Tensor::vector(vec![1.0, 2.0])),
            ("unused", Tensor::vector(vec![3.0])),
        ]);
        let mut g = Graph::new(&store);
        let x = g.param(ids[0]);
        let loss = g.sum(x);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(ids[1]).is_none());
        let mut accumulated = store.clone();
        accumulated.accumulate(&grads);
        assert_eq!(accumulated.get(ids[1]).grad.data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let (store, ids) = store_with(&[("x", Tensor::vector(vec![1.0, 2.0]))]);
        let mut g = Graph::new(&store);
        let x = g.param(ids[0]);
        let y = g.scale(x, 2.0);
        assert!(matches!(g.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_errors_name_the_operation() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        let err = g.add_row(a, b).unwrap_err();
        assert!(err.to_string().contains("add_row"), "{err}");
    }

    #[test]
    fn causal_softmax_masks_future() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::zeros(&[3, 3]));
        let p = g.causal_softmax(a).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    }
}
