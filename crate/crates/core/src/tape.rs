//! Minimal reverse-mode automatic differentiation over dense row-major
//! matrices.
//!
//! A [`Graph`] records operations on [`Var`] handles during the forward pass;
//! [`Graph::backward`] walks the record in reverse and accumulates parameter
//! gradients into a [`Gradients`] buffer shaped like the [`Params`].

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        assert_eq!(rows * cols, data.len(), "tensor data length");
        Tensor { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::from_vec(1, n, data)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let av = a.data[i * a.cols + k];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a · bᵀ`
fn matmul_bt(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = arow.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · b`
fn matmul_at(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, av) in arow.iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.cols, a.rows);
    for i in 0..a.rows {
        for j in 0..a.cols {
            out.data[j * a.rows + i] = a.data[i * a.cols + j];
        }
    }
    out
}

/// Named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl Params {
    pub fn new() -> Params {
        Params::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter `{name}`");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Xavier-uniform initialized matrix.
    pub fn add_xavier<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn add_uniform<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, scale: f64, rng: &mut R) -> ParamId {
        let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect(),
        }
    }

    pub fn to_named(&self) -> BTreeMap<String, Tensor> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }

    /// Overwrites values from a name → tensor map; names and shapes must match exactly.
    pub fn load_named(&mut self, named: &BTreeMap<String, Tensor>) -> Result<()> {
        if named.len() != self.names.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                named.len(),
                self.names.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            let t = named
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != self.tensors[i].shape() || t.data.len() != t.rows * t.cols {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = t.clone();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param(ParamId),
    Gather(ParamId, Vec<usize>),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    Bce(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SelectRows(Var, Vec<usize>),
    BroadcastRows(Var),
    SumRows(Var),
    SumAll(Var),
    SoftmaxRows(Var),
    /// Column softmax over `x + offset_i` for unmasked entries; masked
    /// entries get exactly zero weight.
    MaskedSoftmaxCol(Var),
    ScaleRows(Var, Var),
    WeightedSum(Var, Var),
    Transpose(Var),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p Params,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p Params) -> Graph<'p> {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p Params {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match (&self.nodes[v.0].value, &self.nodes[v.0].op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Rows of a parameter matrix (embedding lookup).
    pub fn gather(&mut self, id: ParamId, rows: Vec<usize>) -> Var {
        let table = self.params.get(id);
        let mut data = Vec::with_capacity(rows.len() * table.cols);
        for &r in &rows {
            data.extend_from_slice(table.row(r));
        }
        let t = Tensor::from_vec(rows.len(), table.cols, data);
        self.push(t, Op::Gather(id, rows))
    }

    fn check(&self, ok: bool, what: impl FnOnce() -> String) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(what()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa.1 == sb.0, || format!("matmul {sa:?} x {sb:?}"))?;
        let t = matmul(self.value(a), self.value(b));
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa.1 == sb.1, || format!("matmul_bt {sa:?} x {sb:?}ᵀ"))?;
        let t = matmul_bt(self.value(a), self.value(b));
        Ok(self.push(t, Op::MatMulBt(a, b)))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        Tensor::from_vec(
            ta.rows,
            ta.cols,
            ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect(),
        )
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| f(*x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa == sb, || format!("add {sa:?} + {sb:?}"))?;
        let t = self.zip(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// `a (r×c) + b (1×c)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sb.0 == 1 && sa.1 == sb.1, || format!("add_row {sa:?} + {sb:?}"))?;
        let (ta, tb) = (self.value(a), self.value(b));
        let mut t = ta.clone();
        for r in 0..t.rows {
            for c in 0..t.cols {
                t.data[r * t.cols + c] += tb.data[c];
            }
        }
        Ok(self.push(t, Op::AddRow(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa == sb, || format!("mul {sa:?} * {sb:?}"))?;
        let t = self.zip(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn mul_const(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        let sa = self.shape(a);
        self.check(sa == mask.shape(), || format!("mul_const {sa:?} * {:?}", mask.shape()))?;
        let ta = self.value(a);
        let t = Tensor::from_vec(
            ta.rows,
            ta.cols,
            ta.data.iter().zip(&mask.data).map(|(x, m)| x * m).collect(),
        );
        Ok(self.push(t, Op::MulConst(a, mask)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.map(a, |x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = self.map(a, |x| x.clamp(lo, hi));
        self.push(t, Op::Clamp(a, lo, hi))
    }

    /// Binary cross-entropy of a 1×1 probability against `label`.
    pub fn bce(&mut self, p: Var, label: f64) -> Result<Var> {
        let sp = self.shape(p);
        self.check(sp == (1, 1), || format!("bce on {sp:?}"))?;
        let pv = self.value(p).item();
        let loss = -(label * pv.ln() + (1.0 - label) * (1.0 - pv).ln());
        Ok(self.push(Tensor::scalar(loss), Op::Bce(p, label)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        self.check(parts.iter().all(|p| self.shape(*p).0 == rows), || {
            format!(
                "concat_cols rows {:?}",
                parts.iter().map(|p| self.shape(*p)).collect::<Vec<_>>()
            )
        })?;
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        Ok(self.push(Tensor::from_vec(rows, cols, data), Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0]).1;
        self.check(parts.iter().all(|p| self.shape(*p).1 == cols), || {
            format!(
                "concat_rows cols {:?}",
                parts.iter().map(|p| self.shape(*p)).collect::<Vec<_>>()
            )
        })?;
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(&self.value(*p).data);
        }
        let rows = data.len() / cols.max(1);
        Ok(self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let sa = self.shape(a);
        self.check(start < end && end <= sa.0, || {
            format!("slice_rows [{start}, {end}) of {sa:?}")
        })?;
        let ta = self.value(a);
        let t = Tensor::from_vec(end - start, ta.cols, ta.data[start * ta.cols..end * ta.cols].to_vec());
        Ok(self.push(t, Op::SliceRows(a, start)))
    }

    pub fn select_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        let sa = self.shape(a);
        self.check(!rows.is_empty() && rows.iter().all(|&r| r < sa.0), || {
            format!("select_rows {rows:?} of {sa:?}")
        })?;
        let ta = self.value(a);
        let mut data = Vec::with_capacity(rows.len() * ta.cols);
        for &r in &rows {
            data.extend_from_slice(ta.row(r));
        }
        let t = Tensor::from_vec(rows.len(), ta.cols, data);
        Ok(self.push(t, Op::SelectRows(a, rows)))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        self.slice_rows(a, r, r + 1)
    }

    /// Repeats a 1×c row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let sa = self.shape(a);
        self.check(sa.0 == 1 && n > 0, || format!("broadcast_rows {sa:?} to {n}"))?;
        let ta = self.value(a);
        let data = ta.data.iter().copied().cycle().take(n * ta.cols).collect();
        Ok(self.push(Tensor::from_vec(n, ta.cols, data), Op::BroadcastRows(a)))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut out = Tensor::zeros(1, ta.cols);
        for r in 0..ta.rows {
            for (o, v) in out.data.iter_mut().zip(ta.row(r)) {
                *o += v;
            }
        }
        self.push(out, Op::SumRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut out = ta.clone();
        for r in 0..out.rows {
            let row = &mut out.data[r * out.cols..(r + 1) * out.cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Softmax over a column vector `x (n×1)` where entry `i` is shifted by
    /// `offsets[i]` or, when `None`, excluded with weight exactly 0. If every
    /// entry is excluded, `fallback` receives weight 1.
    pub fn masked_softmax_col(&mut self, x: Var, offsets: &[Option<f64>], fallback: usize) -> Result<Var> {
        let sx = self.shape(x);
        self.check(sx == (offsets.len(), 1) && fallback < offsets.len(), || {
            format!("masked_softmax_col {sx:?} with {} offsets", offsets.len())
        })?;
        let tx = self.value(x);
        let shifted: Vec<Option<f64>> = offsets.iter().zip(&tx.data).map(|(o, v)| o.map(|o| v + o)).collect();
        let m = shifted.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = shifted
            .iter()
            .map(|s| s.map(|s| (s - m).exp()).unwrap_or(0.0))
            .collect();
        let z: f64 = w.iter().sum();
        if z > 0.0 && z.is_finite() {
            for v in &mut w {
                *v /= z;
            }
            let t = Tensor::from_vec(w.len(), 1, w);
            Ok(self.push(t, Op::MaskedSoftmaxCol(x)))
        } else {
            let mut t = Tensor::zeros(offsets.len(), 1);
            t.data[fallback] = 1.0;
            Ok(self.constant(t))
        }
    }

    /// Row `i` of `a (r×c)` scaled by `w[i]` for `w (r×1)`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (sa, sw) = (self.shape(a), self.shape(w));
        self.check(sw == (sa.0, 1), || format!("scale_rows {sa:?} by {sw:?}"))?;
        let (ta, tw) = (self.value(a), self.value(w));
        let mut t = ta.clone();
        for r in 0..t.rows {
            for c in 0..t.cols {
                t.data[r * t.cols + c] *= tw.data[r];
            }
        }
        Ok(self.push(t, Op::ScaleRows(a, w)))
    }

    /// `Σ_i w[i] · a[i]` as a 1×c row, for `w (r×1)`.
    pub fn weighted_sum(&mut self, w: Var, a: Var) -> Result<Var> {
        let (sa, sw) = (self.shape(a), self.shape(w));
        self.check(sw == (sa.0, 1), || format!("weighted_sum {sw:?} over {sa:?}"))?;
        let t = matmul_at(self.value(w), self.value(a));
        Ok(self.push(t, Op::WeightedSum(w, a)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = transpose(self.value(a));
        self.push(t, Op::Transpose(a))
    }

    /// Accumulates `d output / d params`, seeding the scalar `output` with `seed`.
    pub fn backward(&self, output: Var, seed: f64, grads: &mut Gradients) {
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let so = self.shape(output);
        adj[output.0] = Some(Tensor::from_vec(so.0, so.1, vec![seed; so.0 * so.1]));

        fn acc(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut adj[v.0] {
                Some(t) => t.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let out = self.value(Var(i));
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(id) => grads.tensors[id.0].add_assign(&g),
                Op::Gather(id, rows) => {
                    let gt = &mut grads.tensors[id.0];
                    let cols = gt.cols;
                    for (k, &r) in rows.iter().enumerate() {
                        for c in 0..cols {
                            gt.data[r * cols + c] += g.data[k * cols + c];
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = matmul_bt(&g, self.value(*b));
                    let gb = matmul_at(self.value(*a), &g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::MatMulBt(a, b) => {
                    // out = a bᵀ: da = g b, db = gᵀ a
                    let ga = matmul(&g, self.value(*b));
                    let gb = matmul_at(&g, self.value(*a));
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut adj, *a, g);
                    acc(&mut adj, *b, gb);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect(),
                    );
                    let gb = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&ta.data).map(|(x, y)| x * y).collect(),
                    );
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::MulConst(a, m) => {
                    let ga = Tensor::from_vec(g.rows, g.cols, g.data.iter().zip(&m.data).map(|(x, y)| x * y).collect());
                    acc(&mut adj, *a, ga);
                }
                Op::Scale(a, s) => {
                    let ga = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|x| x * s).collect());
                    acc(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&out.data).map(|(x, y)| x * (1.0 - y * y)).collect(),
                    );
                    acc(&mut adj, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&out.data).map(|(x, y)| x * y * (1.0 - y)).collect(),
                    );
                    acc(&mut adj, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let ta = self.value(*a);
                    let ga = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data
                            .iter()
                            .zip(&ta.data)
                            .map(|(x, v)| if *v > *lo && *v < *hi { *x } else { 0.0 })
                            .collect(),
                    );
                    acc(&mut adj, *a, ga);
                }
                Op::Bce(p, y) => {
                    let pv = self.value(*p).item();
                    let d = -y / pv + (1.0 - y) / (1.0 - pv);
                    acc(&mut adj, *p, Tensor::scalar(g.item() * d));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let c = self.shape(*p).1;
                        let mut gp = Tensor::zeros(g.rows, c);
                        for r in 0..g.rows {
                            gp.data[r * c..(r + 1) * c]
                                .copy_from_slice(&g.data[r * g.cols + offset..r * g.cols + offset + c]);
                        }
                        offset += c;
                        acc(&mut adj, *p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (r, c) = self.shape(*p);
                        let gp = Tensor::from_vec(r, c, g.data[offset..offset + r * c].to_vec());
                        offset += r * c;
                        acc(&mut adj, *p, gp);
                    }
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Tensor::zeros(r, c);
                    ga.data[start * c..start * c + g.data.len()].copy_from_slice(&g.data);
                    acc(&mut adj, *a, ga);
                }
                Op::SelectRows(a, rows) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Tensor::zeros(r, c);
                    for (k, &src) in rows.iter().enumerate() {
                        for j in 0..c {
                            ga.data[src * c + j] += g.data[k * c + j];
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::BroadcastRows(a) => {
                    let mut ga = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in ga.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::SumRows(a) => {
                    let (r, c) = self.shape(*a);
                    let data = g.data.iter().copied().cycle().take(r * c).collect();
                    acc(&mut adj, *a, Tensor::from_vec(r, c, data));
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut adj, *a, Tensor::from_vec(r, c, vec![g.item(); r * c]));
                }
                Op::SoftmaxRows(a) => {
                    let mut ga = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let (y, gy) = (out.row(r), g.row(r));
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for c in 0..g.cols {
                            ga.data[r * g.cols + c] = y[c] * (gy[c] - dot);
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::MaskedSoftmaxCol(a) => {
                    // masked entries have y = 0, so their gradient vanishes too
                    let dot: f64 = out.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
                    let data = out.data.iter().zip(&g.data).map(|(y, gy)| y * (gy - dot)).collect();
                    acc(&mut adj, *a, Tensor::from_vec(g.rows, 1, data));
                }
                Op::ScaleRows(a, w) => {
                    let (ta, tw) = (self.value(*a), self.value(*w));
                    let mut ga = g.clone();
                    let mut gw = Tensor::zeros(tw.rows, 1);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            let k = r * g.cols + c;
                            ga.data[k] *= tw.data[r];
                            gw.data[r] += g.data[k] * ta.data[k];
                        }
                    }
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *w, gw);
                }
                Op::WeightedSum(w, a) => {
                    // out (1×c) = wᵀ a: dw = a gᵀ, da = w g
                    let gw = matmul_bt(self.value(*a), &g);
                    let ga = matmul(self.value(*w), &g);
                    acc(&mut adj, *w, gw);
                    acc(&mut adj, *a, ga);
                }
                Op::Transpose(a) => acc(&mut adj, *a, transpose(&g)),
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Central finite-difference check of every parameter scalar. `loss` must
/// rebuild the scalar loss from the given parameters; returns the worst
/// relative error `|a − n| / max(|a| + |n|, floor)` and the offending name.
pub fn gradient_check(
    params: &Params,
    loss: &dyn Fn(&Params) -> (f64, Gradients),
    h: f64,
    floor: f64,
    only: Option<&dyn Fn(&str) -> bool>,
) -> (f64, String) {
    let (_, analytic) = loss(params);
    let mut worst = (0.0, String::new());
    let mut probe = params.clone();
    for id in params.ids() {
        let name = params.name(id).to_string();
        if let Some(filter) = only {
            if !filter(&name) {
                continue;
            }
        }
        for k in 0..params.get(id).data.len() {
            let orig = probe.get(id).data[k];
            probe.get_mut(id).data[k] = orig + h;
            let up = loss(&probe).0;
            probe.get_mut(id).data[k] = orig - h;
            let down = loss(&probe).0;
            probe.get_mut(id).data[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id).data[k];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(floor);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{k}] analytic {a:e} numeric {numeric:e}"));
            }
        }
    }
    worst
}
