//! A small reverse-mode differentiation tape over dense row-major matrices,
//! with just enough layers for a GRU sequence autoencoder.
//!
//! Every value on the tape is treated as a matrix: a 1-D tensor of length
//! `n` behaves as a `1 × n` row. Parameters live in a [`ParamStore`]; a
//! [`Graph`] copies the parameters it uses, records operations, and
//! [`Graph::backward`] adds the resulting gradients into the store.

use std::io::{self, Read, Write};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("index {index} out of range for {len} rows")]
    Index { index: usize, len: usize },
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NotScalar(Vec<usize>),
    #[error("dropout rate must be in [0, 1), got {0}")]
    BadRate(f64),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

type Result<T> = std::result::Result<T, NeuralError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NeuralError::Shape {
                op: "from_vec",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(&[rows, cols], data)
    }

    pub fn row(data: Vec<f64>) -> Self {
        Self { shape: vec![1, data.len()], data }
    }

    pub fn scalar(x: f64) -> Self {
        Self { shape: vec![1, 1], data: vec![x] }
    }

    /// Uniform on `(-limit, limit)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
        Self { shape: shape.to_vec(), data }
    }

    /// Glorot/Xavier uniform for a `fan_in × fan_out` matrix.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::uniform(&[fan_in, fan_out], limit, rng)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` under the row-vector convention.
    pub fn dims(&self) -> (usize, usize) {
        match self.shape[..] {
            [] => (1, 1),
            [n] => (1, n),
            [r, c] => (r, c),
            _ => (self.shape[0], self.data.len() / self.shape[0].max(1)),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dims().1 + c]
    }

    /// Row `r` as a slice.
    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.dims().1;
        &self.data[r * c..(r + 1) * c]
    }

    fn same_size_zeros(&self) -> Self {
        Self { shape: self.shape.clone(), data: vec![0.0; self.data.len()] }
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `a (m×k) · b (k×n)`.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, y) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
    out
}

/// `aᵀ (k×m → m×k) · b (k×n)` with `a` stored `k×m`.
fn matmul_at_b(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        for i in 0..m {
            let x = a[p * m + i];
            if x == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, y) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
    out
}

/// `a (m×n) · bᵀ` with `b` stored `k×n`, result `m×k`.
fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let ar = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let br = &b[j * n..(j + 1) * n];
            out[i * k + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `(-ln softmax(logits)[target], softmax(logits))`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(NeuralError::Index { index: target, len: logits.len() });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[target];
    let probs = logits.iter().map(|x| (x - lse).exp()).collect();
    Ok((loss, probs))
}

/// Inverted-dropout mask: 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NeuralError::BadRate(rate));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

/// Inverted dropout on a plain vector; identity when not training.
pub fn dropout<R: Rng + ?Sized>(x: &[f64], rate: f64, training: bool, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NeuralError::BadRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok(x.to_vec());
    }
    let mask = dropout_mask(x.len(), rate, rng)?;
    Ok(x.iter().zip(mask).map(|(v, m)| v * m).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

const PARAM_MAGIC: &[u8; 4] = b"DPNP";
const PARAM_VERSION: u32 = 1;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = value.same_size_zeros();
        self.params.push(Parameter { name: name.into(), value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data.fill(0.0);
        }
    }

    /// Binary layout, little-endian:
    /// `"DPNP"`, u32 version, u32 count, then per parameter
    /// u32 name length, name bytes, u32 rank, u64 dims, f64 values.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(PARAM_MAGIC)?;
        w.write_all(&PARAM_VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&(p.name.len() as u32).to_le_bytes())?;
            w.write_all(p.name.as_bytes())?;
            w.write_all(&(p.value.shape.len() as u32).to_le_bytes())?;
            for d in &p.value.shape {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for x in &p.value.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PARAM_MAGIC {
            return Err(NeuralError::Format("bad parameter block magic".into()));
        }
        let version = read_u32(r)?;
        if version != PARAM_VERSION {
            return Err(NeuralError::Format(format!("unsupported version {version}")));
        }
        let count = read_u32(r)?;
        let mut store = Self::new();
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| NeuralError::Format("parameter name is not UTF-8".into()))?;
            let rank = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(read_f64(r)?);
            }
            store.add(name, Tensor { shape, data });
        }
        Ok(store)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Var, Var),
    Embedding { table: Var, ids: Vec<usize> },
    Mask { x: Var, mask: Vec<f64> },
    SumAll(Var),
    Scale(Var, f64),
    SoftmaxXent { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0[v.0].as_ref()
    }
}

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

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(NeuralError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Input, "input")
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.get(id).value.clone();
        self.nodes.push(Node { value, op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> NeuralError {
        NeuralError::Shape {
            op,
            left: self.value(a).shape.clone(),
            right: self.value(b).shape.clone(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims();
        let (k2, n) = self.value(b).dims();
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let data = matmul_raw(&self.value(a).data, &self.value(b).data, m, k, n);
        self.push(Tensor { shape: vec![m, n], data }, Op::MatMul(a, b), "matmul")
    }

    fn zip_same(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        if self.value(a).dims() != self.value(b).dims() {
            return Err(self.shape_err(name, a, b));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| f(*x, *y)).collect();
        let (r, c) = va.dims();
        self.push(Tensor { shape: vec![r, c], data }, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds the `1 × n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims();
        if self.value(bias).dims() != (1, n) {
            return Err(self.shape_err("add_row", a, bias));
        }
        let b = &self.value(bias).data;
        let mut data = self.value(a).data.clone();
        for row in data.chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.push(Tensor { shape: vec![m, n], data }, Op::AddRow(a, bias), "add_row")
    }

    fn map(&mut self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let v = self.value(a);
        let (r, c) = v.dims();
        let data = v.data.iter().map(|x| f(*x)).collect();
        self.push(Tensor { shape: vec![r, c], data }, op, name)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), "tanh", f64::tanh)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, k), "scale", |x| x * k)
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ca) = self.value(a).dims();
        let (m2, cb) = self.value(b).dims();
        if m != m2 {
            return Err(self.shape_err("concat", a, b));
        }
        let mut data = Vec::with_capacity(m * (ca + cb));
        for i in 0..m {
            data.extend_from_slice(self.value(a).row_slice(i));
            data.extend_from_slice(self.value(b).row_slice(i));
        }
        self.push(Tensor { shape: vec![m, ca + cb], data }, Op::Concat(a, b), "concat")
    }

    /// Gathers `table` rows, one output row per id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = t.dims();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(NeuralError::Index { index: id, len: rows });
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let shape = vec![ids.len(), cols];
        self.push(Tensor { shape, data }, Op::Embedding { table, ids: ids.to_vec() }, "embedding")
    }

    /// Inverted dropout. Returns `x` itself when not training or `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NeuralError::BadRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.value(x).len(), rate, rng)?;
        let v = self.value(x);
        let (r, c) = v.dims();
        let data = v.data.iter().zip(&mask).map(|(a, m)| a * m).collect();
        self.push(Tensor { shape: vec![r, c], data }, Op::Mask { x, mask }, "dropout")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), "sum_all")
    }

    /// `Σ_i weights[i] · (-ln softmax(logits_i)[targets[i]])` over rows `i`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let (m, n) = self.value(logits).dims();
        if targets.len() != m || weights.len() != m {
            return Err(NeuralError::Shape {
                op: "softmax_cross_entropy",
                left: vec![m, n],
                right: vec![targets.len(), weights.len()],
            });
        }
        let mut probs = Vec::with_capacity(m * n);
        let mut total = 0.0;
        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            let (loss, p) = softmax_cross_entropy(self.value(logits).row_slice(i), t)?;
            total += w * loss;
            probs.extend(p);
        }
        let op = Op::SoftmaxXent {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            probs,
        };
        self.push(Tensor::scalar(total), op, "softmax_cross_entropy")
    }

    /// Backpropagates from the scalar `loss`, adding parameter gradients
    /// into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        if self.value(loss).dims() != (1, 1) {
            return Err(NeuralError::NotScalar(self.value(loss).shape.clone()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let shaped = |v: Var, data: Vec<f64>| Tensor { shape: self.value(v).shape.clone(), data };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => store.get_mut(*id).grad.add_assign(&g),
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims();
                    let (_, n) = self.value(*b).dims();
                    let da = matmul_a_bt(&g.data, &self.value(*b).data, m, n, k);
                    let db = matmul_at_b(&self.value(*a).data, &g.data, m, k, n);
                    accumulate(&mut grads, *a, shaped(*a, da));
                    accumulate(&mut grads, *b, shaped(*b, db));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, shaped(*a, g.data.clone()));
                    accumulate(&mut grads, *b, shaped(*b, g.data.clone()));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, shaped(*a, g.data.clone()));
                    accumulate(&mut grads, *b, shaped(*b, g.data.iter().map(|x| -x).collect()));
                }
                Op::Mul(a, b) => {
                    let va = &self.value(*a).data;
                    let vb = &self.value(*b).data;
                    let da = g.data.iter().zip(vb).map(|(x, y)| x * y).collect();
                    let db = g.data.iter().zip(va).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, shaped(*a, da));
                    accumulate(&mut grads, *b, shaped(*b, db));
                }
                Op::AddRow(a, bias) => {
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0; n];
                    for row in g.data.chunks(n) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *a, shaped(*a, g.data.clone()));
                    accumulate(&mut grads, *bias, shaped(*bias, db));
                }
                Op::Sigmoid(a) => {
                    let d = g.data.iter().zip(&node.value.data).map(|(x, y)| x * y * (1.0 - y)).collect();
                    accumulate(&mut grads, *a, shaped(*a, d));
                }
                Op::Tanh(a) => {
                    let d = g.data.iter().zip(&node.value.data).map(|(x, y)| x * (1.0 - y * y)).collect();
                    accumulate(&mut grads, *a, shaped(*a, d));
                }
                Op::Scale(a, k) => {
                    accumulate(&mut grads, *a, shaped(*a, g.data.iter().map(|x| x * k).collect()));
                }
                Op::Concat(a, b) => {
                    let (m, ca) = self.value(*a).dims();
                    let cb = self.value(*b).dims().1;
                    let mut da = Vec::with_capacity(m * ca);
                    let mut db = Vec::with_capacity(m * cb);
                    for row in g.data.chunks(ca + cb) {
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    accumulate(&mut grads, *a, shaped(*a, da));
                    accumulate(&mut grads, *b, shaped(*b, db));
                }
                Op::Embedding { table, ids } => {
                    let cols = self.value(*table).dims().1;
                    let mut dt = vec![0.0; self.value(*table).len()];
                    for (row, &id) in g.data.chunks(cols).zip(ids) {
                        for (d, x) in dt[id * cols..(id + 1) * cols].iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *table, shaped(*table, dt));
                }
                Op::Mask { x, mask } => {
                    let d = g.data.iter().zip(mask).map(|(a, m)| a * m).collect();
                    accumulate(&mut grads, *x, shaped(*x, d));
                }
                Op::SumAll(a) => {
                    let d = vec![g.data[0]; self.value(*a).len()];
                    accumulate(&mut grads, *a, shaped(*a, d));
                }
                Op::SoftmaxXent { logits, targets, weights, probs } => {
                    let n = self.value(*logits).dims().1;
                    let upstream = g.data[0];
                    let mut d = probs.clone();
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let row = &mut d[i * n..(i + 1) * n];
                        row[t] -= 1.0;
                        for x in row.iter_mut() {
                            *x *= w * upstream;
                        }
                    }
                    accumulate(&mut grads, *logits, shaped(*logits, d));
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients(grads))
    }
}

/// Parameter ids of one GRU layer. `W_*` are `input × hidden`, `U_*` are
/// `hidden × hidden`, `b_*` have length `hidden`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruParams {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl GruParams {
    /// Glorot-uniform matrices, zero biases.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut w = |name: &str, rows: usize| store.add(format!("{prefix}.{name}"), Tensor::glorot(rows, hidden, rng));
        let (w_z, w_r, w_h) = (w("w_z", input_dim), w("w_r", input_dim), w("w_h", input_dim));
        let (u_z, u_r, u_h) = (w("u_z", hidden), w("u_r", hidden), w("u_h", hidden));
        let mut b = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(&[hidden]));
        let (b_z, b_r, b_h) = (b("b_z"), b("b_r"), b("b_h"));
        Self { w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h, input_dim, hidden }
    }

    /// Looks up `prefix.*` parameters in a loaded store.
    pub fn find(store: &ParamStore, prefix: &str) -> Option<Self> {
        let f = |n: &str| store.find(&format!("{prefix}.{n}"));
        let w_z = f("w_z")?;
        let (input_dim, hidden) = store.get(w_z).value.dims();
        Some(Self {
            w_z,
            w_r: f("w_r")?,
            w_h: f("w_h")?,
            u_z: f("u_z")?,
            u_r: f("u_r")?,
            u_h: f("u_h")?,
            b_z: f("b_z")?,
            b_r: f("b_r")?,
            b_h: f("b_h")?,
            input_dim,
            hidden,
        })
    }

    pub fn ids(&self) -> [ParamId; 9] {
        [self.w_z, self.w_r, self.w_h, self.u_z, self.u_r, self.u_h, self.b_z, self.b_r, self.b_h]
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> BoundGru {
        let mut p = |id| g.param(store, id);
        BoundGru {
            w_z: p(self.w_z),
            w_r: p(self.w_r),
            w_h: p(self.w_h),
            u_z: p(self.u_z),
            u_r: p(self.u_r),
            u_h: p(self.u_h),
            b_z: p(self.b_z),
            b_r: p(self.b_r),
            b_h: p(self.b_h),
        }
    }
}

/// GRU parameters recorded on a graph.
#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    w_z: Var,
    w_r: Var,
    w_h: Var,
    u_z: Var,
    u_r: Var,
    u_h: Var,
    b_z: Var,
    b_r: Var,
    b_h: Var,
}

impl BoundGru {
    /// One step over a batch (`x`: `B × input`, `h`: `B × hidden`):
    ///
    /// ```text
    /// z  = σ(x W_z + h U_z + b_z)
    /// r  = σ(x W_r + h U_r + b_r)
    /// h~ = tanh(x W_h + (r ⊙ h) U_h + b_h)
    /// h' = (1 - z) ⊙ h + z ⊙ h~
    /// ```
    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        let gate = |g: &mut Graph, w, u, b| -> Result<Var> {
            let xw = g.matmul(x, w)?;
            let hu = g.matmul(h, u)?;
            let s = g.add(xw, hu)?;
            let s = g.add_row(s, b)?;
            g.sigmoid(s)
        };
        let z = gate(g, self.w_z, self.u_z, self.b_z)?;
        let r = gate(g, self.w_r, self.u_r, self.b_r)?;
        let rh = g.mul(r, h)?;
        let xw = g.matmul(x, self.w_h)?;
        let rhu = g.matmul(rh, self.u_h)?;
        let s = g.add(xw, rhu)?;
        let s = g.add_row(s, self.b_h)?;
        let candidate = g.tanh(s)?;
        let delta = g.sub(candidate, h)?;
        let step = g.mul(z, delta)?;
        g.add(h, step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Bias-corrected Adam with per-parameter moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| p.value.same_size_zeros()).collect();
        Self { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in store.params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i].data, &mut self.v[i].data);
            for j in 0..p.value.data.len() {
                let g = p.grad.data[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p.value.data[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        store.zero_grad();
    }
}
