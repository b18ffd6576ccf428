//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its output value and enough
//! information to propagate gradients. Nodes only ever reference earlier
//! nodes, so walking the tape backwards is a valid topological order and
//! visits each recorded op exactly once.
//!
//! ```
//! use cgm_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

use crate::error::{CgmError, Result};
use crate::tensor::{gemm_acc, softmax_into, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One target of a tied-embedding cross-entropy: the row of the
/// representation matrix, the embedding whose transpose produces the
/// logits, and the true class.
#[derive(Clone, Debug)]
pub struct TiedTarget {
    pub row: usize,
    pub embedding: Var,
    pub class: usize,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    Reshape(Var),
    SliceLast {
        x: Var,
        start: usize,
    },
    ConcatLast(Vec<Var>),
    GatherRows(Vec<(Var, usize)>),
    PrependRow {
        x: Var,
        row: Var,
    },
    Sum(Var),
    TiedCrossEntropy {
        y: Var,
        items: Vec<TiedTarget>,
        probs: Vec<Vec<f64>>,
    },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Matrix product over the last two axes.
    ///
    /// Supports `[m,k]·[k,n]`, `[b,m,k]·[k,n]` (shared right operand) and
    /// `[b,m,k]·[b,k,n]` (batched).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let bad = || CgmError::shape("matmul", &sa, &sb);
        if sa.len() < 2 || sb.len() < 2 {
            return Err(bad());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(bad());
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let (out_shape, data) = match (sa.len(), sb.len()) {
            (_, 2) => {
                let rows = av.len() / k;
                let mut c = vec![0.0; rows * n];
                gemm_acc(rows, k, n, av, (k as isize, 1), bv, (n as isize, 1), &mut c);
                let mut shape = sa.clone();
                *shape.last_mut().unwrap() = n;
                (shape, c)
            }
            (3, 3) if sa[0] == sb[0] => {
                let batch = sa[0];
                let mut c = vec![0.0; batch * m * n];
                for bi in 0..batch {
                    gemm_acc(
                        m,
                        k,
                        n,
                        &av[bi * m * k..(bi + 1) * m * k],
                        (k as isize, 1),
                        &bv[bi * k * n..(bi + 1) * k * n],
                        (n as isize, 1),
                        &mut c[bi * m * n..(bi + 1) * m * n],
                    );
                }
                (vec![batch, m, n], c)
            }
            _ => return Err(bad()),
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&out_shape, data)?, needs, Op::MatMul(a, b)))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(CgmError::shape("transpose", &s, &[]));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for (src, dst) in xv.chunks(r * c).zip(out.chunks_mut(r * c)) {
            transpose_block(src, dst, r, c);
        }
        let mut shape = s.clone();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&shape, out)?, needs, Op::Transpose(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(CgmError::shape("add", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&shape, data)?, needs, Op::Add(a, b)))
    }

    /// `x[..., j] + bias[j]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(bias) != [d] {
            return Err(CgmError::shape("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| v + bb))
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Tensor::new(&shape, data)?, needs, Op::AddBias(x, bias)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(CgmError::shape("mul", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&shape, data)?, needs, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * s).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::new(&shape, data).expect("same shape"),
            needs,
            Op::Scale(x, s),
        )
    }

    /// Exact Gaussian-error linear unit, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| gelu_scalar(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(&shape, data).expect("same shape"), needs, Op::Gelu(x))
    }

    /// Normalize each slice along the last axis to zero mean and unit
    /// variance (with [`LAYER_NORM_EPS`]), then apply `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(CgmError::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xv.len() / d;
        let mut out = vec![0.0; xv.len()];
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            needs,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Softmax along the last axis. `-inf` entries get weight zero; a slice
    /// with no finite entry is an [`CgmError::EmptyAttentionSupport`].
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for (src, dst) in xv.chunks(d).zip(out.chunks_mut(d)) {
            softmax_into(src, dst)?;
        }
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&shape, out)?, needs, Op::Softmax(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, needs, Op::Reshape(x)))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = self.value(x).last_dim();
        if len == 0 || start + len > d {
            return Err(CgmError::shape("slice_last", &s, &[start, len]));
        }
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(d)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&shape, data)?, needs, Op::SliceLast { x, start }))
    }

    /// Concatenate along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| CgmError::contract("concat of zero tensors"))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s[..s.len() - 1] != lead[..] {
                return Err(CgmError::shape("concat_last", self.shape(*first), s));
            }
            total += s[s.len() - 1];
        }
        let rows = self.value(*first).rows();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                data.extend_from_slice(self.value(x).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let needs = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(Tensor::new(&shape, data)?, needs, Op::ConcatLast(xs.to_vec())))
    }

    /// Stack selected rows of rank-2 tensors into a `[sources.len(), w]`
    /// matrix.
    pub fn gather_rows(&mut self, sources: &[(Var, usize)]) -> Result<Var> {
        let (v0, _) = *sources
            .first()
            .ok_or_else(|| CgmError::contract("gather of zero rows"))?;
        let w = self.value(v0).last_dim();
        let mut data = Vec::with_capacity(sources.len() * w);
        for &(v, r) in sources {
            let t = self.value(v);
            if t.rank() != 2 || t.last_dim() != w || r >= t.shape()[0] {
                return Err(CgmError::shape("gather_rows", t.shape(), &[r, w]));
            }
            data.extend_from_slice(t.row(r));
        }
        let needs = sources.iter().any(|&(v, _)| self.needs(v));
        Ok(self.push(
            Tensor::new(&[sources.len(), w], data)?,
            needs,
            Op::GatherRows(sources.to_vec()),
        ))
    }

    /// `[b,l,h]` → `[b,l+1,h]` with `row` inserted at position 0 of every
    /// batch entry.
    pub fn prepend_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || self.shape(row) != [s[2]] {
            return Err(CgmError::shape("prepend_row", &s, self.shape(row)));
        }
        let (b, l, h) = (s[0], s[1], s[2]);
        let xv = self.value(x).data();
        let rv = self.value(row).data();
        let mut data = Vec::with_capacity(b * (l + 1) * h);
        for bi in 0..b {
            data.extend_from_slice(rv);
            data.extend_from_slice(&xv[bi * l * h..(bi + 1) * l * h]);
        }
        let needs = self.needs(x) || self.needs(row);
        Ok(self.push(
            Tensor::new(&[b, l + 1, h], data)?,
            needs,
            Op::PrependRow { x, row },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), needs, Op::Sum(x))
    }

    /// `Σ_t −log softmax(E_t · y[row_t])[class_t]` where `E_t` is a
    /// `[classes, h]` embedding and `y` a matrix whose rows have width `h`.
    pub fn tied_cross_entropy(&mut self, y: Var, items: Vec<TiedTarget>) -> Result<Var> {
        let h = self.value(y).last_dim();
        let rows = self.value(y).rows();
        let mut total = 0.0;
        let mut probs = Vec::with_capacity(items.len());
        for it in &items {
            let e = self.value(it.embedding);
            if e.rank() != 2 || e.last_dim() != h || it.row >= rows {
                return Err(CgmError::shape(
                    "tied_cross_entropy",
                    self.shape(y),
                    e.shape(),
                ));
            }
            let classes = e.shape()[0];
            if it.class >= classes {
                return Err(CgmError::contract(format!(
                    "class {} out of range for {classes} classes",
                    it.class
                )));
            }
            let logits = tied_logits(e.data(), classes, self.value(y).row(it.row));
            let mut p = vec![0.0; classes];
            softmax_into(&logits, &mut p)?;
            total -= crate::tensor::log_softmax_at(&logits, it.class);
            probs.push(p);
        }
        let needs = self.needs(y) || items.iter().any(|it| self.needs(it.embedding));
        Ok(self.push(
            Tensor::scalar(total),
            needs,
            Op::TiedCrossEntropy { y, items, probs },
        ))
    }

    /// Propagate gradients from a scalar `loss` to every recorded value that
    /// requires them. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(CgmError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        if !lt.is_finite() {
            return Err(CgmError::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.map(|g| Tensor::new(n.value.shape(), g).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[v.0].needs_grad {
                let slot =
                    grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
                f(slot);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let sa = nodes[a.0].value.shape();
                let sb = nodes[b.0].value.shape();
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                let k = sa[sa.len() - 1];
                let n = sb[sb.len() - 1];
                if sb.len() == 2 {
                    let rows = av.len() / k;
                    // da += g · bᵀ ; db += aᵀ · g
                    acc(*a, &mut |da| {
                        gemm_acc(rows, n, k, g, (n as isize, 1), bv, (1, n as isize), da)
                    });
                    acc(*b, &mut |db| {
                        gemm_acc(k, rows, n, av, (1, k as isize), g, (n as isize, 1), db)
                    });
                } else {
                    let batch = sa[0];
                    let m = sa[1];
                    acc(*a, &mut |da| {
                        for bi in 0..batch {
                            gemm_acc(
                                m,
                                n,
                                k,
                                &g[bi * m * n..(bi + 1) * m * n],
                                (n as isize, 1),
                                &bv[bi * k * n..(bi + 1) * k * n],
                                (1, n as isize),
                                &mut da[bi * m * k..(bi + 1) * m * k],
                            );
                        }
                    });
                    acc(*b, &mut |db| {
                        for bi in 0..batch {
                            gemm_acc(
                                k,
                                m,
                                n,
                                &av[bi * m * k..(bi + 1) * m * k],
                                (1, k as isize),
                                &g[bi * m * n..(bi + 1) * m * n],
                                (n as isize, 1),
                                &mut db[bi * k * n..(bi + 1) * k * n],
                            );
                        }
                    });
                }
            }
            Op::Transpose(x) => {
                let s = node.value.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                acc(*x, &mut |dx| {
                    let mut tmp = vec![0.0; r * c];
                    for (src, dst) in g.chunks(r * c).zip(dx.chunks_mut(r * c)) {
                        transpose_block(src, &mut tmp, r, c);
                        add_into(dst, &tmp);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::AddBias(x, bias) => {
                acc(*x, &mut |dx| add_into(dx, g));
                let d = nodes[bias.0].value.len();
                acc(*bias, &mut |db| {
                    for row in g.chunks(d) {
                        add_into(db, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                acc(*a, &mut |da| {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                });
            }
            Op::Scale(x, s) => {
                acc(*x, &mut |dx| {
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d += gi * s;
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = nodes[x.0].value.data();
                acc(*x, &mut |dx| {
                    for ((d, gi), &v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += gi * (normal_cdf(v) + v * normal_pdf(v));
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = nodes[gain.0].value.data();
                let d = gv.len();
                acc(*x, &mut |dx| {
                    let mut dxhat = vec![0.0; d];
                    for (r, rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..d {
                            dxhat[j] = gr[j] * gv[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xh[j];
                        }
                        let inv_d = 1.0 / d as f64;
                        for j in 0..d {
                            dx[r * d + j] += rs * (dxhat[j] - inv_d * s1 - xh[j] * inv_d * s2);
                        }
                    }
                });
                acc(*gain, &mut |dg| {
                    for (gr, xh) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * xh[j];
                        }
                    }
                });
                acc(*bias, &mut |db| {
                    for gr in g.chunks(d) {
                        add_into(db, gr);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let d = node.value.last_dim();
                acc(*x, &mut |dx| {
                    for ((yr, gr), dr) in y.chunks(d).zip(g.chunks(d)).zip(dx.chunks_mut(d)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |dx| add_into(dx, g)),
            Op::SliceLast { x, start } => {
                let len = node.value.last_dim();
                let d = nodes[x.0].value.last_dim();
                acc(*x, &mut |dx| {
                    for (dr, gr) in dx.chunks_mut(d).zip(g.chunks(len)) {
                        add_into(&mut dr[*start..start + len], gr);
                    }
                });
            }
            Op::ConcatLast(xs) => {
                let total = node.value.last_dim();
                let mut offset = 0;
                for x in xs {
                    let w = nodes[x.0].value.last_dim();
                    acc(*x, &mut |dx| {
                        for (dr, gr) in dx.chunks_mut(w).zip(g.chunks(total)) {
                            add_into(dr, &gr[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::GatherRows(sources) => {
                let w = node.value.last_dim();
                for (i, &(v, r)) in sources.iter().enumerate() {
                    acc(v, &mut |dv| {
                        add_into(&mut dv[r * w..(r + 1) * w], &g[i * w..(i + 1) * w])
                    });
                }
            }
            Op::PrependRow { x, row } => {
                let s = node.value.shape();
                let (b, l1, h) = (s[0], s[1], s[2]);
                acc(*x, &mut |dx| {
                    for bi in 0..b {
                        add_into(
                            &mut dx[bi * (l1 - 1) * h..(bi + 1) * (l1 - 1) * h],
                            &g[(bi * l1 + 1) * h..(bi + 1) * l1 * h],
                        );
                    }
                });
                acc(*row, &mut |dr| {
                    for bi in 0..b {
                        add_into(dr, &g[bi * l1 * h..(bi * l1 + 1) * h]);
                    }
                });
            }
            Op::Sum(x) => {
                let g0 = g[0];
                acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g0));
            }
            Op::TiedCrossEntropy { y, items, probs } => {
                let g0 = g[0];
                let yv = nodes[y.0].value.data();
                let h = nodes[y.0].value.last_dim();
                for (it, p) in items.iter().zip(probs) {
                    let mut dlogits: Vec<f64> = p.iter().map(|pi| g0 * pi).collect();
                    dlogits[it.class] -= g0;
                    let yrow = &yv[it.row * h..(it.row + 1) * h];
                    let ev = nodes[it.embedding.0].value.data();
                    acc(*y, &mut |dy| {
                        let dyr = &mut dy[it.row * h..(it.row + 1) * h];
                        for (c, dl) in dlogits.iter().enumerate() {
                            for (d, e) in dyr.iter_mut().zip(&ev[c * h..(c + 1) * h]) {
                                *d += dl * e;
                            }
                        }
                    });
                    acc(it.embedding, &mut |de| {
                        for (c, dl) in dlogits.iter().enumerate() {
                            for (d, yy) in de[c * h..(c + 1) * h].iter_mut().zip(yrow) {
                                *d += dl * yy;
                            }
                        }
                    });
                }
            }
        }
    }
}

/// Logits `E · y` for a row-major `[classes, h]` embedding.
pub fn tied_logits(embedding: &[f64], classes: usize, y: &[f64]) -> Vec<f64> {
    let h = y.len();
    (0..classes)
        .map(|c| {
            embedding[c * h..(c + 1) * h]
                .iter()
                .zip(y)
                .map(|(e, v)| e * v)
                .sum()
        })
        .collect()
}

fn transpose_block(src: &[f64], dst: &mut [f64], r: usize, c: usize) {
    for i in 0..r {
        for j in 0..c {
            dst[j * r + i] = src[i * c + j];
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
