//! Tape-based reverse-mode differentiation over dense row-major tensors.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs for the backward pass. [`Graph::backward`] walks the tape in reverse
//! and only visits nodes that depend on a leaf created with
//! `requires_grad = true`, so frozen weights cost no gradient work.

use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Scalar, Tensor};
use super::NnError;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    AddRow {
        x: Var,
        row: Var,
    },
    Scale(Var, T),
    LayerNorm {
        x: Var,
        scale: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
        shift: Var,
    },
    Gelu(Var),
    Silu(Var),
    Softmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        score_bias: Option<Var>,
        value_bias: Option<Var>,
        heads: usize,
        scale: T,
        probs: Vec<T>,
    },
    RelativeBias {
        q: Var,
        k: Var,
        eq: Var,
        ek: Var,
        codes: Vec<usize>,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
    },
    Project {
        x: Var,
        weights: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recording of one forward computation.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `var`, or `None` when `var` does
    /// not require a gradient or does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::of(0.044715) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh_fast())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let th = (c * (x + a * x * x * x)).tanh_fast();
    T::of(0.5) * (T::one() + th) + T::of(0.5) * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * a * x * x)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp_fast())
}

/// Numerically stable in-place softmax of one row.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    for v in row.iter_mut() {
        *v = (*v - max).exp_fast();
    }
    let mut sum = T::zero();
    for v in row.iter() {
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], name: &'static str) -> Result<Var, NnError> {
        if !value.all_finite() {
            return Err(NnError::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Adds an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// `x · w + b` over the last axis of `x`; `w` is `in x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (m, fin) = xv.rows_cols();
        if wv.shape().len() != 2 || wv.shape()[0] != fin || bv.len() != wv.shape()[1] {
            return Err(NnError::ShapeMismatch(format!(
                "linear: x {:?}, w {:?}, b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let fout = wv.shape()[1];
        let mut out = Vec::with_capacity(m * fout);
        for _ in 0..m {
            out.extend_from_slice(bv.data());
        }
        matmul_acc(xv.data(), wv.data(), &mut out, m, fin, fout);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("linear input has rank >= 1") = fout;
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Linear { x, w, b }, &[x, w, b], "linear")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NnError::ShapeMismatch(format!("add: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| *x + *y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(value, Op::Add(a, b), &[a, b], "add")
    }

    /// Adds `row` (length = last dim of `x`) to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NnError> {
        let (xv, rv) = (self.value(x), self.value(row));
        let (_, cols) = xv.rows_cols();
        if rv.len() != cols {
            return Err(NnError::ShapeMismatch(format!(
                "add_row: x {:?}, row {:?}",
                xv.shape(),
                rv.shape()
            )));
        }
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| *v + rv.data()[i % cols])
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(value, Op::AddRow { x, row }, &[x, row], "add_row")
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var, NnError> {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| *v * c).collect())?;
        self.push(value, Op::Scale(x, c), &[x], "scale")
    }

    /// Row-wise normalization to zero mean and unit variance, then `* scale + shift`.
    pub fn layer_norm(&mut self, x: Var, scale: Var, shift: Var, eps: T) -> Result<Var, NnError> {
        let (xv, sv, bv) = (self.value(x), self.value(scale), self.value(shift));
        let (m, f) = xv.rows_cols();
        if sv.len() != f || bv.len() != f {
            return Err(NnError::ShapeMismatch(format!(
                "layer_norm: x {:?}, scale {:?}, shift {:?}",
                xv.shape(),
                sv.shape(),
                bv.shape()
            )));
        }
        let inv_f = T::one() / T::of(f as f64);
        let mut xhat = Vec::with_capacity(m * f);
        let mut rstd = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * f);
        for row in xv.data().chunks(f) {
            let mean = row.iter().copied().sum::<T>() * inv_f;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_f;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let h = (*v - mean) * r;
                xhat.push(h);
                out.push(h * sv.data()[j] + bv.data()[j]);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            value,
            Op::LayerNorm {
                x,
                scale,
                xhat,
                rstd,
                shift,
            },
            &[x, scale, shift],
            "layer_norm",
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| gelu(*v)).collect())?;
        self.push(value, Op::Gelu(x), &[x], "gelu")
    }

    pub fn silu(&mut self, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| *v * sigmoid(*v)).collect())?;
        self.push(value, Op::Silu(x), &[x], "silu")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        let (_, cols) = xv.rows_cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(cols.max(1)) {
            softmax_in_place(row);
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(value, Op::Softmax(x), &[x], "softmax")
    }

    /// Multi-head scaled dot-product attention with optional per-pair biases.
    ///
    /// For each head, `out_i = Σ_j softmax_j(scale · (q_i·k_j + score_bias_ij)) · (v_j + value_bias_ij)`.
    /// Biases are only supported for a single head, where `score_bias` is
    /// `M x N` and `value_bias` is `M x N x F`.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        scale: T,
        score_bias: Option<Var>,
        value_bias: Option<Var>,
    ) -> Result<Var, NnError> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (m, f) = qv.rows_cols();
        let (n, fk) = kv.rows_cols();
        let (nv, fv) = vv.rows_cols();
        if fk != f || fv != f || nv != n || heads == 0 || f % heads != 0 {
            return Err(NnError::ShapeMismatch(format!(
                "attention: q {:?}, k {:?}, v {:?}, heads {heads}",
                qv.shape(),
                kv.shape(),
                vv.shape()
            )));
        }
        if heads != 1 && (score_bias.is_some() || value_bias.is_some()) {
            return Err(NnError::ShapeMismatch("attention biases need a single head".into()));
        }
        if let Some(b) = score_bias {
            if self.value(b).len() != m * n {
                return Err(NnError::ShapeMismatch(format!(
                    "score bias {:?} for {m} x {n} scores",
                    self.value(b).shape()
                )));
            }
        }
        if let Some(b) = value_bias {
            if self.value(b).len() != m * n * f {
                return Err(NnError::ShapeMismatch(format!(
                    "value bias {:?} for {m} x {n} x {f}",
                    self.value(b).shape()
                )));
            }
        }
        let dh = f / heads;
        let mut probs = vec![T::zero(); heads * m * n];
        let mut out = vec![T::zero(); m * f];
        for h in 0..heads {
            let off = h * dh;
            let p = &mut probs[h * m * n..(h + 1) * m * n];
            T::gemm(m, dh, n, scale, &qv.data()[off..], f, 1, &kv.data()[off..], 1, f, T::zero(), p, n, 1);
            if let Some(b) = score_bias {
                for (s, bias) in p.iter_mut().zip(self.value(b).data()) {
                    *s += scale * *bias;
                }
            }
            for row in p.chunks_mut(n) {
                softmax_in_place(row);
            }
            T::gemm(m, n, dh, T::one(), p, n, 1, &vv.data()[off..], f, 1, T::zero(), &mut out[off..], f, 1);
        }
        if let Some(b) = value_bias {
            let bias = self.value(b).data();
            for i in 0..m {
                let orow = &mut out[i * f..(i + 1) * f];
                for j in 0..n {
                    let w = probs[i * n + j];
                    let brow = &bias[(i * n + j) * f..(i * n + j + 1) * f];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o += w * *bv;
                    }
                }
            }
        }
        let mut shape = qv.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = f;
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![q, k, v];
        inputs.extend(score_bias);
        inputs.extend(value_bias);
        self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                score_bias,
                value_bias,
                heads,
                scale,
                probs,
            },
            &inputs,
            "attention",
        )
    }

    /// Pairwise bias `out_ij = q_i · eq[c_ij] + k_j · ek[c_ij]` for codes
    /// `c` (row-major `M x N`).
    pub fn relative_bias(&mut self, q: Var, k: Var, eq: Var, ek: Var, codes: &[usize]) -> Result<Var, NnError> {
        let (m, f) = self.value(q).rows_cols();
        let (n, fk) = self.value(k).rows_cols();
        let (kq, fq) = self.value(eq).rows_cols();
        let (kk, fe) = self.value(ek).rows_cols();
        if fk != f || fq != f || fe != f || kq != kk || codes.len() != m * n {
            return Err(NnError::ShapeMismatch(format!(
                "relative_bias: q {m}x{f}, k {n}x{fk}, tables {kq}x{fq}/{kk}x{fe}, {} codes",
                codes.len()
            )));
        }
        if let Some(&bad) = codes.iter().find(|&&c| c >= kq) {
            return Err(NnError::IndexOutOfRange { index: bad, len: kq });
        }
        let mut qe = vec![T::zero(); m * kq];
        matmul_nt_acc(self.value(q).data(), self.value(eq).data(), &mut qe, m, f, kq);
        let mut ke = vec![T::zero(); n * kq];
        matmul_nt_acc(self.value(k).data(), self.value(ek).data(), &mut ke, n, f, kq);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                let c = codes[i * n + j];
                out.push(qe[i * kq + c] + ke[j * kq + c]);
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        self.push(
            value,
            Op::RelativeBias {
                q,
                k,
                eq,
                ek,
                codes: codes.to_vec(),
            },
            &[q, k, eq, ek],
            "relative_bias",
        )
    }

    /// Gathers rows of `table` (`K x F`); the output has shape `shape ++ [F]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize], shape: &[usize]) -> Result<Var, NnError> {
        let tv = self.value(table);
        let (k, f) = tv.rows_cols();
        if shape.iter().product::<usize>() != indices.len() {
            return Err(NnError::ShapeMismatch(format!(
                "embedding: {} indices for shape {shape:?}",
                indices.len()
            )));
        }
        let mut out = Vec::with_capacity(indices.len() * f);
        for &i in indices {
            if i >= k {
                return Err(NnError::IndexOutOfRange { index: i, len: k });
            }
            out.extend_from_slice(&tv.data()[i * f..(i + 1) * f]);
        }
        let mut full = shape.to_vec();
        full.push(f);
        let value = Tensor::new(full, out)?;
        self.push(
            value,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            &[table],
            "embedding",
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var, NnError> {
        let pv = self.value(pred);
        if pv.len() != target.len() || pv.is_empty() {
            return Err(NnError::ShapeMismatch(format!(
                "mse: pred {:?}, target {:?}",
                pv.shape(),
                target.shape()
            )));
        }
        let n = T::of(pv.len() as f64);
        let loss = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (*p - *t) * (*p - *t))
            .sum::<T>()
            / n;
        let value = Tensor::new(vec![], vec![loss])?;
        self.push(
            value,
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
            &[pred],
            "mse",
        )
    }

    /// Scalar `Σ w_i x_i` against constant weights.
    pub fn project(&mut self, x: Var, weights: &[T]) -> Result<Var, NnError> {
        let xv = self.value(x);
        if xv.len() != weights.len() {
            return Err(NnError::ShapeMismatch(format!(
                "project: {} values, {} weights",
                xv.len(),
                weights.len()
            )));
        }
        let s = xv.data().iter().zip(weights).map(|(a, b)| *a * *b).sum::<T>();
        let value = Tensor::new(vec![], vec![s])?;
        self.push(
            value,
            Op::Project {
                x,
                weights: weights.to_vec(),
            },
            &[x],
            "project",
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NnError> {
        if self.value(loss).len() != 1 {
            return Err(NnError::ShapeMismatch(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            for (var, contrib) in self.local_grads(node, &dy) {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(g) => {
                        for (a, c) in g.iter_mut().zip(&contrib) {
                            *a += *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(dy);
            }
        }
        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient);
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, node: &Node<T>, dy: &[T]) -> Vec<(Var, Vec<T>)> {
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (m, fin) = xv.rows_cols();
                let fout = wv.shape()[1];
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); m * fin];
                    matmul_nt_acc(dy, wv.data(), &mut dx, m, fout, fin);
                    out.push((*x, dx));
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); fin * fout];
                    matmul_tn_acc(xv.data(), dy, &mut dw, fin, m, fout);
                    out.push((*w, dw));
                }
                if self.wants(*b) {
                    out.push((*b, column_sums(dy, fout)));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, dy.to_vec()));
                out.push((*b, dy.to_vec()));
            }
            Op::AddRow { x, row } => {
                out.push((*x, dy.to_vec()));
                if self.wants(*row) {
                    out.push((*row, column_sums(dy, self.value(*row).len())));
                }
            }
            Op::Scale(x, c) => out.push((*x, dy.iter().map(|g| *g * *c).collect())),
            Op::LayerNorm {
                x,
                scale,
                xhat,
                rstd,
                shift,
            } => {
                let sv = self.value(*scale).data();
                let f = sv.len();
                if self.wants(*x) {
                    let inv_f = T::one() / T::of(f as f64);
                    let mut dx = Vec::with_capacity(dy.len());
                    for ((g, h), r) in dy.chunks(f).zip(xhat.chunks(f)).zip(rstd) {
                        let dh: Vec<T> = g.iter().zip(sv).map(|(a, s)| *a * *s).collect();
                        let mean_dh = dh.iter().copied().sum::<T>() * inv_f;
                        let mean_dhh = dh.iter().zip(h).map(|(a, b)| *a * *b).sum::<T>() * inv_f;
                        dx.extend(dh.iter().zip(h).map(|(a, b)| *r * (*a - mean_dh - *b * mean_dhh)));
                    }
                    out.push((*x, dx));
                }
                if self.wants(*scale) {
                    let mut ds = vec![T::zero(); f];
                    for (g, h) in dy.chunks(f).zip(xhat.chunks(f)) {
                        for j in 0..f {
                            ds[j] += g[j] * h[j];
                        }
                    }
                    out.push((*scale, ds));
                }
                if self.wants(*shift) {
                    out.push((*shift, column_sums(dy, f)));
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                out.push((*x, dy.iter().zip(xv).map(|(g, v)| *g * gelu_grad(*v)).collect()));
            }
            Op::Silu(x) => {
                let xv = self.value(*x).data();
                out.push((
                    *x,
                    dy.iter()
                        .zip(xv)
                        .map(|(g, v)| {
                            let s = sigmoid(*v);
                            *g * s * (T::one() + *v * (T::one() - s))
                        })
                        .collect(),
                ));
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let (_, cols) = node.value.rows_cols();
                let mut dx = Vec::with_capacity(dy.len());
                for (g, p) in dy.chunks(cols).zip(y.chunks(cols)) {
                    let dot = g.iter().zip(p).map(|(a, b)| *a * *b).sum::<T>();
                    dx.extend(g.iter().zip(p).map(|(a, b)| *b * (*a - dot)));
                }
                out.push((*x, dx));
            }
            Op::Attention {
                q,
                k,
                v,
                score_bias,
                value_bias,
                heads,
                scale,
                probs,
            } => self.attention_grads(&mut out, dy, (*q, *k, *v), *score_bias, *value_bias, *heads, *scale, probs),
            Op::RelativeBias { q, k, eq, ek, codes } => {
                let (m, f) = self.value(*q).rows_cols();
                let (n, _) = self.value(*k).rows_cols();
                let (kq, _) = self.value(*eq).rows_cols();
                let mut dqe = vec![T::zero(); m * kq];
                let mut dke = vec![T::zero(); n * kq];
                for i in 0..m {
                    for j in 0..n {
                        let c = codes[i * n + j];
                        dqe[i * kq + c] += dy[i * n + j];
                        dke[j * kq + c] += dy[i * n + j];
                    }
                }
                if self.wants(*q) {
                    let mut dq = vec![T::zero(); m * f];
                    matmul_acc(&dqe, self.value(*eq).data(), &mut dq, m, kq, f);
                    out.push((*q, dq));
                }
                if self.wants(*eq) {
                    let mut deq = vec![T::zero(); kq * f];
                    matmul_tn_acc(&dqe, self.value(*q).data(), &mut deq, kq, m, f);
                    out.push((*eq, deq));
                }
                if self.wants(*k) {
                    let mut dk = vec![T::zero(); n * f];
                    matmul_acc(&dke, self.value(*ek).data(), &mut dk, n, kq, f);
                    out.push((*k, dk));
                }
                if self.wants(*ek) {
                    let mut dek = vec![T::zero(); kq * f];
                    matmul_tn_acc(&dke, self.value(*k).data(), &mut dek, kq, n, f);
                    out.push((*ek, dek));
                }
            }
            Op::Embedding { table, indices } => {
                let (k, f) = self.value(*table).rows_cols();
                let mut dt = vec![T::zero(); k * f];
                for (g, &i) in dy.chunks(f).zip(indices) {
                    for (a, b) in dt[i * f..(i + 1) * f].iter_mut().zip(g) {
                        *a += *b;
                    }
                }
                out.push((*table, dt));
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred).data();
                let c = T::of(2.0) * dy[0] / T::of(pv.len() as f64);
                out.push((*pred, pv.iter().zip(target).map(|(p, t)| c * (*p - *t)).collect()));
            }
            Op::Project { x, weights } => {
                out.push((*x, weights.iter().map(|w| *w * dy[0]).collect()));
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_grads(
        &self,
        out: &mut Vec<(Var, Vec<T>)>,
        dy: &[T],
        (q, k, v): (Var, Var, Var),
        score_bias: Option<Var>,
        value_bias: Option<Var>,
        heads: usize,
        scale: T,
        probs: &[T],
    ) {
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let (m, f) = self.value(q).rows_cols();
        let (n, _) = self.value(k).rows_cols();
        let dh = f / heads;
        let mut dq = vec![T::zero(); m * f];
        let mut dk = vec![T::zero(); n * f];
        let mut dv = vec![T::zero(); n * f];
        let mut dbias = score_bias.map(|_| vec![T::zero(); m * n]);
        let mut dvbias = value_bias.map(|_| vec![T::zero(); m * n * f]);
        let mut dp = vec![T::zero(); m * n];
        for h in 0..heads {
            let off = h * dh;
            let p = &probs[h * m * n..(h + 1) * m * n];
            T::gemm(m, dh, n, T::one(), &dy[off..], f, 1, &vv[off..], 1, f, T::zero(), &mut dp, n, 1);
            if let Some(b) = value_bias {
                let bias = self.value(b).data();
                let dvb = dvbias.as_mut().expect("allocated with value bias");
                for i in 0..m {
                    let g = &dy[i * f..(i + 1) * f];
                    for j in 0..n {
                        let base = (i * n + j) * f;
                        let brow = &bias[base..base + f];
                        dp[i * n + j] += g.iter().zip(brow).map(|(a, b)| *a * *b).sum::<T>();
                        let w = p[i * n + j];
                        for (d, gv) in dvb[base..base + f].iter_mut().zip(g) {
                            *d += w * *gv;
                        }
                    }
                }
            }
            // dp becomes the gradient of the pre-scale logits.
            for (gr, pr) in dp.chunks_mut(n).zip(p.chunks(n)) {
                let dot = gr.iter().zip(pr).map(|(a, b)| *a * *b).sum::<T>();
                for (g, pv) in gr.iter_mut().zip(pr) {
                    *g = scale * *pv * (*g - dot);
                }
            }
            T::gemm(m, n, dh, T::one(), &dp, n, 1, &kv[off..], f, 1, T::one(), &mut dq[off..], f, 1);
            T::gemm(n, m, dh, T::one(), &dp, 1, n, &qv[off..], f, 1, T::one(), &mut dk[off..], f, 1);
            T::gemm(n, m, dh, T::one(), p, 1, n, &dy[off..], f, 1, T::one(), &mut dv[off..], f, 1);
            if let Some(db) = dbias.as_mut() {
                for (a, b) in db.iter_mut().zip(&dp) {
                    *a += *b;
                }
            }
        }
        out.push((q, dq));
        out.push((k, dk));
        out.push((v, dv));
        if let (Some(b), Some(db)) = (score_bias, dbias) {
            out.push((b, db));
        }
        if let (Some(b), Some(db)) = (value_bias, dvbias) {
            out.push((b, db));
        }
    }
}

fn column_sums<T: Scalar>(dy: &[T], cols: usize) -> Vec<T> {
    let mut s = vec![T::zero(); cols];
    for row in dy.chunks(cols) {
        for (a, b) in s.iter_mut().zip(row) {
            *a += *b;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity_and_zero_input() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2], &[0.0, 0.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let z = g.constant(Tensor::zeros(&[3, 2]));
        let b = g.constant(t(&[2], &[0.5, -1.5]));
        let y = g.linear(z, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -1.5, 0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn linear_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(&[3, 4], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[4, 2], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[2], 1.0, &mut rng);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.linear(xv, wv, bv).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = b.data()[j];
                for l in 0..4 {
                    acc += x.data()[i * 4 + l] * w.data()[l * 2 + j];
                }
                assert!((g.value(y).data()[i * 2 + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_shape_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let w = g.constant(Tensor::zeros(&[4, 2]));
        let b = g.constant(Tensor::zeros(&[2]));
        assert!(matches!(g.linear(x, w, b), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn embedding_repeated_index_accumulates() {
        let mut g = Graph::new();
        let table = g.leaf(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        let e = g.embedding(table, &[0], &[1]).unwrap();
        assert_eq!(g.value(e).data(), &[1.0, 2.0]);
        let e = g.embedding(table, &[2, 2], &[2]).unwrap();
        let loss = g.project(e, &[1.0, 10.0, 100.0, 1000.0]).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(table).unwrap(), &[0.0, 0.0, 0.0, 0.0, 101.0, 1010.0]);
        assert!(matches!(g.embedding(table, &[3], &[1]), Err(NnError::IndexOutOfRange { .. })));
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 4], &[2.0; 4]), true);
        let s = g.constant(Tensor::full(&[4], 1.0));
        let b = g.constant(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, s, b, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
        let loss = g.project(y, &[0.3, -0.1, 0.7, 0.2]).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[0.7, 0.7, 0.7, 0.0, 3f64.ln(), f64::NEG_INFINITY.max(-50.0)]));
        let y = g.softmax_rows(x).unwrap();
        for v in &g.value(y).data()[..3] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.constant(t(&[1, 2], &[0.0, 3f64.ln()]));
        let y = g.softmax_rows(x).unwrap();
        assert!((g.value(y).data()[0] - 0.25).abs() < 1e-15);
        assert!((g.value(y).data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn attention_single_key_returns_value_plus_bias() {
        let mut g = Graph::new();
        let q = g.constant(t(&[1, 2], &[3.0, -1.0]));
        let k = g.constant(t(&[1, 2], &[0.5, 9.0]));
        let v = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let sb = g.constant(t(&[1, 1], &[4.0]));
        let vb = g.constant(t(&[1, 1, 2], &[0.25, -0.5]));
        let y = g.attention(q, k, v, 1, 0.5f64.sqrt(), Some(sb), Some(vb)).unwrap();
        assert_eq!(g.value(y).data(), &[1.25, 1.5]);
    }

    #[test]
    fn non_finite_trips_an_error() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1], &[f64::MAX]));
        assert!(matches!(g.scale(x, 10.0), Err(NnError::NonFinite("scale"))));
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = g.leaf(t(&[2, 1], &[1.0, 1.0]), false);
        let b = g.leaf(t(&[1], &[0.0]), true);
        let y = g.linear(x, w, b).unwrap();
        let loss = g.project(y, &[1.0]).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(w).is_none());
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(b).unwrap(), &[1.0]);
    }
}
