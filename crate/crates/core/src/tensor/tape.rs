//! Wengert-list reverse-mode differentiation.
//!
//! Ops are appended in execution order, so the node list is already a
//! topological order; `backward` walks it once in reverse.

use super::{Result, Scalar, Tensor, TensorError};

/// Arguments of `exp` are clamped to `[-EXP_CLAMP, EXP_CLAMP]` in forward and backward.
pub const EXP_CLAMP: f64 = 50.0;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    Exp(Var),
    Pow(Var, Tensor<T>),
    Recip(Var),
    ClampMin(Var, T),
    Relu(Var),
    SumAll(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    MaxAxis(Var, usize, Vec<usize>),
    Softmax(Var, usize),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Reshape(Var),
    Mask(Var, Tensor<T>),
    NormalizeRows(Var, T),
}

#[derive(Debug, Clone)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
#[derive(Debug, Clone, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// (outer, axis length, inner) decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::Contract(format!(
            "{op}: axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(TensorError::Shape {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

fn clamp_exp_arg<T: Scalar>(x: T) -> (T, bool) {
    let limit = T::from_f64_lossy(EXP_CLAMP);
    if x > limit {
        (limit, true)
    } else if x < -limit {
        (-limit, true)
    } else {
        (x, false)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Trainable leaf; `backward` reports its gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            other => Err(TensorError::Contract(format!(
                "{op}: expected a matrix, got shape {other:?}"
            ))),
        }
    }

    /// `a(m×k) · b(k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// `a(m×k) · b(n×k)ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul_nt", a)?;
        let (n, k2) = self.matrix_dims("matmul_nt", b)?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul_nt",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            1,
            k as isize,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul_nt", value, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("transpose", a)?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out)?;
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    fn zip_with(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        same_shape(op, self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let src = self.value(a);
        Tensor::new(src.shape().to_vec(), src.data().iter().map(|x| f(*x)).collect())
            .expect("map preserves length")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("sub", a, b, |x, y| x - y)?;
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("add_row", a)?;
        if self.value(row).numel() != n {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let r = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = out[i * n + j] + r[j];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        self.push("add_row", value, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("div", a, b, |x, y| x / y)?;
        self.push("div", value, Op::Div(a, b), &[a, b])
    }

    /// Multiplies every entry of `a` by the single-element tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(TensorError::Shape {
                op: "mul_scalar",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(s).to_vec(),
            });
        }
        let k = self.value(s).item();
        let value = self.map(a, |x| x * k);
        self.push("mul_scalar", value, Op::MulScalar(a, s), &[a, s])
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let value = self.map(a, |x| x * k);
        self.push("scale", value, Op::Scale(a, k), &[a])
    }

    pub fn add_const(&mut self, a: Var, k: T) -> Result<Var> {
        let value = self.map(a, |x| x + k);
        self.push("add_const", value, Op::AddConst(a), &[a])
    }

    /// `exp(clamp(x, -50, 50))`.
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, |x| clamp_exp_arg(x).0.exp());
        self.push("exp", value, Op::Exp(a), &[a])
    }

    /// Elementwise power. `exponent` has one entry per element of `a`, or a
    /// single entry broadcast to all of them.
    pub fn pow(&mut self, a: Var, exponent: Tensor<T>) -> Result<Var> {
        let src = self.value(a);
        let n = src.numel();
        if exponent.numel() != n && exponent.numel() != 1 {
            return Err(TensorError::Shape {
                op: "pow",
                lhs: src.shape().to_vec(),
                rhs: exponent.shape().to_vec(),
            });
        }
        let exps = exponent.data();
        let mut out = Vec::with_capacity(n);
        for (i, &x) in src.data().iter().enumerate() {
            let p = exps[if exps.len() == 1 { 0 } else { i }];
            if p.fract() != T::zero() && x <= T::zero() {
                return Err(TensorError::Domain {
                    op: "pow",
                    detail: format!("base {x:?} with non-integer exponent {p:?}"),
                });
            }
            out.push(x.powf(p));
        }
        let value = Tensor::new(src.shape().to_vec(), out)?;
        self.push("pow", value, Op::Pow(a, exponent), &[a])
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, |x| T::one() / x);
        self.push("recip", value, Op::Recip(a), &[a])
    }

    pub fn clamp_min(&mut self, a: Var, lo: T) -> Result<Var> {
        let value = self.map(a, |x| if x < lo { lo } else { x });
        self.push("clamp_min", value, Op::ClampMin(a, lo), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, |x| if x > T::zero() { x } else { T::zero() });
        self.push("relu", value, Op::Relu(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    fn reduce_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<(Vec<usize>, usize, usize, usize)> {
        let shape = self.shape(a);
        check_axis(op, shape, axis)?;
        let (outer, len, inner) = split_axis(shape, axis);
        let mut out_shape: Vec<usize> = shape.to_vec();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok((out_shape, outer, len, inner))
    }

    /// Sum over `axis`; the axis is removed from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, outer, len, inner) = self.reduce_axis("sum_axis", a, axis)?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + src[(o * len + l) * inner + i];
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push("sum_axis", value, Op::SumAxis(a, axis), &[a])
    }

    /// Mean over `axis`. Average-pooling over graph nodes is `mean_axis(x, 0)`
    /// for a nodes×channels matrix.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, outer, len, inner) = self.reduce_axis("mean_axis", a, axis)?;
        if len == 0 {
            return Err(TensorError::Contract("mean over an empty axis".into()));
        }
        let src = self.value(a).data();
        let inv = T::one() / T::from_usize(len).unwrap();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + src[(o * len + l) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        let value = Tensor::new(shape, out)?;
        self.push("mean_axis", value, Op::MeanAxis(a, axis), &[a])
    }

    /// Max over `axis`; the gradient flows to the first maximal entry.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, outer, len, inner) = self.reduce_axis("max_axis", a, axis)?;
        if len == 0 {
            return Err(TensorError::Contract("max over an empty axis".into()));
        }
        let src = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = src[o * len * inner + i];
                let mut best_l = 0;
                for l in 1..len {
                    let v = src[(o * len + l) * inner + i];
                    if v > best {
                        best = v;
                        best_l = l;
                    }
                }
                out[o * inner + i] = best;
                arg[o * inner + i] = best_l;
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push("max_axis", value, Op::MaxAxis(a, axis, arg), &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("softmax", &shape, axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| src[idx(l)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for l in 0..len {
                    let e = (src[idx(l)] - max).exp();
                    out[idx(l)] = e;
                    total = total + e;
                }
                for l in 0..len {
                    out[idx(l)] = out[idx(l)] / total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push("softmax", value, Op::Softmax(a, axis), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis];
                let src = self.value(*p).data();
                out.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let value = Tensor::new(out_shape, out)?;
        self.push("concat", value, Op::Concat(parts.to_vec(), axis), parts)
    }

    /// `len` consecutive entries along `axis`, starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("slice", &shape, axis)?;
        if start + len > shape[axis] {
            return Err(TensorError::Contract(format!(
                "slice {start}..{} exceeds axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, out)?;
        self.push("slice", value, Op::Slice(a, axis, start), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    /// Elementwise product with a constant mask (dropout, adjacency support).
    pub fn apply_mask(&mut self, a: Var, mask: Tensor<T>) -> Result<Var> {
        same_shape("apply_mask", self.shape(a), mask.shape())?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(mask.data())
            .map(|(x, m)| *x * *m)
            .collect();
        let value = Tensor::new(mask.shape().to_vec(), data)?;
        self.push("apply_mask", value, Op::Mask(a, mask), &[a])
    }

    /// Divides each row by `sqrt(|row|² + eps²)`, which bounds the gradient
    /// by `1/eps` for short rows. All-zero rows stay zero.
    pub fn normalize_rows(&mut self, a: Var, eps: T) -> Result<Var> {
        let (r, c) = self.matrix_dims("normalize_rows", a)?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let norm = smoothed_norm(row, eps);
            if norm > T::zero() {
                for j in 0..c {
                    out[i * c + j] = row[j] / norm;
                }
            }
        }
        let value = Tensor::new(vec![r, c], out)?;
        self.push("normalize_rows", value, Op::NormalizeRows(a, eps), &[a])
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let acc = |grads: &mut [Option<Vec<T>>], v: Var, f: &dyn Fn(&mut [T])| {
            let n = self.nodes[v.0].value.numel();
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().unwrap();
                let n = self.nodes[b.0].value.shape()[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.wants(*a) {
                    acc(grads, *a, &|da| {
                        T::gemm(m, n, k, T::one(), g, n as isize, 1, bv, 1, n as isize, T::one(), da, k as isize, 1)
                    });
                }
                if self.wants(*b) {
                    acc(grads, *b, &|db| {
                        T::gemm(k, m, n, T::one(), av, 1, k as isize, g, n as isize, 1, T::one(), db, n as isize, 1)
                    });
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().unwrap();
                let n = self.nodes[b.0].value.shape()[0];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.wants(*a) {
                    acc(grads, *a, &|da| {
                        T::gemm(m, n, k, T::one(), g, n as isize, 1, bv, k as isize, 1, T::one(), da, k as isize, 1)
                    });
                }
                if self.wants(*b) {
                    acc(grads, *b, &|db| {
                        T::gemm(n, m, k, T::one(), g, 1, n as isize, av, k as isize, 1, T::one(), db, k as isize, 1)
                    });
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.nodes[a.0].value.dims2().unwrap();
                acc(grads, *a, &|da| {
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = da[i * c + j] + g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        acc(grads, *v, &|d| add_into(d, g));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(grads, *a, &|d| add_into(d, g));
                }
                if self.wants(*b) {
                    acc(grads, *b, &|d| d.iter_mut().zip(g).for_each(|(x, y)| *x = *x - *y));
                }
            }
            Op::AddRow(a, row) => {
                let n = self.value(*row).numel();
                if self.wants(*a) {
                    acc(grads, *a, &|d| add_into(d, g));
                }
                if self.wants(*row) {
                    acc(grads, *row, &|d| {
                        for (i, gv) in g.iter().enumerate() {
                            d[i % n] = d[i % n] + *gv;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.wants(*a) {
                    acc(grads, *a, &|d| {
                        for i in 0..d.len() {
                            d[i] = d[i] + g[i] * bv[i];
                        }
                    });
                }
                if self.wants(*b) {
                    acc(grads, *b, &|d| {
                        for i in 0..d.len() {
                            d[i] = d[i] + g[i] * av[i];
                        }
                    });
                }
            }
            Op::Div(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.wants(*a) {
                    acc(grads, *a, &|d| {
                        for i in 0..d.len() {
                            d[i] = d[i] + g[i] / bv[i];
                        }
                    });
                }
                if self.wants(*b) {
                    acc(grads, *b, &|d| {
                        for i in 0..d.len() {
                            d[i] = d[i] - g[i] * av[i] / (bv[i] * bv[i]);
                        }
                    });
                }
            }
            Op::MulScalar(a, s) => {
                let av = self.value(*a).data();
                let k = self.value(*s).item();
                if self.wants(*a) {
                    acc(grads, *a, &|d| {
                        for i in 0..d.len() {
                            d[i] = d[i] + g[i] * k;
                        }
                    });
                }
                if self.wants(*s) {
                    let dot: T = g.iter().zip(av).map(|(x, y)| *x * *y).sum();
                    acc(grads, *s, &|d| d[0] = d[0] + dot);
                }
            }
            Op::Scale(a, k) => {
                acc(grads, *a, &|d| {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[i] * *k;
                    }
                });
            }
            Op::AddConst(a) => acc(grads, *a, &|d| add_into(d, g)),
            Op::Exp(a) => {
                let x = self.value(*a).data();
                acc(grads, *a, &|d| {
                    for i in 0..d.len() {
                        if !clamp_exp_arg(x[i]).1 {
                            d[i] = d[i] + g[i] * out[i];
                        }
                    }
                });
            }
            Op::Pow(a, exponent) => {
                let x = self.value(*a).data();
                let exps = exponent.data();
                acc(grads, *a, &|d| {
                    for i in 0..d.len() {
                        let p = exps[if exps.len() == 1 { 0 } else { i }];
                        if p != T::zero() {
                            d[i] = d[i] + g[i] * p * x[i].powf(p - T::one());
                        }
                    }
                });
            }
            Op::Recip(a) => acc(grads, *a, &|d| {
                for i in 0..d.len() {
                    d[i] = d[i] - g[i] * out[i] * out[i];
                }
            }),
            Op::ClampMin(a, lo) => {
                let x = self.value(*a).data();
                acc(grads, *a, &|d| {
                    for i in 0..d.len() {
                        if x[i] >= *lo {
                            d[i] = d[i] + g[i];
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(grads, *a, &|d| {
                    for i in 0..d.len() {
                        if x[i] > T::zero() {
                            d[i] = d[i] + g[i];
                        }
                    }
                });
            }
            Op::SumAll(a) => acc(grads, *a, &|d| d.iter_mut().for_each(|x| *x = *x + g[0])),
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let shape = self.shape(*a);
                let (outer, len, inner) = split_axis(shape, *axis);
                let scale = match node.op {
                    Op::MeanAxis(..) => T::one() / T::from_usize(len).unwrap(),
                    _ => T::one(),
                };
                acc(grads, *a, &|d| {
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                let j = (o * len + l) * inner + i;
                                d[j] = d[j] + g[o * inner + i] * scale;
                            }
                        }
                    }
                });
            }
            Op::MaxAxis(a, axis, arg) => {
                let (outer, len, inner) = split_axis(self.shape(*a), *axis);
                acc(grads, *a, &|d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let l = arg[o * inner + i];
                            let j = (o * len + l) * inner + i;
                            d[j] = d[j] + g[o * inner + i];
                        }
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = split_axis(self.shape(*a), *axis);
                acc(grads, *a, &|d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + i;
                            let dot: T = (0..len).map(|l| g[idx(l)] * out[idx(l)]).sum();
                            for l in 0..len {
                                let j = idx(l);
                                d[j] = d[j] + out[j] * (g[j] - dot);
                            }
                        }
                    }
                });
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    if self.wants(*p) {
                        acc(grads, *p, &|d| {
                            for o in 0..outer {
                                let src = (o * total + offset) * inner;
                                let dst = o * len * inner;
                                add_into(&mut d[dst..dst + len * inner], &g[src..src + len * inner]);
                            }
                        });
                    }
                    offset += len;
                }
            }
            Op::Slice(a, axis, start) => {
                let (outer, full, inner) = split_axis(self.shape(*a), *axis);
                let len = node.value.shape()[*axis];
                acc(grads, *a, &|d| {
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        add_into(&mut d[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                });
            }
            Op::Reshape(a) => acc(grads, *a, &|d| add_into(d, g)),
            Op::Mask(a, mask) => {
                let m = mask.data();
                acc(grads, *a, &|d| {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[i] * m[i];
                    }
                });
            }
            Op::NormalizeRows(a, eps) => {
                let (r, c) = self.nodes[a.0].value.dims2().unwrap();
                let x = self.value(*a).data();
                acc(grads, *a, &|d| {
                    for i in 0..r {
                        let row = &x[i * c..(i + 1) * c];
                        let norm = smoothed_norm(row, *eps);
                        if norm == T::zero() {
                            continue;
                        }
                        let y = &out[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: T = y.iter().zip(gr).map(|(p, q)| *p * *q).sum();
                        for j in 0..c {
                            d[i * c + j] = d[i * c + j] + (gr[j] - y[j] * dot) / norm;
                        }
                    }
                });
            }
        }
    }
}

/// `sqrt(|row|² + eps²)`.
fn smoothed_norm<T: Scalar>(row: &[T], eps: T) -> T {
    (row.iter().map(|v| *v * *v).sum::<T>() + eps * eps).sqrt()
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d = *d + *s);
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches node shape"),
            None => Tensor::zeros(shape),
        }
    }
}
