use super::kernels::{conv2d_backward, conv2d_forward, maxpool_forward, ConvGeom, PoolGeom};
use super::{softmax, Scalar, Tensor};
use crate::error::{dim_err, Error, Result};
use crate::fft;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize },
    AddBias { x: usize, bias: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, factor: T },
    Relu { x: usize },
    Reshape { x: usize },
    Sum { x: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Conv2d { x: usize, w: usize, bias: Option<usize>, geom: ConvGeom },
    MaxPool { x: usize, argmax: Vec<usize> },
    SoftmaxXent { logits: usize, labels: Vec<usize>, probs: Vec<T> },
    CountSketch { x: usize, hash: Vec<usize>, sign: Vec<T>, dim: usize },
    CircConv { a: usize, b: usize },
    SignedSqrt { x: usize, eps: T },
    L2Normalize { x: usize, norms: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// A tape is differentiated at most once; a second [`Tape::backward`] call is
/// a usage error.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    differentiated: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` for values that do not require a gradient or were unreachable
    /// from the root.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn rows_of(shape: &[usize]) -> (usize, usize) {
    let last = *shape.last().unwrap_or(&1);
    (shape.iter().product::<usize>() / last.max(1), last)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            differentiated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.0 < self.nodes.len() {
            Ok(v.0)
        } else {
            Err(Error::Usage(format!(
                "variable {} is not on this tape ({} nodes)",
                v.0,
                self.nodes.len()
            )))
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, i: usize) -> &[T] {
        self.nodes[i].value.data()
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let ([m, k], [k2, n]) = (sa, sb) else {
            return Err(dim_err!("matmul needs two matrices, got {sa:?} and {sb:?}"));
        };
        let (m, k, k2, n) = (*m, *k, *k2, *n);
        if k != k2 {
            return Err(dim_err!("matmul inner dimensions differ: {sa:?} x {sb:?}"));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, false);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b }, &[a, b]))
    }

    /// Adds a bias vector to every row (the trailing axis).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (x, bias) = (self.check(x)?, self.check(bias)?);
        let sx = self.nodes[x].value.shape();
        let sb = self.nodes[bias].value.shape();
        let (_, cols) = rows_of(sx);
        if sb != [cols] {
            return Err(dim_err!("bias {sb:?} does not match rows of {sx:?}"));
        }
        let b = self.data(bias);
        let out: Vec<T> = self
            .data(x)
            .chunks_exact(cols)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bv)| v + bv))
            .collect();
        let value = Tensor::new(sx.to_vec(), out)?;
        Ok(self.push(value, Op::AddBias { x, bias }, &[x, bias]))
    }

    fn same_shape(&self, a: usize, b: usize, what: &str) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(dim_err!("{what} shape mismatch: {sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.same_shape(a, b, "add")?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.nodes[a].value.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.same_shape(a, b, "mul")?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.nodes[a].value.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let x = self.check(x)?;
        let out = self.data(x).iter().map(|&v| v * factor).collect();
        let value = Tensor::new(self.nodes[x].value.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Scale { x, factor }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x)?;
        let out = self.data(x).iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(self.nodes[x].value.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Relu { x }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let x = self.check(x)?;
        let value = self.nodes[x].value.clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x)?;
        let total = self.data(x).iter().copied().sum();
        Ok(self.push(Tensor::scalar(total), Op::Sum { x }, &[x]))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(dim_err!("concat of zero tensors"));
        }
        let ids = inputs.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let first = self.nodes[ids[0]].value.shape().to_vec();
        if axis >= first.len() {
            return Err(dim_err!("concat axis {axis} out of range for {first:?}"));
        }
        let mut axis_total = 0;
        for &i in &ids {
            let s = self.nodes[i].value.shape();
            let agree = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !agree {
                return Err(dim_err!(
                    "concat inputs disagree off axis {axis}: {first:?} vs {s:?}"
                ));
            }
            axis_total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for &i in &ids {
                let chunk = self.nodes[i].value.shape()[axis] * inner;
                out.extend_from_slice(&self.data(i)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = axis_total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat { inputs: ids.clone(), axis }, &ids))
    }

    /// Cross-correlation with zero padding. `x` is `[N, C, H, W]` or
    /// `[C, H, W]`, `w` is `[O, C, k, k]`, optional `bias` is `[O]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (x, w) = (self.check(x)?, self.check(w)?);
        let bias = bias.map(|b| self.check(b)).transpose()?;
        let sx = self.nodes[x].value.shape().to_vec();
        let geom = ConvGeom::new(&sx, self.nodes[w].value.shape(), stride, pad)?;
        if let Some(b) = bias {
            let sb = self.nodes[b].value.shape();
            if sb != [geom.c_out] {
                return Err(dim_err!("conv2d bias {sb:?} does not match {} outputs", geom.c_out));
            }
        }
        let out = conv2d_forward(
            &geom,
            self.data(x),
            self.data(w),
            bias.map(|b| self.data(b)),
        );
        let shape = if sx.len() == 3 {
            vec![geom.c_out, geom.oh, geom.ow]
        } else {
            vec![geom.n, geom.c_out, geom.oh, geom.ow]
        };
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(value, Op::Conv2d { x, w, bias, geom }, &inputs))
    }

    /// Max-pool over the trailing two axes, no padding.
    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let x = self.check(x)?;
        let sx = self.nodes[x].value.shape().to_vec();
        let geom = PoolGeom::new(&sx, k, stride)?;
        let (out, argmax) = maxpool_forward(&geom, self.data(x));
        let value = Tensor::new(geom.out_shape(&sx), out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let logits = self.check(logits)?;
        let s = self.nodes[logits].value.shape();
        let (batch, k) = match *s {
            [k] => (1, k),
            [b, k] => (b, k),
            _ => return Err(dim_err!("cross-entropy logits must be [B, K], got {s:?}")),
        };
        if labels.len() != batch {
            return Err(dim_err!("{} labels for a batch of {batch}", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Validation(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let mut probs = Vec::with_capacity(batch * k);
        let mut loss = T::zero();
        for (row, &label) in self.data(logits).chunks_exact(k).zip(labels) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("non-finite logits".into()));
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let log_z = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss = loss + (log_z - row[label]);
            probs.extend(softmax(row));
        }
        let value = Tensor::scalar(loss / T::lit(batch as f64));
        let op = Op::SoftmaxXent {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(value, op, &[logits]))
    }

    /// Count sketch of every row: `out[r, hash[i]] += sign[i] * x[r, i]`.
    pub fn count_sketch(&mut self, x: Var, hash: &[usize], sign: &[i8], dim: usize) -> Result<Var> {
        let x = self.check(x)?;
        let sx = self.nodes[x].value.shape().to_vec();
        let (rows, c) = rows_of(&sx);
        if hash.len() != c || sign.len() != c {
            return Err(dim_err!(
                "count sketch plan covers {} inputs, tensor rows have {c}",
                hash.len()
            ));
        }
        if let Some(&h) = hash.iter().find(|&&h| h >= dim) {
            return Err(dim_err!("hash bucket {h} out of range for sketch dim {dim}"));
        }
        let sign: Vec<T> = sign.iter().map(|&s| T::lit(s as f64)).collect();
        let mut out = vec![T::zero(); rows * dim];
        for (row, orow) in self.data(x).chunks_exact(c).zip(out.chunks_exact_mut(dim)) {
            for i in 0..c {
                orow[hash[i]] = orow[hash[i]] + sign[i] * row[i];
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = dim;
        let value = Tensor::new(shape, out)?;
        let op = Op::CountSketch {
            x,
            hash: hash.to_vec(),
            sign,
            dim,
        };
        Ok(self.push(value, op, &[x]))
    }

    /// Row-wise circular convolution along the trailing axis.
    pub fn circular_convolve(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.same_shape(a, b, "circular_convolve")?;
        let shape = self.nodes[a].value.shape().to_vec();
        let (_, d) = rows_of(&shape);
        let mut out = Vec::with_capacity(self.nodes[a].value.numel());
        for (ra, rb) in self.data(a).chunks_exact(d).zip(self.data(b).chunks_exact(d)) {
            out.extend(fft::circular_convolve(ra, rb)?);
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::CircConv { a, b }, &[a, b]))
    }

    /// `sign(x) * (sqrt(|x| + eps) - sqrt(eps))`, smooth through zero.
    pub fn signed_sqrt(&mut self, x: Var, eps: T) -> Result<Var> {
        let x = self.check(x)?;
        let root_eps = eps.sqrt();
        let out = self
            .data(x)
            .iter()
            .map(|&v| v.signum() * ((v.abs() + eps).sqrt() - root_eps))
            .map(|v| if v.is_nan() { T::zero() } else { v })
            .collect();
        let value = Tensor::new(self.nodes[x].value.shape().to_vec(), out)?;
        Ok(self.push(value, Op::SignedSqrt { x, eps }, &[x]))
    }

    /// Scales each row to unit l2 norm: `x / sqrt(|x|^2 + eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: T) -> Result<Var> {
        let x = self.check(x)?;
        let shape = self.nodes[x].value.shape().to_vec();
        let (_, d) = rows_of(&shape);
        let mut out = Vec::with_capacity(self.nodes[x].value.numel());
        let mut norms = Vec::new();
        for row in self.data(x).chunks_exact(d) {
            let n = (row.iter().map(|&v| v * v).sum::<T>() + eps).sqrt();
            norms.push(n);
            out.extend(row.iter().map(|&v| v / n));
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::L2Normalize { x, norms }, &[x]))
    }

    /// Reverse sweep from a scalar root. Gradients accumulate over fan-out.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>> {
        let root = self.check(root)?;
        if self.differentiated {
            return Err(Error::Usage(
                "tape was already differentiated; record a fresh tape".into(),
            ));
        }
        if self.nodes[root].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        self.differentiated = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root].requires_grad {
            grads[root] = Some(vec![T::one()]);
        }

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| g.map(|g| Tensor::new(node.value.shape().to_vec(), g)).transpose())
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let wants = |j: usize| nodes[j].requires_grad;
        let acc = |grads: &mut [Option<Vec<T>>], j: usize, contrib: Vec<T>| {
            match &mut grads[j] {
                Some(existing) => existing
                    .iter_mut()
                    .zip(contrib)
                    .for_each(|(e, c)| *e = *e + c),
                slot @ None => *slot = Some(contrib),
            }
        };

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (&[m, k], &[_, n]) = (nodes[*a].value.shape(), nodes[*b].value.shape()) else {
                    unreachable!()
                };
                if wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g, false, self.data(*b), true, &mut da, false);
                    acc(grads, *a, da);
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, self.data(*a), true, g, false, &mut db, false);
                    acc(grads, *b, db);
                }
            }
            Op::AddBias { x, bias } => {
                if wants(*x) {
                    acc(grads, *x, g.to_vec());
                }
                if wants(*bias) {
                    let cols = nodes[*bias].value.numel();
                    let mut db = vec![T::zero(); cols];
                    for row in g.chunks_exact(cols) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                    }
                    acc(grads, *bias, db);
                }
            }
            Op::Add { a, b } => {
                if wants(*a) {
                    acc(grads, *a, g.to_vec());
                }
                if wants(*b) {
                    acc(grads, *b, g.to_vec());
                }
            }
            Op::Mul { a, b } => {
                if wants(*a) {
                    let d = g.iter().zip(self.data(*b)).map(|(&gv, &bv)| gv * bv).collect();
                    acc(grads, *a, d);
                }
                if wants(*b) {
                    let d = g.iter().zip(self.data(*a)).map(|(&gv, &av)| gv * av).collect();
                    acc(grads, *b, d);
                }
            }
            Op::Scale { x, factor } => {
                if wants(*x) {
                    acc(grads, *x, g.iter().map(|&v| v * *factor).collect());
                }
            }
            Op::Relu { x } => {
                if wants(*x) {
                    let d = g
                        .iter()
                        .zip(self.data(*x))
                        .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect();
                    acc(grads, *x, d);
                }
            }
            Op::Reshape { x } => {
                if wants(*x) {
                    acc(grads, *x, g.to_vec());
                }
            }
            Op::Sum { x } => {
                if wants(*x) {
                    acc(grads, *x, vec![g[0]; nodes[*x].value.numel()]);
                }
            }
            Op::Concat { inputs, axis } => {
                let shape = nodes[i].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &j in inputs {
                    let chunk = nodes[j].value.shape()[*axis] * inner;
                    if wants(j) {
                        let mut d = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            let start = o * row + offset;
                            d.extend_from_slice(&g[start..start + chunk]);
                        }
                        acc(grads, j, d);
                    }
                    offset += chunk;
                }
            }
            Op::Conv2d { x, w, bias, geom } => {
                let need_b = bias.is_some_and(wants);
                let r = conv2d_backward(
                    geom,
                    self.data(*x),
                    self.data(*w),
                    g,
                    (wants(*x), wants(*w), need_b),
                );
                if let Some(dx) = r.dx {
                    acc(grads, *x, dx);
                }
                if let Some(dw) = r.dw {
                    acc(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (bias, r.db) {
                    acc(grads, *b, db);
                }
            }
            Op::MaxPool { x, argmax } => {
                if wants(*x) {
                    let mut d = vec![T::zero(); nodes[*x].value.numel()];
                    for (&src, &gv) in argmax.iter().zip(g) {
                        d[src] = d[src] + gv;
                    }
                    acc(grads, *x, d);
                }
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                if wants(*logits) {
                    let k = probs.len() / labels.len();
                    let scale = g[0] / T::lit(labels.len() as f64);
                    let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (r, &l) in labels.iter().enumerate() {
                        d[r * k + l] = d[r * k + l] - scale;
                    }
                    acc(grads, *logits, d);
                }
            }
            Op::CountSketch {
                x,
                hash,
                sign,
                dim,
            } => {
                if wants(*x) {
                    let c = hash.len();
                    let mut d = vec![T::zero(); nodes[*x].value.numel()];
                    for (grow, drow) in g.chunks_exact(*dim).zip(d.chunks_exact_mut(c)) {
                        for j in 0..c {
                            drow[j] = sign[j] * grow[hash[j]];
                        }
                    }
                    acc(grads, *x, d);
                }
            }
            Op::CircConv { a, b } => {
                let (_, d) = rows_of(nodes[i].value.shape());
                for (target, other) in [(*a, *b), (*b, *a)] {
                    if !wants(target) {
                        continue;
                    }
                    let mut out = Vec::with_capacity(g.len());
                    for (grow, orow) in g.chunks_exact(d).zip(self.data(other).chunks_exact(d)) {
                        out.extend(fft::circular_correlate(grow, orow)?);
                    }
                    acc(grads, target, out);
                }
            }
            Op::SignedSqrt { x, eps } => {
                if wants(*x) {
                    let two = T::lit(2.0);
                    let d = g
                        .iter()
                        .zip(self.data(*x))
                        .map(|(&gv, &xv)| gv / (two * (xv.abs() + *eps).sqrt()))
                        .collect();
                    acc(grads, *x, d);
                }
            }
            Op::L2Normalize { x, norms } => {
                if wants(*x) {
                    let y = self.data(i);
                    let (_, d) = rows_of(nodes[i].value.shape());
                    let mut out = Vec::with_capacity(g.len());
                    for ((grow, yrow), &n) in g.chunks_exact(d).zip(y.chunks_exact(d)).zip(norms) {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        out.extend(grow.iter().zip(yrow).map(|(&gv, &yv)| (gv - yv * dot) / n));
                    }
                    acc(grads, *x, out);
                }
            }
        }
        Ok(())
    }
}
