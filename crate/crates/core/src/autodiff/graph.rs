use std::collections::HashMap;

use crate::autodiff::kernels::{self, broadcast_shape, broadcast_strides, broadcast_walk, strided_walk};
use crate::autodiff::tensor::numel;
use crate::autodiff::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul { a: Var, b: Var, trans_b: bool },
    Permute { x: Var, perm: Vec<usize> },
    Reshape(Var),
    Softmax(Var),
    LayerNorm(Var),
    Gelu(Var),
    Conv1d { x: Var, w: Var, b: Var },
    Mean { x: Var, axis: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    SumAll(Var),
    MeanAll(Var),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op,
    requires_grad: bool,
    // op-specific saved state (layer-norm rstd, conv im2col buffer)
    aux: Vec<F>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Gradients produced by [`Graph::backward`], detached from the tape.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    params: Vec<Option<Vec<F>>>,
    leaves: HashMap<Var, Vec<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn param(&self, id: ParamId) -> Option<&[F]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn var(&self, v: Var) -> Option<&[F]> {
        self.leaves.get(&v).map(|g| g.as_slice())
    }
}

/// Reverse-mode tape. Every op evaluates eagerly and records what its
/// backward rule needs. Reductions run in a fixed left-to-right order so
/// forward values are bitwise reproducible.
pub struct Graph<'p, F: Scalar> {
    params: Option<&'p ParamStore<F>>,
    nodes: Vec<Node<F>>,
    param_vars: Vec<Option<Var>>,
    grad_enabled: bool,
    consumed: bool,
}

impl<'p, F: Scalar> Graph<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            grad_enabled: true,
            consumed: false,
        }
    }

    /// A tape with no parameter store (inputs and constants only).
    pub fn detached() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
            grad_enabled: true,
            consumed: false,
        }
    }

    /// A tape that never tracks gradients; used for sampling.
    pub fn inference(params: &'p ParamStore<F>) -> Self {
        let mut g = Self::new(params);
        g.grad_enabled = false;
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<F>, op: Op, inputs: &[Var], aux: Vec<F>) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            aux,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    /// An input whose gradient is reported by backward.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: self.grad_enabled,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    /// The tape node for a stored parameter. Repeated calls return the same
    /// node so gradients from every use accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(id.0).copied().flatten() {
            return v;
        }
        let store = self.params.expect("graph has no parameter store");
        let value = store.value(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
            requires_grad: self.grad_enabled,
            aux: Vec::new(),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
    ) -> Result<(Tensor<F>, Vec<usize>)> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let va = self.value(a).data();
        let vb = self.value(b).data();
        if sa == sb {
            let data = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
            return Ok((Tensor::new(sa.clone(), data)?, sa));
        }
        let out = broadcast_shape(op_name, &sa, &sb)?;
        // Common case: one operand is a trailing block of the other (bias, positional table).
        if out == sa && sa.ends_with(&sb) && !vb.is_empty() {
            let mut data = Vec::with_capacity(va.len());
            for chunk in va.chunks(vb.len()) {
                data.extend(chunk.iter().zip(vb).map(|(&x, &y)| f(x, y)));
            }
            return Ok((Tensor::new(out.clone(), data)?, out));
        }
        if out == sb && sb.ends_with(&sa) && !va.is_empty() {
            let mut data = Vec::with_capacity(vb.len());
            for chunk in vb.chunks(va.len()) {
                data.extend(va.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
            }
            return Ok((Tensor::new(out.clone(), data)?, out));
        }
        let stra = broadcast_strides(&sa, &out);
        let strb = broadcast_strides(&sb, &out);
        let mut data = vec![F::zero(); numel(&out)];
        broadcast_walk(&out, &stra, &strb, |o, ia, ib| data[o] = f(va[ia], vb[ib]));
        Ok((Tensor::new(out.clone(), data)?, out))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b], Vec::new()))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b], Vec::new()))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b], Vec::new()))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let cf = F::from_f64(c);
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| e * cf).collect()).unwrap();
        self.push(t, Op::Scale(x, c), &[x], Vec::new())
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let cf = F::from_f64(c);
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| e + cf).collect()).unwrap();
        self.push(t, Op::AddScalar(x), &[x], Vec::new())
    }

    /// Batched matrix product over the last two axes. `b` either shares the
    /// leading (batch) axes of `a` or is a plain 2-D matrix applied to every batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` over the last two axes of `b`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let dims = kernels::matmul_dims(&sa, &sb, trans_b)?;
        let mut out = vec![F::zero(); dims.out_numel()];
        kernels::matmul_forward(&dims, self.value(a).data(), self.value(b).data(), &mut out);
        let t = Tensor::new(dims.out_shape.clone(), out)?;
        Ok(self.push(t, Op::MatMul { a, b, trans_b }, &[a, b], Vec::new()))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len()
            || perm
                .iter()
                .any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Shape {
                op: "permute",
                lhs: s,
                rhs: perm.to_vec(),
            });
        }
        let in_strides = kernels::contiguous_strides(&s);
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let src = self.value(x).data();
        let mut data = vec![F::zero(); src.len()];
        strided_walk(&out_shape, &strides, |o, i| data[o] = src[i]);
        let t = Tensor::new(out_shape, data)?;
        Ok(self.push(t, Op::Permute { x, perm: perm.to_vec() }, &[x], Vec::new()))
    }

    /// Swap the two trailing axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::Shape {
                op: "transpose",
                lhs: self.shape(x).to_vec(),
                rhs: vec![],
            });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 1, r - 2);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x], Vec::new()))
    }

    /// Softmax over the last axis (max-subtracted).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let d = *v.shape().last().ok_or(Error::Empty("softmax on scalar"))?;
        let mut data = v.data().to_vec();
        if d > 0 {
            for row in data.chunks_mut(d) {
                kernels::softmax_row(row);
            }
        }
        let t = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Softmax(x), &[x], Vec::new()))
    }

    /// Layer normalization over the last axis without affine terms,
    /// epsilon [`LAYER_NORM_EPS`].
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let d = *v.shape().last().ok_or(Error::Empty("layer_norm on scalar"))?;
        if d == 0 {
            return Err(Error::Empty("layer_norm over zero-length axis"));
        }
        let eps = F::from_f64(LAYER_NORM_EPS);
        let n = F::from_f64(d as f64);
        let mut data = v.data().to_vec();
        let mut rstds = Vec::with_capacity(data.len() / d);
        for row in data.chunks_mut(d) {
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<F>() / n;
            let rstd = F::one() / (var + eps).sqrt();
            for e in row.iter_mut() {
                *e = (*e - mean) * rstd;
            }
            rstds.push(rstd);
        }
        let t = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(t, Op::LayerNorm(x), &[x], rstds))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| kernels::gelu(e)).collect();
        let t = Tensor::new(v.shape().to_vec(), data).unwrap();
        self.push(t, Op::Gelu(x), &[x], Vec::new())
    }

    /// 1-D convolution with "same" zero padding over channels-last input.
    /// `x`: `[B, L, C_in]`, `w`: `[K, C_in, C_out]` with odd `K`, `b`: `[C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let sb = self.shape(b).to_vec();
        if sx.len() != 3 || sw.len() != 3 || sw[1] != sx[2] || sw[0].is_multiple_of(2) {
            return Err(Error::Shape {
                op: "conv1d",
                lhs: sx,
                rhs: sw,
            });
        }
        if sb != [sw[2]] {
            return Err(Error::Shape {
                op: "conv1d bias",
                lhs: sw,
                rhs: sb,
            });
        }
        let (bsz, len, cin) = (sx[0], sx[1], sx[2]);
        let (k, cout) = (sw[0], sw[2]);
        let cols = kernels::im2col(self.value(x).data(), bsz, len, cin, k);
        let rows = bsz * len;
        let mut out = vec![F::zero(); rows * cout];
        let bias = self.value(b).data();
        for r in 0..rows {
            out[r * cout..(r + 1) * cout].copy_from_slice(bias);
        }
        F::gemm(
            rows,
            k * cin,
            cout,
            F::one(),
            &cols,
            (k * cin) as isize,
            1,
            self.value(w).data(),
            cout as isize,
            1,
            F::one(),
            &mut out,
            cout as isize,
            1,
        );
        let t = Tensor::new(vec![bsz, len, cout], out)?;
        Ok(self.push(t, Op::Conv1d { x, w, b }, &[x, w, b], cols))
    }

    /// Mean over `axis`; the axis is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || s[axis] == 0 {
            return Err(Error::Shape {
                op: "mean",
                lhs: s,
                rhs: vec![axis],
            });
        }
        let (outer, n, inner) = kernels::split_axis(&s, axis);
        let src = self.value(x).data();
        let mut data = vec![F::zero(); outer * inner];
        let nf = F::from_f64(n as f64);
        for o in 0..outer {
            for j in 0..n {
                let base = (o * n + j) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
            for i in 0..inner {
                data[o * inner + i] /= nf;
            }
        }
        let mut out_shape = s.clone();
        out_shape.remove(axis);
        let t = Tensor::new(out_shape, data)?;
        Ok(self.push(t, Op::Mean { x, axis }, &[x], Vec::new()))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or(Error::Empty("concat of no tensors"))?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(Error::Shape {
                op: "concat",
                lhs: s0,
                rhs: vec![axis],
            });
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible =
                s.len() == s0.len() && s.iter().zip(&s0).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: s0,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::split_axis(&s0, axis);
        let mut out_shape = s0.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                let src = self.value(v).data();
                data.extend_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let t = Tensor::new(out_shape, data)?;
        Ok(self.push(t, Op::Concat { xs: xs.to_vec(), axis }, xs, Vec::new()))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::Shape {
                op: "slice",
                lhs: s,
                rhs: vec![axis, start, len],
            });
        }
        let (outer, n, inner) = kernels::split_axis(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = s.clone();
        out_shape[axis] = len;
        let t = Tensor::new(out_shape, data)?;
        Ok(self.push(t, Op::Slice { x, axis, start }, &[x], Vec::new()))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<F>();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x], Vec::new())
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x).data();
        let s = v.iter().copied().sum::<F>() / F::from_f64(v.len().max(1) as f64);
        self.push(Tensor::scalar(s), Op::MeanAll(x), &[x], Vec::new())
    }

    /// Reverse sweep from a scalar `loss`. Clears the tape; a second call
    /// returns [`Error::TapeConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !self.grad_enabled {
            return Err(Error::Config("backward on an inference-only graph".into()));
        }
        let ls = self.shape(loss);
        if numel(ls) != 1 {
            return Err(Error::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                }
                _ => self.backprop_node(i, &g, &mut grads)?,
            }
        }
        let mut params = vec![None; self.param_vars.len()];
        let mut leaves = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(g) = grads[i].take() else { continue };
            match node.op {
                Op::Param(id) => params[id.0] = Some(g),
                Op::Leaf => {
                    leaves.insert(Var(i), g);
                }
                _ => {}
            }
        }
        self.nodes.clear();
        self.param_vars.iter_mut().for_each(|v| *v = None);
        self.consumed = true;
        Ok(Gradients { params, leaves })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(node.op, Op::Sub(..));
                if self.wants(*a) {
                    let ga = kernels::reduce_to(g, out_shape, self.shape(*a));
                    accumulate(grads, *a, &ga);
                }
                if self.wants(*b) {
                    let mut gb = kernels::reduce_to(g, out_shape, self.shape(*b));
                    if neg {
                        gb.iter_mut().for_each(|e| *e = -*e);
                    }
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let stra = broadcast_strides(sa, out_shape);
                let strb = broadcast_strides(sb, out_shape);
                if self.wants(*a) {
                    let mut ga = vec![F::zero(); va.len()];
                    broadcast_walk(out_shape, &stra, &strb, |o, ia, ib| ga[ia] += g[o] * vb[ib]);
                    accumulate(grads, *a, &ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![F::zero(); vb.len()];
                    broadcast_walk(out_shape, &stra, &strb, |o, ia, ib| gb[ib] += g[o] * va[ia]);
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Scale(x, c) => {
                let cf = F::from_f64(*c);
                let gx: Vec<F> = g.iter().map(|&e| e * cf).collect();
                accumulate(grads, *x, &gx);
            }
            Op::AddScalar(x) | Op::Reshape(x) => accumulate(grads, *x, g),
            Op::MatMul { a, b, trans_b } => {
                let dims = kernels::matmul_dims(self.shape(*a), self.shape(*b), *trans_b)?;
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let mut ga = vec![F::zero(); va.len()];
                    kernels::matmul_grad_a(&dims, g, vb, &mut ga);
                    accumulate(grads, *a, &ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![F::zero(); vb.len()];
                    kernels::matmul_grad_b(&dims, g, va, &mut gb);
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Permute { x, perm } => {
                let s = self.shape(*x);
                let in_strides = kernels::contiguous_strides(s);
                let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
                let mut gx = vec![F::zero(); g.len()];
                strided_walk(out_shape, &strides, |o, j| gx[j] = g[o]);
                accumulate(grads, *x, &gx);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let d = *out_shape.last().unwrap();
                let mut gx = vec![F::zero(); g.len()];
                for ((gr, yr), out) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gy), &yy) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yy * (gy - dot);
                    }
                }
                accumulate(grads, *x, &gx);
            }
            Op::LayerNorm(x) => {
                let y = node.value.data();
                let d = *out_shape.last().unwrap();
                let n = F::from_f64(d as f64);
                let mut gx = vec![F::zero(); g.len()];
                for (r, ((gr, yr), out)) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                    let rstd = node.aux[r];
                    let mg = gr.iter().copied().sum::<F>() / n;
                    let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<F>() / n;
                    for ((o, &gy), &yy) in out.iter_mut().zip(gr).zip(yr) {
                        *o = rstd * (gy - mg - yy * mgy);
                    }
                }
                accumulate(grads, *x, &gx);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let gx: Vec<F> = g.iter().zip(xv).map(|(&gy, &e)| gy * kernels::gelu_grad(e)).collect();
                accumulate(grads, *x, &gx);
            }
            Op::Conv1d { x, w, b } => {
                let sx = self.shape(*x);
                let sw = self.shape(*w);
                let (bsz, len, cin) = (sx[0], sx[1], sx[2]);
                let (k, cout) = (sw[0], sw[2]);
                let rows = bsz * len;
                let cols = &node.aux;
                if self.wants(*w) {
                    let mut gw = vec![F::zero(); k * cin * cout];
                    F::gemm(
                        k * cin,
                        rows,
                        cout,
                        F::one(),
                        cols,
                        1,
                        (k * cin) as isize,
                        g,
                        cout as isize,
                        1,
                        F::zero(),
                        &mut gw,
                        cout as isize,
                        1,
                    );
                    accumulate(grads, *w, &gw);
                }
                if self.wants(*b) {
                    let mut gb = vec![F::zero(); cout];
                    for row in g.chunks(cout) {
                        for (o, &e) in gb.iter_mut().zip(row) {
                            *o += e;
                        }
                    }
                    accumulate(grads, *b, &gb);
                }
                if self.wants(*x) {
                    let mut gcols = vec![F::zero(); rows * k * cin];
                    F::gemm(
                        rows,
                        cout,
                        k * cin,
                        F::one(),
                        g,
                        cout as isize,
                        1,
                        self.value(*w).data(),
                        1,
                        cout as isize,
                        F::zero(),
                        &mut gcols,
                        (k * cin) as isize,
                        1,
                    );
                    let gx = kernels::col2im(&gcols, bsz, len, cin, k);
                    accumulate(grads, *x, &gx);
                }
            }
            Op::Mean { x, axis } => {
                let s = self.shape(*x);
                let (outer, n, inner) = kernels::split_axis(s, *axis);
                let nf = F::from_f64(n as f64);
                let mut gx = vec![F::zero(); outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            gx[(o * n + j) * inner + i] = g[o * inner + i] / nf;
                        }
                    }
                }
                accumulate(grads, *x, &gx);
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = kernels::split_axis(out_shape, *axis);
                let mut offset = 0;
                for &v in xs {
                    let n = self.shape(v)[*axis];
                    if self.wants(v) {
                        let mut gv = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gv.extend_from_slice(&g[base..base + n * inner]);
                        }
                        accumulate(grads, v, &gv);
                    }
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let s = self.shape(*x);
                let (outer, n, inner) = kernels::split_axis(s, *axis);
                let len = out_shape[*axis];
                let mut gx = vec![F::zero(); outer * n * inner];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                accumulate(grads, *x, &gx);
            }
            Op::SumAll(x) => {
                let gx = vec![g[0]; self.value(*x).len()];
                accumulate(grads, *x, &gx);
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).len().max(1);
                let gx = vec![g[0] / F::from_f64(n as f64); n];
                accumulate(grads, *x, &gx);
            }
        }
        Ok(())
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, delta: &[F]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, &d) in acc.iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}
