//! Raw array kernels behind the tape ops.

use crate::autodiff::tensor::numel;
use crate::autodiff::Scalar;
use crate::error::{Error, Result};

pub fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// `(outer, n, inner)` sizes around `axis`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let r = a.len().max(b.len());
    let pad = |s: &[usize]| -> Vec<usize> {
        let mut v = vec![1; r - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(a), pad(b));
    pa.iter()
        .zip(&pb)
        .map(|(&x, &y)| match (x, y) {
            (x, y) if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(Error::Shape {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            }),
        })
        .collect()
}

/// Strides of `shape` viewed inside the broadcast `out` shape (0 on broadcast axes).
pub fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let own = contiguous_strides(shape);
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Visits every output position in row-major order with the matching operand offsets.
pub fn broadcast_walk(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let r = out.len();
    if r == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[r - 1];
    let (ia_s, ib_s) = (sa[r - 1], sb[r - 1]);
    let outer = numel(&out[..r - 1]);
    let mut idx = vec![0usize; r - 1];
    let (mut base_a, mut base_b, mut o) = (0usize, 0usize, 0usize);
    for _ in 0..outer {
        for j in 0..inner {
            f(o + j, base_a + j * ia_s, base_b + j * ib_s);
        }
        o += inner;
        let mut d = r - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            base_a += sa[d];
            base_b += sb[d];
            if idx[d] < out[d] {
                break;
            }
            base_a -= sa[d] * out[d];
            base_b -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub fn strided_walk(out: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let zeros = vec![0; out.len()];
    broadcast_walk(out, strides, &zeros, |o, i, _| f(o, i));
}

/// Sums `g` (shaped `out`) down to the broadcast operand shape `target`.
pub fn reduce_to<F: Scalar>(g: &[F], out: &[usize], target: &[usize]) -> Vec<F> {
    if out == target {
        return g.to_vec();
    }
    let st = broadcast_strides(target, out);
    let mut acc = vec![F::zero(); numel(target)];
    strided_walk(out, &st, |o, i| acc[i] += g[o]);
    acc
}

pub fn softmax_row<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for e in row.iter_mut() {
        *e = (*e - max).exp();
        sum += *e;
    }
    for e in row.iter_mut() {
        *e /= sum;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximation GELU written as `x·σ(2u)` with
/// `u = √(2/π)(x + 0.044715x³)`, which equals `½x(1 + tanh u)`.
#[inline]
pub fn gelu<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let two_u = (c + c) * (x + a * x * x * x);
    x / (F::one() + (-two_u).exp())
}

#[inline]
pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let two_u = (c + c) * (x + a * x * x * x);
    let s = F::one() / (F::one() + (-two_u).exp());
    let du = (c + c) * (F::one() + F::from_f64(3.0) * a * x * x);
    s + x * s * (F::one() - s) * du
}

#[derive(Debug, Clone)]
pub struct MatMulDims {
    pub batch: usize,
    pub shared_b: bool,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub trans_b: bool,
    pub out_shape: Vec<usize>,
}

impl MatMulDims {
    pub fn out_numel(&self) -> usize {
        self.batch * self.m * self.n
    }
}

pub fn matmul_dims(sa: &[usize], sb: &[usize], trans_b: bool) -> Result<MatMulDims> {
    let err = || Error::Shape {
        op: if trans_b { "matmul_nt" } else { "matmul" },
        lhs: sa.to_vec(),
        rhs: sb.to_vec(),
    };
    if sa.len() < 2 || sb.len() < 2 {
        return Err(err());
    }
    let (ra, rb) = (sa.len(), sb.len());
    let (m, k) = (sa[ra - 2], sa[ra - 1]);
    let (kb, n) = if trans_b {
        (sb[rb - 1], sb[rb - 2])
    } else {
        (sb[rb - 2], sb[rb - 1])
    };
    if k != kb {
        return Err(err());
    }
    let batch = numel(&sa[..ra - 2]);
    let shared_b = rb == 2;
    if !shared_b && sa[..ra - 2] != sb[..rb - 2] {
        return Err(err());
    }
    let mut out_shape = sa[..ra - 2].to_vec();
    out_shape.extend_from_slice(&[m, n]);
    Ok(MatMulDims {
        batch,
        shared_b,
        m,
        k,
        n,
        trans_b,
        out_shape,
    })
}

// Row/column strides of b viewed as a k×n matrix.
fn b_strides(d: &MatMulDims) -> (isize, isize) {
    if d.trans_b {
        (1, d.k as isize)
    } else {
        (d.n as isize, 1)
    }
}

pub fn matmul_forward<F: Scalar>(d: &MatMulDims, a: &[F], b: &[F], out: &mut [F]) {
    let (rsb, csb) = b_strides(d);
    if d.shared_b {
        F::gemm(
            d.batch * d.m,
            d.k,
            d.n,
            F::one(),
            a,
            d.k as isize,
            1,
            b,
            rsb,
            csb,
            F::zero(),
            out,
            d.n as isize,
            1,
        );
        return;
    }
    let (sa, sb, so) = (d.m * d.k, d.k * d.n, d.m * d.n);
    for i in 0..d.batch {
        F::gemm(
            d.m,
            d.k,
            d.n,
            F::one(),
            &a[i * sa..(i + 1) * sa],
            d.k as isize,
            1,
            &b[i * sb..(i + 1) * sb],
            rsb,
            csb,
            F::zero(),
            &mut out[i * so..(i + 1) * so],
            d.n as isize,
            1,
        );
    }
}

/// dA = dC · Bᵀ (with B viewed as k×n).
pub fn matmul_grad_a<F: Scalar>(d: &MatMulDims, g: &[F], b: &[F], ga: &mut [F]) {
    let (rsb, csb) = b_strides(d);
    // Bᵀ as an n×k matrix swaps the strides.
    let (rsbt, csbt) = (csb, rsb);
    let rows = if d.shared_b { d.batch * d.m } else { d.m };
    let reps = if d.shared_b { 1 } else { d.batch };
    let (sg, sb, sa) = (rows * d.n, d.k * d.n, rows * d.k);
    for i in 0..reps {
        let bb = if d.shared_b { b } else { &b[i * sb..(i + 1) * sb] };
        F::gemm(
            rows,
            d.n,
            d.k,
            F::one(),
            &g[i * sg..(i + 1) * sg],
            d.n as isize,
            1,
            bb,
            rsbt,
            csbt,
            F::zero(),
            &mut ga[i * sa..(i + 1) * sa],
            d.k as isize,
            1,
        );
    }
}

/// dB = Aᵀ · dC, written in B's storage layout.
pub fn matmul_grad_b<F: Scalar>(d: &MatMulDims, g: &[F], a: &[F], gb: &mut [F]) {
    let rows = if d.shared_b { d.batch * d.m } else { d.m };
    let reps = if d.shared_b { 1 } else { d.batch };
    let (sg, sa, sb) = (rows * d.n, rows * d.k, d.k * d.n);
    for i in 0..reps {
        let aa = &a[i * sa..(i + 1) * sa];
        let gg = &g[i * sg..(i + 1) * sg];
        let out = if d.shared_b {
            &mut gb[..]
        } else {
            &mut gb[i * sb..(i + 1) * sb]
        };
        if d.trans_b {
            // B stored n×k: dB = dCᵀ · A
            F::gemm(
                d.n,
                rows,
                d.k,
                F::one(),
                gg,
                1,
                d.n as isize,
                aa,
                d.k as isize,
                1,
                F::zero(),
                out,
                d.k as isize,
                1,
            );
        } else {
            F::gemm(
                d.k,
                rows,
                d.n,
                F::one(),
                aa,
                1,
                d.k as isize,
                gg,
                d.n as isize,
                1,
                F::zero(),
                out,
                d.n as isize,
                1,
            );
        }
    }
}

/// Channels-last im2col with zero "same" padding: `[B*L, K*C]`.
pub fn im2col<F: Scalar>(x: &[F], bsz: usize, len: usize, cin: usize, k: usize) -> Vec<F> {
    let pad = (k - 1) / 2;
    let width = k * cin;
    let mut cols = vec![F::zero(); bsz * len * width];
    for b in 0..bsz {
        for l in 0..len {
            let row = &mut cols[(b * len + l) * width..(b * len + l + 1) * width];
            for kk in 0..k {
                let src = l as isize + kk as isize - pad as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let s = (b * len + src as usize) * cin;
                row[kk * cin..(kk + 1) * cin].copy_from_slice(&x[s..s + cin]);
            }
        }
    }
    cols
}

pub fn col2im<F: Scalar>(cols: &[F], bsz: usize, len: usize, cin: usize, k: usize) -> Vec<F> {
    let pad = (k - 1) / 2;
    let width = k * cin;
    let mut x = vec![F::zero(); bsz * len * cin];
    for b in 0..bsz {
        for l in 0..len {
            let row = &cols[(b * len + l) * width..(b * len + l + 1) * width];
            for kk in 0..k {
                let src = l as isize + kk as isize - pad as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let s = (b * len + src as usize) * cin;
                for c in 0..cin {
                    x[s + c] += row[kk * cin + c];
                }
            }
        }
    }
    x
}
