use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::elementwise::{broadcast_map, broadcast_shape};
use crate::tape::Var;
use crate::tensor::Tensor;

/// `out += a · b` for row-major `a: m×k`, `b: k×n`.
pub(crate) fn gemm_acc<F: Element>(m: usize, k: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` for `a: m×k`, `b: n×k`.
pub(crate) fn gemm_nt_acc<F: Element>(m: usize, k: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = F::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * n + j] += s;
        }
    }
}

/// `out += aᵀ · b` for `a: m×k`, `b: m×n`; `out: k×n`.
pub(crate) fn gemm_tn_acc<F: Element>(m: usize, k: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

struct Plan {
    m: usize,
    k: usize,
    n: usize,
    batch: usize,
    a_batch: usize,
    b_batch: usize,
    a_map: Vec<usize>,
    b_map: Vec<usize>,
    out_shape: Vec<usize>,
}

fn plan(a: &[usize], b: &[usize]) -> Result<Plan> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(mismatch());
    }
    let ab = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let batch_shape = broadcast_shape("matmul", ab, bb).map_err(|_| mismatch())?;
    let batch: usize = batch_shape.iter().product();
    let a_map = broadcast_map(ab, &batch_shape).unwrap_or_else(|| (0..batch).collect());
    let b_map = broadcast_map(bb, &batch_shape).unwrap_or_else(|| (0..batch).collect());
    let mut out_shape = batch_shape;
    out_shape.extend([m, n]);
    Ok(Plan {
        m,
        k,
        n,
        batch,
        a_batch: ab.iter().product(),
        b_batch: bb.iter().product(),
        a_map,
        b_map,
        out_shape,
    })
}

impl<'t, F: Element> Var<'t, F> {
    /// Batched matrix product `[..., M, K] × [..., K, N] → [..., M, N]` with
    /// broadcasting over the leading dimensions.
    pub fn matmul(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        let a = self.value();
        let b = other.value();
        let p = plan(a.shape(), b.shape())?;
        let (m, k, n) = (p.m, p.k, p.n);
        let mut out = vec![F::zero(); p.batch * m * n];
        for bi in 0..p.batch {
            let ao = p.a_map[bi] * m * k;
            let bo = p.b_map[bi] * k * n;
            gemm_acc(m, k, n, &a.data()[ao..ao + m * k], &b.data()[bo..bo + k * n], &mut out[bi * m * n..(bi + 1) * m * n]);
        }
        let need_a = self.requires_grad();
        let need_b = other.requires_grad();
        let (a_shape, b_shape) = (a.shape().to_vec(), b.shape().to_vec());
        let out = Tensor::from_parts(p.out_shape.clone(), out);
        Ok(self.tape.record(out, &[self, other], move |g| {
            let gd = g.data();
            let ga = need_a.then(|| {
                let mut ga = vec![F::zero(); p.a_batch * m * k];
                for bi in 0..p.batch {
                    let ao = p.a_map[bi] * m * k;
                    let bo = p.b_map[bi] * k * n;
                    gemm_nt_acc(m, n, k, &gd[bi * m * n..(bi + 1) * m * n], &b.data()[bo..bo + k * n], &mut ga[ao..ao + m * k]);
                }
                Tensor::from_parts(a_shape.clone(), ga)
            });
            let gb = need_b.then(|| {
                let mut gb = vec![F::zero(); p.b_batch * k * n];
                for bi in 0..p.batch {
                    let ao = p.a_map[bi] * m * k;
                    let bo = p.b_map[bi] * k * n;
                    gemm_tn_acc(m, k, n, &a.data()[ao..ao + m * k], &gd[bi * m * n..(bi + 1) * m * n], &mut gb[bo..bo + k * n]);
                }
                Tensor::from_parts(b_shape.clone(), gb)
            });
            vec![ga, gb]
        }))
    }
}
