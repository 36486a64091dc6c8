//! Shape manipulation: reshape, permute, concat, narrow, gather.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::reduce::split_axis;
use crate::tape::Var;
use crate::tensor::{strides_of, Tensor};

pub(crate) fn permute_data<F: Element>(data: &[F], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<F>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides_of(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if rank == 0 {
        return (out_shape, data.to_vec());
    }
    let mut idx = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..n {
        out.push(data[pos]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            pos += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            pos -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

impl<'t, F: Element> Var<'t, F> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, F>> {
        let x = self.value();
        let out = x.reshape(shape)?;
        let in_shape = x.shape().to_vec();
        Ok(self.tape.record(out, &[self], move |g| {
            vec![Some(Tensor::from_parts(in_shape.clone(), g.data().to_vec()))]
        }))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, F>> {
        let x = self.value();
        let rank = x.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::InvalidArgument {
                op: "permute",
                reason: format!("{perm:?} is not a permutation of {rank} axes"),
            });
        }
        let (out_shape, data) = permute_data(x.data(), x.shape(), perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(self.tape.record(Tensor::from_parts(out_shape, data), &[self], move |g| {
            let (s, d) = permute_data(g.data(), g.shape(), &inverse);
            vec![Some(Tensor::from_parts(s, d))]
        }))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, F>> {
        let x = self.value();
        if axis >= x.rank() || start + len > x.shape()[axis] || len == 0 {
            return Err(TensorError::InvalidArgument {
                op: "narrow",
                reason: format!("slice {start}..{} on axis {axis} of {:?}", start + len, x.shape()),
            });
        }
        let (outer, full, inner) = split_axis(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let in_shape = x.shape().to_vec();
        Ok(self.tape.record(Tensor::from_parts(shape, out), &[self], move |g| {
            let mut gx = vec![F::zero(); outer * full * inner];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                gx[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), gx))]
        }))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<'t, F>], axis: usize) -> Result<Var<'t, F>> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidArgument {
            op: "concat",
            reason: "no inputs".into(),
        })?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                reason: format!("axis {axis} out of range for {base:?}"),
            });
        }
        for v in &values[1..] {
            let s = v.shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                out.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let in_shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(first.tape.record(Tensor::from_parts(shape, out), parts, move |g| {
            let gd = g.data();
            let mut grads: Vec<Vec<F>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (gv, &l) in grads.iter_mut().zip(&lens) {
                    gv.extend_from_slice(&gd[pos..pos + l * inner]);
                    pos += l * inner;
                }
            }
            grads
                .into_iter()
                .zip(&in_shapes)
                .map(|(d, s)| Some(Tensor::from_parts(s.clone(), d)))
                .collect()
        }))
    }

    /// Picks elements of the flattened tensor; output has shape `[indices.len()]`.
    pub fn gather_flat(self, indices: &[usize]) -> Result<Var<'t, F>> {
        let x = self.value();
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(TensorError::InvalidArgument {
                op: "gather_flat",
                reason: format!("index {bad} out of range for {} elements", x.len()),
            });
        }
        let out: Vec<F> = indices.iter().map(|&i| x.data()[i]).collect();
        let idx = indices.to_vec();
        let in_shape = x.shape().to_vec();
        Ok(self.tape.record(Tensor::from_parts(vec![idx.len()], out), &[self], move |g| {
            let mut gx = vec![F::zero(); in_shape.iter().product()];
            for (&i, &gv) in idx.iter().zip(g.data()) {
                gx[i] += gv;
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), gx))]
        }))
    }
}

impl<F: Element> Tensor<F> {
    pub fn permute(&self, perm: &[usize]) -> Tensor<F> {
        let (s, d) = permute_data(self.data(), self.shape(), perm);
        Tensor::from_parts(s, d)
    }
}
