use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Splits `shape` around `axis` into (outer, axis length, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::InvalidArgument {
            op,
            reason: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    Ok(())
}

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim {
        s[axis] = 1;
    } else {
        s.remove(axis);
    }
    s
}

impl<'t, F: Element> Var<'t, F> {
    /// Sum of every element, as a scalar.
    pub fn sum(self) -> Var<'t, F> {
        let x = self.value();
        let out = Tensor::scalar(x.sum());
        let shape = x.shape().to_vec();
        self.tape.record(out, &[self], move |g| vec![Some(Tensor::full(&shape, g.item()))])
    }

    pub fn mean(self) -> Var<'t, F> {
        let n = F::from_usize(self.value().len());
        self.sum().mul_scalar(F::one() / n)
    }

    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Result<Var<'t, F>> {
        let x = self.value();
        check_axis("sum_axis", x.shape(), axis)?;
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let mut out = vec![F::zero(); outer * inner];
        let xd = x.data();
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xd[base + i];
                }
            }
        }
        let in_shape = x.shape().to_vec();
        let out = Tensor::from_parts(reduced_shape(&in_shape, axis, keepdim), out);
        Ok(self.tape.record(out, &[self], move |g| {
            let gd = g.data();
            let mut gx = vec![F::zero(); outer * len * inner];
            for o in 0..outer {
                for k in 0..len {
                    let base = (o * len + k) * inner;
                    gx[base..base + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), gx))]
        }))
    }

    pub fn mean_axis(self, axis: usize, keepdim: bool) -> Result<Var<'t, F>> {
        let len = *self.shape().get(axis).ok_or_else(|| TensorError::InvalidArgument {
            op: "mean_axis",
            reason: format!("axis {axis} out of range"),
        })?;
        Ok(self.sum_axis(axis, keepdim)?.mul_scalar(F::one() / F::from_usize(len)))
    }

    fn extremum_axis(self, axis: usize, keepdim: bool, want_max: bool) -> Result<Var<'t, F>> {
        let x = self.value();
        check_axis(if want_max { "max_axis" } else { "min_axis" }, x.shape(), axis)?;
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut vals = vec![F::zero(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = xd[o * len * inner + i];
                let mut bk = 0;
                for k in 1..len {
                    let v = xd[(o * len + k) * inner + i];
                    // strict comparison: first index wins ties
                    if (want_max && v > best) || (!want_max && v < best) {
                        best = v;
                        bk = k;
                    }
                }
                vals[o * inner + i] = best;
                arg[o * inner + i] = (o * len + bk) * inner + i;
            }
        }
        let in_shape = x.shape().to_vec();
        let out = Tensor::from_parts(reduced_shape(&in_shape, axis, keepdim), vals);
        Ok(self.tape.record(out, &[self], move |g| {
            let mut gx = vec![F::zero(); outer * len * inner];
            for (&src, &gv) in arg.iter().zip(g.data()) {
                gx[src] += gv;
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), gx))]
        }))
    }

    /// Maximum along `axis`; the gradient routes to the first maximal entry.
    pub fn max_axis(self, axis: usize, keepdim: bool) -> Result<Var<'t, F>> {
        self.extremum_axis(axis, keepdim, true)
    }

    /// Minimum along `axis`; the gradient routes to the first minimal entry.
    pub fn min_axis(self, axis: usize, keepdim: bool) -> Result<Var<'t, F>> {
        self.extremum_axis(axis, keepdim, false)
    }
}

impl<F: Element> Tensor<F> {
    /// Index of the largest entry of every last-axis slice, lowest index on ties.
    pub fn argmax_lastdim(&self) -> Vec<usize> {
        let n = *self.shape().last().unwrap_or(&1);
        self.data()
            .chunks(n)
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}
