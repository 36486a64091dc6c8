use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t, F: Element> Var<'t, F> {
    /// Softmax over the last axis, stabilised by subtracting the row maximum.
    ///
    /// `-inf` entries receive exactly zero weight.
    pub fn softmax_lastdim(self) -> Result<Var<'t, F>> {
        let x = self.value();
        let n = *x.shape().last().ok_or_else(|| TensorError::InvalidShape {
            op: "softmax_lastdim",
            shape: vec![],
            reason: "scalar input".into(),
        })?;
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks(n) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let start = out.len();
            let mut s = F::zero();
            for &v in row {
                let e = (v - m).exp();
                s += e;
                out.push(e);
            }
            for v in &mut out[start..] {
                *v /= s;
            }
        }
        let y = Tensor::from_parts(x.shape().to_vec(), out);
        let yv = y.data().to_vec();
        let shape = x.shape().to_vec();
        Ok(self.tape.record(y, &[self], move |g| {
            let mut gx = Vec::with_capacity(yv.len());
            for (yr, gr) in yv.chunks(n).zip(g.data().chunks(n)) {
                let dot: F = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                gx.extend(yr.iter().zip(gr).map(|(&y, &g)| y * (g - dot)));
            }
            vec![Some(Tensor::from_parts(shape.clone(), gx))]
        }))
    }
}
