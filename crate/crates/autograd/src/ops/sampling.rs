//! Interpolating samplers: bilinear resize and horizontal backward warping.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

#[inline]
fn lerp<F: Element>(a: F, b: F, t: F) -> F {
    // a + t(b - a) keeps constant inputs exactly constant.
    a + t * (b - a)
}

/// Source taps `(i0, i1, t)` for each output index, half-pixel centres.
fn axis_taps<F: Element>(n_in: usize, n_out: usize) -> Vec<(usize, usize, F)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, F::from_f64(src - i0 as f64))
        })
        .collect()
}

impl<'t, F: Element> Var<'t, F> {
    /// Bilinear resize of the two trailing axes (`align_corners = false`).
    pub fn bilinear_resize(self, out_h: usize, out_w: usize) -> Result<Var<'t, F>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if shape.len() < 2 || out_h == 0 || out_w == 0 {
            return Err(TensorError::InvalidArgument {
                op: "bilinear_resize",
                reason: format!("cannot resize {shape:?} to {out_h}x{out_w}"),
            });
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let planes = x.len() / (h * w);
        let ty: Vec<(usize, usize, F)> = axis_taps(h, out_h);
        let tx: Vec<(usize, usize, F)> = axis_taps(w, out_w);
        let xd = x.data();
        let mut out = Vec::with_capacity(planes * out_h * out_w);
        for p in 0..planes {
            let src = &xd[p * h * w..(p + 1) * h * w];
            for &(y0, y1, fy) in &ty {
                for &(x0, x1, fx) in &tx {
                    let top = lerp(src[y0 * w + x0], src[y0 * w + x1], fx);
                    let bot = lerp(src[y1 * w + x0], src[y1 * w + x1], fx);
                    out.push(lerp(top, bot, fy));
                }
            }
        }
        let mut out_shape = shape.clone();
        let r = out_shape.len();
        out_shape[r - 2] = out_h;
        out_shape[r - 1] = out_w;
        Ok(self.tape.record(Tensor::from_parts(out_shape, out), &[self], move |g| {
            let gd = g.data();
            let mut gx = vec![F::zero(); planes * h * w];
            let mut k = 0;
            for p in 0..planes {
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for &(y0, y1, fy) in &ty {
                    for &(x0, x1, fx) in &tx {
                        let gv = gd[k];
                        k += 1;
                        let (gt, gb) = (gv * (F::one() - fy), gv * fy);
                        dst[y0 * w + x0] += gt * (F::one() - fx);
                        dst[y0 * w + x1] += gt * fx;
                        dst[y1 * w + x0] += gb * (F::one() - fx);
                        dst[y1 * w + x1] += gb * fx;
                    }
                }
            }
            vec![Some(Tensor::from_parts(shape.clone(), gx))]
        }))
    }

    /// Backward horizontal warp: `out(y, x) = self(y, x - disp(y, x))` with
    /// linear interpolation along the row and clamp-to-border addressing.
    ///
    /// Differentiable in both the image and the displacement field. Where the
    /// source coordinate is clamped the displacement gradient is zero.
    pub fn warp_horizontal(self, disp: Var<'t, F>) -> Result<Var<'t, F>> {
        let img = self.value();
        let d = disp.value();
        if img.shape() != d.shape() || img.rank() < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "warp_horizontal",
                lhs: img.shape().to_vec(),
                rhs: d.shape().to_vec(),
            });
        }
        let w = img.shape()[img.rank() - 1];
        let rows = img.len() / w;
        let max_u = F::from_usize(w - 1);
        // (i0, t, clamped) per output pixel
        let mut taps: Vec<(usize, F, bool)> = Vec::with_capacity(img.len());
        let mut out = Vec::with_capacity(img.len());
        let (id, dd) = (img.data(), d.data());
        for r in 0..rows {
            let row = &id[r * w..(r + 1) * w];
            for x in 0..w {
                let u = F::from_usize(x) - dd[r * w + x];
                let clamped = !(u > F::zero() && u < max_u);
                let u = u.max(F::zero()).min(max_u);
                let i0 = (u.floor().as_f64() as usize).min(w.saturating_sub(2));
                let t = u - F::from_usize(i0);
                let i1 = (i0 + 1).min(w - 1);
                out.push(lerp(row[i0], row[i1], t));
                taps.push((i0, t, clamped));
            }
        }
        let need_img = self.requires_grad();
        let need_d = disp.requires_grad();
        let shape = img.shape().to_vec();
        Ok(self.tape.record(Tensor::from_parts(shape.clone(), out), &[self, disp], move |g| {
            let gd = g.data();
            let mut gi = need_img.then(|| vec![F::zero(); rows * w]);
            let mut gdisp = need_d.then(|| vec![F::zero(); rows * w]);
            let id = img.data();
            for r in 0..rows {
                for x in 0..w {
                    let k = r * w + x;
                    let (i0, t, clamped) = taps[k];
                    let i1 = (i0 + 1).min(w - 1);
                    if let Some(gi) = gi.as_mut() {
                        gi[r * w + i0] += gd[k] * (F::one() - t);
                        gi[r * w + i1] += gd[k] * t;
                    }
                    if let Some(gdisp) = gdisp.as_mut() {
                        if !clamped {
                            // d/dd of row(x - d) is -slope
                            gdisp[k] = -gd[k] * (id[r * w + i1] - id[r * w + i0]);
                        }
                    }
                }
            }
            vec![
                gi.map(|v| Tensor::from_parts(shape.clone(), v)),
                gdisp.map(|v| Tensor::from_parts(shape.clone(), v)),
            ]
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Tape, Tensor};

    #[test]
    fn same_size_resize_is_identity() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[1, 2, 5, 7], |i| (i as f64 * 0.37).cos()));
        let y = x.bilinear_resize(5, 7).unwrap();
        for (a, b) in x.value().data().iter().zip(y.value().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_stay_constant() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 3, 5], 3.5));
        for (h, w) in [(1, 1), (7, 2), (16, 16), (3, 11)] {
            let y = x.bilinear_resize(h, w).unwrap();
            assert!(y.value().data().iter().all(|&v| v == 3.5));
        }
    }

    #[test]
    fn upsampled_ramp_is_monotone() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[2, 2], &[0.0, 1.0, 0.0, 1.0]).unwrap());
        let y = x.bilinear_resize(2, 4).unwrap().value();
        for r in 0..2 {
            let row = &y.data()[r * 4..(r + 1) * 4];
            assert!(row.windows(2).all(|p| p[0] <= p[1]), "{row:?}");
        }
        assert_eq!(&y.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn zero_disparity_warp_is_identity() {
        let tape = Tape::<f64>::new();
        let img = tape.leaf(Tensor::from_fn(&[3, 6], |i| (i * i) as f64));
        let d = tape.leaf(Tensor::zeros(&[3, 6]));
        assert_eq!(img.warp_horizontal(d).unwrap().value().data(), img.value().data());
    }

    #[test]
    fn unit_disparity_shifts_right_with_border_clamp() {
        let tape = Tape::<f64>::new();
        let img = tape.leaf(Tensor::from_fn(&[2, 5], |i| (10 * i) as f64));
        let d = tape.leaf(Tensor::ones(&[2, 5]));
        let out = img.warp_horizontal(d).unwrap().value();
        assert_eq!(out.data(), &[0.0, 0.0, 10.0, 20.0, 30.0, 50.0, 50.0, 60.0, 70.0, 80.0]);
    }
}
