//! 2-D convolutions (cross-correlation convention, zero padding).

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::matmul::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn geometry(op: &'static str, x: &[usize], k: usize, stride: usize, pad: usize) -> Result<Geometry> {
    if x.len() != 4 {
        return Err(TensorError::InvalidShape {
            op,
            shape: x.to_vec(),
            reason: "expected [B, C, H, W]".into(),
        });
    }
    if k % 2 == 0 {
        return Err(TensorError::InvalidArgument {
            op,
            reason: format!("kernel size {k} must be odd"),
        });
    }
    if stride != 1 && stride != 2 {
        return Err(TensorError::InvalidArgument {
            op,
            reason: format!("stride {stride} not in {{1, 2}}"),
        });
    }
    let (h, w) = (x[2], x[3]);
    let out_dim = |n: usize| -> Result<usize> {
        let span = n + 2 * pad;
        if span < k {
            return Err(TensorError::InvalidArgument {
                op,
                reason: format!("input extent {n} with kernel {k} and pad {pad} leaves no output"),
            });
        }
        Ok((span - k) / stride + 1)
    };
    Ok(Geometry {
        batch: x[0],
        channels: x[1],
        h,
        w,
        k,
        stride,
        pad,
        oh: out_dim(h)?,
        ow: out_dim(w)?,
    })
}

/// Unfolds one image `[C, H, W]` into columns `[C·k·k, oh·ow]`.
fn im2col<F: Element>(g: &Geometry, img: &[F], cols: &mut [F]) {
    let p = g.oh * g.ow;
    for c in 0..g.channels {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * g.ow + ox] = if iy >= 0 && (iy as usize) < g.h && ix >= 0 && (ix as usize) < g.w {
                            img[(c * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            F::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im<F: Element>(g: &Geometry, cols: &[F], img: &mut [F]) {
    let p = g.oh * g.ow;
    for c in 0..g.channels {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            img[(c * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<'t, F: Element> Var<'t, F> {
    /// Dense convolution `x: [B, C_in, H, W]`, `w: [C_out, C_in, k, k]`.
    pub fn conv2d(self, weight: Var<'t, F>, stride: usize, pad: usize) -> Result<Var<'t, F>> {
        let x = self.value();
        let w = weight.value();
        let ws = w.shape();
        if ws.len() != 4 || ws[2] != ws[3] || x.rank() != 4 || ws[1] != x.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: x.shape().to_vec(),
                rhs: ws.to_vec(),
            });
        }
        let g = geometry("conv2d", x.shape(), ws[2], stride, pad)?;
        let cout = ws[0];
        let ckk = g.channels * g.k * g.k;
        let p = g.oh * g.ow;
        let img_len = g.channels * g.h * g.w;
        let mut out = vec![F::zero(); g.batch * cout * p];
        let mut cols = vec![F::zero(); ckk * p];
        for b in 0..g.batch {
            im2col(&g, &x.data()[b * img_len..(b + 1) * img_len], &mut cols);
            gemm_acc(cout, ckk, p, w.data(), &cols, &mut out[b * cout * p..(b + 1) * cout * p]);
        }
        let need_x = self.requires_grad();
        let need_w = weight.requires_grad();
        let out = Tensor::from_parts(vec![g.batch, cout, g.oh, g.ow], out);
        Ok(self.tape.record(out, &[self, weight], move |grad| {
            let gd = grad.data();
            let mut cols = vec![F::zero(); ckk * p];
            let mut gw = need_w.then(|| vec![F::zero(); cout * ckk]);
            let mut gx = need_x.then(|| vec![F::zero(); g.batch * img_len]);
            let mut gcols = vec![F::zero(); ckk * p];
            for b in 0..g.batch {
                let gb = &gd[b * cout * p..(b + 1) * cout * p];
                if let Some(gw) = gw.as_mut() {
                    im2col(&g, &x.data()[b * img_len..(b + 1) * img_len], &mut cols);
                    gemm_nt_acc(cout, p, ckk, gb, &cols, gw);
                }
                if let Some(gx) = gx.as_mut() {
                    gcols.iter_mut().for_each(|v| *v = F::zero());
                    gemm_tn_acc(cout, ckk, p, w.data(), gb, &mut gcols);
                    col2im(&g, &gcols, &mut gx[b * img_len..(b + 1) * img_len]);
                }
            }
            vec![
                gx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
                gw.map(|d| Tensor::from_parts(w.shape().to_vec(), d)),
            ]
        }))
    }

    /// Depthwise convolution: one `k×k` filter per channel, `w: [C, 1, k, k]`.
    pub fn dwconv2d(self, weight: Var<'t, F>, stride: usize, pad: usize) -> Result<Var<'t, F>> {
        let x = self.value();
        let w = weight.value();
        let ws = w.shape();
        if ws.len() != 4 || ws[1] != 1 || ws[2] != ws[3] || x.rank() != 4 || ws[0] != x.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "dwconv2d",
                lhs: x.shape().to_vec(),
                rhs: ws.to_vec(),
            });
        }
        let g = geometry("dwconv2d", x.shape(), ws[2], stride, pad)?;
        let mut out = vec![F::zero(); g.batch * g.channels * g.oh * g.ow];
        {
            let (xd, wd) = (x.data(), w.data());
            depthwise_taps(&g, |o, i, t| out[o] += wd[t] * xd[i]);
        }
        let need_x = self.requires_grad();
        let need_w = weight.requires_grad();
        let out = Tensor::from_parts(vec![g.batch, g.channels, g.oh, g.ow], out);
        Ok(self.tape.record(out, &[self, weight], move |grad| {
            let gd = grad.data();
            let (xd, wd) = (x.data(), w.data());
            let mut gx = need_x.then(|| vec![F::zero(); xd.len()]);
            let mut gw = need_w.then(|| vec![F::zero(); wd.len()]);
            depthwise_taps(&g, |o, i, t| {
                if let Some(gx) = gx.as_mut() {
                    gx[i] += wd[t] * gd[o];
                }
                if let Some(gw) = gw.as_mut() {
                    gw[t] += xd[i] * gd[o];
                }
            });
            vec![
                gx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
                gw.map(|d| Tensor::from_parts(w.shape().to_vec(), d)),
            ]
        }))
    }
}

/// Calls `f(output index, input index, weight index)` for every tap of a
/// depthwise convolution that lands inside the image.
fn depthwise_taps(g: &Geometry, mut f: impl FnMut(usize, usize, usize)) {
    let (k, oh, ow) = (g.k, g.oh, g.ow);
    let plane = g.h * g.w;
    for b in 0..g.batch {
        for c in 0..g.channels {
            let in_base = (b * g.channels + c) * plane;
            let out_base = (b * g.channels + c) * oh * ow;
            for oy in 0..oh {
                for ky in 0..k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    let row = in_base + iy as usize * g.w;
                    for ox in 0..ow {
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix as usize >= g.w {
                                continue;
                            }
                            f(out_base + oy * ow + ox, row + ix as usize, (c * k + ky) * k + kx);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::{Tape, Tensor};

    #[test]
    fn unit_kernel_is_identity() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[1, 1, 4, 5], |i| i as f64 * 0.3));
        let w = tape.leaf(Tensor::ones(&[1, 1, 1, 1]));
        let y = x.conv2d(w, 1, 0).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn box_kernel_on_constant_image() {
        let c = 1.75;
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 6, 6], c));
        let w = tape.leaf(Tensor::ones(&[1, 1, 3, 3]));
        let y = x.conv2d(w, 1, 1).unwrap().value();
        for yy in 1..5 {
            for xx in 1..5 {
                assert_eq!(y.at(&[0, 0, yy, xx]), 9.0 * c);
            }
        }
        // corners see four taps
        assert_eq!(y.at(&[0, 0, 0, 0]), 4.0 * c);
    }

    #[test]
    fn strided_output_shape() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 4, 64, 64]));
        let w = tape.leaf(Tensor::zeros(&[8, 4, 3, 3]));
        assert_eq!(x.conv2d(w, 2, 1).unwrap().shape(), vec![1, 8, 32, 32]);
    }

    #[test]
    fn rejects_bad_geometry() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 5, 5]));
        let even = tape.leaf(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(x.conv2d(even, 1, 0).is_err());
        let w = tape.leaf(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(x.conv2d(w, 3, 1).is_err());
        let tiny = tape.leaf(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(tiny.conv2d(w, 1, 0).is_err());
    }

    #[test]
    fn depthwise_channels_are_independent() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[1, 3, 4, 4], |i| (i as f64).sin()));
        let mut ident = vec![0.0; 3 * 9];
        for c in 0..3 {
            ident[c * 9 + 4] = 1.0;
        }
        let w = tape.leaf(Tensor::from_f64(&[3, 1, 3, 3], &ident).unwrap());
        let y = x.dwconv2d(w, 1, 1).unwrap();
        assert_eq!(y.value().data(), x.value().data());

        ident[4] = 0.0;
        let w0 = tape.leaf(Tensor::from_f64(&[3, 1, 3, 3], &ident).unwrap());
        let y0 = x.dwconv2d(w0, 1, 1).unwrap().value();
        assert!(y0.data()[..16].iter().all(|&v| v == 0.0));
        assert_eq!(&y0.data()[16..], &x.value().data()[16..]);

        let ys = x.dwconv2d(w, 2, 1).unwrap();
        assert_eq!(ys.shape(), vec![1, 3, 2, 2]);
    }
}
