//! Elementwise arithmetic with numpy-style broadcasting.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::{strides_of, Tensor};

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// For every flat output index, the flat index of the broadcast input.
/// `None` when no broadcasting happens.
pub(crate) fn broadcast_map(input: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if input == out {
        return None;
    }
    let rank = out.len();
    let offset = rank - input.len();
    let in_strides = strides_of(input);
    // Effective stride per output axis: zero where the input is broadcast.
    let eff: Vec<usize> = (0..rank)
        .map(|i| {
            if i < offset || input[i - offset] == 1 {
                0
            } else {
                in_strides[i - offset]
            }
        })
        .collect();
    let n: usize = out.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..n {
        map.push(pos);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            pos += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            pos -= eff[ax] * out[ax];
            idx[ax] = 0;
        }
    }
    Some(map)
}

fn gather<F: Element>(t: &Tensor<F>, map: &Option<Vec<usize>>) -> Vec<F> {
    match map {
        None => t.data().to_vec(),
        Some(m) => m.iter().map(|&i| t.data()[i]).collect(),
    }
}

pub(crate) fn reduce_to<F: Element>(grad: Vec<F>, map: &Option<Vec<usize>>, shape: &[usize]) -> Tensor<F> {
    match map {
        None => Tensor::from_parts(shape.to_vec(), grad),
        Some(m) => {
            let mut out = vec![F::zero(); shape.iter().product()];
            for (&i, g) in m.iter().zip(grad) {
                out[i] += g;
            }
            Tensor::from_parts(shape.to_vec(), out)
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl<'t, F: Element> Var<'t, F> {
    fn binary(self, other: Var<'t, F>, op: BinOp) -> Result<Var<'t, F>> {
        let name = match op {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        };
        let a = self.value();
        let b = other.value();
        let out_shape = broadcast_shape(name, a.shape(), b.shape())?;
        let ma = broadcast_map(a.shape(), &out_shape);
        let mb = broadcast_map(b.shape(), &out_shape);
        let av = gather(&a, &ma);
        let bv = gather(&b, &mb);
        let data: Vec<F> = match op {
            BinOp::Add => av.iter().zip(&bv).map(|(&x, &y)| x + y).collect(),
            BinOp::Sub => av.iter().zip(&bv).map(|(&x, &y)| x - y).collect(),
            BinOp::Mul => av.iter().zip(&bv).map(|(&x, &y)| x * y).collect(),
            BinOp::Div => av.iter().zip(&bv).map(|(&x, &y)| x / y).collect(),
        };
        let out = Tensor::from_parts(out_shape, data);
        let a_shape = a.shape().to_vec();
        let b_shape = b.shape().to_vec();
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        // Operand values are only retained for the products that need them.
        let keep = matches!(op, BinOp::Mul | BinOp::Div);
        let (av, bv) = if keep { (av, bv) } else { (Vec::new(), Vec::new()) };
        Ok(self.tape.record(out, &[self, other], move |g| {
            let g = g.data();
            let ga = need_a.then(|| {
                let v: Vec<F> = match op {
                    BinOp::Add | BinOp::Sub => g.to_vec(),
                    BinOp::Mul => g.iter().zip(&bv).map(|(&g, &y)| g * y).collect(),
                    BinOp::Div => g.iter().zip(&bv).map(|(&g, &y)| g / y).collect(),
                };
                reduce_to(v, &ma, &a_shape)
            });
            let gb = need_b.then(|| {
                let v: Vec<F> = match op {
                    BinOp::Add => g.to_vec(),
                    BinOp::Sub => g.iter().map(|&g| -g).collect(),
                    BinOp::Mul => g.iter().zip(&av).map(|(&g, &x)| g * x).collect(),
                    BinOp::Div => g
                        .iter()
                        .zip(av.iter().zip(&bv))
                        .map(|(&g, (&x, &y))| -g * x / (y * y))
                        .collect(),
                };
                reduce_to(v, &mb, &b_shape)
            });
            vec![ga, gb]
        }))
    }

    pub fn add(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(other, BinOp::Sub)
    }

    pub fn mul(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(other, BinOp::Mul)
    }

    pub fn div(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(other, BinOp::Div)
    }

    /// Applies `f` elementwise; `df(x, y)` is the derivative at input `x`
    /// with output `y`.
    fn unary(self, f: impl Fn(F) -> F, df: impl Fn(F, F) -> F) -> Var<'t, F> {
        let x = self.value();
        let y = x.map(f);
        if !self.requires_grad() {
            return self.tape.record(y, &[self], |_| vec![None]);
        }
        let d: Vec<F> = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&x, &y)| df(x, y))
            .collect();
        let shape = x.shape().to_vec();
        self.tape.record(y, &[self], move |g| {
            let v = g.data().iter().zip(&d).map(|(&g, &d)| g * d).collect();
            vec![Some(Tensor::from_parts(shape.clone(), v))]
        })
    }

    pub fn add_scalar(self, c: F) -> Var<'t, F> {
        self.unary(|x| x + c, |_, _| F::one())
    }

    pub fn mul_scalar(self, c: F) -> Var<'t, F> {
        self.unary(|x| x * c, move |_, _| c)
    }

    pub fn neg(self) -> Var<'t, F> {
        self.mul_scalar(-F::one())
    }

    pub fn exp(self) -> Var<'t, F> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Var<'t, F> {
        self.unary(|x| x.ln(), |x, _| x.recip())
    }

    pub fn abs(self) -> Var<'t, F> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > F::zero() {
                    F::one()
                } else if x < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                }
            },
        )
    }

    pub fn sqrt(self) -> Var<'t, F> {
        self.unary(|x| x.sqrt(), |_, y| F::from_f64(0.5) / y)
    }

    pub fn square(self) -> Var<'t, F> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn sigmoid(self) -> Var<'t, F> {
        self.unary(sigmoid, |_, y| y * (F::one() - y))
    }

    pub fn tanh(self) -> Var<'t, F> {
        self.unary(|x| x.tanh(), |_, y| F::one() - y * y)
    }

    pub fn relu(self) -> Var<'t, F> {
        self.unary(
            |x| if x > F::zero() { x } else { F::zero() },
            |x, _| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'t, F> {
        let k = F::from_f64((2.0 / std::f64::consts::PI).sqrt());
        let c = F::from_f64(0.044715);
        let half = F::from_f64(0.5);
        let three = F::from_f64(3.0);
        self.unary(
            move |x| half * x * (F::one() + (k * (x + c * x * x * x)).tanh()),
            move |x, _| {
                let t = (k * (x + c * x * x * x)).tanh();
                half * (F::one() + t) + half * x * (F::one() - t * t) * k * (F::one() + three * c * x * x)
            },
        )
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'t, F> {
        self.unary(softplus, |x, _| sigmoid(x))
    }
}

pub fn sigmoid<F: Element>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn softplus<F: Element>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape("t", &[2, 1, 4], &[3, 1]).unwrap(), vec![2, 3, 4]);
        assert!(broadcast_shape("t", &[2, 3], &[4]).is_err());
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64).with_grad());
        let b = tape.leaf(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap().with_grad());
        let y = x.add(b).unwrap();
        assert_eq!(y.value().data(), &[1.0, 3.0, 5.0, 4.0, 6.0, 8.0]);
        let grads = tape.backward(y.sum()).unwrap();
        assert_eq!(grads.get(&b).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(grads.get(&x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap().with_grad());
        let grads = tape.backward(x.square().sum()).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(1000.0f64) - 1000.0).abs() < 1e-9);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
    }
}
