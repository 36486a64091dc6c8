//! Central finite-difference gradient checking.
//!
//! The checker only evaluates the forward function, so it is independent of
//! every backward rule it validates.

use crate::element::Element;
use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Perturbation applied on each side of an element.
    pub eps: f64,
    /// Denominator floor for the relative error, so that near-zero
    /// gradients are compared absolutely.
    pub floor: f64,
    /// Check at most this many elements per input (evenly strided).
    pub max_elements: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-6,
            max_elements: usize::MAX,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, element, analytic, numeric)` at the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of the scalar `f(inputs)` against central
/// differences for every element of every input (subject to `max_elements`).
pub fn check_gradients<F, Func>(inputs: &[Tensor<F>], f: Func, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Element,
    Func: for<'t> Fn(&'t Tape<F>, &[Var<'t, F>]) -> Result<Var<'t, F>>,
{
    let eval = |xs: &[Tensor<F>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok(f(&tape, &vars)?.item().as_f64())
    };

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone().with_grad())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<F>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| grads.get_or_zeros(v, x.shape()))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut work: Vec<Tensor<F>> = inputs.to_vec();
    for (i, x) in inputs.iter().enumerate() {
        let stride = (x.len() / opts.max_elements.max(1)).max(1);
        for e in (0..x.len()).step_by(stride) {
            let orig = x.data()[e];
            work[i].data_mut()[e] = orig + F::from_f64(opts.eps);
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - F::from_f64(opts.eps);
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            // the perturbation actually applied, after rounding
            let h = (orig + F::from_f64(opts.eps)).as_f64() - (orig - F::from_f64(opts.eps)).as_f64();
            let numeric = (plus - minus) / h;
            let a = analytic[i].data()[e].as_f64();
            let err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((i, e, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
