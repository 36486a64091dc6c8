use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for a fixed list of parameter shapes.
#[derive(Clone, Debug)]
pub struct AdamState<F: Element = f32> {
    pub config: AdamConfig,
    first_moment: Vec<Tensor<F>>,
    second_moment: Vec<Tensor<F>>,
    step: u64,
}

impl<F: Element> AdamState<F> {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        Self {
            config,
            first_moment: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second_moment: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step: 0,
        }
    }

    pub fn for_store(config: AdamConfig, store: &ParamStore<F>) -> Self {
        let shapes: Vec<&[usize]> = store.ids().map(|id| store.get(id).shape()).collect();
        Self::new(config, &shapes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &Tensor<F> {
        &self.first_moment[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor<F> {
        &self.second_moment[i]
    }
}

/// One bias-corrected Adam update. `grads[i] = None` leaves parameter `i`
/// and its moments untouched.
pub fn adam_step<F: Element>(
    params: &mut [&mut Tensor<F>],
    grads: &[Option<Tensor<F>>],
    state: &mut AdamState<F>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(TensorError::InvalidArgument {
            op: "adam_step",
            reason: format!(
                "{} parameters, {} gradients, {} accumulators",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            let m = &state.first_moment[i];
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let (b1, b2) = (F::from_f64(c.beta1), F::from_f64(c.beta2));
    let bc1 = F::from_f64(1.0 - c.beta1.powi(t));
    let bc2 = F::from_f64(1.0 - c.beta2.powi(t));
    let (lr, eps) = (F::from_f64(c.lr), F::from_f64(c.eps));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = b1 * *mv + (F::one() - b1) * gv;
            *vv = b2 * *vv + (F::one() - b2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *pv -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Adam bound to a [`ParamStore`]; frozen parameters are skipped.
#[derive(Clone, Debug)]
pub struct Adam<F: Element = f32> {
    state: AdamState<F>,
}

impl<F: Element> Adam<F> {
    pub fn new(config: AdamConfig, store: &ParamStore<F>) -> Self {
        Self {
            state: AdamState::for_store(config, store),
        }
    }

    pub fn state(&self) -> &AdamState<F> {
        &self.state
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[Option<Tensor<F>>]) -> Result<()> {
        let mut params = store.values_mut();
        adam_step(&mut params, grads, &mut self.state)
    }
}
