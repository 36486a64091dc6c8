use rand::Rng;

use crate::element::Element;
use crate::tensor::Tensor;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<F: Element, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<F> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| F::from_f64(rng.gen_range(-bound..=bound)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn respects_bound_and_seed() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t: Tensor<f32> = xavier_uniform(&[16, 8], 8, 16, &mut rng);
        let bound = (6.0f32 / 24.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        let mut rng2 = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        assert_eq!(t, xavier_uniform(&[16, 8], 8, 16, &mut rng2));
    }
}
