use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{expected_tensors, is_norm_weight, Checkpoint};
use super::config::ModelConfig;
use crate::error::Result;
use crate::tensor::Tensor;

/// Seeded random weights for desk-scale experiments.
///
/// One ChaCha8 stream (`ChaCha8Rng::seed_from_u64(seed)`) is consumed in
/// lexicographic tensor-name order. Each value takes the top 24 bits of a
/// `next_u32()` draw as `u ∈ [0, 1)`, maps it to `2u − 1 ∈ [−1, 1)` and scales
/// by `1/sqrt(d_model)`. All steps are exact in `f32` except the final
/// multiply, so output is identical on every platform. RMS-norm gains are set
/// to 1 and draw nothing.
pub fn init_toy(config: &ModelConfig, seed: u64) -> Result<Checkpoint> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (config.d_model as f32).sqrt();
    let mut tensors = BTreeMap::new();
    for (name, shape) in expected_tensors(config) {
        let n: usize = shape.iter().product();
        let data = if is_norm_weight(&name) {
            vec![1.0; n]
        } else {
            (0..n)
                .map(|_| {
                    let u = (rng.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32);
                    (2.0 * u - 1.0) * scale
                })
                .collect()
        };
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    Checkpoint::new(config.clone(), tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = ModelConfig::toy(8, 2, 1);
        let a = init_toy(&cfg, 42).unwrap();
        let b = init_toy(&cfg, 42).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        let c = init_toy(&cfg, 43).unwrap();
        assert_ne!(a.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn weights_are_bounded_and_centred() {
        let cfg = ModelConfig::toy(64, 4, 2);
        let ckpt = init_toy(&cfg, 42).unwrap();
        let scale = 1.0 / 8.0;
        let mut values = Vec::new();
        for (name, t) in ckpt.tensors() {
            if is_norm_weight(name) {
                assert!(t.data().iter().all(|&v| v == 1.0));
            } else {
                assert!(t.data().iter().all(|&v| (-scale..scale).contains(&v)));
                values.extend(t.data().iter().map(|&v| v as f64));
            }
        }
        // uniform on [-s, s): sd = s/sqrt(3); the mean of n draws has sd s/sqrt(3n)
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sigma_of_mean = scale as f64 / 3f64.sqrt() / n.sqrt();
        assert!(
            mean.abs() < 3.0 * sigma_of_mean,
            "mean {mean} vs 3σ {}",
            3.0 * sigma_of_mean
        );
    }

    #[test]
    fn first_draw_is_pinned() {
        // guards the documented value pipeline against silent changes
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let u = (rng.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32);
        let ckpt = init_toy(&ModelConfig::toy(8, 2, 1), 42).unwrap();
        let first = ckpt.get("decoder.layer.0.cross_attn.k").data()[0];
        assert_eq!(first, (2.0 * u - 1.0) * (1.0 / 8f32.sqrt()));
    }
}
