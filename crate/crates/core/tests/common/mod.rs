#![allow(dead_code)]

use lac_void::model::{build_model, Model, ModelConfig};
use lac_void::rng::SeededRng;
use lac_void::Tensor;

/// Random model whose blocks ignore attention (`wo = 0`) and whose FFN maps
/// the normalized input to itself scaled by `scales[t]`, so layer `t` adds
/// `scales[t] * RmsNorm(h)` and always makes positive progress of about
/// `scales[t] * sqrt(depth)`.
pub fn positive_progress_model(depth: usize, scales: &[f32], seed: u64) -> Model {
    let cfg = ModelConfig {
        ffn_dim: 2 * depth,
        ..ModelConfig::new(depth, 2, scales.len()).with_seed(seed)
    };
    let mut m = build_model(cfg).unwrap();
    for (block, &s) in m.blocks.iter_mut().zip(scales) {
        block.wo = Tensor::zeros(&[depth, depth]);
        let mut w1 = vec![0f32; depth * 2 * depth];
        let mut w2 = vec![0f32; 2 * depth * depth];
        for i in 0..depth {
            w1[i * 2 * depth + i] = 1.0;
            w1[i * 2 * depth + depth + i] = -1.0;
            w2[i * depth + i] = s;
            w2[(depth + i) * depth + i] = -s;
        }
        block.w1 = Tensor::new(vec![depth, 2 * depth], w1).unwrap();
        block.w2 = Tensor::new(vec![2 * depth, depth], w2).unwrap();
    }
    m
}

/// Printable-ASCII prompts of length 2..=max_len.
pub fn random_prompts(seed: u64, count: usize, max_len: usize) -> Vec<Vec<u32>> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|_| {
            let len = 2 + rng.below((max_len - 1) as u64) as usize;
            (0..len).map(|_| 32 + rng.below(95) as u32).collect()
        })
        .collect()
}
