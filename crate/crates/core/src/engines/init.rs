use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{EngineConfig, Tensor, WeightArchive};

/// Archive with every tensor zero. Such an engine predicts the uniform
/// distribution everywhere.
pub fn zero_archive(config: &EngineConfig) -> WeightArchive {
    let mut a = WeightArchive::new();
    for (name, shape) in config.required_tensors() {
        a.insert(name, Tensor::zeros(&shape));
    }
    a
}

/// Random weights at scales that keep activations O(1). Tensors are drawn
/// in the config's fixed order from a single seeded stream.
pub fn random_archive(config: &EngineConfig, seed: u64) -> WeightArchive {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = WeightArchive::new();
    for (name, shape) in config.required_tensors() {
        let n: usize = shape.iter().product();
        let leaf = name.rsplit('.').next().unwrap_or(&name);
        let data: Vec<f32> = if shape.len() == 1 {
            let (lo, hi) = match leaf {
                "time_decay" | "time_first" => (-1.0, 1.0),
                "time_mix_k" | "time_mix_v" | "time_mix_r" => (0.0, 1.0),
                // softplus^-1 of step sizes in roughly [0.01, 0.2]
                "bias" if name.contains("dt_proj") => (-4.6, -1.5),
                "weight" | "D" => (0.5, 1.5),
                _ => (-0.1, 0.1),
            };
            (0..n).map(|_| rng.random_range(lo..hi)).collect()
        } else if leaf == "A_log" {
            let d_state = shape[1];
            (0..n).map(|i| (1.0 + (i % d_state) as f32).ln() + rng.random_range(-0.1..0.1)).collect()
        } else {
            let fan_in = shape[1] as f64;
            let std = if name == "embed.weight" { 1.0 } else { 1.0 / fan_in.sqrt() };
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
        };
        a.insert(name, Tensor::new(shape, data));
    }
    a
}
