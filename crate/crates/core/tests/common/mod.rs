#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signbench::nn::{LayerSpec, NetworkSpec, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// A small network using every layer type, sized by the seed.
pub fn toy_net(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let c = rng.gen_range(1..=3);
    let side = 2 * rng.gen_range(2..=4);
    let f1 = rng.gen_range(1..=4);
    let f2 = rng.gen_range(1..=3);
    let hidden = rng.gen_range(2..=6);
    let classes = rng.gen_range(2..=5);
    let half = side / 2;
    NetworkSpec {
        name: "toy".into(),
        input: [c, side, side],
        classes,
        layers: vec![
            LayerSpec::conv3x3(c, f1),
            LayerSpec::Relu,
            LayerSpec::MaxPool,
            LayerSpec::conv3x3(f1, f2),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: f2 * half * half,
                outputs: hidden,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: hidden,
                outputs: classes,
            },
        ],
    }
}

/// Convolution-only network whose last convolution produces the logits.
pub fn conv_only_net(c: usize, side: usize, f1: usize, f2: usize, classes: usize) -> NetworkSpec {
    let half = side / 2;
    NetworkSpec {
        name: "toy-conv".into(),
        input: [c, side, side],
        classes,
        layers: vec![
            LayerSpec::conv3x3(c, f1),
            LayerSpec::Relu,
            LayerSpec::MaxPool,
            LayerSpec::conv3x3(f1, f2),
            LayerSpec::Relu,
            LayerSpec::Conv {
                kernel: [half, half],
                in_ch: f2,
                out_ch: classes,
                stride: 1,
                padding: 0,
            },
            LayerSpec::Flatten,
        ],
    }
}
