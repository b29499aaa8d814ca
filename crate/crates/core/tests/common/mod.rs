#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use vinnpruner_core::{Dataset, LayerSpec, Model, Tensor};

pub fn fixtures_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn rng(seed: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(seed)
}

pub fn uniform(rng: &mut Xoshiro256StarStar, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Either a small MLP or a small CNN with random weights.
pub fn random_model(rng: &mut Xoshiro256StarStar) -> Model {
    if rng.random_bool(0.5) {
        let depth = rng.random_range(1..=3);
        let mut width = rng.random_range(1..=12);
        let input = width;
        let mut layers = Vec::new();
        for d in 0..depth {
            let out = if d + 1 == depth { rng.random_range(2..=5) } else { rng.random_range(1..=12) };
            layers.push(LayerSpec::Dense {
                weight: uniform(rng, vec![out, width]),
                bias: uniform(rng, vec![out]),
            });
            if d + 1 < depth {
                layers.push(LayerSpec::Relu);
            }
            width = out;
        }
        Model::new("random-mlp", vec![input], layers).unwrap()
    } else {
        let cin = rng.random_range(1..=3);
        let c1 = rng.random_range(1..=4);
        let side = rng.random_range(4..=7);
        let padding = rng.random_range(0..=1);
        let stride = rng.random_range(1..=2);
        let model_input = vec![cin, side, side];
        let conv = LayerSpec::Conv2d {
            weight: uniform(rng, vec![c1, cin, 3, 3]),
            bias: uniform(rng, vec![c1]),
            stride,
            padding,
        };
        let out_side = (side + 2 * padding - 3) / stride + 1;
        let mut layers = vec![conv, LayerSpec::Relu];
        let mut flat = c1 * out_side * out_side;
        if out_side >= 2 && rng.random_bool(0.5) {
            layers.push(LayerSpec::Maxpool2d { window: 2, stride: 2 });
            let p = (out_side - 2) / 2 + 1;
            flat = c1 * p * p;
        }
        layers.push(LayerSpec::Flatten);
        let classes = rng.random_range(2..=4);
        layers.push(LayerSpec::Dense {
            weight: uniform(rng, vec![classes, flat]),
            bias: uniform(rng, vec![classes]),
        });
        Model::new("random-cnn", model_input, layers).unwrap()
    }
}

pub fn random_input(rng: &mut Xoshiro256StarStar, model: &Model) -> Tensor {
    uniform(rng, model.input_shape.clone())
}

pub fn random_dataset(rng: &mut Xoshiro256StarStar, model: &Model, n: usize) -> Dataset {
    let classes = model.num_classes();
    let mut shape = vec![n];
    shape.extend(&model.input_shape);
    Dataset::new(
        "random",
        uniform(rng, shape),
        (0..n).map(|_| rng.random_range(0..classes)).collect(),
        (0..classes).map(|c| format!("c{c}")).collect(),
    )
    .unwrap()
}
