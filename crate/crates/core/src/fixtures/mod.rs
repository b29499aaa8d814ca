//! Deterministic fixture generation.
//!
//! All randomness comes from xoshiro256** seeded through SplitMix64
//! (`Xoshiro256StarStar::seed_from_u64`). Independent streams are obtained by
//! jumping: stream `k` is the seeded generator advanced by `k` calls to `jump()`
//! (2^128 steps each).
//!
//! Output layout under the fixture root:
//!
//! ```text
//! models/mlp-blobs      16-32-32-4 dense MLP
//! models/cnn-shapes     conv(4,3x3) relu maxpool(2) conv(8,3x3) relu flatten dense(4)
//! datasets/blobs-{train,test}    4-class Gaussian blobs, 16 features, 400 / 200 samples
//! datasets/shapes-{train,test}   8x8 bars / diagonal / blank, 400 / 200 samples
//! golden/golden.json             evaluation facts recorded at generation time
//! ```

pub mod data;
pub mod train;

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::engine;
use crate::error::{Error, Result};
use crate::featuremaps::low_activation_channels;
use crate::mask::MaskSet;
use crate::metrics::evaluate;
use crate::model::{Dataset, LayerSpec, Model};
use crate::persistence::{save_dataset, save_model};
use crate::prune::{apply_edits, prune_step_masks, Algorithm, EditOp, MaskEdit, PruneSettings};
use crate::tensor::Tensor;
use train::DenseParams;

pub const DEFAULT_SEED: u64 = 20220601;
pub const MIN_TEST_ACCURACY: f64 = 0.90;

pub const MLP_NAME: &str = "mlp-blobs";
pub const CNN_NAME: &str = "cnn-shapes";
pub const BLOBS_TRAIN: &str = "blobs-train";
pub const BLOBS_TEST: &str = "blobs-test";
pub const SHAPES_TRAIN: &str = "shapes-train";
pub const SHAPES_TEST: &str = "shapes-test";
pub const GOLDEN_FILE: &str = "golden/golden.json";

pub const MLP_LEARNING_RATE: f64 = 0.1;
pub const MLP_EPOCHS: usize = 300;
pub const CNN_LEARNING_RATE: f64 = 0.01;
pub const CNN_EPOCHS: usize = 600;

/// Layer index of the second convolution in the fixture CNN.
pub const CNN_SECOND_CONV: usize = 3;
pub const CONTRAST_RATIO: f64 = 0.7;
pub const MAP_CHECK_RATIO: f64 = 0.5;
/// Samples and decile used to flag low-activation channels.
pub const ACTIVATION_SAMPLES: usize = 50;
pub const ACTIVATION_DECILE: f64 = 0.1;

const STREAM_BLOBS: usize = 0;
const STREAM_MLP_INIT: usize = 1;
const STREAM_SHAPES: usize = 2;
const STREAM_CONV_JITTER: usize = 3;

pub fn stream(seed: u64, k: usize) -> Xoshiro256StarStar {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    for _ in 0..k {
        rng.jump();
    }
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenEval {
    pub accuracy: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpGolden {
    pub model: String,
    pub dataset: String,
    pub train_accuracy: f64,
    pub baseline: GoldenEval,
    /// One MAP step at `ratio` over every weighted layer.
    pub map_step: GoldenEval,
    pub map_ratio: f64,
    pub map_pruned: Vec<usize>,
    pub map_digest: String,
    pub lap_step: GoldenEval,
    pub lap_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnGolden {
    pub model: String,
    pub dataset: String,
    pub train_accuracy: f64,
    pub baseline: GoldenEval,
    /// `(layer, channel)` pairs whose mean |activation| is in the bottom decile.
    pub low_activation_channels: Vec<(usize, usize)>,
    pub channel_elimination: GoldenEval,
    pub contrast_layer: usize,
    pub contrast_ratio: f64,
    pub lap_full_rows: Vec<usize>,
    pub map_full_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Golden {
    pub seed: u64,
    pub mlp: MlpGolden,
    pub cnn: CnnGolden,
}

impl Golden {
    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(GOLDEN_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|source| Error::Json { path, source })
    }
}

fn golden_eval(model: &Model, masks: &MaskSet, dataset: &Dataset) -> Result<GoldenEval> {
    let r = evaluate(model, masks, dataset)?;
    Ok(GoldenEval {
        accuracy: r.accuracy,
        mean_loss: r.mean_loss,
    })
}

fn dense(p: &DenseParams) -> Result<LayerSpec> {
    Ok(LayerSpec::Dense {
        weight: Tensor::new(vec![p.out_units, p.in_units], p.weight.clone())?,
        bias: Tensor::new(vec![p.out_units], p.bias.clone())?,
    })
}

fn rows(dataset: &Dataset) -> Vec<Vec<f32>> {
    (0..dataset.len())
        .map(|i| dataset.samples.slice_outer(i).into_data())
        .collect()
}

fn require(what: &str, accuracy: f64) -> Result<()> {
    if accuracy < MIN_TEST_ACCURACY {
        return Err(Error::Fixture(format!(
            "{what} reached test accuracy {accuracy:.4}, below the required {MIN_TEST_ACCURACY}"
        )));
    }
    Ok(())
}

/// Trains the 16-32-32-4 MLP on the blob training set.
pub fn build_mlp(seed: u64, train: &Dataset) -> Result<Model> {
    let mut rng = stream(seed, STREAM_MLP_INIT);
    let sizes = [(32, 16), (32, 32), (4, 32)];
    let mut params: Vec<DenseParams> = sizes
        .iter()
        .map(|&(out, inp)| {
            let he = Normal::new(0.0, (2.0 / inp as f64).sqrt()).expect("valid normal");
            DenseParams {
                out_units: out,
                in_units: inp,
                weight: (0..out * inp).map(|_| he.sample(&mut rng) as f32).collect(),
                bias: vec![0.0; out],
            }
        })
        .collect();
    train::train(&mut params, &rows(train), &train.labels, MLP_LEARNING_RATE, MLP_EPOCHS);
    Model::new(
        MLP_NAME,
        vec![16],
        vec![
            dense(&params[0])?,
            LayerSpec::Relu,
            dense(&params[1])?,
            LayerSpec::Relu,
            dense(&params[2])?,
        ],
    )
}

/// First-layer line detectors: horizontal, vertical, diagonal, anti-diagonal.
fn line_kernels() -> Vec<f32> {
    let h = [-1.0, -1.0, -1.0, 2.0, 2.0, 2.0, -1.0, -1.0, -1.0];
    let v = [-1.0, 2.0, -1.0, -1.0, 2.0, -1.0, -1.0, 2.0, -1.0];
    let d = [2.0, -1.0, -1.0, -1.0, 2.0, -1.0, -1.0, -1.0, 2.0];
    let a = [-1.0, -1.0, 2.0, -1.0, 2.0, -1.0, 2.0, -1.0, -1.0];
    [h, v, d, a].iter().flatten().map(|&x: &f32| x / 3.0).collect()
}

/// Second-layer kernels `[8, 4, 3, 3]`. Channel `o` pools one first-layer map
/// (`focus[o]`) with weights near +1; channels 6 and 7 are inhibitory (all
/// weights negative) so they never fire on the non-negative pooled input.
/// Every other weight is small jitter.
fn pooling_kernels(seed: u64) -> Vec<f32> {
    let focus = [0usize, 1, 2, 3, 0, 2, 1, 3];
    let mut rng = stream(seed, STREAM_CONV_JITTER);
    let jitter = Normal::new(0.0, 0.03).expect("valid normal");
    let spread = Normal::new(0.0, 0.05).expect("valid normal");
    let mut w = Vec::with_capacity(8 * 4 * 9);
    for (o, &f) in focus.iter().enumerate() {
        let inhibitory = o >= 6;
        for i in 0..4 {
            for _ in 0..9 {
                let v = if i == f {
                    1.0 + spread.sample(&mut rng) as f32
                } else {
                    jitter.sample(&mut rng) as f32
                };
                w.push(if inhibitory { -v.abs() } else { v });
            }
        }
    }
    w
}

/// Frozen hand-designed convolutions with a dense head trained from zero.
pub fn build_cnn(seed: u64, train: &Dataset) -> Result<Model> {
    let conv_layers = vec![
        LayerSpec::Conv2d {
            weight: Tensor::new(vec![4, 1, 3, 3], line_kernels())?,
            bias: Tensor::zeros(vec![4]),
            stride: 1,
            padding: 0,
        },
        LayerSpec::Relu,
        LayerSpec::Maxpool2d { window: 2, stride: 2 },
        LayerSpec::Conv2d {
            weight: Tensor::new(vec![8, 4, 3, 3], pooling_kernels(seed))?,
            bias: Tensor::zeros(vec![8]),
            stride: 1,
            padding: 0,
        },
        LayerSpec::Relu,
        LayerSpec::Flatten,
    ];
    let mut head = vec![DenseParams {
        out_units: 4,
        in_units: 8,
        weight: vec![0.0; 32],
        bias: vec![0.0; 4],
    }];
    let mut layers = conv_layers.clone();
    layers.push(dense(&head[0])?);
    let untrained = Model::new(CNN_NAME, vec![1, 8, 8], layers)?;
    let features = (0..train.len())
        .map(|i| {
            let acts = engine::run_layers(&untrained, &train.sample(i)?)?;
            Ok(acts[conv_layers.len() - 1].data().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    train::train(&mut head, &features, &train.labels, CNN_LEARNING_RATE, CNN_EPOCHS);
    let mut layers = conv_layers;
    layers.push(dense(&head[0])?);
    Model::new(CNN_NAME, vec![1, 8, 8], layers)
}

/// Writes every fixture archive and the golden facts under `root`.
pub fn generate_fixtures(root: &Path, seed: u64) -> Result<Golden> {
    let mut blob_rng = stream(seed, STREAM_BLOBS);
    let centers = data::blob_centers(&mut blob_rng);
    let blobs_train = data::blobs(BLOBS_TRAIN, &centers, 100, &mut blob_rng)?;
    let blobs_test = data::blobs(BLOBS_TEST, &centers, 50, &mut blob_rng)?;
    let mut shape_rng = stream(seed, STREAM_SHAPES);
    let shapes_train = data::shapes(SHAPES_TRAIN, 100, &mut shape_rng)?;
    let shapes_test = data::shapes(SHAPES_TEST, 50, &mut shape_rng)?;

    let mlp = build_mlp(seed, &blobs_train)?;
    let cnn = build_cnn(seed, &shapes_train)?;

    let mlp_golden = mlp_facts(&mlp, &blobs_train, &blobs_test)?;
    require("fixture MLP", mlp_golden.baseline.accuracy)?;
    let cnn_golden = cnn_facts(&cnn, &shapes_train, &shapes_test)?;
    require("fixture CNN", cnn_golden.baseline.accuracy)?;
    if cnn_golden.lap_full_rows.is_empty() || !cnn_golden.map_full_rows.is_empty() {
        return Err(Error::Fixture(format!(
            "expected LAP to empty a channel row of layer {CNN_SECOND_CONV} and MAP not to, got LAP {:?} MAP {:?}",
            cnn_golden.lap_full_rows, cnn_golden.map_full_rows
        )));
    }

    save_model(&mlp, &root.join("models").join(MLP_NAME))?;
    save_model(&cnn, &root.join("models").join(CNN_NAME))?;
    for ds in [&blobs_train, &blobs_test, &shapes_train, &shapes_test] {
        save_dataset(ds, &root.join("datasets").join(&ds.name))?;
    }
    let golden = Golden {
        seed,
        mlp: mlp_golden,
        cnn: cnn_golden,
    };
    let path = root.join(GOLDEN_FILE);
    std::fs::create_dir_all(path.parent().expect("golden dir")).map_err(|e| Error::io(&path, e))?;
    let mut bytes = serde_json::to_vec_pretty(&golden).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    bytes.push(b'\n');
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(golden)
}

fn mlp_facts(mlp: &Model, train: &Dataset, test: &Dataset) -> Result<MlpGolden> {
    let ones = MaskSet::all_ones(mlp);
    let map = prune_step_masks(mlp, &ones, &PruneSettings::new(Algorithm::Map, MAP_CHECK_RATIO))?;
    let lap = prune_step_masks(mlp, &ones, &PruneSettings::new(Algorithm::Lap, MAP_CHECK_RATIO))?;
    Ok(MlpGolden {
        model: MLP_NAME.into(),
        dataset: BLOBS_TEST.into(),
        train_accuracy: evaluate(mlp, &ones, train)?.accuracy,
        baseline: golden_eval(mlp, &ones, test)?,
        map_step: golden_eval(mlp, &map, test)?,
        map_ratio: MAP_CHECK_RATIO,
        map_pruned: map.iter().map(|m| m.pruned_count()).collect(),
        map_digest: map.digest(),
        lap_step: golden_eval(mlp, &lap, test)?,
        lap_digest: lap.digest(),
    })
}

fn cnn_facts(cnn: &Model, train: &Dataset, test: &Dataset) -> Result<CnnGolden> {
    let ones = MaskSet::all_ones(cnn);
    let low = low_activation_channels(cnn, &ones, test, ACTIVATION_SAMPLES, ACTIVATION_DECILE)?;
    let edits: Vec<MaskEdit> = low
        .iter()
        .map(|&(layer, channel)| MaskEdit::new(layer, EditOp::PruneChannel { channel }))
        .collect();
    let eliminated = apply_edits(cnn, &ones, &edits)?;
    let settings = |a| PruneSettings::new(a, CONTRAST_RATIO);
    let lap = prune_step_masks(cnn, &ones, &settings(Algorithm::Lap))?;
    let map = prune_step_masks(cnn, &ones, &settings(Algorithm::Map))?;
    let full_rows = |m: &MaskSet| m.get(CNN_SECOND_CONV).map(|m| m.fully_pruned_channels()).unwrap_or_default();
    Ok(CnnGolden {
        model: CNN_NAME.into(),
        dataset: SHAPES_TEST.into(),
        train_accuracy: evaluate(cnn, &ones, train)?.accuracy,
        baseline: golden_eval(cnn, &ones, test)?,
        low_activation_channels: low,
        channel_elimination: golden_eval(cnn, &eliminated, test)?,
        contrast_layer: CNN_SECOND_CONV,
        contrast_ratio: CONTRAST_RATIO,
        lap_full_rows: full_rows(&lap),
        map_full_rows: full_rows(&map),
    })
}

/// Generation is pure given the seed; `Arc` wrappers for callers building sessions.
pub fn load_pair(root: &Path, model: &str, dataset: &str) -> Result<(Arc<Model>, Arc<Dataset>)> {
    let m = crate::persistence::load_model(&root.join("models").join(model))?;
    let d = crate::persistence::load_dataset(&root.join("datasets").join(dataset))?;
    Ok((Arc::new(m), Arc::new(d)))
}
