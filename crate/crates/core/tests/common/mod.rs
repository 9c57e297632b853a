#![allow(dead_code)]

use dsgg_autodiff::{ParamStore, Tensor};
use dsgg_core::{ModelConfig, Toggles};
use dsgg_metrics::TaskMode;
use dsgg_synth::{generate, Corpus, GeneratorConfig};
use rand::Rng;

/// 2 videos × 3 frames × 3 objects, 3 object classes, 4 predicates.
pub fn tiny_corpus(seed: u64) -> Corpus {
    generate(&GeneratorConfig {
        object_classes: 3,
        predicate_classes: 4,
        videos: 2,
        frames: 3,
        objects_min: 3,
        objects_max: 3,
        feature_dim: 8,
        seed,
        ..Default::default()
    })
    .unwrap()
}

/// `D_rel = 2·4 + 4 + 2·2 = 16`, two mixture components.
pub fn tiny_config(task: TaskMode, toggles: Toggles) -> ModelConfig {
    ModelConfig {
        task,
        object_classes: 3,
        predicate_classes: 4,
        feature_dim: 8,
        d_v: 4,
        d_u: 4,
        d_s: 2,
        heads: 2,
        ffn_mult: 2,
        seq_layers: 1,
        spatial_layers: 1,
        temporal_layers: 1,
        eta: 2,
        stride: 2,
        gmm_k: 2,
        lambda: 0.5,
        toggles,
    }
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Perturbs every parameter so biases and norm gains are not at their
/// symmetric initial values.
pub fn jitter(store: &mut ParamStore, rng: &mut impl Rng, scale: f64) {
    for (_, t) in store.iter_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

pub type M = Vec<Vec<f64>>;

pub fn rows(t: &Tensor) -> M {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn mm(a: &M, b: &M) -> M {
    a.iter().map(|r| (0..b[0].len()).map(|j| r.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect()).collect()
}

pub fn transpose(a: &M) -> M {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn add_row(a: &M, b: &[f64]) -> M {
    a.iter().map(|x| x.iter().zip(b).map(|(p, q)| p + q).collect()).collect()
}

pub fn cols(a: &M, start: usize, len: usize) -> M {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn layer_norm(a: &M, gain: &[f64], bias: &[f64], eps: f64) -> M {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            r.iter().enumerate().map(|(i, x)| (x - mean) / (var + eps).sqrt() * gain[i] + bias[i]).collect()
        })
        .collect()
}

/// Scaled dot-product attention where `allow(i, j)` selects visible keys.
pub fn attend(q: &M, k: &M, v: &M, allow: impl Fn(usize, usize) -> bool) -> M {
    let scale = 1.0 / (q[0].len() as f64).sqrt();
    q.iter()
        .enumerate()
        .map(|(i, qi)| {
            let idx: Vec<usize> = (0..k.len()).filter(|&j| allow(i, j)).collect();
            let logits: Vec<f64> =
                idx.iter().map(|&j| qi.iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() * scale).collect();
            let w = softmax(&logits);
            (0..v[0].len()).map(|c| idx.iter().zip(&w).map(|(&j, wj)| wj * v[j][c]).sum()).collect()
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
