//! Deterministic pseudo-random parameter initialization.
//!
//! A single ChaCha8 stream keyed by the seed fills parameters in node order:
//! conv and tconv weights are Kaiming-scaled normals (std = sqrt(2/fan_in)),
//! biases start at zero, and batch-norm parameters are drawn near identity
//! (gamma in [0.8, 1.2], variance in [0.5, 1.5], beta and mean near zero) so
//! that folding and quantization are exercised on non-trivial statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerKind, ModelGraph};
use crate::tensor::{Tensor, TensorShape};

pub fn init_params(mut graph: ModelGraph, seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for node in &mut graph.nodes {
        match &mut node.kind {
            LayerKind::Conv3x3 { weights, bias } => {
                let fan_in = weights.shape.c * 9;
                *weights = normal_tensor(&mut rng, weights.shape, (2.0 / fan_in as f64).sqrt());
                if let Some(b) = bias {
                    b.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            LayerKind::Conv1x1 { weights, bias } => {
                let fan_in = weights.shape.c;
                *weights = normal_tensor(&mut rng, weights.shape, (2.0 / fan_in as f64).sqrt());
                if let Some(b) = bias {
                    b.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            LayerKind::TConv2x2 { weights, bias } => {
                // Stride equals kernel size: each output sees one tap per
                // input channel, so fan-in is the input channel count.
                let fan_in = weights.shape.n;
                *weights = normal_tensor(&mut rng, weights.shape, (2.0 / fan_in as f64).sqrt());
                bias.iter_mut().for_each(|v| *v = 0.0);
            }
            LayerKind::BatchNorm { gamma, beta, mean, var, .. } => {
                for g in gamma.iter_mut() {
                    *g = rng.gen_range(0.8f64..1.2) as f32;
                }
                for b in beta.iter_mut() {
                    *b = (normal(&mut rng) * 0.05) as f32;
                }
                for m in mean.iter_mut() {
                    *m = (normal(&mut rng) * 0.05) as f32;
                }
                for v in var.iter_mut() {
                    *v = rng.gen_range(0.5f64..1.5) as f32;
                }
            }
            _ => {}
        }
    }
    graph
}

/// Standard normal via Box-Muller on two uniform draws.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: TensorShape, std: f64) -> Tensor {
    let data = (0..shape.num_elements()).map(|_| (normal(rng) * std) as f32).collect();
    Tensor::from_f32(shape, data)
}
