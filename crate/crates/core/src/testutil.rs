//! Shared helpers for unit tests.

pub use rand::{Rng, SeedableRng};
pub use rand_chacha::ChaCha8Rng;

use crate::tensor::{Tensor, TensorShape};

/// Uniform random f32 tensor in [-1, 1).
pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: TensorShape) -> Tensor {
    let data = (0..shape.num_elements()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Tensor::from_f32(shape, data)
}
