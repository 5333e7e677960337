//! Minimal dense numeric core: tensors, reverse-mode autodiff, Adam, seeded
//! RNG streams, and a finite-difference gradient checker. Everything runs in
//! `f64`.

mod adam;
mod gradcheck;
mod graph;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::finite_diff_check;
pub use graph::{Gradients, Graph, Var, LOG_CLAMP};
pub use rng::{RngState, RngStream};
pub use tensor::{dot, matmul, matmul_nt, matmul_tn, norm, Tensor};

/// Uniform(±√(6/(fan_in+fan_out))) weight initialization; biases start at
/// zero and should use [`Tensor::zeros`] instead.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.uniform_in(-bound, bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree by construction")
}
