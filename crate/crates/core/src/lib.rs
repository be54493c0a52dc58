//! Concept-informed diffusion guidance for dataset distillation, built from
//! scratch at toy scale: a small reverse-mode engine, a procedural attributed
//! image dataset, a pixel-space DDPM/DDIM stack, a CLIP-style joint embedder,
//! concept banks with validity filtering and negative sampling, guided
//! generation, and a surrogate-set evaluation harness.

pub mod checkpoint;
pub mod classifier;
pub mod conceptbank;
pub mod diffusion;
pub mod embedder;
pub mod error;
pub mod evalharness;
pub mod grad;
pub mod guidance;
pub mod nn;
pub mod rng;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
