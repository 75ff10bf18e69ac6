//! Adversarial instance-level denoising for distantly supervised relation
//! extraction.
//!
//! Distant supervision labels every sentence that mentions an entity pair
//! with the pair's knowledge-base relation, which is wrong for many
//! sentences. This crate trains a sentence-level discriminator and an
//! adversarial sampler against each other to find those wrong labels: the
//! sampler learns to pick the sentences the discriminator handles worst,
//! and the discriminator learns to score true mentions above the sampled
//! confusing ones. Confident instances are promoted out of the noisy pool
//! as training progresses.
//!
//! Everything is implemented directly on `f64` tensors with hand-written
//! backward passes — no autodiff, no BLAS — so every gradient can be (and
//! is) verified against central finite differences.

pub mod adversarial;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
