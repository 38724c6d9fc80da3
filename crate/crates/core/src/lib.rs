//! Redundancy-free feature learning for generalized zero-shot recognition.
//!
//! The crate is `no_std` (with `alloc`) and contains everything that does not
//! touch the filesystem:
//!
//! - [`tape`]: a small reverse-mode differentiation engine over dense 2-D
//!   tensors, with [`optim`] (Adam, weight clipping) and [`gradcheck`].
//! - [`data`]: the dataset bundle, seen/unseen splits and a synthetic
//!   benchmark with planted, label-irrelevant background structure.
//! - [`mapper`]: the stochastic mapping `x -> p(z|x)` with reparameterized
//!   sampling and a closed-form KL to a standard-normal marginal.
//! - [`embed`]: the bounded-information semantic-embedding framework.
//! - [`gen`]: the bounded-information feature-generation framework.
//! - [`eval`]: the final classifier and per-class GZSL metrics.

#![no_std]

extern crate alloc;

pub mod classifier;
pub mod data;
pub mod dual;
pub mod embed;
pub mod error;
pub mod eval;
pub mod gen;
pub mod gradcheck;
pub mod mapper;
pub mod nn;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};

/// Deterministic random generator used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
