//! Directional rotary position embedding (DRoPE) and the attention regimes it
//! is compared against.
//!
//! The crate is `no_std` (it needs `alloc`) and is split into:
//!
//! - [`rotary`]: 2D rotations, the multi-frequency position embedding and the
//!   single-frequency heading embedding.
//! - [`attention`]: plain, relative-position (RPE), rotary (RoPE) and the two
//!   DRoPE-RoPE integrations, self and cross, with an analytic backward pass.
//! - [`profiler`]: exact scalar-count and FLOP ledgers for every variant.
//! - [`pipeline`]: a small trajectory-generation model with kinematic rollout
//!   over synthetic scenes.
//! - [`verify`]: the invariance suite driven by the command-line harness.
//!
//! Scalars are `f64` everywhere on the numerical path.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
mod error;
pub mod nn;
pub mod pipeline;
pub mod profiler;
pub mod rng;
pub mod rotary;
pub mod verify;

pub use error::{Error, Result};
