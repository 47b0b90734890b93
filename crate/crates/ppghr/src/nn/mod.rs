//! Minimal f64 neural-network engine: a named parameter store, layers with
//! explicit forward/backward passes, and Adam-family optimizers.
//!
//! The engine is deliberately small: the model family built on top of it is
//! fixed (conv stems, one attention module, dense or deconv heads), so each
//! layer carries its own cache type instead of a general autograd tape.
//! Gradient correctness is pinned by finite-difference tests at the model
//! level.

pub mod layers;
pub mod optim;
pub mod param;

pub use optim::Adam;
pub use param::{Init, ParamId, ParamStore};
