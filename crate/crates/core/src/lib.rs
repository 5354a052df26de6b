//! Adaptive optimizers with sparse group lasso regularization, a small
//! embedding + MLP click model to train them on, a magnitude-pruning
//! baseline, and an online regret lab.

pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod prox;
pub mod prune;
pub mod regret;
pub mod selftest;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
