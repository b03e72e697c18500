//! Generalization error of federated local SGD: simulation, Monte-Carlo
//! bound evaluation and exact-enumeration checks.

pub mod bound;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod model;
pub mod oracle;
pub mod risk;
pub mod rng;
