//! Weight-sharing differentiable architecture search with layer-alignment
//! regularization, plus the brute-force oracles used to check it.

pub mod alignment;
pub mod autodiff;
pub mod data;
pub mod diagnostics;
pub mod experiment;
pub mod fixtures;
pub mod matrix;
pub mod oracle;
pub mod search_space;
pub mod supernet;
pub mod trainer;
pub mod verify;

pub use matrix::RowMatrix;
