//! Compressed convolutional networks as tensor regression.
//!
//! A conv → average-pool → fully-connected network with linear activation is
//! a linear function of its input, `y = ⟨X, W_X⟩`, and the composite weight
//! inherits any Tucker or CP structure of the stacked kernel. The modules here
//! build that weight ([`linearize`]), count parameters against sample
//! complexity ([`complexity`]), decompose kernels ([`decomposition`]), fit the
//! factorized model by gradient descent ([`estimation`]) and run the
//! simulation studies ([`experiments`]). [`cli`] backs the `cnnr` binary.

pub mod cli;
pub mod complexity;
pub mod decomposition;
pub mod estimation;
pub mod experiments;
pub mod linearize;
pub mod random;
pub mod tensor;
pub mod verify;
