//! Operator-learning laboratory for dynamical systems with finite-regularity
//! solutions.
//!
//! The crate bundles everything needed to reproduce, at desk scale, an
//! operator-learning pipeline for three problems — the Izhikevich neuron
//! model, a tempered fractional leaky integrate-and-fire model, and the 1D
//! Euler Riemann problem:
//!
//! - [`tensor`]: dense float64 arrays with taped reverse-mode differentiation;
//! - [`solvers`]: reference solvers that generate ground truth (RK4 with reset
//!   map, corrected L1 scheme for tempered Caputo derivatives, exact Riemann
//!   solver);
//! - [`nn`]: the encoder-decoder operator transformer with Fourier-type
//!   linear attention and cross-attention;
//! - [`optim`]: Adam and Lion with 1cycle / polynomial schedules;
//! - [`datasets`]: corpus generation, normalization, and bit-exact
//!   persistence;
//! - [`train`]: relative-l2 loss, the training loop, ensembles, checkpoints.

pub mod nn;
pub mod optim;
pub mod solvers;
pub mod tensor;
