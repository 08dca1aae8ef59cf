//! Ground-truth generators for the three problems: the Izhikevich neuron
//! model (RK4 with a reset map), the tempered fractional LIF model (corrected
//! L1 scheme on an adaptive mesh), and the 1D Euler Riemann problem (exact
//! self-similar solution).
//!
//! All solvers are pure functions of their inputs and trivially parallel
//! across samples.

mod fractional;
mod izhikevich;
mod mesh;
mod riemann;

pub use fractional::{solve_tempered_lif, tempered_caputo_l1, TemperedFracParams};
pub use izhikevich::{
    izhikevich_equilibrium, solve_izhikevich, IzhikevichParams, IzhikevichTrajectory, SpikeForcing,
};
pub use mesh::{adaptive_mesh, MeshSpec};
pub use riemann::{
    riemann_exact, star_state, RiemannFields, RiemannSetup, RiemannState, StarState, WaveKind,
};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solution blew up at t = {t}: |{variable}| = {value:.3e}")]
    BlowUp {
        t: f64,
        variable: &'static str,
        value: f64,
    },
    #[error("fractional order alpha = {alpha} outside the supported range")]
    UnsupportedOrder { alpha: f64 },
    #[error("non-finite history sum at mesh node {node}")]
    NonFiniteHistory { node: usize },
    #[error("mesh is not strictly increasing at index {index}")]
    InvalidMesh { index: usize },
    #[error("initial states would generate vacuum: {0}")]
    Vacuum(String),
    #[error("star-state iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("invalid solver input: {0}")]
    Invalid(String),
}
