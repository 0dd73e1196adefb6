//! Numerical tools for the continuity equation and first-order mean field
//! games on the Heisenberg torus `H^1 / Z^3`.
//!
//! The crate is organised bottom-up:
//!
//! * [`group`]: the group law, dilations, homogeneous norm, the pavage
//!   decomposition `x = n ⊕ q` and the torus distance.
//! * [`grid`]: Heisenberg-periodic scalar fields on a uniform grid over
//!   `[0,1)^3`, with interpolation that honours the twisted face
//!   identifications.
//! * [`mollifier`]: the homogeneous kernel `ρ_ε` and group convolution of
//!   grid fields and atomic measures.
//! * [`measure`] and [`transport`]: particle clouds, push-forward, and the
//!   Kantorovich-Rubinstein distance with ground metric `d_T`.
//! * [`continuity`]: characteristics of horizontal drifts, the measure flow
//!   they induce, and weak-form residuals.
//! * [`hjb`]: semi-Lagrangian dynamic programming for the value function and
//!   its optimal-synthesis drift.
//! * [`mfg`]: the fictitious-play loop coupling the two, with an optimality
//!   certificate for the resulting equilibrium.
//! * [`viscous`]: Euler-Maruyama simulation of the horizontal diffusion used
//!   to check the vanishing-viscosity limit.

pub mod continuity;
pub mod grid;
pub mod group;
pub mod hjb;
pub mod measure;
pub mod mfg;
pub mod mollifier;
pub mod stats;
pub mod testfn;
pub mod transport;
pub mod viscous;

pub use grid::{GridField, Resolution};
pub use group::{
    dilate, group_mul, h_dist, h_norm, horizontal_frame, inverse, pavage, project, torus_dist,
    HPoint, HorizontalFrame, PavageDecomposition,
};
pub use measure::ParticleCloud;
pub use mollifier::Kernel;

/// Errors produced by the solvers and file readers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kernel support radius {support:.4} exceeds the configured halo of {halo} cell(s); use a smaller epsilon or a wider halo")]
    KernelTooWide { support: f64, halo: i64 },

    #[error("mollified density {value:e} below 1e-14 at grid node {node}; upstream normalisation is broken")]
    DegenerateDensity { value: f64, node: usize },

    #[error("transport problem {rows}x{cols} exceeds the exact solver cap of {cap} cells; use sinkhorn_d1 instead")]
    TransportTooLarge { rows: usize, cols: usize, cap: usize },

    #[error("sinkhorn did not converge after {iterations} iterations (marginal residual {residual:e})")]
    SinkhornNotConverged { iterations: usize, residual: f64 },

    #[error("network simplex stopped after {0} pivots without reaching optimality")]
    PivotLimit(usize),

    #[error("non-finite state at t = {time} ({context})")]
    NonFinite { time: f64, context: String },

    #[error("{source_name}: row {row}: {message}")]
    Parse {
        source_name: String,
        row: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
