//! Pathwise simulation of the inviscid dyadic shell model with additive noise
//! on the first shell, and numerical checks of its a-priori bounds, regularity,
//! contraction and stationary behaviour.

pub mod analysis;
pub mod assignment;
pub mod bounds;
pub mod error;
pub mod integrator;
pub mod model;
pub mod noise;
pub mod rng;
pub mod stationary;

pub use analysis::{
    check_energy_bound, check_u0_bound, continuity_modulus, couple, fit_decay_slope,
    regularity_profile, BoundReport, CouplingResult, SlopeFit,
};
pub use bounds::BoundConstants;
pub use error::{DyadicError, FaultKind, Result};
pub use integrator::{
    integrate, integrate_thinned, reference_solve, reference_solve_with, stable_dt, step,
    Positivity, Scheme, SchemeConfig, Trajectory,
};
pub use model::{drift, flux, sobolev_norm_sq, ModelParams, ShellState, SobolevIndex};
pub use noise::{refine, sample_brownian, sup_norm, NoisePath};
pub use stationary::{
    long_run, stationarity_gap, uniqueness_experiment, wasserstein2, EmpiricalMeasure,
};
