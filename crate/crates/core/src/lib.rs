//! Numerical laboratory for the homogenized integrand of degenerate
//! linear-growth random functionals `f(ω, x, ξ) = |ξ Λ(ω, x)| + λ(ω, x)`.
//!
//! The crate is organized bottom up:
//!
//! * [`field`] and [`distribution`]: stationary random weight fields on unit
//!   cells, keyed by a counter-based generator ([`rng`]).
//! * [`integrand`]: the integrand, matrices and the growth constants.
//! * [`grid`], [`solver`], [`poisson`]: discretization and the certified cell
//!   solver.
//! * [`dump`]: binary minimizer dumps.
//! * [`glue`]: the layered cutoff construction of the fundamental estimate.
//! * [`homogenizer`]: Monte Carlo estimation of `f_hom` and property checks.
//! * [`degeneracy`]: the infinite-mean and zero-cost-interface regimes.
//!
//! The solver, the gluing and the matrix type are generic over [`Scalar`]
//! (`f32` or `f64`); `*64` aliases fix the double precision instantiation used
//! by the statistical layer.

pub mod degeneracy;
pub mod distribution;
pub mod dump;
pub mod error;
pub mod field;
pub mod glue;
pub mod grid;
pub mod homogenizer;
pub mod integrand;
pub mod poisson;
pub mod rng;
pub mod scalar;
pub mod solver;
pub mod stats;

pub use distribution::DistributionSpec;
pub use error::{Error, Result};
pub use field::{birkhoff_average, sample_field, shift, AxisBox, Diagonal, FieldSample, FieldSpec, Observable, Structure};
pub use degeneracy::{
    cheap_interface, divergence_experiment, hitting_statistics, interface_limit_check, DivergenceReport, HittingStats,
    InterfaceProbe, ProbeSettings,
};
pub use glue::{energy_on_box, glue_with_cutoff, layer_count, GlueReport};
pub use grid::Grid;
pub use homogenizer::{
    check_rank_one_convexity, check_stationarity_in_law, check_subadditivity, estimate_f_hom, estimate_f_hom_indexed, recession,
    verify_growth_sandwich, verify_recession, Check, HomEstimate, McSettings, PropertyReport, PropertyRun,
    RecessionSeries, SolveRecord,
};
pub use integrand::{coercivity_constant, eval_integrand, growth_constants, GrowthConstants, IntegrandModel, Matrix};
pub use scalar::Scalar;
pub use stats::Summary;
pub use solver::{assemble, mu_xi, mu_xi_at, mu_xi_on, solve_cell, CellEnergy, CellProblem, Method, ResolutionPolicy, SolveOptions, SolveReport};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type CellProblem64 = CellProblem<f64>;
pub type CellProblem32 = CellProblem<f32>;
pub type SolveReport64 = SolveReport<f64>;
pub type SolveReport32 = SolveReport<f32>;
