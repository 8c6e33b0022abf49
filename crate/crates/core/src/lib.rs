//! Numerical engine for search markets in which firms subsidize a consumer's
//! costly inspections.
//!
//! The crate computes the refined (step–increasing–step) equilibrium of the
//! subsidized-inspection game, simulates the consumer's descending-subsidy
//! search, produces the welfare decomposition of the resulting market, and
//! solves the pricing problem of a platform that sells inspection tokens.
//!
//! Module map:
//! - [`dist`]: the type prior `F` on `[0, 1]` and its partial moments.
//! - [`attention`]: market primitives, closed-form attention functions and the
//!   reservation index.
//! - [`equilibrium`]: cutoffs, the separating schedule and incentive checks.
//! - [`search`]: the consumer's index rule, a brute-force policy oracle and a
//!   Monte Carlo market simulator.
//! - [`welfare`]: surplus accounting and comparative-statics sweeps.
//! - [`platform`]: token demand, revenue decomposition and price optimization.
//! - [`verify`]: the invariant suite behind `subsidy-search verify`.
//! - [`cli`]: configuration and command dispatch for the `subsidy-search` binary.
//!
//! Numerical helpers: [`quadrature`] (Gauss–Legendre rules), [`roots`]
//! (bisection and golden section) and [`interp`] (monotone cubic).

pub mod attention;
pub mod cli;
pub mod dist;
pub mod equilibrium;
mod error;
pub mod interp;
pub mod platform;
pub mod quadrature;
pub mod roots;
pub mod search;
pub mod verify;
pub mod welfare;

pub use attention::{q_pool, q_sep, reservation_index, MarketParams, ReservationIndex};
pub use dist::{DistKind, TypeDistribution};
pub use equilibrium::{
    boundary_gap, check_incentive_compatibility, lower_cutoff, sigma_sep, sis_schedule,
    solve_reasonable_equilibrium, upper_cutoff, EquilibriumSolution, SubsidySchedule,
};
pub use error::{Error, Result};
pub use platform::{
    optimize_price, platform_sweep, revenue_decomposition, subsidy_demand, PlatformSweep,
};
pub use search::{brute_force_consumer_value, dsir_order, simulate_market, SimulationReport};
pub use welfare::{comparative_statics_sweep, welfare_report, WelfareReport};
