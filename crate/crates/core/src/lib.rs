//! Continuous-time chance-constrained stochastic optimal control.
//!
//! The chance constraint `P(exit through the unsafe boundary) <= Δ` is priced by a
//! dual variable `η` that is folded into the terminal cost. For each `η` the
//! inner problem is solved by path-integral Monte Carlo (`pathint`), the risk of
//! the resulting optimal policy is estimated by importance sampling (`risk`), and
//! `η` is driven to the constraint boundary by dual ascent (`dual`). A
//! method-of-lines finite-difference solver (`fdm`) solves the same backward
//! PDEs on 2-D grids and serves as a cross-check.

pub mod config;
pub mod dual;
pub mod error;
pub mod fdm;
pub mod io;
pub mod model;
pub mod pathint;
pub mod risk;
pub mod rng;
pub mod sim;

pub use dual::{dual_ascent, sweep_delta, DualMode, DualParams, DualState, SweepRow};
pub use error::{Error, Result};
pub use model::{
    builtin_car_model, builtin_velocity_model, check_lambda, phi, AffineModel, ControlAffineModel,
    CostSpec, Drift, LambdaCheck, ProblemSpec, SafeSet,
};
pub use pathint::{estimate_xi, pi_control, value_j, ControlEstimate, PIEstimate};
pub use risk::{estimate_pfail_controlled, estimate_pfail_is, RiskEstimate};
pub use sim::{rollout, sample_uncontrolled_ensemble, Ensemble, Policy, Trajectory};
