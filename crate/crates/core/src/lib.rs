//! Selection-mutation dynamics for populations distributed over a finite set of
//! strategies.
//!
//! A population is an [`AtomicMeasure`] over a [`StrategySpace`]. Individuals with
//! strategy `i` give birth at rate `B(s, i)` and die at rate `D(s, i)`, where `s` is
//! the total population; a fraction `gamma[i][j]` of the offspring of strategy `i`
//! carries strategy `j`. The crate provides
//!
//! * carrying capacities, fitness comparisons and ESS checks ([`vitals`]),
//! * mutation kernels and their structural predicates ([`kernel`]),
//! * a positivity-preserving integrator and an equilibrium solver ([`dynamics`]),
//! * checkers for permanence, persistence, Lyapunov monotonicity and convergence
//!   to Dirac equilibria ([`analysis`]).

pub mod analysis;
pub mod dynamics;
mod error;
pub mod kernel;
pub mod linalg;
pub mod measure;
pub mod vitals;

pub use analysis::{
    ass_verdict, choose_c, lyapunov_series, permanence_check, persistence_certificate, ratio_diagnostic,
    ConvergenceVerdict, Irreducibility, LyapunovKind, LyapunovReport, PermanenceReport, PersistenceCertificate,
    RatioReport,
};
pub use dynamics::{
    continuation, find_equilibrium, integrate, jacobian_at, vector_field, verify_integral_representation,
    ContinuationEntry, EquilibriumResult, IntegratorConfig, JacobianReport, StepStats, Trajectory,
};
pub use error::{Error, Result};
pub use kernel::MutationKernel;
pub use measure::{AtomicMeasure, StrategySpace, Subset, TestFunctionFamily};
pub use vitals::{CarryingProfile, Logistic, RateModel, Ricker, Tabulated, Vitals};
