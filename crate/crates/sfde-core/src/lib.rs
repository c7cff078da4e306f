//! Numerical laboratory for stochastic delay reaction–diffusion equations
//! in Hilbert spaces.
//!
//! The library simulates mild solutions of
//!
//!   du = [Au + f(u_t)] dt + σ(u_t) dW(t)
//!
//! with delay history u_t = u(t+θ), θ ∈ [−h, 0], on a bounded interval
//! (spectral Dirichlet representation) or the weighted whole line (Gaussian
//! kernel), and provides the constructive machinery around long-time
//! behavior: Picard iteration on windows, successive approximations toward
//! the stationary solution, explicit smallness conditions, exponential
//! attractivity fits, and an empirical invariant-measure laboratory built on
//! ensemble averages of a fixed observable family.
//!
//! Everything stochastic is addressed by (seed, stream, counter), so any
//! experiment is bit-reproducible at any parallelism degree.

pub mod basis;
pub mod domain;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod measure;
pub mod noise;
pub mod nonlinearity;
pub mod report;
pub mod semigroup;
pub mod solvers;

pub use basis::{build_basis, EigenBasis};
pub use domain::{DomainKind, DomainSpec, Space};
pub use dynamics::{
    moment_bound_experiment, run_ensemble, run_trajectory, ModelSpec, MomentBoundReport,
    Stepper, TrajectoryStats,
};
pub use error::{CoreError, Result};
pub use field::{DelaySegment, Field, FullState};
pub use measure::{
    default_burn_in, ensemble_observables, feller_perturbation_test, homogeneity_test,
    invariance_test, krylov_bogoliubov_average, sample_stationary_additive,
    tightness_diagnostic, MeasureEstimate, ObservableFamily,
};
pub use noise::{
    extend_two_sided, sample_increment, verify_noise_estimate, NoiseIntegrand, QWienerSpec,
    RngStream, StreamFamily,
};
pub use nonlinearity::{
    eval_f, eval_sigma, lipschitz_probe, FunctionalKind, NonlinearitySpec, ScalarMap,
    ScalarShape,
};
pub use report::CheckReport;
pub use semigroup::{
    apply_semigroup, greens_function, hilbert_schmidt_norm_delay_op, verify_exponential_decay,
    verify_kernel_bound, verify_semigroup_law, verify_weighted_boundedness,
    verify_weighted_smoothing, KernelBoundReport,
};
pub use solvers::{
    attractivity_experiment, picard_map, picard_solve, smallness_check,
    stationary_successive_approx, AttractivityFit, FrozenNoise, PathApproximation,
    PicardOptions, PicardSolution, SmallnessReport, StationaryOptions, StationaryPath,
};
