//! Truncated Euler-Maruyama integration for non-autonomous SDEs whose
//! coefficients are Hoelder continuous in time and may grow super-linearly
//! in the state, extended to time-changed SDEs through inverse-subordinator
//! composition, with a Monte Carlo lab that estimates strong errors on
//! coupled paths and fits empirical convergence rates.
//!
//! Modules:
//! * [`model`] — SDE problems, built-in examples, assumption probes
//! * [`noise`] — counter-addressed Brownian grids with exact coarsening
//! * [`truncated_em`] — truncation policy and the scheme itself
//! * [`subordinator`] — stable subordinators, inverses, time-changed solves
//! * [`error_lab`] — coupled strong-error sweeps, moments, rate regression
//! * [`rng`] — the underlying counter-based generator

pub mod error_lab;
pub mod errors;
pub mod model;
pub mod noise;
pub mod rng;
pub mod subordinator;
pub mod truncated_em;

pub use errors::{SimError, SimResult};
pub use error_lab::{
    moment_sweep, regress_rate, step_gap_estimate, strong_error_sweep, write_error_report_csv,
    write_moment_csv, ErrorReport, ErrorRow, MomentRow, ReferenceKind, Regression, SweepConfig,
};
pub use model::{
    builtin_problem, evaluate_diffusion, evaluate_drift, probe_monotonicity,
    probe_monotonicity_with_bound, AssumptionProbeReport, CoeffFn, PowerLawBound, ProbeCheck,
    ProbeViolation, SdeProblem, BUILTIN_NAMES, DEFAULT_PROBE_RATIO_BOUND,
};
pub use noise::{coarsen_brownian, generate_brownian, generate_brownian_span, BrownianPath};
pub use subordinator::{
    coarsen_subordinator, invert_subordinator, sample_stable_increment, simulate_subordinator,
    simulate_subordinator_aligned, solve_time_changed, solve_time_changed_with_walk,
    InverseSubordinatorPath, SubordinatorPath, SubordinatorSpec,
};
pub use truncated_em::{
    solve_truncated_em, solve_truncated_em_continuous, step_truncated_em, truncate_state,
    ContinuousVersion, SchemeMode, TrajectoryGrid, TruncationPolicy,
};
