//! Coupled-channel thermodynamic invariants on entropy surfaces.
//!
//! Given an entropy surface `S(q)`, this crate computes the Ruppeiner metric
//! `g = -Hessian(S)`, the coupling one-form `omega_i`, traces entropy level
//! sets, accumulates the coupling coefficients `zeta_i = lambda_i exp(int omega_i)`
//! and checks that `zeta_i T_i` stays constant along them. On the granular
//! `(V, sigma)` toy surface it also evaluates the dilatancy ratio, metric
//! stability and the coupling-corrected Rowe stress ratio.
//!
//! ```
//! use mcte_core::{invariant_check, trace_level_set, zeta_along_path};
//! use mcte_core::{EntropySurface, StepControl, ToyGranularParams, STRESS, VOLUME};
//!
//! let surface = EntropySurface::toy(ToyGranularParams::default()).unwrap();
//! let ctrl = StepControl::default();
//! let path = trace_level_set(&surface, &[0.78, 0.1], STRESS, 0.6, &ctrl).unwrap();
//! let path = zeta_along_path(&surface, &path, VOLUME, 1.0, &ctrl).unwrap();
//! assert!(invariant_check(&path).max_rel_drift[VOLUME] < 1e-10);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contour;
pub mod error;
pub mod fluctuation;
pub mod geometry;
pub mod levelset;
pub mod ode;
pub mod output;
pub mod predictions;
pub mod quadrature;
pub mod runner;
pub mod surface;
pub mod tabulated;

pub use error::{McteError, Result};
pub use fluctuation::{sample_metric, sample_metric_chains, OracleReport, SamplerConfig};
pub use geometry::{
    bisect_critical, classify_stability, correction_estimate, levelset_flow_rhs, metric_at,
    metric_tensor, normal_projection, omega_at, scalar_zeta_coefficient, stability_det,
    MetricPoint, NormalProjection, OneFormValue, StabilityClass,
};
pub use levelset::{
    calibrated_lambdas, holonomy, invariant_check, sign_flip_diagnostic, slave_curve,
    stokes_holonomy, trace_level_set, zeta_along_path, InvariantReport, LevelSetPath, LoopSpec,
    PathSample, SignFlipReport, StepControl, Termination,
};
pub use predictions::{
    dilatancy_at, rowe_at, stability_map, DilatancyReport, GridSpec, RoweReport, StabilityMap,
    ZetaReference,
};
pub use runner::{run, RunError, RunSummary, Scenario, ScenarioConfig};
pub use surface::{
    Coordinates, DerivativeMode, EntropySurface, FdStep, ScalarField, SurfaceKind,
    ToyGranularParams, BETA_FLOOR, STRESS, VOLUME,
};
pub use tabulated::TabulatedSurface;
