//! Template matching for one-periodic signals with ranks.
//!
//! Given observations `Y_i = f(i/n - θ*) + Z_i` of a known periodic template
//! `f`, the crate estimates the shift `θ*` two ways:
//!
//! - the rank estimator, which maximizes `Σ R_i f(i/n - θ)` over `θ` where
//!   `R_i` is the rank of `Y_i`;
//! - the Pearson (equivalently least-squares) estimator, which maximizes
//!   `Σ Y_i f(i/n - θ)`.
//!
//! Both scan every grid shift with one FFT and then refine by golden-section
//! search. The [`asymptotics`] module evaluates the limiting variance of the
//! rank estimator by quadrature and its efficiency relative to the Pearson
//! estimator; [`experiments`] runs reproducible parallel Monte Carlo studies.
//!
//! ```
//! use rankmatch::{estimate, generate_signal, Method, NoiseModel, RefineOpts, Template};
//!
//! let template = Template::builtin_a();
//! let noise = NoiseModel::student_t3(1.0);
//! let signal = generate_signal(&template, 0.3, 2000, Some(&noise), 7).unwrap();
//! let est = estimate(&signal, &template, Method::Rank, RefineOpts::default()).unwrap();
//! assert!(rankmatch::wrap_distance(est.theta_hat, 0.3) < 0.05);
//! ```

pub mod asymptotics;
pub mod error;
pub mod experiments;
pub mod format;
pub mod matcher;
pub mod noise;
pub mod quadrature;
pub mod sampling;
pub mod templates;

pub use asymptotics::{AsymptoticReport, LocalMaxDiagnostic, QuadratureConfig};
pub use error::{Error, Result};
pub use experiments::{ks_distance, run_monte_carlo, RunConfig, RunResult};
pub use matcher::{estimate, wrap_distance, wrap_signed, EstimateResult, Method, RefineOpts};
pub use noise::{NoiseFamily, NoiseModel};
pub use sampling::{generate_signal, rank_transform, RankVector, Signal};
pub use templates::Template;
