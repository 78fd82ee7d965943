//! Empirical likelihood inference for regression discontinuity designs.
//!
//! The crate covers sharp, fuzzy, covariate-adjusted, multi-outcome and
//! categorical designs. Bandwidths are chosen to minimize the leading
//! coverage error of the EL confidence set, and the same expansion supplies
//! a Bartlett factor.
//!
//! A typical analysis:
//!
//! ```no_run
//! use elrdd_core::{analyze, AnalysisConfig, DesignSpec, Sample};
//!
//! # fn main() -> elrdd_core::Result<()> {
//! let x = vec![/* forcing variable */];
//! let y = vec![/* outcome */];
//! let sample = Sample::new(x, 0.0)?.with_column("y", y)?;
//! let result = analyze(&sample, &DesignSpec::sharp("y"), &AnalysisConfig::default())?;
//! println!("{:?}", result.intervals);
//! # Ok(())
//! # }
//! ```

pub mod bandwidth;
pub mod designs;
pub mod elcore;
pub mod error;
pub mod inference;
pub mod kernel;
pub mod localfit;
pub mod montecarlo;
pub mod quadrature;

pub use bandwidth::{coverage_optimal_bandwidth, estimate_curvature, BandwidthPlan, CurvatureEstimates};
pub use designs::{build_moment_system, DesignKind, DesignSpec, MomentSystem};
pub use elcore::{el_criterion, profile_lr, ELEvaluation, ProfileResult, Profiler, SolverConfig};
pub use error::{Error, Result};
pub use inference::{analyze, AnalysisConfig, InferenceResult};
pub use kernel::{compute_kernel_constants, Kernel, KernelConstants};
pub use localfit::{build_weights, Sample, Side, WeightVector};
pub use montecarlo::{generate, run_coverage_study, BandwidthMode, CoverageReport, DgpKind, DgpSpec, StudyConfig};
