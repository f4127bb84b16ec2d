//! Max-tests of a zero restriction on many parameters, built from
//! low-dimensional parsimonious regressions, together with Wald benchmarks,
//! wild bootstrap inference and a reproducible Monte Carlo harness.

#![allow(clippy::needless_range_loop)]

pub mod bootstrap;
pub mod dgp;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod inference;
pub mod model;
pub mod numerics;

pub use bootstrap::{max_bootstrap, wald_bootstrap, BootstrapConfig, BootstrapOutcome, WeightReuse};
pub use dgp::{gen_dataset, AlternativeSpec, CovariateCase, DgpSpec};
pub use error::{Error, Result};
pub use estimation::{fit_all_parsimonious, fit_full, fit_parsimonious, fit_restricted, SeFlavor};
pub use harness::{emit_report, run_experiment, ExperimentConfig, ExperimentReport, KRule, ReportFormat};
pub use inference::{max_statistic, wald_statistic, Method, TestResult, WeightScheme};
pub use model::{linear_response, rate_rule_k, Dataset, Design, ParsimoniousParam, ResponseModel};
pub use numerics::RngStream;
