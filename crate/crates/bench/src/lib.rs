//! Shared fixtures for the criterion benchmarks.

use maxzero::dgp::{gen_dataset, AlternativeSpec, CovariateCase, DgpSpec};
use maxzero::numerics::RngStream;
use maxzero::Dataset;

/// Cross-block dependent covariates under alternative (ii).
pub fn spec(n: usize, k_delta: usize, k_theta: usize) -> DgpSpec {
    DgpSpec::new(n, k_delta, k_theta, CovariateCase::CrossBlockDependent, AlternativeSpec::AltIi)
}

/// A fixed dataset for timing the estimators and bootstraps.
pub fn dataset(n: usize, k_delta: usize, k_theta: usize) -> Dataset {
    gen_dataset(&spec(n, k_delta, k_theta), &mut RngStream::new(42, 0)).expect("valid benchmark design")
}
