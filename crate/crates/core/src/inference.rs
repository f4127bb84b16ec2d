//! Max and max-t statistics, Wald and normalized Wald statistics, and their
//! asymptotic p-values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{FullFit, ParsimoniousFit};
use crate::numerics::{chisq_sf, dot, normal_sf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `W_i = 1`.
    Flat,
    /// `W_i = 1 / (sqrt(n) se_i)`: each contribution is an absolute t-ratio.
    InvSe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Max,
    MaxT,
    WaldAsymptotic,
    WaldNormalized,
    WaldBootstrap,
    WaldNormalizedBootstrap,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Max,
        Method::MaxT,
        Method::WaldAsymptotic,
        Method::WaldNormalized,
        Method::WaldBootstrap,
        Method::WaldNormalizedBootstrap,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Max => "max",
            Method::MaxT => "max_t",
            Method::WaldAsymptotic => "wald_asymptotic",
            Method::WaldNormalized => "wald_normalized",
            Method::WaldBootstrap => "wald_bootstrap",
            Method::WaldNormalizedBootstrap => "wald_normalized_bootstrap",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.tag() == s)
    }

    /// Weight scheme of a max-family method.
    pub fn scheme(self) -> Option<WeightScheme> {
        match self {
            Method::Max => Some(WeightScheme::Flat),
            Method::MaxT => Some(WeightScheme::InvSe),
            _ => None,
        }
    }

    pub fn is_max_family(self) -> bool {
        self.scheme().is_some()
    }

    pub fn needs_full_fit(self) -> bool {
        !self.is_max_family()
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl WeightScheme {
    pub fn method(self) -> Method {
        match self {
            WeightScheme::Flat => Method::Max,
            WeightScheme::InvSe => Method::MaxT,
        }
    }

    /// Weights `W_{n,i}` from standard errors.
    pub fn weights(self, se: &[f64], n: usize) -> Result<Vec<f64>> {
        match self {
            WeightScheme::Flat => Ok(vec![1.0; se.len()]),
            WeightScheme::InvSe => {
                let root_n = (n as f64).sqrt();
                se.iter()
                    .enumerate()
                    .map(|(i, &s)| {
                        if s > 0.0 && s.is_finite() {
                            Ok(1.0 / (root_n * s))
                        } else {
                            Err(Error::NonpositiveSe { index: i + 1 })
                        }
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexContribution {
    pub index: usize,
    pub theta_hat: f64,
    pub weight: f64,
    /// `|sqrt(n) W_i theta_hat_i|`.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: Method,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub argmax_index: Option<usize>,
    pub k_used: usize,
    pub n: usize,
    #[serde(skip)]
    pub per_index: Vec<IndexContribution>,
}

impl TestResult {
    /// `p < alpha`; `None` without a p-value.
    pub fn rejects(&self, alpha: f64) -> Option<bool> {
        self.p_value.map(|p| p < alpha)
    }
}

/// `max_i |sqrt(n) W_i theta_i|` with the smallest maximizing index
/// (1-based).
pub fn weighted_max(thetas: &[f64], weights: &[f64], n: usize) -> (f64, usize) {
    let root_n = (n as f64).sqrt();
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, (t, w)) in thetas.iter().zip(weights).enumerate() {
        let v = (root_n * w * t).abs();
        if v > best.0 {
            best = (v, i + 1);
        }
    }
    best
}

pub fn max_statistic(fits: &[ParsimoniousFit], scheme: WeightScheme, n: usize) -> Result<TestResult> {
    if fits.is_empty() {
        return Err(Error::EmptyFits);
    }
    let thetas: Vec<f64> = fits.iter().map(ParsimoniousFit::theta).collect();
    let ses: Vec<f64> = fits.iter().map(|f| f.se_theta).collect();
    let weights = scheme.weights(&ses, n).map_err(|e| match e {
        Error::NonpositiveSe { index } => Error::NonpositiveSe { index: fits[index - 1].index },
        other => other,
    })?;
    let (statistic, pos) = weighted_max(&thetas, &weights, n);
    let root_n = (n as f64).sqrt();
    let per_index = fits
        .iter()
        .zip(&weights)
        .map(|(f, &w)| IndexContribution {
            index: f.index,
            theta_hat: f.theta(),
            weight: w,
            contribution: (root_n * w * f.theta()).abs(),
        })
        .collect();
    Ok(TestResult {
        method: scheme.method(),
        statistic,
        p_value: None,
        argmax_index: Some(fits[pos - 1].index),
        k_used: fits.len(),
        n,
        per_index,
    })
}

/// `W = n theta' V_theta^-1 theta` with a chi-square(k) p-value, where `V` is
/// the fit's covariance of `sqrt(n)(beta_hat - beta)`.
pub fn wald_statistic(fit: &FullFit) -> Result<TestResult> {
    let n = fit.n();
    let idx: Vec<usize> = (fit.k_delta..fit.k_delta + fit.k_used).collect();
    let chol = fit.covariance.principal(&idx).cholesky()?;
    let theta = fit.theta();
    let w = n as f64 * dot(theta, &chol.solve(theta));
    Ok(TestResult {
        method: Method::WaldAsymptotic,
        statistic: w,
        p_value: Some(chisq_sf(w.max(0.0), fit.k_used as u32)),
        argmax_index: None,
        k_used: fit.k_used,
        n,
        per_index: Vec::new(),
    })
}

/// `(W - k) / sqrt(2k)`.
pub fn normalize_wald(w: f64, k: usize) -> f64 {
    (w - k as f64) / (2.0 * k as f64).sqrt()
}

/// One-sided standard normal test on the normalized Wald statistic.
pub fn normalized_wald(result: &TestResult, k: usize) -> TestResult {
    let ws = normalize_wald(result.statistic, k);
    TestResult {
        method: Method::WaldNormalized,
        statistic: ws,
        p_value: Some(normal_sf(ws)),
        argmax_index: None,
        k_used: result.k_used,
        n: result.n,
        per_index: Vec::new(),
    }
}
