//! Synthetic data for the Monte Carlo designs: `y = delta0' x_delta +
//! theta0' x_theta + eps` with iid standard normal errors and one of several
//! covariate structures.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Design};
use crate::numerics::{RngStream, SpdMatrix};

/// Singular-value ratio below which a factor loading matrix counts as
/// rank-deficient.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionProfile {
    /// `Psi_ii = 1 + 100 (i - 1) / k`
    A,
    /// `Psi_11 = 10`, all others 1
    B,
    /// `Psi_11 = 100`, all others 1
    C,
}

impl DispersionProfile {
    pub fn variances(self, k_theta: usize) -> Vec<f64> {
        (1..=k_theta)
            .map(|i| match self {
                DispersionProfile::A => 1.0 + 100.0 * (i - 1) as f64 / k_theta as f64,
                DispersionProfile::B if i == 1 => 10.0,
                DispersionProfile::C if i == 1 => 100.0,
                _ => 1.0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateCase {
    /// All covariates iid N(0, 1).
    Independent,
    /// Factor structure within the nuisance block and within the test block;
    /// the two blocks are independent.
    BlockDependent,
    /// `x = A w + v` over the stacked covariate vector.
    CrossBlockDependent,
    /// Nuisance iid N(0, 1); test block N(0, Psi) with diagonal `Psi`.
    Dispersion(DispersionProfile),
}

impl CovariateCase {
    pub fn label(&self) -> String {
        match self {
            CovariateCase::Independent => "independent".into(),
            CovariateCase::BlockDependent => "block_dependent".into(),
            CovariateCase::CrossBlockDependent => "cross_block_dependent".into(),
            CovariateCase::Dispersion(p) => format!("dispersion_{}", serde_json::to_value(p).unwrap().as_str().unwrap()),
        }
    }
}

fn default_alt_magnitude() -> f64 {
    0.001
}

/// Value of `theta0` in the simulated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlternativeSpec {
    Null,
    /// `theta0_1 = magnitude`, rest zero.
    AltI {
        #[serde(default = "default_alt_magnitude")]
        magnitude: f64,
    },
    /// `theta0_i = i / k`.
    AltIi,
    /// `theta0_i = magnitude` for all `i`.
    AltIii {
        #[serde(default = "default_alt_magnitude")]
        magnitude: f64,
    },
    /// Local drift `theta0 = c / sqrt(n)`; `c` is zero-padded to length k.
    Local { c: Vec<f64> },
    /// Explicit `theta0`, zero-padded to length k.
    Custom { theta: Vec<f64> },
}

impl AlternativeSpec {
    pub fn theta0(&self, k_theta: usize, n: usize) -> Result<Vec<f64>> {
        let padded = |v: &[f64], what: &str| -> Result<Vec<f64>> {
            if v.len() > k_theta {
                return Err(Error::ConfigInvalid(format!(
                    "{what} has {} entries but k_theta = {k_theta}",
                    v.len()
                )));
            }
            let mut out = v.to_vec();
            out.resize(k_theta, 0.0);
            Ok(out)
        };
        Ok(match self {
            AlternativeSpec::Null => vec![0.0; k_theta],
            AlternativeSpec::AltI { magnitude } => {
                let mut v = vec![0.0; k_theta];
                if k_theta > 0 {
                    v[0] = *magnitude;
                }
                v
            }
            AlternativeSpec::AltIi => (1..=k_theta).map(|i| i as f64 / k_theta as f64).collect(),
            AlternativeSpec::AltIii { magnitude } => vec![*magnitude; k_theta],
            AlternativeSpec::Local { c } => {
                let root_n = (n as f64).sqrt();
                padded(c, "local drift c")?.into_iter().map(|v| v / root_n).collect()
            }
            AlternativeSpec::Custom { theta } => padded(theta, "custom theta")?,
        })
    }

    pub fn label(&self) -> String {
        match self {
            AlternativeSpec::Null => "null".into(),
            AlternativeSpec::AltI { magnitude } => format!("alt_i({magnitude})"),
            AlternativeSpec::AltIi => "alt_ii".into(),
            AlternativeSpec::AltIii { magnitude } => format!("alt_iii({magnitude})"),
            AlternativeSpec::Local { c } => format!("local({})", join(c)),
            AlternativeSpec::Custom { theta } => format!("custom({})", join(theta)),
        }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDist {
    #[default]
    StdNormal,
}

fn default_case() -> CovariateCase {
    CovariateCase::CrossBlockDependent
}

fn default_alternative() -> AlternativeSpec {
    AlternativeSpec::Null
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub n: usize,
    #[serde(default)]
    pub k_delta: usize,
    /// Filled from the experiment's k rule when driven by the harness.
    #[serde(default)]
    pub k_theta: usize,
    #[serde(default = "default_case")]
    pub covariates: CovariateCase,
    /// Defaults to a vector of ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0: Option<Vec<f64>>,
    #[serde(default = "default_alternative")]
    pub alternative: AlternativeSpec,
    #[serde(default)]
    pub error: ErrorDist,
}

impl DgpSpec {
    pub fn new(n: usize, k_delta: usize, k_theta: usize, covariates: CovariateCase, alternative: AlternativeSpec) -> Self {
        Self { n, k_delta, k_theta, covariates, delta0: None, alternative, error: ErrorDist::StdNormal }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_theta == 0 {
            return Err(Error::ConfigInvalid("k_theta must be at least 1".into()));
        }
        if self.n < self.k_delta + 2 {
            return Err(Error::ConfigInvalid(format!("n = {} is below k_delta + 2 = {}", self.n, self.k_delta + 2)));
        }
        if let Some(d) = &self.delta0 {
            if d.len() != self.k_delta {
                return Err(Error::ConfigInvalid(format!("delta0 has {} entries, k_delta = {}", d.len(), self.k_delta)));
            }
        }
        self.alternative.theta0(self.k_theta, self.n)?;
        Ok(())
    }

    pub fn delta0(&self) -> Vec<f64> {
        self.delta0.clone().unwrap_or_else(|| vec![1.0; self.k_delta])
    }

    pub fn theta0(&self) -> Result<Vec<f64>> {
        self.alternative.theta0(self.k_theta, self.n)
    }
}

/// Simulated covariates with the covariance they were drawn from.
#[derive(Debug, Clone)]
pub struct Covariates {
    pub design: Design,
    /// Population covariance of the stacked `[x_delta', x_theta']'`.
    pub population_cov: SpdMatrix,
}

/// A simulated sample together with the truth that generated it.
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    pub population_cov: SpdMatrix,
    pub delta0: Vec<f64>,
    pub theta0: Vec<f64>,
}

/// Draws a `k x k` loading matrix with iid U[-1, 1] entries (row-major). A
/// rank-deficient draw gets an independent U[0, 1] added to each diagonal
/// entry.
pub fn draw_loading(k: usize, stream: &mut RngStream) -> Vec<f64> {
    let mut a: Vec<f64> = (0..k * k).map(|_| stream.uniform(-1.0, 1.0)).collect();
    while !full_rank(&a, k) {
        for i in 0..k {
            a[i * k + i] += stream.uniform(0.0, 1.0);
        }
    }
    a
}

fn full_rank(a: &[f64], k: usize) -> bool {
    if k == 0 {
        return true;
    }
    let sv = DMatrix::from_row_slice(k, k, a).singular_values();
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > RANK_TOL * max
}

/// `n` rows of `x = A w + v`, `w, v ~ N(0, I_k)`, returned column-major.
pub fn factor_covariates(loading: &[f64], k: usize, n: usize, stream: &mut RngStream) -> Vec<Vec<f64>> {
    assert_eq!(loading.len(), k * k);
    let mut cols = vec![vec![0.0; n]; k];
    let mut w = vec![0.0; k];
    for t in 0..n {
        stream.fill_std_normals(&mut w);
        for r in 0..k {
            let row = &loading[r * k..(r + 1) * k];
            cols[r][t] = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + stream.std_normal();
        }
    }
    cols
}

/// `A A' + I`.
fn factor_covariance(loading: &[f64], k: usize) -> Vec<f64> {
    let mut cov = vec![0.0; k * k];
    for r in 0..k {
        for c in 0..k {
            let s: f64 = (0..k).map(|j| loading[r * k + j] * loading[c * k + j]).sum();
            cov[r * k + c] = s + if r == c { 1.0 } else { 0.0 };
        }
    }
    cov
}

fn iid_columns(k: usize, n: usize, scale: &[f64], stream: &mut RngStream) -> Vec<Vec<f64>> {
    let mut cols = vec![vec![0.0; n]; k];
    for t in 0..n {
        for (c, s) in cols.iter_mut().zip(scale) {
            c[t] = s * stream.std_normal();
        }
    }
    cols
}

pub fn gen_covariates(spec: &DgpSpec, stream: &mut RngStream) -> Result<Covariates> {
    spec.validate()?;
    let (n, kd, kt) = (spec.n, spec.k_delta, spec.k_theta);
    let k = kd + kt;
    let mut cov = vec![0.0; k * k];
    let mut set_block = |offset: usize, size: usize, block: &[f64]| {
        for r in 0..size {
            for c in 0..size {
                cov[(offset + r) * k + offset + c] = block[r * size + c];
            }
        }
    };
    let mut cols = match spec.covariates {
        CovariateCase::Independent => {
            set_block(0, k, SpdMatrix::identity(k).entries());
            iid_columns(k, n, &vec![1.0; k], stream)
        }
        CovariateCase::Dispersion(profile) => {
            let mut var = vec![1.0; kd];
            var.extend(profile.variances(kt));
            let mut diag = vec![0.0; k * k];
            for (i, v) in var.iter().enumerate() {
                diag[i * k + i] = *v;
            }
            set_block(0, k, &diag);
            let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
            iid_columns(k, n, &sd, stream)
        }
        CovariateCase::CrossBlockDependent => {
            let a = draw_loading(k, stream);
            set_block(0, k, &factor_covariance(&a, k));
            factor_covariates(&a, k, n, stream)
        }
        CovariateCase::BlockDependent => {
            let ad = draw_loading(kd, stream);
            let at = draw_loading(kt, stream);
            set_block(0, kd, &factor_covariance(&ad, kd));
            set_block(kd, kt, &factor_covariance(&at, kt));
            let mut cols = factor_covariates(&ad, kd, n, stream);
            cols.extend(factor_covariates(&at, kt, n, stream));
            cols
        }
    };
    let x_theta = cols.split_off(kd);
    Ok(Covariates {
        design: Design::new(cols, x_theta)?,
        population_cov: SpdMatrix::new(k, cov)?,
    })
}

/// Draws covariates then errors, and returns the sample with its truth.
pub fn generate(spec: &DgpSpec, stream: &mut RngStream) -> Result<Generated> {
    let cov = gen_covariates(spec, stream)?;
    let delta0 = spec.delta0();
    let theta0 = spec.theta0()?;
    let design = cov.design;
    let mut y: Vec<f64> = (0..spec.n).map(|_| match spec.error {
        ErrorDist::StdNormal => stream.std_normal(),
    }).collect();
    for (col, d) in design.delta_columns().iter().zip(&delta0) {
        for (yt, x) in y.iter_mut().zip(col) {
            *yt += d * x;
        }
    }
    for (col, th) in design.theta_columns().iter().zip(&theta0) {
        if *th != 0.0 {
            for (yt, x) in y.iter_mut().zip(col) {
                *yt += th * x;
            }
        }
    }
    Ok(Generated {
        dataset: Dataset::from_design(y, design)?,
        population_cov: cov.population_cov,
        delta0,
        theta0,
    })
}

pub fn gen_dataset(spec: &DgpSpec, stream: &mut RngStream) -> Result<Dataset> {
    generate(spec, stream).map(|g| g.dataset)
}
