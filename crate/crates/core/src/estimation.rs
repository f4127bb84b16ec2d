//! Least-squares fits of the parsimonious, restricted and full models, with
//! sandwich standard errors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Design, ParsimoniousParam, ResponseModel};
use crate::numerics::{dot, Cholesky, SpdMatrix};

const GN_STEP_TOL: f64 = 1e-10;
const GN_MAX_ITER: usize = 200;
const GN_MAX_HALVINGS: usize = 30;
const DIVERGENCE_BOUND: f64 = 1e8;

/// Covariance estimator for least-squares coefficients.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeFlavor {
    /// `H^-1 S H^-1 / n` with `S` the outer product of residual-weighted
    /// gradients (HC0).
    #[default]
    Robust,
    /// `sigma^2 H^-1 / n`, `sigma^2 = SSE / (n - dim)`.
    Homoskedastic,
}

#[derive(Debug, Clone)]
pub struct ParsimoniousFit {
    pub index: usize,
    pub beta: ParsimoniousParam,
    pub residuals: Vec<f64>,
    pub se_theta: f64,
    pub se_flavor: SeFlavor,
    /// Sample Hessian of the loss scaled by `1/n`.
    pub hessian: SpdMatrix,
    /// `max_j |(1/n) sum_t v_t g_tj|` at the estimate.
    pub gradient_at_fit_norm: f64,
}

impl ParsimoniousFit {
    pub fn theta(&self) -> f64 {
        self.beta.theta
    }
}

#[derive(Debug, Clone)]
pub struct RestrictedFit {
    pub delta0_hat: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FullFit {
    /// `[delta', theta_1..theta_k]`.
    pub beta: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Covariance of `sqrt(n) (beta_hat - beta)`.
    pub covariance: SpdMatrix,
    pub se_flavor: SeFlavor,
    pub k_delta: usize,
    pub k_used: usize,
}

impl FullFit {
    pub fn theta(&self) -> &[f64] {
        &self.beta[self.k_delta..]
    }

    pub fn n(&self) -> usize {
        self.residuals.len()
    }
}

fn parsimonious_columns(design: &Design, index: usize) -> Vec<&[f64]> {
    let mut cols: Vec<&[f64]> = design.delta_columns().iter().map(Vec::as_slice).collect();
    cols.push(design.theta_column(index));
    cols
}

fn check_index(design: &Design, index: usize) -> Result<()> {
    if index == 0 || index > design.k_theta() {
        return Err(Error::IndexOutOfRange { index, k_theta: design.k_theta() });
    }
    Ok(())
}

/// Least squares on `[X_delta, x_theta_i]`.
pub fn fit_parsimonious(
    data: &Dataset,
    model: &dyn ResponseModel,
    index: usize,
    flavor: SeFlavor,
) -> Result<ParsimoniousFit> {
    check_index(data.design(), index)?;
    let dim = data.k_delta() + 1;
    if data.n() <= dim {
        return Err(Error::InsufficientSample { n: data.n(), params: dim });
    }
    if model.is_linear() {
        fit_parsimonious_linear(data, index, flavor)
    } else {
        fit_parsimonious_nonlinear(data, model, index, flavor)
    }
}

fn fit_parsimonious_linear(data: &Dataset, index: usize, flavor: SeFlavor) -> Result<ParsimoniousFit> {
    let n = data.n() as f64;
    let cols = parsimonious_columns(data.design(), index);
    let gram = SpdMatrix::gram(&cols);
    let chol = gram.cholesky()?;
    let xty: Vec<f64> = cols.iter().map(|c| dot(c, data.y())).collect();
    let beta = chol.solve(&xty);
    let residuals: Vec<f64> = (0..data.n())
        .map(|t| data.y()[t] - cols.iter().zip(&beta).map(|(c, b)| c[t] * b).sum::<f64>())
        .collect();
    let gradient_at_fit_norm = cols.iter().map(|c| (dot(c, &residuals) / n).abs()).fold(0.0, f64::max);
    let hessian = gram.scaled(1.0 / n);
    let cov = linear_sandwich(&cols, &chol, &residuals, flavor)?;
    let se_theta = cov.get(cols.len() - 1, cols.len() - 1).sqrt();
    Ok(ParsimoniousFit {
        index,
        beta: ParsimoniousParam::from_slice(&beta, index),
        residuals,
        se_theta,
        se_flavor: flavor,
        hessian,
        gradient_at_fit_norm,
    })
}

/// Finite-sample covariance of linear LS coefficients, `(X'X)^-1 M (X'X)^-1`.
fn linear_sandwich(cols: &[&[f64]], chol: &Cholesky, residuals: &[f64], flavor: SeFlavor) -> Result<SpdMatrix> {
    let n = residuals.len();
    let dim = cols.len();
    let inv = chol.inverse();
    match flavor {
        SeFlavor::Homoskedastic => {
            let sigma2 = dot(residuals, residuals) / (n - dim) as f64;
            Ok(inv.scaled(sigma2))
        }
        SeFlavor::Robust => {
            let e2: Vec<f64> = residuals.iter().map(|e| e * e).collect();
            let meat = SpdMatrix::from_fn(dim, |r, c| (0..n).map(|t| e2[t] * cols[r][t] * cols[c][t]).sum());
            Ok(inv.sandwich(&meat))
        }
    }
}

fn fit_parsimonious_nonlinear(
    data: &Dataset,
    model: &dyn ResponseModel,
    index: usize,
    flavor: SeFlavor,
) -> Result<ParsimoniousFit> {
    let restricted = fit_restricted(data, model)?;
    let mut start = restricted.delta0_hat.clone();
    start.push(0.0);
    let beta = gauss_newton(data, model, index, start, true)?;
    let p = ParsimoniousParam::from_slice(&beta, index);
    let design = data.design();
    let n = data.n();
    let dim = beta.len();
    let mut residuals = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    let mut h = vec![0.0; dim * dim];
    for t in 0..n {
        let row = design.row(t);
        let e = data.y()[t] - model.eval(row.view(), &p);
        let g = model.grad(row.view(), &p);
        let hx = model.hess(row.view(), &p);
        for r in 0..dim {
            for c in 0..dim {
                h[r * dim + c] += (g[r] * g[c] - e * hx[r * dim + c]) / n as f64;
            }
        }
        residuals.push(e);
        grads.push(g);
    }
    let hessian = SpdMatrix::from_fn(dim, |r, c| 0.5 * (h[r * dim + c] + h[c * dim + r]));
    let gradient_at_fit_norm = (0..dim)
        .map(|j| (grads.iter().zip(&residuals).map(|(g, e)| g[j] * e).sum::<f64>() / n as f64).abs())
        .fold(0.0, f64::max);
    let cov = nonlinear_sandwich(&hessian, &grads, &residuals, flavor)?;
    Ok(ParsimoniousFit {
        index,
        se_theta: cov.get(dim - 1, dim - 1).sqrt(),
        beta: p,
        residuals,
        se_flavor: flavor,
        hessian,
        gradient_at_fit_norm,
    })
}

fn nonlinear_sandwich(hessian: &SpdMatrix, grads: &[Vec<f64>], residuals: &[f64], flavor: SeFlavor) -> Result<SpdMatrix> {
    let n = residuals.len() as f64;
    let dim = hessian.dim();
    let hinv = hessian.cholesky()?.inverse();
    match flavor {
        SeFlavor::Homoskedastic => {
            let sigma2 = dot(residuals, residuals) / (n - dim as f64);
            Ok(hinv.scaled(sigma2 / n))
        }
        SeFlavor::Robust => {
            let meat = SpdMatrix::from_fn(dim, |r, c| {
                grads.iter().zip(residuals).map(|(g, e)| e * e * g[r] * g[c]).sum::<f64>() / n
            });
            Ok(hinv.sandwich(&meat).scaled(1.0 / n))
        }
    }
}

/// Damped Gauss-Newton on the SSE of parsimonious model `index`, or of the
/// restricted model (`theta` pinned at zero) when `with_theta` is false.
fn gauss_newton(
    data: &Dataset,
    model: &dyn ResponseModel,
    index: usize,
    mut beta: Vec<f64>,
    with_theta: bool,
) -> Result<Vec<f64>> {
    let design = data.design();
    let n = data.n();
    let free = if with_theta { beta.len() } else { beta.len() - 1 };
    if free == 0 {
        return Ok(beta);
    }
    let sse = |b: &[f64]| -> f64 {
        let p = ParsimoniousParam::from_slice(b, index);
        (0..n).map(|t| (data.y()[t] - model.eval(design.row(t).view(), &p)).powi(2)).sum()
    };
    let mut current = sse(&beta);
    for _ in 0..GN_MAX_ITER {
        let p = ParsimoniousParam::from_slice(&beta, index);
        let mut jtj = vec![0.0; free * free];
        let mut jtr = vec![0.0; free];
        for t in 0..n {
            let row = design.row(t);
            let e = data.y()[t] - model.eval(row.view(), &p);
            let g = model.grad(row.view(), &p);
            for r in 0..free {
                jtr[r] += g[r] * e;
                for c in 0..free {
                    jtj[r * free + c] += g[r] * g[c];
                }
            }
        }
        let step = SpdMatrix::from_fn(free, |r, c| jtj[r * free + c]).cholesky()?.solve(&jtr);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=GN_MAX_HALVINGS {
            let trial: Vec<f64> = beta
                .iter()
                .enumerate()
                .map(|(j, b)| if j < free { b + scale * step[j] } else { *b })
                .collect();
            let s = sse(&trial);
            if s <= current {
                accepted = Some((trial, s));
                break;
            }
            scale *= 0.5;
        }
        let step_norm = step.iter().fold(0.0f64, |m, v| m.max(v.abs())) * scale;
        match accepted {
            Some((trial, s)) => {
                beta = trial;
                current = s;
            }
            None => {
                // no decrease possible: at a numerical minimum if the
                // gradient vanishes there
                let gmax = jtr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if gmax <= 1e-8 * (1.0 + current) {
                    return Ok(beta);
                }
                return Err(Error::NoConvergence { index, iterations: GN_MAX_ITER });
            }
        }
        if beta.iter().any(|b| !b.is_finite() || b.abs() > DIVERGENCE_BOUND) {
            return Err(Error::NoConvergence { index, iterations: GN_MAX_ITER });
        }
        if step_norm < GN_STEP_TOL {
            return Ok(beta);
        }
    }
    Err(Error::NoConvergence { index, iterations: GN_MAX_ITER })
}

/// Fits parsimonious models `1..=k_used` in parallel.
pub fn fit_all_parsimonious(
    data: &Dataset,
    model: &dyn ResponseModel,
    k_used: usize,
    flavor: SeFlavor,
) -> Result<Vec<ParsimoniousFit>> {
    if k_used == 0 || k_used > data.k_theta() {
        return Err(Error::IndexOutOfRange { index: k_used, k_theta: data.k_theta() });
    }
    (1..=k_used)
        .into_par_iter()
        .map(|i| fit_parsimonious(data, model, i, flavor))
        .collect()
}

/// Least squares with every test parameter set to zero.
pub fn fit_restricted(data: &Dataset, model: &dyn ResponseModel) -> Result<RestrictedFit> {
    let design = data.design();
    let kd = design.k_delta();
    if model.is_linear() {
        if kd == 0 {
            return Ok(RestrictedFit {
                delta0_hat: Vec::new(),
                fitted: vec![0.0; data.n()],
                residuals: data.y().to_vec(),
            });
        }
        let cols: Vec<&[f64]> = design.delta_columns().iter().map(Vec::as_slice).collect();
        let chol = SpdMatrix::gram(&cols).cholesky()?;
        let xty: Vec<f64> = cols.iter().map(|c| dot(c, data.y())).collect();
        let delta = chol.solve(&xty);
        let fitted: Vec<f64> = (0..data.n()).map(|t| cols.iter().zip(&delta).map(|(c, d)| c[t] * d).sum()).collect();
        let residuals = data.y().iter().zip(&fitted).map(|(y, f)| y - f).collect();
        return Ok(RestrictedFit { delta0_hat: delta, fitted, residuals });
    }
    let mut start = vec![0.0; kd];
    start.push(0.0);
    let beta = gauss_newton(data, model, 1, start, false)?;
    let p = ParsimoniousParam::from_slice(&beta, 1);
    let fitted: Vec<f64> = (0..data.n()).map(|t| model.eval(design.row(t).view(), &p)).collect();
    let residuals = data.y().iter().zip(&fitted).map(|(y, f)| y - f).collect();
    Ok(RestrictedFit { delta0_hat: p.delta, fitted, residuals })
}

/// Unrestricted least squares on `[X_delta, X_theta[:, 1..=k_used]]`.
pub fn fit_full(data: &Dataset, model: &dyn ResponseModel, k_used: usize, flavor: SeFlavor) -> Result<FullFit> {
    if !model.is_linear() {
        return Err(Error::RequiresLinear("the full-model fit"));
    }
    let full = FullDesign::new(data.design(), k_used)?;
    let (beta, residuals) = full.fit(data.y());
    let cov = full.coefficient_covariance(&residuals, flavor)?;
    Ok(FullFit {
        beta,
        residuals,
        covariance: cov.scaled(data.n() as f64),
        se_flavor: flavor,
        k_delta: data.k_delta(),
        k_used,
    })
}

/// Finite-sample covariance of `beta_hat_(i)` for a fitted parsimonious model.
pub fn sandwich_se(data: &Dataset, model: &dyn ResponseModel, fit: &ParsimoniousFit, flavor: SeFlavor) -> Result<SpdMatrix> {
    let design = data.design();
    if model.is_linear() {
        let cols = parsimonious_columns(design, fit.index);
        let chol = SpdMatrix::gram(&cols).cholesky()?;
        return linear_sandwich(&cols, &chol, &fit.residuals, flavor);
    }
    let grads: Vec<Vec<f64>> = (0..data.n()).map(|t| model.grad(design.row(t).view(), &fit.beta)).collect();
    nonlinear_sandwich(&fit.hessian, &grads, &fit.residuals, flavor)
}

/// Covariance of `sqrt(n)(beta_hat - beta)` for the full model under another
/// flavor than the one it was fitted with.
pub fn full_sandwich(data: &Dataset, fit: &FullFit, flavor: SeFlavor) -> Result<SpdMatrix> {
    let full = FullDesign::new(data.design(), fit.k_used)?;
    Ok(full.coefficient_covariance(&fit.residuals, flavor)?.scaled(data.n() as f64))
}

/// Where the Hessian in the first-order expansion comes from.
#[derive(Debug, Clone, Copy)]
pub enum HessianSource<'a> {
    /// Sample second-moment matrix of the parsimonious design. For linear
    /// least squares this reproduces `sqrt(n) theta_hat_i` exactly, so the
    /// diagnostic is zero up to rounding.
    Sample,
    /// Population second-moment matrix of the stacked `[x_delta, x_theta]`.
    Population(&'a SpdMatrix),
}

/// `|sqrt(n) theta_hat_i - [0', 1] Z_i|` per fit, where
/// `Z_i = -H_i^-1 G_i / sqrt(n)` and `G_i = -sum_t e0_t x_(i),t` is the loss
/// gradient at the restricted estimate. Linear responses only.
pub fn expansion_diagnostic(
    data: &Dataset,
    fits: &[ParsimoniousFit],
    restricted: &RestrictedFit,
    hessian: HessianSource<'_>,
) -> Result<Vec<f64>> {
    let n = data.n() as f64;
    let root_n = n.sqrt();
    let kd = data.k_delta();
    fits.par_iter()
        .map(|fit| {
            let cols = parsimonious_columns(data.design(), fit.index);
            let neg_grad: Vec<f64> = cols.iter().map(|c| dot(c, &restricted.residuals)).collect();
            let h = match hessian {
                HessianSource::Sample => SpdMatrix::gram(&cols).scaled(1.0 / n),
                HessianSource::Population(cov) => {
                    let mut idx: Vec<usize> = (0..kd).collect();
                    idx.push(kd + fit.index - 1);
                    cov.principal(&idx)
                }
            };
            let z = h.cholesky()?.solve(&neg_grad);
            let z_theta = z[kd] / root_n;
            Ok((root_n * fit.theta() - z_theta).abs())
        })
        .collect()
}

/// Pseudo-true parsimonious parameters `beta*_(i) = E[x_(i) x_(i)']^-1
/// E[x_(i) y]` for mean-zero covariates with second moments `cov` and
/// `y = beta0' x + eps`.
pub fn pseudo_true(cov: &SpdMatrix, k_delta: usize, beta0: &[f64]) -> Result<Vec<ParsimoniousParam>> {
    if beta0.len() != cov.dim() || k_delta >= cov.dim() {
        return Err(Error::DimensionMismatch("beta0 must match the covariate covariance".into()));
    }
    let cross = cov.mul_vec(beta0);
    (1..=cov.dim() - k_delta)
        .map(|i| {
            let mut idx: Vec<usize> = (0..k_delta).collect();
            idx.push(k_delta + i - 1);
            let rhs: Vec<f64> = idx.iter().map(|&j| cross[j]).collect();
            let b = cov.principal(&idx).cholesky()?.solve(&rhs);
            Ok(ParsimoniousParam::from_slice(&b, i))
        })
        .collect()
}

/// Parsimonious least squares for a fixed design, by partialling out the
/// nuisance block once: `theta_hat_i = x~_i' y / ||x~_i||^2` where `x~_i` is
/// test column `i` residualized on `X_delta`. Reused across bootstrap draws.
#[derive(Debug, Clone)]
pub struct ParsimoniousDesign {
    n: usize,
    k_delta: usize,
    delta_cols: Vec<Vec<f64>>,
    delta_chol: Option<Cholesky>,
    resid_cols: Vec<Vec<f64>>,
    resid_sq: Vec<f64>,
}

impl ParsimoniousDesign {
    pub fn new(design: &Design, k_used: usize) -> Result<Self> {
        if k_used == 0 || k_used > design.k_theta() {
            return Err(Error::IndexOutOfRange { index: k_used, k_theta: design.k_theta() });
        }
        let n = design.n();
        let kd = design.k_delta();
        if n <= kd + 1 {
            return Err(Error::InsufficientSample { n, params: kd + 1 });
        }
        let delta_cols = design.delta_columns().to_vec();
        let delta_refs: Vec<&[f64]> = delta_cols.iter().map(Vec::as_slice).collect();
        let delta_gram = SpdMatrix::gram(&delta_refs);
        let delta_chol = if kd > 0 { Some(delta_gram.cholesky()?) } else { None };
        let max_delta_diag = delta_gram.diagonal().into_iter().fold(0.0, f64::max);
        let mut resid_cols = Vec::with_capacity(k_used);
        let mut resid_sq = Vec::with_capacity(k_used);
        for i in 1..=k_used {
            let x = design.theta_column(i);
            let r = partial_out(&delta_refs, delta_chol.as_ref(), x);
            let sq = dot(&r, &r);
            // the last Cholesky pivot of [X_delta, x_i]'[X_delta, x_i] is ||x~_i||^2
            let threshold = (kd + 1) as f64 * 1e-14 * max_delta_diag.max(dot(x, x));
            if sq.is_nan() || sq <= threshold {
                return Err(Error::NonPositiveDefinite { pivot: kd, value: sq });
            }
            resid_cols.push(r);
            resid_sq.push(sq);
        }
        Ok(Self { n, k_delta: kd, delta_cols, delta_chol, resid_cols, resid_sq })
    }

    pub fn k_used(&self) -> usize {
        self.resid_cols.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `M_delta y`.
    pub fn partial_out_y(&self, y: &[f64]) -> Vec<f64> {
        let refs: Vec<&[f64]> = self.delta_cols.iter().map(Vec::as_slice).collect();
        partial_out(&refs, self.delta_chol.as_ref(), y)
    }

    pub fn thetas(&self, y: &[f64]) -> Vec<f64> {
        self.resid_cols.iter().zip(&self.resid_sq).map(|(c, s)| dot(c, y) / s).collect()
    }

    /// Slopes and their standard errors. Needs the partialled response.
    pub fn thetas_and_se(&self, y: &[f64], flavor: SeFlavor) -> (Vec<f64>, Vec<f64>) {
        let y_tilde = self.partial_out_y(y);
        let df = (self.n - self.k_delta - 1) as f64;
        let mut thetas = Vec::with_capacity(self.k_used());
        let mut ses = Vec::with_capacity(self.k_used());
        for (c, s) in self.resid_cols.iter().zip(&self.resid_sq) {
            let th = dot(c, &y_tilde) / s;
            let se = match flavor {
                SeFlavor::Homoskedastic => {
                    let sse: f64 = y_tilde.iter().zip(c).map(|(y, x)| (y - th * x).powi(2)).sum();
                    (sse / df / s).sqrt()
                }
                SeFlavor::Robust => {
                    let meat: f64 = y_tilde.iter().zip(c).map(|(y, x)| (x * (y - th * x)).powi(2)).sum();
                    meat.sqrt() / s
                }
            };
            thetas.push(th);
            ses.push(se);
        }
        (thetas, ses)
    }
}

fn partial_out(delta_cols: &[&[f64]], chol: Option<&Cholesky>, x: &[f64]) -> Vec<f64> {
    let Some(chol) = chol else { return x.to_vec() };
    let coef = chol.solve(&delta_cols.iter().map(|c| dot(c, x)).collect::<Vec<_>>());
    let mut r = x.to_vec();
    for (c, b) in delta_cols.iter().zip(&coef) {
        for (rt, ct) in r.iter_mut().zip(c.iter()) {
            *rt -= b * ct;
        }
    }
    r
}

/// Full-model least squares for a fixed design.
#[derive(Debug, Clone)]
pub struct FullDesign {
    cols: Vec<Vec<f64>>,
    k_delta: usize,
    chol: Cholesky,
    gram_inv: SpdMatrix,
    /// Inverse of the theta block of `(X'X)^-1`.
    theta_block_inv: SpdMatrix,
}

impl FullDesign {
    pub fn new(design: &Design, k_used: usize) -> Result<Self> {
        let n = design.n();
        let kd = design.k_delta();
        if k_used == 0 || k_used > design.k_theta() {
            return Err(Error::IndexOutOfRange { index: k_used, k_theta: design.k_theta() });
        }
        let p = kd + k_used;
        if n <= p {
            return Err(Error::InsufficientSample { n, params: p });
        }
        let mut cols = design.delta_columns().to_vec();
        cols.extend(design.theta_columns()[..k_used].iter().cloned());
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let chol = SpdMatrix::gram(&refs).cholesky()?;
        let gram_inv = chol.inverse();
        let theta_idx: Vec<usize> = (kd..p).collect();
        let theta_block_inv = gram_inv.principal(&theta_idx).cholesky()?.inverse();
        Ok(Self { cols, k_delta: kd, chol, gram_inv, theta_block_inv })
    }

    pub fn dim(&self) -> usize {
        self.cols.len()
    }

    pub fn k_delta(&self) -> usize {
        self.k_delta
    }

    pub fn fit(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let xty: Vec<f64> = self.cols.iter().map(|c| dot(c, y)).collect();
        let beta = self.chol.solve(&xty);
        let mut resid = y.to_vec();
        for (c, b) in self.cols.iter().zip(&beta) {
            for (r, x) in resid.iter_mut().zip(c) {
                *r -= b * x;
            }
        }
        (beta, resid)
    }

    /// Finite-sample covariance of `beta_hat`.
    pub fn coefficient_covariance(&self, residuals: &[f64], flavor: SeFlavor) -> Result<SpdMatrix> {
        let n = residuals.len();
        let p = self.dim();
        Ok(match flavor {
            SeFlavor::Homoskedastic => self.gram_inv.scaled(dot(residuals, residuals) / (n - p) as f64),
            SeFlavor::Robust => {
                let e2: Vec<f64> = residuals.iter().map(|e| e * e).collect();
                let meat = SpdMatrix::from_fn(p, |r, c| {
                    (0..n).map(|t| e2[t] * self.cols[r][t] * self.cols[c][t]).sum()
                });
                self.gram_inv.sandwich(&meat)
            }
        })
    }

    /// Wald statistic `theta' Var(theta)^-1 theta` for one response vector.
    pub fn wald(&self, y: &[f64], flavor: SeFlavor) -> Result<f64> {
        let (beta, resid) = self.fit(y);
        let theta = &beta[self.k_delta..];
        match flavor {
            SeFlavor::Homoskedastic => {
                let n = resid.len();
                let sigma2 = dot(&resid, &resid) / (n - self.dim()) as f64;
                Ok(self.theta_block_inv.quad_form(theta) / sigma2)
            }
            SeFlavor::Robust => {
                let cov = self.coefficient_covariance(&resid, flavor)?;
                let idx: Vec<usize> = (self.k_delta..self.dim()).collect();
                let chol = cov.principal(&idx).cholesky()?;
                Ok(dot(theta, &chol.solve(theta)))
            }
        }
    }

    /// `X_delta delta_hat` from a full-model coefficient vector.
    pub fn nuisance_fitted(&self, beta: &[f64]) -> Vec<f64> {
        let n = self.cols.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for (c, b) in self.cols[..self.k_delta].iter().zip(beta) {
            for (o, x) in out.iter_mut().zip(c) {
                *o += b * x;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{gen_dataset, AlternativeSpec, CovariateCase, DgpSpec};
    use crate::model::linear_response;
    use crate::numerics::RngStream;

    fn random_data(seed: u64, n: usize, kd: usize, kt: usize, alt: AlternativeSpec) -> Dataset {
        let spec = DgpSpec::new(n, kd, kt, CovariateCase::CrossBlockDependent, alt);
        gen_dataset(&spec, &mut RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn noiseless_null_recovers_delta() {
        let x = random_data(1, 30, 2, 3, AlternativeSpec::Null);
        let y: Vec<f64> = (0..30).map(|t| x.design().delta_columns()[0][t] + x.design().delta_columns()[1][t]).collect();
        let d = Dataset::from_design(y, x.design().clone()).unwrap();
        for i in 1..=3 {
            let f = fit_parsimonious(&d, &linear_response(2), i, SeFlavor::Robust).unwrap();
            assert!(f.theta().abs() < 1e-12);
            assert!((f.beta.delta[0] - 1.0).abs() < 1e-12 && (f.beta.delta[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_proportionality() {
        let d = Dataset::new(vec![2.0, 4.0, 6.0, 8.0], vec![], vec![vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let f = fit_parsimonious(&d, &linear_response(0), 1, SeFlavor::Homoskedastic).unwrap();
        assert!((f.theta() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn collinear_design_is_rejected() {
        let c = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let d = Dataset::new(vec![1.0, 0.0, 2.0, 1.0, 3.0], vec![c.clone()], vec![c.iter().map(|v| 2.0 * v).collect()]).unwrap();
        assert!(matches!(
            fit_parsimonious(&d, &linear_response(1), 1, SeFlavor::Robust),
            Err(Error::NonPositiveDefinite { .. })
        ));
        assert!(matches!(ParsimoniousDesign::new(d.design(), 1), Err(Error::NonPositiveDefinite { .. })));
    }

    #[test]
    fn first_order_condition_holds() {
        let d = random_data(4, 80, 3, 6, AlternativeSpec::AltIi);
        for f in fit_all_parsimonious(&d, &linear_response(3), 6, SeFlavor::Robust).unwrap() {
            assert!(f.gradient_at_fit_norm < 1e-10, "{}", f.gradient_at_fit_norm);
            assert!(f.se_theta > 0.0);
        }
    }

    #[test]
    fn restricted_edge_cases() {
        let d = Dataset::new(vec![1.0, 3.0, 2.0, 6.0], vec![], vec![vec![1.0, 0.0, 1.0, 0.0]]).unwrap();
        let r = fit_restricted(&d, &linear_response(0)).unwrap();
        assert_eq!(r.residuals, d.y());
        let d = Dataset::new(vec![1.0, 3.0, 2.0, 6.0], vec![vec![1.0; 4]], vec![vec![1.0, 0.0, 1.0, 0.0]]).unwrap();
        let r = fit_restricted(&d, &linear_response(1)).unwrap();
        assert!((r.delta0_hat[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn restricted_matches_projection_oracle() {
        let d = random_data(8, 25, 3, 2, AlternativeSpec::AltIi);
        let r = fit_restricted(&d, &linear_response(3)).unwrap();
        // P = X (X'X)^-1 X' built by Gauss-Jordan on the normal equations
        let x = d.design().delta_columns();
        let k = 3;
        let mut a = vec![vec![0.0; 2 * k]; k];
        for i in 0..k {
            for j in 0..k {
                a[i][j] = dot(&x[i], &x[j]);
            }
            a[i][k + i] = 1.0;
        }
        for c in 0..k {
            let p = a[c][c];
            for v in a[c].iter_mut() {
                *v /= p;
            }
            for r2 in 0..k {
                if r2 != c {
                    let f = a[r2][c];
                    let row_c = a[c].clone();
                    for (v, w) in a[r2].iter_mut().zip(row_c) {
                        *v -= f * w;
                    }
                }
            }
        }
        let xty: Vec<f64> = (0..k).map(|i| dot(&x[i], d.y())).collect();
        for t in 0..25 {
            let mut yhat = 0.0;
            for i in 0..k {
                for j in 0..k {
                    yhat += x[i][t] * a[i][k + j] * xty[j];
                }
            }
            assert!((yhat - r.fitted[t]).abs() < 1e-10);
        }
    }

    #[test]
    fn full_fit_edges() {
        // orthonormal design, y = first column
        let c1 = vec![0.5, 0.5, 0.5, 0.5];
        let c2 = vec![0.5, -0.5, 0.5, -0.5];
        let c3 = vec![0.5, 0.5, -0.5, -0.5];
        let d = Dataset::new(c1.clone(), vec![], vec![c1, c2, c3]).unwrap();
        let f = fit_full(&d, &linear_response(0), 3, SeFlavor::Homoskedastic).unwrap();
        for (j, b) in f.beta.iter().enumerate() {
            assert!((b - if j == 0 { 1.0 } else { 0.0 }).abs() < 1e-14);
        }
        let d = random_data(3, 12, 2, 10, AlternativeSpec::Null);
        assert!(matches!(
            fit_full(&d, &linear_response(2), 10, SeFlavor::Robust),
            Err(Error::InsufficientSample { .. })
        ));
        assert!(fit_full(&d, &linear_response(2), 9, SeFlavor::Robust).is_ok());
    }

    #[test]
    fn full_matches_parsimonious_under_orthogonality() {
        // Hadamard-like orthogonal columns
        let n = 8;
        let h = |j: usize| -> Vec<f64> { (0..n).map(|t| if (t & j).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 }).collect() };
        let cols: Vec<Vec<f64>> = (1..=4).map(h).collect();
        let y: Vec<f64> = (0..n).map(|t| (t as f64 * 0.7).sin() + 0.3 * cols[1][t]).collect();
        let d = Dataset::new(y, vec![h(0)], cols).unwrap();
        let full = fit_full(&d, &linear_response(1), 4, SeFlavor::Robust).unwrap();
        for i in 1..=4 {
            let p = fit_parsimonious(&d, &linear_response(1), i, SeFlavor::Robust).unwrap();
            assert!((p.theta() - full.theta()[i - 1]).abs() < 1e-13);
            assert!((p.beta.delta[0] - full.beta[0]).abs() < 1e-13);
        }
    }

    #[test]
    fn homoskedastic_single_regressor() {
        let x = vec![1.0, -2.0, 0.5, 3.0, -1.5];
        let y = vec![0.8, -1.7, 1.1, 2.2, -1.0];
        let d = Dataset::new(y.clone(), vec![], vec![x.clone()]).unwrap();
        let f = fit_parsimonious(&d, &linear_response(0), 1, SeFlavor::Homoskedastic).unwrap();
        let sxx = dot(&x, &x);
        let b = dot(&x, &y) / sxx;
        let s2: f64 = x.iter().zip(&y).map(|(a, c)| (c - b * a).powi(2)).sum::<f64>() / 4.0;
        assert!((f.se_theta.powi(2) - s2 / sxx).abs() < 1e-14);
    }

    #[test]
    fn flavors_agree_at_large_n() {
        let spec = DgpSpec::new(10_000, 1, 3, CovariateCase::Independent, AlternativeSpec::Null);
        let d = gen_dataset(&spec, &mut RngStream::new(17, 0)).unwrap();
        for i in 1..=3 {
            let r = fit_parsimonious(&d, &linear_response(1), i, SeFlavor::Robust).unwrap();
            let h = fit_parsimonious(&d, &linear_response(1), i, SeFlavor::Homoskedastic).unwrap();
            assert!((r.se_theta / h.se_theta - 1.0).abs() < 0.2);
        }
    }

    #[test]
    fn rescaling_a_column_rescales_se() {
        let d = random_data(5, 60, 2, 3, AlternativeSpec::AltIi);
        let c = -3.5;
        let mut cols = d.design().theta_columns().to_vec();
        for v in cols[1].iter_mut() {
            *v *= c;
        }
        let scaled = Dataset::new(d.y().to_vec(), d.design().delta_columns().to_vec(), cols).unwrap();
        for flavor in [SeFlavor::Robust, SeFlavor::Homoskedastic] {
            let a = fit_parsimonious(&d, &linear_response(2), 2, flavor).unwrap();
            let b = fit_parsimonious(&scaled, &linear_response(2), 2, flavor).unwrap();
            assert!((b.se_theta - a.se_theta / c.abs()).abs() < 1e-12 * a.se_theta);
            assert!((b.theta() - a.theta() / c).abs() < 1e-12);
        }
    }

    #[test]
    fn partialled_design_matches_direct_fits() {
        let d = random_data(12, 70, 3, 8, AlternativeSpec::AltIi);
        let pd = ParsimoniousDesign::new(d.design(), 8).unwrap();
        for flavor in [SeFlavor::Robust, SeFlavor::Homoskedastic] {
            let (th, se) = pd.thetas_and_se(d.y(), flavor);
            let plain = pd.thetas(d.y());
            for i in 1..=8 {
                let f = fit_parsimonious(&d, &linear_response(3), i, flavor).unwrap();
                assert!((th[i - 1] - f.theta()).abs() < 1e-10);
                assert!((plain[i - 1] - f.theta()).abs() < 1e-10);
                assert!((se[i - 1] - f.se_theta).abs() < 1e-10 * f.se_theta);
            }
        }
    }

    #[test]
    fn sandwich_recomputes_fit_flavor() {
        let d = random_data(2, 50, 1, 2, AlternativeSpec::Null);
        let f = fit_parsimonious(&d, &linear_response(1), 2, SeFlavor::Robust).unwrap();
        let cov = sandwich_se(&d, &linear_response(1), &f, SeFlavor::Robust).unwrap();
        assert!((cov.get(1, 1).sqrt() - f.se_theta).abs() < 1e-15);
        let full = fit_full(&d, &linear_response(1), 2, SeFlavor::Robust).unwrap();
        let homo = full_sandwich(&d, &full, SeFlavor::Homoskedastic).unwrap();
        let direct = fit_full(&d, &linear_response(1), 2, SeFlavor::Homoskedastic).unwrap();
        assert_eq!(homo, direct.covariance);
    }

    #[test]
    fn permutation_equivariance() {
        let d = random_data(21, 60, 2, 5, AlternativeSpec::AltIi);
        let perm = [3usize, 0, 4, 1, 2];
        let cols: Vec<Vec<f64>> = perm.iter().map(|&p| d.design().theta_columns()[p].clone()).collect();
        let pd = Dataset::new(d.y().to_vec(), d.design().delta_columns().to_vec(), cols).unwrap();
        let a = fit_all_parsimonious(&d, &linear_response(2), 5, SeFlavor::Robust).unwrap();
        let b = fit_all_parsimonious(&pd, &linear_response(2), 5, SeFlavor::Robust).unwrap();
        for (j, &p) in perm.iter().enumerate() {
            assert!((b[j].theta() - a[p].theta()).abs() < 1e-12);
            assert!((b[j].se_theta - a[p].se_theta).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_hessian_expansion_is_exact() {
        let d = random_data(31, 200, 2, 6, AlternativeSpec::Null);
        let fits = fit_all_parsimonious(&d, &linear_response(2), 6, SeFlavor::Robust).unwrap();
        let r = fit_restricted(&d, &linear_response(2)).unwrap();
        for v in expansion_diagnostic(&d, &fits, &r, HessianSource::Sample).unwrap() {
            assert!(v < 1e-10, "{v}");
        }
    }

    #[test]
    fn expansion_zero_without_noise() {
        let x = random_data(7, 40, 1, 4, AlternativeSpec::Null);
        let y: Vec<f64> = x.design().delta_columns()[0].clone();
        let d = Dataset::from_design(y, x.design().clone()).unwrap();
        let fits = fit_all_parsimonious(&d, &linear_response(1), 4, SeFlavor::Robust).unwrap();
        let r = fit_restricted(&d, &linear_response(1)).unwrap();
        let cov = SpdMatrix::identity(5);
        for v in expansion_diagnostic(&d, &fits, &r, HessianSource::Population(&cov)).unwrap() {
            assert!(v < 1e-12);
        }
    }

    #[test]
    fn orthonormal_fixed_design_expansion() {
        // k_delta = 0 and columns with x'x = n: sample and population
        // Hessians coincide, so sqrt(n) theta_hat equals the expansion term
        let n = 8;
        let h = |j: usize| -> Vec<f64> { (0..n).map(|t| if (t & j).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 }).collect() };
        let y: Vec<f64> = (0..n).map(|t| ((t * 7 % 5) as f64) - 2.0).collect();
        let d = Dataset::new(y, vec![], (1..=3).map(h).collect()).unwrap();
        let fits = fit_all_parsimonious(&d, &linear_response(0), 3, SeFlavor::Robust).unwrap();
        let r = fit_restricted(&d, &linear_response(0)).unwrap();
        let cov = SpdMatrix::identity(3);
        for v in expansion_diagnostic(&d, &fits, &r, HessianSource::Population(&cov)).unwrap() {
            assert!(v < 1e-14);
        }
    }

    #[test]
    fn pseudo_true_under_null_is_delta0() {
        let cov = SpdMatrix::new(3, vec![2.0, 0.5, 0.3, 0.5, 1.5, -0.2, 0.3, -0.2, 1.0]).unwrap();
        let p = pseudo_true(&cov, 1, &[1.0, 0.0, 0.0]).unwrap();
        for b in p {
            assert!(b.theta.abs() < 1e-15);
            assert!((b.delta[0] - 1.0).abs() < 1e-15);
        }
    }

    struct Exponential;

    // f = exp(delta * x_d) + theta_i x_theta_i
    impl ResponseModel for Exponential {
        fn k_delta(&self) -> usize {
            1
        }
        fn eval(&self, x: crate::model::Row<'_>, b: &ParsimoniousParam) -> f64 {
            (b.delta[0] * x.delta[0]).exp() + b.theta * x.theta[b.index - 1]
        }
        fn grad(&self, x: crate::model::Row<'_>, b: &ParsimoniousParam) -> Vec<f64> {
            vec![x.delta[0] * (b.delta[0] * x.delta[0]).exp(), x.theta[b.index - 1]]
        }
        fn hess(&self, x: crate::model::Row<'_>, b: &ParsimoniousParam) -> Vec<f64> {
            vec![x.delta[0].powi(2) * (b.delta[0] * x.delta[0]).exp(), 0.0, 0.0, 0.0]
        }
    }

    #[test]
    fn gauss_newton_recovers_nonlinear_truth() {
        let mut s = RngStream::new(77, 0);
        let n = 400;
        let xd: Vec<f64> = (0..n).map(|_| s.uniform(-1.0, 1.0)).collect();
        let xt: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| s.std_normal()).collect()).collect();
        let y: Vec<f64> = (0..n).map(|t| (0.7 * xd[t]).exp() + 0.5 * xt[1][t] + 0.01 * s.std_normal()).collect();
        let d = Dataset::new(y, vec![xd], xt).unwrap();
        let f = fit_parsimonious(&d, &Exponential, 2, SeFlavor::Robust).unwrap();
        assert!((f.beta.delta[0] - 0.7).abs() < 0.01);
        assert!((f.theta() - 0.5).abs() < 0.01);
        assert!(f.gradient_at_fit_norm < 1e-8);
        assert!(f.se_theta > 0.0);
        let r = fit_restricted(&d, &Exponential).unwrap();
        assert!((r.delta0_hat[0] - 0.7).abs() < 0.1);
        assert!(matches!(fit_full(&d, &Exponential, 2, SeFlavor::Robust), Err(Error::RequiresLinear(_))));
    }
}
