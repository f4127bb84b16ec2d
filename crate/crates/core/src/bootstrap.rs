//! Fixed-design wild multiplier bootstrap for the max-tests (centred on the
//! restricted fit) and for the Wald test (centred on the nuisance part of
//! the unrestricted fit).
//!
//! Draw `j` of a bootstrap always reads its multipliers from stream
//! `[stream_base, j]` of the master seed, so results do not depend on how
//! draws are scheduled across threads.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit_all_parsimonious, fit_full, fit_restricted, FullDesign, ParsimoniousDesign, SeFlavor};
use crate::inference::{max_statistic, normalize_wald, wald_statistic, weighted_max, Method, TestResult, WeightScheme};
use crate::model::{Dataset, Design, ResponseModel};
use crate::numerics::RngStream;

/// Share of failed draws tolerated before a bootstrap is abandoned.
const FAILED_DRAW_BUDGET: f64 = 0.01;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightReuse {
    /// Bootstrap statistics use the weights of the observed sample.
    #[default]
    ReuseSampleWeights,
    /// Standard errors, hence max-t weights, are re-estimated per draw.
    RecomputePerDraw,
}

fn default_replicates() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// First component of every draw's stream path.
    #[serde(default)]
    pub stream_base: u64,
    #[serde(default)]
    pub weight_reuse: WeightReuse,
    #[serde(default)]
    pub record_draws: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: default_replicates(),
            seed: 0,
            stream_base: 0,
            weight_reuse: WeightReuse::default(),
            record_draws: false,
        }
    }
}

impl BootstrapConfig {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self { replicates, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::ConfigInvalid("bootstrap replicates must be at least 1".into()));
        }
        Ok(())
    }

    /// Multiplier stream of draw `j` (1-based).
    pub fn stream(&self, j: usize) -> RngStream {
        RngStream::at(self.seed, &[self.stream_base, j as u64])
    }

    fn multipliers(&self, j: usize, n: usize) -> Vec<f64> {
        let mut eta = vec![0.0; n];
        self.stream(j).fill_std_normals(&mut eta);
        eta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    pub observed: f64,
    pub p_value: f64,
    /// Number of successful draws exceeding the observed statistic.
    pub exceedances: usize,
    pub valid_draws: usize,
    pub failed_draws: usize,
    /// Every draw tied with the observed statistic (zero residuals).
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<Vec<f64>>,
}

impl BootstrapOutcome {
    /// `(1/M) sum_j 1{draw_j > observed}` over the successful draws.
    fn from_draws(observed: f64, draws: Vec<Option<f64>>, record: bool) -> Result<Self> {
        let total = draws.len();
        let valid: Vec<f64> = draws.into_iter().flatten().collect();
        let failed = total - valid.len();
        if failed as f64 > FAILED_DRAW_BUDGET * total as f64 {
            return Err(Error::BootstrapDegenerate { failed, total });
        }
        if valid.is_empty() {
            return Err(Error::BootstrapDegenerate { failed, total });
        }
        let exceedances = valid.iter().filter(|&&d| d > observed).count();
        let degenerate = valid.iter().all(|&d| d == observed);
        if degenerate {
            log::warn!("bootstrap is degenerate: all {} draws equal the observed statistic", valid.len());
        }
        if failed > 0 {
            log::warn!("{failed} of {total} bootstrap draws failed and were excluded");
        }
        Ok(Self {
            observed,
            p_value: exceedances as f64 / valid.len() as f64,
            exceedances,
            valid_draws: valid.len(),
            failed_draws: failed,
            degenerate,
            draws: record.then_some(valid),
        })
    }

    /// Per-draw indicators `1{draw_j > observed}`, when draws are recorded.
    pub fn indicators(&self) -> Option<Vec<bool>> {
        self.draws.as_ref().map(|d| d.iter().map(|&v| v > self.observed).collect())
    }

    /// One CSV row per draw: `j,statistic`.
    pub fn write_draws_csv(&self, writer: impl Write) -> Result<()> {
        let draws = self
            .draws
            .as_ref()
            .ok_or_else(|| Error::ConfigInvalid("draws were not recorded".into()))?;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["j", "statistic"]).map_err(|e| Error::Csv(e.to_string()))?;
        for (j, d) in draws.iter().enumerate() {
            w.write_record([(j + 1).to_string(), format!("{d:?}")]).map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Null-imposed resampling scheme `y*_t = mean_t + scale_t eta_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDgp {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl BootstrapDgp {
    /// Restricted-fit centring: `f(x_t, beta_hat^(0)) + eps0_t eta_t`.
    pub fn restricted(data: &Dataset, model: &dyn ResponseModel) -> Result<Self> {
        let r = fit_restricted(data, model)?;
        Ok(Self { mean: r.fitted, scale: r.residuals })
    }

    /// Wald centring: `delta_hat' x_delta,t + eps_t(beta_hat) eta_t` from the
    /// nuisance coefficients and residuals of the unrestricted fit.
    pub fn from_nuisance(design: &Design, delta_hat: &[f64], residuals: Vec<f64>) -> Self {
        let mut mean = vec![0.0; design.n()];
        for (col, d) in design.delta_columns().iter().zip(delta_hat) {
            for (m, x) in mean.iter_mut().zip(col) {
                *m += d * x;
            }
        }
        Self { mean, scale: residuals }
    }

    pub fn response(&self, eta: &[f64]) -> Vec<f64> {
        self.mean.iter().zip(&self.scale).zip(eta).map(|((m, s), e)| m + s * e).collect()
    }
}

/// Observed max statistic with its bootstrap p-value.
#[derive(Debug, Clone)]
pub struct MaxTestOutcome {
    pub result: TestResult,
    pub bootstrap: BootstrapOutcome,
}

/// Bootstrap p-value of the max statistic under one weight scheme.
pub fn max_bootstrap(
    data: &Dataset,
    model: &dyn ResponseModel,
    k_used: usize,
    scheme: WeightScheme,
    flavor: SeFlavor,
    cfg: &BootstrapConfig,
) -> Result<MaxTestOutcome> {
    let mut out = max_bootstrap_multi(data, model, k_used, &[scheme], flavor, cfg)?;
    Ok(out.remove(0))
}

/// Several weight schemes on one set of multiplier draws.
pub fn max_bootstrap_multi(
    data: &Dataset,
    model: &dyn ResponseModel,
    k_used: usize,
    schemes: &[WeightScheme],
    flavor: SeFlavor,
    cfg: &BootstrapConfig,
) -> Result<Vec<MaxTestOutcome>> {
    cfg.validate()?;
    let n = data.n();
    let fits = fit_all_parsimonious(data, model, k_used, flavor)?;
    let observed: Vec<TestResult> = schemes.iter().map(|&s| max_statistic(&fits, s, n)).collect::<Result<_>>()?;
    let sample_weights: Vec<Vec<f64>> = observed
        .iter()
        .map(|r| r.per_index.iter().map(|c| c.weight).collect())
        .collect();
    let dgp = BootstrapDgp::restricted(data, model)?;

    let draw_stats: Vec<Vec<Option<f64>>> = if model.is_linear() {
        let pd = ParsimoniousDesign::new(data.design(), k_used)?;
        (1..=cfg.replicates)
            .into_par_iter()
            .map(|j| {
                let y_star = dgp.response(&cfg.multipliers(j, n));
                match cfg.weight_reuse {
                    WeightReuse::ReuseSampleWeights => {
                        let th = pd.thetas(&y_star);
                        sample_weights.iter().map(|w| Some(weighted_max(&th, w, n).0)).collect()
                    }
                    WeightReuse::RecomputePerDraw => {
                        let (th, se) = pd.thetas_and_se(&y_star, flavor);
                        schemes
                            .iter()
                            .map(|s| s.weights(&se, n).ok().map(|w| weighted_max(&th, &w, n).0))
                            .collect()
                    }
                }
            })
            .collect()
    } else {
        (1..=cfg.replicates)
            .into_par_iter()
            .map(|j| {
                let y_star = dgp.response(&cfg.multipliers(j, n));
                let sample = match Dataset::from_design(y_star, data.design().clone()) {
                    Ok(s) => s,
                    Err(_) => return vec![None; schemes.len()],
                };
                let fits = match fit_all_parsimonious(&sample, model, k_used, flavor) {
                    Ok(f) => f,
                    Err(e) => {
                        log::debug!("bootstrap draw {j} failed: {e}");
                        return vec![None; schemes.len()];
                    }
                };
                let th: Vec<f64> = fits.iter().map(|f| f.theta()).collect();
                let se: Vec<f64> = fits.iter().map(|f| f.se_theta).collect();
                schemes
                    .iter()
                    .zip(&sample_weights)
                    .map(|(s, w)| match cfg.weight_reuse {
                        WeightReuse::ReuseSampleWeights => Some(weighted_max(&th, w, n).0),
                        WeightReuse::RecomputePerDraw => s.weights(&se, n).ok().map(|w| weighted_max(&th, &w, n).0),
                    })
                    .collect()
            })
            .collect()
    };

    observed
        .into_iter()
        .enumerate()
        .map(|(s, mut result)| {
            let draws = draw_stats.iter().map(|d| d[s]).collect();
            let mut bootstrap = BootstrapOutcome::from_draws(result.statistic, draws, cfg.record_draws)?;
            bootstrap.degenerate |= dgp.scale.iter().all(|&e| e == 0.0);
            result.p_value = Some(bootstrap.p_value);
            Ok(MaxTestOutcome { result, bootstrap })
        })
        .collect()
}

/// Wald and normalized-Wald bootstrap results from one set of draws.
#[derive(Debug, Clone)]
pub struct WaldBootstrapOutcome {
    pub wald: TestResult,
    pub bootstrap: BootstrapOutcome,
    pub normalized: TestResult,
    pub normalized_bootstrap: BootstrapOutcome,
}

/// Parametric wild bootstrap of the Wald statistic. The p-value is the
/// share of draws `W*_j` exceeding the observed `W_n`; the test rejects when
/// it falls below the level.
pub fn wald_bootstrap(
    data: &Dataset,
    model: &dyn ResponseModel,
    k_used: usize,
    flavor: SeFlavor,
    cfg: &BootstrapConfig,
) -> Result<WaldBootstrapOutcome> {
    cfg.validate()?;
    if !model.is_linear() {
        return Err(Error::RequiresLinear("the Wald bootstrap"));
    }
    let n = data.n();
    let kd = data.k_delta();
    let fit = fit_full(data, model, k_used, flavor)?;
    let mut wald = wald_statistic(&fit)?;
    let full = FullDesign::new(data.design(), k_used)?;
    let dgp = BootstrapDgp::from_nuisance(data.design(), &fit.beta[..kd], fit.residuals.clone());

    let draws: Vec<Option<f64>> = (1..=cfg.replicates)
        .into_par_iter()
        .map(|j| {
            let y_star = dgp.response(&cfg.multipliers(j, n));
            full.wald(&y_star, flavor).ok()
        })
        .collect();

    let observed = wald.statistic;
    let normalized_draws: Vec<Option<f64>> = draws.iter().map(|d| d.map(|w| normalize_wald(w, k_used))).collect();
    let bootstrap = BootstrapOutcome::from_draws(observed, draws, cfg.record_draws)?;
    let normalized_observed = normalize_wald(observed, k_used);
    let normalized_bootstrap = BootstrapOutcome::from_draws(normalized_observed, normalized_draws, cfg.record_draws)?;

    wald.method = Method::WaldBootstrap;
    wald.p_value = Some(bootstrap.p_value);
    let normalized = TestResult {
        method: Method::WaldNormalizedBootstrap,
        statistic: normalized_observed,
        p_value: Some(normalized_bootstrap.p_value),
        argmax_index: None,
        k_used,
        n,
        per_index: Vec::new(),
    };
    Ok(WaldBootstrapOutcome { wald, bootstrap, normalized, normalized_bootstrap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{gen_dataset, AlternativeSpec, CovariateCase, DgpSpec};
    use crate::model::linear_response;

    fn data(seed: u64, n: usize, kd: usize, k: usize, alt: AlternativeSpec) -> Dataset {
        let spec = DgpSpec::new(n, kd, k, CovariateCase::CrossBlockDependent, alt);
        gen_dataset(&spec, &mut RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn zero_residuals_are_degenerate() {
        let x = data(1, 30, 1, 3, AlternativeSpec::Null);
        let d = Dataset::from_design(vec![0.0; 30], x.design().clone()).unwrap();
        let out = max_bootstrap(&d, &linear_response(1), 3, WeightScheme::Flat, SeFlavor::Robust, &BootstrapConfig::new(20, 3)).unwrap();
        assert!(out.result.statistic < 1e-12);
        assert_eq!(out.bootstrap.p_value, 0.0);
        assert!(out.bootstrap.degenerate);
    }

    #[test]
    fn two_draw_hand_computation() {
        // n = 6, k_delta = 0, k = 2: restricted residuals are y itself
        let y = vec![1.0, -0.5, 0.8, 0.3, -1.2, 0.6];
        let x1 = vec![1.0, 0.0, 1.0, -1.0, 0.5, 0.0];
        let x2 = vec![0.0, 1.0, -1.0, 0.5, 1.0, 2.0];
        let d = Dataset::new(y.clone(), vec![], vec![x1.clone(), x2.clone()]).unwrap();
        let cfg = BootstrapConfig { record_draws: true, ..BootstrapConfig::new(2, 99) };
        let out = max_bootstrap(&d, &linear_response(0), 2, WeightScheme::Flat, SeFlavor::Robust, &cfg).unwrap();

        let slope = |x: &[f64], v: &[f64]| x.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / x.iter().map(|a| a * a).sum::<f64>();
        let root6 = 6f64.sqrt();
        let stat = |v: &[f64]| (root6 * slope(&x1, v)).abs().max((root6 * slope(&x2, v)).abs());
        let observed = stat(&y);
        let mut exceed = 0;
        for j in 1..=2 {
            let eta = crate::numerics::draw_std_normals(&mut cfg.stream(j), 6);
            let y_star: Vec<f64> = y.iter().zip(&eta).map(|(e, h)| e * h).collect();
            let t = stat(&y_star);
            assert!((t - out.bootstrap.draws.as_ref().unwrap()[j - 1]).abs() < 1e-12);
            if t > observed {
                exceed += 1;
            }
        }
        assert!((out.result.statistic - observed).abs() < 1e-12);
        assert_eq!(out.bootstrap.p_value, exceed as f64 / 2.0);
    }

    #[test]
    fn p_value_matches_recorded_draws() {
        let d = data(2, 60, 2, 5, AlternativeSpec::Null);
        let cfg = BootstrapConfig { record_draws: true, ..BootstrapConfig::new(50, 5) };
        for reuse in [WeightReuse::ReuseSampleWeights, WeightReuse::RecomputePerDraw] {
            let cfg = BootstrapConfig { weight_reuse: reuse, ..cfg.clone() };
            let outs = max_bootstrap_multi(&d, &linear_response(2), 5, &[WeightScheme::Flat, WeightScheme::InvSe], SeFlavor::Robust, &cfg).unwrap();
            for o in outs {
                let draws = o.bootstrap.draws.as_ref().unwrap();
                let count = draws.iter().filter(|&&v| v > o.result.statistic).count();
                assert_eq!(o.bootstrap.p_value, count as f64 / 50.0);
                assert_eq!(o.result.p_value, Some(o.bootstrap.p_value));
            }
        }
    }

    #[test]
    fn reuse_modes_agree_for_flat_weights() {
        let d = data(6, 40, 1, 4, AlternativeSpec::Null);
        let base = BootstrapConfig { record_draws: true, ..BootstrapConfig::new(30, 2) };
        let a = max_bootstrap(&d, &linear_response(1), 4, WeightScheme::Flat, SeFlavor::Robust, &base).unwrap();
        let b = max_bootstrap(&d, &linear_response(1), 4, WeightScheme::Flat, SeFlavor::Robust, &BootstrapConfig { weight_reuse: WeightReuse::RecomputePerDraw, ..base }).unwrap();
        for (x, y) in a.bootstrap.draws.unwrap().iter().zip(b.bootstrap.draws.unwrap()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn thread_count_does_not_matter() {
        let d = data(3, 80, 2, 6, AlternativeSpec::Null);
        let cfg = BootstrapConfig { record_draws: true, ..BootstrapConfig::new(64, 11) };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                let m = max_bootstrap(&d, &linear_response(2), 6, WeightScheme::InvSe, SeFlavor::Robust, &cfg).unwrap();
                let w = wald_bootstrap(&d, &linear_response(2), 6, SeFlavor::Homoskedastic, &cfg).unwrap();
                (m.bootstrap, w.bootstrap)
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn restricted_centring_ignores_test_block() {
        let d = data(4, 50, 2, 3, AlternativeSpec::AltIi);
        let garbage: Vec<Vec<f64>> = (0..3).map(|j| (0..50).map(|t| ((t * 31 + j * 7) % 13) as f64 - 6.0).collect()).collect();
        let g = Dataset::new(d.y().to_vec(), d.design().delta_columns().to_vec(), garbage.clone()).unwrap();
        let eta = crate::numerics::draw_std_normals(&mut RngStream::new(1, 1), 50);
        let a = BootstrapDgp::restricted(&d, &linear_response(2)).unwrap().response(&eta);
        let b = BootstrapDgp::restricted(&g, &linear_response(2)).unwrap().response(&eta);
        assert_eq!(a, b);

        let fit = fit_full(&d, &linear_response(2), 3, SeFlavor::Robust).unwrap();
        let gd = Design::new(d.design().delta_columns().to_vec(), garbage).unwrap();
        let a = BootstrapDgp::from_nuisance(d.design(), &fit.beta[..2], fit.residuals.clone()).response(&eta);
        let b = BootstrapDgp::from_nuisance(&gd, &fit.beta[..2], fit.residuals.clone()).response(&eta);
        assert_eq!(a, b);
    }

    #[test]
    fn wald_and_normalized_agree_drawwise() {
        let d = data(8, 70, 1, 8, AlternativeSpec::Null);
        let cfg = BootstrapConfig { record_draws: true, ..BootstrapConfig::new(100, 4) };
        let w = wald_bootstrap(&d, &linear_response(1), 8, SeFlavor::Homoskedastic, &cfg).unwrap();
        assert_eq!(w.bootstrap.indicators(), w.normalized_bootstrap.indicators());
        assert_eq!(w.bootstrap.p_value, w.normalized_bootstrap.p_value);
        let count = w.bootstrap.draws.as_ref().unwrap().iter().filter(|&&v| v > w.wald.statistic).count();
        assert_eq!(w.bootstrap.p_value, count as f64 / 100.0);
    }

    #[test]
    fn wald_bootstrap_needs_degrees_of_freedom() {
        let d = data(8, 12, 2, 10, AlternativeSpec::Null);
        assert!(matches!(
            wald_bootstrap(&d, &linear_response(2), 10, SeFlavor::Homoskedastic, &BootstrapConfig::new(10, 1)),
            Err(Error::InsufficientSample { .. })
        ));
        assert!(max_bootstrap(&d, &linear_response(2), 9, WeightScheme::InvSe, SeFlavor::Robust, &BootstrapConfig::new(10, 1)).is_ok());
    }

    #[test]
    fn failed_draw_budget() {
        let ok = BootstrapOutcome::from_draws(1.0, vec![Some(0.5); 100], false).unwrap();
        assert_eq!(ok.p_value, 0.0);
        let mut draws = vec![Some(2.0); 99];
        draws.push(None);
        let one = BootstrapOutcome::from_draws(1.0, draws, false).unwrap();
        assert_eq!((one.failed_draws, one.valid_draws, one.p_value), (1, 99, 1.0));
        let mut draws = vec![Some(2.0); 98];
        draws.extend([None, None]);
        assert!(matches!(BootstrapOutcome::from_draws(1.0, draws, false), Err(Error::BootstrapDegenerate { failed: 2, total: 100 })));
    }

    #[test]
    fn draw_dump() {
        let out = BootstrapOutcome::from_draws(1.0, vec![Some(0.5), Some(1.5)], true).unwrap();
        let mut buf = Vec::new();
        out.write_draws_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "j,statistic\n1,0.5\n2,1.5\n");
        assert_eq!(out.indicators(), Some(vec![false, true]));
    }

    #[test]
    fn rejects_zero_replicates() {
        let d = data(1, 20, 0, 2, AlternativeSpec::Null);
        assert!(max_bootstrap(&d, &linear_response(0), 2, WeightScheme::Flat, SeFlavor::Robust, &BootstrapConfig::new(0, 1)).is_err());
    }
}
