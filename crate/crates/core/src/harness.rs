//! Configuration-driven Monte Carlo experiments: simulate `R` datasets, run
//! each configured test on every one and tabulate rejection frequencies.
//!
//! Replication `r` (1-based) draws its data from stream `[r, 0]` of the
//! master seed and its bootstrap multipliers from streams `[r, 1..=M]`, so a
//! report depends only on the configuration, never on scheduling.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bootstrap::{max_bootstrap_multi, wald_bootstrap, BootstrapConfig, WeightReuse};
use crate::dgp::{gen_dataset, DgpSpec};
use crate::error::{Error, Result};
use crate::estimation::{fit_full, SeFlavor};
use crate::inference::{normalized_wald, wald_statistic, Method};
use crate::model::{cap_k, linear_response, rate_rule_k, Dataset};
use crate::numerics::RngStream;

/// Environment variable overriding the configured worker count.
pub const WORKERS_ENV: &str = "MAXZERO_WORKERS";

/// Share of failed replications tolerated before an experiment aborts.
const FAILED_REPLICATION_BUDGET: f64 = 0.01;

/// Number of parsimonious models used per dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KRule {
    Fixed(usize),
    /// `round(5 n^(1/2 - iota))`.
    Rate,
}

impl KRule {
    pub fn k(self, n: usize) -> usize {
        match self {
            KRule::Fixed(k) => k,
            KRule::Rate => rate_rule_k(n),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: ReportFormat,
}

fn default_bootstrap_replicates() -> usize {
    200
}

/// Bootstrap settings of an experiment; seeds and streams come from the
/// experiment itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSettings {
    #[serde(default = "default_bootstrap_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub weight_reuse: WeightReuse,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self { replicates: default_bootstrap_replicates(), weight_reuse: WeightReuse::default() }
    }
}

fn default_name() -> String {
    "experiment".into()
}

fn default_levels() -> Vec<f64> {
    vec![0.01, 0.05, 0.10]
}

fn default_methods() -> Vec<Method> {
    vec![Method::Max, Method::MaxT]
}

fn default_homoskedastic() -> SeFlavor {
    SeFlavor::Homoskedastic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub replications: usize,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub k_rule: KRule,
    pub dgp: DgpSpec,
    #[serde(default)]
    pub bootstrap: BootstrapSettings,
    /// Standard errors behind max-t weights; homoskedastic by default, as
    /// the simulated errors are iid.
    #[serde(default = "default_homoskedastic")]
    pub max_se: SeFlavor,
    /// Covariance flavor of the Wald statistics.
    #[serde(default = "default_homoskedastic")]
    pub wald_se: SeFlavor,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

impl ExperimentConfig {
    /// Reads TOML or JSON, chosen by extension (TOML when unknown).
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text),
            _ => Self::from_toml(&text),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn k_requested(&self) -> usize {
        self.k_rule.k(self.dgp.n)
    }

    /// Test-block size after capping at `n - k_delta - 2`.
    pub fn k_used(&self) -> usize {
        let k = self.k_requested();
        cap_k(k, k, self.dgp.n, self.dgp.k_delta)
    }

    /// The simulation design with its test block sized by the k rule.
    pub fn resolved_dgp(&self) -> DgpSpec {
        DgpSpec { k_theta: self.k_used(), ..self.dgp.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::ConfigInvalid("replications must be at least 1".into()));
        }
        if self.levels.is_empty() || self.levels.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::ConfigInvalid("levels must be nonempty and inside (0, 1)".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::ConfigInvalid("at least one method is required".into()));
        }
        if self.bootstrap.replicates == 0 {
            return Err(Error::ConfigInvalid("bootstrap replicates must be at least 1".into()));
        }
        let k = self.k_used();
        if k == 0 {
            return Err(Error::ConfigInvalid(format!("k rule gives no test parameters at n = {}", self.dgp.n)));
        }
        if k < self.k_requested() {
            log::warn!("k = {} capped to {k} at n = {}", self.k_requested(), self.dgp.n);
        }
        if self.methods.iter().any(|m| m.needs_full_fit()) && self.dgp.n <= self.dgp.k_delta + k {
            return Err(Error::ConfigInvalid(format!(
                "Wald methods need n > k_delta + k, got n = {}, k_delta = {}, k = {k}",
                self.dgp.n, self.dgp.k_delta
            )));
        }
        self.resolved_dgp().validate()
    }

    /// Worker count after the environment override; 0 means all cores.
    pub fn effective_workers(&self) -> usize {
        std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(self.workers)
    }

    /// SHA-256 of the configuration with scheduling and output fields
    /// cleared, so that equal digests imply equal reports.
    pub fn digest(&self) -> String {
        let canonical = Self { workers: 0, output: None, ..self.clone() };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn bootstrap_config(&self, r: usize) -> BootstrapConfig {
        BootstrapConfig {
            replicates: self.bootstrap.replicates,
            seed: self.seed,
            stream_base: r as u64,
            weight_reuse: self.bootstrap.weight_reuse,
            record_draws: false,
        }
    }
}

/// Data stream of replication `r`.
pub fn data_stream(seed: u64, r: usize) -> RngStream {
    RngStream::at(seed, &[r as u64, 0])
}

/// p-values of one replication, aligned with the configured methods.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub r: usize,
    pub p_values: Vec<f64>,
}

/// Runs every configured method on replication `r` (1-based).
pub fn run_replication(cfg: &ExperimentConfig, r: usize) -> Result<Replication> {
    let spec = cfg.resolved_dgp();
    let data = gen_dataset(&spec, &mut data_stream(cfg.seed, r))?;
    let p_values = method_p_values(cfg, &data, r)?;
    Ok(Replication { r, p_values })
}

fn method_p_values(cfg: &ExperimentConfig, data: &Dataset, r: usize) -> Result<Vec<f64>> {
    let model = linear_response(data.k_delta());
    let k = cfg.k_used();
    let boot = cfg.bootstrap_config(r);
    let mut p = vec![f64::NAN; cfg.methods.len()];

    let max_methods: Vec<(usize, Method)> = cfg.methods.iter().copied().enumerate().filter(|(_, m)| m.is_max_family()).collect();
    if !max_methods.is_empty() {
        let schemes: Vec<_> = max_methods.iter().map(|(_, m)| m.scheme().expect("max family")).collect();
        let outs = max_bootstrap_multi(data, &model, k, &schemes, cfg.max_se, &boot)?;
        for ((slot, _), out) in max_methods.iter().zip(outs) {
            p[*slot] = out.bootstrap.p_value;
        }
    }

    let wants = |m: Method| cfg.methods.contains(&m);
    if wants(Method::WaldAsymptotic) || wants(Method::WaldNormalized) {
        let wald = wald_statistic(&fit_full(data, &model, k, cfg.wald_se)?)?;
        let normalized = normalized_wald(&wald, k);
        for (slot, m) in cfg.methods.iter().enumerate() {
            match m {
                Method::WaldAsymptotic => p[slot] = wald.p_value.expect("asymptotic p-value"),
                Method::WaldNormalized => p[slot] = normalized.p_value.expect("asymptotic p-value"),
                _ => {}
            }
        }
    }
    if wants(Method::WaldBootstrap) || wants(Method::WaldNormalizedBootstrap) {
        let out = wald_bootstrap(data, &model, k, cfg.wald_se, &boot)?;
        for (slot, m) in cfg.methods.iter().enumerate() {
            match m {
                Method::WaldBootstrap => p[slot] = out.bootstrap.p_value,
                Method::WaldNormalizedBootstrap => p[slot] = out.normalized_bootstrap.p_value,
                _ => {}
            }
        }
    }
    Ok(p)
}

/// Runs all replications on a pool of `cfg.effective_workers()` threads.
/// Failed replications are logged and excluded; more than 1% aborts.
pub fn run_replications(cfg: &ExperimentConfig) -> Result<Vec<Replication>> {
    run_replications_on(cfg, cfg.effective_workers())
}

/// As [`run_replications`] with an explicit worker count (0 = all cores).
pub fn run_replications_on(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<Replication>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("cannot build worker pool: {e}")))?;
    let results: Vec<Result<Replication>> =
        pool.install(|| (1..=cfg.replications).into_par_iter().map(|r| run_replication(cfg, r)).collect());

    let total = results.len();
    let mut done = Vec::with_capacity(total);
    let mut failures = Vec::new();
    for (r, res) in (1..=total).zip(results) {
        match res {
            Ok(rep) => done.push(rep),
            Err(e) => {
                log::warn!("replication {r} (seed {}, stream [{r}, 0]) failed: {e}", cfg.seed);
                failures.push(format!("replication {r}: {e}"));
            }
        }
    }
    if !failures.is_empty() && failures.len() as f64 > FAILED_REPLICATION_BUDGET * total as f64 {
        return Err(Error::TooManyFailedReplications {
            failed: failures.len(),
            total,
            first: failures.swap_remove(0),
        });
    }
    Ok(done)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub alpha: f64,
    pub rejections: usize,
    pub reject_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub version: String,
    pub config_digest: String,
    pub seed: u64,
    pub replications: usize,
    pub completed: usize,
    pub failed: usize,
    pub bootstrap_replicates: usize,
    pub n: usize,
    pub k_delta: usize,
    pub k_theta: usize,
    pub case: String,
    pub alternative: String,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    /// Tabulates `1{p < alpha}` per (method, level).
    pub fn from_replications(cfg: &ExperimentConfig, reps: &[Replication]) -> Self {
        let completed = reps.len();
        let mut rows = Vec::with_capacity(cfg.methods.len() * cfg.levels.len());
        for (slot, &method) in cfg.methods.iter().enumerate() {
            for &alpha in &cfg.levels {
                let rejections = reps.iter().filter(|rep| rep.p_values[slot] < alpha).count();
                let reject_rate = if completed == 0 { f64::NAN } else { rejections as f64 / completed as f64 };
                rows.push(ReportRow { method, alpha, rejections, reject_rate });
            }
        }
        Self {
            name: cfg.name.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: cfg.digest(),
            seed: cfg.seed,
            replications: cfg.replications,
            completed,
            failed: cfg.replications - completed,
            bootstrap_replicates: cfg.bootstrap.replicates,
            n: cfg.dgp.n,
            k_delta: cfg.dgp.k_delta,
            k_theta: cfg.k_used(),
            case: cfg.dgp.covariates.label(),
            alternative: cfg.dgp.alternative.label(),
            rows,
        }
    }

    pub fn rate(&self, method: Method, alpha: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|row| row.method == method && (row.alpha - alpha).abs() < 1e-12)
            .map(|row| row.reject_rate)
    }

    /// Plain-text table for terminals.
    pub fn summary(&self) -> String {
        let mut levels: Vec<f64> = Vec::new();
        let mut methods: Vec<Method> = Vec::new();
        for row in &self.rows {
            if !levels.contains(&row.alpha) {
                levels.push(row.alpha);
            }
            if !methods.contains(&row.method) {
                methods.push(row.method);
            }
        }
        let mut out = format!(
            "{}: n={} k_delta={} k={} case={} alternative={} R={} (failed {}) M={} seed={}\n",
            self.name,
            self.n,
            self.k_delta,
            self.k_theta,
            self.case,
            self.alternative,
            self.replications,
            self.failed,
            self.bootstrap_replicates,
            self.seed
        );
        out.push_str(&format!("{:<28}", "method"));
        for a in &levels {
            out.push_str(&format!("{:>9}", format!("{:.0}%", a * 100.0)));
        }
        out.push('\n');
        for m in methods {
            out.push_str(&format!("{:<28}", m.tag()));
            for &a in &levels {
                out.push_str(&format!("{:>9.3}", self.rate(m, a).unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub const CSV_COLUMNS: [&str; 11] =
    ["method", "alpha", "reject_rate", "R", "M", "n", "k_delta", "k_theta", "case", "alternative", "seed"];

/// Writes the report as CSV (one row per method and level) or JSON.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, writer: impl Write) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let mut writer = writer;
            serde_json::to_writer_pretty(&mut writer, report)?;
            writer.write_all(b"\n")?;
            writer.flush()?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            let csv_err = |e: csv::Error| Error::Csv(e.to_string());
            w.write_record(CSV_COLUMNS).map_err(csv_err)?;
            for row in &report.rows {
                w.write_record([
                    row.method.tag().to_string(),
                    row.alpha.to_string(),
                    row.reject_rate.to_string(),
                    report.replications.to_string(),
                    report.bootstrap_replicates.to_string(),
                    report.n.to_string(),
                    report.k_delta.to_string(),
                    report.k_theta.to_string(),
                    report.case.clone(),
                    report.alternative.clone(),
                    report.seed.to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn emit_report_to_path(report: &ExperimentReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    emit_report(report, format, file)
}

/// Validates, runs and tabulates an experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_on(cfg, cfg.effective_workers())
}

/// As [`run_experiment`] with an explicit worker count (0 = all cores).
pub fn run_experiment_on(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentReport> {
    let reps = run_replications_on(cfg, workers)?;
    Ok(ExperimentReport::from_replications(cfg, &reps))
}
