use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use maxzero::bootstrap::{max_bootstrap_multi, wald_bootstrap, BootstrapConfig};
use maxzero::estimation::{fit_full, SeFlavor};
use maxzero::harness::{emit_report, run_experiment_on, ExperimentConfig, ReportFormat, WORKERS_ENV};
use maxzero::inference::{normalized_wald, wald_statistic, Method, TestResult};
use maxzero::model::{linear_response, rate_rule_k, Dataset};
use maxzero::Error;

use crate::{DataArgs, FormatArg, McArgs, SeArg, WeightsArg};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { code: if e.is_numerical() { 3 } else { 2 }, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn flavor(se: SeArg) -> SeFlavor {
    match se {
        SeArg::Robust => SeFlavor::Robust,
        SeArg::Homoskedastic => SeFlavor::Homoskedastic,
    }
}

fn workers_from(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok())).unwrap_or(0)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything that determines the numbers of a `test`/`compare` run.
#[derive(Serialize)]
struct Invocation<'a> {
    command: &'a str,
    data_sha256: &'a str,
    methods: &'a [Method],
    alphas: &'a [f64],
    bootstrap_replicates: usize,
    k_used: usize,
    se: SeFlavor,
    seed: u64,
}

#[derive(Serialize)]
struct Decision {
    alpha: f64,
    reject: Option<bool>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum Entry {
    Done {
        #[serde(flatten)]
        result: TestResult,
        decisions: Vec<Decision>,
    },
    Failed {
        method: Method,
        error: String,
    },
}

#[derive(Serialize)]
struct TestOutput {
    version: &'static str,
    seed: u64,
    config_digest: String,
    data_sha256: String,
    n: usize,
    k_delta: usize,
    k_used: usize,
    bootstrap_replicates: usize,
    se: SeFlavor,
    results: Vec<Entry>,
}

fn resolve_methods(args: &DataArgs, compare: bool) -> Outcome<Vec<Method>> {
    if compare {
        if !args.method.is_empty() {
            return Err(Failure::input("compare runs every method; drop --method"));
        }
        return Ok(Method::ALL.to_vec());
    }
    if args.method.is_empty() {
        return Ok(vec![match args.weights {
            Some(WeightsArg::Flat) => Method::Max,
            Some(WeightsArg::Tstat) | None => Method::MaxT,
        }]);
    }
    let mut methods = Vec::new();
    for tag in &args.method {
        let m = Method::parse(tag).ok_or_else(|| {
            let known: Vec<_> = Method::ALL.iter().map(|m| m.tag()).collect();
            Failure::input(format!("unknown method `{tag}` (expected one of {})", known.join(", ")))
        })?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    Ok(methods)
}

fn resolve_k(arg: &str, data: &Dataset) -> Outcome<usize> {
    let available = data.k_theta();
    let requested = match arg {
        "all" => available,
        "rate" => rate_rule_k(data.n()),
        s => s.parse::<usize>().map_err(|_| Failure::input(format!("--k expects a count, `rate` or `all`, got `{s}`")))?,
    };
    if requested == 0 {
        return Err(Failure::input("--k must be at least 1"));
    }
    if requested > available {
        eprintln!("warning: k = {requested} exceeds the {available} tested columns; using {available}");
    }
    Ok(requested.min(available))
}

fn decisions(result: &TestResult, alphas: &[f64]) -> Vec<Decision> {
    alphas.iter().map(|&alpha| Decision { alpha, reject: result.rejects(alpha) }).collect()
}

/// Runs the requested methods, sharing fits and draws between related ones.
fn evaluate(data: &Dataset, methods: &[Method], k: usize, se: SeFlavor, boot: &BootstrapConfig) -> Vec<(Method, Outcome<TestResult>)> {
    let model = linear_response(data.k_delta());
    let schemes: Vec<_> = methods.iter().filter_map(|m| m.scheme()).collect();
    let max_results = (!schemes.is_empty()).then(|| max_bootstrap_multi(data, &model, k, &schemes, se, boot).map_err(Failure::from));
    let asymptotic = (methods.contains(&Method::WaldAsymptotic) || methods.contains(&Method::WaldNormalized))
        .then(|| fit_full(data, &model, k, se).and_then(|fit| wald_statistic(&fit)).map_err(Failure::from));
    let bootstrapped = (methods.contains(&Method::WaldBootstrap) || methods.contains(&Method::WaldNormalizedBootstrap))
        .then(|| wald_bootstrap(data, &model, k, se, boot).map_err(Failure::from));

    let mut max_slot = 0;
    methods
        .iter()
        .map(|&m| {
            let result = match m {
                Method::Max | Method::MaxT => {
                    let outs = max_results.as_ref().expect("max methods were run");
                    max_slot += 1;
                    outs.as_ref().map(|o| o[max_slot - 1].result.clone()).map_err(Failure::clone)
                }
                Method::WaldAsymptotic => asymptotic.clone().expect("Wald statistic was computed"),
                Method::WaldNormalized => asymptotic.clone().expect("Wald statistic was computed").map(|w| normalized_wald(&w, k)),
                Method::WaldBootstrap => bootstrapped.as_ref().expect("Wald bootstrap was run").clone().map(|o| o.wald),
                Method::WaldNormalizedBootstrap => bootstrapped.as_ref().expect("Wald bootstrap was run").clone().map(|o| o.normalized),
            };
            (m, result)
        })
        .collect()
}

fn open_output(out: Option<&Path>) -> Outcome<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

pub fn test(args: &DataArgs, compare: bool) -> Outcome {
    if args.alpha.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Failure::input("--alpha must lie in (0, 1)"));
    }
    if args.m == 0 {
        return Err(Failure::input("--M must be at least 1"));
    }
    let methods = resolve_methods(args, compare)?;
    let bytes = std::fs::read(&args.data).map_err(|e| Failure::input(format!("{}: {e}", args.data.display())))?;
    let data = Dataset::from_csv_reader(bytes.as_slice()).map_err(|e| Failure::input(format!("{}: {e}", args.data.display())))?;
    let k = resolve_k(&args.k, &data)?;
    let se = flavor(args.se);
    let data_sha256 = sha256_hex(&bytes);
    let invocation = Invocation {
        command: if compare { "compare" } else { "test" },
        data_sha256: &data_sha256,
        methods: &methods,
        alphas: &args.alpha,
        bootstrap_replicates: args.m,
        k_used: k,
        se,
        seed: args.seed,
    };
    let config_digest = sha256_hex(serde_json::to_string(&invocation).expect("invocation serializes").as_bytes());

    let boot = BootstrapConfig::new(args.m, args.seed);
    let pool = rayon_pool(workers_from(args.workers))?;
    let evaluated = pool.install(|| evaluate(&data, &methods, k, se, &boot));

    let mut results = Vec::new();
    for (method, r) in evaluated {
        match r {
            Ok(result) => {
                let decisions = decisions(&result, &args.alpha);
                results.push(Entry::Done { result, decisions });
            }
            Err(e) if compare => results.push(Entry::Failed { method, error: e.message }),
            Err(e) => return Err(e),
        }
    }
    let output = TestOutput {
        version: VERSION,
        seed: args.seed,
        config_digest,
        data_sha256,
        n: data.n(),
        k_delta: data.k_delta(),
        k_used: k,
        bootstrap_replicates: args.m,
        se,
        results,
    };
    let mut w = open_output(args.out.as_deref())?;
    match args.format {
        FormatArg::Json => {
            serde_json::to_writer_pretty(&mut w, &output).map_err(|e| Failure::input(e.to_string()))?;
            writeln!(w)?;
        }
        FormatArg::Csv => write_test_csv(&output, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

fn write_test_csv(output: &TestOutput, w: &mut dyn Write) -> Outcome {
    let mut csv = csv::Writer::from_writer(w);
    let fail = |e: csv::Error| Failure::input(e.to_string());
    csv.write_record(["method", "statistic", "p_value", "argmax_index", "k_used", "n", "alpha", "reject", "error", "version", "seed", "config_digest"])
        .map_err(fail)?;
    let tail = [VERSION.to_string(), output.seed.to_string(), output.config_digest.clone()];
    let opt = |v: Option<String>| v.unwrap_or_default();
    for entry in &output.results {
        match entry {
            Entry::Done { result, decisions } => {
                for d in decisions {
                    let mut row = vec![
                        result.method.tag().to_string(),
                        format!("{:?}", result.statistic),
                        opt(result.p_value.map(|p| format!("{p:?}"))),
                        opt(result.argmax_index.map(|i| i.to_string())),
                        result.k_used.to_string(),
                        result.n.to_string(),
                        d.alpha.to_string(),
                        opt(d.reject.map(|r| r.to_string())),
                        String::new(),
                    ];
                    row.extend(tail.iter().cloned());
                    csv.write_record(&row).map_err(fail)?;
                }
            }
            Entry::Failed { method, error } => {
                let mut row = vec![method.tag().to_string(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), error.clone()];
                row.extend(tail.iter().cloned());
                csv.write_record(&row).map_err(fail)?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

fn rayon_pool(workers: usize) -> Outcome<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::input(format!("cannot start worker pool: {e}")))
}

fn report_format(flag: Option<FormatArg>, cfg: &ExperimentConfig, path: Option<&Path>) -> ReportFormat {
    match flag {
        Some(FormatArg::Json) => ReportFormat::Json,
        Some(FormatArg::Csv) => ReportFormat::Csv,
        None => match (&cfg.output, path.and_then(|p| p.extension()).and_then(|e| e.to_str())) {
            (_, Some("json")) => ReportFormat::Json,
            (_, Some("csv")) => ReportFormat::Csv,
            (Some(o), _) => o.format,
            (None, _) => ReportFormat::Csv,
        },
    }
}

pub fn mc(args: &McArgs) -> Outcome {
    let mut cfg = ExperimentConfig::from_path(&args.config).map_err(|e| Failure::input(format!("{}: {e}", args.config.display())))?;
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.m {
        cfg.bootstrap.replicates = m;
    }
    cfg.validate().map_err(|e| Failure::input(e.to_string()))?;
    let workers = args.workers.unwrap_or_else(|| cfg.effective_workers());
    let out_path = args.out.clone().or_else(|| cfg.output.as_ref().map(|o| o.path.clone()));
    let format = report_format(args.format, &cfg, out_path.as_deref());

    let start = Instant::now();
    let report = run_experiment_on(&cfg, workers)?;
    let elapsed = start.elapsed().as_secs_f64();
    let summary = format!(
        "{}maxzero {VERSION}  seed {}  config digest {}  wall time {elapsed:.1}s\n",
        report.summary(),
        report.seed,
        report.config_digest
    );
    match out_path {
        Some(path) => {
            let file = BufWriter::new(File::create(&path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?);
            emit_report(&report, format, file)?;
            print!("{summary}");
            println!("report written to {}", path.display());
        }
        None => {
            eprint!("{summary}");
            emit_report(&report, format, std::io::stdout().lock())?;
        }
    }
    Ok(())
}
