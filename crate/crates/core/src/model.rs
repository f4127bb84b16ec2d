//! Regression response abstraction, the parsimonious parameter map and the
//! dataset container.
//!
//! Test-covariate indices are 1-based throughout the public API: index `i`
//! names column `t{i}` of the dataset and the parameter `theta_i`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariate blocks shared by the observed sample and every bootstrap
/// sample drawn from it. Stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    x_delta: Vec<Vec<f64>>,
    x_theta: Vec<Vec<f64>>,
}

impl Design {
    pub fn new(x_delta: Vec<Vec<f64>>, x_theta: Vec<Vec<f64>>) -> Result<Self> {
        let n = x_theta
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidDataset("at least one test covariate is required".into()))?;
        for (name, cols) in [("nuisance", &x_delta), ("test", &x_theta)] {
            for (j, c) in cols.iter().enumerate() {
                if c.len() != n {
                    return Err(Error::InvalidDataset(format!(
                        "{name} column {} has {} rows, expected {n}",
                        j + 1,
                        c.len()
                    )));
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidDataset(format!("{name} column {} has NaN/Inf", j + 1)));
                }
            }
        }
        Ok(Self { n, x_delta, x_theta })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_delta(&self) -> usize {
        self.x_delta.len()
    }

    pub fn k_theta(&self) -> usize {
        self.x_theta.len()
    }

    pub fn delta_columns(&self) -> &[Vec<f64>] {
        &self.x_delta
    }

    pub fn theta_columns(&self) -> &[Vec<f64>] {
        &self.x_theta
    }

    /// Test column `index` (1-based).
    pub fn theta_column(&self, index: usize) -> &[f64] {
        &self.x_theta[index - 1]
    }

    /// Copies row `t` into an owned row.
    pub fn row(&self, t: usize) -> OwnedRow {
        OwnedRow {
            delta: self.x_delta.iter().map(|c| c[t]).collect(),
            theta: self.x_theta.iter().map(|c| c[t]).collect(),
        }
    }

    /// Design restricted to the first `k` test columns.
    pub fn truncated(&self, k: usize) -> Design {
        Design {
            n: self.n,
            x_delta: self.x_delta.clone(),
            x_theta: self.x_theta[..k.min(self.k_theta())].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OwnedRow {
    pub delta: Vec<f64>,
    pub theta: Vec<f64>,
}

/// One observation's covariates as seen by a response function.
#[derive(Debug, Clone, Copy)]
pub struct Row<'a> {
    pub delta: &'a [f64],
    pub theta: &'a [f64],
}

impl OwnedRow {
    pub fn view(&self) -> Row<'_> {
        Row { delta: &self.delta, theta: &self.theta }
    }
}

/// Response vector plus nuisance and test covariate blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    design: Design,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x_delta: Vec<Vec<f64>>, x_theta: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_design(y, Design::new(x_delta, x_theta)?)
    }

    pub fn from_design(y: Vec<f64>, design: Design) -> Result<Self> {
        if y.len() != design.n() {
            return Err(Error::InvalidDataset(format!(
                "response has {} rows, covariates have {}",
                y.len(),
                design.n()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("response has NaN/Inf".into()));
        }
        Ok(Self { y, design })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }

    pub fn k_delta(&self) -> usize {
        self.design.k_delta()
    }

    pub fn k_theta(&self) -> usize {
        self.design.k_theta()
    }

    /// Reads the `y, d1..dK, t1..tJ` CSV layout.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_csv_reader(f)
    }

    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Csv(format!("header: {e}")))?
            .clone();
        let layout = ColumnLayout::parse(&headers)?;
        let mut y = Vec::new();
        let mut x_delta = vec![Vec::new(); layout.delta.len()];
        let mut x_theta = vec![Vec::new(); layout.theta.len()];
        for (rec_no, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
            let line = rec.position().map_or(rec_no as u64 + 2, |p| p.line());
            let cell = |col: usize| -> Result<f64> {
                let raw = rec.get(col).unwrap_or("");
                let v: f64 = raw.trim().parse().map_err(|_| {
                    Error::Csv(format!(
                        "line {line}, column {} ({}): cannot parse {raw:?} as a number",
                        col + 1,
                        &headers[col]
                    ))
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Csv(format!("line {line}, column {} ({}): non-finite value", col + 1, &headers[col])))
                }
            };
            y.push(cell(layout.y)?);
            for (dst, &col) in x_delta.iter_mut().zip(&layout.delta) {
                dst.push(cell(col)?);
            }
            for (dst, &col) in x_theta.iter_mut().zip(&layout.theta) {
                dst.push(cell(col)?);
            }
        }
        if y.is_empty() {
            return Err(Error::Csv("no data rows".into()));
        }
        Self::new(y, x_delta, x_theta)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.k_delta()).map(|j| format!("d{j}")));
        header.extend((1..=self.k_theta()).map(|j| format!("t{j}")));
        w.write_record(&header).map_err(|e| Error::Csv(e.to_string()))?;
        for t in 0..self.n() {
            let row = self.design.row(t);
            let rec: Vec<String> = std::iter::once(self.y[t])
                .chain(row.delta)
                .chain(row.theta)
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&rec).map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

struct ColumnLayout {
    y: usize,
    delta: Vec<usize>,
    theta: Vec<usize>,
}

impl ColumnLayout {
    fn parse(headers: &csv::StringRecord) -> Result<Self> {
        let mut y = None;
        let mut delta = Vec::new();
        let mut theta = Vec::new();
        for (col, name) in headers.iter().enumerate() {
            let name = name.trim();
            let numbered = |prefix: char| -> Option<usize> {
                name.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok()).filter(|&j| j >= 1)
            };
            if name == "y" {
                if y.replace(col).is_some() {
                    return Err(Error::Csv("duplicate column `y`".into()));
                }
            } else if let Some(j) = numbered('d') {
                delta.push((j, col));
            } else if let Some(j) = numbered('t') {
                theta.push((j, col));
            } else {
                return Err(Error::Csv(format!("column {}: unrecognized header {name:?}", col + 1)));
            }
        }
        let y = y.ok_or_else(|| Error::Csv("missing column `y`".into()))?;
        let order = |mut cols: Vec<(usize, usize)>, prefix: char| -> Result<Vec<usize>> {
            cols.sort_unstable();
            for (expect, &(j, _)) in cols.iter().enumerate() {
                if j != expect + 1 {
                    return Err(Error::Csv(format!(
                        "columns {prefix}1..{prefix}{} must be contiguous; found {prefix}{j}",
                        cols.len()
                    )));
                }
            }
            Ok(cols.into_iter().map(|(_, c)| c).collect())
        };
        let delta = order(delta, 'd')?;
        let theta = order(theta, 't')?;
        if theta.is_empty() {
            return Err(Error::Csv("at least one test column `t1` is required".into()));
        }
        Ok(Self { y, delta, theta })
    }
}

/// `beta_(i) = [delta', theta_i]'` for parsimonious model `index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsimoniousParam {
    pub delta: Vec<f64>,
    pub theta: f64,
    /// 1-based test index.
    pub index: usize,
}

impl ParsimoniousParam {
    pub fn new(delta: Vec<f64>, theta: f64, index: usize) -> Self {
        Self { delta, theta, index }
    }

    /// The restricted parameter `[delta', 0]'`.
    pub fn restricted(delta: Vec<f64>) -> Self {
        Self { delta, theta: 0.0, index: 1 }
    }

    /// Stacks `[delta', theta_i]` into one vector.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.delta.clone();
        v.push(self.theta);
        v
    }

    pub fn from_slice(beta: &[f64], index: usize) -> Self {
        let (theta, delta) = beta.split_last().expect("parameter vector is non-empty");
        Self { delta: delta.to_vec(), theta: *theta, index }
    }
}

/// Embeds a parsimonious parameter into the full `[delta', theta']'` vector,
/// with every test parameter other than `theta_i` pinned at zero.
pub fn embed_full(p: &ParsimoniousParam, k_theta: usize) -> Result<Vec<f64>> {
    if p.index == 0 || p.index > k_theta {
        return Err(Error::IndexOutOfRange { index: p.index, k_theta });
    }
    let mut full = p.delta.clone();
    full.resize(p.delta.len() + k_theta, 0.0);
    full[p.delta.len() + p.index - 1] = p.theta;
    Ok(full)
}

/// Regression function `f(x, beta)` evaluated through its parsimonious
/// restriction `f_(i)(x, beta_(i))`.
///
/// Implementations must be stateless: the same model is evaluated from
/// several worker threads at once.
pub trait ResponseModel: Send + Sync {
    fn k_delta(&self) -> usize;

    fn eval(&self, x: Row<'_>, beta: &ParsimoniousParam) -> f64;

    /// Gradient with respect to `[delta', theta_i]`, length `k_delta + 1`.
    fn grad(&self, x: Row<'_>, beta: &ParsimoniousParam) -> Vec<f64>;

    /// Hessian with respect to `[delta', theta_i]`, row-major.
    fn hess(&self, x: Row<'_>, beta: &ParsimoniousParam) -> Vec<f64>;

    /// Linear responses get closed-form least squares.
    fn is_linear(&self) -> bool {
        false
    }
}

/// `f(x, beta) = delta' x_delta + theta' x_theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearResponse {
    k_delta: usize,
}

pub fn linear_response(k_delta: usize) -> LinearResponse {
    LinearResponse { k_delta }
}

impl ResponseModel for LinearResponse {
    fn k_delta(&self) -> usize {
        self.k_delta
    }

    fn eval(&self, x: Row<'_>, beta: &ParsimoniousParam) -> f64 {
        let lin: f64 = beta.delta.iter().zip(x.delta).map(|(b, v)| b * v).sum();
        lin + beta.theta * x.theta[beta.index - 1]
    }

    fn grad(&self, x: Row<'_>, beta: &ParsimoniousParam) -> Vec<f64> {
        let mut g = x.delta.to_vec();
        g.push(x.theta[beta.index - 1]);
        g
    }

    fn hess(&self, _x: Row<'_>, _beta: &ParsimoniousParam) -> Vec<f64> {
        let d = self.k_delta + 1;
        vec![0.0; d * d]
    }

    fn is_linear(&self) -> bool {
        true
    }
}

/// `round(5 n^(1/2 - 1e-10))`, the growing number of parsimonious models.
pub fn rate_rule_k(n: usize) -> usize {
    assert!(n >= 2, "rate rule needs n >= 2");
    (5.0 * (n as f64).powf(0.5 - 1e-10)).round() as usize
}

/// Largest usable number of parsimonious models: every fit keeps at least
/// one residual degree of freedom beyond its `k_delta + 1` parameters.
pub fn cap_k(requested: usize, available: usize, n: usize, k_delta: usize) -> usize {
    requested.min(available).min(n.saturating_sub(k_delta + 2))
}
