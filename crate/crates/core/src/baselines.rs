//! No-credit benchmarks: unconditional rate, age life table, and a logistic
//! regression on age and state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cart::FeatureMatrix;
use crate::error::{Error, Result};

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_TOLERANCE: f64 = 1e-8;
pub const RIDGE_JITTER: f64 = 1e-10;
pub const SEPARATION_BOUND: f64 = 30.0;

pub fn fit_unconditional(targets: &[u8]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::EmptyInput("targets"));
    }
    let deaths: u64 = targets.iter().map(|&y| y as u64).sum();
    Ok(deaths as f64 / targets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeCell {
    pub deaths: u64,
    pub at_risk: u64,
}

impl AgeCell {
    pub fn prob(&self) -> f64 {
        self.deaths as f64 / self.at_risk as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifeTable {
    pub cells: BTreeMap<u16, AgeCell>,
    pub fallback_prob: f64,
}

impl LifeTable {
    pub fn prob(&self, age: u16) -> f64 {
        self.cells.get(&age).map_or(self.fallback_prob, AgeCell::prob)
    }
}

pub fn fit_age_table(ages: &[u16], targets: &[u8]) -> Result<LifeTable> {
    if ages.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: ages.len(),
            right: targets.len(),
        });
    }
    let fallback_prob = fit_unconditional(targets)?;
    let mut cells: BTreeMap<u16, AgeCell> = BTreeMap::new();
    for (&a, &y) in ages.iter().zip(targets) {
        let c = cells.entry(a).or_insert(AgeCell { deaths: 0, at_risk: 0 });
        c.deaths += y as u64;
        c.at_risk += 1;
    }
    Ok(LifeTable {
        cells,
        fallback_prob,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrlsDiagnostics {
    pub iterations: usize,
    /// max |∂ℓ/∂β| / n at the returned coefficients.
    pub gradient_norm: f64,
    pub converged: bool,
    pub separation: bool,
    pub log_likelihood: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Intercept first, then one coefficient per column.
    pub coefficients: Vec<f64>,
    pub columns: Vec<String>,
    pub fitted: bool,
    pub diagnostics: IrlsDiagnostics,
}

impl LogisticModel {
    pub fn linear_index(&self, row: impl Fn(usize) -> f64) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .enumerate()
                .map(|(j, b)| b * row(j))
                .sum::<f64>()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.columns.len() {
            return Err(Error::ColumnMismatch {
                expected: self.columns.len(),
                got: x.n_cols(),
            });
        }
        Ok((0..x.n_rows())
            .map(|i| sigmoid(self.linear_index(|j| x.get(i, j))))
            .collect())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Row-sparse copy of the design with the intercept as column 0; statics
/// blocks are mostly zero dummies.
struct SparseRows {
    offsets: Vec<usize>,
    index: Vec<u32>,
    value: Vec<f64>,
    p: usize,
}

impl SparseRows {
    fn new(x: &FeatureMatrix) -> Self {
        let p = x.n_cols() + 1;
        let mut offsets = vec![0];
        let mut index = Vec::new();
        let mut value = Vec::new();
        for i in 0..x.n_rows() {
            index.push(0);
            value.push(1.0);
            for j in 0..x.n_cols() {
                let v = x.get(i, j);
                if v != 0.0 {
                    index.push(j as u32 + 1);
                    value.push(v);
                }
            }
            offsets.push(index.len());
        }
        SparseRows {
            offsets,
            index,
            value,
            p,
        }
    }

    fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.index[r.clone()], &self.value[r])
    }

    fn eta(&self, i: usize, beta: &[f64]) -> f64 {
        let (idx, val) = self.row(i);
        idx.iter().zip(val).map(|(&j, v)| beta[j as usize] * v).sum()
    }

    /// Lower triangle of Σ w_i x_i x_iᵀ.
    fn gram(&self, w: impl Fn(usize) -> f64) -> Vec<f64> {
        let p = self.p;
        let mut g = vec![0.0; p * p];
        for i in 0..self.n() {
            let wi = w(i);
            if wi == 0.0 {
                continue;
            }
            let (idx, val) = self.row(i);
            for (a, (&ja, &va)) in idx.iter().zip(val).enumerate() {
                for (&jb, &vb) in idx[..=a].iter().zip(val) {
                    g[ja as usize * p + jb as usize] += wi * va * vb;
                }
            }
        }
        g
    }
}

/// In-place Cholesky of a symmetric matrix stored in its lower triangle.
/// Returns the first column whose pivot is not positive relative to `tol`.
fn cholesky(a: &mut [f64], p: usize, tol: f64) -> std::result::Result<(), usize> {
    for j in 0..p {
        let diag0 = a[j * p + j];
        let mut d = diag0;
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > tol * diag0.abs().max(f64::MIN_POSITIVE)) {
            return Err(j);
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &[f64], p: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..p {
        for k in 0..i {
            y[i] -= l[i * p + k] * y[k];
        }
        y[i] /= l[i * p + i];
    }
    for i in (0..p).rev() {
        for k in i + 1..p {
            y[i] -= l[k * p + i] * y[k];
        }
        y[i] /= l[i * p + i];
    }
    y
}

fn rank_check(rows: &SparseRows) -> Result<()> {
    let p = rows.p;
    let mut g = rows.gram(|_| 1.0);
    let scale: Vec<f64> = (0..p).map(|j| g[j * p + j].sqrt()).collect();
    if let Some(j) = scale.iter().position(|&s| s == 0.0) {
        return Err(Error::RankDeficient { column: j.saturating_sub(1) });
    }
    for i in 0..p {
        for j in 0..=i {
            g[i * p + j] /= scale[i] * scale[j];
        }
    }
    cholesky(&mut g, p, 1e-9).map_err(|j| Error::RankDeficient {
        column: j.saturating_sub(1),
    })
}

fn log_likelihood(rows: &SparseRows, y: &[u8], beta: &[f64]) -> f64 {
    (0..rows.n())
        .map(|i| {
            let z = rows.eta(i, beta);
            // log σ(z) = −log(1+e^{−z}); log(1−σ(z)) = −log(1+e^{z})
            let softplus = |t: f64| if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
            if y[i] == 1 {
                -softplus(-z)
            } else {
                -softplus(z)
            }
        })
        .sum()
}

/// Maximum-likelihood logistic regression by IRLS with step halving.
/// `x` holds the predictors without an intercept column.
pub fn fit_logistic(x: &FeatureMatrix, targets: &[u8], columns: Vec<String>) -> Result<LogisticModel> {
    if x.n_rows() != targets.len() {
        return Err(Error::LengthMismatch {
            left: x.n_rows(),
            right: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::EmptyInput("targets"));
    }
    if columns.len() != x.n_cols() {
        return Err(Error::ColumnMismatch {
            expected: x.n_cols(),
            got: columns.len(),
        });
    }
    let rows = SparseRows::new(x);
    rank_check(&rows)?;
    let n = rows.n();
    let p = rows.p;
    let y = targets;

    let mut beta = vec![0.0; p];
    let mean = fit_unconditional(y)?;
    if mean > 0.0 && mean < 1.0 {
        beta[0] = (mean / (1.0 - mean)).ln();
    }
    let mut ll = log_likelihood(&rows, y, &beta);
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = false;
    let mut separation = false;
    let mut grad_norm;

    loop {
        let probs: Vec<f64> = (0..n).map(|i| sigmoid(rows.eta(i, &beta))).collect();
        let mut grad = vec![0.0; p];
        for (i, &pi) in probs.iter().enumerate() {
            let r = y[i] as f64 - pi;
            let (idx, val) = rows.row(i);
            for (&j, v) in idx.iter().zip(val) {
                grad[j as usize] += r * v;
            }
        }
        grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) / n as f64;
        if grad_norm < IRLS_TOLERANCE {
            converged = true;
            break;
        }
        if iterations >= IRLS_MAX_ITER {
            break;
        }
        let mut h = rows.gram(|i| probs[i] * (1.0 - probs[i]));
        for j in 0..p {
            h[j * p + j] += RIDGE_JITTER;
        }
        if cholesky(&mut h, p, 0.0).is_err() {
            separation = true;
            break;
        }
        let delta = cholesky_solve(&h, p, &grad);
        let mut step = 1.0;
        let mut candidate;
        loop {
            candidate = beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect::<Vec<_>>();
            let ll_new = log_likelihood(&rows, y, &candidate);
            if ll_new >= ll || step < 1e-10 {
                ll = ll_new.max(ll);
                break;
            }
            step *= 0.5;
        }
        beta = candidate;
        trace.push(ll);
        iterations += 1;
        if beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            separation = true;
            break;
        }
    }

    // A (near-)perfect fit means the likelihood has no finite maximizer.
    let perfect = (0..n).all(|i| (y[i] as f64 - sigmoid(rows.eta(i, &beta))).abs() < 1e-6);
    separation |= perfect;
    if separation {
        log::warn!("logistic fit: separation detected, coefficients diverge");
    }
    Ok(LogisticModel {
        coefficients: beta,
        columns,
        fitted: true,
        diagnostics: IrlsDiagnostics {
            iterations,
            gradient_norm: grad_norm,
            converged,
            separation,
            log_likelihood: trace,
        },
    })
}

/// One of the three benchmarks.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselineModel {
    Unconditional(f64),
    LifeTable(LifeTable),
    Logistic(LogisticModel),
}

impl BaselineModel {
    pub fn kind(&self) -> &'static str {
        match self {
            BaselineModel::Unconditional(_) => "unconditional",
            BaselineModel::LifeTable(_) => "life_table",
            BaselineModel::Logistic(_) => "logistic",
        }
    }

    /// `x` is only read by the logistic model (its own columns, in order).
    pub fn predict(&self, ages: &[u16], x: Option<&FeatureMatrix>) -> Result<Vec<f64>> {
        match self {
            BaselineModel::Unconditional(p) => Ok(vec![*p; ages.len()]),
            BaselineModel::LifeTable(t) => Ok(ages.iter().map(|&a| t.prob(a)).collect()),
            BaselineModel::Logistic(m) => {
                let x = x.ok_or_else(|| Error::Config("logistic model needs a design".into()))?;
                m.predict(x)
            }
        }
    }

    pub fn to_json(&self) -> Value {
        let (parameters, diagnostics) = match self {
            BaselineModel::Unconditional(p) => (json!({ "prob": p }), json!({})),
            BaselineModel::LifeTable(t) => (
                json!({
                    "ages": t.cells.iter().map(|(a, c)| json!({
                        "age": a, "deaths": c.deaths, "at_risk": c.at_risk, "prob": c.prob()
                    })).collect::<Vec<_>>(),
                    "fallback_prob": t.fallback_prob,
                }),
                json!({}),
            ),
            BaselineModel::Logistic(m) => (
                json!({ "coefficients": m.coefficients, "columns": m.columns }),
                serde_json::to_value(&m.diagnostics).expect("plain data"),
            ),
        };
        json!({ "model_kind": self.kind(), "parameters": parameters, "diagnostics": diagnostics })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |m: &str| Error::BadModelFile(m.to_string());
        let kind = v["model_kind"].as_str().ok_or_else(|| bad("missing model_kind"))?;
        let params = &v["parameters"];
        match kind {
            "unconditional" => Ok(BaselineModel::Unconditional(
                params["prob"].as_f64().ok_or_else(|| bad("missing prob"))?,
            )),
            "life_table" => {
                let mut cells = BTreeMap::new();
                for c in params["ages"].as_array().ok_or_else(|| bad("missing ages"))? {
                    let field = |k: &str| c[k].as_u64().ok_or_else(|| bad("bad age cell"));
                    cells.insert(
                        field("age")? as u16,
                        AgeCell {
                            deaths: field("deaths")?,
                            at_risk: field("at_risk")?,
                        },
                    );
                }
                Ok(BaselineModel::LifeTable(LifeTable {
                    cells,
                    fallback_prob: params["fallback_prob"].as_f64().ok_or_else(|| bad("missing fallback"))?,
                }))
            }
            "logistic" => Ok(BaselineModel::Logistic(LogisticModel {
                coefficients: serde_json::from_value(params["coefficients"].clone())?,
                columns: serde_json::from_value(params["columns"].clone())?,
                fitted: true,
                diagnostics: serde_json::from_value(v["diagnostics"].clone())?,
            })),
            other => Err(bad(&format!("unknown model_kind {other}"))),
        }
    }
}
