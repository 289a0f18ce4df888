use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::delong::{delong_test, DelongResult};
use super::roc::{roc_points, RocSummary};
use super::table::{conditional_prob_table, format_conditional, ConditionalRow};
use crate::baselines::{fit_age_table, fit_logistic, fit_unconditional};
use crate::boosting::{fit_gbm_matrix, BoostParams, EarlyStopping};
use crate::cart::SplitMode;
use crate::config::{sha256_hex, KvConfig};
use crate::error::{Error, Result};
use crate::forest::{fit_forest_matrix, ForestParams};
use crate::panel::{assemble_design, cohort_partition, CohortSpec, ColumnMeta, DesignMatrix, DesignOptions, PanelDataset, VariableCatalog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Uncond,
    Age,
    StateLin,
    StateGb,
    StateRf,
    CreditGb,
    CreditRf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Uncond,
        ModelKind::Age,
        ModelKind::StateLin,
        ModelKind::StateGb,
        ModelKind::StateRf,
        ModelKind::CreditGb,
        ModelKind::CreditRf,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Uncond => "Uncond",
            ModelKind::Age => "Age",
            ModelKind::StateLin => "StateLin",
            ModelKind::StateGb => "StateGB",
            ModelKind::StateRf => "StateRF",
            ModelKind::CreditGb => "CreditGB",
            ModelKind::CreditRf => "CreditRF",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ModelKind::Uncond => "uncond",
            ModelKind::Age => "age",
            ModelKind::StateLin => "state_lin",
            ModelKind::StateGb => "state_gb",
            ModelKind::StateRf => "state_rf",
            ModelKind::CreditGb => "credit_gb",
            ModelKind::CreditRf => "credit_rf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['.', ' ', '-'], "_");
        Self::ALL
            .into_iter()
            .find(|m| m.slug() == key || m.label().to_ascii_lowercase() == key)
    }

    /// Compared against the Age model by DeLong.
    pub fn is_credit(self) -> bool {
        matches!(self, ModelKind::CreditGb | ModelKind::CreditRf)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub test_years: Vec<i32>,
    /// Snapshot count for every year; `None` uses [`default_snapshots`].
    pub snapshots: Option<usize>,
    pub models: Vec<ModelKind>,
    pub cohorts: CohortSpec,
    pub forest: ForestParams,
    pub boost: BoostParams,
    pub design: DesignOptions,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            test_years: (2012..=2016).collect(),
            snapshots: None,
            models: ModelKind::ALL.to_vec(),
            cohorts: CohortSpec::default(),
            forest: ForestParams::default(),
            boost: BoostParams::default(),
            design: DesignOptions::default(),
        }
    }
}

pub const PLAN_KEYS: &[&str] = &[
    "test_years",
    "snapshots",
    "models",
    "cohorts",
    "seed",
    "rf_trees",
    "rf_min_node_size",
    "rf_feature_fraction",
    "gb_rounds",
    "gb_learning_rate",
    "gb_row_subsample",
    "gb_feature_fraction",
    "gb_lambda",
    "gb_max_leaves",
    "gb_min_node_size",
    "gb_early_stopping",
    "gb_validation_fraction",
    "gb_patience",
    "split_mode",
    "bins",
    "missing_indicators",
];

/// `2012-2016` or `2012,2014`.
pub fn parse_years(s: &str) -> Result<Vec<i32>> {
    let bad = || Error::Config(format!("bad year list \"{s}\""));
    let mut years = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: i32 = a.trim().parse().map_err(|_| bad())?;
                let b: i32 = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                years.extend(a..=b);
            }
            None => years.push(part.parse().map_err(|_| bad())?),
        }
    }
    if years.is_empty() {
        return Err(bad());
    }
    Ok(years)
}

impl ExperimentPlan {
    /// Applies the keys in [`PLAN_KEYS`] on top of the defaults.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.reject_unknown(PLAN_KEYS)?;
        let mut p = ExperimentPlan::default();
        if let Some(s) = kv.get("test_years") {
            p.test_years = parse_years(s)?;
        }
        p.snapshots = kv.parse("snapshots")?;
        if let Some(s) = kv.get("models") {
            p.models = s
                .split(',')
                .map(str::trim)
                .filter(|m| !m.is_empty())
                .map(|m| ModelKind::parse(m).ok_or_else(|| Error::Config(format!("unknown model \"{m}\""))))
                .collect::<Result<_>>()?;
        }
        if let Some(s) = kv.get("cohorts") {
            p.cohorts = CohortSpec::parse(s)?;
        }
        if let Some(seed) = kv.parse::<u64>("seed")? {
            p.forest.seed = seed;
            p.boost.seed = seed;
        }
        if let Some(v) = kv.parse("rf_trees")? {
            p.forest.n_trees = v;
        }
        if let Some(v) = kv.parse("rf_min_node_size")? {
            p.forest.tree.min_node_size = v;
        }
        if let Some(v) = kv.parse("rf_feature_fraction")? {
            p.forest.tree.feature_fraction = v;
        }
        if let Some(v) = kv.parse("gb_rounds")? {
            p.boost.n_rounds = v;
        }
        if let Some(v) = kv.parse("gb_learning_rate")? {
            p.boost.learning_rate = v;
        }
        if let Some(v) = kv.parse("gb_row_subsample")? {
            p.boost.row_subsample = v;
        }
        if let Some(v) = kv.parse("gb_feature_fraction")? {
            p.boost.feature_fraction = v;
        }
        if let Some(v) = kv.parse("gb_lambda")? {
            p.boost.lambda = v;
        }
        if let Some(v) = kv.get("gb_max_leaves") {
            p.boost.max_leaves = match v {
                "none" => None,
                _ => Some(v.parse().map_err(|_| Error::Config(format!("invalid value for gb_max_leaves: \"{v}\"")))?),
            };
        }
        if let Some(v) = kv.parse("gb_min_node_size")? {
            p.boost.min_node_size = v;
        }
        if kv.parse_bool("gb_early_stopping")?.unwrap_or(false) {
            let mut es = EarlyStopping::default();
            if let Some(v) = kv.parse("gb_validation_fraction")? {
                es.validation_fraction = v;
            }
            if let Some(v) = kv.parse("gb_patience")? {
                es.patience = v;
            }
            p.boost.early_stopping = Some(es);
        }
        let bins: Option<usize> = kv.parse("bins")?;
        match kv.get("split_mode") {
            Some("exact") => {
                p.forest.tree.split_mode = SplitMode::Exact;
                p.boost.split_mode = SplitMode::Exact;
            }
            Some("histogram") | None => {
                if let Some(b) = bins {
                    p.forest.tree.split_mode = SplitMode::Histogram { bins: b };
                    p.boost.split_mode = SplitMode::Histogram { bins: b };
                }
            }
            Some(other) => return Err(Error::Config(format!("unknown split_mode \"{other}\""))),
        }
        p.design.missing_indicators = kv.parse_bool("missing_indicators")?.unwrap_or(false);
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.test_years.is_empty() {
            return Err(Error::Config("plan has no test years".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("plan has no models".into()));
        }
        self.forest.validate()?;
        self.boost.validate()
    }

    /// SHA-256 of the plan's canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("plain data"))
    }

    /// Snapshot count for test year `year`; both the training design
    /// (target `year − 1`) and the test design must be feasible.
    pub fn snapshots_for(&self, dataset: &PanelDataset, year: i32) -> Result<usize> {
        let (min_year, max_year) = dataset.year_range();
        let infeasible = |why: String| Error::InfeasibleYear { year, reason: why };
        if year > max_year {
            return Err(infeasible(format!("panel ends in {max_year}")));
        }
        let max_l = default_snapshots(min_year, year);
        if max_l < 1 {
            return Err(infeasible(format!("panel starts in {min_year}, too late for a training year")));
        }
        match self.snapshots {
            None => Ok(max_l as usize),
            Some(l) if l >= 1 && l as i64 <= max_l => Ok(l),
            Some(l) => Err(infeasible(format!("{l} snapshots requested, at most {max_l} fit"))),
        }
    }
}

/// Largest snapshot count usable for both the training design (target
/// `year − 1`) and the test design; the first panel year only feeds the
/// move counter.
pub fn default_snapshots(min_year: i32, year: i32) -> i64 {
    year as i64 - min_year as i64 - 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearAudit {
    pub test_year: i32,
    pub train_target_year: i32,
    pub snapshots: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub test_deaths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub year: i32,
    pub cohort: String,
    pub model: ModelKind,
    /// `None` when the cohort lacks one of the classes.
    pub auc: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
    /// DeLong p-value against the Age model (credit models only).
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelongRow {
    pub year: i32,
    pub cohort: String,
    pub model: ModelKind,
    pub baseline: ModelKind,
    pub result: DelongResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub year: i32,
    pub model: ModelKind,
    pub row: ConditionalRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRecord {
    pub year: i32,
    pub cohort: String,
    pub model: ModelKind,
    pub summary: RocSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_digest: String,
    pub audit: Vec<YearAudit>,
    pub auc: Vec<AucRow>,
    pub delong: Vec<DelongRow>,
    pub calibration: Vec<CalibrationRow>,
    pub roc: Vec<RocRecord>,
    pub gains: Vec<GainRecord>,
}

/// Per-feature split gains of a credit ensemble fitted for one test year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRecord {
    pub year: i32,
    pub model: ModelKind,
    pub column_meta: Vec<ColumnMeta>,
    pub gains: Vec<f64>,
}

impl ExperimentReport {
    pub fn auc_of(&self, year: i32, cohort: &str, model: ModelKind) -> Option<&AucRow> {
        self.auc
            .iter()
            .find(|r| r.year == year && r.cohort == cohort && r.model == model)
    }

    pub fn delong_of(&self, year: i32, cohort: &str, model: ModelKind) -> Option<&DelongRow> {
        self.delong
            .iter()
            .find(|r| r.year == year && r.cohort == cohort && r.model == model)
    }
}

fn state_columns(design: &DesignMatrix) -> Vec<usize> {
    design.columns_where(|m| m.is_age_or_state())
}

/// Fits `kind` on `train` and scores `test`; credit ensembles also return
/// their per-feature split gains.
pub fn fit_and_score(
    kind: ModelKind,
    train: &DesignMatrix,
    test: &DesignMatrix,
    plan: &ExperimentPlan,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    match kind {
        ModelKind::CreditGb => {
            let m = fit_gbm_matrix(train.features(), train.target(), &plan.boost)?;
            Ok((m.predict(test.features())?, Some(m.feature_gains())))
        }
        ModelKind::CreditRf => {
            let m = fit_forest_matrix(train.features(), train.target(), &plan.forest)?;
            Ok((m.predict(test.features())?, Some(m.feature_gains())))
        }
        _ => Ok((score_static(kind, train, test, plan)?, None)),
    }
}

fn score_static(kind: ModelKind, train: &DesignMatrix, test: &DesignMatrix, plan: &ExperimentPlan) -> Result<Vec<f64>> {
    let sub = |d: &DesignMatrix, cols: &[usize]| d.features().select_columns(cols);
    match kind {
        ModelKind::Uncond => Ok(vec![fit_unconditional(train.target())?; test.n_rows()]),
        ModelKind::Age => {
            let t = fit_age_table(train.ages(), train.target())?;
            Ok(test.ages().iter().map(|&a| t.prob(a)).collect())
        }
        ModelKind::StateLin => {
            // Dummies for states with no training rows carry no information.
            let cols: Vec<usize> = state_columns(train)
                .into_iter()
                .filter(|&j| train.features().column(j).iter().any(|&v| v != 0.0))
                .collect();
            let names = cols.iter().map(|&j| train.column_meta()[j].label()).collect();
            let model = fit_logistic(&sub(train, &cols), train.target(), names)?;
            model.predict(&sub(test, &cols))
        }
        ModelKind::StateGb => {
            let cols = state_columns(train);
            fit_gbm_matrix(&sub(train, &cols), train.target(), &plan.boost)?.predict(&sub(test, &cols))
        }
        ModelKind::StateRf => {
            let cols = state_columns(train);
            fit_forest_matrix(&sub(train, &cols), train.target(), &plan.forest)?.predict(&sub(test, &cols))
        }
        ModelKind::CreditGb | ModelKind::CreditRf => unreachable!("credit models are fitted in fit_and_score"),
    }
}

fn subset<T: Copy>(v: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&r| v[r]).collect()
}

pub fn run_rolling_origin(dataset: &PanelDataset, catalog: &VariableCatalog, plan: &ExperimentPlan) -> Result<ExperimentReport> {
    plan.validate()?;
    let mut report = ExperimentReport {
        config_digest: plan.digest(),
        audit: Vec::new(),
        auc: Vec::new(),
        delong: Vec::new(),
        calibration: Vec::new(),
        roc: Vec::new(),
        gains: Vec::new(),
    };
    let lags: Vec<usize> = plan
        .test_years
        .iter()
        .map(|&y| plan.snapshots_for(dataset, y))
        .collect::<Result<_>>()?;

    for (&year, &l) in plan.test_years.iter().zip(&lags) {
        let train = assemble_design(dataset, catalog, year - 1, l, plan.design)?;
        let test = assemble_design(dataset, catalog, year, l, plan.design)?;
        if train.target_year() >= year {
            return Err(Error::Config(format!("training rows for {year} reach into the test year")));
        }
        report.audit.push(YearAudit {
            test_year: year,
            train_target_year: train.target_year(),
            snapshots: l,
            n_train: train.n_rows(),
            n_test: test.n_rows(),
            test_deaths: test.target().iter().filter(|&&y| y == 1).count(),
        });

        let mut scored: Vec<(ModelKind, Vec<f64>)> = Vec::new();
        for &kind in &plan.models {
            log::info!("{year}: fitting {kind}");
            let (scores, gains) = fit_and_score(kind, &train, &test, plan)?;
            if let Some(gains) = gains {
                report.gains.push(GainRecord {
                    year,
                    model: kind,
                    column_meta: train.column_meta().to_vec(),
                    gains,
                });
            }
            scored.push((kind, scores));
        }
        drop(train);

        let labels = test.target();
        let partition = cohort_partition(test.ages(), &plan.cohorts);
        let age_scores = scored.iter().find(|(k, _)| *k == ModelKind::Age).map(|(_, s)| s);
        for (kind, scores) in &scored {
            for row in conditional_prob_table(scores, labels, &partition.cells) {
                report.calibration.push(CalibrationRow { year, model: *kind, row });
            }
            for (cohort, rows) in &partition.cells {
                let y = subset(labels, rows);
                let s = subset(scores, rows);
                let n_pos = y.iter().filter(|&&v| v == 1).count();
                let n_neg = y.len() - n_pos;
                let roc = roc_points(&s, &y).ok();
                let mut p_value = None;
                if let (true, Some(age), true) = (kind.is_credit(), age_scores, roc.is_some()) {
                    match delong_test(&s, &subset(age, rows), &y) {
                        Ok(result) => {
                            p_value = Some(result.p_value);
                            report.delong.push(DelongRow {
                                year,
                                cohort: cohort.clone(),
                                model: *kind,
                                baseline: ModelKind::Age,
                                result,
                            });
                        }
                        Err(Error::DegenerateVariance(v)) => {
                            log::warn!("{year} {cohort} {kind}: degenerate DeLong variance {v}");
                        }
                        Err(e) => return Err(e),
                    }
                }
                report.auc.push(AucRow {
                    year,
                    cohort: cohort.clone(),
                    model: *kind,
                    auc: roc.as_ref().map(|r| r.auc),
                    n_pos,
                    n_neg,
                    p_value,
                });
                if let Some(summary) = roc {
                    report.roc.push(RocRecord {
                        year,
                        cohort: cohort.clone(),
                        model: *kind,
                        summary,
                    });
                }
            }
        }
    }
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<std::fs::File>> {
    let path = dir.join(name);
    let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// Writes `auc_table.csv`, `calibration_table.csv`, `delong.json` and one
/// `roc_<year>_<cohort>_<model>.csv` per curve into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let digest_line = format!("# config_digest={}", report.config_digest);

    let mut w = create(dir, "auc_table.csv")?;
    writeln!(w, "{digest_line}")?;
    writeln!(w, "year,cohort,model,auc,n_pos,n_neg,p_value_vs_age")?;
    for r in &report.auc {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.year,
            r.cohort,
            r.model,
            opt(r.auc),
            r.n_pos,
            r.n_neg,
            opt(r.p_value)
        )?;
    }
    w.flush()?;

    let mut w = create(dir, "calibration_table.csv")?;
    writeln!(w, "{digest_line}")?;
    writeln!(w, "year,model,cohort,mean_pred_dead,mean_pred_alive,n_dead,n_alive,display")?;
    for c in &report.calibration {
        writeln!(
            w,
            "{},{},{},{},{},{},{},\"{}\"",
            c.year,
            c.model,
            c.row.cohort,
            opt(c.row.mean_dead),
            opt(c.row.mean_alive),
            c.row.n_dead,
            c.row.n_alive,
            format_conditional(&c.row)
        )?;
    }
    w.flush()?;

    for r in &report.roc {
        let mut w = create(dir, &format!("roc_{}_{}_{}.csv", r.year, r.cohort, r.model.slug()))?;
        writeln!(w, "{digest_line}")?;
        writeln!(w, "fpr,tpr")?;
        for (x, y) in &r.summary.points {
            writeln!(w, "{x},{y}")?;
        }
        w.flush()?;
    }

    let doc = json!({
        "config_digest": report.config_digest,
        "comparisons": report.delong,
        "year_audit": report.audit,
    });
    let mut w = create(dir, "delong.json")?;
    serde_json::to_writer_pretty(&mut w, &doc)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

