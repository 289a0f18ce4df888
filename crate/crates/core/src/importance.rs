//! Gain importance and its aggregation by product group, lag and cohort.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::boosting::BoostModel;
use crate::cart::{FeatureMatrix, Tree};
use crate::error::{Error, Result};
use crate::forest::ForestModel;
use crate::panel::{ColumnMeta, NONCREDIT_GROUP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Group,
    Lag,
    GroupLag,
    GroupCohort,
}

impl Dimension {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "group" => Ok(Dimension::Group),
            "lag" => Ok(Dimension::Lag),
            "group_lag" => Ok(Dimension::GroupLag),
            "group_cohort" => Ok(Dimension::GroupCohort),
            other => Err(Error::UnknownDimension(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Group => "group",
            Dimension::Lag => "lag",
            Dimension::GroupLag => "group_lag",
            Dimension::GroupCohort => "group_cohort",
        }
    }
}

/// Either fitted ensemble.
#[derive(Clone, Copy)]
pub enum Ensemble<'a> {
    Forest(&'a ForestModel),
    Boost(&'a BoostModel),
}

impl Ensemble<'_> {
    pub fn n_cols(&self) -> usize {
        match self {
            Ensemble::Forest(m) => m.meta.n_cols,
            Ensemble::Boost(m) => m.meta.n_cols,
        }
    }
}

/// Per-feature sum of split gains over all trees (all rounds used for
/// prediction).
pub fn gain_importance(model: Ensemble<'_>) -> Vec<f64> {
    match model {
        Ensemble::Forest(m) => m.feature_gains(),
        Ensemble::Boost(m) => m.feature_gains(),
    }
}

fn replay_tree(tree: &Tree, x: &FeatureMatrix, rows: &[usize], g: &[f64], h: &[f64], lambda: f64, gains: &mut [f64]) {
    let nodes = tree.nodes();
    let mut sums = vec![(0.0f64, 0.0f64); nodes.len()];
    for (k, &r) in rows.iter().enumerate() {
        let mut i = 0usize;
        loop {
            sums[i].0 += g[k];
            sums[i].1 += h[k];
            let n = &nodes[i];
            if n.is_leaf() {
                break;
            }
            let v = x.get(r, n.feature as usize);
            let left = if crate::cart::is_missing(v) { n.missing_left } else { v <= n.threshold };
            i = if left { n.left } else { n.right } as usize;
        }
    }
    let score = |(g, h): (f64, f64)| if h + lambda > 0.0 { g * g / (h + lambda) } else { 0.0 };
    for (i, n) in nodes.iter().enumerate() {
        if !n.is_leaf() {
            let gain = score(sums[n.left as usize]) + score(sums[n.right as usize]) - score(sums[i]);
            gains[n.feature as usize] += gain.max(0.0);
        }
    }
}

/// Split gains recomputed on a row subset (e.g. one age cohort) of `x`:
/// each split is re-scored with the gradient statistics of the subset rows
/// that reach it. Boosting margins are replayed round by round.
pub fn subset_gains(model: Ensemble<'_>, x: &FeatureMatrix, target: &[u8], rows: &[usize]) -> Result<Vec<f64>> {
    if x.n_cols() != model.n_cols() {
        return Err(Error::ColumnMismatch {
            expected: model.n_cols(),
            got: x.n_cols(),
        });
    }
    let mut gains = vec![0.0; x.n_cols()];
    match model {
        Ensemble::Forest(m) => {
            let g: Vec<f64> = rows.iter().map(|&r| -(target[r] as f64)).collect();
            let h = vec![1.0; rows.len()];
            for t in &m.trees {
                replay_tree(t, x, rows, &g, &h, m.params.tree.lambda, &mut gains);
            }
        }
        Ensemble::Boost(m) => {
            let mut margin = vec![m.base_score; rows.len()];
            let v = m.params.learning_rate;
            for t in m.active_trees() {
                let p: Vec<f64> = margin.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect();
                let g: Vec<f64> = rows.iter().zip(&p).map(|(&r, &p)| p - target[r] as f64).collect();
                let h: Vec<f64> = p.iter().map(|&p| p * (1.0 - p)).collect();
                replay_tree(t, x, rows, &g, &h, m.params.lambda, &mut gains);
                for (k, &r) in rows.iter().enumerate() {
                    margin[k] += v * t.predict_in(x, r);
                }
            }
        }
    }
    Ok(gains)
}

/// Per-feature gains, pooled or per cohort.
pub enum GainSource {
    Pooled(Vec<f64>),
    ByCohort(Vec<(String, Vec<f64>)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceCell {
    pub cell: String,
    pub raw_gain: f64,
    pub normalized_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub dimension: Dimension,
    pub cells: Vec<ImportanceCell>,
    /// Σ of all cell gains before truncation.
    pub total_gain: f64,
    pub cells_before_truncation: usize,
    pub top_k: Option<usize>,
    pub excluded_noncredit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregateOptions {
    pub top_k: Option<usize>,
    /// Drop the NONCREDIT cell (age, state dummies, moves) before ranking.
    pub exclude_noncredit: bool,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            top_k: None,
            exclude_noncredit: true,
        }
    }
}

fn cell_key(meta: &ColumnMeta, dimension: Dimension, cohort: Option<&str>) -> String {
    let group = meta.group_label();
    match dimension {
        Dimension::Group => group.to_string(),
        Dimension::Lag => format!("lag{}", meta.report_lag()),
        Dimension::GroupLag => format!("{group}_lag{}", meta.report_lag()),
        Dimension::GroupCohort => format!("{group}:{}", cohort.unwrap_or("all")),
    }
}

pub fn aggregate_importance(
    source: &GainSource,
    column_meta: &[ColumnMeta],
    dimension: Dimension,
    options: AggregateOptions,
) -> Result<ImportanceReport> {
    let pooled;
    let parts: Vec<(Option<&str>, &[f64])> = match (source, dimension) {
        (GainSource::Pooled(_), Dimension::GroupCohort) => {
            return Err(Error::Config("group_cohort importance needs per-cohort gains".into()))
        }
        (GainSource::Pooled(g), _) => vec![(None, g.as_slice())],
        (GainSource::ByCohort(c), Dimension::GroupCohort) => {
            c.iter().map(|(l, g)| (Some(l.as_str()), g.as_slice())).collect()
        }
        (GainSource::ByCohort(c), _) => {
            let mut sum = vec![0.0; column_meta.len()];
            for (_, g) in c {
                for (s, v) in sum.iter_mut().zip(g) {
                    *s += v;
                }
            }
            pooled = sum;
            vec![(None, pooled.as_slice())]
        }
    };

    let mut cells: BTreeMap<String, f64> = BTreeMap::new();
    for (cohort, gains) in parts {
        if gains.len() != column_meta.len() {
            return Err(Error::ColumnMismatch {
                expected: column_meta.len(),
                got: gains.len(),
            });
        }
        for (meta, &g) in column_meta.iter().zip(gains) {
            if options.exclude_noncredit && meta.group_label() == NONCREDIT_GROUP {
                continue;
            }
            *cells.entry(cell_key(meta, dimension, cohort)).or_insert(0.0) += g.max(0.0);
        }
    }
    let total_gain = cells.values().sum();
    let mut ranked: Vec<(String, f64)> = cells.into_iter().collect();
    // Highest gain first; ties keep name order (BTreeMap order, stable sort).
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let before = ranked.len();
    if let Some(k) = options.top_k {
        ranked.truncate(k);
    }
    let kept: f64 = ranked.iter().map(|c| c.1).sum();
    let cells = ranked
        .into_iter()
        .map(|(cell, raw_gain)| ImportanceCell {
            cell,
            raw_gain,
            normalized_weight: if kept > 0.0 { raw_gain / kept } else { 0.0 },
        })
        .collect();
    Ok(ImportanceReport {
        dimension,
        cells,
        total_gain,
        cells_before_truncation: before,
        top_k: options.top_k,
        excluded_noncredit: options.exclude_noncredit,
    })
}

impl ImportanceReport {
    pub fn weight(&self, cell: &str) -> Option<f64> {
        self.cells.iter().find(|c| c.cell == cell).map(|c| c.normalized_weight)
    }

    pub fn weight_sum(&self) -> f64 {
        self.cells.iter().map(|c| c.normalized_weight).sum()
    }

    /// `# config_digest=...` line, then `cell,raw_gain,normalized_weight`.
    pub fn write_csv<W: Write>(&self, mut out: W, config_digest: &str) -> Result<()> {
        writeln!(out, "# config_digest={config_digest}")?;
        writeln!(out, "cell,raw_gain,normalized_weight")?;
        for c in &self.cells {
            writeln!(out, "{},{},{}", c.cell, c.raw_gain, c.normalized_weight)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::GroupCode;

    fn credit(variable: usize, group: &str, lag: usize) -> ColumnMeta {
        ColumnMeta::Credit {
            variable,
            name: format!("{group}_{variable:02}"),
            lag,
            group: GroupCode::parse(group).unwrap(),
        }
    }

    #[test]
    fn same_group_collapses_to_one_cell() {
        let meta = [credit(0, "BCA", 0), credit(1, "BCA", 0)];
        let r = aggregate_importance(
            &GainSource::Pooled(vec![0.3, 0.7]),
            &meta,
            Dimension::Group,
            AggregateOptions::default(),
        )
        .unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.weight("BCA"), Some(1.0));
    }

    #[test]
    fn lag_shares() {
        let meta = [credit(0, "BCA", 0), credit(0, "BCA", 1), ColumnMeta::Age];
        let r = aggregate_importance(
            &GainSource::Pooled(vec![3.0, 1.0, 50.0]),
            &meta,
            Dimension::Lag,
            AggregateOptions::default(),
        )
        .unwrap();
        assert_eq!(r.weight("lag1"), Some(0.75));
        assert_eq!(r.weight("lag2"), Some(0.25));
        let keep = aggregate_importance(
            &GainSource::Pooled(vec![3.0, 1.0, 50.0]),
            &meta,
            Dimension::Lag,
            AggregateOptions {
                top_k: None,
                exclude_noncredit: false,
            },
        )
        .unwrap();
        assert_eq!(keep.total_gain, 54.0);
        assert_eq!(keep.cells[0].cell, "lag0");
    }

    #[test]
    fn top_k_renormalizes() {
        let meta: Vec<ColumnMeta> = (0..30).map(|g| credit(g, GroupCode::from_index(g).as_str(), 0)).collect();
        let gains: Vec<f64> = (0..30).map(|g| (g + 1) as f64).collect();
        let r = aggregate_importance(
            &GainSource::Pooled(gains.clone()),
            &meta,
            Dimension::Group,
            AggregateOptions {
                top_k: Some(10),
                exclude_noncredit: true,
            },
        )
        .unwrap();
        assert_eq!(r.cells.len(), 10);
        assert!((r.weight_sum() - 1.0).abs() < 1e-12);
        assert_eq!(r.total_gain, gains.iter().sum::<f64>());
        assert!(Dimension::parse("state").is_err());
    }

    #[test]
    fn cohort_cells() {
        let meta = [credit(0, "BCA", 0), credit(0, "REV", 0)];
        let src = GainSource::ByCohort(vec![("81-100".into(), vec![1.0, 0.0]), ("41-45".into(), vec![0.0, 3.0])]);
        let r = aggregate_importance(&src, &meta, Dimension::GroupCohort, AggregateOptions::default()).unwrap();
        assert_eq!(r.weight("REV:41-45"), Some(0.75));
        let g = aggregate_importance(&src, &meta, Dimension::Group, AggregateOptions::default()).unwrap();
        assert_eq!(g.weight("BCA"), Some(0.25));
        assert!(aggregate_importance(
            &GainSource::Pooled(vec![1.0, 1.0]),
            &meta,
            Dimension::GroupCohort,
            AggregateOptions::default()
        )
        .is_err());
    }
}
