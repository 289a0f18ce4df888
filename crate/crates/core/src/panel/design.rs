//! Lagged design matrices for one target year.
//!
//! A row is a person alive and observed in `target_year - 1` who is also
//! observed in `target_year`. Columns are `snapshots` stacked blocks of
//! credit variables (lag 0 = `target_year - 1`), followed by the static
//! block: age, state dummies (first state is the reference) and the count
//! of state moves. The earliest panel year only feeds the move count.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::catalog::{GroupCode, VariableCatalog, NONCREDIT_GROUP};
use super::dataset::{PanelDataset, StateCode};
use crate::cart::{FeatureMatrix, MISSING_SENTINEL};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 5] = b"CLDM1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnMeta {
    Credit {
        variable: usize,
        name: String,
        lag: usize,
        group: GroupCode,
    },
    MissingIndicator {
        variable: usize,
        name: String,
        lag: usize,
        group: GroupCode,
    },
    Age,
    StateDummy {
        state: StateCode,
    },
    MoveCount,
}

impl ColumnMeta {
    pub fn label(&self) -> String {
        match self {
            ColumnMeta::Credit { name, lag, .. } => format!("{name}_lag{}", lag + 1),
            ColumnMeta::MissingIndicator { name, lag, .. } => {
                format!("{name}_lag{}_missing", lag + 1)
            }
            ColumnMeta::Age => "age".to_string(),
            ColumnMeta::StateDummy { state } => format!("state_{state}"),
            ColumnMeta::MoveCount => "moves".to_string(),
        }
    }

    /// Product group code, or [`NONCREDIT_GROUP`] for static columns.
    pub fn group_label(&self) -> &'static str {
        match self {
            ColumnMeta::Credit { group, .. } | ColumnMeta::MissingIndicator { group, .. } => {
                group.as_str()
            }
            _ => NONCREDIT_GROUP,
        }
    }

    /// 1-based lag for credit columns, 0 for statics.
    pub fn report_lag(&self) -> usize {
        match self {
            ColumnMeta::Credit { lag, .. } | ColumnMeta::MissingIndicator { lag, .. } => lag + 1,
            _ => 0,
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(
            self,
            ColumnMeta::Age | ColumnMeta::StateDummy { .. } | ColumnMeta::MoveCount
        )
    }

    pub fn is_age_or_state(&self) -> bool {
        matches!(self, ColumnMeta::Age | ColumnMeta::StateDummy { .. })
    }
}

pub fn column_digest(meta: &[ColumnMeta]) -> String {
    let mut h = Sha256::new();
    for m in meta {
        h.update(m.label().as_bytes());
        h.update(b"\x1f");
        h.update(m.group_label().as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignOptions {
    /// Append one 0/1 indicator column per credit column marking imputed cells.
    pub missing_indicators: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    target_year: i32,
    snapshots: usize,
    features: FeatureMatrix,
    column_meta: Vec<ColumnMeta>,
    target: Vec<u8>,
    person_ids: Vec<String>,
    ages: Vec<u16>,
}

/// Largest snapshot count that [`assemble_design`] accepts for `target_year`.
pub fn max_snapshots(dataset: &PanelDataset, target_year: i32) -> i64 {
    target_year as i64 - dataset.year_range().0 as i64 - 1
}

pub fn assemble_design(
    dataset: &PanelDataset,
    catalog: &VariableCatalog,
    target_year: i32,
    snapshots: usize,
    options: DesignOptions,
) -> Result<DesignMatrix> {
    let (min_year, max_year) = dataset.year_range();
    if target_year > max_year || target_year <= min_year {
        return Err(Error::TargetYearOutOfRange(target_year));
    }
    let max_feasible = max_snapshots(dataset, target_year);
    if snapshots == 0 || snapshots as i64 > max_feasible {
        return Err(Error::TooManySnapshots {
            target_year,
            snapshots,
            max_feasible,
        });
    }
    if catalog.len() != dataset.n_vars() {
        return Err(Error::ColumnMismatch {
            expected: catalog.len(),
            got: dataset.n_vars(),
        });
    }

    let feature_year = target_year - 1;
    let states = dataset.states();
    let dummies = &states[1.min(states.len())..];

    let mut column_meta = Vec::new();
    for lag in 0..snapshots {
        for (variable, e) in catalog.entries().iter().enumerate() {
            column_meta.push(ColumnMeta::Credit {
                variable,
                name: e.column_name.clone(),
                lag,
                group: e.group,
            });
        }
    }
    if options.missing_indicators {
        for lag in 0..snapshots {
            for (variable, e) in catalog.entries().iter().enumerate() {
                column_meta.push(ColumnMeta::MissingIndicator {
                    variable,
                    name: e.column_name.clone(),
                    lag,
                    group: e.group,
                });
            }
        }
    }
    column_meta.push(ColumnMeta::Age);
    column_meta.extend(dummies.iter().map(|&state| ColumnMeta::StateDummy { state }));
    column_meta.push(ColumnMeta::MoveCount);
    let n_cols = column_meta.len();

    // Risk set, in person-id order.
    let risk: Vec<(usize, u8)> = dataset
        .persons()
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let base = p.snapshot(feature_year)?;
            if base.deceased {
                return None;
            }
            let outcome = p.snapshot(target_year)?;
            Some((i, u8::from(outcome.deceased)))
        })
        .collect();
    let n_rows = risk.len();

    let mut values = vec![0.0f64; n_rows * n_cols];
    // Fill column blocks in parallel: each task owns one whole column.
    values
        .par_chunks_mut(n_rows.max(1))
        .enumerate()
        .take(n_cols)
        .for_each(|(j, col)| {
            if n_rows == 0 {
                return;
            }
            let persons = dataset.persons();
            match &column_meta[j] {
                ColumnMeta::Credit { variable, lag, .. } => {
                    let year = feature_year - *lag as i32;
                    for (r, &(pi, _)) in risk.iter().enumerate() {
                        col[r] = match persons[pi].snapshot(year) {
                            Some(s) if !s.credit[*variable].is_nan() => s.credit[*variable] as f64,
                            _ => MISSING_SENTINEL,
                        };
                    }
                }
                ColumnMeta::MissingIndicator { variable, lag, .. } => {
                    let year = feature_year - *lag as i32;
                    for (r, &(pi, _)) in risk.iter().enumerate() {
                        let missing = persons[pi]
                            .snapshot(year)
                            .is_none_or(|s| s.credit[*variable].is_nan());
                        col[r] = f64::from(u8::from(missing));
                    }
                }
                ColumnMeta::Age => {
                    for (r, &(pi, _)) in risk.iter().enumerate() {
                        col[r] = persons[pi].snapshot(feature_year).map_or(0.0, |s| s.age as f64);
                    }
                }
                ColumnMeta::StateDummy { state } => {
                    for (r, &(pi, _)) in risk.iter().enumerate() {
                        let here = persons[pi].snapshot(feature_year).map(|s| s.state);
                        col[r] = f64::from(u8::from(here == Some(*state)));
                    }
                }
                ColumnMeta::MoveCount => {
                    for (r, &(pi, _)) in risk.iter().enumerate() {
                        col[r] = persons[pi].state_moves(feature_year) as f64;
                    }
                }
            }
        });

    let persons = dataset.persons();
    let target = risk.iter().map(|&(_, y)| y).collect();
    let person_ids = risk
        .iter()
        .map(|&(pi, _)| persons[pi].person_id.clone())
        .collect();
    let ages = risk
        .iter()
        .map(|&(pi, _)| persons[pi].snapshot(feature_year).map_or(0, |s| s.age))
        .collect();

    Ok(DesignMatrix {
        target_year,
        snapshots,
        features: FeatureMatrix::from_column_major(n_rows, n_cols, values),
        column_meta,
        target,
        person_ids,
        ages,
    })
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    target_year: i32,
    snapshots: usize,
    n_rows: usize,
    n_cols: usize,
    column_meta: Vec<ColumnMeta>,
    person_ids: Vec<String>,
    ages: Vec<u16>,
}

impl DesignMatrix {
    pub fn from_parts(
        target_year: i32,
        snapshots: usize,
        features: FeatureMatrix,
        column_meta: Vec<ColumnMeta>,
        target: Vec<u8>,
        person_ids: Vec<String>,
        ages: Vec<u16>,
    ) -> Result<Self> {
        let n = features.n_rows();
        for len in [target.len(), person_ids.len(), ages.len()] {
            if len != n {
                return Err(Error::LengthMismatch { left: n, right: len });
            }
        }
        if column_meta.len() != features.n_cols() {
            return Err(Error::LengthMismatch {
                left: features.n_cols(),
                right: column_meta.len(),
            });
        }
        Ok(DesignMatrix {
            target_year,
            snapshots,
            features,
            column_meta,
            target,
            person_ids,
            ages,
        })
    }

    pub fn target_year(&self) -> i32 {
        self.target_year
    }

    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    pub fn n_rows(&self) -> usize {
        self.features.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.features.n_cols()
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn column_meta(&self) -> &[ColumnMeta] {
        &self.column_meta
    }

    pub fn target(&self) -> &[u8] {
        &self.target
    }

    pub fn person_ids(&self) -> &[String] {
        &self.person_ids
    }

    pub fn ages(&self) -> &[u16] {
        &self.ages
    }

    pub fn column_digest(&self) -> String {
        column_digest(&self.column_meta)
    }

    /// Indices of the columns matching `pred`.
    pub fn columns_where(&self, pred: impl Fn(&ColumnMeta) -> bool) -> Vec<usize> {
        self.column_meta
            .iter()
            .enumerate()
            .filter(|(_, m)| pred(m))
            .map(|(j, _)| j)
            .collect()
    }

    /// Columnar cache: magic, u64 header length, JSON header, target bytes,
    /// then each column as little-endian f64.
    pub fn write_cache<W: Write>(&self, out: W) -> Result<()> {
        let mut out = std::io::BufWriter::new(out);
        let header = CacheHeader {
            target_year: self.target_year,
            snapshots: self.snapshots,
            n_rows: self.n_rows(),
            n_cols: self.n_cols(),
            column_meta: self.column_meta.clone(),
            person_ids: self.person_ids.clone(),
            ages: self.ages.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        out.write_all(&self.target)?;
        for v in self.features.values() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_cache<R: Read>(input: R) -> Result<Self> {
        let mut input = std::io::BufReader::new(input);
        let mut magic = [0u8; 5];
        input.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::BadModelFile("not a CLDM1 design cache".into()));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        input.read_exact(&mut json)?;
        let h: CacheHeader = serde_json::from_slice(&json)?;
        let mut target = vec![0u8; h.n_rows];
        input.read_exact(&mut target)?;
        let mut values = Vec::with_capacity(h.n_rows * h.n_cols);
        let mut buf = [0u8; 8];
        for _ in 0..h.n_rows * h.n_cols {
            input.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        DesignMatrix::from_parts(
            h.target_year,
            h.snapshots,
            FeatureMatrix::from_column_major(h.n_rows, h.n_cols, values),
            h.column_meta,
            target,
            h.person_ids,
            h.ages,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_cache(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_cache(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::dataset::{PersonHistory, Snapshot, US_STATES};

    fn person(id: &str, years: &[(i32, u16, &str, bool)], n_vars: usize) -> PersonHistory {
        PersonHistory {
            person_id: id.to_string(),
            snapshots: years
                .iter()
                .map(|&(year, age, state, deceased)| Snapshot {
                    year,
                    age,
                    state: StateCode::parse(state).unwrap(),
                    deceased,
                    credit: (0..n_vars).map(|j| (year - 2000) as f32 * 10.0 + j as f32).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn risk_set_and_layout() {
        let cat = VariableCatalog::synthetic(1, 0);
        let n = cat.len();
        let ps = vec![
            // alive throughout
            person("A", &[(2004, 60, "CA", false), (2005, 61, "CA", false), (2006, 62, "NV", false), (2007, 63, "NV", false)], n),
            // dies in 2007 (the target year)
            person("B", &[(2004, 70, "NV", false), (2005, 71, "NV", false), (2006, 72, "NV", false), (2007, 73, "NV", true)], n),
            // deceased already in 2006: excluded
            person("C", &[(2004, 80, "CA", false), (2005, 81, "CA", false), (2006, 82, "CA", true)], n),
            // not observed in 2007: attrition, excluded
            person("D", &[(2004, 50, "CA", false), (2005, 51, "CA", false), (2006, 52, "CA", false)], n),
            // missing 2005 snapshot: imputed
            person("E", &[(2004, 40, "TX", false), (2006, 42, "TX", false), (2007, 43, "TX", false)], n),
        ];
        let d = PanelDataset::new(ps, n).unwrap();
        let m = assemble_design(&d, &cat, 2007, 2, DesignOptions::default()).unwrap();
        assert_eq!(m.person_ids(), &["A", "B", "E"]);
        assert_eq!(m.target(), &[0, 1, 0]);
        // 2 lags of n vars + age + (3 states - 1) dummies + moves
        assert_eq!(m.n_cols(), 2 * n + 1 + 2 + 1);
        let f = m.features();
        // lag 0 is 2006, lag 1 is 2005
        assert_eq!(f.get(0, 0), 60.0);
        assert_eq!(f.get(0, n), 50.0);
        // E has no 2005 snapshot
        assert_eq!(f.get(2, n), MISSING_SENTINEL);
        assert_eq!(f.get(2, 0), 60.0);
        let age = 2 * n;
        assert_eq!(f.column(age), &[62.0, 72.0, 42.0]);
        // states sorted: CA (reference), NV, TX
        assert_eq!(f.column(age + 1), &[1.0, 1.0, 0.0]);
        assert_eq!(f.column(age + 2), &[0.0, 0.0, 1.0]);
        assert_eq!(f.column(age + 3), &[1.0, 0.0, 0.0]);
        assert_eq!(m.ages(), &[62, 72, 42]);
    }

    #[test]
    fn infeasible_snapshots_reports_max() {
        let cat = VariableCatalog::synthetic(1, 0);
        let ps = vec![person("A", &[(2004, 60, "CA", false), (2005, 61, "CA", false), (2006, 62, "CA", false)], cat.len())];
        let d = PanelDataset::new(ps, cat.len()).unwrap();
        let err = assemble_design(&d, &cat, 2006, 2, DesignOptions::default()).unwrap_err();
        assert!(err.to_string().contains("max feasible is 1"), "{err}");
        assert!(assemble_design(&d, &cat, 2006, 1, DesignOptions::default()).is_ok());
    }

    #[test]
    fn missing_indicators_mark_imputed_cells() {
        let cat = VariableCatalog::synthetic(1, 0);
        let n = cat.len();
        let mut e = person("E", &[(2004, 40, "TX", false), (2005, 41, "TX", false), (2006, 42, "TX", false)], n);
        e.snapshots[1].credit[0] = f32::NAN;
        let d = PanelDataset::new(vec![e], n).unwrap();
        let m = assemble_design(&d, &cat, 2006, 1, DesignOptions { missing_indicators: true }).unwrap();
        assert_eq!(m.n_cols(), 2 * n + 2);
        assert_eq!(m.features().get(0, 0), MISSING_SENTINEL);
        assert_eq!(m.features().get(0, n), 1.0);
        assert_eq!(m.features().get(0, n + 1), 0.0);
    }

    #[test]
    fn paper_column_counts() {
        let cat = VariableCatalog::full();
        let n = cat.len();
        let persons: Vec<_> = US_STATES
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let years: Vec<_> = (2004..=2016).map(|y| (y, 50u16 + (y - 2004) as u16, *s, false)).collect();
                person(&format!("P{i:02}"), &years, n)
            })
            .collect();
        let d = PanelDataset::new(persons, n).unwrap();
        for (target, l, cols) in [(2012, 7, 3055), (2016, 11, 4771)] {
            let m = assemble_design(&d, &cat, target, l, DesignOptions::default()).unwrap();
            assert_eq!(m.n_cols(), cols);
            assert_eq!(m.n_rows(), 51);
        }
    }

    #[test]
    fn cache_round_trip() {
        let cat = VariableCatalog::synthetic(1, 0);
        let ps = vec![person("A", &[(2004, 60, "CA", false), (2005, 61, "CA", false), (2006, 62, "CA", false)], cat.len())];
        let d = PanelDataset::new(ps, cat.len()).unwrap();
        let m = assemble_design(&d, &cat, 2006, 1, DesignOptions::default()).unwrap();
        let mut buf = Vec::new();
        m.write_cache(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"CLDM1");
        let back = DesignMatrix::read_cache(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }
}
