//! Yearly per-person credit snapshots and CSV ingestion.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::catalog::VariableCatalog;
use crate::error::{Error, Result};

/// Literal used for a missing credit cell in panel files.
pub const MISSING_LITERAL: &str = "NA";

pub const MAX_AGE: u16 = 120;

/// The 50 states plus DC.
pub const US_STATES: [&str; 51] = [
    "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DC", "DE", "FL", "GA", "HI", "IA", "ID", "IL", "IN",
    "KS", "KY", "LA", "MA", "MD", "ME", "MI", "MN", "MO", "MS", "MT", "NC", "ND", "NE", "NH", "NJ",
    "NM", "NV", "NY", "OH", "OK", "OR", "PA", "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VT", "WA",
    "WI", "WV", "WY",
];

const ID_COLUMNS: [&str; 5] = ["person_id", "year", "age", "state", "deceased_flag"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateCode([u8; 2]);

impl StateCode {
    pub fn parse(s: &str) -> Option<Self> {
        let b = s.as_bytes();
        if b.len() == 2 && b.iter().all(u8::is_ascii_uppercase) {
            Some(StateCode([b[0], b[1]]))
        } else {
            None
        }
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("state codes are ASCII")
    }
}

impl fmt::Display for StateCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One person's record for one calendar year. Missing credit cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub year: i32,
    pub age: u16,
    pub state: StateCode,
    pub deceased: bool,
    pub credit: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonHistory {
    pub person_id: String,
    pub snapshots: Vec<Snapshot>,
}

impl PersonHistory {
    pub fn snapshot(&self, year: i32) -> Option<&Snapshot> {
        self.snapshots
            .binary_search_by_key(&year, |s| s.year)
            .ok()
            .map(|i| &self.snapshots[i])
    }

    /// State changes between consecutive observed snapshots up to `upto_year`.
    pub fn state_moves(&self, upto_year: i32) -> u32 {
        let observed = self.snapshots.iter().take_while(|s| s.year <= upto_year);
        let mut moves = 0;
        let mut prev: Option<StateCode> = None;
        for snap in observed {
            if let Some(p) = prev {
                if p != snap.state {
                    moves += 1;
                }
            }
            prev = Some(snap.state);
        }
        moves
    }
}

/// Validated panel: persons sorted by id, snapshots sorted by year.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    persons: Vec<PersonHistory>,
    n_vars: usize,
    year_range: (i32, i32),
}

impl PanelDataset {
    pub fn new(mut persons: Vec<PersonHistory>, n_vars: usize) -> Result<Self> {
        if persons.is_empty() {
            return Err(Error::EmptyInput("panel has no persons"));
        }
        persons.par_sort_by(|a, b| a.person_id.cmp(&b.person_id));
        for w in persons.windows(2) {
            if w[0].person_id == w[1].person_id {
                return Err(Error::DuplicateSnapshot {
                    person: w[0].person_id.clone(),
                    year: w[1].snapshots.first().map(|s| s.year).unwrap_or(0),
                });
            }
        }
        persons
            .par_iter_mut()
            .try_for_each(|p| validate_person(p, n_vars))?;
        let mut min_year = i32::MAX;
        let mut max_year = i32::MIN;
        for p in &persons {
            if let (Some(first), Some(last)) = (p.snapshots.first(), p.snapshots.last()) {
                min_year = min_year.min(first.year);
                max_year = max_year.max(last.year);
            }
        }
        if min_year > max_year {
            return Err(Error::EmptyInput("panel has no snapshots"));
        }
        Ok(PanelDataset {
            persons,
            n_vars,
            year_range: (min_year, max_year),
        })
    }

    pub fn persons(&self) -> &[PersonHistory] {
        &self.persons
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn year_range(&self) -> (i32, i32) {
        self.year_range
    }

    pub fn n_snapshots(&self) -> usize {
        self.persons.iter().map(|p| p.snapshots.len()).sum()
    }

    pub fn person(&self, person_id: &str) -> Option<&PersonHistory> {
        self.persons
            .binary_search_by(|p| p.person_id.as_str().cmp(person_id))
            .ok()
            .map(|i| &self.persons[i])
    }

    /// Sorted set of states seen anywhere in the panel.
    pub fn states(&self) -> Vec<StateCode> {
        let set: BTreeSet<StateCode> = self
            .persons
            .iter()
            .flat_map(|p| p.snapshots.iter().map(|s| s.state))
            .collect();
        set.into_iter().collect()
    }

    pub fn count_state_moves(&self, person_id: &str, upto_year: i32) -> Result<u32> {
        let person = self
            .person(person_id)
            .ok_or_else(|| Error::UnknownPerson(person_id.to_string()))?;
        if person.snapshots.first().is_none_or(|s| s.year > upto_year) {
            return Err(Error::NoSnapshot {
                person: person_id.to_string(),
                year: upto_year,
            });
        }
        Ok(person.state_moves(upto_year))
    }

    pub fn write_csv<W: Write>(
        &self,
        catalog: &VariableCatalog,
        out: W,
        comment: Option<&str>,
    ) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(out);
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut header: Vec<&str> = ID_COLUMNS.to_vec();
        header.extend(catalog.entries().iter().map(|e| e.column_name.as_str()));
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for p in &self.persons {
            for s in &p.snapshots {
                line.clear();
                use std::fmt::Write as _;
                let _ = write!(
                    line,
                    "{},{},{},{},{}",
                    p.person_id,
                    s.year,
                    s.age,
                    s.state,
                    u8::from(s.deceased)
                );
                for v in &s.credit {
                    if v.is_nan() {
                        line.push(',');
                        line.push_str(MISSING_LITERAL);
                    } else {
                        let _ = write!(line, ",{v}");
                    }
                }
                line.push('\n');
                out.write_all(line.as_bytes())?;
            }
        }
        out.flush()
    }
}

fn validate_person(p: &mut PersonHistory, n_vars: usize) -> Result<()> {
    p.snapshots.sort_by_key(|s| s.year);
    for w in p.snapshots.windows(2) {
        if w[0].year == w[1].year {
            return Err(Error::DuplicateSnapshot {
                person: p.person_id.clone(),
                year: w[0].year,
            });
        }
    }
    let mut dead_since: Option<i32> = None;
    for s in &p.snapshots {
        if s.age > MAX_AGE {
            return Err(Error::InvalidSnapshot {
                person: p.person_id.clone(),
                year: s.year,
                message: format!("age {} exceeds {MAX_AGE}", s.age),
            });
        }
        if s.credit.len() != n_vars {
            return Err(Error::InvalidSnapshot {
                person: p.person_id.clone(),
                year: s.year,
                message: format!("{} credit values, expected {n_vars}", s.credit.len()),
            });
        }
        match (dead_since, s.deceased) {
            (Some(dead_year), false) => {
                return Err(Error::FlagNotAbsorbing {
                    person: p.person_id.clone(),
                    dead_year,
                    later_year: s.year,
                })
            }
            (None, true) => dead_since = Some(s.year),
            _ => {}
        }
    }
    Ok(())
}

/// Reads panel CSV files (header `person_id,year,age,state,deceased_flag`
/// followed by the catalog columns in catalog order). Files are parsed in
/// parallel; the result does not depend on file order.
pub fn ingest_panel<P: AsRef<Path> + Sync>(
    paths: &[P],
    catalog: &VariableCatalog,
) -> Result<PanelDataset> {
    if paths.is_empty() {
        return Err(Error::EmptyInput("no panel files"));
    }
    let parsed: Vec<Vec<(String, Snapshot)>> = paths
        .par_iter()
        .map(|p| read_panel_file(p.as_ref(), catalog))
        .collect::<Result<_>>()?;

    let mut by_person: HashMap<String, Vec<Snapshot>> = HashMap::new();
    for rows in parsed {
        for (id, snap) in rows {
            by_person.entry(id).or_default().push(snap);
        }
    }
    let persons = by_person
        .into_iter()
        .map(|(person_id, snapshots)| PersonHistory {
            person_id,
            snapshots,
        })
        .collect();
    PanelDataset::new(persons, catalog.len())
}

fn read_panel_file(path: &Path, catalog: &VariableCatalog) -> Result<Vec<(String, Snapshot)>> {
    let source = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(PathBuf::from(path), e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(std::io::BufReader::new(file));

    let headers = rdr
        .headers()
        .map_err(|e| parse_err(&source, 1, e.to_string()))?
        .clone();
    let expected: Vec<&str> = ID_COLUMNS
        .iter()
        .copied()
        .chain(catalog.entries().iter().map(|e| e.column_name.as_str()))
        .collect();
    for name in &expected {
        if !headers.iter().any(|h| h == *name) {
            return Err(Error::Schema {
                path: source,
                message: format!("missing column \"{name}\""),
            });
        }
    }
    if headers.len() != expected.len() || headers.iter().zip(&expected).any(|(h, e)| h != *e) {
        return Err(Error::Schema {
            path: source,
            message: "columns out of order or unexpected extra columns".to_string(),
        });
    }

    let n_vars = catalog.len();
    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Err(parse_err(&source, line, e.to_string()));
            }
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or_default();
        let person_id = field(0).to_string();
        if person_id.is_empty() {
            return Err(parse_err(&source, line, "empty person_id".into()));
        }
        let year: i32 = field(1)
            .parse()
            .map_err(|_| parse_err(&source, line, format!("bad year \"{}\"", field(1))))?;
        let age: u16 = field(2)
            .parse()
            .map_err(|_| parse_err(&source, line, format!("bad age \"{}\"", field(2))))?;
        let state = StateCode::parse(field(3))
            .ok_or_else(|| parse_err(&source, line, format!("bad state \"{}\"", field(3))))?;
        let deceased = match field(4) {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_err(
                    &source,
                    line,
                    format!("bad deceased_flag \"{other}\""),
                ))
            }
        };
        let mut credit = Vec::with_capacity(n_vars);
        for j in 0..n_vars {
            let cell = field(ID_COLUMNS.len() + j);
            let v = if cell == MISSING_LITERAL {
                f32::NAN
            } else {
                cell.parse::<f32>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    parse_err(
                        &source,
                        line,
                        format!(
                            "non-numeric value \"{cell}\" in column \"{}\"",
                            catalog.entry(j).column_name
                        ),
                    )
                })?
            };
            credit.push(v);
        }
        rows.push((
            person_id,
            Snapshot {
                year,
                age,
                state,
                deceased,
                credit,
            },
        ));
    }
    Ok(rows)
}

fn parse_err(path: &str, line: u64, message: String) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::catalog::VariableCatalog;

    fn snap(year: i32, state: &str, deceased: bool, n: usize) -> Snapshot {
        Snapshot {
            year,
            age: 50,
            state: StateCode::parse(state).unwrap(),
            deceased,
            credit: vec![1.0; n],
        }
    }

    fn panel_of(states: &[(i32, &str)]) -> PanelDataset {
        let p = PersonHistory {
            person_id: "P1".into(),
            snapshots: states.iter().map(|&(y, s)| snap(y, s, false, 1)).collect(),
        };
        PanelDataset::new(vec![p], 1).unwrap()
    }

    #[test]
    fn state_moves_examples() {
        let d = panel_of(&[(2004, "CA"), (2005, "CA"), (2006, "CA")]);
        assert_eq!(d.count_state_moves("P1", 2006).unwrap(), 0);
        let d = panel_of(&[(2004, "CA"), (2005, "NV"), (2006, "CA")]);
        assert_eq!(d.count_state_moves("P1", 2006).unwrap(), 2);
        assert_eq!(d.count_state_moves("P1", 2005).unwrap(), 1);
        // Gap year: the two observed snapshots are compared directly.
        let d = panel_of(&[(2004, "CA"), (2006, "NY")]);
        assert_eq!(d.count_state_moves("P1", 2006).unwrap(), 1);
    }

    #[test]
    fn state_moves_errors() {
        let d = panel_of(&[(2005, "CA")]);
        assert!(matches!(
            d.count_state_moves("nobody", 2006),
            Err(Error::UnknownPerson(_))
        ));
        assert!(matches!(
            d.count_state_moves("P1", 2004),
            Err(Error::NoSnapshot { .. })
        ));
    }

    #[test]
    fn non_absorbing_flag_is_rejected() {
        let p = PersonHistory {
            person_id: "P9".into(),
            snapshots: vec![
                snap(2004, "CA", false, 1),
                snap(2005, "CA", true, 1),
                snap(2006, "CA", false, 1),
            ],
        };
        let err = PanelDataset::new(vec![p], 1).unwrap_err();
        assert!(err.to_string().contains("deceased flag not absorbing"));
        assert!(err.to_string().contains("P9"));
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn ingest_three_by_two() {
        let cat = VariableCatalog::synthetic(1, 0);
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        body.push_str("person_id,year,age,state,deceased_flag");
        for e in cat.entries() {
            body.push(',');
            body.push_str(&e.column_name);
        }
        body.push('\n');
        for p in ["A", "B", "C"] {
            for y in [2004, 2005] {
                body.push_str(&format!("{p},{y},60,CA,0"));
                for j in 0..cat.len() {
                    if j == 3 {
                        body.push_str(",NA");
                    } else {
                        body.push_str(",2.5");
                    }
                }
                body.push('\n');
            }
        }
        let path = write(dir.path(), "p.csv", &body);
        let d = ingest_panel(&[path], &cat).unwrap();
        assert_eq!(d.n_snapshots(), 6);
        assert_eq!(d.persons().len(), 3);
        assert!(d.persons()[0].snapshots[0].credit[3].is_nan());
        assert_eq!(d.year_range(), (2004, 2005));
    }

    #[test]
    fn ingest_missing_age_column() {
        let cat = VariableCatalog::synthetic(1, 0);
        let dir = tempfile::tempdir().unwrap();
        let mut body = "person_id,year,state,deceased_flag".to_string();
        for e in cat.entries() {
            body.push(',');
            body.push_str(&e.column_name);
        }
        body.push('\n');
        let path = write(dir.path(), "p.csv", &body);
        let err = ingest_panel(&[path], &cat).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
        assert!(err.to_string().contains("\"age\""));
    }

    #[test]
    fn ingest_rejects_non_numeric_cell() {
        let cat = VariableCatalog::synthetic(1, 0);
        let dir = tempfile::tempdir().unwrap();
        let mut body = "person_id,year,age,state,deceased_flag".to_string();
        for e in cat.entries() {
            body.push(',');
            body.push_str(&e.column_name);
        }
        body.push_str("\nA,2004,60,CA,0");
        for j in 0..cat.len() {
            body.push_str(if j == 0 { ",abc" } else { ",1" });
        }
        body.push('\n');
        let path = write(dir.path(), "p.csv", &body);
        let err = ingest_panel(&[path], &cat).unwrap_err();
        assert!(err.to_string().contains("abc"), "{err}");
    }

    #[test]
    fn duplicate_person_year_across_files() {
        let cat = VariableCatalog::synthetic(1, 0);
        let p = PersonHistory {
            person_id: "A".into(),
            snapshots: vec![snap(2004, "CA", false, cat.len())],
        };
        let d = PanelDataset::new(vec![p], cat.len()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut a = Vec::new();
        d.write_csv(&cat, &mut a, None).unwrap();
        let pa = write(dir.path(), "a.csv", std::str::from_utf8(&a).unwrap());
        let pb = write(dir.path(), "b.csv", std::str::from_utf8(&a).unwrap());
        let err = ingest_panel(&[pa, pb], &cat).unwrap_err();
        assert!(matches!(err, Error::DuplicateSnapshot { .. }));
    }
}
