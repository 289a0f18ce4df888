//! Credit-variable catalog: column names, product groups and value kinds.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 30 Experian product groups, in catalog order.
pub const GROUP_CODES: [&str; 30] = [
    "ALJ", "ALL", "AUA", "AUL", "AUT", "BCA", "BCC", "BRC", "BUS", "COL", "CRU", "FIP", "ILJ",
    "ILN", "IQ", "MTA", "MTF", "MTJ", "MTS", "PIL", "REC", "REJ", "REV", "RPM", "RTA", "RTI",
    "RTR", "STU", "USE", "UTI",
];

/// Reserved group for non-credit (static) design columns.
pub const NONCREDIT_GROUP: &str = "NONCREDIT";

/// Number of credit variables in the full catalog.
pub const FULL_CATALOG_SIZE: usize = 429;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupCode(u8);

impl GroupCode {
    pub fn parse(code: &str) -> Option<Self> {
        GROUP_CODES
            .iter()
            .position(|c| *c == code)
            .map(|i| GroupCode(i as u8))
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < GROUP_CODES.len(), "group index {index} out of range");
        GroupCode(index as u8)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_str(self) -> &'static str {
        GROUP_CODES[self.0 as usize]
    }
}

impl fmt::Display for GroupCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Numeric,
    Count,
}

impl ValueKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "numeric" => Some(ValueKind::Numeric),
            "count" => Some(ValueKind::Count),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ValueKind::Numeric => "numeric",
            ValueKind::Count => "count",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub column_name: String,
    pub group: GroupCode,
    pub value_kind: ValueKind,
}

/// Ordered list of credit variables. Entry order fixes column order in
/// every panel file and design matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableCatalog {
    entries: Vec<CatalogEntry>,
}

impl VariableCatalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(e.column_name.as_str()) {
                return Err(Error::DuplicateColumn {
                    row: i + 1,
                    name: e.column_name.clone(),
                });
            }
        }
        Ok(VariableCatalog { entries })
    }

    /// Catalog with `per_group` variables in each of the 30 groups, plus one
    /// extra variable in the first `extra` groups.
    pub fn synthetic(per_group: usize, extra: usize) -> Self {
        let mut entries = Vec::with_capacity(per_group * GROUP_CODES.len() + extra);
        for (g, code) in GROUP_CODES.iter().enumerate() {
            let n = per_group + usize::from(g < extra);
            for k in 0..n {
                entries.push(CatalogEntry {
                    column_name: format!("{code}_{:02}", k + 1),
                    group: GroupCode::from_index(g),
                    value_kind: if k % 2 == 0 {
                        ValueKind::Count
                    } else {
                        ValueKind::Numeric
                    },
                });
            }
        }
        VariableCatalog { entries }
    }

    /// The 429-variable layout: 14 variables per group, 15 in the first nine.
    pub fn full() -> Self {
        let per_group = FULL_CATALOG_SIZE / GROUP_CODES.len();
        let extra = FULL_CATALOG_SIZE % GROUP_CODES.len();
        Self::synthetic(per_group, extra)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn from_reader<R: Read>(reader: R, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_err(source, e))?.clone();
        if headers.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        let expected = ["column_name", "group_code", "value_kind"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Schema {
                path: source.to_string(),
                message: format!(
                    "expected header `{}`, got `{}`",
                    expected.join(","),
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut entries = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| csv_err(source, e))?;
            let row = i + 1;
            let name = record.get(0).unwrap_or_default().to_string();
            let code = record.get(1).unwrap_or_default();
            let kind = record.get(2).unwrap_or_default();
            let group = GroupCode::parse(code).ok_or_else(|| Error::UnknownGroup {
                row,
                code: code.to_string(),
            })?;
            let value_kind = ValueKind::parse(kind).ok_or_else(|| Error::UnknownValueKind {
                row,
                kind: kind.to_string(),
            })?;
            entries.push(CatalogEntry {
                column_name: name,
                group,
                value_kind,
            });
        }
        Self::new(entries)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "column_name,group_code,value_kind")?;
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{}",
                e.column_name,
                e.group,
                e.value_kind.as_str()
            )?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> &CatalogEntry {
        &self.entries[index]
    }

    pub fn distinct_groups(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.group)
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn columns_in<'a>(&'a self, groups: &'a [GroupCode]) -> impl Iterator<Item = usize> + 'a {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| groups.contains(&e.group))
            .map(|(i, _)| i)
    }
}

fn csv_err(source: &str, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        path: source.to_string(),
        line,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_catalog_has_429_entries_in_30_groups() {
        let cat = VariableCatalog::full();
        assert_eq!(cat.len(), 429);
        assert_eq!(cat.distinct_groups(), 30);

        let mut buf = Vec::new();
        cat.write_csv(&mut buf).unwrap();
        let back = VariableCatalog::from_reader(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, cat);
    }

    #[test]
    fn empty_file_is_rejected() {
        let err = VariableCatalog::from_reader("".as_bytes(), "mem").unwrap_err();
        assert_eq!(err.to_string(), "empty catalog");
        let err = VariableCatalog::from_reader(
            "column_name,group_code,value_kind\n".as_bytes(),
            "mem",
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "empty catalog");
    }

    #[test]
    fn unknown_group_is_named() {
        let csv = "column_name,group_code,value_kind\nA_1,BCA,count\nB_1,XYZ,numeric\n";
        let err = VariableCatalog::from_reader(csv.as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, Error::UnknownGroup { row: 2, .. }));
        assert!(err.to_string().contains("XYZ"));
    }

    #[test]
    fn duplicate_name_is_rejected() {
        let csv = "column_name,group_code,value_kind\nA_1,BCA,count\nA_1,REV,numeric\n";
        let err = VariableCatalog::from_reader(csv.as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, Error::DuplicateColumn { row: 2, .. }));
    }

    #[test]
    fn group_codes_round_trip() {
        for (i, code) in GROUP_CODES.iter().enumerate() {
            let g = GroupCode::parse(code).unwrap();
            assert_eq!(g.index(), i);
            assert_eq!(g.as_str(), *code);
        }
        assert!(GroupCode::parse(NONCREDIT_GROUP).is_none());
    }
}
