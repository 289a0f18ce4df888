use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cohort {
    pub label: String,
    pub min_age: u16,
    pub max_age: u16,
}

impl Cohort {
    pub fn contains(&self, age: u16) -> bool {
        (self.min_age..=self.max_age).contains(&age)
    }
}

/// Ascending, non-overlapping age bands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSpec {
    cohorts: Vec<Cohort>,
}

impl Default for CohortSpec {
    /// The nine reporting cohorts 41-45 through 81-100.
    fn default() -> Self {
        let mut bands: Vec<(u16, u16)> = (0..8).map(|k| (41 + 5 * k, 45 + 5 * k)).collect();
        bands.push((81, 100));
        CohortSpec::from_bands(&bands).expect("default cohorts are valid")
    }
}

impl CohortSpec {
    pub fn new(cohorts: Vec<Cohort>) -> Result<Self> {
        for c in &cohorts {
            if c.min_age > c.max_age {
                return Err(Error::Config(format!("cohort {} has min > max", c.label)));
            }
        }
        for w in cohorts.windows(2) {
            if w[1].min_age <= w[0].max_age {
                return Err(Error::Config(format!(
                    "cohorts {} and {} overlap or are out of order",
                    w[0].label, w[1].label
                )));
            }
        }
        Ok(CohortSpec { cohorts })
    }

    pub fn from_bands(bands: &[(u16, u16)]) -> Result<Self> {
        Self::new(
            bands
                .iter()
                .map(|&(lo, hi)| Cohort {
                    label: format!("{lo}-{hi}"),
                    min_age: lo,
                    max_age: hi,
                })
                .collect(),
        )
    }

    /// Parses `41-45,46-50,...`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut bands = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (lo, hi) = part
                .split_once('-')
                .ok_or_else(|| Error::Config(format!("bad cohort \"{part}\"")))?;
            let lo = lo.trim().parse().map_err(|_| Error::Config(format!("bad cohort \"{part}\"")))?;
            let hi = hi.trim().parse().map_err(|_| Error::Config(format!("bad cohort \"{part}\"")))?;
            bands.push((lo, hi));
        }
        Self::from_bands(&bands)
    }

    pub fn cohorts(&self) -> &[Cohort] {
        &self.cohorts
    }

    pub fn cohort_of(&self, age: u16) -> Option<usize> {
        self.cohorts.iter().position(|c| c.contains(age))
    }
}

/// Row indices per nonempty cohort (in spec order) plus the residual rows
/// whose age falls outside every cohort.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CohortPartition {
    pub cells: Vec<(String, Vec<usize>)>,
    pub residual: Vec<usize>,
}

impl CohortPartition {
    pub fn get(&self, label: &str) -> Option<&[usize]> {
        self.cells
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, rows)| rows.as_slice())
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

pub fn cohort_partition(ages: &[u16], cohorts: &CohortSpec) -> CohortPartition {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cohorts.cohorts().len()];
    let mut residual = Vec::new();
    for (i, &age) in ages.iter().enumerate() {
        match cohorts.cohort_of(age) {
            Some(c) => buckets[c].push(i),
            None => residual.push(i),
        }
    }
    let cells = cohorts
        .cohorts()
        .iter()
        .zip(buckets)
        .filter(|(_, rows)| !rows.is_empty())
        .map(|(c, rows)| (c.label.clone(), rows))
        .collect();
    CohortPartition { cells, residual }
}
