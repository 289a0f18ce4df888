//! Column-major feature storage and quantile binning.

use rayon::prelude::*;

/// Value imputed for a missing credit cell. Genuine values are ≥ 0, so the
/// sentinel always sorts into the lowest bin.
pub const MISSING_SENTINEL: f64 = -1.0;

pub const MAX_BINS: usize = 256;

pub fn is_missing(v: f64) -> bool {
    v.is_nan() || v == MISSING_SENTINEL
}

/// Dense column-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_column_major(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_rows * n_cols, "matrix size mismatch");
        FeatureMatrix {
            n_rows,
            n_cols,
            values,
        }
    }

    pub fn from_columns(columns: Vec<Vec<f64>>) -> Self {
        let n_cols = columns.len();
        let n_rows = columns.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n_rows * n_cols);
        for c in columns {
            assert_eq!(c.len(), n_rows, "ragged columns");
            values.extend(c);
        }
        FeatureMatrix {
            n_rows,
            n_cols,
            values,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut values = vec![0.0; n_rows * n_cols];
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n_cols, "ragged rows");
            for (j, &v) in r.iter().enumerate() {
                values[j * n_rows + i] = v;
            }
        }
        FeatureMatrix {
            n_rows,
            n_cols,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_rows..(j + 1) * self.n_rows]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[col * self.n_rows + row]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.n_cols).map(|j| self.get(i, j)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(self.n_rows * cols.len());
        for &j in cols {
            values.extend_from_slice(self.column(j));
        }
        FeatureMatrix {
            n_rows: self.n_rows,
            n_cols: cols.len(),
            values,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols);
        for j in 0..self.n_cols {
            let col = self.column(j);
            values.extend(rows.iter().map(|&i| col[i]));
        }
        FeatureMatrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            values,
        }
    }

    /// Applies `f` to every value of column `j`.
    pub fn map_column(&mut self, j: usize, f: impl Fn(f64) -> f64) {
        let n = self.n_rows;
        for v in &mut self.values[j * n..(j + 1) * n] {
            *v = f(*v);
        }
    }
}

/// One binned column. `cuts[k]` separates bin `k` from bin `k + 1`; a value
/// `v` falls in bin `#{k : cuts[k] < v}`, so `v <= cuts[k]` iff its bin is
/// at most `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedColumn {
    pub bins: Vec<u8>,
    pub cuts: Vec<f64>,
}

impl BinnedColumn {
    pub fn n_bins(&self) -> usize {
        self.cuts.len() + 1
    }
}

/// Bin indices for every column, with bin edges frozen at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedMatrix {
    n_rows: usize,
    columns: Vec<BinnedColumn>,
}

impl BinnedMatrix {
    pub fn from_features(features: &FeatureMatrix, max_bins: usize) -> Self {
        assert!((2..=MAX_BINS).contains(&max_bins), "max_bins must be in 2..=256");
        let columns = (0..features.n_cols())
            .into_par_iter()
            .map(|j| bin_column(features.column(j), max_bins))
            .collect();
        BinnedMatrix {
            n_rows: features.n_rows(),
            columns,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &BinnedColumn {
        &self.columns[j]
    }
}

/// Midpoint strictly below `hi`, so `lo <= cut < hi`.
pub fn split_point(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) * 0.5;
    if mid >= hi {
        lo
    } else {
        mid
    }
}

/// Sort key that places NaN (missing) below every number.
pub fn order_key(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

fn bin_column(values: &[f64], max_bins: usize) -> BinnedColumn {
    let mut sorted: Vec<f64> = values.iter().map(|&v| order_key(v)).collect();
    sorted.sort_by(f64::total_cmp);
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    for &v in &sorted {
        match distinct.last_mut() {
            Some((last, count)) if *last == v => *count += 1,
            _ => distinct.push((v, 1)),
        }
    }

    let cuts = if distinct.len() <= max_bins {
        distinct
            .windows(2)
            .map(|w| split_point(w[0].0, w[1].0))
            .collect()
    } else {
        quantile_cuts(&distinct, max_bins)
    };

    let bins = values
        .iter()
        .map(|&v| cuts.partition_point(|&c| c < order_key(v)) as u8)
        .collect();
    BinnedColumn { bins, cuts }
}

/// Greedy equal-frequency cuts over the distinct values. The missing
/// sentinel (or NaN) always gets a bin of its own.
fn quantile_cuts(distinct: &[(f64, usize)], max_bins: usize) -> Vec<f64> {
    let mut cuts = Vec::with_capacity(max_bins - 1);
    let mut start = 0;
    if distinct[0].0 <= MISSING_SENTINEL {
        cuts.push(split_point(distinct[0].0, distinct[1].0));
        start = 1;
    }
    let remaining: usize = distinct[start..].iter().map(|d| d.1).sum();
    let bins_left = max_bins - cuts.len();
    let per_bin = (remaining as f64 / bins_left as f64).max(1.0);
    let mut acc = 0usize;
    let mut next_target = per_bin;
    for i in start..distinct.len() - 1 {
        acc += distinct[i].1;
        if acc as f64 >= next_target && cuts.len() < max_bins - 1 {
            cuts.push(split_point(distinct[i].0, distinct[i + 1].0));
            while next_target <= acc as f64 {
                next_target += per_bin;
            }
        }
    }
    cuts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_distinct_values_get_one_bin_each() {
        let f = FeatureMatrix::from_columns(vec![vec![3.0, 1.0, 2.0, 1.0, -1.0]]);
        let b = BinnedMatrix::from_features(&f, 256);
        let c = b.column(0);
        assert_eq!(c.cuts, vec![0.0, 1.5, 2.5]);
        assert_eq!(c.bins, vec![3, 1, 2, 1, 0]);
    }

    #[test]
    fn many_values_are_capped_at_max_bins() {
        let col: Vec<f64> = (0..10_000).map(|i| (i % 997) as f64).collect();
        let f = FeatureMatrix::from_columns(vec![col.clone()]);
        let b = BinnedMatrix::from_features(&f, 256);
        let c = b.column(0);
        assert!(c.n_bins() <= 256);
        assert!(c.n_bins() > 200);
        for (i, &v) in col.iter().enumerate() {
            let bin = c.bins[i] as usize;
            if bin > 0 {
                assert!(v > c.cuts[bin - 1]);
            }
            if bin < c.cuts.len() {
                assert!(v <= c.cuts[bin]);
            }
        }
    }

    #[test]
    fn sentinel_keeps_its_own_bin() {
        let mut col: Vec<f64> = (0..5000).map(|i| i as f64).collect();
        col.extend([MISSING_SENTINEL; 3]);
        let f = FeatureMatrix::from_columns(vec![col]);
        let b = BinnedMatrix::from_features(&f, 16);
        let c = b.column(0);
        assert_eq!(c.bins[5000], 0);
        assert_eq!(c.bins[0], 1);
    }

    #[test]
    fn split_point_is_strictly_below_upper_value() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let cut = split_point(lo, hi);
        assert!(lo <= cut && cut < hi);
    }
}
