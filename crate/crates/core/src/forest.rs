//! Random forest of probability trees: each tree is a mean-leaf regression
//! tree on a bootstrap sample, and the forest averages leaf death rates.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{grow_tree, BinnedMatrix, Columns, FeatureMatrix, SplitMode, Tree, TreeParams};
use crate::error::{Error, Result};
use crate::model_io::{read_model, write_model, ModelMeta};
use crate::panel::DesignMatrix;
use crate::rng::{domain, stream};

pub const FOREST_MAGIC: &[u8; 5] = b"CLRF1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 500,
            tree: TreeParams::default(),
            seed: 1,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::Config("n_trees must be >= 1".into()));
        }
        self.tree.validate().map_err(Error::Config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ForestHeader {
    params: ForestParams,
    meta: ModelMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub params: ForestParams,
    pub meta: ModelMeta,
    pub trees: Vec<Tree>,
}

pub fn fit_forest(design: &DesignMatrix, params: &ForestParams) -> Result<ForestModel> {
    let trees = fit_forest_trees(design.features(), design.target(), params)?;
    Ok(ForestModel {
        params: *params,
        meta: ModelMeta::from_design(design),
        trees,
    })
}

pub fn fit_forest_matrix(features: &FeatureMatrix, target: &[u8], params: &ForestParams) -> Result<ForestModel> {
    let trees = fit_forest_trees(features, target, params)?;
    Ok(ForestModel {
        params: *params,
        meta: ModelMeta::anonymous(features.n_rows(), features.n_cols()),
        trees,
    })
}

fn fit_forest_trees(features: &FeatureMatrix, target: &[u8], params: &ForestParams) -> Result<Vec<Tree>> {
    params.validate()?;
    let n = features.n_rows();
    if n == 0 {
        return Err(Error::EmptyInput("design"));
    }
    if target.len() != n {
        return Err(Error::LengthMismatch { left: n, right: target.len() });
    }
    let positives = target.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == n {
        let rate = positives as f64 / n as f64;
        log::warn!("forest: single-class target, returning constant model {rate}");
        return Ok(vec![Tree::single_leaf(rate)]);
    }

    let grad: Vec<f64> = target.iter().map(|&y| -(y as f64)).collect();
    let hess = vec![1.0; n];
    let binned;
    let columns = match params.tree.split_mode {
        SplitMode::Histogram { bins } => {
            binned = BinnedMatrix::from_features(features, bins);
            Columns::Binned(&binned)
        }
        SplitMode::Exact => Columns::Exact(features),
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(params.seed, domain::TREE, t as u64);
            let mut rows: Vec<u32> = (0..n).map(|_| rng.random_range(0..n as u32)).collect();
            rows.sort_unstable();
            grow_tree(columns, &grad, &hess, &rows, &params.tree, &mut rng).tree
        })
        .collect();
    Ok(trees)
}

impl ForestModel {
    pub fn n_cols(&self) -> usize {
        self.meta.n_cols
    }

    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.n_cols() != self.meta.n_cols {
            return Err(Error::ColumnMismatch {
                expected: self.meta.n_cols,
                got: features.n_cols(),
            });
        }
        let k = self.trees.len() as f64;
        Ok((0..features.n_rows())
            .into_par_iter()
            .map(|i| {
                let s: f64 = self.trees.iter().map(|t| t.predict_in(features, i)).sum();
                (s / k).clamp(0.0, 1.0)
            })
            .collect())
    }

    pub fn predict_design(&self, design: &DesignMatrix) -> Result<Vec<f64>> {
        self.meta.check_design(design)?;
        self.predict(design.features())
    }

    pub fn feature_gains(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.meta.n_cols];
        for t in &self.trees {
            t.accumulate_gains(&mut g);
        }
        g
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let header = ForestHeader {
            params: self.params,
            meta: self.meta.clone(),
        };
        write_model(out, FOREST_MAGIC, &header, &self.trees)
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let (h, trees): (ForestHeader, _) = read_model(input, FOREST_MAGIC)?;
        Ok(ForestModel {
            params: h.params,
            meta: h.meta,
            trees,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize) -> (FeatureMatrix, Vec<u8>) {
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = y.iter().map(|&v| v as f64 * 3.0 + 1.0).collect();
        let noise = (0..n).map(|i| ((i * 7919) % 13) as f64).collect();
        (FeatureMatrix::from_columns(vec![noise, x]), y)
    }

    #[test]
    fn all_zero_targets_give_constant_zero() {
        let x = FeatureMatrix::from_columns(vec![vec![1.0, 2.0, 3.0]]);
        let m = fit_forest_matrix(&x, &[0, 0, 0], &ForestParams::default()).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![0.0; 3]);
        assert!(fit_forest_matrix(&FeatureMatrix::from_columns(vec![vec![]]), &[], &ForestParams::default()).is_err());
    }

    #[test]
    fn separating_feature_gives_pure_predictions() {
        let (x, y) = separable(100);
        let params = ForestParams {
            n_trees: 20,
            tree: TreeParams {
                feature_fraction: 1.0,
                ..TreeParams::default()
            },
            seed: 3,
        };
        let m = fit_forest_matrix(&x, &y, &params).unwrap();
        let p = m.predict(&x).unwrap();
        for (pi, yi) in p.iter().zip(&y) {
            assert_eq!(*pi, *yi as f64);
        }
        assert!(m.predict(&FeatureMatrix::from_columns(vec![vec![1.0]])).is_err());
    }

    #[test]
    fn averaging_two_trees() {
        let mut m = fit_forest_matrix(
            &FeatureMatrix::from_columns(vec![vec![0.0, 1.0]]),
            &[0, 0],
            &ForestParams::default(),
        )
        .unwrap();
        m.trees = vec![Tree::single_leaf(0.2), Tree::single_leaf(0.4)];
        let p = m.predict(&FeatureMatrix::from_columns(vec![vec![5.0]])).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn fixed_seed_same_bytes() {
        let (x, mut y) = separable(200);
        y[3] = 0;
        let params = ForestParams {
            n_trees: 8,
            seed: 9,
            ..ForestParams::default()
        };
        let bytes = |m: &ForestModel| {
            let mut b = Vec::new();
            m.write(&mut b).unwrap();
            b
        };
        let a = fit_forest_matrix(&x, &y, &params).unwrap();
        let b = fit_forest_matrix(&x, &y, &params).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        let back = ForestModel::read(&bytes(&a)[..]).unwrap();
        assert_eq!(back, a);
    }
}
