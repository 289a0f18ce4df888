//! Stochastic gradient boosting with logistic loss on the log-odds scale.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{grow_tree, BinnedMatrix, Columns, FeatureMatrix, SplitMode, Tree, TreeParams, MAX_BINS};
use crate::error::{Error, Result};
use crate::model_io::{read_model, write_model, ModelMeta};
use crate::panel::DesignMatrix;
use crate::rng::{domain, stream};

pub const BOOST_MAGIC: &[u8; 5] = b"CLGB1";
/// Probabilities are kept inside [ε, 1−ε].
pub const PROB_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub validation_fraction: f64,
    pub patience: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        EarlyStopping {
            validation_fraction: 0.1,
            patience: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub row_subsample: f64,
    pub feature_fraction: f64,
    pub lambda: f64,
    pub max_leaves: Option<usize>,
    pub min_node_size: usize,
    pub split_mode: SplitMode,
    pub early_stopping: Option<EarlyStopping>,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            n_rounds: 500,
            learning_rate: 0.2,
            row_subsample: 0.25,
            feature_fraction: 1.0 / 3.0,
            lambda: 1.0,
            max_leaves: Some(32),
            min_node_size: 5,
            split_mode: SplitMode::Histogram { bins: MAX_BINS },
            early_stopping: None,
            seed: 1,
        }
    }
}

impl BoostParams {
    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            min_node_size: self.min_node_size,
            max_leaves: self.max_leaves,
            feature_fraction: self.feature_fraction,
            split_mode: self.split_mode,
            lambda: self.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_rounds < 1 {
            return bad("n_rounds must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if !(self.row_subsample > 0.0 && self.row_subsample <= 1.0) {
            return bad("row_subsample must be in (0, 1]");
        }
        if let Some(es) = self.early_stopping {
            if !(es.validation_fraction > 0.0 && es.validation_fraction < 1.0) || es.patience < 1 {
                return bad("early stopping needs validation_fraction in (0, 1) and patience >= 1");
            }
        }
        self.tree_params().validate().map_err(Error::Config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BoostHeader {
    params: BoostParams,
    meta: ModelMeta,
    base_score: f64,
    train_loss: Vec<f64>,
    valid_loss: Vec<f64>,
    best_round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostModel {
    pub params: BoostParams,
    pub meta: ModelMeta,
    /// φ₀ on the log-odds scale.
    pub base_score: f64,
    /// Unshrunk trees; prediction multiplies each by the learning rate.
    pub trees: Vec<Tree>,
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
    pub best_round: Option<usize>,
}

fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn logloss(margin: &[f64], target: &[u8], rows: &[u32]) -> f64 {
    let total: f64 = rows
        .iter()
        .map(|&r| {
            let p = sigmoid(margin[r as usize]);
            if target[r as usize] == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / rows.len() as f64
}

/// Stratified validation split from the VALIDATION stream; returns
/// (train, valid), both ascending.
fn split_rows(target: &[u8], es: Option<EarlyStopping>, seed: u64) -> (Vec<u32>, Vec<u32>) {
    let all: Vec<u32> = (0..target.len() as u32).collect();
    let Some(es) = es else {
        return (all, Vec::new());
    };
    let mut rng = stream(seed, domain::VALIDATION, 0);
    let mut valid = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<u32> = all.iter().copied().filter(|&r| target[r as usize] == class).collect();
        idx.shuffle(&mut rng);
        let k = (es.validation_fraction * idx.len() as f64).floor() as usize;
        valid.extend_from_slice(&idx[..k]);
    }
    valid.sort_unstable();
    let mut is_valid = vec![false; target.len()];
    for &r in &valid {
        is_valid[r as usize] = true;
    }
    let train = all.into_iter().filter(|&r| !is_valid[r as usize]).collect();
    (train, valid)
}

pub fn fit_gbm(design: &DesignMatrix, params: &BoostParams) -> Result<BoostModel> {
    fit_with_meta(design.features(), design.target(), params, ModelMeta::from_design(design))
}

pub fn fit_gbm_matrix(features: &FeatureMatrix, target: &[u8], params: &BoostParams) -> Result<BoostModel> {
    fit_with_meta(
        features,
        target,
        params,
        ModelMeta::anonymous(features.n_rows(), features.n_cols()),
    )
}

fn fit_with_meta(features: &FeatureMatrix, target: &[u8], params: &BoostParams, meta: ModelMeta) -> Result<BoostModel> {
    params.validate()?;
    let n = features.n_rows();
    if n == 0 {
        return Err(Error::EmptyInput("design"));
    }
    if target.len() != n {
        return Err(Error::LengthMismatch { left: n, right: target.len() });
    }
    let (train, valid) = split_rows(target, params.early_stopping, params.seed);
    let positives = train.iter().filter(|&&r| target[r as usize] == 1).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::SingleClass("boosting needs both classes in the training rows"));
    }

    let mean = positives as f64 / train.len() as f64;
    let base_score = (mean / (1.0 - mean)).ln();
    let tree_params = params.tree_params();
    let binned;
    let columns = match params.split_mode {
        SplitMode::Histogram { bins } => {
            binned = BinnedMatrix::from_features(features, bins);
            Columns::Binned(&binned)
        }
        SplitMode::Exact => Columns::Exact(features),
    };

    let mut margin = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let k = ((params.row_subsample * train.len() as f64).ceil() as usize).clamp(1, train.len());
    let mut trees = Vec::new();
    let mut train_loss = Vec::new();
    let mut valid_loss = Vec::new();
    let mut best: Option<(usize, f64)> = None;

    for m in 0..params.n_rounds {
        let mut rng = stream(params.seed, domain::ROUND, m as u64);
        let mut rows: Vec<u32> = if k == train.len() {
            train.clone()
        } else {
            index::sample(&mut rng, train.len(), k)
                .into_iter()
                .map(|i| train[i])
                .collect()
        };
        rows.sort_unstable();
        for &r in &rows {
            let r = r as usize;
            let p = sigmoid(margin[r]);
            grad[r] = p - target[r] as f64;
            hess[r] = p * (1.0 - p);
        }
        let tree = grow_tree(columns, &grad, &hess, &rows, &tree_params, &mut rng).tree;
        let v = params.learning_rate;
        margin
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, phi)| *phi += v * tree.predict_in(features, i));
        trees.push(tree);
        train_loss.push(logloss(&margin, target, &train));

        if let Some(es) = params.early_stopping {
            let loss = logloss(&margin, target, &valid);
            valid_loss.push(loss);
            if best.is_none_or(|(_, b)| loss < b) {
                best = Some((m + 1, loss));
            }
            let (best_round, _) = best.expect("set above");
            if m + 1 - best_round >= es.patience {
                break;
            }
        }
    }

    Ok(BoostModel {
        params: *params,
        meta,
        base_score,
        trees,
        train_loss,
        valid_loss,
        best_round: best.map(|b| b.0),
    })
}

impl BoostModel {
    /// Trees used for prediction: all of them, or the prefix up to
    /// `best_round` when early stopping picked one.
    pub fn active_trees(&self) -> &[Tree] {
        let k = self.best_round.unwrap_or(self.trees.len()).min(self.trees.len());
        &self.trees[..k]
    }

    pub fn margin_row(&self, value_of: impl Fn(usize) -> f64) -> f64 {
        let v = self.params.learning_rate;
        let mut phi = self.base_score;
        for t in self.active_trees() {
            phi += v * t.predict(&value_of);
        }
        phi
    }

    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.n_cols() != self.meta.n_cols {
            return Err(Error::ColumnMismatch {
                expected: self.meta.n_cols,
                got: features.n_cols(),
            });
        }
        Ok((0..features.n_rows())
            .into_par_iter()
            .map(|i| sigmoid(self.margin_row(|f| features.get(i, f))))
            .collect())
    }

    pub fn predict_design(&self, design: &DesignMatrix) -> Result<Vec<f64>> {
        self.meta.check_design(design)?;
        self.predict(design.features())
    }

    pub fn feature_gains(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.meta.n_cols];
        for t in self.active_trees() {
            t.accumulate_gains(&mut g);
        }
        g
    }

    pub fn write_loss_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "round,train_logloss,valid_logloss")?;
        for (i, l) in self.train_loss.iter().enumerate() {
            match self.valid_loss.get(i) {
                Some(v) => writeln!(out, "{},{l},{v}", i + 1)?,
                None => writeln!(out, "{},{l},", i + 1)?,
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let header = BoostHeader {
            params: self.params,
            meta: self.meta.clone(),
            base_score: self.base_score,
            train_loss: self.train_loss.clone(),
            valid_loss: self.valid_loss.clone(),
            best_round: self.best_round,
        };
        write_model(out, BOOST_MAGIC, &header, &self.trees)
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let (h, trees): (BoostHeader, _) = read_model(input, BOOST_MAGIC)?;
        Ok(BoostModel {
            params: h.params,
            meta: h.meta,
            base_score: h.base_score,
            trees,
            train_loss: h.train_loss,
            valid_loss: h.valid_loss,
            best_round: h.best_round,
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
    use crate::rng::stream;
    use rand::Rng;

    fn noisy(n: usize, seed: u64) -> (FeatureMatrix, Vec<u8>) {
        let mut rng = stream(seed, 42, 0);
        let cols: Vec<Vec<f64>> = (0..4).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let y = (0..n)
            .map(|i| {
                let z = 3.0 * cols[0][i] - 2.0 * cols[1][i] - 1.0;
                (rng.random::<f64>() < 1.0 / (1.0 + (-z).exp())) as u8
            })
            .collect();
        (FeatureMatrix::from_columns(cols), y)
    }

    #[test]
    fn single_class_rejected() {
        let x = FeatureMatrix::from_columns(vec![vec![1.0, 2.0]]);
        assert!(matches!(
            fit_gbm_matrix(&x, &[1, 1], &BoostParams::default()),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn lone_positive_moves_up() {
        let x = FeatureMatrix::from_columns(vec![(0..10).map(|i| i as f64).collect()]);
        let mut y = vec![0u8; 10];
        y[7] = 1;
        let params = BoostParams {
            n_rounds: 50,
            min_node_size: 1,
            ..BoostParams::default()
        };
        let m = fit_gbm_matrix(&x, &y, &params).unwrap();
        let p = m.predict(&x).unwrap();
        assert!(p[7] > sigmoid(m.base_score));
    }

    #[test]
    fn full_sample_loss_is_monotone() {
        let (x, y) = noisy(2000, 1);
        let params = BoostParams {
            n_rounds: 60,
            row_subsample: 1.0,
            feature_fraction: 1.0,
            ..BoostParams::default()
        };
        let m = fit_gbm_matrix(&x, &y, &params).unwrap();
        for w in m.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn two_rows_separate() {
        let x = FeatureMatrix::from_columns(vec![vec![0.0, 1.0]]);
        let params = BoostParams {
            n_rounds: 1000,
            row_subsample: 1.0,
            feature_fraction: 1.0,
            min_node_size: 1,
            ..BoostParams::default()
        };
        let m = fit_gbm_matrix(&x, &[0, 1], &params).unwrap();
        let p = m.predict(&x).unwrap();
        assert!(p[1] > p[0]);
        assert!(p[0] < 0.01 && p[1] > 0.99, "{p:?}");
        for w in m.train_loss.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn shrinkage_composition_is_explicit() {
        let (x, y) = noisy(500, 2);
        let params = BoostParams {
            n_rounds: 2,
            ..BoostParams::default()
        };
        let m = fit_gbm_matrix(&x, &y, &params).unwrap();
        let p = m.predict(&x).unwrap();
        let v = params.learning_rate;
        for i in 0..x.n_rows() {
            let row = x.row(i);
            let phi = m.base_score + v * m.trees[0].predict_row(&row) + v * m.trees[1].predict_row(&row);
            assert_eq!(p[i], sigmoid(phi));
        }
        let none = BoostModel {
            trees: vec![],
            ..m.clone()
        };
        assert!(none.predict(&x).unwrap().iter().all(|&q| q == sigmoid(m.base_score)));
    }

    #[test]
    fn best_round_matches_retrain() {
        let (x, y) = noisy(1500, 3);
        let params = BoostParams {
            n_rounds: 300,
            learning_rate: 0.5,
            early_stopping: Some(EarlyStopping {
                validation_fraction: 0.2,
                patience: 10,
            }),
            ..BoostParams::default()
        };
        let m = fit_gbm_matrix(&x, &y, &params).unwrap();
        let best = m.best_round.unwrap();
        assert!(m.trees.len() < 300, "early stopping never triggered");
        let retrained = fit_gbm_matrix(&x, &y, &BoostParams { n_rounds: best, ..params }).unwrap();
        assert_eq!(retrained.trees[..best], m.trees[..best]);
        assert_eq!(retrained.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn file_round_trip() {
        let (x, y) = noisy(300, 4);
        let m = fit_gbm_matrix(&x, &y, &BoostParams { n_rounds: 5, ..BoostParams::default() }).unwrap();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert_eq!(BoostModel::read(&buf[..]).unwrap(), m);
        let mut csv = Vec::new();
        m.write_loss_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 6);
    }
}
