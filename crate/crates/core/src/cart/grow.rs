//! Greedy best-first tree growth on gradient/hessian statistics.
//!
//! Split gain is `G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)`, leaf value
//! `−G/(H+λ)`. With `g = −y`, `h = 1`, `λ = 0` this is a plain CART
//! regression tree with mean leaves.
//!
//! Histogram and exact search accumulate per-value sums in the same row
//! order, so on columns with at most `bins` distinct values they produce
//! bitwise-identical gains and therefore the same tree.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::{order_key, split_point, BinnedMatrix, FeatureMatrix, MAX_BINS};
use super::tree::{Node, Tree, NO_CHILD};

/// Splits must improve the objective by more than this.
pub const MIN_SPLIT_GAIN: f64 = 1e-12;

/// Below this many (row × feature) cells a node is searched sequentially.
const PARALLEL_CELLS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    Exact,
    Histogram { bins: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub min_node_size: usize,
    pub max_leaves: Option<usize>,
    pub feature_fraction: f64,
    pub split_mode: SplitMode,
    /// L2 penalty on leaf values; 0 for mean-leaf regression trees.
    pub lambda: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            min_node_size: 5,
            max_leaves: None,
            feature_fraction: 1.0 / 3.0,
            split_mode: SplitMode::Histogram { bins: MAX_BINS },
            lambda: 0.0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_node_size < 1 {
            return Err("min_node_size must be >= 1".into());
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return Err("feature_fraction must be in (0, 1]".into());
        }
        if let SplitMode::Histogram { bins } = self.split_mode {
            if !(2..=MAX_BINS).contains(&bins) {
                return Err("histogram bins must be in 2..=256".into());
            }
        }
        if let Some(m) = self.max_leaves {
            if m < 1 {
                return Err("max_leaves must be >= 1".into());
            }
        }
        if !(self.lambda >= 0.0) {
            return Err("lambda must be >= 0".into());
        }
        Ok(())
    }

    pub fn features_per_split(&self, n_features: usize) -> usize {
        ((self.feature_fraction * n_features as f64).ceil() as usize).clamp(1, n_features.max(1))
    }
}

/// Training columns in the representation the split search scans.
#[derive(Debug, Clone, Copy)]
pub enum Columns<'a> {
    Exact(&'a FeatureMatrix),
    Binned(&'a BinnedMatrix),
}

impl Columns<'_> {
    pub fn n_rows(&self) -> usize {
        match self {
            Columns::Exact(m) => m.n_rows(),
            Columns::Binned(m) => m.n_rows(),
        }
    }

    pub fn n_cols(&self) -> usize {
        match self {
            Columns::Exact(m) => m.n_cols(),
            Columns::Binned(m) => m.n_cols(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    /// Histogram: bin index `k` (left = bins ≤ k). Exact: index of the last
    /// distinct value going left.
    pub position: usize,
    pub threshold: f64,
    pub gain: f64,
}

pub struct GrownTree {
    pub tree: Tree,
    /// Leaf node reached by each entry of the input row list, in input order.
    pub leaf_of: Vec<u32>,
}

#[derive(Clone, Copy)]
struct Stats {
    g: f64,
    h: f64,
    n: usize,
}

fn leaf_value(s: Stats, lambda: f64) -> f64 {
    let d = s.h + lambda;
    if d > 0.0 {
        -s.g / d
    } else {
        0.0
    }
}

fn score(g: f64, h: f64, lambda: f64) -> Option<f64> {
    let d = h + lambda;
    (d > 0.0).then(|| g * g / d)
}

/// Scans cumulative `(g, h, n)` groups left to right and returns the best
/// valid cut `(position, gain)`. Ties keep the lower position.
fn scan_groups(
    groups: impl Iterator<Item = (f64, f64, usize)>,
    total: Stats,
    min_node: usize,
    lambda: f64,
    n_groups: usize,
) -> Option<(usize, f64)> {
    let parent = score(total.g, total.h, lambda)?;
    let mut gl = 0.0;
    let mut hl = 0.0;
    let mut nl = 0usize;
    let mut best: Option<(usize, f64)> = None;
    for (k, (g, h, n)) in groups.enumerate() {
        if k + 1 >= n_groups {
            break;
        }
        gl += g;
        hl += h;
        nl += n;
        let nr = total.n - nl;
        if nl < min_node || nr < min_node {
            continue;
        }
        let (Some(sl), Some(sr)) = (score(gl, hl, lambda), score(total.g - gl, total.h - hl, lambda))
        else {
            continue;
        };
        let gain = sl + sr - parent;
        if best.is_none_or(|(_, b)| gain > b) {
            best = Some((k, gain));
        }
    }
    best
}

fn hist_split(
    binned: &BinnedMatrix,
    feature: usize,
    rows: &[u32],
    ng: &[f64],
    nh: &[f64],
    total: Stats,
    params: &TreeParams,
) -> Option<Split> {
    let col = binned.column(feature);
    let nb = col.n_bins();
    if nb < 2 {
        return None;
    }
    let mut hg = [0.0f64; MAX_BINS];
    let mut hh = [0.0f64; MAX_BINS];
    let mut hc = [0u32; MAX_BINS];
    let bins = col.bins.as_slice();
    for ((&r, &g), &h) in rows.iter().zip(ng).zip(nh) {
        let b = bins[r as usize] as usize;
        hg[b] += g;
        hh[b] += h;
        hc[b] += 1;
    }
    let groups = (0..nb).map(|b| (hg[b], hh[b], hc[b] as usize));
    let (k, gain) = scan_groups(groups, total, params.min_node_size, params.lambda, nb)?;
    Some(Split {
        feature,
        position: k,
        threshold: col.cuts[k],
        gain,
    })
}

fn exact_split(
    raw: &FeatureMatrix,
    feature: usize,
    rows: &[u32],
    ng: &[f64],
    nh: &[f64],
    total: Stats,
    params: &TreeParams,
) -> Option<Split> {
    let col = raw.column(feature);
    let key = |i: u32| order_key(col[rows[i as usize] as usize]);
    let mut order: Vec<u32> = (0..rows.len() as u32).collect();
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));

    let mut groups: Vec<(f64, f64, usize, f64)> = Vec::new();
    for &i in &order {
        let v = key(i);
        let (g, h) = (ng[i as usize], nh[i as usize]);
        match groups.last_mut() {
            Some(last) if last.3 == v => {
                last.0 += g;
                last.1 += h;
                last.2 += 1;
            }
            _ => groups.push((g, h, 1, v)),
        }
    }
    let n_groups = groups.len();
    if n_groups < 2 {
        return None;
    }
    let (k, gain) = scan_groups(
        groups.iter().map(|&(g, h, n, _)| (g, h, n)),
        total,
        params.min_node_size,
        params.lambda,
        n_groups,
    )?;
    Some(Split {
        feature,
        position: k,
        threshold: split_point(groups[k].3, groups[k + 1].3),
        gain,
    })
}

/// Best split of a node over `features` (ascending). Ties go to the lower
/// feature index, then the lower threshold.
pub fn best_split(
    columns: Columns<'_>,
    rows: &[u32],
    grad: &[f64],
    hess: &[f64],
    features: &[usize],
    params: &TreeParams,
) -> Option<Split> {
    let ng: Vec<f64> = rows.iter().map(|&r| grad[r as usize]).collect();
    let nh: Vec<f64> = rows.iter().map(|&r| hess[r as usize]).collect();
    let total = Stats {
        g: ng.iter().sum(),
        h: nh.iter().sum(),
        n: rows.len(),
    };
    best_split_with(columns, rows, &ng, &nh, total, features, params)
}

fn best_split_with(
    columns: Columns<'_>,
    rows: &[u32],
    ng: &[f64],
    nh: &[f64],
    total: Stats,
    features: &[usize],
    params: &TreeParams,
) -> Option<Split> {
    if rows.len() < 2 * params.min_node_size {
        return None;
    }
    let one = |f: usize| match columns {
        Columns::Binned(b) => hist_split(b, f, rows, ng, nh, total, params),
        Columns::Exact(m) => exact_split(m, f, rows, ng, nh, total, params),
    };
    let found: Vec<Option<Split>> = if rows.len() * features.len() >= PARALLEL_CELLS {
        features.par_iter().map(|&f| one(f)).collect()
    } else {
        features.iter().map(|&f| one(f)).collect()
    };
    let mut best: Option<Split> = None;
    for s in found.into_iter().flatten() {
        if s.gain > MIN_SPLIT_GAIN && best.is_none_or(|b| s.gain > b.gain) {
            best = Some(s);
        }
    }
    best
}

fn goes_left(columns: Columns<'_>, split: &Split, row: u32) -> bool {
    match columns {
        Columns::Binned(b) => (b.column(split.feature).bins[row as usize] as usize) <= split.position,
        Columns::Exact(m) => order_key(m.get(row as usize, split.feature)) <= split.threshold,
    }
}

struct Frontier {
    node: u32,
    start: usize,
    end: usize,
    split: Option<Split>,
}

/// Grows one tree on `rows` (may contain duplicates; pass them ascending for
/// a canonical row order). Feature subsets are drawn from `rng` in node
/// creation order before any parallel work.
pub fn grow_tree<R: Rng + ?Sized>(
    columns: Columns<'_>,
    grad: &[f64],
    hess: &[f64],
    rows: &[u32],
    params: &TreeParams,
    rng: &mut R,
) -> GrownTree {
    let n_features = columns.n_cols();
    let k = params.features_per_split(n_features);
    let mut buf: Vec<u32> = rows.to_vec();
    let mut pos: Vec<u32> = (0..rows.len() as u32).collect();
    let mut nodes: Vec<Node> = Vec::new();
    let mut frontier: Vec<Frontier> = Vec::new();
    let mut leaves = 1usize;

    let open = |nodes: &mut Vec<Node>, buf: &[u32], start: usize, end: usize, rng: &mut R| {
        let slice = &buf[start..end];
        let ng: Vec<f64> = slice.iter().map(|&r| grad[r as usize]).collect();
        let nh: Vec<f64> = slice.iter().map(|&r| hess[r as usize]).collect();
        let stats = Stats {
            g: ng.iter().sum(),
            h: nh.iter().sum(),
            n: slice.len(),
        };
        let id = nodes.len() as u32;
        nodes.push(Node::leaf(leaf_value(stats, params.lambda), stats.h, stats.n as u32));
        let split = if stats.n >= 2 * params.min_node_size && n_features > 0 {
            let features = sample_features(n_features, k, rng);
            best_split_with(columns, slice, &ng, &nh, stats, &features, params)
        } else {
            None
        };
        Frontier {
            node: id,
            start,
            end,
            split,
        }
    };

    if !buf.is_empty() {
        let root = open(&mut nodes, &buf, 0, buf.len(), rng);
        frontier.push(root);
    } else {
        nodes.push(Node::leaf(0.0, 0.0, 0));
    }

    loop {
        if params.max_leaves.is_some_and(|m| leaves >= m) {
            break;
        }
        // Highest gain first; ties toward the older node.
        let pick = frontier
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.split.map(|s| (i, s.gain, f.node)))
            .fold(None::<(usize, f64, u32)>, |acc, cur| match acc {
                Some(a) if a.1 > cur.1 || (a.1 == cur.1 && a.2 < cur.2) => Some(a),
                _ => Some(cur),
            });
        let Some((idx, _, _)) = pick else { break };
        let f = frontier.swap_remove(idx);
        let split = f.split.expect("picked a splittable node");

        let mid = stable_partition(&mut buf[f.start..f.end], &mut pos[f.start..f.end], |r| {
            goes_left(columns, &split, r)
        }) + f.start;

        let left = open(&mut nodes, &buf, f.start, mid, rng);
        let right = open(&mut nodes, &buf, mid, f.end, rng);
        let n = &mut nodes[f.node as usize];
        n.feature = split.feature as u32;
        n.threshold = split.threshold;
        n.missing_left = true;
        n.left = left.node;
        n.right = right.node;
        n.gain = split.gain;
        frontier.push(left);
        frontier.push(right);
        leaves += 1;
    }

    let mut leaf_of = vec![NO_CHILD; rows.len()];
    for f in &frontier {
        for i in f.start..f.end {
            leaf_of[pos[i] as usize] = f.node;
        }
    }
    if rows.is_empty() {
        leaf_of.clear();
    }
    GrownTree {
        tree: Tree::from_nodes(nodes).expect("grown tree is valid"),
        leaf_of,
    }
}

fn sample_features<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut f = rand::seq::index::sample(rng, n, k).into_vec();
    f.sort_unstable();
    f
}

/// Moves rows satisfying `left` to the front, preserving relative order on
/// both sides. Returns the number of left rows.
fn stable_partition(rows: &mut [u32], pos: &mut [u32], left: impl Fn(u32) -> bool) -> usize {
    let mut right_rows = Vec::new();
    let mut right_pos = Vec::new();
    let mut w = 0;
    for i in 0..rows.len() {
        if left(rows[i]) {
            rows[w] = rows[i];
            pos[w] = pos[i];
            w += 1;
        } else {
            right_rows.push(rows[i]);
            right_pos.push(pos[i]);
        }
    }
    rows[w..].copy_from_slice(&right_rows);
    pos[w..].copy_from_slice(&right_pos);
    w
}
