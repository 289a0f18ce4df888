//! Regression-tree building block shared by the forest and the booster.

mod grow;
mod matrix;
mod tree;

pub use grow::{best_split, grow_tree, Columns, GrownTree, Split, SplitMode, TreeParams, MIN_SPLIT_GAIN};
pub use matrix::{
    is_missing, order_key, split_point, BinnedColumn, BinnedMatrix, FeatureMatrix, MAX_BINS,
    MISSING_SENTINEL,
};
pub use tree::{Node, Tree, NO_CHILD};
