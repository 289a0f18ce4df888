//! Credit panel ingestion, risk sets and lagged design matrices.

pub mod catalog;
pub mod cohort;
pub mod dataset;
pub mod design;

pub use catalog::{CatalogEntry, GroupCode, ValueKind, VariableCatalog, GROUP_CODES, NONCREDIT_GROUP};
pub use cohort::{cohort_partition, Cohort, CohortPartition, CohortSpec};
pub use dataset::{ingest_panel, PanelDataset, PersonHistory, Snapshot, StateCode, US_STATES};
pub use design::{assemble_design, max_snapshots, ColumnMeta, DesignMatrix, DesignOptions};
