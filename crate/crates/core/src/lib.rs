//! Instance counting in dense point clouds from per-view 2D instance masks.
//!
//! The crop cloud is split into superclusters (DBSCAN) and then
//! subclusters (k-means). Each subcluster is splatted into every view and
//! scored for visibility and mask consistency; scores become signed
//! pairwise affinities, and label propagation on the affinity graph merges
//! subclusters into instances.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
mod grid;
pub mod io;
pub mod merging;
pub mod metrics;
pub mod partition;
pub mod pipeline;
pub mod projection;
pub mod scene;
pub mod scoring;
pub mod synth;

pub use config::{PipelineConfig, SuperclusterMode};
pub use error::{Error, Result};
pub use merging::{CountReport, InstanceLabeling, MergeVariant};
pub use metrics::{evaluate, EvalResult};
pub use pipeline::{run_pipeline, PipelineRun, SegmentReport};
pub use scene::{CameraView, Dataset, InstanceMask, PointCloud, View};
