//! Lane-change gap and duration analysis for naturalistic truck driving data.
//!
//! The crate is organised as a pipeline:
//!
//! - [`trace`]: driving traces, camera intrinsics and the trace file format.
//! - [`synth`]: synthetic trips with planted lane changes and exact ground truth.
//! - [`extraction`]: lane-change detection, context filtering, MLC/DLC
//!   classification and head/cross/tail segmentation.
//! - [`gap`]: monocular range and range-rate estimation from five annotated
//!   points per rear-camera frame.
//! - [`stats`]: GEV distribution and maximum-likelihood fitting, the
//!   Mann-Whitney-Wilcoxon test and the Kolmogorov-Smirnov statistic.
//! - [`risk`]: time-to-collision, fast-approach-zone filtering, risk
//!   fractions, histograms and duration comparisons.
//! - [`scenario`]: fitted behavior models and a cut-in scenario sampler.
//!
//! Corpus-level work (per-trip extraction, per-event estimation, Monte Carlo
//! replications, scenario batches) runs through [`par`], which uses rayon when
//! the `parallel` feature is enabled and falls back to plain iterators
//! otherwise.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod config;
pub mod extraction;
pub mod gap;
pub mod par;
pub mod risk;
pub mod scenario;
pub mod stats;
pub mod synth;
pub mod trace;

pub mod jsonl;

pub use config::PipelineConfig;
pub use extraction::{Classification, Direction, LaneChangeEvent, StageTiming};
pub use gap::{FrameSet, GapEstimate, RangeRateMode};
pub use par::Execution;
pub use risk::RiskReport;
pub use scenario::{BehaviorModel, ScenarioSpec};
pub use stats::{GevParams, MwwResult};
pub use trace::{CameraIntrinsics, TraceSample, Trip};
