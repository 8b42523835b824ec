//! Evaluation toolkit for visual SLAM and map merging: trajectory error
//! (ATE, RPE), map error (AME) under nearest-neighbor and trajectory-aware
//! ray-cast association, 2D overlap (IoU), ground-truth map construction by
//! depth back-projection, and a synthetic-scene harness.

pub mod align;
pub mod assoc;
pub mod error;
pub mod gtmap;
pub mod io;
pub mod metrics;
pub mod report;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use metrics::{evaluate, EvalInput, EvalOptions};
pub use report::MetricReport;
pub use types::*;
