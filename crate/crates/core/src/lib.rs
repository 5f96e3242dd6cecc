//! Out-of-distribution detection for multivariate sequential observations.
//!
//! Every state dimension is summarized over a sliding window by two numbers,
//! the RBF similarity of the newest sample to the rest of its window and the
//! window mean. One isolation forest per dimension scores those descriptors,
//! and the per-dimension scores are averaged into a single anomaly score per
//! timestep. An optional CUSUM layer turns the score stream into alarms.

pub mod detector;
pub mod envgen;
pub mod episode;
pub mod error;
pub mod eval;
pub mod features;
pub mod iforest;
pub mod suite;

pub use detector::{
    cusum::{CusumParams, CusumState},
    DetectorConfig, DetectorModel, ScoreSeries,
};
pub use episode::{labels_from_onset, partition_windows, window_at, EpisodeMatrix, LabelSeries, Window};
pub use error::{Error, Result};
pub use features::{extract_features, rbf_distance, rbf_similarity, Descriptor, FeatureVector, KernelParams, Variant};
pub use iforest::{c_factor, ForestConfig, IsolationForest, IsolationTree};
