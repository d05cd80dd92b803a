//! One-class anomaly detection for steel surface inspection.
//!
//! The pipeline has four stages:
//!
//! 1. [`imgrid`] cuts raw inspection images into square unit tiles and
//!    [`nets`] classifies each tile (normal, defect families, background).
//! 2. A U-Net style generator is trained adversarially against a patch
//!    discriminator on normal tiles only ([`trainer`]). The discriminator's
//!    final convolution activation is the tile's feature vector.
//! 3. A ν-one-class SVM ([`ocsvm`]) is fit on normal features; its decision
//!    value is normalised against calibrated extremes into an anomaly score.
//! 4. [`anomap`] multiplies the anomalous class mass by the anomaly score per
//!    tile and renders the resulting grid as a jet heatmap.
//!
//! [`tensorcore`] is the small reverse-mode autodiff engine behind the
//! networks, [`metrics`] computes confusion-matrix statistics and
//! [`synthdata`] generates a labelled synthetic corpus.

pub mod anomap;
pub mod error;
pub mod imgrid;
pub mod io;
pub mod metrics;
pub mod nets;
pub mod ocsvm;
pub mod synthdata;
pub mod tensorcore;
pub mod trainer;

pub use error::{Error, Result};
pub use imgrid::{RawImage, TileGrid, TilePolicy, UnitImage};
pub use metrics::ConfusionMatrix;
pub use nets::{ClassCatalog, ClassProbs, FeatureVector, NetConfig, Preset};
pub use ocsvm::{AnomalyScore, OcsvmModel};
pub use tensorcore::{Mode, Network, Tensor};
