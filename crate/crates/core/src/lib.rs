//! Adaptive decision boundaries for open-set classification.
//!
//! The pipeline runs over fixed feature vectors:
//!
//! 1. [`data_io`] loads or generates an [`EmbeddedDataset`] and splits it into
//!    known classes and a held-out "open" class.
//! 2. [`representation`] pre-trains a dense rectifier layer plus softmax
//!    classifier on the known classes and re-embeds every record.
//! 3. [`boundary`] computes one centroid per known class and learns a
//!    spherical radius around it by minimizing the boundary loss.
//! 4. [`inference`] rejects anything outside every ball as open, otherwise
//!    assigns the nearest centroid. A max-softmax baseline lives alongside.
//! 5. [`evaluation`] tallies confusion matrices, macro-F1 and accuracy, and
//!    drives multi-run experiments and sensitivity sweeps.

pub mod adam;
pub mod boundary;
pub mod data_io;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod representation;
pub mod rng;

pub use boundary::{AdbModel, BoundaryParams, BoundaryTrainConfig, Centroids};
pub use data_io::{EmbeddedDataset, EmbeddingRecord, LabelMap, SplitResult, OPEN_LABEL};
pub use error::{AdbError, Result};
pub use evaluation::{ConfusionMatrix, ExperimentConfig, ExperimentReport, MetricsReport};
pub use inference::Prediction;
pub use representation::{RepTrainConfig, RepresentationModel};
