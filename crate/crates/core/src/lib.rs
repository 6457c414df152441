//! Joint object detection and azimuth estimation on synthetic data.
//!
//! Small feed-forward networks are trained with one of five output heads —
//! discretized pose classification, continuous circle regression, or a joint
//! classification + regression head in three layouts — and evaluated with
//! exact Average Precision / Average Viewpoint Precision, all at desk scale.

pub mod data;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod nnet;
pub mod plot;
pub mod textio;

pub use data::{BatchPlan, Sample, World, WorldSpec};
pub use geometry::{Azimuth, BinIndex, CirclePoint3};
pub use harness::{ExperimentConfig, Representation, TrainingTrace};
pub use losses::{LossHyper, Norm};
pub use metrics::{BoundingBox, Detection, GroundTruth, PRCurve};
pub use nnet::{Activation, GradCheckReport, Network, OptimizerState};
