//! Temporal action detection as sub-graph localization.
//!
//! Videos are graphs of snippets. GCNeXt blocks aggregate context along
//! fixed temporal edges and dynamic k-nearest-neighbour semantic edges;
//! SGAlign turns every candidate anchor into a fixed-size sub-graph feature;
//! a small head scores anchors, and Soft-NMS produces detections.

pub mod data;
pub mod error;
pub mod eval;
pub mod gcnext;
pub mod graph;
pub mod head;
mod init;
pub mod model;
pub mod pipeline;
pub mod postprocess;
pub mod sgalign;
pub mod tensor;
pub mod train;

pub use data::{AnnotationSet, Dataset, FeatureSequence, InputMode, Window};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use graph::{Edge, VideoGraph};
pub use model::{Model, ModelConfig};
pub use postprocess::{Detection, DetectionFile, NmsMethod, PostConfig};
pub use sgalign::Anchor;
pub use tensor::Tensor;
pub use train::TrainConfig;
