//! Unsupervised online video object segmentation.
//!
//! Moving objects are found by combining salient motion (minimum barrier
//! distance on optical flow), generic object proposals, forward propagation
//! of earlier masks along the flow, and a color graph-cut refinement. Every
//! frame is segmented using only that frame and the ones before it.

pub mod crf;
pub mod error;
pub mod evaluation;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod mask_ops;
pub mod model;
pub mod objectness;
pub mod pipeline;
pub mod propagation;
pub mod saliency;

pub use error::{Error, Result};
pub use model::{BinaryMask, FlowField, Frame, PipelineConfig, SaliencySource, ScalarMap};
pub use pipeline::{run_pipeline, DatasetLayout, Pipeline, RunOptions, StageSelection};
