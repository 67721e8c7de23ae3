//! Gaze model variants: backbones, fusion wiring, regression head, and
//! checkpoint serialisation.

pub mod backbone;
pub mod checkpoint;
pub mod network;
pub mod spec;

pub use backbone::Backbone;
pub use checkpoint::{stored_precision, Checkpoint, OptimizerState};
pub use network::{GazeModel, InputGrads, ModelInput};
pub use spec::{
    Aggregation, ModelSpec, Preset, Variant, COORD_FEATURES, POSE_FEATURES, RESOLUTIONS,
};
