//! Render engine for the boundary between trainable and untrainable
//! hyperparameters of a small MLP.
//!
//! Every pixel of a 2-D hyperparameter grid trains the same randomly
//! initialised network from scratch with plain gradient descent. The run is
//! classified as converged or diverged, coloured by an escape-time style
//! intensity, and the boundary between the two classes is measured by box
//! counting.

pub mod colorize;
pub mod conditions;
pub mod error;
pub mod formats;
pub mod fracdim;
pub mod model;
pub mod numerics;
pub mod readout;
pub mod renderer;
pub mod trainer;

pub use colorize::{colorize, RgbImage};
pub use conditions::{preset, AxisScale, AxisSpec, AxisTarget, ConditionConfig, ConditionId};
pub use error::{Error, Result};
pub use fracdim::{BoundaryMask, BoxCountResult};
pub use model::{build_problem, ModelConfig, Problem};
pub use numerics::Nonlinearity;
pub use renderer::{render_field, render_field_with, Field, RenderControl, Viewport, ZoomSpec};
pub use trainer::{train_run, RunClass, RunOutcome, TrainOptions};
