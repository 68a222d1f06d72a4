//! Uncertainty-aware radiance field: MLP field, stratified and depth-guided
//! sampling, volume rendering that carries separate color and depth
//! Gaussians, and the rendering losses.

pub mod field;
pub mod loss;
pub mod render;
pub mod sampling;
pub mod train;

pub use field::{positional_encode, FieldArch, FieldOutput, EPS_VAR};
pub use loss::{
    loss_color_tape, loss_color_tape_with_factor, loss_depth_tape, loss_overall,
    reference_color_nll,
};
pub use render::{
    render_ray, render_rays_tape, render_view, GaussianPixel, RayBatchVars, RaySampleSet,
    ViewMaps,
};
pub use sampling::{depth_guided_sample, eval_centers, stratified_sample};
pub use train::{train_unerf, TrainLogRow, UnerfConfig};

use crate::diff::{DiffError, ParamSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NerfError {
    #[error("non-finite field output in ray composition")]
    NonFinite,
    #[error("ray samples must be >= 2 and strictly increasing")]
    BadSamples,
    #[error("every ray in the depth batch is masked out")]
    EmptyDepthBatch,
    #[error("need at least 2 training views, got {0}")]
    TooFewViews(usize),
    #[error("training diverged at step {step}; last good parameters attached")]
    Diverged {
        step: usize,
        last_good: Box<ParamSet>,
    },
    #[error(transparent)]
    Diff(#[from] DiffError),
}
