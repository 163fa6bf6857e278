//! Test-time augmentation and attention rollout.

mod rollout;
mod tta;

pub use rollout::{attention_rollout, augmented_layer, render_rollout, write_grid_csv, RolloutMap, ROLLOUT_ALPHA};
pub use tta::{predict, prepare_input, softmax_rows, tta_predict, tta_views, TtaResult, TtaView, TTA_CONTRAST};

use crate::error::Result;
use crate::imaging::ImageU8;
use crate::scalar::Scalar;
use crate::vit::{forward, Mode, ViTParams};

/// Rollout heatmap of one image under `params`.
pub fn rollout_for_image<T: Scalar>(params: &ViTParams<T>, img: &ImageU8) -> Result<RolloutMap> {
    let input = prepare_input::<T>(img, params.config())?;
    let (_, traces) = forward(params, &input, Mode::Eval, true, None)?;
    let trace = traces.and_then(|t| t.into_iter().next()).expect("attention was captured");
    attention_rollout(&trace)
}
