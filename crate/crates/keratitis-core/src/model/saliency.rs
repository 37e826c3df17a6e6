//! Input-gradient saliency maps.

use alloc::vec::Vec;

use crate::data::{Case, InfectionTask, Payload};
use crate::error::{Error, Result};
use crate::image::normalize_zscore;
use crate::model::net::{Inputs, TrunkKind, Variant};
use crate::model::train::FittedModel;

/// Per-pixel saliency, max-normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    /// Row-major `[height, width]` values.
    pub data: Vec<f64>,
}

/// Absolute input gradient of the selected task's score for one image case,
/// reduced over channels by the maximum and normalized so the largest value
/// is exactly 1 (all-zero gradients stay all-zero).
pub fn saliency_map(
    fitted: &FittedModel,
    case: &Case,
    task: InfectionTask,
) -> Result<SaliencyMap> {
    let img = match &case.payload {
        Payload::Image(img) => img,
        Payload::Features(_) => {
            return Err(Error::UnsupportedMode(
                "saliency maps require an image payload".into(),
            ))
        }
    };
    let config = fitted.model.config();
    let size = match config.trunk {
        TrunkKind::TinyConv { image_size } => image_size,
        TrunkKind::Linear { .. } => {
            return Err(Error::UnsupportedMode(
                "saliency maps require an image-mode model".into(),
            ))
        }
    };
    let output_index = match config.variant {
        Variant::MultitaskV1 | Variant::MultitaskV2 => task.index(),
        Variant::SingleTask(own) if own == task => 0,
        v => {
            return Err(Error::Argument(alloc::format!(
                "model {} does not score task {}",
                v.name(),
                task.name()
            )))
        }
    };
    if img.height() != size || img.width() != size {
        return Err(Error::ShapeMismatch(alloc::format!(
            "case image is {}x{}, model expects {size}x{size}",
            img.height(),
            img.width()
        )));
    }

    let prepared = normalize_zscore(img);
    let mut planar = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                planar.push(prepared.get(y, x, c));
            }
        }
    }
    let inputs = Inputs::Images {
        n: 1,
        size,
        planar,
    };
    let grad = fitted.model.output_input_gradient(
        &fitted.params,
        &fitted.norm,
        &inputs,
        output_index,
    )?;

    // channel reduction by max magnitude, then max-normalization
    let mut data = Vec::with_capacity(size * size);
    let plane = size * size;
    let mut max = 0.0f64;
    for y in 0..size {
        for x in 0..size {
            let mut m = 0.0f64;
            for c in 0..3 {
                let g = grad[c * plane + y * size + x].abs();
                if g > m {
                    m = g;
                }
            }
            if m > max {
                max = m;
            }
            data.push(m);
        }
    }
    if max > 0.0 {
        for v in data.iter_mut() {
            *v /= max;
        }
    }
    Ok(SaliencyMap {
        height: size,
        width: size,
        data,
    })
}
