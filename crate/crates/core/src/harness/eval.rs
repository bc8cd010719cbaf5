//! Accuracy, attention maps and the bounding-box focus statistic.

use std::path::Path;

use super::pnm::{write_pgm, GrayImage};
use super::synthetic::BoundingBox;
use crate::backbone::BackboneConfig;
use crate::error::{DptError, Result};
use crate::prompt::{PromptSet, PromptedModel};
use crate::tensor::Tensor;
use crate::trainer::{Example, FewShotTask};

/// Fraction of `examples` whose predicted class equals the label.
/// Class selection for the generator uses zero-shot ranking only.
pub fn accuracy(model: &PromptedModel<'_>, prompts: &PromptSet, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(DptError::Data("no images to evaluate".into()));
    }
    let learned = model.learned_class_features(prompts)?;
    let mut correct = 0usize;
    for ex in examples {
        if model.predict(&ex.image, prompts, &learned, None)? == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Accuracy on the task's query split.
pub fn evaluate(task: &FewShotTask, model: &PromptedModel<'_>, prompts: &PromptSet) -> Result<f64> {
    accuracy(model, prompts, &task.query)
}

/// Final-layer class-token attention over the patch grid, head-averaged, `N_p` values.
pub fn patch_attention(model: &PromptedModel<'_>, prompts: &PromptSet, image: &Tensor) -> Result<Vec<f32>> {
    let learned = model.learned_class_features(prompts)?;
    let fwd = model.encode(image, prompts, &learned, None, None)?;
    let enc = match fwd.encoding {
        Some(e) => e,
        None => model.weights.image_encode(image, &[], None)?,
    };
    Ok(enc.patch_attention())
}

/// Min-max scales a patch grid to `[0, 255]` and upsamples it to image size.
pub fn attention_image(grid: &[f32], config: &BackboneConfig) -> Result<GrayImage> {
    let g = config.grid();
    if grid.len() != g * g {
        return Err(DptError::Shape(format!("attention grid has {} cells, expected {}", grid.len(), g * g)));
    }
    let lo = grid.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = grid.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    let cells: Vec<u8> = grid
        .iter()
        .map(|&a| if span > 0.0 { ((a - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect();
    let (s, p) = (config.image_size, config.patch_size);
    let mut data = vec![0u8; s * s];
    for y in 0..s {
        for x in 0..s {
            data[y * s + x] = cells[(y / p) * g + x / p];
        }
    }
    Ok(GrayImage { width: s, height: s, data })
}

/// Writes the attention map of `image` as a binary greymap.
pub fn export_attention_map(
    model: &PromptedModel<'_>,
    prompts: &PromptSet,
    image: &Tensor,
    out_path: &Path,
) -> Result<GrayImage> {
    let img = attention_image(&patch_attention(model, prompts, image)?, &model.weights.config)?;
    write_pgm(out_path, &img)?;
    Ok(img)
}

/// Attention mass on the object ÷ total patch attention, each patch weighted
/// by the fraction of its area inside `bbox`.
pub fn attention_focus(grid: &[f32], bbox: &BoundingBox, config: &BackboneConfig) -> f64 {
    let (g, p) = (config.grid(), config.patch_size);
    let mut inside = 0.0f64;
    let mut total = 0.0f64;
    for (j, &a) in grid.iter().enumerate() {
        let (gy, gx) = (j / g, j % g);
        let cell = BoundingBox { x0: gx * p, y0: gy * p, x1: (gx + 1) * p, y1: (gy + 1) * p };
        let frac = cell.intersection(bbox) as f64 / cell.area() as f64;
        inside += a as f64 * frac;
        total += a as f64;
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

/// Mean focus over `examples`.
pub fn mean_focus(model: &PromptedModel<'_>, prompts: &PromptSet, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(DptError::Data("no images to score".into()));
    }
    let mut sum = 0.0;
    for ex in examples {
        sum += attention_focus(&patch_attention(model, prompts, &ex.image)?, &ex.bbox, &model.weights.config);
    }
    Ok(sum / examples.len() as f64)
}
