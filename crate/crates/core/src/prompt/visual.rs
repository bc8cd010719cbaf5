//! Deep visual prompts and the per-layer injection plan.

use std::collections::BTreeSet;

use crate::backbone::Injection;
use crate::error::{DptError, Result};
use crate::rng::DetRng;
use crate::tensor::Tensor;

/// Plain prompts per visual layer, plus the layers handed to the class-aware generator.
#[derive(Debug, Clone)]
pub struct VisualPromptStack {
    /// One entry per layer; `None` means no plain prompts there.
    pub prompts_per_layer: Vec<Option<Tensor>>,
    /// 0-based layers whose prompts come from the generator.
    pub cavpt_layers: BTreeSet<usize>,
}

impl VisualPromptStack {
    /// Draws `P × d` prompts from `N(0, std)` for layers `0..depth`, layer by
    /// layer, then clears the class-aware layers.
    ///
    /// Draws happen even for layers that are cleared so that the remaining
    /// prompts do not depend on where the generator sits.
    pub fn init(
        layers: usize,
        prompt_len: usize,
        width: usize,
        depth: usize,
        cavpt_layers: BTreeSet<usize>,
        std: f32,
        rng: &mut DetRng,
    ) -> Result<Self> {
        if depth > layers {
            return Err(DptError::Configuration(format!("prompt depth {depth} exceeds {layers} layers")));
        }
        if let Some(&bad) = cavpt_layers.iter().find(|&&l| l >= layers) {
            return Err(DptError::Configuration(format!(
                "class-aware layer {} outside 1..={layers}",
                bad + 1
            )));
        }
        let mut prompts_per_layer = Vec::with_capacity(layers);
        for l in 0..layers {
            let p = if prompt_len > 0 && l < depth {
                Some(Tensor::randn(&[prompt_len, width], std, rng)?.to_parameter())
            } else {
                None
            };
            prompts_per_layer.push(if cavpt_layers.contains(&l) { None } else { p });
        }
        Ok(Self { prompts_per_layer, cavpt_layers })
    }

    pub fn layers(&self) -> usize {
        self.prompts_per_layer.len()
    }

    /// Learnable plain prompts in layer order.
    pub fn parameters(&self) -> Vec<Tensor> {
        self.prompts_per_layer.iter().flatten().cloned().collect()
    }

    pub fn validate(&self) -> Result<()> {
        for &l in &self.cavpt_layers {
            match self.prompts_per_layer.get(l) {
                None => {
                    return Err(DptError::Configuration(format!(
                        "class-aware layer {} outside 1..={}",
                        l + 1,
                        self.layers()
                    )))
                }
                Some(Some(_)) => {
                    return Err(DptError::Configuration(format!(
                        "layer {} has both plain and class-aware prompts",
                        l + 1
                    )))
                }
                Some(None) => {}
            }
        }
        Ok(())
    }
}

/// Plain prompts below and around the generator layers, `Generated` at them.
///
/// With `cavpt_length == 0` the generator layers receive no prompts at all.
pub fn assemble_image_input(visual: &VisualPromptStack, cavpt_length: usize) -> Result<Vec<Injection>> {
    visual.validate()?;
    Ok(visual
        .prompts_per_layer
        .iter()
        .enumerate()
        .map(|(l, p)| {
            if visual.cavpt_layers.contains(&l) {
                if cavpt_length == 0 {
                    Injection::None
                } else {
                    Injection::Generated
                }
            } else {
                p.clone().map_or(Injection::None, Injection::Plain)
            }
        })
        .collect())
}
