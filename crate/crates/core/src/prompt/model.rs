//! Forward pass of a prompt set over the frozen dual encoder.

use crate::backbone::{cosine_logits, zero_shot_logits, DualEncoderWeights, ImageEncoding, Injection, Vocabulary};
use crate::error::Result;
use crate::tensor::Tensor;

use super::cavpt::{CavptOutput, CavptProvider};
use super::selection::{select_top_scores, ClassSelection};
use super::text::{template_features, text_prompt_features};
use super::{PromptSet, Variant};

/// Frozen backbone bound to one task's classes.
#[derive(Debug, Clone)]
pub struct PromptedModel<'a> {
    pub weights: &'a DualEncoderWeights,
    pub vocab: &'a Vocabulary,
    pub class_names: Vec<String>,
    /// Hand-crafted `[K × D]` classifier, computed once.
    pub template_features: Tensor,
}

/// One image through the (possibly prompted) image tower.
#[derive(Debug, Clone)]
pub struct ImageForward {
    /// Unit-norm `[1 × D]` feature used for the main prediction.
    pub feature: Tensor,
    /// Absent when the feature was taken from a cached prompt-free pass.
    pub encoding: Option<ImageEncoding>,
    pub selection: Option<ClassSelection>,
    /// `(layer, output)` per generator call.
    pub cavpt: Vec<(usize, CavptOutput)>,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl<'a> PromptedModel<'a> {
    pub fn new(weights: &'a DualEncoderWeights, vocab: &'a Vocabulary, class_names: &[String]) -> Result<Self> {
        Ok(Self {
            weights,
            vocab,
            class_names: class_names.to_vec(),
            template_features: template_features(weights, vocab, class_names)?,
        })
    }

    pub fn temperature(&self) -> f32 {
        self.weights.config.temperature
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Prompt-free feature `x` of the untouched encoder.
    pub fn plain_feature(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.weights.image_encode(image, &[], None)?.feature)
    }

    /// Learned `g(tᵢ)` when the set carries a text context, else the template features.
    pub fn learned_class_features(&self, prompts: &PromptSet) -> Result<Tensor> {
        match &prompts.text {
            Some(ctx) => text_prompt_features(self.weights, self.vocab, ctx),
            None => Ok(self.template_features.clone()),
        }
    }

    /// Classifier used for the variant's main prediction.
    pub fn classifier(&self, prompts: &PromptSet, learned: &Tensor) -> Tensor {
        match prompts.variant {
            Variant::ZeroShot | Variant::Vpt => self.template_features.clone(),
            _ => learned.clone(),
        }
    }

    /// Encodes one image under the set's injection plan.
    ///
    /// `plain` may supply a cached prompt-free feature; it ranks classes for the
    /// generator and stands in for the whole pass when the plan is empty.
    /// `label`, during training, is forced into the class selection.
    pub fn encode(
        &self,
        image: &Tensor,
        prompts: &PromptSet,
        learned: &Tensor,
        plain: Option<&Tensor>,
        label: Option<usize>,
    ) -> Result<ImageForward> {
        let plan = prompts.plan()?;
        let prompt_free = plan.iter().all(|i| matches!(i, Injection::None));
        if prompt_free {
            if let Some(x) = plain {
                return Ok(ImageForward { feature: x.clone(), encoding: None, selection: None, cavpt: Vec::new() });
            }
            let enc = self.weights.image_encode(image, &plan, None)?;
            return Ok(ImageForward { feature: enc.feature.clone(), encoding: Some(enc), selection: None, cavpt: Vec::new() });
        }
        match (&prompts.cavpt, prompts.generator_active()) {
            (Some(gens), true) => {
                let x = match plain {
                    Some(x) => x.clone(),
                    None => self.plain_feature(image)?,
                };
                let scores = zero_shot_logits(&x, &self.template_features, self.temperature())?;
                let selection = select_top_scores(&scores.to_vec(), prompts.k_n, label)?;
                let g = learned.gather_rows(&selection.indices)?;
                let mut provider = CavptProvider::new(gens, &selection, g);
                let enc = self.weights.image_encode(image, &plan, Some(&mut provider))?;
                let cavpt = provider.outputs;
                Ok(ImageForward { feature: enc.feature.clone(), encoding: Some(enc), selection: Some(selection), cavpt })
            }
            _ => {
                let enc = self.weights.image_encode(image, &plan, None)?;
                Ok(ImageForward { feature: enc.feature.clone(), encoding: Some(enc), selection: None, cavpt: Vec::new() })
            }
        }
    }

    /// `[1 × K]` main-prediction logits for one image, no label injection.
    pub fn logits(&self, image: &Tensor, prompts: &PromptSet, learned: &Tensor, plain: Option<&Tensor>) -> Result<Tensor> {
        let fwd = self.encode(image, prompts, learned, plain, None)?;
        cosine_logits(&fwd.feature, &self.classifier(prompts, learned), self.temperature())
    }

    pub fn predict(&self, image: &Tensor, prompts: &PromptSet, learned: &Tensor, plain: Option<&Tensor>) -> Result<usize> {
        Ok(argmax(&self.logits(image, prompts, learned, plain)?.to_vec()))
    }
}
