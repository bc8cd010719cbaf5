//! Objective terms for one batch.

use crate::backbone::cosine_logits;
use crate::error::{DptError, Result};
use crate::prompt::{cavpt_aux_logits, ImageForward, PromptSet, PromptedModel, Variant};
use crate::tensor::{concat_rows, cross_entropy, Tensor};

use super::task::Example;

/// Which objective a step optimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Knowledge-guided composite objective.
    Warmup,
    Main,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Main => "main",
        }
    }
}

/// Scalar components of one step's objective. Terms unused in the phase are 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub phase: Phase,
    pub l_ce: f32,
    pub l_ca: f32,
    pub l_coop: f32,
    pub l_vpt: f32,
    pub total: f32,
}

impl LossReport {
    /// The configured combination recomputed from the components in f64.
    pub fn recombined(&self, alpha: f32, beta: f32) -> f64 {
        let (a, b) = (alpha as f64, beta as f64);
        match self.phase {
            Phase::Main => self.l_ce as f64 + a * self.l_ca as f64,
            Phase::Warmup => self.l_coop as f64 + self.l_vpt as f64 + b * self.l_ce as f64 + a * self.l_ca as f64,
        }
    }
}

/// Forward results for a batch, shared by every loss term.
pub struct BatchForward {
    pub labels: Vec<usize>,
    /// Prompted features `[B × D]`.
    pub features: Tensor,
    /// Prompt-free features `[B × D]`, constant.
    pub plain: Tensor,
    /// Learned class features `[K × D]` (template features without a context).
    pub learned: Tensor,
    pub images: Vec<ImageForward>,
}

impl BatchForward {
    /// Runs every image in `batch`. `plain` may hold cached prompt-free features
    /// aligned with `batch`. With `inject_labels` the ground truth is forced
    /// into each class selection.
    pub fn run(
        model: &PromptedModel<'_>,
        prompts: &PromptSet,
        batch: &[&Example],
        plain: Option<&[Tensor]>,
        inject_labels: bool,
    ) -> Result<Self> {
        if batch.is_empty() {
            return Err(DptError::Data("empty batch".into()));
        }
        let learned = model.learned_class_features(prompts)?;
        let mut images = Vec::with_capacity(batch.len());
        let mut plains = Vec::with_capacity(batch.len());
        for (i, ex) in batch.iter().enumerate() {
            let x = match plain {
                Some(p) => p[i].clone(),
                None => model.plain_feature(&ex.image)?,
            };
            let label = inject_labels.then_some(ex.label);
            images.push(model.encode(&ex.image, prompts, &learned, Some(&x), label)?);
            plains.push(x);
        }
        let features = concat_rows(&images.iter().map(|f| f.feature.clone()).collect::<Vec<_>>())?;
        Ok(Self {
            labels: batch.iter().map(|e| e.label).collect(),
            features,
            plain: concat_rows(&plains)?,
            learned,
            images,
        })
    }

    /// Cross entropy of the variant's main prediction.
    pub fn loss_main(&self, model: &PromptedModel<'_>, prompts: &PromptSet) -> Result<Tensor> {
        let logits = cosine_logits(&self.features, &model.classifier(prompts, &self.learned), model.temperature())?;
        cross_entropy(&logits, &self.labels)
    }

    /// Auxiliary K-way loss, averaged over images and generator layers.
    /// Zero when the generator emits no prompts.
    pub fn loss_ca(&self, prompts: &PromptSet) -> Result<Tensor> {
        if prompts.variant != Variant::Dpt {
            return Err(DptError::Contract(format!(
                "auxiliary loss needs class-aware prompts, variant is {}",
                prompts.variant
            )));
        }
        let Some(gens) = &prompts.cavpt else {
            return Ok(Tensor::scalar(0.0));
        };
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (img, &label) in self.images.iter().zip(&self.labels) {
            let Some(sel) = &img.selection else { continue };
            for (layer, out) in &img.cavpt {
                rows.push(cavpt_aux_logits(out, sel, label, gens.for_layer(*layer)?, prompts.aux_input)?);
                targets.push(label);
            }
        }
        if rows.is_empty() {
            return Ok(Tensor::scalar(0.0));
        }
        cross_entropy(&concat_rows(&rows)?, &targets)
    }

    /// Learned-text prediction on the prompt-free feature.
    pub fn loss_coop(&self, model: &PromptedModel<'_>) -> Result<Tensor> {
        let logits = cosine_logits(&self.plain, &self.learned, model.temperature())?;
        cross_entropy(&logits, &self.labels)
    }

    /// Template-classifier prediction on the prompted feature.
    pub fn loss_vpt(&self, model: &PromptedModel<'_>) -> Result<Tensor> {
        let logits = cosine_logits(&self.features, &model.template_features, model.temperature())?;
        cross_entropy(&logits, &self.labels)
    }
}

/// `l_ce + α·l_ca`
pub fn loss_total(l_ce: &Tensor, l_ca: &Tensor, alpha: f32) -> Result<Tensor> {
    l_ce.add(&l_ca.scale(alpha))
}

/// `l_coop + l_vpt + β·l_ce + α·l_ca`
pub fn warmup_loss(l_coop: &Tensor, l_vpt: &Tensor, l_ce: &Tensor, l_ca: &Tensor, alpha: f32, beta: f32) -> Result<Tensor> {
    l_coop.add(l_vpt)?.add(&l_ce.scale(beta))?.add(&l_ca.scale(alpha))
}

/// Main loss for a batch, computed as during training.
pub fn loss_main(model: &PromptedModel<'_>, prompts: &PromptSet, batch: &[&Example]) -> Result<Tensor> {
    BatchForward::run(model, prompts, batch, None, true)?.loss_main(model, prompts)
}

/// Auxiliary loss for a batch, computed as during training.
pub fn loss_ca(model: &PromptedModel<'_>, prompts: &PromptSet, batch: &[&Example]) -> Result<Tensor> {
    BatchForward::run(model, prompts, batch, None, true)?.loss_ca(prompts)
}

/// Assembles the phase's objective; returns the differentiable total and its report.
pub fn objective(
    fwd: &BatchForward,
    model: &PromptedModel<'_>,
    prompts: &PromptSet,
    phase: Phase,
    alpha: f32,
    beta: f32,
) -> Result<(Tensor, LossReport)> {
    let zero = Tensor::scalar(0.0);
    let l_ce = fwd.loss_main(model, prompts)?;
    let l_ca = if prompts.variant == Variant::Dpt { fwd.loss_ca(prompts)? } else { zero.clone() };
    let (total, l_coop, l_vpt) = match phase {
        Phase::Main => (loss_total(&l_ce, &l_ca, alpha)?, zero.clone(), zero),
        Phase::Warmup => {
            let l_coop = fwd.loss_coop(model)?;
            let l_vpt = fwd.loss_vpt(model)?;
            (warmup_loss(&l_coop, &l_vpt, &l_ce, &l_ca, alpha, beta)?, l_coop, l_vpt)
        }
    };
    let report = LossReport {
        phase,
        l_ce: l_ce.item(),
        l_ca: l_ca.item(),
        l_coop: l_coop.item(),
        l_vpt: l_vpt.item(),
        total: total.item(),
    };
    Ok((total, report))
}
