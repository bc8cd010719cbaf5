//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

pub mod ops;
pub mod shadow;

use std::sync::OnceLock;

use dmpt::backbone::{BackboneConfig, DualEncoderWeights, Vocabulary};
use dmpt::harness::synthetic::{generate, Dataset, SyntheticSpec};
use dmpt::trainer::{sample_few_shot, FewShotTask};

pub fn weights() -> &'static DualEncoderWeights {
    static W: OnceLock<DualEncoderWeights> = OnceLock::new();
    W.get_or_init(|| DualEncoderWeights::init(&BackboneConfig::default()).unwrap())
}

pub fn dataset(samples_per_class: usize) -> Dataset {
    generate(&SyntheticSpec { samples_per_class, ..Default::default() }, 0).unwrap()
}

/// Default 4-class task with `shots` support images per class.
pub fn task(shots: usize, seed: u64) -> FewShotTask {
    sample_few_shot(&dataset(shots + 8), shots, seed).unwrap()
}

use std::collections::BTreeSet;

pub use dmpt::prompt::PromptLayout;
use dmpt::prompt::{PromptSet, PromptedModel, Variant};
use dmpt::trainer::{Example, TrainSettings};

/// Default layout for the shared backbone.
pub fn layout(variant: Variant, seed: u64) -> PromptLayout {
    PromptLayout { seed, ..PromptLayout::defaults(variant, weights().config.visual_layers) }
}

pub fn prompt_set(layout: &PromptLayout, class_names: &[String]) -> PromptSet {
    PromptSet::init(layout, weights(), &VOCAB, class_names).unwrap()
}

pub static VOCAB: std::sync::LazyLock<Vocabulary> = std::sync::LazyLock::new(Vocabulary::standard);

pub fn model(class_names: &[String]) -> PromptedModel<'static> {
    PromptedModel::new(weights(), &VOCAB, class_names).unwrap()
}

/// Flattened main-prediction logits for each image.
pub fn logits(model: &PromptedModel<'_>, prompts: &PromptSet, images: &[Example]) -> Vec<Vec<f32>> {
    let learned = model.learned_class_features(prompts).unwrap();
    images.iter().map(|e| model.logits(&e.image, prompts, &learned, None).unwrap().to_vec()).collect()
}

pub fn no_layers() -> BTreeSet<usize> {
    BTreeSet::new()
}

/// Short schedule used by loop-level tests.
pub fn settings(epochs: usize, seed: u64) -> TrainSettings {
    TrainSettings {
        epochs,
        batch_size: 8,
        alpha: 0.3,
        beta: 0.1,
        warmup_epochs: epochs / 2,
        lr_text: 1e-2,
        lr_visual: 1e-2,
        fixed_warmup_lr: 1e-5,
        fixed_warmup_epochs: 1,
        seed,
    }
}

/// Bit patterns, so `-0.0` and NaN payloads count as differences.
pub fn bits(v: &[Vec<f32>]) -> Vec<Vec<u32>> {
    v.iter().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect()
}

/// Exhaustive-sort reference for top-K_N selection: full stable sort by
/// descending score (ascending index on ties), truncate, then force the label.
pub fn topk_oracle(scores: &[f32], k_n: usize, label: Option<usize>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k_n.min(scores.len()));
    if let Some(l) = label {
        if !order.contains(&l) {
            *order.last_mut().unwrap() = l;
        }
    }
    order
}

/// Random score vectors drawn from a handful of levels so ties are common.
pub struct TopkTrial {
    pub scores: Vec<f32>,
    pub k_n: usize,
    pub label: Option<usize>,
}

pub fn topk_trials(count: usize, seed: u64) -> Vec<TopkTrial> {
    use rand::Rng;
    let mut rng = dmpt::rng::seeded(seed);
    (0..count)
        .map(|i| {
            let k = rng.random_range(1..=24);
            let levels = if i % 2 == 0 { rng.random_range(1..=4) } else { 1000 };
            let scores = (0..k).map(|_| rng.random_range(0..levels) as f32 * 0.25 - 1.0).collect();
            let k_n = rng.random_range(1..=k + 2);
            let label = rng.random_bool(0.5).then(|| rng.random_range(0..k));
            TopkTrial { scores, k_n, label }
        })
        .collect()
}

pub fn has_tie(scores: &[f32]) -> bool {
    scores.iter().enumerate().any(|(i, a)| scores[..i].contains(a))
}
