//! Desk-scale frozen CLIP-style dual encoder: a ViT image tower with
//! prompt-injection hooks and a causal transformer text tower.

mod config;
mod encoder;
mod vocab;
mod weights;

pub use config::{BackboneConfig, LinearInit, LN_EPS};
pub use encoder::{
    cosine_logits, transformer_layer_forward, zero_shot_logits, ImageEncoding, Injection, LayerOutput,
    PromptGenerator,
};
pub use vocab::{class_word, TokenSequence, Vocabulary, CONTEXT_TOKEN, END_TOKEN, START_TOKEN, TEMPLATE};
pub use weights::{BlockWeights, DualEncoderWeights};
