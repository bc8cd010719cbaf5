//! Learnable text context shared by every class sentence.

use crate::backbone::{DualEncoderWeights, TokenSequence, Vocabulary};
use crate::error::{DptError, Result};
use crate::rng::DetRng;
use crate::tensor::Tensor;

/// `u₁…u_M` plus the frozen word embeddings of the task's class names.
#[derive(Debug, Clone)]
pub struct TextPromptContext {
    /// Learnable `[M × d_text]`.
    pub context: Tensor,
    /// Frozen `[K × d_text]` rows of the token table.
    pub class_token_embeddings: Tensor,
    pub class_names: Vec<String>,
    class_token_ids: Vec<usize>,
}

/// A class sentence plus the context rows that replace its `X` slots.
#[derive(Debug, Clone)]
pub struct PromptedSequence {
    pub sequence: TokenSequence,
    pub context: Tensor,
}

impl TextPromptContext {
    /// Context drawn from `N(0, std)`.
    pub fn init(
        weights: &DualEncoderWeights,
        vocab: &Vocabulary,
        class_names: &[String],
        context_len: usize,
        std: f32,
        rng: &mut DetRng,
    ) -> Result<Self> {
        if context_len == 0 {
            return Err(DptError::Configuration("context length M must be at least 1".into()));
        }
        let context = Tensor::randn(&[context_len, weights.config.d_text], std, rng)?.to_parameter();
        Self::with_context(weights, vocab, class_names, context)
    }

    /// Context initialised from the template words, so the learned sentence
    /// starts out identical to the hand-crafted one.
    pub fn from_template(weights: &DualEncoderWeights, vocab: &Vocabulary, class_names: &[String]) -> Result<Self> {
        let ids = vocab.template_context_ids()?;
        let context = weights.token_embed.gather_rows(&ids)?.detach().to_parameter();
        Self::with_context(weights, vocab, class_names, context)
    }

    /// Wraps an existing context tensor; it is marked learnable.
    pub fn with_context(
        weights: &DualEncoderWeights,
        vocab: &Vocabulary,
        class_names: &[String],
        context: Tensor,
    ) -> Result<Self> {
        let dt = weights.config.d_text;
        if context.shape().len() != 2 || context.cols() != dt || context.rows() == 0 {
            return Err(DptError::Shape(format!("context must be [M × {dt}], got {:?}", context.shape())));
        }
        let class_token_ids = class_names.iter().map(|c| vocab.id(c)).collect::<Result<Vec<_>>>()?;
        let context = if context.requires_grad() { context } else { context.to_parameter() };
        Ok(Self {
            context,
            class_token_embeddings: weights.token_embed.gather_rows(&class_token_ids)?,
            class_names: class_names.to_vec(),
            class_token_ids,
        })
    }

    pub fn context_len(&self) -> usize {
        self.context.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_token_ids(&self) -> &[usize] {
        &self.class_token_ids
    }
}

/// One sentence `{u₁…u_M, cᵢ}` per requested class, all sharing one context.
pub fn build_text_prompts(
    ctx: &TextPromptContext,
    vocab: &Vocabulary,
    class_ids: &[usize],
) -> Result<Vec<PromptedSequence>> {
    class_ids
        .iter()
        .map(|&c| {
            let name = ctx.class_names.get(c).ok_or_else(|| {
                DptError::Vocabulary(format!("class id {c} unknown; task has {} classes", ctx.class_names.len()))
            })?;
            Ok(PromptedSequence {
                sequence: vocab.prompt_sequence(name, ctx.context_len())?,
                context: ctx.context.clone(),
            })
        })
        .collect()
}

/// `[K × D]` learned class features `g(tᵢ)`.
pub fn text_prompt_features(weights: &DualEncoderWeights, vocab: &Vocabulary, ctx: &TextPromptContext) -> Result<Tensor> {
    let ids: Vec<usize> = (0..ctx.num_classes()).collect();
    let prompts = build_text_prompts(ctx, vocab, &ids)?;
    let seqs: Vec<TokenSequence> = prompts.into_iter().map(|p| p.sequence).collect();
    weights.text_features(&seqs, Some(&ctx.context))
}

/// `[K × D]` hand-crafted template features, the zero-shot classifier.
pub fn template_features(weights: &DualEncoderWeights, vocab: &Vocabulary, class_names: &[String]) -> Result<Tensor> {
    let seqs = class_names
        .iter()
        .map(|c| vocab.template_sequence(c))
        .collect::<Result<Vec<_>>>()?;
    weights.text_features(&seqs, None)
}
