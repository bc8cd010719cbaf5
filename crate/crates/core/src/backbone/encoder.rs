//! Forward passes of the image and text towers.
//!
//! The image tower runs a ViT over `[class token, prompts, patches]`. Prompt
//! rows are inserted fresh before every layer and their outputs are dropped
//! right after it, so only the class token and patch rows carry state from
//! one layer to the next.

use super::config::LN_EPS;
use super::vocab::TokenSequence;
use super::weights::{BlockWeights, DualEncoderWeights};
use crate::error::{DptError, Result};
use crate::tensor::{concat_cols, concat_rows, Tensor};

/// Output of one transformer block.
#[derive(Debug, Clone)]
pub struct LayerOutput {
    pub output: Tensor,
    /// One `[n × n]` attention matrix per head.
    pub attention: Vec<Tensor>,
}

/// Pre-LN block: multi-head self-attention and a GELU MLP, each with a residual.
pub fn transformer_layer_forward(
    input: &Tensor,
    w: &BlockWeights,
    heads: usize,
    mask: Option<&Tensor>,
) -> Result<LayerOutput> {
    let d = input.cols();
    if input.shape().len() != 2 {
        return Err(DptError::Shape(format!("layer input must be [n × d], got {:?}", input.shape())));
    }
    if d % heads != 0 {
        return Err(DptError::Parameter(format!("width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();

    let h = input.layer_norm(&w.ln1_gain, &w.ln1_bias, LN_EPS)?;
    let qkv = h.matmul(&w.qkv_weight)?.add_row(&w.qkv_bias)?;
    let mut head_out = Vec::with_capacity(heads);
    let mut attention = Vec::with_capacity(heads);
    for i in 0..heads {
        let q = qkv.slice_cols(i * dh, dh)?;
        let k = qkv.slice_cols(d + i * dh, dh)?;
        let v = qkv.slice_cols(2 * d + i * dh, dh)?;
        let mut scores = q.matmul_t(&k)?.scale(scale);
        if let Some(m) = mask {
            scores = scores.add(m)?;
        }
        let a = scores.softmax(1.0)?;
        head_out.push(a.matmul(&v)?);
        attention.push(a);
    }
    let attn = concat_cols(&head_out)?.matmul(&w.out_weight)?.add_row(&w.out_bias)?;
    let x = input.add(&attn)?;

    let h = x.layer_norm(&w.ln2_gain, &w.ln2_bias, LN_EPS)?;
    let mlp = h
        .matmul(&w.fc1_weight)?
        .add_row(&w.fc1_bias)?
        .gelu()
        .matmul(&w.fc2_weight)?
        .add_row(&w.fc2_bias)?;
    Ok(LayerOutput {
        output: x.add(&mlp)?,
        attention,
    })
}

/// What a visual layer receives in its prompt slots.
#[derive(Debug, Clone, Default)]
pub enum Injection {
    #[default]
    None,
    /// Learned prompts `[P × d]`.
    Plain(Tensor),
    /// Prompts produced at run time from the layer's own inputs.
    Generated,
}

/// Produces prompts for [`Injection::Generated`] layers.
pub trait PromptGenerator {
    /// `layer_inputs` is the `[1 + N_p, d]` state arriving at `layer`.
    /// Returning `None` leaves the layer without prompts.
    fn generate(&mut self, layer: usize, layer_inputs: &Tensor) -> Result<Option<Tensor>>;
}

#[derive(Debug, Clone)]
pub struct ImageEncoding {
    /// Unit-norm `[1 × D]` image feature.
    pub feature: Tensor,
    /// Final-layer attention of the class token, `[heads × n]`.
    pub class_attention: Tensor,
    /// Prompt rows present in the final layer (they sit at slots `1..=count`).
    pub final_prompt_count: usize,
}

impl ImageEncoding {
    /// Head-averaged class-token attention over the patch slots only.
    pub fn patch_attention(&self) -> Vec<f32> {
        let heads = self.class_attention.rows();
        let n = self.class_attention.cols();
        let start = 1 + self.final_prompt_count;
        let a = self.class_attention.data();
        (start..n)
            .map(|j| (0..heads).map(|h| a[h * n + j]).sum::<f32>() / heads as f32)
            .collect()
    }
}

impl DualEncoderWeights {
    /// Patch embeddings `e₀ʲ` with their positional embeddings, `[N_p × d]`.
    pub fn embed_patches(&self, image: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        let s = c.image_size;
        if image.shape() != [3, s, s] {
            return Err(DptError::Shape(format!(
                "image must be [3 × {s} × {s}], got {:?}",
                image.shape()
            )));
        }
        let p = c.patch_size;
        let g = c.grid();
        let px = image.data();
        let mut patches = Vec::with_capacity(c.num_patches() * c.patch_dim());
        for gy in 0..g {
            for gx in 0..g {
                for ch in 0..3 {
                    for y in 0..p {
                        let row = ch * s * s + (gy * p + y) * s + gx * p;
                        patches.extend_from_slice(&px[row..row + p]);
                    }
                }
            }
        }
        drop(px);
        let patches = Tensor::new(patches, &[c.num_patches(), c.patch_dim()])?;
        let pos = self.visual_pos.slice_rows(1, c.num_patches())?;
        patches.matmul(&self.patch_weight)?.add_row(&self.patch_bias)?.add(&pos)
    }

    /// `[s₀; E₀]` after the pre-transformer layer norm, `[1 + N_p, d]`.
    pub fn visual_stem(&self, image: &Tensor) -> Result<Tensor> {
        let patches = self.embed_patches(image)?;
        let d = self.config.d_visual;
        let cls = self.class_token.reshape(&[1, d])?.add(&self.visual_pos.slice_rows(0, 1)?)?;
        concat_rows(&[cls, patches])?.layer_norm(&self.ln_pre_gain, &self.ln_pre_bias, LN_EPS)
    }

    /// Runs visual layer `layer` on `state = [s; E]` with optional prompts.
    ///
    /// Returns the next `[s; E]` (prompt outputs discarded) and the raw layer output.
    pub fn visual_layer(&self, layer: usize, state: &Tensor, prompts: Option<&Tensor>) -> Result<(Tensor, LayerOutput)> {
        let block = self
            .visual_blocks
            .get(layer)
            .ok_or(DptError::Plan { plan: layer + 1, layers: self.visual_blocks.len() })?;
        let np = self.config.num_patches();
        let input = match prompts {
            Some(p) => concat_rows(&[state.slice_rows(0, 1)?, p.clone(), state.slice_rows(1, np)?])?,
            None => state.clone(),
        };
        let out = transformer_layer_forward(&input, block, self.config.heads, None)?;
        let next = match prompts {
            Some(p) => concat_rows(&[out.output.slice_rows(0, 1)?, out.output.slice_rows(1 + p.rows(), np)?])?,
            None => out.output.clone(),
        };
        Ok((next, out))
    }

    /// Class-token state → unit-norm joint-space feature `[1 × D]`.
    pub fn visual_head(&self, state: &Tensor) -> Result<Tensor> {
        state
            .slice_rows(0, 1)?
            .layer_norm(&self.ln_post_gain, &self.ln_post_bias, LN_EPS)?
            .matmul(&self.visual_proj)?
            .l2_normalize()
    }

    /// Full image tower under an injection plan (missing trailing entries mean no prompts).
    pub fn image_encode(
        &self,
        image: &Tensor,
        plan: &[Injection],
        mut generator: Option<&mut dyn PromptGenerator>,
    ) -> Result<ImageEncoding> {
        let layers = self.visual_blocks.len();
        if plan.len() > layers {
            return Err(DptError::Plan { plan: plan.len(), layers });
        }
        let mut state = self.visual_stem(image)?;
        let mut last = None;
        for layer in 0..layers {
            let prompts = match plan.get(layer).unwrap_or(&Injection::None) {
                Injection::None => None,
                Injection::Plain(p) => Some(p.clone()),
                Injection::Generated => match generator.as_deref_mut() {
                    Some(g) => g.generate(layer, &state)?,
                    None => {
                        return Err(DptError::Configuration(format!(
                            "layer {layer} expects generated prompts but no generator was supplied"
                        )))
                    }
                },
            };
            let count = prompts.as_ref().map_or(0, Tensor::rows);
            let (next, out) = self.visual_layer(layer, &state, prompts.as_ref())?;
            state = next;
            last = Some((out, count));
        }
        let (out, final_prompt_count) = last.expect("at least one visual layer");
        let cls_rows: Vec<Tensor> = out
            .attention
            .iter()
            .map(|a| a.slice_rows(0, 1))
            .collect::<Result<_>>()?;
        Ok(ImageEncoding {
            feature: self.visual_head(&state)?,
            class_attention: concat_rows(&cls_rows)?,
            final_prompt_count,
        })
    }

    /// Token embeddings with context slots optionally replaced, plus positions.
    fn text_inputs(&self, seq: &TokenSequence, context: Option<&Tensor>) -> Result<Tensor> {
        let c = &self.config;
        let len = seq.len();
        if len > c.max_text_len {
            return Err(DptError::Length { len, max: c.max_text_len });
        }
        if len == 0 || seq.end_position >= len || seq.class_token_position >= len {
            return Err(DptError::Contract(format!(
                "token positions out of range for sequence of length {len}"
            )));
        }
        if let Some(&bad) = seq.token_ids.iter().find(|&&t| t >= c.vocab_size) {
            return Err(DptError::Vocabulary(format!("token id {bad} >= vocabulary size {}", c.vocab_size)));
        }
        let emb = match context {
            None => self.token_embed.gather_rows(&seq.token_ids)?,
            Some(ctx) => {
                let slots = seq.context_len();
                if ctx.shape() != [slots, c.d_text] {
                    return Err(DptError::Arity(format!(
                        "context override {:?} does not fill {slots} slots of width {}",
                        ctx.shape(),
                        c.d_text
                    )));
                }
                let head = self.token_embed.gather_rows(&seq.token_ids[..1])?;
                let tail = self.token_embed.gather_rows(&seq.token_ids[seq.class_token_position..])?;
                concat_rows(&[head, ctx.clone(), tail])?
            }
        };
        emb.add(&self.text_pos.slice_rows(0, len)?)
    }

    /// Text feature `g(t)`: final state at the end marker, projected and unit-normalised.
    pub fn text_encode(&self, seq: &TokenSequence, context: Option<&Tensor>) -> Result<Tensor> {
        let mut x = self.text_inputs(seq, context)?;
        let mask = causal_mask(seq.len())?;
        for block in &self.text_blocks {
            x = transformer_layer_forward(&x, block, self.config.heads, Some(&mask))?.output;
        }
        x.slice_rows(seq.end_position, 1)?
            .layer_norm(&self.ln_final_gain, &self.ln_final_bias, LN_EPS)?
            .matmul(&self.text_proj)?
            .l2_normalize()
    }

    /// Stacked `[K × D]` text features, one per sequence, sharing one context.
    pub fn text_features(&self, seqs: &[TokenSequence], context: Option<&Tensor>) -> Result<Tensor> {
        let rows: Vec<Tensor> = seqs.iter().map(|s| self.text_encode(s, context)).collect::<Result<_>>()?;
        concat_rows(&rows)
    }
}

fn causal_mask(n: usize) -> Result<Tensor> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            m[i * n + j] = f32::NEG_INFINITY;
        }
    }
    Tensor::new(m, &[n, n])
}

const NORM_TOLERANCE: f32 = 1e-4;

fn check_unit_rows(t: &Tensor, what: &str) -> Result<()> {
    let n = t.cols();
    for (i, row) in t.data().chunks(n).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(DptError::Contract(format!("{what} row {i} has norm {norm}, expected 1")));
        }
    }
    Ok(())
}

/// `[B × K]` logits `sim(xᵦ, wₖ)/τ` for unit-norm image and class features.
pub fn cosine_logits(image_features: &Tensor, class_features: &Tensor, temperature: f32) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(DptError::Parameter(format!("temperature must be positive, got {temperature}")));
    }
    check_unit_rows(image_features, "image feature")?;
    check_unit_rows(class_features, "class feature")?;
    let d = class_features.cols();
    let x = image_features.reshape(&[image_features.numel() / d, d])?;
    Ok(x.matmul_t(class_features)?.scale(1.0 / temperature))
}

/// Zero-shot logits `[K]` for a single unit-norm image feature.
pub fn zero_shot_logits(image_feature: &Tensor, class_features: &Tensor, temperature: f32) -> Result<Tensor> {
    if image_feature.numel() != class_features.cols() {
        return Err(DptError::dim("zero_shot_logits", image_feature.shape(), class_features.shape()));
    }
    let k = class_features.rows();
    cosine_logits(image_feature, class_features, temperature)?.reshape(&[k])
}
