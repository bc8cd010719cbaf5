//! Frozen parameters of the dual encoder and their (de)serialisation.
//!
//! Linear maps are stored input-major (`[in × out]`) so activations multiply
//! on the left: `y = x·W + b`.

use std::path::Path;

use super::config::{BackboneConfig, LinearInit};
use crate::container::{Container, NamedTensor, WEIGHTS_MAGIC};
use crate::error::{DptError, Result};
use crate::rng::{self, DetRng};
use crate::tensor::Tensor;

/// One pre-LN transformer block.
#[derive(Debug, Clone)]
pub struct BlockWeights {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    /// `[d × 3d]`: query, key and value maps side by side.
    pub qkv_weight: Tensor,
    pub qkv_bias: Tensor,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub fc1_weight: Tensor,
    pub fc1_bias: Tensor,
    pub fc2_weight: Tensor,
    pub fc2_bias: Tensor,
}

impl BlockWeights {
    fn init(d: usize, init: LinearInit, std: f32, rng: &mut DetRng) -> Result<Self> {
        let s = |fan_in: usize| init.std(fan_in, std);
        Ok(Self {
            ln1_gain: Tensor::full(&[d], 1.0)?,
            ln1_bias: Tensor::zeros(&[d])?,
            qkv_weight: Tensor::randn(&[d, 3 * d], s(d), rng)?,
            qkv_bias: Tensor::zeros(&[3 * d])?,
            out_weight: Tensor::randn(&[d, d], s(d), rng)?,
            out_bias: Tensor::zeros(&[d])?,
            ln2_gain: Tensor::full(&[d], 1.0)?,
            ln2_bias: Tensor::zeros(&[d])?,
            fc1_weight: Tensor::randn(&[d, 4 * d], s(d), rng)?,
            fc1_bias: Tensor::zeros(&[4 * d])?,
            fc2_weight: Tensor::randn(&[4 * d, d], s(4 * d), rng)?,
            fc2_bias: Tensor::zeros(&[d])?,
        })
    }

    fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        [
            ("ln1.gain", &self.ln1_gain),
            ("ln1.bias", &self.ln1_bias),
            ("attn.qkv.weight", &self.qkv_weight),
            ("attn.qkv.bias", &self.qkv_bias),
            ("attn.out.weight", &self.out_weight),
            ("attn.out.bias", &self.out_bias),
            ("ln2.gain", &self.ln2_gain),
            ("ln2.bias", &self.ln2_bias),
            ("mlp.fc1.weight", &self.fc1_weight),
            ("mlp.fc1.bias", &self.fc1_bias),
            ("mlp.fc2.weight", &self.fc2_weight),
            ("mlp.fc2.bias", &self.fc2_bias),
        ]
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
    }
}

/// All frozen dual-encoder parameters. Every tensor has `requires_grad == false`.
#[derive(Debug, Clone)]
pub struct DualEncoderWeights {
    pub config: BackboneConfig,
    /// `[3·patch² × d]`
    pub patch_weight: Tensor,
    pub patch_bias: Tensor,
    pub class_token: Tensor,
    /// `[(1 + N_p) × d]`, row 0 belongs to the class token.
    pub visual_pos: Tensor,
    pub ln_pre_gain: Tensor,
    pub ln_pre_bias: Tensor,
    pub visual_blocks: Vec<BlockWeights>,
    pub ln_post_gain: Tensor,
    pub ln_post_bias: Tensor,
    /// `[d × D]`
    pub visual_proj: Tensor,
    /// `[vocab × d_text]`
    pub token_embed: Tensor,
    pub text_pos: Tensor,
    pub text_blocks: Vec<BlockWeights>,
    pub ln_final_gain: Tensor,
    pub ln_final_bias: Tensor,
    /// `[d_text × D]`
    pub text_proj: Tensor,
}

impl DualEncoderWeights {
    /// Seeded random initialisation: embeddings from `N(0, init_std²)`, linear
    /// maps as chosen by `config.linear_init`, biases zero, gains one.
    pub fn init(config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let std = c.init_std;
        let mut rng = rng::derived(c.seed, 0xB4C4_B04E);
        let (d, dt, e) = (c.d_visual, c.d_text, c.embed_dim);
        let lin = |fan_in: usize| c.linear_init.std(fan_in, std);
        Ok(Self {
            config: c.clone(),
            patch_weight: Tensor::randn(&[c.patch_dim(), d], lin(c.patch_dim()), &mut rng)?,
            patch_bias: Tensor::zeros(&[d])?,
            class_token: Tensor::randn(&[d], std, &mut rng)?,
            visual_pos: Tensor::randn(&[1 + c.num_patches(), d], std, &mut rng)?,
            ln_pre_gain: Tensor::full(&[d], 1.0)?,
            ln_pre_bias: Tensor::zeros(&[d])?,
            visual_blocks: (0..c.visual_layers)
                .map(|_| BlockWeights::init(d, c.linear_init, std, &mut rng))
                .collect::<Result<_>>()?,
            ln_post_gain: Tensor::full(&[d], 1.0)?,
            ln_post_bias: Tensor::zeros(&[d])?,
            visual_proj: Tensor::randn(&[d, e], lin(d), &mut rng)?,
            token_embed: Tensor::randn(&[c.vocab_size, dt], std, &mut rng)?,
            text_pos: Tensor::randn(&[c.max_text_len, dt], std, &mut rng)?,
            text_blocks: (0..c.text_layers)
                .map(|_| BlockWeights::init(dt, c.linear_init, std, &mut rng))
                .collect::<Result<_>>()?,
            ln_final_gain: Tensor::full(&[dt], 1.0)?,
            ln_final_bias: Tensor::zeros(&[dt])?,
            text_proj: Tensor::randn(&[dt, e], lin(dt), &mut rng)?,
        })
    }

    /// Every tensor in manifest order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("visual.patch.weight".into(), &self.patch_weight),
            ("visual.patch.bias".into(), &self.patch_bias),
            ("visual.class_token".into(), &self.class_token),
            ("visual.pos".into(), &self.visual_pos),
            ("visual.ln_pre.gain".into(), &self.ln_pre_gain),
            ("visual.ln_pre.bias".into(), &self.ln_pre_bias),
        ];
        for (i, b) in self.visual_blocks.iter().enumerate() {
            out.extend(b.named(&format!("visual.block{i}")));
        }
        out.extend([
            ("visual.ln_post.gain".into(), &self.ln_post_gain),
            ("visual.ln_post.bias".into(), &self.ln_post_bias),
            ("visual.proj".into(), &self.visual_proj),
            ("text.token_embed".into(), &self.token_embed),
            ("text.pos".into(), &self.text_pos),
        ]);
        for (i, b) in self.text_blocks.iter().enumerate() {
            out.extend(b.named(&format!("text.block{i}")));
        }
        out.extend([
            ("text.ln_final.gain".into(), &self.ln_final_gain),
            ("text.ln_final.bias".into(), &self.ln_final_bias),
            ("text.proj".into(), &self.text_proj),
        ]);
        out
    }

    pub fn to_container(&self) -> Container {
        Container {
            meta: self.config.to_meta(),
            tensors: self
                .named_tensors()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.to_vec(),
                })
                .collect(),
        }
    }

    /// Concatenated little-endian bytes of every buffer, for frozen-contract checks.
    pub fn fingerprint(&self) -> Vec<u8> {
        self.named_tensors()
            .iter()
            .flat_map(|(_, t)| t.to_vec())
            .flat_map(f32::to_le_bytes)
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path, WEIGHTS_MAGIC)
    }

    /// Rebuilds weights from a container whose header must match `config`.
    pub fn from_container(config: &BackboneConfig, container: &Container) -> Result<Self> {
        config.validate()?;
        if let Some((k, expected, found)) = config.meta_mismatches(&container.meta).into_iter().next() {
            return Err(DptError::Format {
                offset: 12,
                message: format!("header field {k} = {found}, config expects {expected}"),
            });
        }
        // Fresh init supplies the expected manifest; every buffer is then replaced.
        let template = Self::init(config)?;
        let expected = template.named_tensors();
        if expected.len() != container.tensors.len() {
            return Err(DptError::Format {
                offset: 12,
                message: format!("manifest lists {} tensors, expected {}", container.tensors.len(), expected.len()),
            });
        }
        for ((name, t), stored) in expected.iter().zip(&container.tensors) {
            if *name != stored.name || t.shape() != stored.shape.as_slice() {
                return Err(DptError::Format {
                    offset: 12,
                    message: format!("manifest entry {} {:?} does not match expected {} {:?}", stored.name, stored.shape, name, t.shape()),
                });
            }
            if stored.data.iter().any(|v| !v.is_finite()) {
                return Err(DptError::Format {
                    offset: 12,
                    message: format!("tensor {} contains non-finite values", stored.name),
                });
            }
            t.set_data(&stored.data)?;
        }
        Ok(template)
    }

    /// Loads `path` when given, otherwise initialises from `config.seed`.
    pub fn init_or_load(config: &BackboneConfig, path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_container(config, &Container::load(p, WEIGHTS_MAGIC)?),
            None => Self::init(config),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BackboneConfig {
        BackboneConfig {
            d_visual: 16,
            d_text: 16,
            embed_dim: 8,
            visual_layers: 2,
            text_layers: 1,
            heads: 2,
            ..Default::default()
        }
    }

    #[test]
    fn all_frozen_and_finite() {
        let w = DualEncoderWeights::init(&small()).unwrap();
        for (name, t) in w.named_tensors() {
            assert!(!t.requires_grad(), "{name} must be frozen");
            assert!(t.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let a = DualEncoderWeights::init(&small()).unwrap();
        let b = DualEncoderWeights::init(&small()).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = DualEncoderWeights::init(&BackboneConfig { seed: 9, ..small() }).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn save_load_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.dptw");
        let w = DualEncoderWeights::init(&small()).unwrap();
        w.save(&path).unwrap();
        let back = DualEncoderWeights::init_or_load(&small(), Some(&path)).unwrap();
        assert_eq!(w.fingerprint(), back.fingerprint());
    }

    #[test]
    fn header_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.dptw");
        DualEncoderWeights::init(&small()).unwrap().save(&path).unwrap();
        let other = BackboneConfig { d_visual: 32, ..small() };
        assert!(matches!(
            DualEncoderWeights::init_or_load(&other, Some(&path)),
            Err(DptError::Format { .. })
        ));
    }
}
