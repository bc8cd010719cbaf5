//! Learnable prompts: text context, deep visual prompts and the class-aware
//! visual prompt generator, plus the forward pass that ties them to the
//! frozen backbone.

mod cavpt;
mod model;
mod selection;
mod text;
mod visual;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use cavpt::{
    cavpt_aux_logits, generate_cavpt, AuxInput, CavptGenerators, CavptOutput, CavptParams, CavptProvider,
};
pub use model::{argmax, ImageForward, PromptedModel};
pub use selection::{select_top_scores, select_topk_classes, ClassSelection};
pub use text::{build_text_prompts, template_features, text_prompt_features, PromptedSequence, TextPromptContext};
pub use visual::{assemble_image_input, VisualPromptStack};

use crate::backbone::{DualEncoderWeights, Injection, Vocabulary};
use crate::container::{Container, NamedTensor, PROMPTS_MAGIC};
use crate::error::{DptError, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Which prompt families are learned and which classifier predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Hand-crafted template, no learning.
    ZeroShot,
    /// Learned text context only.
    Coop,
    /// Deep visual prompts with the template classifier.
    Vpt,
    /// Text context and plain visual prompts.
    Vlp,
    /// Text context, visual prompts and class-aware prompts.
    Dpt,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::ZeroShot, Variant::Coop, Variant::Vpt, Variant::Vlp, Variant::Dpt];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ZeroShot => "zeroshot",
            Variant::Coop => "coop",
            Variant::Vpt => "vpt",
            Variant::Vlp => "vlp",
            Variant::Dpt => "dpt",
        }
    }

    pub fn learns_text(self) -> bool {
        matches!(self, Variant::Coop | Variant::Vlp | Variant::Dpt)
    }

    pub fn learns_visual(self) -> bool {
        matches!(self, Variant::Vpt | Variant::Vlp | Variant::Dpt)
    }

    /// Uses the knowledge-guided composite objective early in training.
    pub fn has_guided_warmup(self) -> bool {
        matches!(self, Variant::Vlp | Variant::Dpt)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = DptError;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
            DptError::Usage(format!("unknown variant {s:?}; valid variants: {}", valid.join(", ")))
        })
    }
}

/// Shape of a prompt set before initialisation.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptLayout {
    pub variant: Variant,
    /// `M`
    pub context_len: usize,
    /// Start the text context from the template words (forces `M = 4`).
    pub template_context: bool,
    /// `P`
    pub prompt_len: usize,
    /// Plain prompts go to layers `0..prompt_depth`.
    pub prompt_depth: usize,
    /// 0-based generator layers; ignored unless the variant is DPT.
    pub cavpt_layers: BTreeSet<usize>,
    /// `K_N`; zero disables the generated prompts.
    pub k_n: usize,
    pub shared_generator: bool,
    pub aux_input: AuxInput,
    pub init_std: f32,
    pub seed: u64,
}

impl PromptLayout {
    /// Published defaults for an `L`-layer image tower.
    pub fn defaults(variant: Variant, visual_layers: usize) -> Self {
        Self {
            variant,
            context_len: 16,
            template_context: false,
            prompt_len: 10,
            prompt_depth: visual_layers,
            cavpt_layers: BTreeSet::from([visual_layers.saturating_sub(1)]),
            k_n: 10,
            shared_generator: true,
            aux_input: AuxInput::Combined,
            init_std: 0.02,
            seed: 0,
        }
    }
}

const PROMPT_STREAM: u64 = 0x9_0A0E;

/// The three learnable families, each present only when the variant uses it.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub variant: Variant,
    pub text: Option<TextPromptContext>,
    pub visual: Option<VisualPromptStack>,
    pub cavpt: Option<CavptGenerators>,
    pub k_n: usize,
    pub aux_input: AuxInput,
}

impl PromptSet {
    /// Seeded initialisation: context first, then visual prompts, then the generator.
    pub fn init(
        layout: &PromptLayout,
        weights: &DualEncoderWeights,
        vocab: &Vocabulary,
        class_names: &[String],
    ) -> Result<Self> {
        let v = layout.variant;
        let c = &weights.config;
        let mut rng = rng::derived(layout.seed, PROMPT_STREAM);
        let text = if !v.learns_text() {
            None
        } else if layout.template_context {
            Some(TextPromptContext::from_template(weights, vocab, class_names)?)
        } else {
            Some(TextPromptContext::init(weights, vocab, class_names, layout.context_len, layout.init_std, &mut rng)?)
        };
        let cavpt_layers = if v == Variant::Dpt { layout.cavpt_layers.clone() } else { BTreeSet::new() };
        let visual = if v.learns_visual() {
            Some(VisualPromptStack::init(
                c.visual_layers,
                layout.prompt_len,
                c.d_visual,
                layout.prompt_depth,
                cavpt_layers.clone(),
                layout.init_std,
                &mut rng,
            )?)
        } else {
            None
        };
        let cavpt = if cavpt_layers.is_empty() {
            None
        } else {
            Some(CavptGenerators::init(
                cavpt_layers.into_iter().collect(),
                layout.shared_generator,
                c.embed_dim,
                c.d_visual,
                class_names.len(),
                layout.init_std,
                &mut rng,
            )?)
        };
        Ok(Self { variant: v, text, visual, cavpt, k_n: layout.k_n, aux_input: layout.aux_input })
    }

    /// Number of generated prompts per class-aware layer for a `K`-class task.
    pub fn cavpt_length(&self, classes: usize) -> usize {
        if self.cavpt.is_some() {
            self.k_n.min(classes)
        } else {
            0
        }
    }

    /// True when a forward pass will call the generator.
    pub fn generator_active(&self) -> bool {
        self.cavpt.is_some() && self.k_n > 0
    }

    pub fn plan(&self) -> Result<Vec<Injection>> {
        match &self.visual {
            Some(v) => assemble_image_input(v, if self.generator_active() { 1 } else { 0 }),
            None => Ok(Vec::new()),
        }
    }

    pub fn text_parameters(&self) -> Vec<Tensor> {
        self.text.iter().map(|t| t.context.clone()).collect()
    }

    /// Plain prompts and, when it runs, the generator.
    pub fn visual_parameters(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = self.visual.iter().flat_map(VisualPromptStack::parameters).collect();
        if self.generator_active() {
            out.extend(self.cavpt.iter().flat_map(CavptGenerators::parameters));
        }
        out
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.text_parameters();
        p.extend(self.visual_parameters());
        p
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(t) = &self.text {
            out.push(("text.context".to_string(), &t.context));
        }
        if let Some(v) = &self.visual {
            for (l, p) in v.prompts_per_layer.iter().enumerate() {
                if let Some(p) = p {
                    out.push((format!("visual.layer{l}.prompts"), p));
                }
            }
        }
        if let Some(g) = &self.cavpt {
            for (i, p) in g.params.iter().enumerate() {
                out.extend(p.named().into_iter().map(|(n, t)| (format!("cavpt{i}.{n}"), t)));
            }
        }
        out
    }

    pub fn to_container(&self, class_names: &[String]) -> Container {
        let join = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>().join(",");
        let mut meta = vec![
            ("variant".to_string(), self.variant.name().to_string()),
            ("classes".to_string(), class_names.join(",")),
            ("k_n".to_string(), self.k_n.to_string()),
            ("aux_input".to_string(), self.aux_input.name().to_string()),
        ];
        if let Some(v) = &self.visual {
            meta.push(("visual_layers".into(), v.layers().to_string()));
            let layers = if v.cavpt_layers.is_empty() {
                "none".to_string()
            } else {
                join(&mut v.cavpt_layers.iter().map(|l| l.to_string()))
            };
            meta.push(("cavpt_layers".into(), layers));
        }
        if let Some(g) = &self.cavpt {
            meta.push(("shared_generator".into(), g.shared().to_string()));
        }
        Container {
            meta,
            tensors: self
                .named_tensors()
                .into_iter()
                .map(|(name, t)| NamedTensor { name, shape: t.shape().to_vec(), data: t.to_vec() })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path, class_names: &[String]) -> Result<()> {
        self.to_container(class_names).save(path, PROMPTS_MAGIC)
    }

    /// Rebuilds a prompt set and its class list from a pack.
    pub fn from_container(
        container: &Container,
        weights: &DualEncoderWeights,
        vocab: &Vocabulary,
    ) -> Result<(Self, Vec<String>)> {
        let bad = |message: String| DptError::Format { offset: 12, message };
        let meta = |k: &str| container.meta(k).ok_or_else(|| bad(format!("prompt pack lacks meta field {k}")));
        let variant: Variant = meta("variant")?.parse().map_err(|_| bad("unknown variant in prompt pack".into()))?;
        let classes: Vec<String> = meta("classes")?.split(',').filter(|s| !s.is_empty()).map(String::from).collect();
        let k_n: usize = meta("k_n")?.parse().map_err(|_| bad("k_n is not an integer".into()))?;
        let aux_input: AuxInput = meta("aux_input")?.parse().map_err(|_| bad("bad aux_input".into()))?;
        let tensor = |name: &str| -> Result<Tensor> {
            let t = container.tensor(name).ok_or_else(|| bad(format!("prompt pack lacks tensor {name}")))?;
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("tensor {name} contains non-finite values")));
            }
            Tensor::parameter(t.data.clone(), &t.shape)
        };

        let text = if variant.learns_text() {
            Some(TextPromptContext::with_context(weights, vocab, &classes, tensor("text.context")?)?)
        } else {
            None
        };
        let visual = if variant.learns_visual() {
            let layers: usize = meta("visual_layers")?.parse().map_err(|_| bad("bad visual_layers".into()))?;
            if layers != weights.config.visual_layers {
                return Err(bad(format!(
                    "prompt pack targets {layers} visual layers, backbone has {}",
                    weights.config.visual_layers
                )));
            }
            let cavpt_layers = parse_index_list(meta("cavpt_layers")?).map_err(|_| bad("bad cavpt_layers".into()))?;
            let prompts_per_layer = (0..layers)
                .map(|l| {
                    let name = format!("visual.layer{l}.prompts");
                    container.tensor(&name).map(|_| tensor(&name)).transpose()
                })
                .collect::<Result<_>>()?;
            let stack = VisualPromptStack { prompts_per_layer, cavpt_layers };
            stack.validate()?;
            Some(stack)
        } else {
            None
        };
        let cavpt = match visual.as_ref().filter(|v| !v.cavpt_layers.is_empty()) {
            Some(v) => {
                let shared = meta("shared_generator")? == "true";
                let count = if shared { 1 } else { v.cavpt_layers.len() };
                let params = (0..count)
                    .map(|i| {
                        let t = |n: &str| tensor(&format!("cavpt{i}.{n}"));
                        Ok(CavptParams {
                            query_weight: t("query.weight")?,
                            query_bias: t("query.bias")?,
                            w_q: t("attn.w_q")?,
                            w_k: t("attn.w_k")?,
                            w_v: t("attn.w_v")?,
                            ln_gain: t("ln.gain")?,
                            ln_bias: t("ln.bias")?,
                            head_weight: t("head.weight")?,
                            head_bias: t("head.bias")?,
                        })
                    })
                    .collect::<Result<_>>()?;
                Some(CavptGenerators { layers: v.cavpt_layers.iter().copied().collect(), params })
            }
            None => None,
        };
        Ok((Self { variant, text, visual, cavpt, k_n, aux_input }, classes))
    }

    pub fn load(path: &Path, weights: &DualEncoderWeights, vocab: &Vocabulary) -> Result<(Self, Vec<String>)> {
        Self::from_container(&Container::load(path, PROMPTS_MAGIC)?, weights, vocab)
    }
}

fn parse_index_list(s: &str) -> std::result::Result<BTreeSet<usize>, std::num::ParseIntError> {
    if s == "none" {
        return Ok(BTreeSet::new());
    }
    s.split(',').filter(|p| !p.is_empty()).map(str::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;

    #[test]
    fn pack_roundtrip_preserves_values() {
        let w = DualEncoderWeights::init(&BackboneConfig::default()).unwrap();
        let v = Vocabulary::standard();
        let names = vec!["red_square".to_string(), "green_circle".to_string()];
        let p = PromptSet::init(&PromptLayout::defaults(Variant::Dpt, 4), &w, &v, &names).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.dptp");
        p.save(&path, &names).unwrap();
        let (back, classes) = PromptSet::load(&path, &w, &v).unwrap();
        assert_eq!(classes, names);
        let a: Vec<_> = p.named_tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
        let b: Vec<_> = back.named_tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
        assert_eq!(a, b);
        assert_eq!(back.k_n, 10);
        assert!(back.parameters().iter().all(Tensor::requires_grad));
    }

    #[test]
    fn every_variant_roundtrips() {
        let w = DualEncoderWeights::init(&BackboneConfig::default()).unwrap();
        let v = Vocabulary::standard();
        let names = vec!["red_square".to_string(), "green_circle".to_string()];
        let dir = tempfile::tempdir().unwrap();
        for variant in Variant::ALL {
            let p = PromptSet::init(&PromptLayout::defaults(variant, 4), &w, &v, &names).unwrap();
            let path = dir.path().join(format!("{variant}.dptp"));
            p.save(&path, &names).unwrap();
            let (back, _) = PromptSet::load(&path, &w, &v).unwrap();
            assert_eq!(back.variant, variant);
            assert_eq!(back.named_tensors().len(), p.named_tensors().len());
        }
    }

    #[test]
    fn variant_names() {
        assert_eq!("dpt".parse::<Variant>().unwrap(), Variant::Dpt);
        let err = "foo".parse::<Variant>().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("coop"));
    }
}
