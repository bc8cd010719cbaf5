//! Class-aware visual prompts: text features cross-attend to a visual layer's inputs.

use crate::backbone::{PromptGenerator, LN_EPS};
use crate::error::{DptError, Result};
use crate::rng::DetRng;
use crate::tensor::Tensor;

use super::selection::ClassSelection;

/// Which row feeds the auxiliary K-way head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AuxInput {
    /// `LN(oⱼ + qⱼ)`, the generated prompt itself.
    #[default]
    Combined,
    /// `LN(oⱼ)` with the same layer norm.
    Attended,
}

impl AuxInput {
    pub fn name(self) -> &'static str {
        match self {
            AuxInput::Combined => "combined",
            AuxInput::Attended => "attended",
        }
    }
}

impl std::str::FromStr for AuxInput {
    type Err = DptError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combined" => Ok(AuxInput::Combined),
            "attended" => Ok(AuxInput::Attended),
            _ => Err(DptError::Configuration(format!("aux_input must be combined or attended, got {s}"))),
        }
    }
}

/// Generator parameters. Maps are stored input-major like the backbone.
#[derive(Debug, Clone)]
pub struct CavptParams {
    /// `[D × d]`
    pub query_weight: Tensor,
    pub query_bias: Tensor,
    /// `[d × d_k]`
    pub w_q: Tensor,
    /// `[d × d_k]`
    pub w_k: Tensor,
    /// `[d × d]`
    pub w_v: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
    /// `[d × K]`
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl CavptParams {
    pub fn init(embed_dim: usize, width: usize, classes: usize, std: f32, rng: &mut DetRng) -> Result<Self> {
        let p = |t: Tensor| t.to_parameter();
        Ok(Self {
            query_weight: p(Tensor::randn(&[embed_dim, width], std, rng)?),
            query_bias: p(Tensor::zeros(&[width])?),
            w_q: p(Tensor::randn(&[width, width], std, rng)?),
            w_k: p(Tensor::randn(&[width, width], std, rng)?),
            w_v: p(Tensor::randn(&[width, width], std, rng)?),
            ln_gain: p(Tensor::full(&[width], 1.0)?),
            ln_bias: p(Tensor::zeros(&[width])?),
            head_weight: p(Tensor::randn(&[width, classes], std, rng)?),
            head_bias: p(Tensor::zeros(&[classes])?),
        })
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("query.weight", &self.query_weight),
            ("query.bias", &self.query_bias),
            ("attn.w_q", &self.w_q),
            ("attn.w_k", &self.w_k),
            ("attn.w_v", &self.w_v),
            ("ln.gain", &self.ln_gain),
            ("ln.bias", &self.ln_bias),
            ("head.weight", &self.head_weight),
            ("head.bias", &self.head_bias),
        ]
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.named().into_iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn width(&self) -> usize {
        self.w_v.cols()
    }

    pub fn classes(&self) -> usize {
        self.head_weight.cols()
    }
}

/// Generator parameters for every class-aware layer, optionally shared.
#[derive(Debug, Clone)]
pub struct CavptGenerators {
    /// 0-based layers served, ascending.
    pub layers: Vec<usize>,
    /// One entry when shared, otherwise one per layer in `layers` order.
    pub params: Vec<CavptParams>,
}

impl CavptGenerators {
    pub fn init(
        layers: Vec<usize>,
        shared: bool,
        embed_dim: usize,
        width: usize,
        classes: usize,
        std: f32,
        rng: &mut DetRng,
    ) -> Result<Self> {
        let count = if shared { 1 } else { layers.len() };
        let params = (0..count)
            .map(|_| CavptParams::init(embed_dim, width, classes, std, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers, params })
    }

    pub fn shared(&self) -> bool {
        self.params.len() == 1
    }

    pub fn for_layer(&self, layer: usize) -> Result<&CavptParams> {
        let i = self
            .layers
            .iter()
            .position(|&l| l == layer)
            .ok_or_else(|| DptError::Configuration(format!("no generator configured for layer {}", layer + 1)))?;
        Ok(if self.shared() { &self.params[0] } else { &self.params[i] })
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.params.iter().flat_map(CavptParams::parameters).collect()
    }
}

/// Everything one generator call produces.
#[derive(Debug, Clone)]
pub struct CavptOutput {
    /// `P̃ = LN(o + q)`, `[K_N × d]`.
    pub prompts: Tensor,
    /// `[K_N × d]`
    pub queries: Tensor,
    /// `[K_N × d]`
    pub attended: Tensor,
    /// `[K_N × n]` cross-attention weights.
    pub attention: Tensor,
}

/// Cross-attends each selected class feature to the layer inputs.
///
/// `text_features` holds `gⱼ` for the selected classes in selection order;
/// `layer_inputs` supplies keys and values.
pub fn generate_cavpt(
    selection: &ClassSelection,
    text_features: &Tensor,
    layer_inputs: &Tensor,
    params: &CavptParams,
) -> Result<CavptOutput> {
    if selection.len() != text_features.rows() {
        return Err(DptError::Arity(format!(
            "selection has {} classes but {} text features were given",
            selection.len(),
            text_features.rows()
        )));
    }
    let q = text_features.matmul(&params.query_weight)?.add_row(&params.query_bias)?;
    let dk = params.w_k.cols();
    let scores = q.matmul(&params.w_q)?.matmul_t(&layer_inputs.matmul(&params.w_k)?)?;
    let attention = scores.scale(1.0 / (dk as f32).sqrt()).softmax(1.0)?;
    let o = attention.matmul(&layer_inputs.matmul(&params.w_v)?)?;
    let prompts = o.add(&q)?.layer_norm(&params.ln_gain, &params.ln_bias, LN_EPS)?;
    Ok(CavptOutput { prompts, queries: q, attended: o, attention })
}

/// K-way logits `[1 × K]` from the row whose selected class is `label`.
pub fn cavpt_aux_logits(
    output: &CavptOutput,
    selection: &ClassSelection,
    label: usize,
    params: &CavptParams,
    input: AuxInput,
) -> Result<Tensor> {
    let j = selection.position(label).ok_or_else(|| {
        DptError::Contract(format!("label {label} is not among the selected classes {:?}", selection.indices))
    })?;
    let o = output.attended.slice_rows(j, 1)?;
    let row = match input {
        AuxInput::Combined => o.add(&output.queries.slice_rows(j, 1)?)?,
        AuxInput::Attended => o,
    };
    row.layer_norm(&params.ln_gain, &params.ln_bias, LN_EPS)?
        .matmul(&params.head_weight)?
        .add_row(&params.head_bias)
}

/// Lazily generates prompts at class-aware layers from the state arriving there.
pub struct CavptProvider<'a> {
    generators: &'a CavptGenerators,
    selection: &'a ClassSelection,
    text_features: Tensor,
    /// `(layer, output)` for every generator call, in layer order.
    pub outputs: Vec<(usize, CavptOutput)>,
}

impl<'a> CavptProvider<'a> {
    /// `text_features` are the selected classes' rows, in selection order.
    pub fn new(generators: &'a CavptGenerators, selection: &'a ClassSelection, text_features: Tensor) -> Self {
        Self { generators, selection, text_features, outputs: Vec::new() }
    }
}

impl PromptGenerator for CavptProvider<'_> {
    fn generate(&mut self, layer: usize, layer_inputs: &Tensor) -> Result<Option<Tensor>> {
        if self.selection.is_empty() {
            return Ok(None);
        }
        let params = self.generators.for_layer(layer)?;
        let out = generate_cavpt(self.selection, &self.text_features, layer_inputs, params)?;
        let prompts = out.prompts.clone();
        self.outputs.push((layer, out));
        Ok(Some(prompts))
    }
}
