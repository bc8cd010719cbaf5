use crate::error::{DptError, Result};

/// Shape of the desk-scale dual encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    /// Visual width `d`.
    pub d_visual: usize,
    pub d_text: usize,
    /// Joint embedding width `D`.
    pub embed_dim: usize,
    pub visual_layers: usize,
    pub text_layers: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub max_text_len: usize,
    /// Fixed softmax temperature τ for image-text logits.
    pub temperature: f32,
    /// Standard deviation of embedding tables, and of linear maps under [`LinearInit::Fixed`].
    pub init_std: f32,
    pub linear_init: LinearInit,
    pub seed: u64,
}

/// How linear-map weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearInit {
    /// `N(0, 1/fan_in)`: keeps activations at unit scale through the towers.
    #[default]
    FanIn,
    /// `N(0, init_std²)` everywhere.
    Fixed,
}

impl LinearInit {
    pub fn name(self) -> &'static str {
        match self {
            LinearInit::FanIn => "fan_in",
            LinearInit::Fixed => "fixed",
        }
    }

    /// Standard deviation for a map with `fan_in` inputs.
    pub fn std(self, fan_in: usize, fixed: f32) -> f32 {
        match self {
            LinearInit::FanIn => 1.0 / (fan_in as f32).sqrt(),
            LinearInit::Fixed => fixed,
        }
    }
}

impl std::str::FromStr for LinearInit {
    type Err = DptError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fan_in" => Ok(LinearInit::FanIn),
            "fixed" => Ok(LinearInit::Fixed),
            _ => Err(DptError::Configuration(format!("linear init must be fan_in or fixed, got {s:?}"))),
        }
    }
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            d_visual: 64,
            d_text: 64,
            embed_dim: 64,
            visual_layers: 4,
            text_layers: 2,
            heads: 4,
            vocab_size: super::Vocabulary::standard().len(),
            max_text_len: 19,
            temperature: 0.01,
            init_std: 0.02,
            linear_init: LinearInit::FanIn,
            seed: 0,
        }
    }
}

pub const LN_EPS: f32 = 1e-5;

impl BackboneConfig {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// `N_p`
    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DptError::Configuration(m));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.heads == 0 || self.d_visual % self.heads != 0 || self.d_text % self.heads != 0 {
            return bad(format!(
                "widths {}/{} must be divisible by heads {}",
                self.d_visual, self.d_text, self.heads
            ));
        }
        if self.visual_layers == 0 || self.text_layers == 0 || self.embed_dim == 0 {
            return bad("layer counts and embed_dim must be positive".into());
        }
        if self.vocab_size == 0 || self.max_text_len < 3 {
            return bad("vocabulary must be non-empty and max_text_len >= 3".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        Ok(())
    }

    /// `key value` pairs stored in weight-file headers.
    pub fn to_meta(&self) -> Vec<(String, String)> {
        [
            ("image_size", self.image_size.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("d_visual", self.d_visual.to_string()),
            ("d_text", self.d_text.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("visual_layers", self.visual_layers.to_string()),
            ("text_layers", self.text_layers.to_string()),
            ("heads", self.heads.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("max_text_len", self.max_text_len.to_string()),
            ("temperature", format!("{:?}", self.temperature)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Fields that a weight file must agree on, as (name, expected, found).
    pub fn meta_mismatches(&self, meta: &[(String, String)]) -> Vec<(String, String, String)> {
        let mut out = Vec::new();
        for (k, expected) in self.to_meta() {
            let found = meta.iter().find(|(mk, _)| *mk == k).map(|(_, v)| v.clone());
            let same = match (&found, k.as_str()) {
                (Some(f), "temperature") => f.parse::<f32>().ok() == Some(self.temperature),
                (Some(f), _) => *f == expected,
                (None, _) => false,
            };
            if !same {
                out.push((k, expected, found.unwrap_or_else(|| "<missing>".into())));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_tile_sixteen_patches() {
        let c = BackboneConfig::default();
        c.validate().unwrap();
        assert_eq!(c.num_patches(), 16);
        assert_eq!(c.num_patches(), (c.image_size / c.patch_size).pow(2));
    }

    #[test]
    fn rejects_bad_tiling_and_heads() {
        let c = BackboneConfig { patch_size: 5, ..Default::default() };
        assert!(c.validate().is_err());
        let c = BackboneConfig { heads: 3, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
