//! Flat `key = value` experiment configuration.
//!
//! Every knob of a run lives in one struct. Files use `#` comments and blank
//! lines freely; command lines override any key with `--key value`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backbone::BackboneConfig;
use crate::error::{DptError, Result};
use crate::harness::synthetic::{Color, ShapeKind, SyntheticSpec};
use crate::prompt::{AuxInput, PromptLayout, Variant};

/// A 1-based image layer, or the last one whatever the depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LayerRef {
    Index(usize),
    Last,
}

impl LayerRef {
    /// 0-based index in an `layers`-deep tower.
    pub fn resolve(self, layers: usize) -> Result<usize> {
        match self {
            LayerRef::Last => Ok(layers - 1),
            LayerRef::Index(i) if (1..=layers).contains(&i) => Ok(i - 1),
            LayerRef::Index(i) => Err(DptError::Configuration(format!("layer {i} outside 1..={layers}"))),
        }
    }
}

fn parse_layers(s: &str) -> Result<Vec<LayerRef>> {
    if s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(str::trim)
        .map(|p| match p {
            "last" => Ok(LayerRef::Last),
            n => n
                .parse()
                .ok()
                .filter(|&i: &usize| i >= 1)
                .map(LayerRef::Index)
                .ok_or_else(|| DptError::Configuration(format!("bad layer {n:?}; use 1-based numbers, last or none"))),
        })
        .collect()
}

fn format_layers(layers: &[LayerRef]) -> String {
    if layers.is_empty() {
        return "none".into();
    }
    layers
        .iter()
        .map(|l| match l {
            LayerRef::Last => "last".to_string(),
            LayerRef::Index(i) => i.to_string(),
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_class(word: &str) -> Result<(ShapeKind, Color)> {
    let (c, s) = word
        .split_once('_')
        .ok_or_else(|| DptError::Configuration(format!("class {word:?} is not colour_shape")))?;
    let bad = |e: DptError| DptError::Configuration(format!("class {word:?}: {e}"));
    Ok((ShapeKind::from_str(s).map_err(bad)?, Color::from_str(c).map_err(bad)?))
}

fn list<T: FromStr>(s: &str, key: &str) -> Result<Vec<T>> {
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| DptError::Configuration(format!("{key}: cannot parse {p:?}"))))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(DptError::Configuration(format!("{key} must list at least one value")));
    }
    Ok(items)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // run selection
    pub variant: Variant,
    pub shots: usize,
    pub seed: u64,
    /// Cells swept by `dmpt sweep`.
    pub sweep_variants: Vec<Variant>,
    pub sweep_shots: Vec<usize>,
    pub sweep_seeds: Vec<u64>,

    // prompts
    pub context_len: usize,
    pub template_context: bool,
    pub prompt_len: usize,
    /// Plain prompts in layers `1..=prompt_depth`; `None` means every layer.
    pub prompt_depth: Option<usize>,
    pub cavpt_layers: Vec<LayerRef>,
    pub k_n: usize,
    pub shared_generator: bool,
    pub aux_input: AuxInput,
    pub init_std: f32,

    // objective and schedule
    pub alpha: f32,
    pub beta: f32,
    /// `None`: 100 epochs, 60 for one shot.
    pub epochs: Option<usize>,
    pub warmup_epochs: usize,
    pub lr_text: f64,
    pub lr_visual: f64,
    pub fixed_warmup_lr: f64,
    pub fixed_warmup_epochs: usize,
    pub batch_size: usize,

    // backbone
    pub backbone: BackboneConfig,
    pub weights: Option<PathBuf>,

    // data and outputs
    pub data: PathBuf,
    pub out: PathBuf,
    pub attmaps: usize,
    pub classes: Vec<(ShapeKind, Color)>,
    pub samples_per_class: usize,
    pub distractors: usize,
    pub noise_std: f32,
    pub data_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        Self {
            variant: Variant::Dpt,
            shots: 16,
            seed: 1,
            sweep_variants: vec![Variant::Coop, Variant::Vpt, Variant::Vlp, Variant::Dpt],
            sweep_shots: vec![16],
            sweep_seeds: vec![1, 2, 3],
            context_len: 16,
            template_context: false,
            prompt_len: 10,
            prompt_depth: None,
            cavpt_layers: vec![LayerRef::Last],
            k_n: 10,
            shared_generator: true,
            aux_input: AuxInput::Combined,
            init_std: 0.02,
            alpha: 0.3,
            beta: 0.1,
            epochs: None,
            warmup_epochs: 30,
            lr_text: 2e-3,
            lr_visual: 1e-3,
            fixed_warmup_lr: 1e-5,
            fixed_warmup_epochs: 10,
            batch_size: 32,
            backbone: BackboneConfig::default(),
            weights: None,
            data: PathBuf::from("data"),
            out: PathBuf::from("runs"),
            attmaps: 0,
            classes: synth.classes,
            samples_per_class: synth.samples_per_class,
            distractors: synth.distractor_count,
            noise_std: synth.noise_std,
            data_seed: 0,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| DptError::Configuration(format!("{key}: cannot parse {value:?}")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(DptError::Configuration(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn optional(value: &str) -> Option<&str> {
    match value {
        "" | "auto" | "none" => None,
        v => Some(v),
    }
}

impl ExperimentConfig {
    /// Every key, in file order.
    pub const KEYS: &'static [&'static str] = &[
        "variant", "shots", "seed", "sweep_variants", "sweep_shots", "sweep_seeds", "context_len",
        "template_context", "prompt_len", "prompt_depth", "cavpt_layers", "k_n", "shared_generator",
        "aux_input", "init_std", "alpha", "beta", "epochs", "warmup_epochs", "lr_text", "lr_visual",
        "fixed_warmup_lr", "fixed_warmup_epochs", "batch_size", "image_size", "patch_size", "d_visual",
        "d_text", "embed_dim", "visual_layers", "text_layers", "heads", "temperature", "backbone_init", "backbone_seed",
        "weights", "data", "out", "attmaps", "classes", "samples_per_class", "distractors", "noise_std",
        "data_seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let b = &mut self.backbone;
        match key {
            "variant" => self.variant = v.parse()?,
            "shots" => self.shots = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "sweep_variants" => {
                self.sweep_variants = v.split(',').map(|p| p.trim().parse()).collect::<Result<_>>()?
            }
            "sweep_shots" => self.sweep_shots = list(v, key)?,
            "sweep_seeds" => self.sweep_seeds = list(v, key)?,
            "context_len" => self.context_len = num(key, v)?,
            "template_context" => self.template_context = boolean(key, v)?,
            "prompt_len" => self.prompt_len = num(key, v)?,
            "prompt_depth" => self.prompt_depth = optional(v).map(|d| num(key, d)).transpose()?,
            "cavpt_layers" => self.cavpt_layers = parse_layers(v)?,
            "k_n" => self.k_n = num(key, v)?,
            "shared_generator" => self.shared_generator = boolean(key, v)?,
            "aux_input" => self.aux_input = v.parse()?,
            "init_std" => self.init_std = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "beta" => self.beta = num(key, v)?,
            "epochs" => self.epochs = optional(v).map(|d| num(key, d)).transpose()?,
            "warmup_epochs" => self.warmup_epochs = num(key, v)?,
            "lr_text" => self.lr_text = num(key, v)?,
            "lr_visual" => self.lr_visual = num(key, v)?,
            "fixed_warmup_lr" => self.fixed_warmup_lr = num(key, v)?,
            "fixed_warmup_epochs" => self.fixed_warmup_epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "image_size" => b.image_size = num(key, v)?,
            "patch_size" => b.patch_size = num(key, v)?,
            "d_visual" => b.d_visual = num(key, v)?,
            "d_text" => b.d_text = num(key, v)?,
            "embed_dim" => b.embed_dim = num(key, v)?,
            "visual_layers" => b.visual_layers = num(key, v)?,
            "text_layers" => b.text_layers = num(key, v)?,
            "heads" => b.heads = num(key, v)?,
            "temperature" => b.temperature = num(key, v)?,
            "backbone_init" => b.linear_init = v.parse()?,
            "backbone_seed" => b.seed = num(key, v)?,
            "weights" => self.weights = optional(v).map(PathBuf::from),
            "data" => self.data = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "attmaps" => self.attmaps = num(key, v)?,
            "classes" => self.classes = v.split(',').map(|c| parse_class(c.trim())).collect::<Result<_>>()?,
            "samples_per_class" => self.samples_per_class = num(key, v)?,
            "distractors" => self.distractors = num(key, v)?,
            "noise_std" => self.noise_std = num(key, v)?,
            "data_seed" => self.data_seed = num(key, v)?,
            _ => return Err(DptError::Usage(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let b = &self.backbone;
        let opt = |o: Option<usize>| o.map_or("auto".to_string(), |v| v.to_string());
        Some(match key {
            "variant" => self.variant.to_string(),
            "shots" => self.shots.to_string(),
            "seed" => self.seed.to_string(),
            "sweep_variants" => join(&self.sweep_variants),
            "sweep_shots" => join(&self.sweep_shots),
            "sweep_seeds" => join(&self.sweep_seeds),
            "context_len" => self.context_len.to_string(),
            "template_context" => self.template_context.to_string(),
            "prompt_len" => self.prompt_len.to_string(),
            "prompt_depth" => opt(self.prompt_depth),
            "cavpt_layers" => format_layers(&self.cavpt_layers),
            "k_n" => self.k_n.to_string(),
            "shared_generator" => self.shared_generator.to_string(),
            "aux_input" => self.aux_input.name().to_string(),
            "init_std" => self.init_std.to_string(),
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "epochs" => opt(self.epochs),
            "warmup_epochs" => self.warmup_epochs.to_string(),
            "lr_text" => self.lr_text.to_string(),
            "lr_visual" => self.lr_visual.to_string(),
            "fixed_warmup_lr" => self.fixed_warmup_lr.to_string(),
            "fixed_warmup_epochs" => self.fixed_warmup_epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "image_size" => b.image_size.to_string(),
            "patch_size" => b.patch_size.to_string(),
            "d_visual" => b.d_visual.to_string(),
            "d_text" => b.d_text.to_string(),
            "embed_dim" => b.embed_dim.to_string(),
            "visual_layers" => b.visual_layers.to_string(),
            "text_layers" => b.text_layers.to_string(),
            "heads" => b.heads.to_string(),
            "temperature" => b.temperature.to_string(),
            "backbone_init" => b.linear_init.name().to_string(),
            "backbone_seed" => b.seed.to_string(),
            "weights" => self.weights.as_ref().map_or("none".into(), |p| p.display().to_string()),
            "data" => self.data.display().to_string(),
            "out" => self.out.display().to_string(),
            "attmaps" => self.attmaps.to_string(),
            "classes" => self.class_names().join(","),
            "samples_per_class" => self.samples_per_class.to_string(),
            "distractors" => self.distractors.to_string(),
            "noise_std" => self.noise_std.to_string(),
            "data_seed" => self.data_seed.to_string(),
            _ => return None,
        })
    }

    /// Parses file text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DptError::Configuration(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| DptError::Configuration(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `--key value` and `--key=value` pairs.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, args: &[S]) -> Result<()> {
        let mut it = args.iter().map(AsRef::as_ref);
        while let Some(arg) = it.next() {
            let key = arg
                .strip_prefix("--")
                .ok_or_else(|| DptError::Usage(format!("expected --key value, got {arg:?}")))?;
            match key.split_once('=') {
                Some((k, v)) => self.set(&k.replace('-', "_"), v)?,
                None => {
                    let v = it.next().ok_or_else(|| DptError::Usage(format!("--{key} needs a value")))?;
                    self.set(&key.replace('-', "_"), v)?;
                }
            }
        }
        Ok(())
    }

    /// Canonical file text; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# dmpt experiment configuration\n");
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("listed key"));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.synthetic_spec().class_names()
    }

    pub fn effective_epochs(&self) -> usize {
        self.epochs.unwrap_or(if self.shots == 1 { 60 } else { 100 })
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        let bad = |m: String| Err(DptError::Configuration(m));
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad(format!("alpha and beta must be non-negative, got {} and {}", self.alpha, self.beta));
        }
        if self.warmup_epochs > self.effective_epochs() {
            return bad(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs,
                self.effective_epochs()
            ));
        }
        if self.fixed_warmup_epochs > self.effective_epochs() {
            return bad(format!(
                "fixed_warmup_epochs {} exceeds epochs {}",
                self.fixed_warmup_epochs,
                self.effective_epochs()
            ));
        }
        if self.shots == 0 || self.batch_size == 0 {
            return bad("shots and batch_size must be positive".into());
        }
        if self.context_len == 0 {
            return bad("context_len must be at least 1".into());
        }
        if !(self.lr_text > 0.0 && self.lr_visual > 0.0 && self.fixed_warmup_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if let Some(d) = self.prompt_depth {
            if d > self.backbone.visual_layers {
                return bad(format!("prompt_depth {d} exceeds {} layers", self.backbone.visual_layers));
            }
        }
        self.cavpt_layer_set()?;
        if self.context_len + 3 > self.backbone.max_text_len {
            return bad(format!(
                "context_len {} does not fit max_text_len {}",
                self.context_len, self.backbone.max_text_len
            ));
        }
        Ok(())
    }

    pub fn cavpt_layer_set(&self) -> Result<BTreeSet<usize>> {
        self.cavpt_layers.iter().map(|l| l.resolve(self.backbone.visual_layers)).collect()
    }

    pub fn prompt_layout(&self) -> Result<PromptLayout> {
        let layers = self.backbone.visual_layers;
        Ok(PromptLayout {
            variant: self.variant,
            context_len: self.context_len,
            template_context: self.template_context,
            prompt_len: self.prompt_len,
            prompt_depth: self.prompt_depth.unwrap_or(layers),
            cavpt_layers: self.cavpt_layer_set()?,
            k_n: self.k_n,
            shared_generator: self.shared_generator,
            aux_input: self.aux_input,
            init_std: self.init_std,
            seed: self.seed,
        })
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes.clone(),
            image_size: self.backbone.image_size,
            distractor_count: self.distractors,
            noise_std: self.noise_std,
            samples_per_class: self.samples_per_class,
            ..SyntheticSpec::default()
        }
    }
}
