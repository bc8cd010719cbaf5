//! Synthetic multi-object shape scenes.
//!
//! Each image contains exactly one class-determining (shape, colour) object
//! plus `distractor_count` objects whose (shape, colour) pair belongs to no
//! class. The pixel bounding box of the class object is recorded so attention
//! maps can be scored against it.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::pnm::{self, RgbImage};
use crate::backbone::class_word;
use crate::error::{DptError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
    Cross,
    Stripe,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Square,
        ShapeKind::Circle,
        ShapeKind::Triangle,
        ShapeKind::Cross,
        ShapeKind::Stripe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Cross => "cross",
            ShapeKind::Stripe => "stripe",
        }
    }

    /// Whether offset `(dx, dy)` inside an `s × s` box is painted.
    fn covers(self, dx: usize, dy: usize, s: usize) -> bool {
        let (x, y, s) = (dx as f32 + 0.5, dy as f32 + 0.5, s as f32);
        match self {
            ShapeKind::Square => true,
            ShapeKind::Circle => {
                let c = s / 2.0;
                (x - c).powi(2) + (y - c).powi(2) <= c * c
            }
            ShapeKind::Triangle => {
                // apex at top centre, base along the bottom edge
                let half = 0.5 * s * y / s;
                (x - s / 2.0).abs() <= half
            }
            ShapeKind::Cross => {
                let arm = s / 3.0;
                let lo = (s - arm) / 2.0;
                (x >= lo && x <= lo + arm) || (y >= lo && y <= lo + arm)
            }
            ShapeKind::Stripe => (dy / 2) % 2 == 0,
        }
    }
}

impl FromStr for ShapeKind {
    type Err = DptError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DptError::Usage(format!("unknown shape {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Magenta,
    Cyan,
    White,
    Orange,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Magenta,
        Color::Cyan,
        Color::White,
        Color::Orange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Magenta => "magenta",
            Color::Cyan => "cyan",
            Color::White => "white",
            Color::Orange => "orange",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [230, 40, 40],
            Color::Green => [40, 200, 60],
            Color::Blue => [50, 80, 235],
            Color::Yellow => [235, 220, 40],
            Color::Magenta => [220, 50, 210],
            Color::Cyan => [40, 215, 220],
            Color::White => [240, 240, 240],
            Color::Orange => [245, 140, 30],
        }
    }
}

impl FromStr for Color {
    type Err = DptError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| DptError::Usage(format!("unknown colour {s:?}")))
    }
}

/// Pixel box, end-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    /// Overlap area with another box.
    pub fn intersection(&self, other: &BoundingBox) -> usize {
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        w * h
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.x0, self.y0, self.x1, self.y1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: Vec<(ShapeKind, Color)>,
    pub image_size: usize,
    pub distractor_count: usize,
    pub noise_std: f32,
    pub samples_per_class: usize,
    /// Inclusive object side-length range in pixels.
    pub min_object: usize,
    pub max_object: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: vec![
                (ShapeKind::Square, Color::Red),
                (ShapeKind::Circle, Color::Green),
                (ShapeKind::Triangle, Color::Blue),
                (ShapeKind::Cross, Color::Yellow),
            ],
            image_size: 32,
            distractor_count: 1,
            noise_std: 0.05,
            samples_per_class: 40,
            min_object: 9,
            max_object: 13,
        }
    }
}

impl SyntheticSpec {
    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|&(s, c)| class_word(s, c)).collect()
    }

    fn distractor_pairs(&self) -> Vec<(ShapeKind, Color)> {
        Color::ALL
            .iter()
            .flat_map(|&c| ShapeKind::ALL.iter().map(move |&s| (s, c)))
            .filter(|p| !self.classes.contains(p))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        for (i, a) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(a) {
                return Err(DptError::Configuration(format!(
                    "class {} {} listed twice",
                    a.1.name(),
                    a.0.name()
                )));
            }
        }
        if self.classes.is_empty() {
            return Err(DptError::Configuration("at least one class required".into()));
        }
        if self.min_object == 0 || self.min_object > self.max_object || self.max_object > self.image_size {
            return Err(DptError::Configuration(format!(
                "object size range {}..={} invalid for {} px images",
                self.min_object, self.max_object, self.image_size
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(DptError::Configuration("noise_std must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Path relative to the dataset root, e.g. `red_square/0003.ppm`.
    pub id: String,
    pub label: usize,
    pub image: RgbImage,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

fn paint(img: &mut RgbImage, kind: ShapeKind, color: Color, x: usize, y: usize, s: usize) -> BoundingBox {
    let rgb = color.rgb();
    let mut bb = BoundingBox { x0: usize::MAX, y0: usize::MAX, x1: 0, y1: 0 };
    for dy in 0..s {
        for dx in 0..s {
            if kind.covers(dx, dy, s) {
                let (px, py) = (x + dx, y + dy);
                img.put(px, py, rgb);
                bb.x0 = bb.x0.min(px);
                bb.y0 = bb.y0.min(py);
                bb.x1 = bb.x1.max(px + 1);
                bb.y1 = bb.y1.max(py + 1);
            }
        }
    }
    bb
}

/// Renders `samples_per_class` scenes per class, reproducibly from `seed`.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::derived(seed, 0x5EED_DA7A);
    let pairs = spec.distractor_pairs();
    let noise = Normal::new(0.0f32, spec.noise_std.max(f32::MIN_POSITIVE))
        .map_err(|e| DptError::Configuration(format!("noise: {e}")))?;
    let size = spec.image_size;
    let names = spec.class_names();
    let mut samples = Vec::with_capacity(spec.classes.len() * spec.samples_per_class);

    for (label, &(kind, color)) in spec.classes.iter().enumerate() {
        for n in 0..spec.samples_per_class {
            let mut img = RgbImage::new(size, size);
            let s = rng.random_range(spec.min_object..=spec.max_object);
            let (tx, ty) = (rng.random_range(0..=size - s), rng.random_range(0..=size - s));
            let target = BoundingBox { x0: tx, y0: ty, x1: tx + s, y1: ty + s };

            for _ in 0..spec.distractor_count {
                let Some(&(dk, dc)) = pairs.choose(&mut rng) else { break };
                let ds = rng.random_range(spec.min_object..=spec.max_object);
                let mut placed = None;
                for _ in 0..64 {
                    let (x, y) = (rng.random_range(0..=size - ds), rng.random_range(0..=size - ds));
                    let candidate = BoundingBox { x0: x, y0: y, x1: x + ds, y1: y + ds };
                    if candidate.intersection(&target) == 0 {
                        placed = Some((x, y));
                        break;
                    }
                }
                if let Some((x, y)) = placed {
                    paint(&mut img, dk, dc, x, y, ds);
                }
            }
            let bbox = paint(&mut img, kind, color, tx, ty, s);

            if spec.noise_std > 0.0 {
                for v in img.data.iter_mut() {
                    let noisy = *v as f32 / 255.0 + noise.sample(&mut rng);
                    *v = (noisy.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
            samples.push(Sample {
                id: format!("{}/{n:04}.ppm", names[label]),
                label,
                image: img,
                bbox,
            });
        }
    }
    Ok(Dataset { class_names: names, samples })
}

pub const MANIFEST: &str = "manifest.tsv";

/// Writes `root/<class>/<id>.ppm` plus `root/manifest.tsv`.
pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root)?;
    let mut manifest = String::from("# kind\tname-or-path\tlabel\tx0\ty0\tx1\ty1\n");
    for (i, name) in dataset.class_names.iter().enumerate() {
        fs::create_dir_all(root.join(name))?;
        manifest.push_str(&format!("class\t{name}\t{i}\n"));
    }
    for s in &dataset.samples {
        pnm::write_ppm(&root.join(&s.id), &s.image)?;
        manifest.push_str(&format!("sample\t{}\t{}\t{}\n", s.id, s.label, s.bbox));
    }
    fs::write(root.join(MANIFEST), manifest)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`] (or laid out the same way).
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest_path = root.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| DptError::Data(format!("cannot read {}: {e}", manifest_path.display())))?;
    let mut class_names = Vec::new();
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let bad = || DptError::Data(format!("{}:{}: malformed line {line:?}", manifest_path.display(), lineno + 1));
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        match f.as_slice() {
            ["class", name, idx] => {
                if idx.parse::<usize>().ok() != Some(class_names.len()) {
                    return Err(bad());
                }
                class_names.push(name.to_string());
            }
            ["sample", id, label, x0, y0, x1, y1] => {
                let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
                let label = num(label)?;
                if label >= class_names.len() {
                    return Err(bad());
                }
                let image = pnm::read_ppm(&root.join(id))?;
                let bbox = BoundingBox { x0: num(x0)?, y0: num(y0)?, x1: num(x1)?, y1: num(y1)? };
                if !bbox.within(image.width, image.height) {
                    return Err(DptError::Data(format!("{id}: bounding box outside the image")));
                }
                samples.push(Sample { id: id.to_string(), label, image, bbox });
            }
            _ => return Err(bad()),
        }
    }
    Ok(Dataset { class_names, samples })
}
