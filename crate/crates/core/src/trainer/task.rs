//! Seeded few-shot splits of a labelled dataset.

use rand::seq::SliceRandom;

use crate::error::{DptError, Result};
use crate::harness::synthetic::{BoundingBox, Dataset};
use crate::rng;
use crate::tensor::Tensor;

/// One labelled image ready for the encoder.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    /// `[3 × H × W]` in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone)]
pub struct FewShotTask {
    pub class_names: Vec<String>,
    pub shots: usize,
    /// Class-major: `shots` examples of class 0, then class 1, and so on.
    pub support: Vec<Example>,
    pub query: Vec<Example>,
}

impl FewShotTask {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

const SAMPLING_STREAM: u64 = 0x5A_3D1E;

/// Draws `shots` support images per class without replacement; the rest become queries.
pub fn sample_few_shot(dataset: &Dataset, shots: usize, seed: u64) -> Result<FewShotTask> {
    if shots == 0 {
        return Err(DptError::Data("shots must be positive".into()));
    }
    let mut rng = rng::derived(seed, SAMPLING_STREAM);
    let mut support = Vec::new();
    let mut query = Vec::new();
    for (label, name) in dataset.class_names.iter().enumerate() {
        let mut members: Vec<usize> = (0..dataset.samples.len())
            .filter(|&i| dataset.samples[i].label == label)
            .collect();
        if members.len() < shots {
            return Err(DptError::Data(format!(
                "class {name} has {} images, {shots} shots requested",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let (s, q) = members.split_at(shots);
        let mut q = q.to_vec();
        q.sort_unstable();
        for (dst, idx) in [(&mut support, s.to_vec()), (&mut query, q)] {
            for i in idx {
                let sample = &dataset.samples[i];
                let img = &sample.image;
                dst.push(Example {
                    id: sample.id.clone(),
                    image: Tensor::new(img.to_chw(), &[3, img.height, img.width])?,
                    label,
                    bbox: sample.bbox,
                });
            }
        }
    }
    Ok(FewShotTask { class_names: dataset.class_names.clone(), shots, support, query })
}
