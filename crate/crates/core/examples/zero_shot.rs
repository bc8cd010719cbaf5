//! Zero-shot classification with the hand-written "a photo of a [CLASS]" prompt.

use dmpt::backbone::{zero_shot_logits, BackboneConfig, DualEncoderWeights, Vocabulary};
use dmpt::harness::synthetic::{generate, SyntheticSpec};
use dmpt::prompt::{argmax, template_features};
use dmpt::Tensor;

fn main() -> dmpt::Result<()> {
    let weights = DualEncoderWeights::init(&BackboneConfig::default())?;
    let vocab = Vocabulary::standard();
    let data = generate(&SyntheticSpec { samples_per_class: 10, ..Default::default() }, 0)?;
    let classes = template_features(&weights, &vocab, &data.class_names)?;

    let k = data.class_names.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for s in &data.samples {
        let image = Tensor::new(s.image.to_chw(), &[3, s.image.height, s.image.width])?;
        let x = weights.image_encode(&image, &[], None)?.feature;
        let logits = zero_shot_logits(&x, &classes, weights.config.temperature)?;
        confusion[s.label][argmax(&logits.to_vec())] += 1;
    }

    println!("rows: true class, columns: predicted");
    for (name, row) in data.class_names.iter().zip(&confusion) {
        println!("{name:<14} {row:?}");
    }
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    // the backbone is random, so expect roughly chance
    println!("accuracy {:.4}", correct as f64 / data.samples.len() as f64);
    Ok(())
}
