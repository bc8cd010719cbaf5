//! Saves the seeded backbone as a weight file, reloads it and confirms the
//! bytes match. A different seed gives different weights.

use dmpt::backbone::{BackboneConfig, DualEncoderWeights};

fn main() -> dmpt::Result<()> {
    let config = BackboneConfig::default();
    let weights = DualEncoderWeights::init(&config)?;
    let path = std::env::temp_dir().join("dmpt-backbone.dptw");
    weights.save(&path)?;

    let loaded = DualEncoderWeights::init_or_load(&config, Some(&path))?;
    println!("{} tensors, {} bytes on disk", weights.named_tensors().len(), std::fs::metadata(&path)?.len());
    for (name, t) in weights.named_tensors().iter().take(6) {
        println!("  {name:<24} {:?}", t.shape());
    }
    println!("reloaded identical: {}", loaded.fingerprint() == weights.fingerprint());

    let other = DualEncoderWeights::init(&BackboneConfig { seed: config.seed + 1, ..config.clone() })?;
    println!("other seed identical: {}", other.fingerprint() == weights.fingerprint());

    // a config that disagrees with the file header is refused
    let wrong = BackboneConfig { visual_layers: config.visual_layers + 1, ..config };
    match DualEncoderWeights::init_or_load(&wrong, Some(&path)) {
        Ok(_) => println!("mismatched config accepted?"),
        Err(e) => println!("mismatched config rejected: {e}"),
    }
    Ok(())
}
