//! Trains CoOp-style text prompts briefly, saves them as a prompt pack,
//! loads the pack back and checks the predictions are unchanged.

use dmpt::backbone::{DualEncoderWeights, Vocabulary};
use dmpt::harness::eval::accuracy;
use dmpt::harness::synthetic::generate;
use dmpt::prompt::{PromptSet, PromptedModel, Variant};
use dmpt::trainer::{sample_few_shot, ExperimentConfig, TrainSettings, Trainer};

fn main() -> dmpt::Result<()> {
    let cfg = ExperimentConfig {
        variant: Variant::Coop,
        shots: 4,
        epochs: Some(20),
        warmup_epochs: 0,
        lr_text: 1e-2,
        ..Default::default()
    };
    let data = generate(&cfg.synthetic_spec(), 0)?;
    let task = sample_few_shot(&data, cfg.shots, cfg.seed)?;
    let weights = DualEncoderWeights::init(&cfg.backbone)?;
    let vocab = Vocabulary::standard();
    let model = PromptedModel::new(&weights, &vocab, &task.class_names)?;

    let prompts = PromptSet::init(&cfg.prompt_layout()?, &weights, &vocab, &task.class_names)?;
    let mut trainer = Trainer::new(&model, prompts, TrainSettings::from_config(&cfg), task.support.len())?;
    trainer.fit(&task.support)?;

    let dir = std::env::temp_dir().join("dmpt-prompt-pack");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("coop.dptp");
    trainer.prompts.save(&path, &task.class_names)?;
    let (loaded, classes) = PromptSet::load(&path, &weights, &vocab)?;

    for (name, t) in loaded.named_tensors() {
        println!("{name:<16} {:?}", t.shape());
    }
    let a = accuracy(&model, &trainer.prompts, &task.query)?;
    let b = accuracy(&model, &loaded, &task.query)?;
    println!("classes {classes:?}");
    println!("query accuracy trained {a:.4}, reloaded {b:.4}, pack {} bytes", std::fs::metadata(&path)?.len());
    assert_eq!(a, b);
    Ok(())
}
