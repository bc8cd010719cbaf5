//! Writes class-token attention maps (PGM) next to the input scenes (PPM),
//! before and after a short DPT run, and prints the bounding-box focus.
//!
//! cargo run --release --example attention_map -- [out_dir] [epochs]

use std::fs;
use std::path::PathBuf;

use dmpt::backbone::{DualEncoderWeights, Vocabulary};
use dmpt::harness::eval::{attention_focus, export_attention_map, patch_attention};
use dmpt::harness::pnm::write_ppm;
use dmpt::harness::synthetic::generate;
use dmpt::prompt::{PromptSet, PromptedModel};
use dmpt::trainer::{sample_few_shot, ExperimentConfig, TrainSettings, Trainer};

fn main() -> dmpt::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "attmaps".into()));
    let epochs: usize = args.next().map_or(30, |a| a.parse().expect("epochs"));
    fs::create_dir_all(&out)?;

    let cfg = ExperimentConfig {
        epochs: Some(epochs),
        warmup_epochs: epochs / 3,
        fixed_warmup_epochs: epochs / 10,
        lr_text: 1e-2,
        lr_visual: 1e-2,
        ..Default::default()
    };
    let data = generate(&cfg.synthetic_spec(), cfg.data_seed)?;
    let task = sample_few_shot(&data, cfg.shots, cfg.seed)?;
    let weights = DualEncoderWeights::init(&cfg.backbone)?;
    let vocab = Vocabulary::standard();
    let model = PromptedModel::new(&weights, &vocab, &task.class_names)?;
    let prompts = PromptSet::init(&cfg.prompt_layout()?, &weights, &vocab, &task.class_names)?;

    let shown: Vec<_> = task.query.iter().step_by(task.query.len() / 4).take(4).collect();
    let dump = |tag: &str, set: &PromptSet| -> dmpt::Result<()> {
        for (i, ex) in shown.iter().enumerate() {
            let grid = patch_attention(&model, set, &ex.image)?;
            let focus = attention_focus(&grid, &ex.bbox, &weights.config);
            export_attention_map(&model, set, &ex.image, &out.join(format!("{i}_{tag}.pgm")))?;
            println!("{:<22} {tag:<6} focus {focus:.4}", ex.id);
        }
        Ok(())
    };
    for (i, ex) in shown.iter().enumerate() {
        let s = &data.samples.iter().find(|s| s.id == ex.id).expect("query comes from the dataset").image;
        write_ppm(&out.join(format!("{i}_scene.ppm")), s)?;
    }

    dump("before", &prompts)?;
    let mut trainer = Trainer::new(&model, prompts, TrainSettings::from_config(&cfg), task.support.len())?;
    trainer.fit(&task.support)?;
    dump("after", &trainer.prompts)?;
    println!("maps in {}", out.display());
    Ok(())
}
