//! Trains DPT prompts on a freshly generated synthetic task and reports
//! support/query accuracy and attention focus per epoch.
//!
//! cargo run --release --example train_dpt -- [epochs] [seed]

use std::time::Instant;

use dmpt::backbone::{DualEncoderWeights, Vocabulary};
use dmpt::harness::eval::{accuracy, mean_focus};
use dmpt::harness::synthetic::generate;
use dmpt::prompt::{PromptSet, PromptedModel};
use dmpt::trainer::{sample_few_shot, ExperimentConfig, TrainSettings, Trainer};

fn main() -> dmpt::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = ExperimentConfig::default();
    cfg.epochs = Some(args.first().map_or(40, |a| a.parse().expect("epochs")));
    cfg.seed = args.get(1).map_or(1, |a| a.parse().expect("seed"));
    cfg.warmup_epochs = cfg.warmup_epochs.min(cfg.effective_epochs() / 3);
    cfg.fixed_warmup_epochs = cfg.fixed_warmup_epochs.min(cfg.effective_epochs() / 10);
    cfg.apply_overrides(&args.iter().skip(2).cloned().collect::<Vec<_>>())?;
    cfg.validate()?;

    let data = generate(&cfg.synthetic_spec(), cfg.data_seed)?;
    let task = sample_few_shot(&data, cfg.shots, cfg.seed)?;
    let weights = DualEncoderWeights::init(&cfg.backbone)?;
    let vocab = Vocabulary::standard();
    let model = PromptedModel::new(&weights, &vocab, &task.class_names)?;
    let prompts = PromptSet::init(&cfg.prompt_layout()?, &weights, &vocab, &task.class_names)?;

    let before = mean_focus(&model, &prompts, &task.query)?;
    println!("before training: support acc {:.4}", accuracy(&model, &prompts, &task.support)?);
    let mut trainer = Trainer::new(&model, prompts, TrainSettings::from_config(&cfg), task.support.len())?;
    let t0 = Instant::now();
    while trainer.epoch < trainer.settings.epochs {
        let reports = trainer.train_epoch(&task.support)?;
        let last = reports.last().expect("one step");
        if trainer.epoch % 5 == 0 || trainer.epoch == trainer.settings.epochs {
            println!(
                "epoch {:3} {:>6} total {:.4} l_ce {:.4} l_ca {:.4} support {:.4} [{:.1}s]",
                trainer.epoch,
                last.phase.name(),
                last.total,
                last.l_ce,
                last.l_ca,
                accuracy(&model, &trainer.prompts, &task.support)?,
                t0.elapsed().as_secs_f64()
            );
        }
    }
    println!("query accuracy {:.4}", accuracy(&model, &trainer.prompts, &task.query)?);
    println!("attention focus {:.4} -> {:.4}", before, mean_focus(&model, &trainer.prompts, &task.query)?);
    Ok(())
}
