//! A small variant × seed sweep written to a results table.
//!
//! cargo run --release --example sweep -- [epochs] [out_dir]

use std::path::PathBuf;

use dmpt::backbone::{DualEncoderWeights, Vocabulary};
use dmpt::harness::experiment::{format_results, run_experiment};
use dmpt::harness::synthetic::generate;
use dmpt::trainer::ExperimentConfig;

fn main() -> dmpt::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().unwrap_or_else(|| "10".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| "sweep-out".into()));

    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(&[
        "--sweep_variants", "zeroshot,coop,vpt,vlp,dpt",
        "--sweep_shots", "4",
        "--sweep_seeds", "1,2",
        "--epochs", &epochs,
        "--warmup_epochs", "2",
        "--fixed_warmup_epochs", "1",
        "--lr_text", "1e-2",
        "--lr_visual", "1e-2",
    ])?;
    cfg.validate()?;

    let data = generate(&cfg.synthetic_spec(), cfg.data_seed)?;
    let weights = DualEncoderWeights::init(&cfg.backbone)?;
    let rows = run_experiment(&cfg, &data, &weights, &Vocabulary::standard(), Some(&out))?;
    print!("{}", format_results(&rows)?);
    println!("packs, logs and results.csv in {}", out.display());
    Ok(())
}
