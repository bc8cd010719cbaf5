//! `dmpt`: generate data, train, evaluate, export attention maps, sweep.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dmpt::backbone::{DualEncoderWeights, Vocabulary};
use dmpt::harness::eval::{evaluate, export_attention_map};
use dmpt::harness::experiment::{format_results, load_config, load_inputs, run_cell, run_from_files, write_results};
use dmpt::harness::pnm::read_ppm;
use dmpt::harness::synthetic::{generate, write_dataset};
use dmpt::prompt::{PromptLayout, PromptSet, PromptedModel, Variant};
use dmpt::trainer::{sample_few_shot, ExperimentConfig};
use dmpt::{DptError, Result, Tensor};

#[derive(Parser)]
#[command(name = "dmpt", version, about = "Dual-modality prompt tuning on a desk-scale dual encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Any configuration key as `--key value`
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic shapes dataset into `data`
    GenData(Common),
    /// Train one (variant, shots, seed) cell and write its artefacts into `out`
    Train(Common),
    /// Query accuracy of a prompt pack (or of zero-shot without one)
    Eval {
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the attention map of one image as a PGM
    Attmap {
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Every variant × shots × seed cell, plus results.csv
    Sweep(Common),
}

impl Common {
    /// Removes `--name value` / `--name=value` from the overrides, so subcommand
    /// flags may appear anywhere on the line.
    fn take(&mut self, name: &str, current: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let flag = format!("--{name}");
        let prefix = format!("{flag}=");
        let mut found = current;
        let mut i = 0;
        while i < self.overrides.len() {
            if self.overrides[i] == flag {
                let v = self
                    .overrides
                    .get(i + 1)
                    .ok_or_else(|| DptError::Usage(format!("{flag} needs a value")))?
                    .clone();
                self.overrides.drain(i..i + 2);
                found = Some(v.into());
            } else if let Some(v) = self.overrides[i].strip_prefix(&prefix) {
                found = Some(v.into());
                self.overrides.remove(i);
            } else {
                i += 1;
            }
        }
        Ok(found)
    }
}

fn required(p: Option<PathBuf>, name: &str) -> Result<PathBuf> {
    p.ok_or_else(|| DptError::Usage(format!("--{name} is required")))
}

fn config(c: &Common) -> Result<ExperimentConfig> {
    load_config(c.config.as_deref(), &c.overrides)
}

/// A trained pack, or the untrained zero-shot set for `class_names`.
fn prompts_for(
    path: Option<&Path>,
    weights: &DualEncoderWeights,
    vocab: &Vocabulary,
    class_names: &[String],
) -> Result<PromptSet> {
    match path {
        Some(p) => {
            let (set, classes) = PromptSet::load(p, weights, vocab)?;
            if classes != class_names {
                return Err(DptError::Data(format!(
                    "prompt pack classes {classes:?} differ from dataset classes {class_names:?}"
                )));
            }
            Ok(set)
        }
        None => {
            let layout = PromptLayout::defaults(Variant::ZeroShot, weights.config.visual_layers);
            PromptSet::init(&layout, weights, vocab, class_names)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = config(&c)?;
            let data = generate(&cfg.synthetic_spec(), cfg.data_seed)?;
            write_dataset(&data, &cfg.data)?;
            println!("wrote {} images to {}", data.samples.len(), cfg.data.display());
        }
        Command::Train(c) => {
            let cfg = config(&c)?;
            let (data, weights, vocab) = load_inputs(&cfg)?;
            let cell = run_cell(&cfg, &data, &weights, &vocab, Some(&cfg.out))?;
            write_results(std::slice::from_ref(&cell.row), &cfg.out.join("results.csv"))?;
            cfg.save(&cfg.out.join("config.txt"))?;
            print!("{}", format_results(&[cell.row])?);
        }
        Command::Eval { prompts, mut common } => {
            let prompts = common.take("prompts", prompts)?;
            let cfg = config(&common)?;
            let (data, weights, vocab) = load_inputs(&cfg)?;
            let task = sample_few_shot(&data, cfg.shots, cfg.seed)?;
            let set = prompts_for(prompts.as_deref(), &weights, &vocab, &task.class_names)?;
            let model = PromptedModel::new(&weights, &vocab, &task.class_names)?;
            let acc = evaluate(&task, &model, &set)?;
            println!("{}\t{} query images\taccuracy {acc:.4}", set.variant, task.query.len());
        }
        Command::Attmap { image, output, prompts, mut common } => {
            let prompts = common.take("prompts", prompts)?;
            let image = required(common.take("image", image)?, "image")?;
            let output = required(common.take("output", output)?, "output")?;
            let cfg = config(&common)?;
            let weights = DualEncoderWeights::init_or_load(&cfg.backbone, cfg.weights.as_deref())?;
            let vocab = Vocabulary::standard();
            let class_names = cfg.class_names();
            let set = prompts_for(prompts.as_deref(), &weights, &vocab, &class_names)?;
            let model = PromptedModel::new(&weights, &vocab, &class_names)?;
            let img = read_ppm(&image)?;
            let tensor = Tensor::new(img.to_chw(), &[3, img.height, img.width])?;
            let map = export_attention_map(&model, &set, &tensor, &output)?;
            println!("wrote {}×{} map to {}", map.width, map.height, output.display());
        }
        Command::Sweep(c) => {
            let (cfg, rows) = run_from_files(c.config.as_deref(), &c.overrides)?;
            print!("{}", format_results(&rows)?);
            eprintln!("results in {}", cfg.out.join("results.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dmpt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
