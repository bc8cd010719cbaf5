//! Orchestration: one training cell, sweeps over cells, and the results table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::eval::{evaluate, export_attention_map};
use super::synthetic::{load_dataset, Dataset};
use crate::backbone::{DualEncoderWeights, Vocabulary};
use crate::error::{DptError, Result};
use crate::prompt::{PromptSet, PromptedModel, Variant};
use crate::trainer::{sample_few_shot, write_log, ExperimentConfig, LogRow, TrainSettings, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsRow {
    pub variant: Variant,
    pub shots: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub epochs: usize,
    pub seconds: f64,
}

/// Everything a single (variant, shots, seed) run leaves behind.
pub struct CellOutcome {
    pub row: ResultsRow,
    pub prompts: PromptSet,
    pub log: Vec<LogRow>,
}

pub const RESULTS_HEADER: &str = "variant,shots,seed,accuracy,epochs,seconds";

/// File stem for a cell's artefacts.
pub fn cell_name(variant: Variant, shots: usize, seed: u64) -> String {
    format!("{variant}_{shots}shot_seed{seed}")
}

/// Samples the task, trains, evaluates and, with `out`, writes the prompt
/// pack, training log and attention maps.
pub fn run_cell(
    config: &ExperimentConfig,
    dataset: &Dataset,
    weights: &DualEncoderWeights,
    vocab: &Vocabulary,
    out: Option<&Path>,
) -> Result<CellOutcome> {
    config.validate()?;
    let started = Instant::now();
    let task = sample_few_shot(dataset, config.shots, config.seed)?;
    let model = PromptedModel::new(weights, vocab, &task.class_names)?;
    let prompts = PromptSet::init(&config.prompt_layout()?, weights, vocab, &task.class_names)?;
    let mut trainer = Trainer::new(&model, prompts, TrainSettings::from_config(config), task.support.len())?;
    trainer.fit(&task.support)?;
    let accuracy = evaluate(&task, &model, &trainer.prompts)?;
    let row = ResultsRow {
        variant: config.variant,
        shots: config.shots,
        seed: config.seed,
        accuracy,
        epochs: trainer.epoch,
        seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let stem = cell_name(config.variant, config.shots, config.seed);
        trainer.prompts.save(&dir.join(format!("{stem}.dptp")), &task.class_names)?;
        write_log(&trainer.log, &dir.join(format!("{stem}.log.tsv")))?;
        if config.attmaps > 0 {
            let maps = dir.join("attmaps").join(&stem);
            fs::create_dir_all(&maps)?;
            for (i, ex) in task.query.iter().take(config.attmaps).enumerate() {
                export_attention_map(&model, &trainer.prompts, &ex.image, &maps.join(format!("{i:03}.pgm")))?;
            }
        }
    }
    let Trainer { prompts, log, .. } = trainer;
    Ok(CellOutcome { row, prompts, log })
}

/// Every (variant, shots, seed) cell of the sweep lists, in that nesting order.
pub fn run_experiment(
    config: &ExperimentConfig,
    dataset: &Dataset,
    weights: &DualEncoderWeights,
    vocab: &Vocabulary,
    out: Option<&Path>,
) -> Result<Vec<ResultsRow>> {
    let mut rows = Vec::new();
    for &variant in &config.sweep_variants {
        for &shots in &config.sweep_shots {
            for &seed in &config.sweep_seeds {
                let cell = ExperimentConfig { variant, shots, seed, ..config.clone() };
                rows.push(run_cell(&cell, dataset, weights, vocab, out)?.row);
            }
        }
    }
    if let Some(dir) = out {
        write_results(&rows, &dir.join("results.csv"))?;
        config.save(&dir.join("config.txt"))?;
    }
    Ok(rows)
}

/// Loads a config file, applies `--key value` overrides, loads data and
/// weights and runs the sweep into `config.out`.
pub fn run_from_files(config_path: Option<&Path>, overrides: &[String]) -> Result<(ExperimentConfig, Vec<ResultsRow>)> {
    let config = load_config(config_path, overrides)?;
    let (dataset, weights, vocab) = load_inputs(&config)?;
    let rows = run_experiment(&config, &dataset, &weights, &vocab, Some(&config.out))?;
    Ok((config, rows))
}

pub fn load_config(config_path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut config = match config_path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    config.apply_overrides(overrides)?;
    config.validate()?;
    Ok(config)
}

/// Dataset at `config.data`, backbone weights and the standard vocabulary.
pub fn load_inputs(config: &ExperimentConfig) -> Result<(Dataset, DualEncoderWeights, Vocabulary)> {
    let dataset = load_dataset(&config.data)?;
    let weights = DualEncoderWeights::init_or_load(&config.backbone, config.weights.as_deref())?;
    Ok((dataset, weights, Vocabulary::standard()))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation of accuracy for each (variant, shots).
pub fn summarize(rows: &[ResultsRow]) -> Vec<(Variant, usize, f64, f64)> {
    let mut keys: Vec<(Variant, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.variant, r.shots)) {
            keys.push((r.variant, r.shots));
        }
    }
    keys.into_iter()
        .map(|(v, s)| {
            let acc: Vec<f64> = rows.iter().filter(|r| r.variant == v && r.shots == s).map(|r| r.accuracy).collect();
            let (m, sd) = mean_std(&acc);
            (v, s, m, sd)
        })
        .collect()
}

/// CSV text: one line per row, then one `summary` line per (variant, shots)
/// whose accuracy field reads `mean±std`.
pub fn format_results(rows: &[ResultsRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(DptError::Data("no results to write".into()));
    }
    let mut s = format!("{RESULTS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.4},{},{:.3}", r.variant, r.shots, r.seed, r.accuracy, r.epochs, r.seconds);
    }
    for (v, shots, mean, sd) in summarize(rows) {
        let group: Vec<&ResultsRow> = rows.iter().filter(|r| r.variant == v && r.shots == shots).collect();
        let epochs = group.iter().map(|r| r.epochs).max().unwrap_or(0);
        let secs = group.iter().map(|r| r.seconds).sum::<f64>() / group.len() as f64;
        let _ = writeln!(s, "{v},{shots},summary,{mean:.4}±{sd:.4},{epochs},{secs:.3}");
    }
    Ok(s)
}

pub fn write_results(rows: &[ResultsRow], path: &Path) -> Result<()> {
    fs::write(path, format_results(rows)?)?;
    Ok(())
}

/// Default location of a cell's prompt pack under `out`.
pub fn prompt_pack_path(out: &Path, variant: Variant, shots: usize, seed: u64) -> PathBuf {
    out.join(format!("{}.dptp", cell_name(variant, shots, seed)))
}
