//! Few-shot sampling, loss assembly and the SGD loop over learnable prompts.

mod config;
mod loss;
mod task;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

pub use config::{ExperimentConfig, LayerRef};
pub use loss::{loss_ca, loss_main, loss_total, objective, warmup_loss, BatchForward, LossReport, Phase};
pub use task::{sample_few_shot, Example, FewShotTask};

use crate::error::{DptError, Result};
use crate::prompt::{PromptSet, PromptedModel};
use crate::rng::{self, DetRng};
use crate::tensor::optim::{sgd_step, OptimizerState};
use crate::tensor::{backward, Tensor};

/// Knobs the loop itself needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f32,
    pub beta: f32,
    pub warmup_epochs: usize,
    pub lr_text: f64,
    pub lr_visual: f64,
    pub fixed_warmup_lr: f64,
    pub fixed_warmup_epochs: usize,
    pub seed: u64,
}

impl TrainSettings {
    pub fn from_config(c: &ExperimentConfig) -> Self {
        Self {
            epochs: c.effective_epochs(),
            batch_size: c.batch_size,
            alpha: c.alpha,
            beta: c.beta,
            warmup_epochs: c.warmup_epochs,
            lr_text: c.lr_text,
            lr_visual: c.lr_visual,
            fixed_warmup_lr: c.fixed_warmup_lr,
            fixed_warmup_epochs: c.fixed_warmup_epochs,
            seed: c.seed,
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub report: LossReport,
}

pub const LOG_HEADER: &str = "epoch\tstep\tphase\tlr\tl_ce\tl_ca\tl_coop\tl_vpt\ttotal";

impl LogRow {
    pub fn to_tsv(&self) -> String {
        let r = &self.report;
        format!(
            "{}\t{}\t{}\t{:e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch,
            self.step,
            r.phase.name(),
            self.lr,
            r.l_ce,
            r.l_ca,
            r.l_coop,
            r.l_vpt,
            r.total
        )
    }
}

pub fn write_log(rows: &[LogRow], path: &Path) -> Result<()> {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.to_tsv());
    }
    fs::write(path, s)?;
    Ok(())
}

const SHUFFLE_STREAM: u64 = 0x5_4FF1E;

/// Trains one prompt set on one task's support images.
pub struct Trainer<'m> {
    pub model: &'m PromptedModel<'m>,
    pub prompts: PromptSet,
    pub settings: TrainSettings,
    pub text_state: Option<OptimizerState>,
    pub visual_state: Option<OptimizerState>,
    pub epoch: usize,
    pub step: usize,
    pub log: Vec<LogRow>,
    plain_cache: Vec<Tensor>,
    rng: DetRng,
}

impl<'m> Trainer<'m> {
    /// `support_size` fixes the number of steps per epoch and so the schedule length.
    pub fn new(model: &'m PromptedModel<'m>, prompts: PromptSet, settings: TrainSettings, support_size: usize) -> Result<Self> {
        if support_size == 0 {
            return Err(DptError::Data("no support images".into()));
        }
        if settings.batch_size == 0 {
            return Err(DptError::Configuration("batch_size must be positive".into()));
        }
        let steps_per_epoch = support_size.div_ceil(settings.batch_size);
        let total = (settings.epochs * steps_per_epoch).max(1);
        let text_state = if prompts.text_parameters().is_empty() {
            None
        } else {
            Some(OptimizerState::cosine(settings.lr_text, total)?)
        };
        let visual_state = if prompts.visual_parameters().is_empty() {
            None
        } else {
            let warm = (settings.fixed_warmup_epochs * steps_per_epoch).min(total);
            Some(OptimizerState::cosine(settings.lr_visual, total)?.with_warmup(warm, settings.fixed_warmup_lr)?)
        };
        let rng = rng::derived(settings.seed, SHUFFLE_STREAM);
        Ok(Self {
            model,
            prompts,
            settings,
            text_state,
            visual_state,
            epoch: 0,
            step: 0,
            log: Vec::new(),
            plain_cache: Vec::new(),
            rng,
        })
    }

    /// Objective for the current epoch.
    pub fn phase(&self) -> Phase {
        if self.prompts.variant.has_guided_warmup() && self.epoch < self.settings.warmup_epochs {
            Phase::Warmup
        } else {
            Phase::Main
        }
    }

    /// Learning rate the next step will use, visual group first.
    pub fn current_lr(&self) -> f64 {
        self.visual_state
            .as_ref()
            .or(self.text_state.as_ref())
            .map_or(0.0, crate::tensor::optim::cosine_lr)
    }

    /// Forward, phase objective, backward and one SGD step per parameter group.
    pub fn train_step(&mut self, batch: &[&Example], plain: Option<&[Tensor]>) -> Result<LossReport> {
        let phase = self.phase();
        let (total, report) = BatchForward::run(self.model, &self.prompts, batch, plain, true)
            .and_then(|fwd| objective(&fwd, self.model, &self.prompts, phase, self.settings.alpha, self.settings.beta))
            .map_err(|e| self.diverged().unwrap_or(e))?;
        if !report.total.is_finite() {
            return Err(DptError::Divergence { step: self.step, value: report.total });
        }
        let lr = self.current_lr();
        if total.requires_grad() {
            backward(&total)?;
        }
        if let Some(s) = &mut self.text_state {
            sgd_step(&self.prompts.text_parameters(), s)?;
        }
        if let Some(s) = &mut self.visual_state {
            sgd_step(&self.prompts.visual_parameters(), s)?;
        }
        self.log.push(LogRow { epoch: self.epoch, step: self.step, lr, report });
        if let Some(e) = self.diverged() {
            return Err(e);
        }
        self.step += 1;
        Ok(report)
    }

    /// A divergence error if any learnable value has stopped being finite.
    fn diverged(&self) -> Option<DptError> {
        self.prompts
            .parameters()
            .iter()
            .find_map(|p| p.data().iter().copied().find(|v| !v.is_finite()))
            .map(|value| DptError::Divergence { step: self.step, value })
    }

    /// Prompt-free features of the support set, computed once.
    fn ensure_plain_cache(&mut self, support: &[Example]) -> Result<()> {
        if self.plain_cache.len() != support.len() {
            self.plain_cache = support
                .iter()
                .map(|e| self.model.plain_feature(&e.image))
                .collect::<Result<_>>()?;
        }
        Ok(())
    }

    /// One pass over the shuffled support set.
    pub fn train_epoch(&mut self, support: &[Example]) -> Result<Vec<LossReport>> {
        self.ensure_plain_cache(support)?;
        let mut order: Vec<usize> = (0..support.len()).collect();
        order.shuffle(&mut self.rng);
        let mut reports = Vec::new();
        for chunk in order.chunks(self.settings.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &support[i]).collect();
            let plain: Vec<Tensor> = chunk.iter().map(|&i| self.plain_cache[i].clone()).collect();
            reports.push(self.train_step(&batch, Some(&plain))?);
        }
        self.epoch += 1;
        Ok(reports)
    }

    /// Runs the configured number of epochs; the zero-shot variant trains nothing.
    pub fn fit(&mut self, support: &[Example]) -> Result<()> {
        if self.prompts.parameters().is_empty() {
            return Ok(());
        }
        while self.epoch < self.settings.epochs {
            self.train_epoch(support)?;
        }
        Ok(())
    }

    /// Epochs at which the objective changed, from the log.
    pub fn phase_switches(&self) -> Vec<usize> {
        self.log
            .windows(2)
            .filter(|w| w[0].report.phase != w[1].report.phase)
            .map(|w| w[1].epoch)
            .collect()
    }
}
