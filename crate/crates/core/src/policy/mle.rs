use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, MleObjective, Policy, Sequence};
use crate::corpus::ParallelPair;
use crate::error::{Error, Result};
use crate::textcore::{Vocabulary, EOS};

/// Source and target ids for teacher forcing, each terminated by EOS.
pub fn encode_pair(vocab: &Vocabulary, pair: &ParallelPair) -> Sequence {
    let mut src = vocab.encode(&pair.src);
    src.push(EOS);
    let mut tgt = vocab.encode(&pair.reference);
    tgt.push(EOS);
    Sequence { src, tgt }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Learning rate multiplier applied whenever dev loss fails to improve.
    pub lr_decay: f64,
    /// Consecutive non-improving epochs before stopping.
    pub patience: usize,
    /// Hard cap on optimizer steps (0 = none).
    pub max_steps: usize,
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            batch_size: 32,
            max_epochs: 20,
            lr_decay: 0.5,
            patience: 2,
            max_steps: 0,
            max_grad_norm: Some(5.0),
            seed: 0,
        }
    }
}

impl MleConfig {
    /// The schedule of large-model fine-tuning: decay from 1e-5.
    pub fn large_model() -> Self {
        Self {
            lr: 1e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig(format!("invalid MLE config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleReport {
    pub epochs: Vec<EpochLog>,
    pub best_dev_loss: f64,
    pub steps: usize,
    pub early_stopped: bool,
}

pub struct MleTrainer {
    pub config: MleConfig,
    adam: Adam,
}

impl MleTrainer {
    pub fn new(config: MleConfig, policy: &Policy) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                max_grad_norm: config.max_grad_norm,
                ..AdamConfig::default()
            },
            &policy.params,
        );
        Ok(Self { config, adam })
    }

    pub fn lr(&self) -> f64 {
        self.adam.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.config.lr = lr;
    }

    /// One update on `batch`; returns the loss before the update.
    pub fn step(&mut self, policy: &mut Policy, batch: &[Sequence]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let out = policy
            .gradients(&MleObjective::new(batch.to_vec()))
            .map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("MLE step {}: {msg}", self.adam.steps() + 1)),
                other => other,
            })?;
        self.adam.step(&mut policy.params, &out.grads)?;
        Ok(out.loss)
    }

    /// Token-averaged dev loss.
    pub fn dev_loss(policy: &Policy, dev: &[Sequence]) -> Result<f64> {
        if dev.is_empty() {
            return Ok(f64::NAN);
        }
        policy.loss(&MleObjective::new(dev.to_vec()))
    }

    /// Epoch loop with learning-rate decay on plateaus and early stopping;
    /// leaves the best-dev parameters in `policy`.
    pub fn train(
        &mut self,
        policy: &mut Policy,
        train: &[Sequence],
        dev: &[Sequence],
        mut on_epoch: impl FnMut(&EpochLog, &Policy),
    ) -> Result<MleReport> {
        if train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut best = (f64::INFINITY, policy.params.clone());
        let mut bad_epochs = 0;
        let mut steps = 0;
        let mut report = MleReport {
            epochs: Vec::new(),
            best_dev_loss: f64::INFINITY,
            steps: 0,
            early_stopped: false,
        };
        'epochs: for epoch in 1..=self.config.max_epochs {
            order.shuffle(&mut rng);
            let (mut loss_sum, mut batches) = (0.0, 0);
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<Sequence> = chunk.iter().map(|&i| train[i].clone()).collect();
                loss_sum += self.step(policy, &batch)?;
                batches += 1;
                steps += 1;
                if self.config.max_steps > 0 && steps >= self.config.max_steps {
                    let log = self.finish_epoch(policy, dev, epoch, steps, loss_sum / batches as f64)?;
                    on_epoch(&log, policy);
                    if !(log.dev_loss >= best.0) {
                        best = (log.dev_loss, policy.params.clone());
                    }
                    report.epochs.push(log);
                    break 'epochs;
                }
            }
            let log = self.finish_epoch(policy, dev, epoch, steps, loss_sum / batches as f64)?;
            on_epoch(&log, policy);
            let improved = !(log.dev_loss >= best.0);
            report.epochs.push(log);
            if improved || dev.is_empty() {
                best = (report.epochs.last().unwrap().dev_loss, policy.params.clone());
                bad_epochs = 0;
            } else {
                bad_epochs += 1;
                let lr = self.lr() * self.config.lr_decay;
                self.set_lr(lr);
                if bad_epochs >= self.config.patience {
                    report.early_stopped = true;
                    break;
                }
            }
        }
        if !dev.is_empty() {
            policy.params = best.1;
        }
        report.best_dev_loss = best.0;
        report.steps = steps;
        Ok(report)
    }

    fn finish_epoch(&self, policy: &Policy, dev: &[Sequence], epoch: usize, steps: usize, train_loss: f64) -> Result<EpochLog> {
        Ok(EpochLog {
            epoch,
            steps,
            train_loss,
            dev_loss: Self::dev_loss(policy, dev)?,
            lr: self.lr(),
        })
    }
}
