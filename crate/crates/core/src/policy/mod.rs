//! Encoder-decoder translation policy with exact log-probabilities and
//! hand-derived gradients.

mod checkpoint;
mod mle;
mod model;
mod objective;
mod optim;
mod params;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use mle::{encode_pair, EpochLog, MleConfig, MleReport, MleTrainer};
pub use objective::{
    clipped_surrogate, MleObjective, Objective, PpoObjective, PpoTarget, ReinforceObjective, Sequence, SequenceTerms,
    ZeroObjective,
};
pub use optim::{Adam, AdamConfig};
pub use params::{PolicyConfig, PolicyParams};

use crate::error::{Error, Result};
use crate::textcore::{BOS, EOS};
use model::softmax_in_place;

/// One sampled continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutput {
    pub tokens: Vec<u32>,
    pub logp: Vec<f64>,
    pub values: Vec<f64>,
    pub terminated_by_eos: bool,
}

impl EpisodeOutput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Generated ids with the terminating EOS removed.
    pub fn content(&self) -> &[u32] {
        if self.terminated_by_eos {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

/// Result of a gradient evaluation.
#[derive(Debug, Clone)]
pub struct GradientOutput {
    pub loss: f64,
    pub grads: PolicyParams,
    /// Per-sequence target log-probabilities under the evaluated parameters.
    pub logp: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub config: PolicyConfig,
    pub params: PolicyParams,
}

impl Policy {
    pub fn new(config: PolicyConfig) -> Result<Self> {
        Ok(Self {
            config,
            params: PolicyParams::init(&config)?,
        })
    }

    pub fn from_params(config: PolicyConfig, params: PolicyParams) -> Result<Self> {
        config.validate()?;
        let reference = PolicyParams::init(&config)?;
        for ((name, want, _), (_, got, _)) in reference.tensors().into_iter().zip(params.tensors()) {
            if want != got {
                return Err(Error::InvalidConfig(format!(
                    "tensor {name} has shape {got:?}, config implies {want:?}"
                )));
            }
        }
        Ok(Self { config, params })
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        let v = self.config.vocab_size as u32;
        match ids.iter().find(|&&id| id >= v) {
            Some(id) => Err(Error::InvalidInput(format!("token id {id} outside vocabulary of {v}"))),
            None => Ok(()),
        }
    }

    /// `p(· | prefix, src)` over the vocabulary.
    pub fn step_distribution(&self, src: &[u32], prefix: &[u32]) -> Result<Vec<f64>> {
        if src.is_empty() {
            return Err(Error::InvalidInput("empty source".into()));
        }
        if prefix.len() >= self.config.max_len {
            return Err(Error::InvalidInput(format!(
                "prefix of {} tokens reaches max_len {}",
                prefix.len(),
                self.config.max_len
            )));
        }
        self.check_ids(src)?;
        self.check_ids(prefix)?;
        let p = &self.params;
        let enc = p.encode(src);
        let mut state = enc.final_state().to_owned();
        let mut prev = BOS;
        for &tok in prefix {
            state = p.decoder_step(&enc, state.view(), prev).state;
            prev = tok;
        }
        let step = p.decoder_step(&enc, state.view(), prev);
        let (mut logits, _) = p.step_outputs(&step);
        softmax_in_place(logits.as_slice_mut().expect("contiguous"));
        Ok(logits.to_vec())
    }

    /// Ancestral sampling until EOS or `max_len` tokens.
    pub fn sample_episode<R: Rng + ?Sized>(&self, src: &[u32], rng: &mut R, max_len: usize) -> Result<EpisodeOutput> {
        self.generate(src, max_len, |probs| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            // rounding left u above the cumulative total
            probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        })
    }

    /// Argmax decoding; returns the ids without the terminating EOS.
    pub fn greedy_decode(&self, src: &[u32], max_len: usize) -> Result<Vec<u32>> {
        let ep = self.generate(src, max_len, |probs| {
            probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                .0
        })?;
        Ok(ep.content().to_vec())
    }

    fn generate(&self, src: &[u32], max_len: usize, mut choose: impl FnMut(&[f64]) -> usize) -> Result<EpisodeOutput> {
        if src.is_empty() {
            return Err(Error::InvalidInput("empty source".into()));
        }
        self.check_ids(src)?;
        let limit = max_len.min(self.config.max_len);
        let p = &self.params;
        let enc = p.encode(src);
        let mut state = enc.final_state().to_owned();
        let mut prev = BOS;
        let mut out = EpisodeOutput {
            tokens: Vec::new(),
            logp: Vec::new(),
            values: Vec::new(),
            terminated_by_eos: false,
        };
        while out.tokens.len() < limit {
            let step = p.decoder_step(&enc, state.view(), prev);
            let (mut logits, value) = p.step_outputs(&step);
            let probs = logits.as_slice_mut().expect("contiguous");
            let raw = probs.to_vec();
            let log_norm = softmax_in_place(probs);
            let tok = choose(probs);
            out.tokens.push(tok as u32);
            out.logp.push(raw[tok] - log_norm);
            out.values.push(value);
            state = step.state;
            prev = tok as u32;
            if prev == EOS {
                out.terminated_by_eos = true;
                break;
            }
        }
        Ok(out)
    }

    /// Teacher-forced target log-probabilities and values.
    pub fn score(&self, src: &[u32], tgt: &[u32]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_sequence(src, tgt)?;
        let pass = self.params.forward(src, tgt);
        Ok((pass.logp, pass.values))
    }

    fn check_sequence(&self, src: &[u32], tgt: &[u32]) -> Result<()> {
        if src.is_empty() {
            return Err(Error::InvalidInput("empty source".into()));
        }
        if tgt.len() > self.config.max_len {
            return Err(Error::InvalidInput(format!(
                "target of {} tokens exceeds max_len {}",
                tgt.len(),
                self.config.max_len
            )));
        }
        self.check_ids(src)?;
        self.check_ids(tgt)
    }

    /// Objective value only (no backward pass).
    pub fn loss(&self, objective: &dyn Objective) -> Result<f64> {
        let mut loss = 0.0;
        for (i, seq) in objective.sequences().iter().enumerate() {
            let (logp, values) = self.score(&seq.src, &seq.tgt)?;
            loss += objective.terms(i, &logp, &values).loss;
        }
        Ok(loss)
    }

    /// Exact gradient of `objective` at the current parameters.
    pub fn gradients(&self, objective: &dyn Objective) -> Result<GradientOutput> {
        let mut grads = self.params.zeros_like();
        let mut loss = 0.0;
        let mut all_logp = Vec::new();
        let mut all_values = Vec::new();
        for (i, seq) in objective.sequences().iter().enumerate() {
            self.check_sequence(&seq.src, &seq.tgt)?;
            let pass = self.params.forward(&seq.src, &seq.tgt);
            let terms = objective.terms(i, &pass.logp, &pass.values);
            loss += terms.loss;
            self.params
                .backward(&pass, &terms.d_logp, &terms.d_value, objective.detach_value(), &mut grads);
            all_logp.push(pass.logp);
            all_values.push(pass.values);
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {loss}")));
        }
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::Numerical(format!("non-finite gradient in {name}")));
        }
        Ok(GradientOutput {
            loss,
            grads,
            logp: all_logp,
            values: all_values,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        checkpoint::save(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        checkpoint::load(path.as_ref())
    }
}
