//! Sentence- and token-level REINFORCE and PPO.
//!
//! A rollout samples episodes from the current policy, scores them, turns the
//! scores into per-step rewards (token granularity: one reward per generated
//! token, zero on EOS; sentence granularity: the whole reward on the final
//! step), subtracts an optional per-token KL penalty towards a frozen
//! reference policy, and then applies one update.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotator::Annotator;
use crate::corpus::ParallelPair;
use crate::error::{Error, Result};
use crate::metrics::{sentence_bleu, BleuConfig};
use crate::policy::{
    clipped_surrogate, Adam, AdamConfig, EpisodeOutput, Policy, PpoObjective, PpoTarget, ReinforceObjective,
    Sequence,
};
use crate::reward::{
    map_spans_to_token_rewards, mean_std, partial_bleu_rewards, sentence_reward_from_spans, Granularity,
    SeverityMap, TokenRewardVector,
};
use crate::textcore::{Vocabulary, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Reinforce,
    Ppo,
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reinforce" => Ok(Algo::Reinforce),
            "ppo" => Ok(Algo::Ppo),
            _ => Err(Error::InvalidConfig(format!("unknown algorithm `{s}`"))),
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Reinforce => "reinforce",
            Algo::Ppo => "ppo",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardSource {
    /// Oracle error spans weighted by a severity map.
    OracleMqm,
    /// Smoothed sentence BLEU in [0, 1].
    Bleu,
    /// Per-word prefix-BLEU gains in [0, 1] units.
    PartialBleu,
}

impl FromStr for RewardSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oracle-mqm" | "mqm" | "oracle" => Ok(RewardSource::OracleMqm),
            "bleu" => Ok(RewardSource::Bleu),
            "partial-bleu" => Ok(RewardSource::PartialBleu),
            _ => Err(Error::InvalidConfig(format!("unknown reward source `{s}`"))),
        }
    }
}

impl fmt::Display for RewardSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardSource::OracleMqm => "oracle-mqm",
            RewardSource::Bleu => "bleu",
            RewardSource::PartialBleu => "partial-bleu",
        })
    }
}

/// What to reward and with which weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub source: RewardSource,
    pub map: SeverityMap,
}

impl RewardSpec {
    pub fn oracle(map: SeverityMap) -> Self {
        Self {
            source: RewardSource::OracleMqm,
            map,
        }
    }

    pub fn check(&self, granularity: Granularity) -> Result<()> {
        match (self.source, granularity) {
            (RewardSource::PartialBleu, Granularity::Sentence) => Err(Error::InvalidConfig(
                "partial-bleu rewards are per token; use token granularity".into(),
            )),
            (RewardSource::Bleu, Granularity::Token) => Err(Error::InvalidConfig(
                "bleu is a sentence reward; use sentence granularity or partial-bleu".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum KlControl {
    Off,
    Fixed { coef: f64 },
    /// Doubles the coefficient when the measured KL exceeds `1.5 × target`
    /// and halves it below `target / 1.5`.
    Adaptive { init_coef: f64, target: f64 },
}

impl KlControl {
    pub fn initial_coef(&self) -> f64 {
        match *self {
            KlControl::Off => 0.0,
            KlControl::Fixed { coef } => coef,
            KlControl::Adaptive { init_coef, .. } => init_coef,
        }
    }

    pub fn update(&self, coef: f64, measured: f64) -> f64 {
        match *self {
            KlControl::Adaptive { target, .. } if measured > target * 1.5 => coef * 2.0,
            KlControl::Adaptive { target, .. } if measured < target / 1.5 => coef / 2.0,
            _ => coef,
        }
    }

    pub fn is_off(&self) -> bool {
        matches!(self, KlControl::Off)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub algo: Algo,
    pub granularity: Granularity,
    pub lr: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub ppo_epochs: usize,
    pub minibatch_size: usize,
    /// Episodes collected per update.
    pub rollout_size: usize,
    pub kl: KlControl,
    pub max_episodes: usize,
    pub value_coef: f64,
    /// Keep the value loss out of the shared encoder-decoder layers.
    pub detach_value: bool,
    /// Learning rate of the value head; `None` uses `lr`.
    pub value_lr: Option<f64>,
    pub max_grad_norm: Option<f64>,
    /// Token REINFORCE weights: reward-to-go (true) or instantaneous reward.
    pub reward_to_go: bool,
    /// Subtract the batch-mean weight in REINFORCE.
    pub baseline: bool,
    pub whiten_advantages: bool,
    /// Hard cap on generated tokens; episodes are further capped at
    /// `2 × source length + 8`.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Ppo,
            granularity: Granularity::Token,
            lr: 1e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            ppo_epochs: 4,
            minibatch_size: 16,
            rollout_size: 16,
            kl: KlControl::Adaptive {
                init_coef: 0.2,
                target: 6.0,
            },
            max_episodes: 10_000,
            value_coef: 0.5,
            detach_value: true,
            value_lr: None,
            max_grad_norm: Some(1.0),
            reward_to_go: true,
            baseline: false,
            whiten_advantages: true,
            max_len: 128,
            seed: 0,
        }
    }
}

impl RlConfig {
    /// The large-model learning rate.
    pub const LARGE_MODEL_LR: f64 = 1.41e-6;

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.ppo_epochs == 0 || self.minibatch_size == 0 || self.rollout_size == 0 {
            return bad("ppo_epochs, minibatch_size and rollout_size must be positive");
        }
        if !(self.lr > 0.0) || self.value_lr.is_some_and(|v| !(v > 0.0)) || self.max_len == 0 {
            return bad("lr, value_lr and max_len must be positive");
        }
        Ok(())
    }
}

/// Everything needed to turn sampled ids into rewards.
pub struct RlEnv<'a> {
    pub vocab: &'a Vocabulary,
    pub annotator: &'a Annotator,
    pub pairs: &'a [ParallelPair],
    sources: Vec<Vec<u32>>,
}

impl<'a> RlEnv<'a> {
    pub fn new(vocab: &'a Vocabulary, annotator: &'a Annotator, pairs: &'a [ParallelPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let sources = pairs
            .iter()
            .map(|p| {
                let mut ids = vocab.encode(&p.src);
                ids.push(EOS);
                ids
            })
            .collect();
        Ok(Self {
            vocab,
            annotator,
            pairs,
            sources,
        })
    }

    pub fn source(&self, index: usize) -> &[u32] {
        &self.sources[index]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub pair_index: usize,
    pub src: Vec<u32>,
    pub episode: EpisodeOutput,
    /// Task reward before KL shaping.
    pub rewards: TokenRewardVector,
    /// Oracle sentence score of the hypothesis, for monitoring.
    pub quality: f64,
    pub old_logp: Vec<f64>,
    pub ref_logp: Option<Vec<f64>>,
    /// Per-step rewards including the KL penalty.
    pub step_rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Trajectory {
    pub fn new(pair_index: usize, src: Vec<u32>, episode: EpisodeOutput, rewards: TokenRewardVector) -> Self {
        let old_logp = episode.logp.clone();
        Self {
            pair_index,
            src,
            episode,
            rewards,
            quality: f64::NAN,
            old_logp,
            ref_logp: None,
            step_rewards: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.episode.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episode.is_empty()
    }

    /// Σ_t (log p_old − log p_ref): a sample estimate of KL(policy ‖ reference).
    pub fn kl(&self) -> f64 {
        self.ref_logp
            .as_ref()
            .map_or(0.0, |r| self.old_logp.iter().zip(r).map(|(a, b)| a - b).sum())
    }

    /// Per-step task rewards: token rewards on generated tokens (EOS gets 0),
    /// or the sentence reward on the last step.
    pub fn task_step_rewards(&self) -> Result<Vec<f64>> {
        let n = self.len();
        let mut out = vec![0.0; n];
        match self.rewards.granularity {
            Granularity::Token => {
                let content = self.episode.content().len();
                if self.rewards.rewards.len() != content {
                    return Err(Error::LengthMismatch(format!(
                        "{} token rewards for {content} generated tokens",
                        self.rewards.rewards.len()
                    )));
                }
                out[..content].copy_from_slice(&self.rewards.rewards);
            }
            Granularity::Sentence => {
                if let Some(last) = out.last_mut() {
                    *last = self.rewards.rewards[0];
                }
            }
        }
        Ok(out)
    }

    fn sequence(&self) -> Sequence {
        Sequence {
            src: self.src.clone(),
            tgt: self.episode.tokens.clone(),
        }
    }
}

/// Scores a rendered hypothesis against its reference.
pub fn score_hypothesis(
    env: &RlEnv<'_>,
    pair_index: usize,
    ids: &[u32],
    spec: &RewardSpec,
    granularity: Granularity,
) -> Result<(TokenRewardVector, f64)> {
    spec.check(granularity)?;
    let pair = &env.pairs[pair_index];
    let hyp = env.vocab.render(ids);
    let (spans, counts) = env.annotator.spans_and_counts(&hyp.text, &pair.reference)?;
    let quality = counts.score();
    let ref_words: Vec<&str> = pair.reference.split_whitespace().collect();
    let rewards = match (spec.source, granularity) {
        (RewardSource::OracleMqm, Granularity::Token) => map_spans_to_token_rewards(&hyp, &spans, &spec.map)?,
        (RewardSource::OracleMqm, Granularity::Sentence) => {
            TokenRewardVector::sentence(sentence_reward_from_spans(&hyp, &spans, &spec.map)?)
        }
        (RewardSource::Bleu, _) => {
            let words = hyp.words();
            let hw: Vec<&str> = words.iter().map(String::as_str).collect();
            TokenRewardVector::sentence(sentence_bleu(&hw, &ref_words, &BleuConfig::sentence()) / 100.0)
        }
        (RewardSource::PartialBleu, _) => {
            let mut r = partial_bleu_rewards(&hyp, &ref_words, &BleuConfig::sentence())?;
            r.rewards.iter_mut().for_each(|x| *x /= 100.0);
            r
        }
    };
    Ok((rewards, quality))
}

/// Per-source generation cap.
pub fn episode_cap(src_len: usize, max_len: usize) -> usize {
    max_len.min(2 * src_len + 8)
}

/// Samples `n` episodes on uniformly drawn training pairs and scores them.
/// With a reference policy, reference log-probs are recorded for KL shaping.
pub fn collect_trajectories<R: Rng + ?Sized>(
    policy: &Policy,
    reference: Option<&Policy>,
    env: &RlEnv<'_>,
    spec: &RewardSpec,
    cfg: &RlConfig,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one episode".into()));
    }
    spec.check(cfg.granularity)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let idx = rng.gen_range(0..env.pairs.len());
        let src = env.source(idx).to_vec();
        let cap = episode_cap(src.len(), cfg.max_len);
        let episode = policy.sample_episode(&src, rng, cap)?;
        let (rewards, quality) = score_hypothesis(env, idx, episode.content(), spec, cfg.granularity)?;
        let mut traj = Trajectory::new(idx, src, episode, rewards);
        traj.quality = quality;
        if let Some(r) = reference {
            traj.ref_logp = Some(r.score(&traj.src, &traj.episode.tokens)?.0);
        }
        out.push(traj);
    }
    Ok(out)
}

/// Generalized advantage estimates by backward recursion; the value after
/// the last step is 0.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::LengthMismatch(format!(
            "{} rewards vs {} values",
            rewards.len(),
            values.len()
        )));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let next = values.get(t + 1).copied().unwrap_or(0.0);
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    Ok(adv)
}

/// `Σ_{l ≥ t} γ^{l−t} r_l`.
pub fn reward_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Fills step rewards (with KL penalty `kl_coef`), advantages and returns.
pub fn prepare_advantages(trajectories: &mut [Trajectory], cfg: &RlConfig, kl_coef: f64) -> Result<()> {
    for traj in trajectories.iter_mut() {
        let mut r = traj.task_step_rewards()?;
        if let Some(ref_logp) = &traj.ref_logp {
            for ((r, old), rf) in r.iter_mut().zip(&traj.old_logp).zip(ref_logp) {
                *r -= kl_coef * (old - rf);
            }
        }
        match cfg.algo {
            Algo::Ppo => {
                let values = &traj.episode.values;
                traj.advantages = compute_gae(&r, values, cfg.gamma, cfg.gae_lambda)?;
                traj.returns = traj.advantages.iter().zip(values).map(|(a, v)| a + v).collect();
            }
            Algo::Reinforce => {
                traj.advantages = match cfg.granularity {
                    Granularity::Sentence => vec![r.iter().sum(); r.len()],
                    Granularity::Token if cfg.reward_to_go => reward_to_go(&r, cfg.gamma),
                    Granularity::Token => r.clone(),
                };
                traj.returns = traj.advantages.clone();
            }
        }
        traj.step_rewards = r;
    }
    let whiten = cfg.algo == Algo::Ppo && cfg.whiten_advantages;
    if whiten || (cfg.algo == Algo::Reinforce && cfg.baseline) {
        let all: Vec<f64> = trajectories.iter().flat_map(|t| t.advantages.iter().copied()).collect();
        if all.len() > 1 {
            let (mean, std) = mean_std(&all);
            let scale = if whiten { 1.0 / (std + 1e-8) } else { 1.0 };
            for a in trajectories.iter_mut().flat_map(|t| t.advantages.iter_mut()) {
                *a = (*a - mean) * scale;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReinforceStats {
    pub loss: f64,
    pub mean_reward: f64,
    pub grad_norm: f64,
}

/// The policy-gradient surrogate weighted by each trajectory's advantages.
pub fn reinforce_objective(trajectories: &[Trajectory]) -> Result<ReinforceObjective> {
    let seqs: Vec<Sequence> = trajectories.iter().map(Trajectory::sequence).collect();
    let weights: Vec<Vec<f64>> = trajectories.iter().map(|t| t.advantages.clone()).collect();
    if weights.iter().zip(&seqs).any(|(w, s)| w.len() != s.tgt.len()) {
        return Err(Error::LengthMismatch("advantages not computed".into()));
    }
    Ok(ReinforceObjective::new(seqs, weights))
}

/// The clipped-surrogate objective over `trajectories` (advantages filled).
pub fn ppo_objective<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>, cfg: &RlConfig) -> Result<PpoObjective> {
    let (seqs, targets): (Vec<Sequence>, Vec<PpoTarget>) = trajectories
        .into_iter()
        .map(|t| {
            (
                t.sequence(),
                PpoTarget {
                    old_logp: t.old_logp.clone(),
                    advantages: t.advantages.clone(),
                    returns: t.returns.clone(),
                },
            )
        })
        .unzip();
    if seqs.iter().zip(&targets).any(|(s, t)| t.advantages.len() != s.tgt.len() || t.returns.len() != s.tgt.len()) {
        return Err(Error::LengthMismatch("advantages not computed".into()));
    }
    Ok(PpoObjective::new(seqs, targets, cfg.clip_epsilon, cfg.value_coef).with_detached_value(cfg.detach_value))
}

/// One policy-gradient step on `trajectories` (advantages must be filled).
pub fn reinforce_update(policy: &mut Policy, adam: &mut Adam, trajectories: &[Trajectory]) -> Result<ReinforceStats> {
    let out = policy.gradients(&reinforce_objective(trajectories)?)?;
    let grad_norm = adam.step(&mut policy.params, &out.grads)?;
    Ok(ReinforceStats {
        loss: out.loss,
        mean_reward: mean_task_reward(trajectories),
        grad_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean over tokens of `old_logp − new_logp` as measured during the
    /// epochs (pre-update, per minibatch).
    pub kl: f64,
    pub clip_fraction: f64,
    /// Largest `|ρ − 1|` seen in the first epoch.
    pub first_epoch_max_ratio_dev: f64,
    pub first_epoch_clip_fraction: f64,
    pub dropped: usize,
    /// Clip fraction by episode length bucket `[0,16)`, `[16,32)`, `[32,64)`, `[64,∞)`.
    pub clip_fraction_by_length: [f64; 4],
}

fn length_bucket(len: usize) -> usize {
    match len {
        0..=15 => 0,
        16..=31 => 1,
        32..=63 => 2,
        _ => 3,
    }
}

/// `ppo_epochs` passes of clipped-surrogate minibatch updates.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    adam: &mut Adam,
    trajectories: &[Trajectory],
    cfg: &RlConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    let eps = cfg.clip_epsilon;
    let mut live: Vec<bool> = vec![true; trajectories.len()];
    let mut dropped = 0;
    let (mut pl_sum, mut vl_sum, mut kl_sum, mut clipped, mut tokens) = (0.0, 0.0, 0.0, 0usize, 0usize);
    let mut first_dev: f64 = 0.0;
    let (mut first_clipped, mut first_tokens) = (0usize, 0usize);
    let mut by_len = [(0usize, 0usize); 4];
    let mut order: Vec<usize> = (0..trajectories.len()).collect();
    for epoch in 0..cfg.ppo_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let mut batch: Vec<usize> = chunk.iter().copied().filter(|&i| live[i] && !trajectories[i].is_empty()).collect();
            loop {
                if batch.is_empty() {
                    break;
                }
                let obj = ppo_objective(batch.iter().map(|&i| &trajectories[i]), cfg)?;
                let out = match policy.gradients(&obj) {
                    Ok(out) => out,
                    Err(Error::Numerical(_)) => {
                        // locate and drop the trajectories responsible
                        let before = batch.len();
                        batch.retain(|&i| {
                            let t = &trajectories[i];
                            let ok = policy.score(&t.src, &t.episode.tokens).is_ok_and(|(lp, _)| {
                                lp.iter().zip(&t.old_logp).all(|(n, o)| (n - o).abs() <= 50.0)
                            });
                            if !ok {
                                live[i] = false;
                            }
                            ok
                        });
                        if batch.len() == before {
                            return Err(Error::Numerical("non-finite PPO gradient".into()));
                        }
                        dropped += before - batch.len();
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let gaps: Vec<usize> = batch
                    .iter()
                    .zip(&out.logp)
                    .filter(|(&i, lp)| {
                        lp.iter()
                            .zip(&trajectories[i].old_logp)
                            .any(|(n, o)| !((n - o).abs() <= 50.0))
                    })
                    .map(|(&i, _)| i)
                    .collect();
                if !gaps.is_empty() {
                    for &i in &gaps {
                        live[i] = false;
                        dropped += 1;
                    }
                    batch.retain(|i| !gaps.contains(i));
                    continue;
                }
                let n_tok: usize = out.logp.iter().map(Vec::len).sum();
                for (k, &i) in batch.iter().enumerate() {
                    let t = &trajectories[i];
                    let bucket = length_bucket(t.len());
                    for s in 0..t.len() {
                        let gap = out.logp[k][s] - t.old_logp[s];
                        let ratio = gap.exp();
                        let (surr, _) = clipped_surrogate(ratio, t.advantages[s], eps);
                        let outside = (ratio - 1.0).abs() > eps;
                        pl_sum -= surr;
                        let err = out.values[k][s] - t.returns[s];
                        vl_sum += 0.5 * err * err;
                        kl_sum -= gap;
                        clipped += outside as usize;
                        by_len[bucket].0 += outside as usize;
                        by_len[bucket].1 += 1;
                        if epoch == 0 {
                            first_dev = first_dev.max((ratio - 1.0).abs());
                            first_clipped += outside as usize;
                        }
                    }
                }
                tokens += n_tok;
                if epoch == 0 {
                    first_tokens += n_tok;
                }
                adam.step(&mut policy.params, &out.grads)?;
                break;
            }
        }
    }
    let per = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(PpoStats {
        policy_loss: per(pl_sum, tokens),
        value_loss: per(vl_sum, tokens),
        kl: per(kl_sum, tokens),
        clip_fraction: per(clipped as f64, tokens),
        first_epoch_max_ratio_dev: first_dev,
        first_epoch_clip_fraction: per(first_clipped as f64, first_tokens),
        dropped,
        clip_fraction_by_length: by_len.map(|(c, n)| per(c as f64, n)),
    })
}

fn mean_task_reward(trajectories: &[Trajectory]) -> f64 {
    if trajectories.is_empty() {
        return 0.0;
    }
    trajectories.iter().map(|t| t.rewards.mean()).sum::<f64>() / trajectories.len() as f64
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub episodes: usize,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub kl_coef: f64,
    pub mean_quality: f64,
    pub mean_length: f64,
    pub dropped: usize,
}

impl LogRow {
    pub const HEADER: &'static str =
        "step,episodes,mean_reward,policy_loss,value_loss,kl,clip_fraction,kl_coef,mean_quality,mean_length,dropped";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.episodes,
            self.mean_reward,
            self.policy_loss,
            self.value_loss,
            self.kl,
            self.clip_fraction,
            self.kl_coef,
            self.mean_quality,
            self.mean_length,
            self.dropped
        )
    }
}

pub fn write_log_csv(rows: &[LogRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from(LogRow::HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.csv());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlReport {
    pub log: Vec<LogRow>,
    pub episodes: usize,
    pub dropped: usize,
    pub final_kl_coef: f64,
}

/// Alternates collection and updates until `max_episodes` episodes have
/// been used. `reference` enables the KL penalty (ignored when the config
/// turns KL off). `sink` sees every log row as it is produced.
pub fn train_rl(
    policy: &mut Policy,
    reference: Option<&Policy>,
    env: &RlEnv<'_>,
    cfg: &RlConfig,
    spec: &RewardSpec,
    mut sink: impl FnMut(&LogRow),
) -> Result<RlReport> {
    cfg.validate()?;
    spec.check(cfg.granularity)?;
    let reference = if cfg.kl.is_off() { None } else { reference };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            max_grad_norm: cfg.max_grad_norm,
            ..AdamConfig::default()
        },
        &policy.params,
    );
    if let Some(lr) = cfg.value_lr {
        adam.set_tensor_lr("value_w", lr);
        adam.set_tensor_lr("value_b", lr);
    }
    let mut kl_coef = cfg.kl.initial_coef();
    let mut report = RlReport {
        log: Vec::new(),
        episodes: 0,
        dropped: 0,
        final_kl_coef: kl_coef,
    };
    let mut step = 0;
    while report.episodes < cfg.max_episodes {
        let n = cfg.rollout_size.min(cfg.max_episodes - report.episodes);
        let mut trajs = collect_trajectories(policy, reference, env, spec, cfg, n, &mut rng)?;
        prepare_advantages(&mut trajs, cfg, kl_coef)?;
        let measured_kl = trajs.iter().map(Trajectory::kl).sum::<f64>() / n as f64;
        step += 1;
        report.episodes += n;
        let mut row = LogRow {
            step,
            episodes: report.episodes,
            mean_reward: mean_task_reward(&trajs),
            policy_loss: 0.0,
            value_loss: 0.0,
            kl: measured_kl,
            clip_fraction: 0.0,
            kl_coef,
            mean_quality: trajs.iter().map(|t| t.quality).sum::<f64>() / n as f64,
            mean_length: trajs.iter().map(|t| t.len() as f64).sum::<f64>() / n as f64,
            dropped: 0,
        };
        match cfg.algo {
            Algo::Reinforce => {
                let stats = reinforce_update(policy, &mut adam, &trajs)?;
                row.policy_loss = stats.loss;
            }
            Algo::Ppo => {
                let stats = ppo_update(policy, &mut adam, &trajs, cfg, &mut rng)?;
                row.policy_loss = stats.policy_loss;
                row.value_loss = stats.value_loss;
                row.clip_fraction = stats.clip_fraction;
                row.dropped = stats.dropped;
                report.dropped += stats.dropped;
            }
        }
        if reference.is_some() {
            kl_coef = cfg.kl.update(kl_coef, measured_kl);
        }
        sink(&row);
        report.log.push(row);
    }
    report.final_kl_coef = kl_coef;
    Ok(report)
}
