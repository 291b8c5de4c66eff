//! Severity maps and the conversion of error spans into per-token rewards.
//!
//! Spans live on the detokenized hypothesis, while the policy is trained on
//! subword tokens. A span is attributed to whole words: if any token of a word
//! overlaps a span, every token of that word receives the span's weight. The
//! resulting rewards therefore do not depend on how the hypothesis was
//! segmented.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotator::{ErrorSpan, Severity};
use crate::error::{Error, Result};
use crate::metrics::{sentence_bleu, BleuConfig, Smoothing};
use crate::textcore::TokenizedText;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityLevel {
    Correct,
    Minor,
    Major,
    Critical,
}

impl From<Severity> for SeverityLevel {
    fn from(s: Severity) -> Self {
        match s {
            Severity::Minor => SeverityLevel::Minor,
            Severity::Major => SeverityLevel::Major,
            Severity::Critical => SeverityLevel::Critical,
        }
    }
}

/// Reward weight for correct words and for each error severity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityMap {
    pub name: String,
    pub correct: f64,
    pub minor: f64,
    pub major: f64,
    pub critical: f64,
}

impl SeverityMap {
    pub fn new(name: &str, correct: f64, minor: f64, major: f64, critical: f64) -> Result<Self> {
        let map = Self {
            name: name.to_owned(),
            correct,
            minor,
            major,
            critical,
        };
        if [correct, minor, major, critical].iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite weight in severity map `{name}`")));
        }
        Ok(map)
    }

    pub fn bin() -> Self {
        Self::preset("bin", [1.0, -1.0, -1.0, -1.0])
    }

    pub fn mqm() -> Self {
        Self::preset("mqm", [0.0, -1.0, -5.0, -25.0])
    }

    pub fn rmqm() -> Self {
        Self::preset("rmqm", [25.0, 5.0, 1.0, 0.0])
    }

    pub fn our() -> Self {
        Self::preset("our", [8.0, 4.0, 2.0, 1.0])
    }

    pub fn rour() -> Self {
        Self::preset("rour", [-1.0, -2.0, -4.0, -8.0])
    }

    fn preset(name: &str, w: [f64; 4]) -> Self {
        Self {
            name: name.to_owned(),
            correct: w[0],
            minor: w[1],
            major: w[2],
            critical: w[3],
        }
    }

    pub fn presets() -> Vec<SeverityMap> {
        vec![Self::bin(), Self::mqm(), Self::rmqm(), Self::our(), Self::rour()]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::presets()
            .into_iter()
            .find(|m| m.name.eq_ignore_ascii_case(name))
    }

    pub fn weight(&self, level: SeverityLevel) -> f64 {
        match level {
            SeverityLevel::Correct => self.correct,
            SeverityLevel::Minor => self.minor,
            SeverityLevel::Major => self.major,
            SeverityLevel::Critical => self.critical,
        }
    }

    /// Parses `key: value` (or `key = value`) lines with keys `correct`,
    /// `minor`, `major`, `critical` and an optional `name`. `#` starts a
    /// comment.
    pub fn parse(text: &str, default_name: &str) -> Result<Self> {
        let mut name = default_name.to_owned();
        let mut w: [Option<f64>; 4] = [None; 4];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once([':', '='])
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key: value`", i + 1)))?;
            let (key, value) = (key.trim().to_ascii_lowercase(), value.trim().trim_matches('"'));
            let slot = match key.as_str() {
                "name" => {
                    name = value.to_owned();
                    continue;
                }
                "correct" => 0,
                "minor" => 1,
                "major" => 2,
                "critical" => 3,
                other => {
                    return Err(Error::InvalidConfig(format!("line {}: unknown key `{other}`", i + 1)))
                }
            };
            w[slot] = Some(value.parse().map_err(|_| {
                Error::InvalidConfig(format!("line {}: `{value}` is not a number", i + 1))
            })?);
        }
        match w {
            [Some(c), Some(mi), Some(ma), Some(cr)] => Self::new(&name, c, mi, ma, cr),
            _ => Err(Error::InvalidConfig(
                "severity map needs correct, minor, major and critical".into(),
            )),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("custom");
        Self::parse(&text, stem)
    }

    pub fn to_file_string(&self) -> String {
        format!(
            "name: {}\ncorrect: {}\nminor: {}\nmajor: {}\ncritical: {}\n",
            self.name, self.correct, self.minor, self.major, self.critical
        )
    }
}

impl FromStr for SeverityMap {
    type Err = Error;

    /// A preset name or a path to a severity-map file.
    fn from_str(s: &str) -> Result<Self> {
        match Self::by_name(s) {
            Some(m) => Ok(m),
            None if Path::new(s).is_file() => Self::load(s),
            None => Err(Error::InvalidConfig(format!(
                "`{s}` is neither a severity preset (bin, mqm, rmqm, our, rour) nor a file"
            ))),
        }
    }
}

impl fmt::Display for SeverityMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

pub fn severity_weight(map: &SeverityMap, level: SeverityLevel) -> f64 {
    map.weight(level)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Sentence,
    Token,
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sentence" => Ok(Granularity::Sentence),
            "token" => Ok(Granularity::Token),
            _ => Err(Error::InvalidConfig(format!("unknown granularity `{s}`"))),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Sentence => "sentence",
            Granularity::Token => "token",
        })
    }
}

/// Rewards for one hypothesis: one per token, or a single sentence reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRewardVector {
    pub rewards: Vec<f64>,
    pub granularity: Granularity,
}

impl TokenRewardVector {
    pub fn token(rewards: Vec<f64>) -> Self {
        Self {
            rewards,
            granularity: Granularity::Token,
        }
    }

    pub fn sentence(reward: f64) -> Self {
        Self {
            rewards: vec![reward],
            granularity: Granularity::Sentence,
        }
    }

    pub fn total(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.rewards.is_empty() {
            0.0
        } else {
            self.total() / self.rewards.len() as f64
        }
    }
}

/// Worst severity attributed to each word of `hyp`.
pub fn word_severities(hyp: &TokenizedText, spans: &[ErrorSpan]) -> Result<Vec<Option<Severity>>> {
    let n_chars = hyp.text.chars().count();
    for s in spans {
        s.check_bounds(n_chars)?;
    }
    let mut out = vec![None; hyp.word_count];
    for tok in &hyp.tokens {
        for s in spans.iter().filter(|s| !s.is_empty()) {
            if tok.start < s.end && s.start < tok.end {
                let slot = &mut out[tok.word];
                *slot = (*slot).max(Some(s.severity));
            }
        }
    }
    Ok(out)
}

/// Assigns every token the weight of its parent word's worst severity, or
/// the correct weight if no span touches the word.
pub fn map_spans_to_token_rewards(
    hyp: &TokenizedText,
    spans: &[ErrorSpan],
    map: &SeverityMap,
) -> Result<TokenRewardVector> {
    let words = word_severities(hyp, spans)?;
    let rewards = hyp
        .tokens
        .iter()
        .map(|t| match words[t.word] {
            Some(sev) => map.weight(sev.into()),
            None => map.correct,
        })
        .collect();
    Ok(TokenRewardVector::token(rewards))
}

/// Mean token reward, normalized by the correct weight when it is non-zero.
pub fn sentence_reward_from_spans(
    hyp: &TokenizedText,
    spans: &[ErrorSpan],
    map: &SeverityMap,
) -> Result<f64> {
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let mean = map_spans_to_token_rewards(hyp, spans, map)?.mean();
    Ok(if map.correct != 0.0 { mean / map.correct } else { mean })
}

/// Per-word shaped rewards: the BLEU gain of each successive prefix.
pub fn partial_bleu_word_rewards<T: AsRef<str>>(
    hyp_words: &[T],
    ref_words: &[T],
    cfg: &BleuConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if cfg.smoothing == Smoothing::None {
        return Err(Error::InvalidConfig("partial BLEU needs a smoothed BLEU config".into()));
    }
    let mut prev = 0.0;
    Ok((1..=hyp_words.len())
        .map(|t| {
            let cur = sentence_bleu(&hyp_words[..t], ref_words, cfg);
            let r = cur - prev;
            prev = cur;
            r
        })
        .collect())
}

/// Spreads per-word rewards evenly over each word's subword tokens.
pub fn broadcast_word_rewards(hyp: &TokenizedText, word_rewards: &[f64]) -> Result<TokenRewardVector> {
    if word_rewards.len() != hyp.word_count {
        return Err(Error::LengthMismatch(format!(
            "{} word rewards for {} words",
            word_rewards.len(),
            hyp.word_count
        )));
    }
    let mut rewards = vec![0.0; hyp.len()];
    for (w, range) in hyp.word_token_ranges().into_iter().enumerate() {
        let share = word_rewards[w] / range.len() as f64;
        rewards[range].iter_mut().for_each(|r| *r = share);
    }
    Ok(TokenRewardVector::token(rewards))
}

/// Partial-BLEU token rewards for a tokenized hypothesis.
pub fn partial_bleu_rewards<T: AsRef<str>>(
    hyp: &TokenizedText,
    ref_words: &[T],
    cfg: &BleuConfig,
) -> Result<TokenRewardVector> {
    let hyp_words = hyp.words();
    let refs: Vec<&str> = ref_words.iter().map(AsRef::as_ref).collect();
    let hw: Vec<&str> = hyp_words.iter().map(String::as_str).collect();
    let per_word = partial_bleu_word_rewards(&hw, &refs, cfg)?;
    broadcast_word_rewards(hyp, &per_word)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    None,
    Whiten,
    Clip(f64),
}

/// Normalizes a batch of reward vectors jointly.
pub fn normalize_rewards(batch: &[TokenRewardVector], mode: NormalizeMode) -> Vec<TokenRewardVector> {
    let mut out = batch.to_vec();
    match mode {
        NormalizeMode::None => {}
        NormalizeMode::Whiten => {
            let all: Vec<f64> = batch.iter().flat_map(|v| v.rewards.iter().copied()).collect();
            let (mean, std) = mean_std(&all);
            for v in &mut out {
                v.rewards.iter_mut().for_each(|r| *r = (*r - mean) / (std + 1e-8));
            }
        }
        NormalizeMode::Clip(c) => {
            for v in &mut out {
                v.rewards.iter_mut().for_each(|r| *r = r.clamp(-c, c));
            }
        }
    }
    out
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
