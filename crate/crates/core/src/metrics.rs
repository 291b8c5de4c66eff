//! Lexical MT metrics: BLEU (sentence and corpus) and chrF.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    None,
    /// Zero match counts become `epsilon` before the geometric mean.
    AddEpsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_ngram_order: usize,
    pub smoothing: Smoothing,
}

impl BleuConfig {
    /// Smoothed configuration used for sentence and prefix BLEU.
    pub fn sentence() -> Self {
        Self {
            max_ngram_order: 4,
            smoothing: Smoothing::AddEpsilon(0.1),
        }
    }

    /// Unsmoothed configuration used for corpus BLEU.
    pub fn corpus() -> Self {
        Self {
            max_ngram_order: 4,
            smoothing: Smoothing::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_ngram_order < 1 {
            return Err(Error::InvalidConfig("max_ngram_order must be >= 1".into()));
        }
        if let Smoothing::AddEpsilon(eps) = self.smoothing {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidConfig(format!("epsilon must be positive, got {eps}")));
            }
        }
        Ok(())
    }
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self::sentence()
    }
}

/// Clipped n-gram matches and totals per order, plus lengths.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn new<T: AsRef<str>>(hyp: &[T], reference: &[T], max_order: usize) -> Self {
        let mut matches = vec![0; max_order];
        let mut totals = vec![0; max_order];
        for n in 1..=max_order {
            let ref_counts = ngram_counts(reference, n);
            let hyp_counts = ngram_counts(hyp, n);
            totals[n - 1] = hyp.len().saturating_sub(n - 1);
            matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        Self {
            matches,
            totals,
            hyp_len: hyp.len(),
            ref_len: reference.len(),
        }
    }

    pub fn accumulate(&mut self, other: &BleuStats) {
        if self.matches.is_empty() {
            self.matches = vec![0; other.matches.len()];
            self.totals = vec![0; other.totals.len()];
        }
        for n in 0..self.matches.len() {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// BLEU in `[0, 100]` from accumulated statistics.
    pub fn score(&self, smoothing: Smoothing) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for (&m, &t) in self.matches.iter().zip(&self.totals) {
            let precision = match smoothing {
                Smoothing::None => {
                    if m == 0 {
                        return 0.0;
                    }
                    m as f64 / t as f64
                }
                Smoothing::AddEpsilon(eps) => {
                    let num = if m == 0 { eps } else { m as f64 };
                    num / t.max(1) as f64
                }
            };
            log_sum += precision.ln();
        }
        let order = self.matches.len() as f64;
        let bp = if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        (100.0 * bp * (log_sum / order).exp()).clamp(0.0, 100.0)
    }
}

fn ngram_counts<T: AsRef<str>>(words: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU over word tokens. An empty hypothesis scores 0.
pub fn sentence_bleu<T: AsRef<str>>(hyp: &[T], reference: &[T], cfg: &BleuConfig) -> f64 {
    BleuStats::new(hyp, reference, cfg.max_ngram_order).score(cfg.smoothing)
}

/// Corpus BLEU from micro-averaged n-gram statistics.
pub fn corpus_bleu<T: AsRef<str>>(pairs: &[(Vec<T>, Vec<T>)], cfg: &BleuConfig) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("corpus_bleu needs at least one pair".into()));
    }
    let mut total = BleuStats::default();
    for (h, r) in pairs {
        total.accumulate(&BleuStats::new(h, r, cfg.max_ngram_order));
    }
    Ok(total.score(cfg.smoothing))
}

/// Whitespace tokenization used for BLEU.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChrfConfig {
    pub char_order: usize,
    pub beta: f64,
}

impl Default for ChrfConfig {
    fn default() -> Self {
        Self {
            char_order: 6,
            beta: 2.0,
        }
    }
}

impl ChrfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.char_order < 1 || !(self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!("invalid chrF config {self:?}")));
        }
        Ok(())
    }
}

/// Per-order character n-gram statistics `(hyp_total, ref_total, matches)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChrfStats {
    pub orders: Vec<(usize, usize, usize)>,
}

impl ChrfStats {
    pub fn new(hyp: &str, reference: &str, char_order: usize) -> Self {
        let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
        let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
        let orders = (1..=char_order)
            .map(|n| {
                let hc = char_ngrams(&h, n);
                let rc = char_ngrams(&r, n);
                let matches = hc
                    .iter()
                    .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                    .sum();
                (h.len().saturating_sub(n - 1), r.len().saturating_sub(n - 1), matches)
            })
            .collect();
        Self { orders }
    }

    pub fn accumulate(&mut self, other: &ChrfStats) {
        if self.orders.is_empty() {
            self.orders = vec![(0, 0, 0); other.orders.len()];
        }
        for (a, b) in self.orders.iter_mut().zip(&other.orders) {
            a.0 += b.0;
            a.1 += b.1;
            a.2 += b.2;
        }
    }

    /// F-beta of precision and recall averaged over the orders for which both
    /// sides have at least one n-gram, scaled to `[0, 100]`.
    pub fn score(&self, beta: f64) -> f64 {
        let effective: Vec<_> = self.orders.iter().filter(|o| o.0 > 0 && o.1 > 0).collect();
        if effective.is_empty() {
            return 0.0;
        }
        let k = effective.len() as f64;
        let p = effective.iter().map(|o| o.2 as f64 / o.0 as f64).sum::<f64>() / k;
        let r = effective.iter().map(|o| o.2 as f64 / o.1 as f64).sum::<f64>() / k;
        if p + r == 0.0 {
            return 0.0;
        }
        let b2 = beta * beta;
        100.0 * (1.0 + b2) * p * r / (b2 * p + r)
    }
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

pub fn chrf(hyp: &str, reference: &str, cfg: &ChrfConfig) -> f64 {
    ChrfStats::new(hyp, reference, cfg.char_order).score(cfg.beta)
}

/// Corpus chrF from summed per-order statistics.
pub fn corpus_chrf<S: AsRef<str>>(pairs: &[(S, S)], cfg: &ChrfConfig) -> f64 {
    let mut total = ChrfStats::default();
    for (h, r) in pairs {
        total.accumulate(&ChrfStats::new(h.as_ref(), r.as_ref(), cfg.char_order));
    }
    total.score(cfg.beta)
}
