//! Corpus evaluation, paired bootstrap resampling, significance clusters and
//! length-bucketed breakdowns.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotator::Annotator;
use crate::corpus::ParallelPair;
use crate::error::{Error, Result};
use crate::metrics::{BleuConfig, BleuStats, ChrfConfig, ChrfStats};
use crate::policy::Policy;
use crate::rl::episode_cap;
use crate::textcore::{Vocabulary, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Bleu,
    Chrf,
    OracleQuality,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Bleu, Metric::Chrf, Metric::OracleQuality];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Bleu => "bleu",
            Metric::Chrf => "chrf",
            Metric::OracleQuality => "oracle_quality",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "bleu" => Ok(Metric::Bleu),
            "chrf" => Ok(Metric::Chrf),
            "oracle_quality" | "oracle" | "quality" => Ok(Metric::OracleQuality),
            _ => Err(Error::InvalidConfig(format!("unknown metric `{s}`"))),
        }
    }
}

/// Scores of one test segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub id: String,
    pub src_chars: usize,
    pub hyp: String,
    pub scores: BTreeMap<Metric, f64>,
    /// Set when decoding failed and the segment was scored 0.
    pub failed: bool,
    #[serde(skip)]
    bleu_stats: Option<BleuStats>,
    #[serde(skip)]
    chrf_stats: Option<ChrfStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemEval {
    pub name: String,
    pub corpus: BTreeMap<Metric, f64>,
    pub segments: Vec<SegmentScore>,
}

impl SystemEval {
    pub fn segment_scores(&self, metric: Metric) -> Vec<f64> {
        self.segments.iter().map(|s| s.scores.get(&metric).copied().unwrap_or(0.0)).collect()
    }

    pub fn score(&self, metric: Metric) -> Option<f64> {
        self.corpus.get(&metric).copied()
    }
}

/// Scores fixed hypotheses (`None` marks a decode failure) against a test set.
pub fn evaluate_hypotheses(
    name: &str,
    hyps: &[Option<String>],
    testset: &[ParallelPair],
    annotator: &Annotator,
    metrics: &[Metric],
) -> Result<SystemEval> {
    if testset.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if hyps.len() != testset.len() {
        return Err(Error::LengthMismatch(format!(
            "{} hypotheses for {} test pairs",
            hyps.len(),
            testset.len()
        )));
    }
    let bleu_seg = BleuConfig::sentence();
    let bleu_corpus = BleuConfig::corpus();
    let chrf_cfg = ChrfConfig::default();
    let mut segments = Vec::with_capacity(testset.len());
    let (mut bleu_total, mut chrf_total, mut quality_sum) = (BleuStats::default(), ChrfStats::default(), 0.0);
    for (hyp, pair) in hyps.iter().zip(testset) {
        let failed = hyp.is_none();
        let text = hyp.clone().unwrap_or_default();
        let mut scores = BTreeMap::new();
        let (mut bs, mut cs) = (None, None);
        for &m in metrics {
            let value = match m {
                Metric::Bleu => {
                    let hw: Vec<&str> = text.split_whitespace().collect();
                    let rw: Vec<&str> = pair.reference.split_whitespace().collect();
                    let stats = BleuStats::new(&hw, &rw, bleu_seg.max_ngram_order);
                    bleu_total.accumulate(&stats);
                    let s = stats.score(bleu_seg.smoothing);
                    bs = Some(stats);
                    s
                }
                Metric::Chrf => {
                    let stats = ChrfStats::new(&text, &pair.reference, chrf_cfg.char_order);
                    chrf_total.accumulate(&stats);
                    let s = stats.score(chrf_cfg.beta);
                    cs = Some(stats);
                    s
                }
                Metric::OracleQuality => {
                    let q = annotator.annotate(&text, &pair.reference)?.sentence_score * 100.0;
                    quality_sum += q;
                    q
                }
            };
            scores.insert(m, if failed { 0.0 } else { value });
        }
        segments.push(SegmentScore {
            id: pair.id.clone(),
            src_chars: pair.src.chars().count(),
            hyp: text,
            scores,
            failed,
            bleu_stats: bs,
            chrf_stats: cs,
        });
    }
    let mut corpus = BTreeMap::new();
    for &m in metrics {
        let v = match m {
            Metric::Bleu => bleu_total.score(bleu_corpus.smoothing),
            Metric::Chrf => chrf_total.score(chrf_cfg.beta),
            Metric::OracleQuality => quality_sum / testset.len() as f64,
        };
        corpus.insert(m, v);
    }
    Ok(SystemEval {
        name: name.to_owned(),
        corpus,
        segments,
    })
}

/// Greedy-decodes every source and scores the outputs.
pub fn evaluate_system(
    name: &str,
    policy: &Policy,
    vocab: &Vocabulary,
    annotator: &Annotator,
    testset: &[ParallelPair],
    metrics: &[Metric],
) -> Result<SystemEval> {
    let hyps: Vec<Option<String>> = testset
        .iter()
        .map(|pair| {
            let mut src = vocab.encode(&pair.src);
            src.push(EOS);
            let cap = episode_cap(src.len(), policy.config.max_len);
            policy.greedy_decode(&src, cap).ok().map(|ids| vocab.render(&ids).text)
        })
        .collect();
    evaluate_hypotheses(name, &hyps, testset, annotator, metrics)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_samples: usize,
    pub sample_size: usize,
    /// Significance level; `p < alpha` is significant.
    pub alpha: f64,
    /// Resample corpus-level statistics for BLEU and chrF instead of
    /// averaging segment scores.
    pub corpus_level: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            sample_size: 500,
            alpha: 0.05,
            corpus_level: false,
        }
    }
}

/// Generic paired bootstrap: `p` is the fraction of resamples (of
/// `sample_size` indices, with replacement) for which `score_b ≥ score_a`.
pub fn paired_bootstrap_by<R: Rng + ?Sized>(
    n: usize,
    n_samples: usize,
    sample_size: usize,
    rng: &mut R,
    score_a: impl Fn(&[usize]) -> f64,
    score_b: impl Fn(&[usize]) -> f64,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidInput("bootstrap needs at least two segments".into()));
    }
    if n_samples == 0 || sample_size == 0 {
        return Err(Error::InvalidConfig("bootstrap needs positive sample counts".into()));
    }
    let size = sample_size.min(n);
    let mut idx = vec![0; size];
    let mut b_wins = 0;
    for _ in 0..n_samples {
        idx.iter_mut().for_each(|i| *i = rng.gen_range(0..n));
        if score_b(&idx) >= score_a(&idx) {
            b_wins += 1;
        }
    }
    Ok(b_wins as f64 / n_samples as f64)
}

/// p-value for "A is better than B" on paired per-segment scores.
pub fn paired_bootstrap<R: Rng + ?Sized>(
    scores_a: &[f64],
    scores_b: &[f64],
    n_samples: usize,
    sample_size: usize,
    rng: &mut R,
) -> Result<f64> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::LengthMismatch(format!(
            "{} vs {} segment scores",
            scores_a.len(),
            scores_b.len()
        )));
    }
    fn resampled_mean(s: &[f64]) -> impl Fn(&[usize]) -> f64 + '_ {
        move |idx| idx.iter().map(|&i| s[i]).sum::<f64>() / idx.len() as f64
    }
    paired_bootstrap_by(
        scores_a.len(),
        n_samples,
        sample_size,
        rng,
        resampled_mean(scores_a),
        resampled_mean(scores_b),
    )
}

/// Cluster index (1 = best) per system, in input order. Systems are walked
/// by descending mean score; a new cluster starts when the next system is
/// significantly worse than the top member of the current cluster.
pub fn rank_clusters<R: Rng + ?Sized>(
    systems: &[(String, Vec<f64>)],
    cfg: &BootstrapConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    rank_clusters_by(systems.len(), |i| mean(&systems[i].1), |a, b, rng| {
        paired_bootstrap(&systems[a].1, &systems[b].1, cfg.n_samples, cfg.sample_size, rng)
    }, cfg.alpha, rng)
}

fn rank_clusters_by<R: Rng + ?Sized>(
    n: usize,
    score: impl Fn(usize) -> f64,
    mut p_value: impl FnMut(usize, usize, &mut R) -> Result<f64>,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidInput("no systems to rank".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    let mut clusters = vec![0; n];
    let mut cluster = 1;
    let mut top = order[0];
    clusters[top] = 1;
    for &sys in &order[1..] {
        if p_value(top, sys, rng)? < alpha {
            cluster += 1;
            top = sys;
        }
        clusters[sys] = cluster;
    }
    Ok(clusters)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean score of one source-length bucket `[lo, hi)`; `hi = None` is the
/// open bucket past the last edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub lo: usize,
    pub hi: Option<usize>,
    pub count: usize,
    pub mean: f64,
}

impl LengthBucket {
    pub fn label(&self) -> String {
        match self.hi {
            Some(hi) => format!("[{},{})", self.lo, hi),
            None => format!("[{},inf)", self.lo),
        }
    }
}

pub const DEFAULT_BUCKET_EDGES: [usize; 5] = [0, 100, 250, 500, 1000];

/// Buckets segments by source character length; only populated buckets are
/// returned. Lengths below the first edge are counted in the first bucket.
pub fn length_bucket_report<S: AsRef<str>>(scores: &[f64], sources: &[S], edges: &[usize]) -> Result<Vec<LengthBucket>> {
    if scores.len() != sources.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scores for {} sources",
            scores.len(),
            sources.len()
        )));
    }
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("bucket edges must be strictly increasing".into()));
    }
    let mut sums = vec![(0usize, 0.0); edges.len()];
    for (score, src) in scores.iter().zip(sources) {
        let len = src.as_ref().chars().count();
        let b = edges.iter().rposition(|&e| len >= e).unwrap_or(0);
        sums[b].0 += 1;
        sums[b].1 += score;
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .filter(|(_, (n, _))| *n > 0)
        .map(|(b, (n, s))| LengthBucket {
            lo: edges[b],
            hi: edges.get(b + 1).copied(),
            count: n,
            mean: s / n as f64,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub metric: Metric,
    pub a: String,
    pub b: String,
    /// p-value for "a better than b".
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub name: String,
    pub corpus: BTreeMap<Metric, f64>,
    pub clusters: BTreeMap<Metric, usize>,
    pub length_buckets: Vec<LengthBucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub systems: Vec<SystemSummary>,
    pub pairwise: Vec<PairwiseTest>,
    /// Metric used for the length-bucket table.
    pub bucket_metric: Metric,
    pub bucket_edges: Vec<usize>,
}

fn corpus_score_of(sys: &SystemEval, metric: Metric, idx: &[usize]) -> f64 {
    match metric {
        Metric::Bleu => {
            let mut total = BleuStats::default();
            for &i in idx {
                if let Some(s) = &sys.segments[i].bleu_stats {
                    total.accumulate(s);
                }
            }
            total.score(BleuConfig::corpus().smoothing)
        }
        Metric::Chrf => {
            let mut total = ChrfStats::default();
            for &i in idx {
                if let Some(s) = &sys.segments[i].chrf_stats {
                    total.accumulate(s);
                }
            }
            total.score(ChrfConfig::default().beta)
        }
        Metric::OracleQuality => idx.iter().map(|&i| sys.segments[i].scores[&metric]).sum::<f64>() / idx.len() as f64,
    }
}

/// Pairwise significance, clusters and length buckets for several systems
/// evaluated on the same test set.
pub fn build_report(
    systems: &[SystemEval],
    testset: &[ParallelPair],
    cfg: &BootstrapConfig,
    bucket_edges: &[usize],
    seed: u64,
) -> Result<EvalReport> {
    if systems.is_empty() {
        return Err(Error::InvalidInput("no systems".into()));
    }
    let n = testset.len();
    if systems.iter().any(|s| s.segments.len() != n) {
        return Err(Error::LengthMismatch("systems scored on different test sets".into()));
    }
    let metrics: Vec<Metric> = systems[0].corpus.keys().copied().collect();
    let bucket_metric = if metrics.contains(&Metric::OracleQuality) {
        Metric::OracleQuality
    } else {
        metrics[0]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairwise = Vec::new();
    let mut clusters: Vec<BTreeMap<Metric, usize>> = vec![BTreeMap::new(); systems.len()];
    for &m in &metrics {
        let seg: Vec<Vec<f64>> = systems.iter().map(|s| s.segment_scores(m)).collect();
        let use_corpus = cfg.corpus_level && m != Metric::OracleQuality;
        let mut p_value = |a: usize, b: usize, rng: &mut ChaCha8Rng| -> Result<f64> {
            if use_corpus {
                paired_bootstrap_by(
                    n,
                    cfg.n_samples,
                    cfg.sample_size,
                    rng,
                    |idx| corpus_score_of(&systems[a], m, idx),
                    |idx| corpus_score_of(&systems[b], m, idx),
                )
            } else {
                paired_bootstrap(&seg[a], &seg[b], cfg.n_samples, cfg.sample_size, rng)
            }
        };
        if n >= 2 {
            for a in 0..systems.len() {
                for b in 0..systems.len() {
                    if a != b {
                        pairwise.push(PairwiseTest {
                            metric: m,
                            a: systems[a].name.clone(),
                            b: systems[b].name.clone(),
                            p_value: p_value(a, b, &mut rng)?,
                        });
                    }
                }
            }
        }
        let ranks = if n >= 2 {
            rank_clusters_by(systems.len(), |i| systems[i].corpus[&m], &mut p_value, cfg.alpha, &mut rng)?
        } else {
            vec![1; systems.len()]
        };
        for (c, r) in clusters.iter_mut().zip(ranks) {
            c.insert(m, r);
        }
    }
    let sources: Vec<&str> = testset.iter().map(|p| p.src.as_str()).collect();
    let summaries = systems
        .iter()
        .zip(clusters)
        .map(|(s, c)| {
            Ok(SystemSummary {
                name: s.name.clone(),
                corpus: s.corpus.clone(),
                clusters: c,
                length_buckets: length_bucket_report(&s.segment_scores(bucket_metric), &sources, bucket_edges)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        systems: summaries,
        pairwise,
        bucket_metric,
        bucket_edges: bucket_edges.to_vec(),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text table: one row per system, `score (cluster)` per metric,
    /// followed by the length-bucket means.
    pub fn to_table(&self) -> String {
        let metrics: Vec<Metric> = self.systems.first().map(|s| s.corpus.keys().copied().collect()).unwrap_or_default();
        let width = self.systems.iter().map(|s| s.name.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:width$}", "system");
        for m in &metrics {
            let _ = write!(out, "  {:>20}", m.as_str());
        }
        out.push('\n');
        for s in &self.systems {
            let _ = write!(out, "{:width$}", s.name);
            for m in &metrics {
                let _ = write!(out, "  {:>15.2} ({})", s.corpus[m], s.clusters.get(m).copied().unwrap_or(0));
            }
            out.push('\n');
        }
        let _ = writeln!(out, "\n{} by source length (chars)", self.bucket_metric);
        for s in &self.systems {
            let _ = write!(out, "{:width$}", s.name);
            for b in &s.length_buckets {
                let _ = write!(out, "  {} {:.2} (n={})", b.label(), b.mean, b.count);
            }
            out.push('\n');
        }
        out
    }
}

/// Per-segment scores of several systems as CSV.
pub fn write_segments_csv(systems: &[SystemEval], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("system,id,src_chars,failed,metric,score\n");
    for s in systems {
        for seg in &s.segments {
            for (m, v) in &seg.scores {
                let _ = writeln!(text, "{},{},{},{},{},{}", s.name, seg.id, seg.src_chars, seg.failed, m, v);
            }
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(9)
    }

    #[test]
    fn bootstrap_extremes() {
        let b: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 10.0).collect();
        assert_eq!(paired_bootstrap(&a, &b, 100, 500, &mut rng()).unwrap(), 0.0);
        assert!(paired_bootstrap(&b, &b, 100, 500, &mut rng()).unwrap() >= 0.4);
        assert!(paired_bootstrap(&a, &b[1..], 100, 500, &mut rng()).is_err());
    }

    #[test]
    fn clusters_for_identical_and_separated() {
        let base: Vec<f64> = (0..100).map(|i| (i % 7) as f64).collect();
        let same = vec![("a".to_string(), base.clone()), ("b".to_string(), base.clone())];
        assert_eq!(rank_clusters(&same, &BootstrapConfig::default(), &mut rng()).unwrap(), vec![1, 1]);
        let sep = vec![
            ("low".to_string(), base.clone()),
            ("high".to_string(), base.iter().map(|x| x + 20.0).collect()),
            ("mid".to_string(), base.iter().map(|x| x + 10.0).collect()),
        ];
        assert_eq!(rank_clusters(&sep, &BootstrapConfig::default(), &mut rng()).unwrap(), vec![3, 1, 2]);
    }

    #[test]
    fn bootstrap_power_on_gaussian_systems() {
        use rand_distr::{Distribution, Normal};
        let (a_dist, b_dist) = (Normal::new(75.0, 5.0).unwrap(), Normal::new(70.0, 5.0).unwrap());
        let mut r = rng();
        let hits = (0..100)
            .filter(|_| {
                let a: Vec<f64> = (0..500).map(|_| a_dist.sample(&mut r)).collect();
                let b: Vec<f64> = (0..500).map(|_| b_dist.sample(&mut r)).collect();
                paired_bootstrap(&a, &b, 200, 500, &mut r).unwrap() < 0.05
            })
            .count();
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn insignificant_pair_shares_a_cluster() {
        use rand_distr::{Distribution, Normal};
        let noise = Normal::new(0.0, 5.0).unwrap();
        let mut r = rng();
        let base: Vec<f64> = (0..500).map(|i| 40.0 + (i % 30) as f64).collect();
        let mut shifted = |d: f64| -> Vec<f64> { base.iter().map(|x| x + d + noise.sample(&mut r)).collect() };
        let systems = vec![
            ("a".to_string(), shifted(10.0)),
            ("b".to_string(), shifted(9.9)),
            ("c".to_string(), shifted(0.0)),
        ];
        assert_eq!(rank_clusters(&systems, &BootstrapConfig::default(), &mut rng()).unwrap(), vec![1, 1, 2]);
    }

    #[test]
    fn buckets_partition_the_corpus() {
        let srcs = ["a".repeat(50), "b".repeat(150), "c".repeat(1200), "d".repeat(99)];
        let r = length_bucket_report(&[1.0, 2.0, 3.0, 5.0], &srcs, &DEFAULT_BUCKET_EDGES).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!((r[0].count, r[0].mean), (2, 3.0));
        assert_eq!(r[2].hi, None);
        assert_eq!(r.iter().map(|b| b.count).sum::<usize>(), 4);
        assert!(length_bucket_report(&[1.0], &["x"], &[0, 0]).is_err());
    }

    #[test]
    fn copying_references_is_perfect() {
        let test = vec![
            ParallelPair { id: "0".into(), src: "x y".into(), reference: "ka ri su to me".into() },
            ParallelPair { id: "1".into(), src: "z".into(), reference: "to ka me ri".into() },
        ];
        let ann = Annotator::default();
        let hyps: Vec<_> = test.iter().map(|p| Some(p.reference.clone())).collect();
        let e = evaluate_hypotheses("copy", &hyps, &test, &ann, &Metric::ALL).unwrap();
        assert!((e.corpus[&Metric::Bleu] - 100.0).abs() < 1e-9);
        assert!((e.corpus[&Metric::OracleQuality] - 100.0).abs() < 1e-9);
        let empty = evaluate_hypotheses("empty", &[Some(String::new()), None], &test, &ann, &Metric::ALL).unwrap();
        assert_eq!(empty.corpus[&Metric::Bleu], 0.0);
        assert!(empty.segments[1].failed);
    }
}
