//! Desk-scale experiment presets: corpus and vocabulary construction, MLE
//! warm start, RL runs, granularity comparison and severity-map ablation.

use serde::{Deserialize, Serialize};

use crate::annotator::Annotator;
use crate::corpus::{CipherTask, ParallelPair, ReorderRule, SuffixRule, TaskSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_system, length_bucket_report, LengthBucket, Metric, SystemEval, DEFAULT_BUCKET_EDGES};
use crate::policy::{encode_pair, EpochLog, MleConfig, MleReport, MleTrainer, Policy, PolicyConfig, Sequence};
use crate::reward::{Granularity, SeverityMap};
use crate::rl::{train_rl, Algo, LogRow, RewardSpec, RlConfig, RlEnv, RlReport};
use crate::textcore::{build_vocab, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskConfig {
    pub task: TaskSpec,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub corpus_seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_len: usize,
    pub policy_seed: u64,
    pub mle: MleConfig,
}

impl DeskConfig {
    /// Short-sentence cipher task for MLE competence.
    pub fn cipher() -> Self {
        Self {
            task: TaskSpec::default(),
            n_train: 20_000,
            n_dev: 500,
            n_test: 1_000,
            corpus_seed: 1,
            embed_dim: 32,
            hidden_dim: 64,
            max_len: 64,
            policy_seed: 0,
            mle: MleConfig {
                max_epochs: 8,
                ..MleConfig::default()
            },
        }
    }

    /// Long sentences (up to 64 words) over a small lexicon, with a brief
    /// MLE warm start that leaves room for RL to improve.
    pub fn long_sequence() -> Self {
        Self {
            task: TaskSpec {
                lexicon_size: 40,
                min_len: 4,
                max_len: 64,
                reorder: ReorderRule::Identity,
                suffix: SuffixRule::default(),
                lexicon_seed: 5,
            },
            n_train: 4_000,
            n_dev: 200,
            n_test: 300,
            corpus_seed: 11,
            embed_dim: 32,
            hidden_dim: 64,
            max_len: 160,
            policy_seed: 3,
            mle: MleConfig {
                max_epochs: 100,
                max_steps: 1_000,
                ..MleConfig::default()
            },
        }
    }
}

/// A generated task with its splits, vocabulary and oracle annotator.
pub struct Desk {
    pub config: DeskConfig,
    pub task: CipherTask,
    pub vocab: Vocabulary,
    pub annotator: Annotator,
    pub train: Vec<ParallelPair>,
    pub dev: Vec<ParallelPair>,
    pub test: Vec<ParallelPair>,
}

impl Desk {
    pub fn build(config: DeskConfig) -> Result<Self> {
        let task = CipherTask::new(config.task.clone())?;
        let seed = config.corpus_seed;
        let train = task.generate(config.n_train, seed);
        let dev = task.generate(config.n_dev, seed.wrapping_add(1_000_003));
        let test = task.generate(config.n_test, seed.wrapping_add(2_000_003));
        let words = task.surface_words(true);
        // room for single characters so that no text maps to UNK
        let vocab = build_vocab(&words, words.len() + 4 + 64)?;
        let annotator = Annotator::new(task.synonym_table());
        Ok(Self {
            config,
            task,
            vocab,
            annotator,
            train,
            dev,
            test,
        })
    }

    pub fn encode(&self, pairs: &[ParallelPair]) -> Vec<Sequence> {
        pairs.iter().map(|p| encode_pair(&self.vocab, p)).collect()
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            embed_dim: self.config.embed_dim,
            hidden_dim: self.config.hidden_dim,
            vocab_size: self.vocab.len(),
            max_len: self.config.max_len,
            seed: self.config.policy_seed,
        }
    }

    /// MLE training from a fresh initialization.
    pub fn pretrain(&self, on_epoch: impl FnMut(&EpochLog, &Policy)) -> Result<(Policy, MleReport)> {
        let mut policy = Policy::new(self.policy_config())?;
        let mut trainer = MleTrainer::new(self.config.mle, &policy)?;
        let report = trainer.train(&mut policy, &self.encode(&self.train), &self.encode(&self.dev), on_epoch)?;
        Ok((policy, report))
    }

    pub fn evaluate(&self, name: &str, policy: &Policy) -> Result<SystemEval> {
        evaluate_system(name, policy, &self.vocab, &self.annotator, &self.test, &Metric::ALL)
    }

    /// Fraction of test sources whose greedy output equals the reference.
    pub fn exact_match(&self, policy: &Policy) -> Result<f64> {
        let eval = evaluate_system("em", policy, &self.vocab, &self.annotator, &self.test, &[])?;
        let hits = eval.segments.iter().zip(&self.test).filter(|(s, p)| s.hyp == p.reference).count();
        Ok(hits as f64 / self.test.len() as f64)
    }

    /// Fine-tunes a copy of `warm` (which also serves as the KL reference).
    pub fn train_rl(
        &self,
        name: &str,
        warm: &Policy,
        cfg: &RlConfig,
        spec: &RewardSpec,
        sink: impl FnMut(&LogRow),
    ) -> Result<RlRun> {
        let env = RlEnv::new(&self.vocab, &self.annotator, &self.train)?;
        let mut policy = warm.clone();
        let report = train_rl(&mut policy, Some(warm), &env, cfg, spec, sink)?;
        let eval = self.evaluate(name, &policy)?;
        Ok(RlRun {
            name: name.to_owned(),
            policy,
            report,
            eval,
        })
    }

    pub fn sources(&self) -> Vec<&str> {
        self.test.iter().map(|p| p.src.as_str()).collect()
    }
}

pub struct RlRun {
    pub name: String,
    pub policy: Policy,
    pub report: RlReport,
    pub eval: SystemEval,
}

impl RlRun {
    pub fn quality(&self) -> f64 {
        self.eval.corpus[&Metric::OracleQuality]
    }
}

/// The four training presets: sRL/tRL × REINFORCE/PPO.
pub fn method_preset(name: &str) -> Result<(Algo, Granularity)> {
    match name.to_ascii_lowercase().as_str() {
        "srl-ppo" => Ok((Algo::Ppo, Granularity::Sentence)),
        "trl-ppo" => Ok((Algo::Ppo, Granularity::Token)),
        "srl-reinforce" => Ok((Algo::Reinforce, Granularity::Sentence)),
        "trl-reinforce" => Ok((Algo::Reinforce, Granularity::Token)),
        _ => Err(Error::InvalidConfig(format!(
            "unknown method `{name}` (expected srl-ppo, trl-ppo, srl-reinforce or trl-reinforce)"
        ))),
    }
}

/// RL settings used for the desk comparisons.
pub fn desk_rl_config(algo: Algo, granularity: Granularity, seed: u64) -> RlConfig {
    RlConfig {
        algo,
        granularity,
        max_episodes: 2_000,
        seed,
        ..RlConfig::default()
    }
}

/// Least-squares slope of `values` against their index.
pub fn slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Fraction of sliding `window`-step windows whose fitted reward slope is
/// negative; `None` if the series is shorter than one window.
pub fn negative_slope_fraction(values: &[f64], window: usize) -> Option<f64> {
    if window < 2 || values.len() < window {
        return None;
    }
    let windows: Vec<f64> = values.windows(window).map(slope).collect();
    Some(windows.iter().filter(|&&s| s < 0.0).count() as f64 / windows.len() as f64)
}

pub const STABILITY_WINDOW: usize = 50;

/// Summary of one RL run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub oracle_quality: f64,
    pub bleu: f64,
    pub chrf: f64,
    pub negative_slope_fraction: Option<f64>,
    pub buckets: Vec<LengthBucket>,
    pub episodes: usize,
    pub dropped: usize,
}

impl RunSummary {
    pub fn of(run: &RlRun, seed: u64, desk: &Desk) -> Result<Self> {
        let rewards: Vec<f64> = run.report.log.iter().map(|r| r.mean_reward).collect();
        Ok(Self {
            name: run.name.clone(),
            seed,
            oracle_quality: run.quality(),
            bleu: run.eval.corpus[&Metric::Bleu],
            chrf: run.eval.corpus[&Metric::Chrf],
            negative_slope_fraction: negative_slope_fraction(&rewards, STABILITY_WINDOW),
            buckets: length_bucket_report(
                &run.eval.segment_scores(Metric::OracleQuality),
                &desk.sources(),
                &DEFAULT_BUCKET_EDGES,
            )?,
            episodes: run.report.episodes,
            dropped: run.report.dropped,
        })
    }
}

/// sRL-PPO vs tRL-PPO from one warm start, for each seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub srl: RunSummary,
    pub trl: RunSummary,
}

impl SeedComparison {
    pub fn quality_gap(&self) -> f64 {
        self.trl.oracle_quality - self.srl.oracle_quality
    }

    /// Per-bucket `tRL − sRL` gaps over buckets populated in both runs.
    pub fn bucket_gaps(&self) -> Vec<(String, f64)> {
        self.trl
            .buckets
            .iter()
            .filter_map(|t| {
                self.srl
                    .buckets
                    .iter()
                    .find(|s| s.lo == t.lo)
                    .map(|s| (t.label(), t.mean - s.mean))
            })
            .collect()
    }
}

pub fn compare_granularity(
    desk: &Desk,
    warm: &Policy,
    map: &SeverityMap,
    seeds: &[u64],
    base: impl Fn(Algo, Granularity, u64) -> RlConfig,
    mut progress: impl FnMut(&str, u64, &LogRow),
) -> Result<Vec<SeedComparison>> {
    let spec = RewardSpec::oracle(map.clone());
    seeds
        .iter()
        .map(|&seed| {
            let mut run = |name: &str, g: Granularity| -> Result<RunSummary> {
                let cfg = base(Algo::Ppo, g, seed);
                let r = desk.train_rl(name, warm, &cfg, &spec, |row| progress(name, seed, row))?;
                RunSummary::of(&r, seed, desk)
            };
            Ok(SeedComparison {
                seed,
                srl: run("srl-ppo", Granularity::Sentence)?,
                trl: run("trl-ppo", Granularity::Token)?,
            })
        })
        .collect()
}

/// tRL-PPO under each severity map, for each seed.
pub fn severity_ablation(
    desk: &Desk,
    warm: &Policy,
    maps: &[SeverityMap],
    seeds: &[u64],
    base: impl Fn(Algo, Granularity, u64) -> RlConfig,
    mut progress: impl FnMut(&str, u64, &LogRow),
) -> Result<Vec<RunSummary>> {
    let mut out = Vec::new();
    for &seed in seeds {
        for map in maps {
            let cfg = base(Algo::Ppo, Granularity::Token, seed);
            let name = format!("trl-ppo-{}", map.name);
            let r = desk.train_rl(&name, warm, &cfg, &RewardSpec::oracle(map.clone()), |row| {
                progress(&name, seed, row)
            })?;
            out.push(RunSummary::of(&r, seed, desk)?);
        }
    }
    Ok(out)
}

/// Plain-text table of ablation results: one row per map, one column per seed.
pub fn ablation_table(rows: &[RunSummary]) -> String {
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.dedup();
    seeds.sort_unstable();
    seeds.dedup();
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.name.as_str()) {
            names.push(&r.name);
        }
    }
    let mut out = format!("{:<16}", "run");
    for s in &seeds {
        out.push_str(&format!("  {:>10}", format!("seed {s}")));
    }
    out.push_str(&format!("  {:>10}\n", "mean"));
    for name in names {
        out.push_str(&format!("{name:<16}"));
        let mut vals = Vec::new();
        for s in &seeds {
            match rows.iter().find(|r| r.name == name && r.seed == *s) {
                Some(r) => {
                    vals.push(r.oracle_quality);
                    out.push_str(&format!("  {:>10.2}", r.oracle_quality));
                }
                None => out.push_str(&format!("  {:>10}", "-")),
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        out.push_str(&format!("  {mean:>10.2}\n"));
    }
    out
}
