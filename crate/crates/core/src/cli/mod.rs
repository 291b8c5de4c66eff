//! Command-line front end. Every subcommand resolves a [`RunConfig`] (preset,
//! then `--config` file, then flags), writes its artifacts into a run
//! directory and finishes with a `manifest.json` listing them.
//!
//! Exit status: 0 on success, 1 on usage or validation errors, 2 on a
//! numerical abort.

mod config;
mod rundir;
pub mod svg;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use config::{Preset, RunConfig};
pub use rundir::{hash_file, sha256_hex, FileEntry, RunDir, RunManifest, MANIFEST, SNAPSHOT};

use crate::annotator::{save_annotations, SpanAnnotation};
use crate::corpus::{save_corruptions, save_jsonl, CorruptionRates};
use crate::error::{Error, Result};
use crate::eval::{build_report, write_segments_csv, LengthBucket, Metric, DEFAULT_BUCKET_EDGES};
use crate::experiment::{compare_granularity, severity_ablation, ablation_table, Desk, RunSummary, SeedComparison};
use crate::policy::{EpochLog, Policy};
use crate::reward::{Granularity, SeverityMap};
use crate::rl::{Algo, KlControl, LogRow, RewardSource, RlConfig};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "FINEGRAIN_OUT";

#[derive(Debug, Parser)]
#[command(name = "finegrain", version, about = "Token- vs sentence-level reward optimization on synthetic translation tasks")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML file overlaying the preset defaults (flags override it).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Task preset; defaults to the file's `preset` key, else `long`.
    #[arg(long, value_enum, global = true)]
    pub preset: Option<Preset>,
    /// Output root; defaults to $FINEGRAIN_OUT, then `./runs`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run directory name under the output root (defaults to the subcommand).
    #[arg(long, global = true)]
    pub name: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/dev/test splits, the vocabulary and optional corruptions.
    GenCorpus(GenCorpusArgs),
    /// MLE pretraining; writes a checkpoint.
    TrainMle(TrainMleArgs),
    /// RL fine-tuning under one method preset.
    TrainRl(TrainRlArgs),
    /// Oracle span annotation of hypotheses.
    Annotate(AnnotateArgs),
    /// Corpus metrics, bootstrap significance, clusters and length buckets.
    Evaluate(EvaluateArgs),
    /// sRL-PPO vs tRL-PPO from one warm start over several seeds.
    Compare(CompareArgs),
    /// tRL-PPO under each severity map over several seeds.
    AblateSeverity(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_dev: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Per-word corruption probabilities applied to test references.
    #[arg(long, default_value_t = 0.0)]
    pub corrupt_minor: f64,
    #[arg(long, default_value_t = 0.0)]
    pub corrupt_major: f64,
    #[arg(long, default_value_t = 0.0)]
    pub corrupt_critical: f64,
}

#[derive(Debug, Args)]
pub struct TrainMleArgs {
    /// Policy initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RlArgs {
    /// Warm-start checkpoint (also the KL reference); pretrains when absent.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// off | fixed:COEF | adaptive[:INIT:TARGET]
    #[arg(long)]
    pub kl: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainRlArgs {
    #[command(flatten)]
    pub rl: RlArgs,
    #[arg(long)]
    pub algo: Option<Algo>,
    #[arg(long)]
    pub granularity: Option<Granularity>,
    /// oracle-mqm | bleu | partial-bleu
    #[arg(long)]
    pub reward: Option<RewardSource>,
    /// Preset name (bin, mqm, rmqm, our, rour) or map file.
    #[arg(long)]
    pub severity_map: Option<SeverityMap>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// JSONL with `id`, `hyp` and `ref` fields.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    pub input: Option<PathBuf>,
    /// Annotate this policy's greedy outputs on the preset test split.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// `NAME=CHECKPOINT` or a checkpoint path (named by its file stem).
    #[arg(long = "system", required = true)]
    pub systems: Vec<String>,
    #[arg(long)]
    pub bootstrap_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub rl: RlArgs,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub severity_map: Option<SeverityMap>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub rl: RlArgs,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated preset names or map files.
    #[arg(long, value_delimiter = ',')]
    pub maps: Option<Vec<String>>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, argv) {
        Ok(dir) => {
            eprintln!("run directory: {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

/// Runs a parsed command; returns its run directory.
pub fn execute(cli: Cli, argv: Vec<String>) -> Result<PathBuf> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path, cli.common.preset)?,
        None => RunConfig::preset(cli.common.preset.unwrap_or(Preset::Long)),
    };
    let ctx = Context {
        common: cli.common,
        argv,
    };
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(&ctx, &mut cfg, a),
        Command::TrainMle(a) => train_mle(&ctx, &mut cfg, a),
        Command::TrainRl(a) => train_rl(&ctx, &mut cfg, a),
        Command::Annotate(a) => annotate(&ctx, &mut cfg, a),
        Command::Evaluate(a) => evaluate(&ctx, &mut cfg, a),
        Command::Compare(a) => compare(&ctx, &mut cfg, a),
        Command::AblateSeverity(a) => ablate(&ctx, &mut cfg, a),
    }
}

struct Context {
    common: Common,
    argv: Vec<String>,
}

impl Context {
    fn out_root(&self) -> PathBuf {
        self.common
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    fn open(&self, command: &str, cfg: &RunConfig, seed: u64) -> Result<RunDir> {
        cfg.validate()?;
        let name = self.common.name.clone().unwrap_or_else(|| command.to_owned());
        RunDir::create(self.out_root().join(name), command, self.argv.clone(), seed, &cfg.snapshot()?)
    }
}

fn write_json<T: Serialize>(run: &mut RunDir, name: &str, value: &T) -> Result<()> {
    run.write(name, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn parse_kl(text: &str) -> Result<KlControl> {
    let bad = || Error::InvalidConfig(format!("bad --kl `{text}` (off | fixed:COEF | adaptive[:INIT:TARGET])"));
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    match parts.as_slice() {
        ["off"] => Ok(KlControl::Off),
        ["fixed", c] => Ok(KlControl::Fixed { coef: num(c)? }),
        ["adaptive"] => Ok(RlConfig::default().kl),
        ["adaptive", i, t] => Ok(KlControl::Adaptive {
            init_coef: num(i)?,
            target: num(t)?,
        }),
        _ => Err(bad()),
    }
}

fn apply_rl_args(cfg: &mut RunConfig, a: &RlArgs) -> Result<()> {
    if let Some(n) = a.episodes {
        cfg.rl.max_episodes = n;
    }
    if let Some(lr) = a.lr {
        cfg.rl.lr = lr;
    }
    if let Some(kl) = &a.kl {
        cfg.rl.kl = parse_kl(kl)?;
    }
    Ok(())
}

fn build_desk(cfg: &RunConfig) -> Result<Desk> {
    eprintln!("building {:?} corpus ...", cfg.preset);
    Desk::build(cfg.desk.clone())
}

fn load_checkpoint(desk: &Desk, path: &Path, run: &mut RunDir) -> Result<Policy> {
    let policy = Policy::load(path)?;
    if policy.config.vocab_size != desk.vocab.len() {
        return Err(Error::InvalidInput(format!(
            "{}: vocabulary size {} does not match the configured corpus ({})",
            path.display(),
            policy.config.vocab_size,
            desk.vocab.len()
        )));
    }
    run.add_input(path)?;
    Ok(policy)
}

fn mle_progress(log: &EpochLog, _: &Policy) {
    eprintln!(
        "  mle epoch {} steps {} train {:.4} dev {:.4} lr {:.2e}",
        log.epoch, log.steps, log.train_loss, log.dev_loss, log.lr
    );
}

/// The warm start: a checkpoint when given, else MLE pretraining.
fn warm_start(desk: &Desk, init: Option<&Path>, run: &mut RunDir) -> Result<Policy> {
    match init {
        Some(path) => load_checkpoint(desk, path, run),
        None => {
            eprintln!("pretraining warm start ...");
            let (policy, _) = desk.pretrain(mle_progress)?;
            policy.save(run.path("warm.json"))?;
            run.record("warm.json")?;
            Ok(policy)
        }
    }
}

fn rl_progress(name: &str, seed: u64, row: &LogRow) {
    if row.step % 25 == 0 {
        eprintln!(
            "  {name} seed {seed} step {} episodes {} reward {:.3} kl {:.2} clip {:.3}",
            row.step, row.episodes, row.mean_reward, row.kl, row.clip_fraction
        );
    }
}

fn log_with_run_columns(rows: &[(String, u64, LogRow)]) -> String {
    let mut text = format!("run,seed,{}\n", LogRow::HEADER);
    for (name, seed, row) in rows {
        let _ = writeln!(text, "{name},{seed},{}", row.csv());
    }
    text
}

fn reward_curves(title: &str, rows: &[(String, u64, LogRow)]) -> String {
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (name, seed, row) in rows {
        let key = format!("{name} s{seed}");
        let point = (row.episodes as f64, row.mean_reward);
        match series.iter_mut().find(|(k, _)| *k == key) {
            Some((_, pts)) => pts.push(point),
            None => series.push((key, vec![point])),
        }
    }
    svg::line_plot(title, "episodes", "mean reward", &series)
}

fn bucket_bars(title: &str, systems: &[(String, &[LengthBucket])]) -> String {
    let mut cats: Vec<(usize, String)> = Vec::new();
    for (_, buckets) in systems {
        for b in *buckets {
            if !cats.iter().any(|(lo, _)| *lo == b.lo) {
                cats.push((b.lo, b.label()));
            }
        }
    }
    cats.sort();
    let series = systems
        .iter()
        .map(|(name, buckets)| {
            let vals = cats
                .iter()
                .map(|(lo, _)| buckets.iter().find(|b| b.lo == *lo).map(|b| b.mean))
                .collect();
            (name.clone(), vals)
        })
        .collect::<Vec<_>>();
    let labels: Vec<String> = cats.into_iter().map(|(_, l)| l).collect();
    svg::bar_plot(title, "oracle quality", &labels, &series)
}

#[derive(Serialize, Deserialize)]
struct CorpusStats {
    n_train: usize,
    n_dev: usize,
    n_test: usize,
    vocab_size: usize,
    lexicon_size: usize,
    mean_src_words: f64,
    max_src_words: usize,
    corrupted: usize,
    mean_corrupted_score: Option<f64>,
}

fn gen_corpus(ctx: &Context, cfg: &mut RunConfig, a: GenCorpusArgs) -> Result<PathBuf> {
    if let Some(s) = a.seed {
        cfg.desk.corpus_seed = s;
    }
    if let Some(n) = a.n_train {
        cfg.desk.n_train = n;
    }
    if let Some(n) = a.n_dev {
        cfg.desk.n_dev = n;
    }
    if let Some(n) = a.n_test {
        cfg.desk.n_test = n;
    }
    let rates = CorruptionRates {
        p_minor: a.corrupt_minor,
        p_major: a.corrupt_major,
        p_critical: a.corrupt_critical,
    };
    let mut run = ctx.open("gen-corpus", cfg, cfg.desk.corpus_seed)?;
    let desk = build_desk(cfg)?;
    for (name, split) in [("train.jsonl", &desk.train), ("dev.jsonl", &desk.dev), ("test.jsonl", &desk.test)] {
        save_jsonl(split, run.path(name))?;
        run.record(name)?;
    }
    desk.vocab.save(run.path("vocab.json"))?;
    run.record("vocab.json")?;
    let (mut corrupted, mut score_sum) = (0, 0.0);
    if rates != CorruptionRates::NONE {
        let records = desk
            .test
            .iter()
            .enumerate()
            .map(|(i, p)| desk.task.corrupt(p, rates, cfg.desk.corpus_seed ^ (i as u64).wrapping_mul(0x9e37_79b9)))
            .collect::<Result<Vec<_>>>()?;
        for (r, p) in records.iter().zip(&desk.test) {
            score_sum += desk.annotator.annotate(&r.hyp, &p.reference)?.sentence_score;
        }
        corrupted = records.len();
        save_corruptions(&records, run.path("corruptions.jsonl"))?;
        run.record("corruptions.jsonl")?;
    }
    let lens: Vec<usize> = desk.train.iter().map(|p| p.src.split_whitespace().count()).collect();
    let stats = CorpusStats {
        n_train: desk.train.len(),
        n_dev: desk.dev.len(),
        n_test: desk.test.len(),
        vocab_size: desk.vocab.len(),
        lexicon_size: desk.task.lexicon().len(),
        mean_src_words: lens.iter().sum::<usize>() as f64 / lens.len().max(1) as f64,
        max_src_words: lens.iter().copied().max().unwrap_or(0),
        corrupted,
        mean_corrupted_score: (corrupted > 0).then(|| score_sum / corrupted as f64),
    };
    write_json(&mut run, "metrics.json", &stats)?;
    let root = run.root().to_path_buf();
    run.finish()?;
    Ok(root)
}

#[derive(Serialize)]
struct MleMetrics<'a> {
    best_dev_loss: f64,
    steps: usize,
    early_stopped: bool,
    exact_match: f64,
    corpus: &'a std::collections::BTreeMap<Metric, f64>,
}

fn train_mle(ctx: &Context, cfg: &mut RunConfig, a: TrainMleArgs) -> Result<PathBuf> {
    if let Some(s) = a.seed {
        cfg.desk.policy_seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.desk.mle.max_epochs = e;
    }
    if let Some(s) = a.max_steps {
        cfg.desk.mle.max_steps = s;
    }
    if let Some(lr) = a.lr {
        cfg.desk.mle.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.desk.mle.batch_size = b;
    }
    let mut run = ctx.open("train-mle", cfg, cfg.desk.policy_seed)?;
    let desk = build_desk(cfg)?;
    let mut epochs = Vec::new();
    let (policy, report) = desk.pretrain(|log, p| {
        mle_progress(log, p);
        epochs.push(log.clone());
    })?;
    policy.save(run.path("checkpoint.json"))?;
    run.record("checkpoint.json")?;
    let mut log = String::from("epoch,steps,train_loss,dev_loss,lr\n");
    for e in &epochs {
        let _ = writeln!(log, "{},{},{},{},{}", e.epoch, e.steps, e.train_loss, e.dev_loss, e.lr);
    }
    run.write("train_log.csv", log)?;
    let eval = desk.evaluate("mle", &policy)?;
    let exact = eval.segments.iter().zip(&desk.test).filter(|(s, p)| s.hyp == p.reference).count() as f64
        / desk.test.len().max(1) as f64;
    write_json(
        &mut run,
        "metrics.json",
        &MleMetrics {
            best_dev_loss: report.best_dev_loss,
            steps: report.steps,
            early_stopped: report.early_stopped,
            exact_match: exact,
            corpus: &eval.corpus,
        },
    )?;
    write_segments_csv(std::slice::from_ref(&eval), run.path("segments.csv"))?;
    run.record("segments.csv")?;
    let curve = |f: fn(&EpochLog) -> f64| epochs.iter().map(|e| (e.epoch as f64, f(e))).collect::<Vec<_>>();
    let svg = svg::line_plot(
        "MLE loss",
        "epoch",
        "token NLL",
        &[("train".into(), curve(|e| e.train_loss)), ("dev".into(), curve(|e| e.dev_loss))],
    );
    run.write("curves.svg", svg)?;
    eprintln!("exact match {:.2}%  {:?}", 100.0 * exact, eval.corpus);
    let root = run.root().to_path_buf();
    run.finish()?;
    Ok(root)
}

#[derive(Serialize)]
struct RlMetrics<'a> {
    warm: &'a std::collections::BTreeMap<Metric, f64>,
    final_kl_coef: f64,
    summary: &'a RunSummary,
}

fn train_rl(ctx: &Context, cfg: &mut RunConfig, a: TrainRlArgs) -> Result<PathBuf> {
    apply_rl_args(cfg, &a.rl)?;
    if let Some(x) = a.algo {
        cfg.rl.algo = x;
    }
    if let Some(g) = a.granularity {
        cfg.rl.granularity = g;
    }
    if let Some(r) = a.reward {
        cfg.reward.source = r;
    }
    if let Some(m) = a.severity_map {
        cfg.reward.map = m;
    }
    if let Some(s) = a.seed {
        cfg.rl.seed = s;
    }
    let mut run = ctx.open("train-rl", cfg, cfg.rl.seed)?;
    let desk = build_desk(cfg)?;
    let warm = warm_start(&desk, a.rl.init.as_deref(), &mut run)?;
    let warm_eval = desk.evaluate("warm", &warm)?;
    let name = format!(
        "{}-{}-{}",
        match cfg.rl.granularity {
            Granularity::Sentence => "srl",
            Granularity::Token => "trl",
        },
        cfg.rl.algo,
        cfg.reward.map.name
    );
    let seed = cfg.rl.seed;
    let result = desk.train_rl(&name, &warm, &cfg.rl, &cfg.reward, |row| rl_progress(&name, seed, row))?;
    result.policy.save(run.path("checkpoint.json"))?;
    run.record("checkpoint.json")?;
    crate::rl::write_log_csv(&result.report.log, run.path("train_log.csv"))?;
    run.record("train_log.csv")?;
    let summary = RunSummary::of(&result, seed, &desk)?;
    write_json(
        &mut run,
        "metrics.json",
        &RlMetrics {
            warm: &warm_eval.corpus,
            final_kl_coef: result.report.final_kl_coef,
            summary: &summary,
        },
    )?;
    write_segments_csv(&[warm_eval.clone(), result.eval.clone()], run.path("segments.csv"))?;
    run.record("segments.csv")?;
    let rows: Vec<(String, u64, LogRow)> = result.report.log.iter().map(|r| (name.clone(), seed, r.clone())).collect();
    run.write("curves.svg", reward_curves("mean reward", &rows))?;
    let warm_buckets = crate::eval::length_bucket_report(
        &warm_eval.segment_scores(Metric::OracleQuality),
        &desk.sources(),
        &DEFAULT_BUCKET_EDGES,
    )?;
    run.write(
        "buckets.svg",
        bucket_bars("oracle quality by source length", &[("warm".into(), &warm_buckets), (name.clone(), &summary.buckets)]),
    )?;
    eprintln!(
        "{name}: oracle quality {:.2} (warm {:.2}), bleu {:.2}",
        summary.oracle_quality, warm_eval.corpus[&Metric::OracleQuality], summary.bleu
    );
    let root = run.root().to_path_buf();
    run.finish()?;
    Ok(root)
}

#[derive(Deserialize)]
struct HypRecord {
    id: String,
    hyp: String,
    #[serde(rename = "ref")]
    reference: String,
}

#[derive(Serialize)]
struct AnnotationStats {
    n: usize,
    mean_score: f64,
    minor: usize,
    major: usize,
    critical: usize,
}

fn annotate(ctx: &Context, cfg: &mut RunConfig, a: AnnotateArgs) -> Result<PathBuf> {
    let mut run = ctx.open("annotate", cfg, cfg.desk.corpus_seed)?;
    let desk = build_desk(cfg)?;
    let items: Vec<HypRecord> = match (&a.input, &a.checkpoint) {
        (Some(path), _) => {
            run.add_input(path)?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
                .collect::<Result<_>>()?
        }
        (None, Some(path)) => {
            let policy = load_checkpoint(&desk, path, &mut run)?;
            let eval = desk.evaluate("checkpoint", &policy)?;
            eval.segments
                .into_iter()
                .zip(&desk.test)
                .map(|(s, p)| HypRecord {
                    id: p.id.clone(),
                    hyp: s.hyp,
                    reference: p.reference.clone(),
                })
                .collect()
        }
        (None, None) => return Err(Error::InvalidInput("one of --input or --checkpoint is required".into())),
    };
    let mut stats = AnnotationStats {
        n: items.len(),
        mean_score: 0.0,
        minor: 0,
        major: 0,
        critical: 0,
    };
    let mut out: Vec<SpanAnnotation> = Vec::with_capacity(items.len());
    for item in &items {
        let (_, counts) = desk.annotator.spans_and_counts(&item.hyp, &item.reference)?;
        stats.minor += counts.minor;
        stats.major += counts.major;
        stats.critical += counts.critical;
        let ann = desk.annotator.annotate_pair(&item.id, &item.hyp, &item.reference)?;
        stats.mean_score += ann.sentence_score / items.len().max(1) as f64;
        out.push(ann);
    }
    save_annotations(&out, run.path("annotations.jsonl"))?;
    run.record("annotations.jsonl")?;
    write_json(&mut run, "metrics.json", &stats)?;
    let root = run.root().to_path_buf();
    run.finish()?;
    Ok(root)
}

fn evaluate(ctx: &Context, cfg: &mut RunConfig, a: EvaluateArgs) -> Result<PathBuf> {
    if let Some(n) = a.bootstrap_samples {
        cfg.bootstrap.n_samples = n;
    }
    let mut run = ctx.open("evaluate", cfg, a.seed)?;
    let desk = build_desk(cfg)?;
    let mut systems = Vec::new();
    for spec in &a.systems {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_owned(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.clone());
                (stem, p)
            }
        };
        let policy = load_checkpoint(&desk, &path, &mut run)?;
        eprintln!("decoding {name} ...");
        systems.push(desk.evaluate(&name, &policy)?);
    }
    let report = build_report(&systems, &desk.test, &cfg.bootstrap, &DEFAULT_BUCKET_EDGES, a.seed)?;
    run.write("metrics.json", report.to_json()? + "\n")?;
    let table = report.to_table();
    run.write("table.txt", &table)?;
    write_segments_csv(&systems, run.path("segments.csv"))?;
    run.record("segments.csv")?;
    let bars: Vec<(String, &[LengthBucket])> =
        report.systems.iter().map(|s| (s.name.clone(), s.length_buckets.as_slice())).collect();
    run.write("buckets.svg", bucket_bars("oracle quality by source length", &bars))?;
    print!("{table}");
    let root = run.root().to_path_buf();
    run.finish()?;
    Ok(root)
}

/// Plain-text summary of a granularity comparison.
pub fn comparison_table(rows: &[SeedComparison]) -> String {
    let mut out = String::from("seed   sRL q    tRL q    gap   sRL neg   tRL neg   bucket gaps (tRL - sRL)\n");
    let frac = |f: Option<f64>| f.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
    for r in rows {
        let gaps: Vec<String> = r.bucket_gaps().iter().map(|(l, g)| format!("{l} {g:+.2}")).collect();
        let _ = writeln!(
            out,
            "{:<4} {:>7.2} {:>8.2} {:>+6.2} {:>9} {:>9}   {}",
            r.seed,
            r.srl.oracle_quality,
            r.trl.oracle_quality,
            r.quality_gap(),
            frac(r.srl.negative_slope_fraction),
            frac(r.trl.negative_slope_fraction),
            gaps.join(", ")
        );
    }
    out
}

fn rl_base(cfg: &RunConfig) -> impl Fn(Algo, Granularity, u64) -> RlConfig + '_ {
    move |algo, granularity, seed| RlConfig {
        algo,
        granularity,
        seed,
        ..cfg.rl.clone()
    }
}

fn compare(ctx: &Context, cfg: &mut RunConfig, a: CompareArgs) -> Result<PathBuf> {
    apply_rl_args(cfg, &a.rl)?;
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(m) = a.severity_map {
        cfg.reward.map = m;
    }
    cfg.rl.granularity = Granularity::Token;
    let mut run = ctx.open("compare", cfg, cfg.seeds[0])?;
    let desk = build_desk(cfg)?;
    let warm = warm_start(&desk, a.rl.init.as_deref(), &mut run)?;
    let mut rows = Vec::new();
    let results = compare_granularity(&desk, &warm, &cfg.reward.map, &cfg.seeds, rl_base(cfg), |name, seed, row| {
        rl_progress(name, seed, row);
        rows.push((name.to_owned(), seed, row.clone()));
    })?;
    write_json(&mut run, "metrics.json", &results)?;
    run.write("train_log.csv", log_with_run_columns(&rows))?;
    let table = comparison_table(&results);
    run.write("table.txt", &table)?;
    run.write("curves.svg", reward_curves("mean reward: sRL-PPO vs tRL-PPO", &rows))?;
    let bars: Vec<(String, &[LengthBucket])> = results
        .iter()
        .flat_map(|r| {
            [
                (format!("srl s{}", r.seed), r.srl.buckets.as_slice()),
                (format!("trl s{}", r.seed), r.trl.buckets.as_slice()),
            ]
        })
        .collect();
    run.write("buckets.svg", bucket_bars("oracle quality by source length", &bars))?;
    print!("{table}");
    let root = run.root().to_path_buf();
    run.finish()?;
    Ok(root)
}

fn ablate(ctx: &Context, cfg: &mut RunConfig, a: AblateArgs) -> Result<PathBuf> {
    apply_rl_args(cfg, &a.rl)?;
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(m) = a.maps {
        cfg.maps = m;
    }
    let maps = cfg.maps.iter().map(|m| m.parse::<SeverityMap>()).collect::<Result<Vec<_>>>()?;
    cfg.rl.granularity = Granularity::Token;
    let mut run = ctx.open("ablate-severity", cfg, cfg.seeds[0])?;
    let desk = build_desk(cfg)?;
    let warm = warm_start(&desk, a.rl.init.as_deref(), &mut run)?;
    let mut rows = Vec::new();
    let results = severity_ablation(&desk, &warm, &maps, &cfg.seeds, rl_base(cfg), |name, seed, row| {
        rl_progress(name, seed, row);
        rows.push((name.to_owned(), seed, row.clone()));
    })?;
    write_json(&mut run, "metrics.json", &results)?;
    run.write("train_log.csv", log_with_run_columns(&rows))?;
    let table = ablation_table(&results);
    run.write("table.txt", &table)?;
    run.write("curves.svg", reward_curves("mean reward by severity map", &rows))?;
    print!("{table}");
    let root = run.root().to_path_buf();
    run.finish()?;
    Ok(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_flag_forms() {
        assert_eq!(parse_kl("off").unwrap(), KlControl::Off);
        assert_eq!(parse_kl("fixed:0.1").unwrap(), KlControl::Fixed { coef: 0.1 });
        assert_eq!(
            parse_kl("adaptive:0.5:3").unwrap(),
            KlControl::Adaptive {
                init_coef: 0.5,
                target: 3.0
            }
        );
        assert!(parse_kl("fixed").is_err());
    }

    #[test]
    fn unknown_flag_exits_one() {
        assert_eq!(main_with_args(["finegrain", "gen-corpus", "--bogus"]), 1);
        assert_eq!(main_with_args(["finegrain", "frobnicate"]), 1);
    }
}
