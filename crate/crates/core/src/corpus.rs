//! Synthetic cipher-language parallel corpora, controlled corruption with
//! gold error spans, and JSONL corpus I/O.
//!
//! A [`CipherTask`] owns a seeded lexicon of `(source, target, synonym)`
//! triples. A reference translation is obtained by mapping every source word
//! through the lexicon, reordering, and appending a suffix to every k-th
//! target word. Because references are computed, translation quality can be
//! judged exactly.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotator::{ErrorSpan, Severity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub id: String,
    pub src: String,
    #[serde(rename = "ref")]
    pub reference: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReorderRule {
    Identity,
    Reverse,
    SwapPairs,
}

impl ReorderRule {
    pub fn apply<T>(self, words: &mut [T]) {
        match self {
            ReorderRule::Identity => {}
            ReorderRule::Reverse => words.reverse(),
            ReorderRule::SwapPairs => words.chunks_exact_mut(2).for_each(|c| c.swap(0, 1)),
        }
    }
}

/// Appends `suffix` to every `every`-th target word (1-based); `every == 0`
/// disables the rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuffixRule {
    pub every: usize,
    pub suffix: String,
}

impl Default for SuffixRule {
    fn default() -> Self {
        Self {
            every: 0,
            suffix: "en".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub lexicon_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub reorder: ReorderRule,
    pub suffix: SuffixRule,
    /// Seed of the lexicon, kept apart from the sentence seed so train and
    /// test corpora share one language.
    pub lexicon_seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            lexicon_size: 200,
            min_len: 3,
            max_len: 20,
            reorder: ReorderRule::Identity,
            suffix: SuffixRule::default(),
            lexicon_seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lexicon_size < 10 {
            return Err(Error::InvalidConfig(format!(
                "lexicon_size must be at least 10, got {}",
                self.lexicon_size
            )));
        }
        if self.min_len < 1 || self.min_len > self.max_len {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        if self.suffix.every > 0
            && (self.suffix.suffix.is_empty() || !self.suffix.suffix.chars().all(char::is_alphanumeric))
        {
            return Err(Error::InvalidConfig("suffix must be non-empty alphanumeric".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexEntry {
    pub src: String,
    pub tgt: String,
    pub syn: String,
}

const SRC_CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'l', 'm', 'n', 'p'];
const TGT_CONSONANTS: &[char] = &['k', 'r', 's', 't', 'v', 'z', 'h', 'j'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<LexEntry>,
    by_src: HashMap<String, usize>,
    by_tgt: HashMap<String, usize>,
}

impl Lexicon {
    pub fn from_entries(entries: Vec<LexEntry>) -> Result<Self> {
        let mut by_src = HashMap::new();
        let mut by_tgt = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.tgt == e.syn {
                return Err(Error::InvalidInput(format!("`{}` is its own synonym", e.tgt)));
            }
            if by_src.insert(e.src.clone(), i).is_some() || by_tgt.insert(e.tgt.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate lexicon entry {i}")));
            }
        }
        Ok(Self {
            entries,
            by_src,
            by_tgt,
        })
    }

    /// Seeded lexicon. Source words are CVCVC over one consonant set; target
    /// words and synonyms are CVCV over a disjoint set, so no source word is a
    /// prefix of a target word.
    pub fn generate(size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut used = HashSet::new();
        let mut draw = |rng: &mut ChaCha8Rng, cons: &[char], n_syll: usize, coda: bool| loop {
            let mut w = String::new();
            for _ in 0..n_syll {
                w.push(cons[rng.gen_range(0..cons.len())]);
                w.push(VOWELS[rng.gen_range(0..VOWELS.len())]);
            }
            if coda {
                w.push(cons[rng.gen_range(0..cons.len())]);
            }
            if used.insert(w.clone()) {
                return w;
            }
        };
        let entries = (0..size)
            .map(|_| {
                let src = draw(&mut rng, SRC_CONSONANTS, 2, true);
                let tgt = draw(&mut rng, TGT_CONSONANTS, 2, false);
                let syn = draw(&mut rng, TGT_CONSONANTS, 2, false);
                LexEntry { src, tgt, syn }
            })
            .collect();
        Self::from_entries(entries).expect("generated words are unique")
    }

    pub fn entries(&self) -> &[LexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn by_src(&self, word: &str) -> Option<&LexEntry> {
        self.by_src.get(word).map(|&i| &self.entries[i])
    }

    pub fn by_tgt(&self, word: &str) -> Option<&LexEntry> {
        self.by_tgt.get(word).map(|&i| &self.entries[i])
    }
}

/// Per-word corruption probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRates {
    pub p_minor: f64,
    pub p_major: f64,
    pub p_critical: f64,
}

impl CorruptionRates {
    pub const NONE: CorruptionRates = CorruptionRates {
        p_minor: 0.0,
        p_major: 0.0,
        p_critical: 0.0,
    };

    fn validate(&self) -> Result<()> {
        let all = [self.p_minor, self.p_major, self.p_critical];
        if all.iter().any(|p| !(0.0..=1.0).contains(p)) || all.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "corruption rates must lie in [0,1] and sum to at most 1: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditKind {
    SubstituteSynonym,
    SubstituteRandom,
    Delete,
    Insert,
}

impl EditKind {
    pub fn severity(self) -> Severity {
        match self {
            EditKind::SubstituteSynonym => Severity::Minor,
            EditKind::SubstituteRandom | EditKind::Delete => Severity::Major,
            EditKind::Insert => Severity::Critical,
        }
    }
}

/// One applied edit. `ref_index` is the reference word the edit is anchored
/// to; insertions follow that word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub kind: EditKind,
    pub ref_index: usize,
}

/// A corrupted reference. `gold_spans[i]` is the span produced by `plan[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub pair_id: String,
    pub hyp: String,
    pub gold_spans: Vec<ErrorSpan>,
    pub plan: Vec<Edit>,
}

#[derive(Debug, Clone)]
pub struct CipherTask {
    spec: TaskSpec,
    lexicon: Lexicon,
}

impl CipherTask {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        spec.validate()?;
        let lexicon = Lexicon::generate(spec.lexicon_size, spec.lexicon_seed);
        Ok(Self { spec, lexicon })
    }

    pub fn with_lexicon(spec: TaskSpec, lexicon: Lexicon) -> Result<Self> {
        if spec.suffix.every > 0 && spec.suffix.suffix.is_empty() {
            return Err(Error::InvalidConfig("empty suffix".into()));
        }
        if spec.min_len < 1 || spec.min_len > spec.max_len || lexicon.is_empty() {
            return Err(Error::InvalidConfig("invalid length bounds or empty lexicon".into()));
        }
        Ok(Self { spec, lexicon })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// Reference translation of a source sentence, or `None` if it contains a
    /// word outside the lexicon.
    pub fn translate(&self, src: &str) -> Option<String> {
        let mut words: Vec<String> = src
            .split_whitespace()
            .map(|w| self.lexicon.by_src(w).map(|e| e.tgt.clone()))
            .collect::<Option<_>>()?;
        self.spec.reorder.apply(&mut words);
        let every = self.spec.suffix.every;
        if every > 0 {
            for (i, w) in words.iter_mut().enumerate() {
                if (i + 1) % every == 0 {
                    w.push_str(&self.spec.suffix.suffix);
                }
            }
        }
        Some(words.join(" "))
    }

    /// Generates `n` pairs. Pair `i` draws from its own stream seeded with
    /// `mix(seed) ^ i`.
    pub fn generate(&self, n: usize, seed: u64) -> Vec<ParallelPair> {
        let base = splitmix64(seed);
        (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(base ^ i as u64);
                let len = rng.gen_range(self.spec.min_len..=self.spec.max_len);
                let src = (0..len)
                    .map(|_| {
                        let k = rng.gen_range(0..self.lexicon.len());
                        self.lexicon.entries[k].src.as_str()
                    })
                    .collect::<Vec<_>>()
                    .join(" ");
                let reference = self.translate(&src).expect("source drawn from lexicon");
                ParallelPair {
                    id: format!("s{seed}-{i:06}"),
                    src,
                    reference,
                }
            })
            .collect()
    }

    /// Splits a target surface word into its lexicon stem and suffix.
    fn split_suffix<'a>(&self, word: &'a str) -> (&'a str, &'a str) {
        let suffix = self.spec.suffix.suffix.as_str();
        if self.spec.suffix.every > 0 && !suffix.is_empty() {
            if let Some(stem) = word.strip_suffix(suffix) {
                if self.lexicon.by_tgt(stem).is_some() {
                    return (stem, &word[stem.len()..]);
                }
            }
        }
        (word, "")
    }

    /// Designated synonym of a target surface word (suffix preserved).
    pub fn synonym_of(&self, word: &str) -> Option<String> {
        let (stem, suffix) = self.split_suffix(word);
        self.lexicon.by_tgt(stem).map(|e| format!("{}{suffix}", e.syn))
    }

    /// Table from target surface forms to their designated synonyms, as used
    /// by the oracle annotator.
    pub fn synonym_table(&self) -> SynonymTable {
        let mut table = SynonymTable::default();
        for e in self.lexicon.entries() {
            table.insert(&e.tgt, &e.syn);
            if self.spec.suffix.every > 0 {
                let s = &self.spec.suffix.suffix;
                table.insert(&format!("{}{s}", e.tgt), &format!("{}{s}", e.syn));
            }
        }
        table
    }

    /// Every surface word the task can produce, in lexicon order: source
    /// words, target words, synonyms, and suffixed forms.
    pub fn surface_words(&self, include_synonyms: bool) -> Vec<String> {
        let mut out = Vec::new();
        let lex = self.lexicon.entries();
        out.extend(lex.iter().map(|e| e.src.clone()));
        out.extend(lex.iter().map(|e| e.tgt.clone()));
        if include_synonyms {
            out.extend(lex.iter().map(|e| e.syn.clone()));
        }
        if self.spec.suffix.every > 0 {
            let s = &self.spec.suffix.suffix;
            out.extend(lex.iter().map(|e| format!("{}{s}", e.tgt)));
            if include_synonyms {
                out.extend(lex.iter().map(|e| format!("{}{s}", e.syn)));
            }
        }
        out
    }

    /// Applies independent per-word edits to the reference of `pair`.
    pub fn corrupt(
        &self,
        pair: &ParallelPair,
        rates: CorruptionRates,
        seed: u64,
    ) -> Result<CorruptionRecord> {
        rates.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
        // (surface word, severity if erroneous); deletions are None-surface.
        let mut out: Vec<(Option<String>, Option<Edit>)> = Vec::new();
        for (ref_index, word) in pair.reference.split_whitespace().enumerate() {
            let u: f64 = rng.gen();
            let (stem, suffix) = self.split_suffix(word);
            if u < rates.p_minor {
                let syn = match self.lexicon.by_tgt(stem) {
                    Some(e) => format!("{}{suffix}", e.syn),
                    None => format!("{word}x"),
                };
                let edit = Edit {
                    kind: EditKind::SubstituteSynonym,
                    ref_index,
                };
                out.push((Some(syn), Some(edit)));
            } else if u < rates.p_minor + rates.p_major {
                if rng.gen_bool(0.5) {
                    let replacement = self.random_other_target(&mut rng, stem);
                    let edit = Edit {
                        kind: EditKind::SubstituteRandom,
                        ref_index,
                    };
                    out.push((Some(format!("{replacement}{suffix}")), Some(edit)));
                } else {
                    let edit = Edit {
                        kind: EditKind::Delete,
                        ref_index,
                    };
                    out.push((None, Some(edit)));
                }
            } else if u < rates.p_minor + rates.p_major + rates.p_critical {
                out.push((Some(word.to_owned()), None));
                let inserted = self.random_other_target(&mut rng, stem);
                let edit = Edit {
                    kind: EditKind::Insert,
                    ref_index,
                };
                out.push((Some(inserted), Some(edit)));
            } else {
                out.push((Some(word.to_owned()), None));
            }
        }

        let mut hyp = String::new();
        let mut pos = 0usize;
        let mut gold_spans = Vec::new();
        let mut plan = Vec::new();
        for (surface, edit) in out {
            match surface {
                Some(w) => {
                    if !hyp.is_empty() {
                        hyp.push(' ');
                        pos += 1;
                    }
                    let start = pos;
                    hyp.push_str(&w);
                    pos += w.chars().count();
                    if let Some(edit) = edit {
                        gold_spans.push(ErrorSpan::new(start, pos, edit.kind.severity()));
                        plan.push(edit);
                    }
                }
                None => {
                    let edit = edit.expect("deletions carry an edit");
                    gold_spans.push(ErrorSpan::new(pos, pos, Severity::Major));
                    plan.push(edit);
                }
            }
        }
        Ok(CorruptionRecord {
            pair_id: pair.id.clone(),
            hyp,
            gold_spans,
            plan,
        })
    }

    fn random_other_target(&self, rng: &mut ChaCha8Rng, avoid: &str) -> String {
        loop {
            let e = &self.lexicon.entries[rng.gen_range(0..self.lexicon.len())];
            if e.tgt != avoid && self.lexicon.by_tgt(avoid).is_none_or(|a| a.syn != e.tgt) {
                return e.tgt.clone();
            }
        }
    }
}

/// Directed synonym relation over target surface words.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymTable {
    map: HashMap<String, String>,
}

impl SynonymTable {
    pub fn insert(&mut self, word: &str, synonym: &str) {
        self.map.insert(word.to_owned(), synonym.to_owned());
    }

    /// True when `candidate` is the designated synonym of `reference`.
    pub fn is_synonym(&self, reference: &str, candidate: &str) -> bool {
        self.map.get(reference).is_some_and(|s| s == candidate)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Generates `n` pairs for `spec` with sentence seed `seed`.
pub fn gen_synthetic(spec: &TaskSpec, n: usize, seed: u64) -> Result<Vec<ParallelPair>> {
    Ok(CipherTask::new(spec.clone())?.generate(n, seed))
}

pub(crate) fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn save_jsonl(pairs: &[ParallelPair], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(pairs, path)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<ParallelPair>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    read_jsonl_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            let pair: ParallelPair = serde_json::from_str(&text)
                .map_err(|e| Error::parse(path, line, e.to_string()))?;
            if pair.src.trim().is_empty() || pair.reference.trim().is_empty() {
                return Err(Error::parse(path, line, "empty src or ref"));
            }
            if !seen.insert(pair.id.clone()) {
                return Err(Error::parse(path, line, format!("duplicate id `{}`", pair.id)));
            }
            Ok(pair)
        })
        .collect()
}

/// Wire form of a corruption record, shared with annotation files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SpanRecord {
    pub id: String,
    pub hyp: String,
    pub spans: Vec<SpanWire>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SpanWire {
    pub start: usize,
    pub end: usize,
    pub severity: String,
}

impl From<&ErrorSpan> for SpanWire {
    fn from(s: &ErrorSpan) -> Self {
        SpanWire {
            start: s.start,
            end: s.end,
            severity: s.severity.as_str().to_owned(),
        }
    }
}

pub fn save_corruptions(records: &[CorruptionRecord], path: impl AsRef<Path>) -> Result<()> {
    let wire: Vec<SpanRecord> = records
        .iter()
        .map(|r| SpanRecord {
            id: r.pair_id.clone(),
            hyp: r.hyp.clone(),
            spans: r.gold_spans.iter().map(SpanWire::from).collect(),
            score: None,
        })
        .collect();
    write_jsonl(&wire, path)
}

pub(crate) fn write_jsonl<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with 1-based line numbers.
pub(crate) fn read_jsonl_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(body
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_owned()))
        .collect())
}
