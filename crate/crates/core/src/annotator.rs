//! Reference-based oracle error-span annotator.
//!
//! Aligns a hypothesis to its reference at the word level and reports every
//! edit as a severity-tagged character span over the hypothesis, plus an
//! MQM-style sentence score. It plays the role a learned span-predicting
//! quality metric would play in production; annotations produced by such a
//! metric can be loaded with [`load_annotations`] instead.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl_lines, write_jsonl, SpanRecord, SpanWire, SynonymTable};
use crate::error::{Error, Result};

/// Error severity, ordered from least to most severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Minor,
    Major,
    Critical,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Minor, Severity::Major, Severity::Critical];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Minor => "minor",
            Severity::Major => "major",
            Severity::Critical => "critical",
        }
    }

    /// MQM penalty magnitude.
    pub fn penalty(self) -> f64 {
        match self {
            Severity::Minor => 1.0,
            Severity::Major => 5.0,
            Severity::Critical => 25.0,
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Severity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "minor" => Ok(Severity::Minor),
            "major" => Ok(Severity::Major),
            "critical" => Ok(Severity::Critical),
            other => Err(Error::InvalidInput(format!("unknown severity `{other}`"))),
        }
    }
}

/// Half-open char range `[start, end)` of a hypothesis with a severity.
/// Zero-width spans mark deletions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ErrorSpan {
    pub start: usize,
    pub end: usize,
    pub severity: Severity,
}

impl ErrorSpan {
    pub fn new(start: usize, end: usize, severity: Severity) -> Self {
        Self {
            start,
            end,
            severity,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn check_bounds(&self, text_chars: usize) -> Result<()> {
        if self.start > self.end || self.end > text_chars {
            return Err(Error::InvalidInput(format!(
                "span {}..{} outside text of {text_chars} chars",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

/// Sorts spans and resolves overlaps and adjacency.
///
/// Where spans of different severity overlap, the more severe one keeps the
/// shared characters. Spans of equal severity separated only by whitespace
/// merge, and zero-width spans are absorbed into an equal-severity span they
/// touch.
pub fn normalize_spans(text: &str, spans: &[ErrorSpan]) -> Vec<ErrorSpan> {
    let chars: Vec<char> = text.chars().collect();
    let mut paint: Vec<Option<Severity>> = vec![None; chars.len()];
    for s in spans.iter().filter(|s| !s.is_empty()) {
        for slot in &mut paint[s.start.min(chars.len())..s.end.min(chars.len())] {
            *slot = (*slot).max(Some(s.severity));
        }
    }
    let mut runs: Vec<ErrorSpan> = Vec::new();
    let mut i = 0;
    while i < paint.len() {
        let Some(sev) = paint[i] else {
            i += 1;
            continue;
        };
        let start = i;
        while i < paint.len() && paint[i] == Some(sev) {
            i += 1;
        }
        let gap_is_blank = |from: usize| chars[from..start].iter().all(|c| c.is_whitespace());
        match runs.last_mut() {
            Some(prev) if prev.severity == sev && gap_is_blank(prev.end) => prev.end = i,
            _ => runs.push(ErrorSpan::new(start, i, sev)),
        }
    }
    let touches = |z: &ErrorSpan, s: &ErrorSpan| {
        let blank = |a: usize, b: usize| chars[a.min(b)..b.max(a)].iter().all(|c| c.is_whitespace());
        z.severity == s.severity
            && ((s.start..=s.end).contains(&z.start)
                || (z.start < s.start && blank(z.start, s.start))
                || (z.start > s.end && blank(s.end, z.start)))
    };
    let mut zero: Vec<ErrorSpan> = spans
        .iter()
        .filter(|z| z.is_empty() && !runs.iter().any(|s| touches(z, s)))
        .copied()
        .collect();
    zero.sort_by_key(|z| (z.start, z.severity));
    zero.dedup();
    runs.extend(zero);
    runs.sort_by_key(|s| (s.start, s.end, s.severity));
    runs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub pair_id: String,
    pub hyp: String,
    pub spans: Vec<ErrorSpan>,
    pub sentence_score: f64,
}

/// Counts of errors by severity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub minor: usize,
    pub major: usize,
    pub critical: usize,
}

impl ErrorCounts {
    pub fn add(&mut self, severity: Severity) {
        match severity {
            Severity::Minor => self.minor += 1,
            Severity::Major => self.major += 1,
            Severity::Critical => self.critical += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.minor + self.major + self.critical
    }

    /// `max(0, 1 - (minor + 5 major + 25 critical) / 25)`.
    pub fn score(&self) -> f64 {
        let penalty = self.minor as f64 * Severity::Minor.penalty()
            + self.major as f64 * Severity::Major.penalty()
            + self.critical as f64 * Severity::Critical.penalty();
        (1.0 - penalty / 25.0).max(0.0)
    }

    pub fn from_spans(spans: &[ErrorSpan]) -> Self {
        let mut c = Self::default();
        spans.iter().for_each(|s| c.add(s.severity));
        c
    }
}

/// Word-level edit operation between hypothesis and reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignOp {
    Match { hyp: usize, reference: usize },
    Substitute { hyp: usize, reference: usize },
    /// Hypothesis word with no reference counterpart.
    Insert { hyp: usize },
    /// Reference word missing from the hypothesis; `after_hyp` hypothesis
    /// words precede the gap.
    Delete { reference: usize, after_hyp: usize },
}

/// Unit-cost Levenshtein alignment. On equal cost the backtrace prefers
/// match/substitution, then insertion, then deletion.
pub fn align_words<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Vec<AlignOp> {
    let (n, m) = (hyp.len(), reference.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(hyp[i - 1].as_ref() != reference[j - 1].as_ref());
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = hyp[i - 1].as_ref() == reference[j - 1].as_ref();
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                ops.push(if same {
                    AlignOp::Match { hyp: i - 1, reference: j - 1 }
                } else {
                    AlignOp::Substitute { hyp: i - 1, reference: j - 1 }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(AlignOp::Insert { hyp: i - 1 });
            i -= 1;
        } else {
            ops.push(AlignOp::Delete { reference: j - 1, after_hyp: i });
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Oracle annotator; knows the designated synonym of every target word.
#[derive(Debug, Clone, Default)]
pub struct Annotator {
    synonyms: SynonymTable,
}

impl Annotator {
    pub fn new(synonyms: SynonymTable) -> Self {
        Self { synonyms }
    }

    pub fn annotate(&self, hyp: &str, reference: &str) -> Result<SpanAnnotation> {
        self.annotate_pair("", hyp, reference)
    }

    pub fn annotate_pair(&self, pair_id: &str, hyp: &str, reference: &str) -> Result<SpanAnnotation> {
        let (spans, counts) = self.spans_and_counts(hyp, reference)?;
        Ok(SpanAnnotation {
            pair_id: pair_id.to_owned(),
            hyp: hyp.to_owned(),
            spans,
            sentence_score: counts.score(),
        })
    }

    /// Normalized spans plus the per-edit error counts behind the score.
    pub fn spans_and_counts(&self, hyp: &str, reference: &str) -> Result<(Vec<ErrorSpan>, ErrorCounts)> {
        let ref_words: Vec<&str> = reference.split_whitespace().collect();
        if ref_words.is_empty() {
            return Err(Error::InvalidInput("empty reference".into()));
        }
        let hyp_words = whitespace_words(hyp);
        let surfaces: Vec<&str> = hyp_words.iter().map(|w| w.0).collect();
        let mut counts = ErrorCounts::default();
        let mut raw = Vec::new();
        for op in align_words(&surfaces, &ref_words) {
            let span = match op {
                AlignOp::Match { .. } => continue,
                AlignOp::Substitute { hyp, reference } => {
                    let (word, s, e) = hyp_words[hyp];
                    let sev = if self.synonyms.is_synonym(ref_words[reference], word) {
                        Severity::Minor
                    } else {
                        Severity::Major
                    };
                    ErrorSpan::new(s, e, sev)
                }
                AlignOp::Insert { hyp } => {
                    let (_, s, e) = hyp_words[hyp];
                    ErrorSpan::new(s, e, Severity::Critical)
                }
                AlignOp::Delete { after_hyp, .. } => {
                    let at = if after_hyp == 0 { 0 } else { hyp_words[after_hyp - 1].2 };
                    ErrorSpan::new(at, at, Severity::Major)
                }
            };
            counts.add(span.severity);
            raw.push(span);
        }
        Ok((normalize_spans(hyp, &raw), counts))
    }
}

/// Whitespace-delimited words with char offsets.
fn whitespace_words(text: &str) -> Vec<(&str, usize, usize)> {
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None; // (byte, char)
    let mut char_pos = 0;
    for (byte, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some((b, s)) = start.take() {
                out.push((&text[b..byte], s, char_pos));
            }
        } else if start.is_none() {
            start = Some((byte, char_pos));
        }
        char_pos += 1;
    }
    if let Some((b, s)) = start {
        out.push((&text[b..], s, char_pos));
    }
    out
}

/// Loads span annotations in the shared JSONL schema. Severity labels are
/// case-insensitive; a missing score is recomputed from the spans.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<SpanAnnotation>> {
    let path = path.as_ref();
    read_jsonl_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            let rec: SpanRecord =
                serde_json::from_str(&text).map_err(|e| Error::parse(path, line, e.to_string()))?;
            let annotation_err = |message: String| Error::Annotation {
                pair_id: rec.id.clone(),
                message,
            };
            let n_chars = rec.hyp.chars().count();
            let spans = rec
                .spans
                .iter()
                .map(|w| {
                    let severity: Severity = w.severity.parse().map_err(|e: Error| annotation_err(e.to_string()))?;
                    let span = ErrorSpan::new(w.start, w.end, severity);
                    span.check_bounds(n_chars).map_err(|e| annotation_err(e.to_string()))?;
                    Ok(span)
                })
                .collect::<Result<Vec<_>>>()?;
            let sentence_score = match rec.score {
                Some(s) if s.is_finite() && (0.0..=1.0).contains(&s) => s,
                Some(s) => return Err(annotation_err(format!("score {s} outside [0, 1]"))),
                None => ErrorCounts::from_spans(&spans).score(),
            };
            Ok(SpanAnnotation {
                pair_id: rec.id.clone(),
                hyp: rec.hyp.clone(),
                spans,
                sentence_score,
            })
        })
        .collect()
}

pub fn save_annotations(annotations: &[SpanAnnotation], path: impl AsRef<Path>) -> Result<()> {
    let wire: Vec<SpanRecord> = annotations
        .iter()
        .map(|a| SpanRecord {
            id: a.pair_id.clone(),
            hyp: a.hyp.clone(),
            spans: a.spans.iter().map(SpanWire::from).collect(),
            score: Some(a.sentence_score),
        })
        .collect();
    write_jsonl(&wire, path)
}
