//! Shared subword vocabulary and an offset-preserving greedy tokenizer.
//!
//! Words are whitespace-delimited runs of alphanumeric characters; every other
//! non-whitespace character is a word of its own. Inside a word, pieces are
//! matched greedily longest-first. Pieces that continue a word carry the `##`
//! prefix, so a sequence of ids produced by a policy can be rendered back to a
//! surface string with unambiguous word boundaries.
//!
//! All offsets are in Unicode scalar values (chars), not bytes.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Prefix marking a piece that continues the current word.
pub const CONTINUATION: &str = "##";

/// Longest substring (in chars) considered when filling the vocabulary past
/// whole words.
const MAX_SUBSTRING_CHARS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_piece: Vec<String>,
    piece_to_id: HashMap<String, u32>,
    longest_piece: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from raw pieces. The first four entries must be the
    /// reserved markers.
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        if pieces.len() < RESERVED.len()
            || pieces.iter().zip(RESERVED).any(|(p, r)| p != r)
        {
            return Err(Error::InvalidInput(format!(
                "vocabulary must start with {RESERVED:?}"
            )));
        }
        let mut piece_to_id = HashMap::with_capacity(pieces.len());
        let mut longest_piece = 1;
        for (id, piece) in pieces.iter().enumerate() {
            if piece.is_empty() || piece.chars().any(char::is_whitespace) {
                return Err(Error::InvalidInput(format!(
                    "piece {id} is empty or contains whitespace"
                )));
            }
            if piece_to_id.insert(piece.clone(), id as u32).is_some() {
                return Err(Error::InvalidInput(format!("duplicate piece `{piece}`")));
            }
            longest_piece = longest_piece.max(surface(piece).chars().count());
        }
        Ok(Self {
            id_to_piece: pieces,
            piece_to_id,
            longest_piece,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_piece.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_piece.is_empty()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.id_to_piece.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.piece_to_id.get(piece).copied()
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.piece_to_id.contains_key(piece)
    }

    pub fn pieces(&self) -> &[String] {
        &self.id_to_piece
    }

    pub fn is_reserved(id: u32) -> bool {
        (id as usize) < RESERVED.len()
    }

    /// Segments `text` into pieces with char offsets and parent-word indices.
    pub fn tokenize(&self, text: &str) -> TokenizedText {
        let chars: Vec<char> = text.chars().collect();
        let words = word_spans(&chars);
        let mut tokens = Vec::new();
        let mut key = String::new();
        for (word_index, &(ws, we)) in words.iter().enumerate() {
            let mut pos = ws;
            while pos < we {
                let max_end = we.min(pos + self.longest_piece);
                let mut matched = None;
                for end in (pos + 1..=max_end).rev() {
                    key.clear();
                    if pos > ws {
                        key.push_str(CONTINUATION);
                    }
                    key.extend(&chars[pos..end]);
                    if let Some(&id) = self.piece_to_id.get(key.as_str()) {
                        if !Self::is_reserved(id) {
                            matched = Some((id, end));
                            break;
                        }
                    }
                }
                let (id, end) = matched.unwrap_or((UNK, pos + 1));
                tokens.push(Token {
                    id,
                    start: pos,
                    end,
                    word: word_index,
                });
                pos = end;
            }
        }
        TokenizedText {
            text: text.to_owned(),
            tokens,
            word_count: words.len(),
        }
    }

    /// Renders generated ids to text, inserting a space before every piece
    /// that starts a word. Reserved ids render as their marker string.
    pub fn render(&self, ids: &[u32]) -> TokenizedText {
        let mut text = String::new();
        let mut tokens = Vec::with_capacity(ids.len());
        let mut pos = 0usize;
        let mut word_count = 0usize;
        for &id in ids {
            let piece = self.piece(id).unwrap_or(RESERVED[UNK as usize]);
            let continues = !Self::is_reserved(id) && piece.starts_with(CONTINUATION);
            let surf = if Self::is_reserved(id) { piece } else { surface(piece) };
            if !continues || word_count == 0 {
                if word_count > 0 {
                    text.push(' ');
                    pos += 1;
                }
                word_count += 1;
            }
            let len = surf.chars().count();
            text.push_str(surf);
            tokens.push(Token {
                id,
                start: pos,
                end: pos + len,
                word: word_count - 1,
            });
            pos += len;
        }
        TokenizedText {
            text,
            tokens,
            word_count,
        }
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.tokenize(text).ids()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut body = self.id_to_piece.join("\n");
        body.push('\n');
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_pieces(body.lines().map(str::to_owned).collect())
    }
}

/// Strips the continuation marker from a piece.
fn surface(piece: &str) -> &str {
    piece.strip_prefix(CONTINUATION).unwrap_or(piece)
}

/// One subword token with char offsets into its source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    pub start: usize,
    pub end: usize,
    pub word: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub text: String,
    pub tokens: Vec<Token>,
    pub word_count: usize,
}

impl TokenizedText {
    pub fn ids(&self) -> Vec<u32> {
        self.tokens.iter().map(|t| t.id).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token index range of every word, in word order.
    pub fn word_token_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut ranges: Vec<std::ops::Range<usize>> = Vec::with_capacity(self.word_count);
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.word + 1 == ranges.len() {
                ranges.last_mut().expect("non-empty").end = i + 1;
            } else {
                ranges.push(i..i + 1);
            }
        }
        ranges
    }

    /// Surface string of every word.
    pub fn words(&self) -> Vec<String> {
        let chars: Vec<char> = self.text.chars().collect();
        self.word_token_ranges()
            .into_iter()
            .map(|r| {
                let (s, e) = (self.tokens[r.start].start, self.tokens[r.end - 1].end);
                chars[s..e].iter().collect()
            })
            .collect()
    }

    /// Reconstructs the surface string from token offsets, checking that the
    /// offsets describe a valid segmentation of `text`.
    pub fn detokenize(&self) -> Result<String> {
        let chars: Vec<char> = self.text.chars().collect();
        let mut out = String::with_capacity(self.text.len());
        let mut cursor = 0usize;
        let mut prev: Option<&Token> = None;
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.start >= tok.end || tok.end > chars.len() {
                return Err(Error::CorruptTokenization(format!(
                    "token {i} has span {}..{} in text of {} chars",
                    tok.start,
                    tok.end,
                    chars.len()
                )));
            }
            if tok.start < cursor {
                return Err(Error::CorruptTokenization(format!(
                    "token {i} overlaps its predecessor"
                )));
            }
            let expected_word = match prev {
                None => 0,
                Some(p) if p.word == tok.word => {
                    if p.end != tok.start {
                        return Err(Error::CorruptTokenization(format!(
                            "gap inside word {} before token {i}",
                            tok.word
                        )));
                    }
                    p.word
                }
                Some(p) => p.word + 1,
            };
            if tok.word != expected_word {
                return Err(Error::CorruptTokenization(format!(
                    "token {i} has word index {} but {expected_word} was expected",
                    tok.word
                )));
            }
            let gap = &chars[cursor..tok.start];
            if !gap.iter().all(|c| c.is_whitespace()) {
                return Err(Error::CorruptTokenization(format!(
                    "uncovered text before token {i}"
                )));
            }
            out.extend(gap);
            out.extend(&chars[tok.start..tok.end]);
            cursor = tok.end;
            prev = Some(tok);
        }
        let tail = &chars[cursor..];
        if !tail.iter().all(|c| c.is_whitespace()) {
            return Err(Error::CorruptTokenization("uncovered trailing text".into()));
        }
        let words = prev.map_or(0, |p| p.word + 1);
        if words != self.word_count {
            return Err(Error::CorruptTokenization(format!(
                "word_count {} but tokens cover {words} words",
                self.word_count
            )));
        }
        out.extend(tail);
        Ok(out)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Char spans of the words of `chars`.
fn word_spans(chars: &[char]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &c) in chars.iter().enumerate() {
        if is_word_char(c) {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            spans.push((s, i));
        }
        if !c.is_whitespace() {
            spans.push((i, i + 1));
        }
    }
    if let Some(s) = start {
        spans.push((s, chars.len()));
    }
    spans
}

/// Splits text into words under the tokenizer's word rule.
pub fn split_words(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    word_spans(&chars)
        .into_iter()
        .map(|(s, e)| chars[s..e].iter().collect())
        .collect()
}

/// Builds a vocabulary: reserved markers, then every distinct word of the
/// corpus (most frequent first), then the most frequent word-initial and
/// continuation substrings until `max_size` pieces exist.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Vocabulary> {
    if max_size < 8 {
        return Err(Error::InvalidConfig(format!(
            "max_size must be at least 8, got {max_size}"
        )));
    }
    // (count, first-seen rank) keeps ordering independent of hash iteration.
    let mut word_counts: HashMap<String, (usize, usize)> = HashMap::new();
    for line in corpus {
        for word in split_words(line.as_ref()) {
            let rank = word_counts.len();
            word_counts.entry(word).or_insert((0, rank)).0 += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut words: Vec<(String, usize, usize)> = word_counts
        .into_iter()
        .map(|(w, (c, r))| (w, c, r))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

    let mut pieces: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    let mut seen: std::collections::HashSet<String> = pieces.iter().cloned().collect();
    for (word, _, _) in &words {
        if pieces.len() >= max_size {
            break;
        }
        if seen.insert(word.clone()) {
            pieces.push(word.clone());
        }
    }

    if pieces.len() < max_size {
        let mut sub_counts: HashMap<String, (usize, usize)> = HashMap::new();
        for (word, count, _) in &words {
            let chars: Vec<char> = word.chars().collect();
            for start in 0..chars.len() {
                for end in start + 1..=chars.len().min(start + MAX_SUBSTRING_CHARS) {
                    let mut key = String::new();
                    if start > 0 {
                        key.push_str(CONTINUATION);
                    }
                    key.extend(&chars[start..end]);
                    let rank = sub_counts.len();
                    sub_counts.entry(key).or_insert((0, rank)).0 += count;
                }
            }
        }
        let mut subs: Vec<(String, usize, usize)> = sub_counts
            .into_iter()
            .filter(|(k, _)| !seen.contains(k))
            .map(|(k, (c, r))| (k, c, r))
            .collect();
        subs.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        for (sub, _, _) in subs {
            if pieces.len() >= max_size {
                break;
            }
            pieces.push(sub);
        }
    }
    Vocabulary::from_pieces(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(pieces: &[&str]) -> Vocabulary {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(pieces.iter().map(|s| s.to_string()));
        Vocabulary::from_pieces(all).unwrap()
    }

    #[test]
    fn single_word_corpus() {
        let v = build_vocab(&["ab ab"], 8).unwrap();
        assert!(v.contains("ab"));
        assert!(v.len() <= 8);
        assert_eq!(&v.pieces()[..4], &RESERVED.map(String::from));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(build_vocab(&empty, 8), Err(Error::EmptyCorpus)));
        assert!(matches!(build_vocab(&["   "], 8), Err(Error::EmptyCorpus)));
        assert!(build_vocab(&["a"], 7).is_err());
    }

    #[test]
    fn distinct_words_become_single_pieces() {
        let words: Vec<String> = (0..30).map(|i| format!("w{i}x{}", i * 7)).collect();
        let corpus = vec![words.join(" ")];
        let v = build_vocab(&corpus, words.len() + 4).unwrap();
        for w in &words {
            let tok = v.tokenize(w);
            assert_eq!(tok.len(), 1, "{w}");
            assert_eq!(v.piece(tok.tokens[0].id), Some(w.as_str()));
        }
    }

    #[test]
    fn empty_text() {
        let v = vocab(&["x"]);
        let t = v.tokenize("");
        assert!(t.tokens.is_empty());
        assert_eq!(t.word_count, 0);
        assert_eq!(t.detokenize().unwrap(), "");
    }

    #[test]
    fn greedy_split_shares_word_index() {
        let v = vocab(&["x", "y", "##y"]);
        let t = v.tokenize("xy");
        assert_eq!(t.len(), 2);
        assert!(t.tokens.iter().all(|tok| tok.word == 0));
        assert_eq!(t.tokens[0].id, v.id("x").unwrap());
        assert_eq!(t.tokens[1].id, v.id("##y").unwrap());
    }

    #[test]
    fn longest_match_wins() {
        let v = vocab(&["ka", "kato", "##en", "##e", "##n"]);
        let t = v.tokenize("katoen ka");
        let pieces: Vec<&str> = t.tokens.iter().map(|x| v.piece(x.id).unwrap()).collect();
        assert_eq!(pieces, ["kato", "##en", "ka"]);
        assert_eq!(t.word_count, 2);
    }

    #[test]
    fn unknown_chars_become_unk() {
        let v = vocab(&["a"]);
        let t = v.tokenize("aé b");
        assert_eq!(t.ids(), vec![v.id("a").unwrap(), UNK, UNK]);
        assert_eq!(t.detokenize().unwrap(), "aé b");
    }

    #[test]
    fn punctuation_is_its_own_word() {
        assert_eq!(split_words("hi, there!"), ["hi", ",", "there", "!"]);
    }

    #[test]
    fn gap_inside_word_is_corrupt() {
        let v = vocab(&["a", "##b", "##c"]);
        let mut t = v.tokenize("abc");
        t.tokens.remove(1);
        assert!(matches!(t.detokenize(), Err(Error::CorruptTokenization(_))));
    }

    #[test]
    fn uncovered_text_is_corrupt() {
        let v = vocab(&["a", "b"]);
        let mut t = v.tokenize("a b");
        t.tokens.pop();
        t.word_count = 1;
        assert!(t.detokenize().is_err());
    }

    #[test]
    fn render_inserts_word_boundaries() {
        let v = vocab(&["kato", "##en", "bu"]);
        let ids = v.encode("katoen bu");
        let r = v.render(&ids);
        assert_eq!(r.text, "katoen bu");
        assert_eq!(r.tokens, v.tokenize("katoen bu").tokens);
        assert_eq!(r.detokenize().unwrap(), r.text);
    }

    #[test]
    fn render_reserved_and_leading_continuation() {
        let v = vocab(&["a", "##b"]);
        let r = v.render(&[v.id("##b").unwrap(), UNK, v.id("a").unwrap()]);
        assert_eq!(r.text, "b <unk> a");
        assert_eq!(r.word_count, 3);
        assert_eq!(r.detokenize().unwrap(), r.text);
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = build_vocab(&["the cat sat", "on the mat"], 40).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let body = fs::read_to_string(&path).unwrap();
        assert_eq!(body.lines().nth(4), v.piece(4));
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
    }
}
