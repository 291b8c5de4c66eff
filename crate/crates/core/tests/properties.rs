//! Property tests for the invariants of each module.

use finegrain::annotator::{align_words, AlignOp, Annotator, ErrorSpan, Severity};
use finegrain::corpus::{gen_synthetic, CipherTask, CorruptionRates, EditKind, TaskSpec};
use finegrain::eval::{length_bucket_report, paired_bootstrap, rank_clusters, BootstrapConfig};
use finegrain::metrics::{chrf, corpus_bleu, sentence_bleu, BleuConfig, ChrfConfig};
use finegrain::policy::{clipped_surrogate, Policy, PolicyConfig};
use finegrain::reward::{
    map_spans_to_token_rewards, partial_bleu_rewards, sentence_reward_from_spans, SeverityMap,
};
use finegrain::rl::compute_gae;
use finegrain::textcore::{build_vocab, Vocabulary, EOS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LETTERS: &str = "abcdef";

fn text_strategy(max_words: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-f]{1,7}", 1..=max_words)
}

/// One piece per character: every word splits into single letters.
fn char_vocab() -> Vocabulary {
    let mut pieces: Vec<String> = ["<pad>", "<bos>", "<eos>", "<unk>"].map(String::from).to_vec();
    for c in LETTERS.chars() {
        pieces.push(c.to_string());
        pieces.push(format!("##{c}"));
    }
    Vocabulary::from_pieces(pieces).unwrap()
}

/// Whole words of a fixed corpus plus its most frequent substrings.
fn mixed_vocab() -> Vocabulary {
    let corpus = ["abc abcdef face bad cafe", "dead beef fade bead", "a b c d e f"];
    build_vocab(&corpus, 48).unwrap()
}

fn spans_strategy(n_chars: usize) -> impl Strategy<Value = Vec<ErrorSpan>> {
    let sev = prop_oneof![Just(Severity::Minor), Just(Severity::Major), Just(Severity::Critical)];
    prop::collection::vec((0..=n_chars, 0..=n_chars, sev), 0..5).prop_map(|v| {
        v.into_iter()
            .map(|(a, b, s)| ErrorSpan::new(a.min(b), a.max(b), s))
            .collect()
    })
}

fn text_and_spans() -> impl Strategy<Value = (String, Vec<ErrorSpan>)> {
    text_strategy(10).prop_flat_map(|words| {
        let text = words.join(" ");
        let n = text.chars().count();
        (Just(text), spans_strategy(n))
    })
}

fn tiny_policy(seed: u64) -> Policy {
    Policy::new(PolicyConfig {
        embed_dim: 4,
        hidden_dim: 5,
        vocab_size: 9,
        max_len: 12,
        seed,
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn detokenize_inverts_tokenize(words in text_strategy(12)) {
        let text = words.join(" ");
        for vocab in [build_vocab(&[text.as_str()], 1_000).unwrap(), char_vocab()] {
            let tok = vocab.tokenize(&text);
            prop_assert_eq!(tok.detokenize().unwrap(), text.clone());
            prop_assert_eq!(vocab.tokenize(&text), tok);
        }
    }

    #[test]
    fn parent_words_are_contiguous(words in text_strategy(12)) {
        let text = words.join(" ");
        let tok = mixed_vocab().tokenize(&text);
        let ranges = tok.word_token_ranges();
        prop_assert_eq!(ranges.len(), words.len());
        let mut next = 0;
        for (w, r) in ranges.iter().enumerate() {
            prop_assert_eq!(r.start, next);
            prop_assert!(r.end > r.start);
            prop_assert!(tok.tokens[r.clone()].iter().all(|t| t.word == w));
            next = r.end;
        }
        prop_assert_eq!(next, tok.len());
    }

    #[test]
    fn corpora_are_pure_functions_of_the_seed(seed in 0u64..1_000) {
        let spec = TaskSpec { lexicon_size: 20, min_len: 3, max_len: 9, ..TaskSpec::default() };
        let a = gen_synthetic(&spec, 6, seed).unwrap();
        prop_assert_eq!(&a, &gen_synthetic(&spec, 6, seed).unwrap());
        prop_assert_ne!(&a, &gen_synthetic(&spec, 6, seed + 1).unwrap());
        let task = CipherTask::new(spec).unwrap();
        for p in &a {
            prop_assert_eq!(task.translate(&p.src), Some(p.reference.clone()));
        }
    }

    #[test]
    fn corruptions_are_sound(seed in 0u64..10_000, minor in 0.0..0.3f64, major in 0.0..0.3f64, critical in 0.0..0.3f64) {
        let task = CipherTask::new(TaskSpec { lexicon_size: 20, ..TaskSpec::default() }).unwrap();
        let pair = &task.generate(1, seed)[0];
        let rates = CorruptionRates { p_minor: minor, p_major: major, p_critical: critical };
        let rec = task.corrupt(pair, rates, seed).unwrap();
        prop_assert_eq!(rec.plan.len(), rec.gold_spans.len());
        let refs: Vec<&str> = pair.reference.split_whitespace().collect();
        let n_chars = rec.hyp.chars().count();
        for (edit, span) in rec.plan.iter().zip(&rec.gold_spans) {
            prop_assert!(span.end <= n_chars);
            prop_assert_eq!(span.severity, edit.kind.severity());
            let surface: String = rec.hyp.chars().skip(span.start).take(span.end - span.start).collect();
            match edit.kind {
                EditKind::Delete => prop_assert!(span.is_empty()),
                _ => {
                    prop_assert!(!surface.is_empty());
                    if edit.kind != EditKind::Insert {
                        prop_assert_ne!(surface.as_str(), refs[edit.ref_index]);
                    }
                }
            }
        }
    }

    #[test]
    fn bleu_and_chrf_are_bounded(h in text_strategy(12), r in text_strategy(12)) {
        for cfg in [BleuConfig::sentence(), BleuConfig::corpus()] {
            let b = sentence_bleu(&h, &r, &cfg);
            prop_assert!((0.0..=100.0).contains(&b), "bleu {}", b);
        }
        let c = chrf(&h.join(" "), &r.join(" "), &ChrfConfig::default());
        prop_assert!((0.0..=100.0).contains(&c), "chrf {}", c);
    }

    #[test]
    fn identity_scores_one_hundred(words in prop::collection::vec("[a-f]{1,5}", 4..15)) {
        prop_assert!((sentence_bleu(&words, &words, &BleuConfig::corpus()) - 100.0).abs() < 1e-9);
        prop_assert!((sentence_bleu(&words, &words, &BleuConfig::sentence()) - 100.0).abs() < 1e-9);
        let t = words.join(" ");
        prop_assert!((chrf(&t, &t, &ChrfConfig::default()) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn corpus_of_copies_matches_sentence(h in prop::collection::vec("[a-c]{1,3}", 4..10), r in prop::collection::vec("[a-c]{1,3}", 4..10), k in 1usize..5) {
        let cfg = BleuConfig::corpus();
        let pairs: Vec<(Vec<String>, Vec<String>)> = (0..k).map(|_| (h.clone(), r.clone())).collect();
        let c = corpus_bleu(&pairs, &cfg).unwrap();
        prop_assert!((c - sentence_bleu(&h, &r, &cfg)).abs() < 1e-9);
    }

    #[test]
    fn reversing_distinct_words_lowers_bleu(n in 4usize..12) {
        let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let reversed: Vec<String> = words.iter().rev().cloned().collect();
        let cfg = BleuConfig::sentence();
        prop_assert!(sentence_bleu(&reversed, &words, &cfg) < sentence_bleu(&words, &words, &cfg));
    }

    #[test]
    fn annotation_is_bounded_and_deterministic(h in text_strategy(10), r in text_strategy(10)) {
        let annotator = Annotator::default();
        let (hyp, reference) = (h.join(" "), r.join(" "));
        let a = annotator.annotate(&hyp, &reference).unwrap();
        prop_assert_eq!(&a, &annotator.annotate(&hyp, &reference).unwrap());
        prop_assert!((0.0..=1.0).contains(&a.sentence_score));
        prop_assert!(a.spans.len() <= h.len() + r.len());
        let n = hyp.chars().count();
        for w in a.spans.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
        prop_assert!(a.spans.iter().all(|s| s.start <= s.end && s.end <= n));
    }

    #[test]
    fn each_extra_error_lowers_the_score(r in prop::collection::vec("[a-f]{2,6}", 3..15), kinds in prop::collection::vec(0u8..3, 1..8)) {
        let annotator = Annotator::default();
        let reference = r.join(" ");
        let mut hyp = r.clone();
        let mut prev = annotator.annotate(&reference, &reference).unwrap().sentence_score;
        prop_assert_eq!(prev, 1.0);
        for (i, kind) in kinds.iter().enumerate() {
            match kind {
                // substitution by an out-of-vocabulary word at a fresh position
                0 if i < hyp.len() => hyp[i] = format!("zz{i}"),
                // insertion at the end
                _ => hyp.push(format!("yy{i}")),
            }
            let score = annotator.annotate(&hyp.join(" "), &reference).unwrap().sentence_score;
            if prev > 0.0 {
                prop_assert!(score < prev, "{} !< {}", score, prev);
            } else {
                prop_assert_eq!(score, 0.0);
            }
            prev = score;
        }
    }

    #[test]
    fn token_rewards_cover_every_token((text, spans) in text_and_spans()) {
        for vocab in [mixed_vocab(), char_vocab()] {
            let tok = vocab.tokenize(&text);
            for map in SeverityMap::presets() {
                let r = map_spans_to_token_rewards(&tok, &spans, &map).unwrap();
                prop_assert_eq!(r.rewards.len(), tok.len());
                prop_assert!(r.rewards.iter().all(|x| x.is_finite()));
            }
        }
    }

    #[test]
    fn word_rewards_do_not_depend_on_segmentation((text, spans) in text_and_spans()) {
        let (va, vb) = (mixed_vocab(), char_vocab());
        let (ta, tb) = (va.tokenize(&text), vb.tokenize(&text));
        let map = SeverityMap::our();
        let (ra, rb) = (
            map_spans_to_token_rewards(&ta, &spans, &map).unwrap(),
            map_spans_to_token_rewards(&tb, &spans, &map).unwrap(),
        );
        for (wa, wb) in ta.word_token_ranges().into_iter().zip(tb.word_token_ranges()) {
            let first = ra.rewards[wa.start];
            prop_assert!(ra.rewards[wa].iter().all(|x| *x == first));
            prop_assert!(rb.rewards[wb].iter().all(|x| *x == first));
        }
    }

    #[test]
    fn errors_lower_the_our_sentence_reward((text, spans) in text_and_spans(), pick in any::<prop::sample::Index>(), sev in 0usize..3) {
        let vocab = mixed_vocab();
        let tok = vocab.tokenize(&text);
        let map = SeverityMap::our();
        let words = finegrain::reward::word_severities(&tok, &spans).unwrap();
        let clean: Vec<usize> = (0..words.len()).filter(|&w| words[w].is_none()).collect();
        prop_assume!(!clean.is_empty());
        let w = clean[pick.index(clean.len())];
        let r = tok.word_token_ranges()[w].clone();
        let severity = [Severity::Minor, Severity::Major, Severity::Critical][sev];
        let mut more = spans.clone();
        more.push(ErrorSpan::new(tok.tokens[r.start].start, tok.tokens[r.end - 1].end, severity));
        let before = sentence_reward_from_spans(&tok, &spans, &map).unwrap();
        let after = sentence_reward_from_spans(&tok, &more, &map).unwrap();
        prop_assert!(after < before);
    }

    #[test]
    fn partial_bleu_telescopes(h in text_strategy(14), r in text_strategy(14)) {
        let vocab = mixed_vocab();
        let tok = vocab.tokenize(&h.join(" "));
        let cfg = BleuConfig::sentence();
        let shaped = partial_bleu_rewards(&tok, &r, &cfg).unwrap();
        prop_assert!((shaped.total() - sentence_bleu(&h, &r, &cfg)).abs() < 1e-9);
    }

    #[test]
    fn step_distributions_are_normalized(seed in 0u64..500, src in prop::collection::vec(3u32..9, 1..6), prefix in prop::collection::vec(3u32..9, 0..6)) {
        let policy = tiny_policy(seed);
        let mut src = src;
        src.push(EOS);
        let p = policy.step_distribution(&src, &prefix).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn value_head_does_not_touch_the_policy(seed in 0u64..500, prefix in prop::collection::vec(3u32..9, 0..6)) {
        let policy = tiny_policy(seed);
        let mut other = policy.clone();
        other.params.value_w.fill(3.0);
        other.params.value_b.fill(-2.0);
        let src = [4, 5, EOS];
        prop_assert_eq!(policy.step_distribution(&src, &prefix).unwrap(), other.step_distribution(&src, &prefix).unwrap());
    }

    #[test]
    fn clipped_objective_is_bounded_above(ratio in 0.0..5.0f64, adv in -10.0..10.0f64, eps in 0.01..0.99f64) {
        let (v, _) = clipped_surrogate(ratio, adv, eps);
        prop_assert!(v <= ((1.0 + eps) * adv).max((1.0 - eps) * adv) + 1e-12);
        if ratio <= 1.0 + eps {
            prop_assert!(v.abs() <= (1.0 + eps) * adv.abs() + 1e-12);
        }
        if (ratio - 1.0).abs() < 1e-15 {
            prop_assert_eq!(v, adv);
        }
    }

    #[test]
    fn gae_matches_the_nested_sum(
        rv in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..=50),
        gamma in 0.01..1.0f64,
        lambda in 0.0..1.0f64,
    ) {
        let (r, v): (Vec<f64>, Vec<f64>) = rv.into_iter().unzip();
        let adv = compute_gae(&r, &v, gamma, lambda).unwrap();
        let n = r.len();
        let val = |t: usize| if t < n { v[t] } else { 0.0 };
        for t in 0..n {
            let brute: f64 = (t..n).map(|l| (gamma * lambda).powi((l - t) as i32) * (r[l] + gamma * val(l + 1) - v[l])).sum();
            prop_assert!((adv[t] - brute).abs() <= 1e-10 * brute.abs().max(1.0));
        }
    }

    #[test]
    fn clusters_follow_the_score_order(means in prop::collection::vec(0.0..30.0f64, 1..5), seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let systems: Vec<(String, Vec<f64>)> = means
            .iter()
            .enumerate()
            .map(|(i, m)| (format!("s{i}"), (0..40).map(|j| m + ((j * 7 + i) % 5) as f64).collect()))
            .collect();
        let cfg = BootstrapConfig { n_samples: 50, sample_size: 40, ..BootstrapConfig::default() };
        let clusters = rank_clusters(&systems, &cfg, &mut rng).unwrap();
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        for a in 0..systems.len() {
            for b in 0..systems.len() {
                if avg(&systems[a].1) > avg(&systems[b].1) {
                    prop_assert!(clusters[a] <= clusters[b]);
                }
            }
        }
    }

    #[test]
    fn bootstrap_is_deterministic(a in prop::collection::vec(0.0..100.0f64, 2..60), seed in 0u64..1000) {
        let b: Vec<f64> = a.iter().map(|x| 100.0 - x).collect();
        let p1 = paired_bootstrap(&a, &b, 30, 100, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let p2 = paired_bootstrap(&a, &b, 30, 100, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(p1, p2);
        prop_assert!((0.0..=1.0).contains(&p1));
    }

    #[test]
    fn buckets_partition_the_corpus(lens in prop::collection::vec(0usize..1_500, 1..80)) {
        let sources: Vec<String> = lens.iter().map(|&n| "x".repeat(n)).collect();
        let scores: Vec<f64> = lens.iter().map(|&n| n as f64).collect();
        let buckets = length_bucket_report(&scores, &sources, &[0, 100, 250, 500, 1000]).unwrap();
        prop_assert_eq!(buckets.iter().map(|b| b.count).sum::<usize>(), lens.len());
        prop_assert!(buckets.iter().all(|b| b.count > 0));
    }
}

#[test]
fn alignment_prefers_substitution_on_ties() {
    let ops = align_words(&["x"], &["y"]);
    assert_eq!(ops, vec![AlignOp::Substitute { hyp: 0, reference: 0 }]);
}
