//! Severity maps turned into token rewards: each subword token inherits its
//! parent word's severity weight. Also sentence rewards and partial BLEU.

use finegrain::annotator::{ErrorSpan, Severity};
use finegrain::metrics::BleuConfig;
use finegrain::reward::{map_spans_to_token_rewards, partial_bleu_rewards, sentence_reward_from_spans, SeverityMap};
use finegrain::textcore::Vocabulary;

fn main() -> finegrain::Result<()> {
    let pieces = ["<pad>", "<bos>", "<eos>", "<unk>", "the", "cat", "sat", "do", "##wn", "s", "##at"]
        .map(String::from)
        .to_vec();
    let vocab = Vocabulary::from_pieces(pieces)?;
    let hyp = vocab.tokenize("the cat sat down");
    // "sat" (chars 8..11) is a major error, "down" a minor one
    let spans = [ErrorSpan::new(8, 11, Severity::Major), ErrorSpan::new(12, 14, Severity::Minor)];

    println!("{:<6} {:>28}  sentence", "map", "token rewards");
    for map in SeverityMap::presets() {
        let r = map_spans_to_token_rewards(&hyp, &spans, &map)?;
        let s = sentence_reward_from_spans(&hyp, &spans, &map)?;
        println!("{:<6} {:>28}  {s:.3}", map.name, format!("{:?}", r.rewards));
    }

    let shaped = partial_bleu_rewards(&hyp, &["the", "cat", "sat", "up"], &BleuConfig::sentence())?;
    println!("\npartial BLEU rewards {:?} (sum {:.4})", shaped.rewards, shaped.total());
    Ok(())
}
