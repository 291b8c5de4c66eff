//! Builds a subword vocabulary and shows how text splits into `##` pieces,
//! with each token's character span and parent word.

use finegrain::textcore::build_vocab;

fn main() -> finegrain::Result<()> {
    let corpus = ["the cat sat", "the cats sat down", "a dog sat"];
    let vocab = build_vocab(&corpus, 24)?;
    println!("vocabulary ({} pieces): {:?}", vocab.len(), vocab.pieces());

    let text = "the cats sat";
    let tok = vocab.tokenize(text);
    for t in &tok.tokens {
        let piece = vocab.piece(t.id).unwrap_or("?");
        let span: String = text.chars().skip(t.start).take(t.end - t.start).collect();
        println!("  id {:>3}  {piece:<8} chars {:>2}..{:<2} `{span}` word {}", t.id, t.start, t.end, t.word);
    }
    println!("detokenized: `{}`", tok.detokenize()?);
    Ok(())
}
