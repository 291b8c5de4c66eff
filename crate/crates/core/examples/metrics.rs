//! Sentence and corpus BLEU and chrF.

use finegrain::metrics::{corpus_bleu, chrf, sentence_bleu, words, BleuConfig, ChrfConfig};

fn main() -> finegrain::Result<()> {
    let reference = "the quick brown fox jumps over the lazy dog";
    for hyp in [
        reference,
        "the quick brown fox jumped over the lazy dog",
        "a fast brown fox leaps over a dog",
        "dog",
    ] {
        let b = sentence_bleu(&words(hyp), &words(reference), &BleuConfig::sentence());
        let c = chrf(hyp, reference, &ChrfConfig::default());
        println!("{b:>6.2} BLEU  {c:>6.2} chrF  `{hyp}`");
    }
    let pairs = vec![
        (words("the cat sat on the red mat"), words("the cat sat on the mat")),
        (words("a dog slept by the door"), words("the dog slept near the door")),
    ];
    println!("corpus BLEU {:.2}", corpus_bleu(&pairs, &BleuConfig::corpus())?);
    Ok(())
}
