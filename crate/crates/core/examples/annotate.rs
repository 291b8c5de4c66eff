//! Oracle MQM-style annotation: aligns a hypothesis to its reference and
//! labels each error span minor, major or critical.

use finegrain::corpus::{CipherTask, TaskSpec};

fn main() -> finegrain::Result<()> {
    let task = CipherTask::new(TaskSpec {
        lexicon_size: 20,
        ..TaskSpec::default()
    })?;
    let annotator = finegrain::annotator::Annotator::new(task.synonym_table());
    let pair = &task.generate(1, 3)[0];
    let words: Vec<&str> = pair.reference.split_whitespace().collect();

    // synonym for word 0, drop word 2, insert a spurious copy at the end
    let mut hyp: Vec<String> = words.iter().map(|w| w.to_string()).collect();
    hyp[0] = task.synonym_of(words[0]).unwrap_or_else(|| "zz".into());
    hyp.remove(2);
    hyp.push(words[0].to_string());
    let hyp = hyp.join(" ");

    let ann = annotator.annotate(&hyp, &pair.reference)?;
    println!("ref: {}\nhyp: {}", pair.reference, hyp);
    for s in &ann.spans {
        let text: String = hyp.chars().skip(s.start).take(s.end - s.start).collect();
        println!("  {:>8} [{}, {}) `{text}`", s.severity.as_str(), s.start, s.end);
    }
    println!("sentence score {:.3}", ann.sentence_score);
    Ok(())
}
