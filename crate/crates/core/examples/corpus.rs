//! Generates a synthetic cipher corpus and corrupts a reference with
//! synonym substitutions, random substitutions, deletions and insertions.

use finegrain::corpus::{CipherTask, CorruptionRates, TaskSpec};

fn main() -> finegrain::Result<()> {
    let task = CipherTask::new(TaskSpec {
        lexicon_size: 30,
        min_len: 4,
        max_len: 8,
        ..TaskSpec::default()
    })?;
    let pairs = task.generate(3, 7);
    for p in &pairs {
        println!("{}: {}  =>  {}", p.id, p.src, p.reference);
    }

    let rates = CorruptionRates {
        p_minor: 0.2,
        p_major: 0.2,
        p_critical: 0.1,
    };
    let rec = task.corrupt(&pairs[0], rates, 11)?;
    println!("\ncorrupted: {}", rec.hyp);
    for (edit, span) in rec.plan.iter().zip(&rec.gold_spans) {
        println!("  {:?} at ref word {} -> {:?}", edit.kind, edit.ref_index, span);
    }
    Ok(())
}
