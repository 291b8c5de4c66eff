//! MLE pretraining on a small cipher task, reporting greedy exact match.
//! Pass `full` for the 20k-pair, lexicon-200 configuration.

use finegrain::corpus::TaskSpec;
use finegrain::experiment::{Desk, DeskConfig};

fn main() -> finegrain::Result<()> {
    let mut config = DeskConfig::cipher();
    if std::env::args().nth(1).as_deref() != Some("full") {
        config.task = TaskSpec {
            lexicon_size: 50,
            min_len: 3,
            max_len: 8,
            ..config.task
        };
        config.n_train = 3_000;
        config.n_dev = 200;
        config.n_test = 200;
        config.mle.max_epochs = 3;
    }
    let desk = Desk::build(config)?;
    println!("vocabulary {} pieces, {} training pairs", desk.vocab.len(), desk.train.len());
    let (policy, report) = desk.pretrain(|log, p| {
        let em = desk.exact_match(p).unwrap_or(f64::NAN);
        println!(
            "epoch {} steps {:>5} train {:.4} dev {:.4} exact match {:.1}%",
            log.epoch,
            log.steps,
            log.train_loss,
            log.dev_loss,
            100.0 * em
        );
    })?;
    println!("best dev loss {:.4}; final exact match {:.1}%", report.best_dev_loss, 100.0 * desk.exact_match(&policy)?);
    Ok(())
}
