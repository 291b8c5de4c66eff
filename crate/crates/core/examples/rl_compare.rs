//! sRL-PPO vs tRL-PPO from one MLE warm start on the long-sentence task.
//! Arguments: episodes per run (default 500) and a comma-separated seed list.

use finegrain::cli::comparison_table;
use finegrain::experiment::{compare_granularity, desk_rl_config, Desk, DeskConfig};
use finegrain::reward::SeverityMap;
use finegrain::rl::RlConfig;

fn main() -> finegrain::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let episodes: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(500);
    let seeds: Vec<u64> = args
        .get(2)
        .map(|s| s.split(',').filter_map(|x| x.parse().ok()).collect())
        .unwrap_or_else(|| vec![1]);

    let desk = Desk::build(DeskConfig::long_sequence())?;
    println!("pretraining ...");
    let (warm, _) = desk.pretrain(|_, _| {})?;
    let q = desk.evaluate("warm", &warm)?;
    println!("warm start: {:?}", q.corpus);

    let base = |algo, g, seed| RlConfig {
        max_episodes: episodes,
        ..desk_rl_config(algo, g, seed)
    };
    let rows = compare_granularity(&desk, &warm, &SeverityMap::our(), &seeds, base, |name, seed, row| {
        if row.step % 10 == 0 {
            println!("  {name} seed {seed} episodes {:>5} mean reward {:.3}", row.episodes, row.mean_reward);
        }
    })?;
    print!("{}", comparison_table(&rows));
    Ok(())
}
