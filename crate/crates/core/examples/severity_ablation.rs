//! tRL-PPO under each severity map from one warm start.
//! Arguments: episodes per run (default 500) and a comma-separated map list.

use finegrain::experiment::{ablation_table, desk_rl_config, severity_ablation, Desk, DeskConfig};
use finegrain::reward::SeverityMap;
use finegrain::rl::RlConfig;

fn main() -> finegrain::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let episodes: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(500);
    let maps = match args.get(2) {
        Some(list) => list.split(',').map(str::parse).collect::<finegrain::Result<Vec<SeverityMap>>>()?,
        None => SeverityMap::presets(),
    };

    let desk = Desk::build(DeskConfig::long_sequence())?;
    let (warm, _) = desk.pretrain(|_, _| {})?;
    let base = |algo, g, seed| RlConfig {
        max_episodes: episodes,
        ..desk_rl_config(algo, g, seed)
    };
    let rows = severity_ablation(&desk, &warm, &maps, &[1], base, |name, _, row| {
        if row.step % 10 == 0 {
            println!("  {name} episodes {:>5} mean reward {:.3}", row.episodes, row.mean_reward);
        }
    })?;
    print!("{}", ablation_table(&rows));
    Ok(())
}
