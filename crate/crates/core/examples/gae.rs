//! Generalized advantage estimation against a brute-force double sum.

use finegrain::rl::{compute_gae, reward_to_go};

fn main() -> finegrain::Result<()> {
    let rewards = [0.0, 1.0, 0.0, 2.0, 1.0];
    let values = [0.5, 0.8, 0.4, 1.5, 0.9];
    let (gamma, lambda) = (0.99, 0.95);
    let adv = compute_gae(&rewards, &values, gamma, lambda)?;

    let n = rewards.len();
    let v = |t: usize| if t < n { values[t] } else { 0.0 };
    for t in 0..n {
        let brute: f64 = (t..n)
            .map(|l| (gamma * lambda).powi((l - t) as i32) * (rewards[l] + gamma * v(l + 1) - values[l]))
            .sum();
        println!("t={t}  gae {:+.6}  brute force {:+.6}", adv[t], brute);
    }
    println!("reward-to-go (gamma=1): {:?}", reward_to_go(&rewards, 1.0));
    Ok(())
}
