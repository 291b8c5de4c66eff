//! Two-armed bandit solved by REINFORCE: single-token episodes, reward 1 for
//! token A and 0 for token B. All other tokens are masked with a large
//! negative output bias.

use finegrain::policy::{Adam, AdamConfig, Policy, PolicyConfig};
use finegrain::reward::{Granularity, TokenRewardVector};
use finegrain::rl::{prepare_advantages, reinforce_update, Algo, KlControl, RlConfig, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const A: u32 = 4;
const B: u32 = 5;

fn main() -> finegrain::Result<()> {
    let config = PolicyConfig {
        embed_dim: 4,
        hidden_dim: 4,
        vocab_size: 6,
        max_len: 4,
        seed: 0,
    };
    let mut policy = Policy::new(config)?;
    policy.params.fill(0.0);
    for id in 0..6 {
        if id != A as usize && id != B as usize {
            policy.params.out_b[id] = -50.0;
        }
    }
    let cfg = RlConfig {
        algo: Algo::Reinforce,
        granularity: Granularity::Token,
        kl: KlControl::Off,
        gamma: 1.0,
        ..RlConfig::default()
    };
    let mut adam = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &policy.params);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let src = vec![A, finegrain::textcore::EOS];
    for update in 0..=300 {
        let p_a = policy.step_distribution(&src, &[])?[A as usize];
        if update % 50 == 0 {
            println!("update {update:>4}  p(A) = {p_a:.4}");
        }
        let mut batch = Vec::new();
        for _ in 0..8 {
            let ep = policy.sample_episode(&src, &mut rng, 1)?;
            let r = if ep.tokens[0] == A { 1.0 } else { 0.0 };
            batch.push(Trajectory::new(0, src.clone(), ep, TokenRewardVector::token(vec![r])));
        }
        prepare_advantages(&mut batch, &cfg, 0.0)?;
        reinforce_update(&mut policy, &mut adam, &batch)?;
    }
    Ok(())
}
