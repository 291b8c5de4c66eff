//! Compares analytic gradients of the MLE and PPO objectives with central
//! finite differences on a tiny policy.

use finegrain::policy::{MleObjective, Objective, Policy, PolicyConfig, PpoObjective, PpoTarget, Sequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(name: &str, policy: &Policy, objective: &dyn Objective, rng: &mut ChaCha8Rng) -> finegrain::Result<()> {
    let analytic = policy.gradients(objective)?.grads;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let i = rng.gen_range(0..policy.params.len());
        let mut p = policy.clone();
        let x = p.params.get_flat(i);
        p.params.set_flat(i, x + h);
        let up = p.loss(objective)?;
        p.params.set_flat(i, x - h);
        let down = p.loss(objective)?;
        let fd = (up - down) / (2.0 * h);
        let an = analytic.get_flat(i);
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
    }
    println!("{name:<5} worst relative error over 20 coordinates: {worst:.2e}");
    Ok(())
}

fn main() -> finegrain::Result<()> {
    let policy = Policy::new(PolicyConfig {
        embed_dim: 4,
        hidden_dim: 4,
        vocab_size: 8,
        max_len: 16,
        seed: 3,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seqs = vec![
        Sequence { src: vec![4, 5, 6, 2], tgt: vec![6, 5, 2] },
        Sequence { src: vec![7, 2], tgt: vec![7, 4, 4, 2] },
    ];
    check("mle", &policy, &MleObjective::new(seqs.clone()), &mut rng)?;

    let targets = seqs
        .iter()
        .map(|s| {
            let (logp, _) = policy.score(&s.src, &s.tgt)?;
            let n = s.tgt.len();
            Ok(PpoTarget {
                old_logp: logp.iter().map(|l| l + rng.gen_range(-0.1..0.1)).collect(),
                advantages: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                returns: (0..n).map(|_| rng.gen_range(0.0..2.0)).collect(),
            })
        })
        .collect::<finegrain::Result<Vec<_>>>()?;
    check("ppo", &policy, &PpoObjective::new(seqs, targets, 0.2, 0.5), &mut rng)?;
    Ok(())
}
