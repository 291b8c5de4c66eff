//! Analytic gradients against central finite differences.

use finegrain::policy::{
    MleObjective, Objective, Policy, PolicyConfig, PpoObjective, PpoTarget, ReinforceObjective, Sequence,
};
use finegrain::textcore::EOS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64) -> Policy {
    Policy::new(PolicyConfig {
        embed_dim: 4,
        hidden_dim: 4,
        vocab_size: 8,
        max_len: 16,
        seed,
    })
    .unwrap()
}

fn sequences(rng: &mut ChaCha8Rng, n: usize) -> Vec<Sequence> {
    (0..n)
        .map(|_| {
            let sl = rng.gen_range(1..6);
            let tl = rng.gen_range(1..6);
            let mut src: Vec<u32> = (0..sl).map(|_| rng.gen_range(3..8)).collect();
            src.push(EOS);
            let tgt = (0..tl).map(|_| rng.gen_range(0..8)).collect();
            Sequence { src, tgt }
        })
        .collect()
}

fn max_rel_error(policy: &Policy, obj: &dyn Objective, probes: usize, seed: u64) -> f64 {
    let analytic = policy.gradients(obj).unwrap().grads;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = policy.params.len();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let i = rng.gen_range(0..n);
        let mut p = policy.clone();
        let x = p.params.get_flat(i);
        p.params.set_flat(i, x + h);
        let up = p.loss(obj).unwrap();
        p.params.set_flat(i, x - h);
        let down = p.loss(obj).unwrap();
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.get_flat(i);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn mle_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let policy = tiny(7);
    let obj = MleObjective::new(sequences(&mut rng, 3));
    let err = max_rel_error(&policy, &obj, 150, 2);
    assert!(err <= 1e-4, "max relative error {err}");
}

#[test]
fn reinforce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let policy = tiny(8);
    let seqs = sequences(&mut rng, 3);
    let weights = seqs
        .iter()
        .map(|s| (0..s.tgt.len()).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let obj = ReinforceObjective::new(seqs, weights);
    let err = max_rel_error(&policy, &obj, 150, 4);
    assert!(err <= 1e-4, "max relative error {err}");
}

#[test]
fn ppo_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let policy = tiny(9);
    let seqs = sequences(&mut rng, 3);
    let targets = seqs
        .iter()
        .map(|s| {
            let (logp, _) = policy.score(&s.src, &s.tgt).unwrap();
            let n = s.tgt.len();
            PpoTarget {
                // small offsets keep ratios inside the clip range, away from the kink
                old_logp: logp.iter().map(|l| l + rng.gen_range(-0.1..0.1)).collect(),
                advantages: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                returns: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            }
        })
        .collect();
    let obj = PpoObjective::new(seqs, targets, 0.2, 0.5);
    let err = max_rel_error(&policy, &obj, 150, 6);
    assert!(err <= 1e-4, "max relative error {err}");
}

#[test]
fn detached_value_loss_reaches_only_the_value_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let policy = tiny(12);
    let seqs = sequences(&mut rng, 3);
    let targets: Vec<PpoTarget> = seqs
        .iter()
        .map(|s| {
            let (logp, _) = policy.score(&s.src, &s.tgt).unwrap();
            let n = s.tgt.len();
            PpoTarget {
                old_logp: logp.iter().map(|l| l + rng.gen_range(-0.1..0.1)).collect(),
                advantages: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                returns: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            }
        })
        .collect();
    let full = PpoObjective::new(seqs.clone(), targets.clone(), 0.2, 0.5);
    let detached = PpoObjective::new(seqs.clone(), targets.clone(), 0.2, 0.5).with_detached_value(true);
    let policy_only = PpoObjective::new(seqs, targets, 0.2, 0.0);
    let g_full = policy.gradients(&full).unwrap().grads;
    let g_det = policy.gradients(&detached).unwrap().grads;
    let g_pol = policy.gradients(&policy_only).unwrap().grads;
    for i in 0..policy.params.len() {
        let (name, _) = policy.params.locate(i).unwrap();
        let expected = if name.starts_with("value_") { g_full.get_flat(i) } else { g_pol.get_flat(i) };
        assert!(
            (g_det.get_flat(i) - expected).abs() <= 1e-12,
            "{name}: {} vs {expected}",
            g_det.get_flat(i)
        );
    }
    // the value-head coordinates are still true derivatives of the loss
    assert!(max_rel_error(&policy, &full, 150, 13) <= 1e-4);
}
