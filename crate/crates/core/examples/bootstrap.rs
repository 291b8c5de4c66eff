//! Paired bootstrap significance and quality clusters on simulated
//! per-segment scores.

use finegrain::eval::{paired_bootstrap, rank_clusters, BootstrapConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> finegrain::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 5.0).expect("valid sd");
    let base: Vec<f64> = (0..500).map(|_| 50.0 + noise.sample(&mut rng)).collect();
    let shifted = |d: f64, rng: &mut ChaCha8Rng| base.iter().map(|b| b + d + noise.sample(rng)).collect::<Vec<f64>>();

    let a = shifted(10.0, &mut rng);
    let b = shifted(0.0, &mut rng);
    let c = shifted(-10.0, &mut rng);
    println!("p(A > B) = {:.3}", paired_bootstrap(&a, &b, 100, 500, &mut rng)?);
    println!("p(B > A) = {:.3}", paired_bootstrap(&b, &a, 100, 500, &mut rng)?);

    let systems = vec![("B".to_string(), b), ("A".to_string(), a), ("C".to_string(), c)];
    let clusters = rank_clusters(&systems, &BootstrapConfig::default(), &mut rng)?;
    for ((name, _), k) in systems.iter().zip(clusters) {
        println!("system {name}: cluster {k}");
    }
    Ok(())
}
