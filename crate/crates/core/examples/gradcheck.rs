//! Finite-difference check of the full training objective on a small
//! network, with the RDS draws frozen.
//!
//! cargo run --release --example gradcheck -- [seed]

use earlybranch::autodiff::Graph;
use earlybranch::gradcheck::check_gradients;
use earlybranch::network::{build_network, NetworkConfig};
use earlybranch::objectives::{total_loss, LossWeights};
use earlybranch::style::StyleAugmenter;
use earlybranch::Array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> earlybranch::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetworkConfig {
        channels: vec![3, 3, 4, 4],
        feature_dim: 6,
        num_classes: 3,
        num_domains: 2,
        input: [1, 8, 8],
        ..NetworkConfig::default()
    };
    let net = build_network(&cfg, &mut rng)?;
    let x = Array::from_fn(&[6, 1, 8, 8], |_| rng.random_range(0.0..1.0));
    let y = [0, 1, 2, 0, 1, 2];
    let d = [0, 1, 0, 1, 0, 1];
    let w = LossWeights {
        beta: 1.0,
        ..LossWeights::default()
    };

    let rds = StyleAugmenter::Rds {
        epsilon: 1e-4,
        max_tries: 64,
    };
    let mut g = Graph::new();
    let out = net.forward(&mut g, &x, Some(&rds), &mut rng)?;
    let frozen = StyleAugmenter::Fixed(out.augmented.as_ref().expect("augmented").style_targets.clone());
    let first = total_loss(&mut g, &out, &y, &d, &w, None)?;
    println!("{}", first.breakdown);
    // keep the margin away from the hinge kink it sits on by construction
    let margin = Some(first.breakdown.margin_n + 0.05);

    let mut g = Graph::new();
    let out = net.forward(&mut g, &x, Some(&frozen), &mut rng)?;
    let obj = total_loss(&mut g, &out, &y, &d, &w, margin)?;
    let grads = g.backward(obj.total)?;
    let report = check_gradients(net.params(), &grads, None, 1e-5, &mut rng, |s| {
        let mut g = Graph::new();
        let out = net.forward_with_store(&mut g, s, &x, Some(&frozen), &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(total_loss(&mut g, &out, &y, &d, &w, margin)?.breakdown.total)
    })?;
    println!(
        "checked {} coordinates ({} near kinks skipped), max relative error {:.2e}",
        report.checked, report.skipped_kinks, report.max_rel_error
    );
    if let Some((name, i, a, n)) = report.worst {
        println!("worst: {name}[{i}] analytic {a:.6e} numeric {n:.6e}");
    }
    Ok(())
}
