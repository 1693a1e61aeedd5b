//! Compare RDS, MixStyle and DSU on one batch of random feature maps:
//! how far each augmented style lands from the nearest original.
//!
//! cargo run --release --example style_augmentation -- [batch] [channels]

use earlybranch::style::{compute_style_stats, nearest_style_distances, AugmenterKind, StyleAugmenter};
use earlybranch::Array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> earlybranch::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let b = args.first().copied().unwrap_or(32);
    let c = args.get(1).copied().unwrap_or(16);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // per-sample offsets and gains so the batch has genuinely distinct styles
    let off: Vec<f64> = (0..b * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gain: Vec<f64> = (0..b * c).map(|_| rng.random_range(0.5..1.5)).collect();
    let feats = Array::from_fn(&[b, c, 7, 7], |i| {
        let bc = i / 49;
        off[bc] + gain[bc] * rng.random_range(-1.0..1.0)
    });
    let original = compute_style_stats(&feats)?;

    println!("{:<10} {:>10} {:>10} {:>10}", "augmenter", "min", "median", "max");
    for kind in [AugmenterKind::Rds, AugmenterKind::MixStyle, AugmenterKind::Dsu] {
        let aug = StyleAugmenter::from_kind(kind, 1e-4, 0.1).expect("not none");
        let (targets, applied) = aug.apply(&feats, &mut rng)?;
        assert_eq!(applied.shape(), feats.shape());
        let mut d = nearest_style_distances(&targets, &original)?;
        d.sort_by(f64::total_cmp);
        println!("{:<10} {:>10.4} {:>10.4} {:>10.4}", kind.to_string(), d[0], d[d.len() / 2], d[d.len() - 1]);
    }
    Ok(())
}
