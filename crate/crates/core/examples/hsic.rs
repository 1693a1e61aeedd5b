//! Independence penalties on dependent and independent feature pairs.
//!
//! cargo run --release --example hsic -- [batch]

use earlybranch::independence::{penalty, FeatureBatch, IndependenceKind};
use earlybranch::Array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> earlybranch::Result<()> {
    let b: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Array::from_fn(&[b, 8], |_| rng.random_range(-1.0..1.0));
    let noise = Array::from_fn(&[b, 8], |_| rng.random_range(-1.0..1.0));
    // y shares the first four columns of x up to a little noise
    let y = Array::from_fn(&[b, 8], |i| {
        let (r, c) = (i / 8, i % 8);
        if c < 4 {
            x.data()[r * 8 + c] + 0.1 * noise.data()[i]
        } else {
            noise.data()[i]
        }
    });
    let z = Array::from_fn(&[b, 8], |_| rng.random_range(-1.0..1.0));

    let (fx, fy, fz) = (FeatureBatch::new(x)?, FeatureBatch::new(y)?, FeatureBatch::new(z)?);
    println!("{:<12} {:>12} {:>12}", "penalty", "dependent", "independent");
    for kind in [IndependenceKind::Hsic, IndependenceKind::Orthogonal, IndependenceKind::Correlation] {
        println!(
            "{:<12} {:>12.5} {:>12.5}",
            kind.to_string(),
            penalty(kind, &fx, &fy)?,
            penalty(kind, &fx, &fz)?
        );
    }
    Ok(())
}
