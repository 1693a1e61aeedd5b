//! Random search over alpha, beta and learning rate; selection by
//! validation accuracy only.
//!
//! cargo run --release --example search -- [trials] [steps]

use earlybranch::data::{generate_synthetic, SyntheticConfig};
use earlybranch::harness::{hyperparameter_search, ExperimentConfig, SearchSpace};
use earlybranch::network::NetworkConfig;

fn main() -> earlybranch::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let trials = args.first().copied().unwrap_or(4);
    let steps = args.get(1).copied().unwrap_or(100);

    let data = generate_synthetic(&SyntheticConfig {
        samples_per_class: 40,
        ..SyntheticConfig::default()
    })?;
    let base = ExperimentConfig {
        steps,
        eval_interval: (steps / 4).max(1),
        target_domain: 5,
        network: NetworkConfig {
            channels: vec![8; 4],
            ..NetworkConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let out = hyperparameter_search(&base, &data, &SearchSpace::default(), trials, 0)?;
    println!("{:>3} {:>8} {:>8} {:>9} {:>6} {:>6}", "#", "alpha", "beta", "lr", "val", "test");
    for (i, t) in out.study.trials.iter().enumerate() {
        let mark = if i == out.best_index { "*" } else { " " };
        println!(
            "{i:>2}{mark} {:>8.4} {:>8.4} {:>9.2e} {:>6.3} {:>6.3}",
            t.alpha, t.beta, t.learning_rate, t.val_acc, t.test_acc
        );
    }
    print!("{}", out.best.to_toml()?);
    Ok(())
}
