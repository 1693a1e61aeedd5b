//! A short leave-one-out sweep and its summary table.
//!
//! cargo run --release --example leave_one_out -- [steps] [seeds]

use earlybranch::data::{generate_synthetic, SyntheticConfig};
use earlybranch::harness::{run_leave_one_out, ExperimentConfig};
use earlybranch::network::NetworkConfig;

fn main() -> earlybranch::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let steps = args.first().copied().unwrap_or(100);
    let seeds: Vec<u64> = (0..args.get(1).copied().unwrap_or(2) as u64).collect();

    let data = generate_synthetic(&SyntheticConfig {
        samples_per_class: 40,
        ..SyntheticConfig::default()
    })?;
    let cfg = ExperimentConfig {
        steps,
        eval_interval: (steps / 4).max(1),
        network: NetworkConfig {
            channels: vec![8; 4],
            ..NetworkConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let domains: Vec<usize> = (0..data.num_domains()).collect();
    let study = run_leave_one_out(&cfg, &data, &domains, &seeds)?;
    print!("{}", study.table.render());
    for t in &study.trials {
        assert_eq!(t.test_samples_in_training, 0);
    }
    Ok(())
}
