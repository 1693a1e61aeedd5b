//! Branch-point ablation with augmentation off, against plain ERM.
//!
//! cargo run --release --example ablate_branch -- [steps] [seeds]

use earlybranch::data::{generate_synthetic, SyntheticConfig};
use earlybranch::harness::{ablate_branch_points, run_leave_one_out, ExperimentConfig, Method};
use earlybranch::network::NetworkConfig;

fn main() -> earlybranch::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let steps = args.first().copied().unwrap_or(300);
    let seeds: Vec<u64> = (0..args.get(1).copied().unwrap_or(2) as u64).collect();
    let domains = [0, 5];

    let data = generate_synthetic(&SyntheticConfig::default())?;
    let base = ExperimentConfig {
        steps,
        eval_interval: (steps / 5).max(1),
        network: NetworkConfig {
            channels: vec![8; 4],
            ..NetworkConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let mut table = ablate_branch_points(&base, &data, &[0, 1, 2, 3, 4], &domains, &seeds)?.table;
    let erm = ExperimentConfig {
        method: Method::Erm,
        ..base
    };
    table.merge(run_leave_one_out(&erm, &data, &domains, &seeds)?.table);
    print!("{}", table.render());
    Ok(())
}
